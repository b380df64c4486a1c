#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_cli.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# usage:
#  mavqa.py ask IMAGE QUESTION [options]
#  mavqa.py bench MANIFEST [options]
#  mavqa.py record MANIFEST CASSETTE [options]
#  mavqa.py report REPORT [REPORT ...] [options]
#  mavqa.py convert {vqav2,gqa} [options]
#
# This file contains the command line driver. Exit status is 0 on
# success, 1 on a configuration or usage error and 2 when the pipeline
# fails at run time. The last line written to stdout is always one JSON
# record; --quiet suppresses everything else.
#------------------------------------------------------------------------------

# import system modules
#
import argparse
import os
import sys

# import logging modules
#
from loguru import logger

# import NEDC modules
#
import nedc_debug_tools as ndt
import nedc_file_tools as nft
import nedc_mavqa_bench as mvb
import nedc_mavqa_config as mvc
import nedc_mavqa_convert as mvv
import nedc_mavqa_grading as mvg
import nedc_mavqa_pipeline as mvl
import nedc_mavqa_protocol as mvp
import nedc_mavqa_types as mvt
from nedc_mavqa_errors import (ConfigError, DatasetLoadError,
                               InvalidInputError, VqaError)

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

PROG = "mavqa.py"

# exit statuses
#
EXIT_OK = int(0)
EXIT_USAGE = int(1)
EXIT_PIPELINE = int(2)

# the id given to a question asked on the command line
#
ASK_ID = "ask"

#------------------------------------------------------------------------------
#
# classes are listed here
#
#------------------------------------------------------------------------------

class UsageError(Exception):
    pass

class ArgumentParser(argparse.ArgumentParser):
    """an argparse parser whose errors exit with status 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)
#
# end of class

#------------------------------------------------------------------------------
#
# functions listed here: argument parsing
#
#------------------------------------------------------------------------------

def build_parser():
    """
    function: build_parser

    arguments:
     none

    return:
     the ArgumentParser with all subcommands
    """
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", default=mvc.DEF_CONFIG,
                        help="run configuration parameter file")
    common.add_argument("--quiet", action="store_true",
                        help="print only the final JSON line")
    common.add_argument("--debug-level", default=None,
                        choices=sorted(ndt.LEVELS, key=ndt.LEVELS.get),
                        type=str.upper, help="debug level")
    common.add_argument("--verbosity", default=None,
                        choices=sorted(ndt.LEVELS, key=ndt.LEVELS.get),
                        type=str.upper, help="verbosity level")
    common.add_argument("--template-dir", default=None,
                        help="prompt template directory")
    common.add_argument("--cassette", default=None,
                        help="cassette file used by replay backends")
    common.add_argument("--trace-out", default=None, help="trace file")

    runs = ArgumentParser(add_help=False)
    runs.add_argument("--ablation", action="append", default=[],
                      help="no-cot, no-counter or no-multi-agent "
                      "(repeatable, or comma-separated)")

    benches = ArgumentParser(add_help=False)
    benches.add_argument("--parallelism", type=int, default=None,
                         help="questions in flight")
    benches.add_argument("--resume", action="store_true",
                         help="skip questions already in the records file")
    benches.add_argument("--records-out", default=None,
                         help="per-question results file")
    benches.add_argument("--report-out", default=None,
                         help="StructuredText report file")

    parser = ArgumentParser(prog=PROG, description="adaptive multi-agent "
                            "visual question answering")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("ask", parents=[common, runs],
                       help="answer one question about one image")
    p.add_argument("image", help="PNG or JPEG file")
    p.add_argument("question", help="the question text")
    p.add_argument("--gold", action="append", default=[],
                   help="a gold answer; if given the answer is graded")

    p = sub.add_parser("bench", parents=[common, runs, benches],
                       help="run a benchmark over a dataset manifest")
    p.add_argument("manifest", help="dataset manifest parameter file")

    p = sub.add_parser("record", parents=[common, runs, benches],
                       help="run a benchmark and record every agent call")
    p.add_argument("manifest", help="dataset manifest parameter file")
    p.add_argument("cassette_out", help="cassette file to write")

    p = sub.add_parser("report", parents=[common],
                       help="render one report, or compare several")
    p.add_argument("report", nargs="+",
                   help="StructuredText report file(s) of one benchmark")
    p.add_argument("--format", default=mvb.ReportFormat.PLAIN_TABLE.value,
                   choices=[f.value for f in mvb.ReportFormat])

    p = sub.add_parser("convert", parents=[common],
                       help="convert VQA-v2 or GQA files to a dataset")
    p.add_argument("source", choices=["vqav2", "gqa"])
    p.add_argument("--questions", required=True, help="questions JSON")
    p.add_argument("--annotations", default=None,
                   help="annotations JSON (vqav2)")
    p.add_argument("--ids", default=None, help="file of ids to keep")
    p.add_argument("--image-prefix", default=mvv.DEF_VQAV2_PREFIX,
                   help="image file name prefix (vqav2)")
    p.add_argument("--out", required=True, help="dataset file to write")
    return parser
#
# end of function

def parse_ablation(values, base):
    """maps --ablation values onto an AblationConfig"""
    names = [n.strip() for v in values for n in v.split(nft.DELIM_COMMA)
             if n.strip()]
    return mvt.AblationConfig.from_flags(names, base)
#
# end of function

#------------------------------------------------------------------------------
#
# functions listed here: helpers
#
#------------------------------------------------------------------------------

class Console:
    """stdout writer that honors --quiet"""

    def __init__(self, quiet, stream=None):
        self.quiet = quiet
        self.stream = stream if stream is not None else sys.stdout

    def say(self, text):
        if not self.quiet:
            self.stream.write(text.rstrip(nft.DELIM_NEWLINE) +
                              nft.DELIM_NEWLINE)

    def final(self, record):
        self.stream.write(nft.dumps_record(dict(record, v=mvt.SCHEMA_VERSION))
                          + nft.DELIM_NEWLINE)
        self.stream.flush()
#
# end of class

def load_config(args):
    """
    function: load_config

    arguments:
     args: the parsed arguments

    return:
     the validated RunConfig with command line overrides applied
    """
    config = mvc.load_run_config(args.config)
    config = config.replace(
        template_dir=nft.get_fullpath(args.template_dir)
        if args.template_dir else None,
        cassette=nft.get_fullpath(args.cassette) if args.cassette else None,
        trace_out=nft.get_fullpath(args.trace_out) if args.trace_out
        else None,
        records_out=nft.get_fullpath(args.records_out)
        if getattr(args, "records_out", None) else None,
        report_out=nft.get_fullpath(args.report_out)
        if getattr(args, "report_out", None) else None,
        parallelism=getattr(args, "parallelism", None))
    if getattr(args, "ablation", None):
        config = config.with_ablation(
            parse_ablation(args.ablation, config.pipeline.ablation))
    return config.validate()
#
# end of function

#------------------------------------------------------------------------------
#
# functions listed here: commands
#
#------------------------------------------------------------------------------

def cmd_ask(args, console):
    """
    function: cmd_ask

    arguments:
     args: the parsed arguments
     console: the Console

    return:
     an exit status

    description:
     answers one question, prints the answer and its provenance and
     writes one trace line.
    """
    if not os.path.isfile(args.image):
        raise ConfigError("image not found (%s)" % args.image)
    config = load_config(args)
    book = mvp.get_book(config.template_dir)
    q = mvt.VisualQuestion(ASK_ID, os.path.abspath(args.image), args.question,
                           gold_answers=tuple(args.gold))

    trace = mvt.TraceLog(q.id)
    with mvc.build_hub(config) as hub:
        try:
            answer, _ = mvl.run_question(q, config.pipeline, hub, trace, book)
            verdict = None
            if q.gold_answers:
                verdict = mvg.grade_answer(q, answer, hub.session(trace), book)
                trace.enter(mvt.PipelineState.GRADED)
        except Exception as e:
            logger.error("pipeline failed: {}", e)
            if config.trace_out:
                nft.write_records(config.trace_out,
                                  [trace.freeze().to_dict()])
            console.say("error: %s" % e)
            console.final({"id": q.id, "error": "%s: %s" %
                           (type(e).__name__, e)})
            return EXIT_PIPELINE

    frozen = trace.freeze()
    if config.trace_out:
        nft.write_records(config.trace_out, [frozen.to_dict()])

    console.say("%s (%s)" % (answer.text, answer.provenance.value))
    result = {"id": q.id, "answer": answer.text,
              "provenance": answer.provenance.value,
              "agent_calls": frozen.total_agent_calls}
    if verdict is not None:
        console.say("verdict: %s (%s)" % (verdict.majority.value, ", ".join(
            v.value for v in verdict.votes)))
        result["verdict"] = verdict.majority.value
    console.final(result)
    return EXIT_OK
#
# end of function

def _bench(args, console, record_to=None):
    config = load_config(args)
    book = mvp.get_book(config.template_dir)
    manifest = mvb.load_manifest(args.manifest)
    dataset = mvb.load_dataset(manifest)

    with mvc.build_hub(config, record_to=record_to) as hub:
        report = mvb.run_benchmark(
            dataset, config.pipeline, hub, parallelism=config.parallelism,
            records_out=config.records_out, trace_out=config.trace_out,
            report_out=config.report_out, resume=args.resume,
            name=manifest.name, book=book)

    console.say(mvb.emit_report(report).decode(nft.DEF_CHAR_ENCODING))
    acc = report.overall_accuracy
    return report, config, {
        "name": manifest.name, "method": report.ablation.label,
        "correct": report.overall_correct, "total": report.overall_total,
        "accuracy": None if acc is None else str(acc),
        "report": config.report_out}
#
# end of function

def cmd_bench(args, console):
    """runs a benchmark and prints the PlainTable report"""
    _, _, result = _bench(args, console)
    console.final(result)
    return EXIT_OK
#
# end of function

def cmd_record(args, console):
    """runs a benchmark while recording every agent call"""
    cassette = nft.get_fullpath(args.cassette_out)
    _, _, result = _bench(args, console, record_to=cassette)
    result["cassette"] = cassette
    result["entries"] = len(nft.read_records(cassette))
    console.final(result)
    return EXIT_OK
#
# end of function

def cmd_report(args, console):
    """
    function: cmd_report

    arguments:
     args: the parsed arguments
     console: the Console

    return:
     an exit status

    description:
     one report is rendered on its own. several reports of the same
     benchmark are rendered as one table with a row per ablation.
    """
    reports = []
    for path in args.report:
        with open(path, nft.MODE_READ_BINARY) as fp:
            reports.append(mvb.load_report(fp.read()))

    if len(reports) == 1:
        report = reports[0]
        console.say(mvb.emit_report(report, args.format).decode(
            nft.DEF_CHAR_ENCODING))
        console.final(summarize_report(report))
        return EXIT_OK

    console.say(mvb.emit_comparison(reports, args.format).decode(
        nft.DEF_CHAR_ENCODING))
    console.final({"name": reports[0].name,
                   "rows": [dict(summarize_report(r),
                                 method=r.ablation.label) for r in reports]})
    return EXIT_OK
#
# end of function

def summarize_report(report):
    acc = report.overall_accuracy
    return {"name": report.name, "correct": report.overall_correct,
            "total": report.overall_total,
            "accuracy": None if acc is None else str(acc)}
#
# end of function

def cmd_convert(args, console):
    ids = mvv.read_id_list(args.ids) if args.ids else None
    if args.source == "vqav2":
        if not args.annotations:
            raise UsageError("vqav2 needs --annotations")
        count = mvv.convert_vqav2(args.questions, args.annotations, args.out,
                                  ids, args.image_prefix)
    else:
        count = mvv.convert_gqa(args.questions, args.out, ids)
    console.say("wrote %d records to %s" % (count, args.out))
    console.final({"out": args.out, "records": count})
    return EXIT_OK
#
# end of function

COMMANDS = {"ask": cmd_ask, "bench": cmd_bench, "record": cmd_record,
            "report": cmd_report, "convert": cmd_convert}

def main(argv=None, stdout=None):
    """
    function: main

    arguments:
     argv: the argument list (None = sys.argv[1:])
     stdout: the output stream (None = sys.stdout)

    return:
     the exit status
    """

    # parse the command line
    #
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write("%s: error: %s\n" % (PROG, e))
        return EXIT_USAGE

    ndt.configure(dbgl=args.debug_level, vrbl=args.verbosity,
                  quiet=args.quiet)
    console = Console(args.quiet, stdout)

    # run the command
    #
    try:
        return COMMANDS[args.command](args, console)
    except UsageError as e:
        sys.stderr.write("%s: error: %s\n" % (PROG, e))
        return EXIT_USAGE
    except (ConfigError, InvalidInputError, DatasetLoadError, OSError) as e:
        logger.error("{}", e)
        console.final({"error": "%s: %s" % (type(e).__name__, e)})
        return EXIT_USAGE
    except VqaError as e:
        logger.error("{}", e)
        console.final({"error": "%s: %s" % (type(e).__name__, e)})
        return EXIT_PIPELINE
    except Exception as e:
        logger.exception("unexpected failure: {}", e)
        console.final({"error": "%s: %s" % (type(e).__name__, e)})
        return EXIT_PIPELINE
#
# end of function

#
# end of file
