#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_bench.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# usage:
#  import nedc_mavqa_bench as mvb
#
# This file contains the benchmark layer: dataset manifests and loading,
# the resumable benchmark runner, accuracy aggregation and the report
# renderers.
#------------------------------------------------------------------------------

# import system modules
#
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional

# import computational modules
#
import pandas as pd

# import logging modules
#
from loguru import logger

# import NEDC modules
#
import nedc_debug_tools as ndt
import nedc_file_tools as nft
import nedc_mavqa_grading as mvg
import nedc_mavqa_pipeline as mvl
import nedc_mavqa_types as mvt
from nedc_mavqa_errors import ConfigError, DatasetLoadError, InvalidInputError

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

# manifest block and keys
#
BLOCK_DATASET = "DATASET"
KEY_NAME = "name"
KEY_FORMAT = "format"
KEY_PATH = "path"
KEY_IMAGE_ROOT = "image_root"
KEY_DECLARED_SIZE = "declared_size"
FMT_NORMALIZED_JSONL = "NormalizedJsonl"

# report rendering
#
EMPTY_BUCKET = "— (0 items)"
COL_METHOD = "Method"
COL_ACCURACY = "Accuracy"
TYPED_BUCKETS = (mvt.QuestionType.YES_NO, mvt.QuestionType.NUMBER,
                 mvt.QuestionType.OTHER)
NO_GOLD = "no gold answers"

# set the debug level for this module
#
dbgl = ndt.Dbgl()

#------------------------------------------------------------------------------
#
# classes are listed here
#
#------------------------------------------------------------------------------

class ReportFormat(str, Enum):
    PLAIN_TABLE = "table"
    STRUCTURED_TEXT = "json"

@dataclass(frozen=True)
class DatasetManifest:
    name: str
    path: str
    image_root: str
    format: str = FMT_NORMALIZED_JSONL
    declared_size: Optional[int] = None

    def __post_init__(self):
        if self.format.lower() != FMT_NORMALIZED_JSONL.lower():
            raise ConfigError("unsupported dataset format (%s)" % self.format)
#
# end of class

#------------------------------------------------------------------------------
#
# functions listed here: datasets
#
#------------------------------------------------------------------------------

def load_manifest(pfile):
    """
    function: load_manifest

    arguments:
     pfile: a parameter file with a DATASET block

    return:
     a DatasetManifest; relative paths are resolved against the manifest's
     directory
    """
    try:
        block = nft.load_parameter_file(pfile).get(BLOCK_DATASET)
    except (OSError, ValueError) as e:
        raise ConfigError("invalid manifest (%s): %s" % (pfile, e)) from None
    if block is None:
        raise ConfigError("manifest has no %s block (%s)" %
                          (BLOCK_DATASET, pfile))

    root = os.path.dirname(os.path.abspath(pfile))
    try:
        size = block.get(KEY_DECLARED_SIZE)
        return DatasetManifest(
            name=block.get(KEY_NAME, os.path.basename(pfile)),
            path=nft.get_fullpath(block[KEY_PATH], root),
            image_root=nft.get_fullpath(block.get(KEY_IMAGE_ROOT, "."), root),
            format=block.get(KEY_FORMAT, FMT_NORMALIZED_JSONL),
            declared_size=None if size in (None, "", "none") else int(size))
    except KeyError as e:
        raise ConfigError("manifest lacks %s (%s)" % (e, pfile)) from None
    except ValueError as e:
        raise ConfigError("bad manifest value (%s): %s" % (pfile, e)) \
            from None
#
# end of function

def load_dataset(manifest):
    """
    function: load_dataset

    arguments:
     manifest: a DatasetManifest

    return:
     a list of VisualQuestion in file order

    description:
     each line is {"id", "image", "question", "type", "answers"}. a
     duplicate id, a missing image or a malformed line raises
     DatasetLoadError; a size different from declared_size only warns.
    """

    # display informational message
    #
    logger.info("loading dataset {} ({})", manifest.name, manifest.path)

    try:
        lines = nft.read_records(manifest.path)
    except OSError as e:
        raise DatasetLoadError("cannot read dataset (%s): %s" %
                               (manifest.path, e)) from None
    except ValueError as e:
        raise DatasetLoadError(str(e)) from None

    questions = []
    seen = set()
    for lnum, rec in lines:
        try:
            qid = str(rec["id"])
            image = nft.get_fullpath(str(rec["image"]), manifest.image_root)
            answers = rec.get("answers") or []
            if not isinstance(answers, list):
                raise InvalidInputError("answers is not a list")
            q = mvt.VisualQuestion(
                id=qid, image_ref=image, question=str(rec["question"]),
                question_type=mvt.QuestionType.from_label(rec.get("type")),
                gold_answers=tuple(str(a) for a in answers))
        except KeyError as e:
            raise DatasetLoadError("record at line %d lacks %s (%s)" %
                                   (lnum, e, manifest.path)) from None
        except InvalidInputError as e:
            raise DatasetLoadError("bad record at line %d (%s): %s" %
                                   (lnum, manifest.path, e)) from None
        if qid in seen:
            raise DatasetLoadError("duplicate id %s at line %d (%s)" %
                                   (qid, lnum, manifest.path))
        if not os.path.isfile(image):
            raise DatasetLoadError("image of record %s not found (%s)" %
                                   (qid, image))
        seen.add(qid)
        questions.append(q)

    if manifest.declared_size is not None and \
            manifest.declared_size != len(questions):
        logger.warning("dataset {} declares {} items but has {}",
                       manifest.name, manifest.declared_size, len(questions))

    # exit gracefully
    #
    return questions
#
# end of function

#------------------------------------------------------------------------------
#
# functions listed here: running
#
#------------------------------------------------------------------------------

def make_record(q, answer, verdict, trace, error=None):
    """builds the results line of one question"""
    return mvt.QuestionRecord(
        id=q.id, question_type=q.question_type,
        final_answer=None if answer is None else answer.text,
        provenance=None if answer is None else answer.provenance,
        verdict=mvt.Vote.INCORRECT if verdict is None else verdict.majority,
        votes=() if verdict is None else verdict.votes,
        stage_sequence=trace.stage_sequence,
        agent_call_count=trace.total_agent_calls,
        calls=trace.calls_per_stage(), error=error)
#
# end of function

def run_one(q, config, agents, book=None):
    """
    function: run_one

    arguments:
     q: a VisualQuestion
     config: a PipelineConfig
     agents: an AgentHub
     book: a PromptBook

    return:
     (QuestionRecord, PipelineTrace)

    description:
     answers and grades one question. any exception is turned into an
     Incorrect record carrying the error.
    """
    trace = mvt.TraceLog(q.id)
    answer, verdict = None, None
    try:
        answer, _ = mvl.run_question(q, config, agents, trace, book)
        if not q.gold_answers:
            return make_record(q, answer, None, trace.freeze(), NO_GOLD), \
                trace.freeze()
        verdict = mvg.grade_answer(q, answer, agents.session(trace), book)
        trace.enter(mvt.PipelineState.GRADED)
    except Exception as e:
        logger.warning("question {} failed: {}", q.id, e)
        error = "%s: %s" % (type(e).__name__, e)
        frozen = trace.freeze()
        return make_record(q, answer, None, frozen, error), frozen

    frozen = trace.freeze()
    return make_record(q, answer, verdict, frozen), frozen
#
# end of function

def _load_done(records_out, ids):
    done = {}
    for lnum, rec in nft.read_records(records_out, tolerate_partial_tail=True):
        try:
            record = mvt.QuestionRecord.from_dict(rec)
        except (KeyError, ValueError) as e:
            raise ConfigError("bad record at line %d (%s): %s" %
                              (lnum, records_out, e)) from None
        if record.id in ids:
            done[record.id] = record
    return done
#
# end of function

def _rewrite_traces(trace_out, order):
    latest = {}
    for _, rec in nft.read_records(trace_out, tolerate_partial_tail=True):
        latest[rec.get("question_id")] = rec
    nft.write_records(trace_out, [latest[qid] for qid in order
                                  if qid in latest])
#
# end of function

def run_benchmark(dataset, config, agents, parallelism=1, records_out=None,
                  trace_out=None, report_out=None, resume=False, name="",
                  book=None):
    """
    function: run_benchmark

    arguments:
     dataset: a non-empty list of VisualQuestion
     config: a PipelineConfig
     agents: an AgentHub
     parallelism: the number of questions in flight
     records_out: the per-question results file (None = not written)
     trace_out: the trace file (None = not written)
     report_out: the StructuredText report file (None = not written)
     resume: if True, questions already in records_out are skipped
     name: the benchmark name shown in reports
     book: a PromptBook (None = built-in templates)

    return:
     a BenchmarkReport

    description:
     records and traces are appended as questions finish and rewritten in
     dataset order at the end, so the files do not depend on parallelism.
    """
    if not dataset:
        raise InvalidInputError("empty dataset")
    if int(parallelism) < 1:
        raise InvalidInputError("parallelism must be >= 1 (%s)" %
                                parallelism)
    order = [q.id for q in dataset]

    # pick up where a previous run stopped, or start clean
    #
    done = {}
    if resume and records_out and os.path.exists(records_out):
        done = _load_done(records_out, set(order))
        nft.write_records(records_out,
                          [done[qid].to_dict() for qid in order
                           if qid in done])
        logger.info("resuming: {} of {} questions already done",
                    len(done), len(order))
    else:
        for fname in (records_out, trace_out):
            if fname:
                nft.write_atomic(fname, b"")

    todo = [q for q in dataset if q.id not in done]

    def _task(q):
        record, trace = run_one(q, config, agents, book)
        if records_out:
            nft.append_record(records_out, record.to_dict())
        if trace_out:
            nft.append_record(trace_out, trace.to_dict())
        return record

    # run the remaining questions
    #
    if todo:
        with ThreadPoolExecutor(max_workers=int(parallelism)) as executor:
            for record in executor.map(_task, todo):
                done[record.id] = record

    # write everything in dataset order
    #
    records = [done[qid] for qid in order]
    if records_out:
        nft.write_records(records_out, [r.to_dict() for r in records])
    if trace_out and os.path.exists(trace_out):
        _rewrite_traces(trace_out, order)

    report = aggregate(records, config.ablation, name)
    if report_out:
        nft.write_atomic(report_out,
                         emit_report(report, ReportFormat.STRUCTURED_TEXT))

    # display informational message
    #
    logger.info("benchmark {}: {} of {} correct", name, report.overall_correct,
                report.overall_total)

    # exit gracefully
    #
    return report
#
# end of function

#------------------------------------------------------------------------------
#
# functions listed here: reporting
#
#------------------------------------------------------------------------------

def aggregate(records, ablation, name=""):
    """
    function: aggregate

    arguments:
     records: a list of QuestionRecord
     ablation: the AblationConfig of the run
     name: the benchmark name

    return:
     a BenchmarkReport with one bucket per question type and the agent
     calls summed per stage
    """
    per_type = {}
    cost = {}
    if records:
        df = pd.DataFrame({"type": [r.question_type.value for r in records],
                           "correct": [int(r.correct) for r in records]})
        grouped = df.groupby("type")["correct"].agg(["sum", "count"])
        per_type = {mvt.QuestionType(qtype): mvt.TypeScore(int(row["sum"]),
                                                           int(row["count"]))
                    for qtype, row in grouped.iterrows()}
        calls = pd.DataFrame([dict(r.calls) for r in records])
        if not calls.empty:
            cost = {stage: int(total) for stage, total in
                    sorted(calls.fillna(0).sum().items())}
    return mvt.BenchmarkReport(per_type, ablation, tuple(records), cost, name)
#
# end of function

def format_accuracy(score):
    """renders a TypeScore as "50.00", or the empty-bucket marker"""
    if score.total == 0:
        return EMPTY_BUCKET
    return str(score.accuracy)
#
# end of function

def format_cell(report):
    """
    function: format_cell

    arguments:
     report: a BenchmarkReport

    return:
     "overall (yes/no, num, other)", or only the overall number when no
     item carries one of those types
    """
    overall = format_accuracy(mvt.TypeScore(report.overall_correct,
                                            report.overall_total))
    if not report.typed:
        return overall
    parts = ", ".join(format_accuracy(report.per_type[q])
                      for q in TYPED_BUCKETS)
    return "%s (%s)" % (overall, parts)
#
# end of function

def _table_lines(rows):
    """renders (method, accuracy cell) pairs as fixed-width table lines"""
    wm = max([len(COL_METHOD)] + [len(m) for m, _ in rows])
    wa = max([len(COL_ACCURACY)] + [len(c) for _, c in rows])
    lines = ["%-*s | %-*s" % (wm, COL_METHOD, wa, COL_ACCURACY),
             "%s-+-%s" % ("-" * wm, "-" * wa)]
    lines.extend("%-*s | %-*s" % (wm, m, wa, c) for m, c in rows)
    return lines
#
# end of function

def _join_lines(lines):
    return (nft.DELIM_NEWLINE.join(line.rstrip() for line in lines) +
            nft.DELIM_NEWLINE).encode(nft.DEF_CHAR_ENCODING)
#
# end of function

def emit_report(report, fmt=ReportFormat.PLAIN_TABLE):
    """
    function: emit_report

    arguments:
     report: a BenchmarkReport
     fmt: a ReportFormat

    return:
     the rendered report as UTF-8 bytes
    """
    if ReportFormat(fmt) == ReportFormat.STRUCTURED_TEXT:
        return (nft.dumps_record(report.to_dict()) +
                nft.DELIM_NEWLINE).encode(nft.DEF_CHAR_ENCODING)

    # build a fixed-width table
    #
    lines = []
    if report.name:
        lines.append("Benchmark: %s" % report.name)
    lines.extend(_table_lines([(report.ablation.label, format_cell(report))]))
    lines.append("")
    lines.append("items: %d (%s)" % (report.overall_total, ", ".join(
        "%s %d" % (q.value, report.per_type[q].total)
        for q in mvt.QuestionType)))
    if report.cost:
        lines.append("agent calls: %s" % ", ".join(
            "%s=%d" % (k, v) for k, v in report.cost.items()))
    return _join_lines(lines)
#
# end of function

def emit_comparison(reports, fmt=ReportFormat.PLAIN_TABLE):
    """
    function: emit_comparison

    arguments:
     reports: BenchmarkReports of one benchmark under different ablations
     fmt: a ReportFormat

    return:
     the rendered comparison as UTF-8 bytes

    description:
     one table row per ablation label, in the order given. StructuredText
     writes one report per line. an empty list, reports of different
     benchmarks or a repeated label raise InvalidInputError.
    """
    if not reports:
        raise InvalidInputError("no reports to compare")
    names = sorted({str(r.name) for r in reports})
    if len(names) > 1:
        raise InvalidInputError("reports of different benchmarks (%s)" %
                                ", ".join(names))
    labels = [r.ablation.label for r in reports]
    repeated = sorted({label for label in labels if labels.count(label) > 1})
    if repeated:
        raise InvalidInputError("repeated method (%s)" % ", ".join(repeated))

    if ReportFormat(fmt) == ReportFormat.STRUCTURED_TEXT:
        return b"".join(emit_report(r, fmt) for r in reports)

    lines = []
    if reports[0].name:
        lines.append("Benchmark: %s" % reports[0].name)
    lines.extend(_table_lines([(r.ablation.label, format_cell(r))
                               for r in reports]))
    lines.append("")
    lines.extend("items (%s): %d" % (r.ablation.label, r.overall_total)
                 for r in reports)
    return _join_lines(lines)
#
# end of function

def load_report(data):
    """
    function: load_report

    arguments:
     data: StructuredText report bytes

    return:
     a BenchmarkReport
    """
    try:
        d = json.loads(data.decode(nft.DEF_CHAR_ENCODING))
        if d.get(mvt.KEY_SCHEMA) != mvt.SCHEMA_VERSION:
            raise ValueError("unsupported report schema (%s)" %
                             d.get(mvt.KEY_SCHEMA))
        return mvt.BenchmarkReport.from_dict(d)
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise InvalidInputError("not a report (%s)" % e) from None
#
# end of function

#
# end of file
