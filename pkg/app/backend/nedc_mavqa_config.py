#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_config.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# usage:
#  import nedc_mavqa_config as mvc
#
# This file contains the run configuration: an NEDC parameter file with a
# MAVQA block (run outputs), a PIPELINE block (pipeline and ablation
# settings) and one block per agent kind selecting its backend.
#------------------------------------------------------------------------------

# import system modules
#
import dataclasses
import os
from dataclasses import dataclass
from typing import Optional

# import logging modules
#
from loguru import logger

# import NEDC modules
#
import nedc_debug_tools as ndt
import nedc_file_tools as nft
import nedc_mavqa_agents as mva
import nedc_mavqa_pipeline as mvl
import nedc_mavqa_protocol as mvp
import nedc_mavqa_types as mvt
from nedc_mavqa_errors import ConfigError, InvalidInputError

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

# block names
#
BLOCK_MAVQA = "MAVQA"
BLOCK_PIPELINE = "PIPELINE"
AGENT_BLOCKS = {
    mvt.AgentKind.LVLM: "LVLM",
    mvt.AgentKind.LLM: "LLM",
    mvt.AgentKind.DETECTOR: "DETECTOR",
    mvt.AgentKind.COUNTER: "COUNTER",
}

# backend selections
#
BACKEND_LIVE = "live"
BACKEND_REPLAY = "replay"
BACKEND_MOCK = "mock"
BACKENDS = (BACKEND_LIVE, BACKEND_REPLAY, BACKEND_MOCK)

# keys of the MAVQA block that hold paths
#
PATH_KEYS = ("template_dir", "cassette", "trace_out", "records_out",
             "report_out")

# the default configuration file shipped with the package
#
DEF_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                          "mavqa_params.txt")

# set the debug level for this module
#
dbgl = ndt.Dbgl()

#------------------------------------------------------------------------------
#
# classes are listed here
#
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentSpec:
    """
    Class: AgentSpec

    description:
     the backend selection of one agent kind. live needs endpoint and
     token_env; mock needs a scenario script.
    """
    kind: mvt.AgentKind
    backend: str = BACKEND_MOCK
    endpoint: Optional[str] = None
    token_env: Optional[str] = None
    timeout: float = mva.DEF_TIMEOUT
    retries: int = mva.DEF_RETRIES
    backoff: float = mva.DEF_BACKOFF
    temperature: float = mva.DEF_TEMPERATURE
    script: Optional[str] = None
#
# end of class

@dataclass(frozen=True)
class RunConfig:
    """
    Class: RunConfig

    description:
     everything a run needs besides the questions. paths are absolute.
    """
    pipeline: mvl.PipelineConfig
    agents: dict
    parallelism: int = 1
    template_dir: Optional[str] = None
    cassette: Optional[str] = None
    trace_out: Optional[str] = None
    records_out: Optional[str] = None
    report_out: Optional[str] = None
    source: Optional[str] = None

    def replace(self, **changes):
        """returns a copy with the non-None changes applied"""
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def with_ablation(self, ablation):
        return self.replace(pipeline=dataclasses.replace(self.pipeline,
                                                         ablation=ablation))

    def validate(self):
        """
        method: validate

        arguments:
         none

        return:
         self

        description:
         replay needs an existing cassette, live needs an endpoint and a
         token variable, mock needs an existing script.
        """
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1 (%s)" %
                              self.parallelism)
        for spec in self.agents.values():
            name = AGENT_BLOCKS[spec.kind]
            if spec.backend == BACKEND_REPLAY:
                if not self.cassette or not os.path.isfile(self.cassette):
                    raise ConfigError("%s: replay needs an existing cassette "
                                      "(%s)" % (name, self.cassette))
            elif spec.backend == BACKEND_LIVE:
                if not spec.endpoint or not spec.token_env:
                    raise ConfigError("%s: live needs endpoint and token_env"
                                      % name)
            elif not spec.script or not os.path.isfile(spec.script):
                raise ConfigError("%s: mock needs an existing script (%s)" %
                                  (name, spec.script))
        return self
#
# end of class

#------------------------------------------------------------------------------
#
# functions listed here
#
#------------------------------------------------------------------------------

def _opt(value):
    """an empty or 'none' value means unset"""
    if value is None or (isinstance(value, str) and
                         value.strip().lower() in ("", "none")):
        return None
    return value
#
# end of function

def _convert(block, key, cast, default, name):
    value = _opt(block.get(key))
    if value is None:
        return default
    try:
        return cast(value)
    except (TypeError, ValueError):
        raise ConfigError("%s: bad value for %s (%s)" % (name, key, value)) \
            from None
#
# end of function

def _check_keys(block, known, name):
    for key in block:
        if key not in known:
            logger.warning("{}: unknown key ignored ({})", name, key)
#
# end of function

def parse_pipeline(block):
    """
    function: parse_pipeline

    arguments:
     block: the PIPELINE block (a dict of strings)

    return:
     a PipelineConfig
    """
    fields = ("detailed_cot", "use_counter", "use_multi_agent",
              "counter_trigger_threshold", "description_fanout_limit",
              "pad_frac", "detector_threshold", "max_boxes",
              "question_budget")
    _check_keys(block, fields, BLOCK_PIPELINE)
    dflt = mvl.PipelineConfig()
    ablation = mvt.AblationConfig(
        _convert(block, "detailed_cot", nft.to_bool, True, BLOCK_PIPELINE),
        _convert(block, "use_counter", nft.to_bool, True, BLOCK_PIPELINE),
        _convert(block, "use_multi_agent", nft.to_bool, True, BLOCK_PIPELINE))
    try:
        return mvl.PipelineConfig(
            ablation=ablation,
            counter_trigger_threshold=_convert(
                block, "counter_trigger_threshold", int,
                dflt.counter_trigger_threshold, BLOCK_PIPELINE),
            description_fanout_limit=_convert(
                block, "description_fanout_limit", int,
                dflt.description_fanout_limit, BLOCK_PIPELINE),
            pad_frac=_convert(block, "pad_frac", float, dflt.pad_frac,
                              BLOCK_PIPELINE),
            detector_threshold=_convert(block, "detector_threshold", float,
                                        dflt.detector_threshold,
                                        BLOCK_PIPELINE),
            max_boxes=_convert(block, "max_boxes", int, dflt.max_boxes,
                               BLOCK_PIPELINE),
            question_budget=_convert(block, "question_budget", float,
                                     dflt.question_budget, BLOCK_PIPELINE))
    except InvalidInputError as e:
        raise ConfigError("%s: %s" % (BLOCK_PIPELINE, e)) from None
#
# end of function

def parse_agent(kind, block, root):
    """
    function: parse_agent

    arguments:
     kind: the AgentKind
     block: the kind's block (a dict of strings, possibly empty)
     root: the directory relative paths are resolved against

    return:
     an AgentSpec
    """
    name = AGENT_BLOCKS[kind]
    _check_keys(block, [f.name for f in dataclasses.fields(AgentSpec)], name)
    backend = str(_opt(block.get("backend")) or BACKEND_MOCK).lower()
    if backend not in BACKENDS:
        raise ConfigError("%s: unknown backend (%s); valid: %s" %
                          (name, backend, ", ".join(BACKENDS)))
    script = _opt(block.get("script"))
    return AgentSpec(
        kind=kind, backend=backend, endpoint=_opt(block.get("endpoint")),
        token_env=_opt(block.get("token_env")),
        timeout=_convert(block, "timeout", float, mva.DEF_TIMEOUT, name),
        retries=_convert(block, "retries", int, mva.DEF_RETRIES, name),
        backoff=_convert(block, "backoff", float, mva.DEF_BACKOFF, name),
        temperature=_convert(block, "temperature", float,
                             mva.DEF_TEMPERATURE, name),
        script=None if script is None else nft.get_fullpath(script, root))
#
# end of function

def load_run_config(pfile):
    """
    function: load_run_config

    arguments:
     pfile: a run configuration parameter file

    return:
     a RunConfig (not yet validated: flags may still override it)

    description:
     values are interpolated from the environment and relative paths are
     resolved against the file's directory.
    """

    # display informational message
    #
    logger.info("loading run configuration ({})", pfile)

    try:
        blocks = nft.load_parameter_file(pfile)
    except (OSError, ValueError) as e:
        raise ConfigError("invalid run configuration (%s): %s" % (pfile, e)) \
            from None
    root = os.path.dirname(os.path.abspath(pfile))

    main = blocks.get(BLOCK_MAVQA, {})
    _check_keys(main, ("parallelism",) + PATH_KEYS, BLOCK_MAVQA)
    paths = {}
    for key in PATH_KEYS:
        value = _opt(main.get(key))
        paths[key] = None if value is None else nft.get_fullpath(value, root)

    # exit gracefully
    #
    return RunConfig(
        pipeline=parse_pipeline(blocks.get(BLOCK_PIPELINE, {})),
        agents={kind: parse_agent(kind, blocks.get(name, {}), root)
                for kind, name in AGENT_BLOCKS.items()},
        parallelism=_convert(main, "parallelism", int, 1, BLOCK_MAVQA),
        source=os.path.abspath(pfile), **paths)
#
# end of function

def build_hub(config, record_to=None):
    """
    function: build_hub

    arguments:
     config: a validated RunConfig
     record_to: a cassette path to record every call into (None = off)

    return:
     an AgentHub

    description:
     backends are shared between kinds where possible: one replay
     backend, one scripted mock per script. recording refuses replay
     backends and opens the cassette before any call is made, so an
     unwritable path fails here with an OSError.
    """
    scripted = {}
    replay = None
    backends = {}
    for kind, spec in config.agents.items():
        if spec.backend == BACKEND_REPLAY:
            if record_to is not None:
                raise ConfigError("%s: cannot record from a replay backend" %
                                  AGENT_BLOCKS[kind])
            if replay is None:
                replay = mva.ReplayBackend(config.cassette)
            backends[kind] = replay
        elif spec.backend == BACKEND_LIVE:
            backends[kind] = mva.HttpBackend(
                spec.endpoint, spec.token_env, timeout=spec.timeout,
                retries=spec.retries, backoff=spec.backoff,
                temperature=spec.temperature)
        else:
            if spec.script not in scripted:
                scripted[spec.script] = mva.ScriptedBackend(
                    spec.script, book=mvp.get_book(config.template_dir))
            backends[kind] = scripted[spec.script]

    # wrap everything in recorders that share one cassette
    #
    if record_to is not None:
        nft.make_dir(os.path.dirname(os.path.abspath(record_to)))
        with open(record_to, nft.MODE_APPEND_TEXT,
                  encoding=nft.DEF_CHAR_ENCODING):
            pass
        cassette = mva.Cassette(record_to)
        backends = {kind: mva.RecordingBackend(b, cassette)
                    for kind, b in backends.items()}
        logger.info("recording agent calls ({})", record_to)

    return mva.AgentHub(backends)
#
# end of function

#
# end of file
