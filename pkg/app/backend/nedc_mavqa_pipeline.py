#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_pipeline.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# usage:
#  import nedc_mavqa_pipeline as mvl
#
# This file contains the adaptive answering state machine. A question is
# first put to the LVLM directly. Only when the answer reports missing
# objects, or the question is a counting problem the LVLM may have got
# wrong, are the detector, the description agents, a second attempt and
# the counter brought in. Each question makes a single pass.
#------------------------------------------------------------------------------

# import system modules
#
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

# import logging modules
#
from loguru import logger

# import NEDC modules
#
import nedc_debug_tools as ndt
import nedc_mavqa_agents as mva
import nedc_mavqa_imaging as mvi
import nedc_mavqa_protocol as mvp
import nedc_mavqa_types as mvt
from nedc_mavqa_errors import (AgentUnavailableError, BudgetExceededError,
                               CassetteMissError, InvalidInputError,
                               ProtocolViolationError, VqaError)

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

# pipeline defaults
#
DEF_COUNTER_THRESHOLD = int(3)
DEF_FANOUT_LIMIT = int(4)
DEF_QUESTION_BUDGET = 300.0

# set the debug level for this module
#
dbgl = ndt.Dbgl()

#------------------------------------------------------------------------------
#
# classes are listed here
#
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    """
    Class: PipelineConfig

    description:
     the knobs of one pipeline pass. question_budget is the wall-clock
     limit of a question in seconds (0 = no limit).
    """
    ablation: mvt.AblationConfig = field(default_factory=mvt.AblationConfig)
    counter_trigger_threshold: int = DEF_COUNTER_THRESHOLD
    description_fanout_limit: int = DEF_FANOUT_LIMIT
    pad_frac: float = mvi.DEF_PAD_FRAC
    detector_threshold: float = mva.DEF_DETECTOR_THRESHOLD
    max_boxes: int = mva.DEF_MAX_BOXES
    question_budget: float = DEF_QUESTION_BUDGET

    def __post_init__(self):
        if self.counter_trigger_threshold < 0:
            raise InvalidInputError("counter_trigger_threshold must be >= 0 "
                                    "(%s)" % self.counter_trigger_threshold)
        if self.description_fanout_limit < 1:
            raise InvalidInputError("description_fanout_limit must be >= 1 "
                                    "(%s)" % self.description_fanout_limit)
        if self.pad_frac < 0:
            raise InvalidInputError("pad_frac must be >= 0 (%s)" %
                                    self.pad_frac)
        if not 0.0 <= self.detector_threshold <= 1.0:
            raise InvalidInputError("detector_threshold must be in [0, 1] "
                                    "(%s)" % self.detector_threshold)
        if self.max_boxes < 1:
            raise InvalidInputError("max_boxes must be >= 1 (%s)" %
                                    self.max_boxes)
        if self.question_budget < 0:
            raise InvalidInputError("question_budget must be >= 0 (%s)" %
                                    self.question_budget)
#
# end of class

class QuestionBudget:
    """
    Class: QuestionBudget

    arguments:
     seconds: the wall-clock allowance (0 = unlimited)
     clock: a monotonic clock

    description:
     checked at stage boundaries; an agent call already in flight is not
     interrupted.
    """

    def __init__(self, seconds, clock=time.monotonic):
        self.seconds = float(seconds)
        self._clock = clock
        self._start = clock()

    def check(self, stage):
        if self.seconds and self._clock() - self._start > self.seconds:
            raise BudgetExceededError("question budget of %g s exceeded "
                                      "before %s" % (self.seconds,
                                                     mvt.Stage(stage).value))
#
# end of class

#------------------------------------------------------------------------------
#
# functions listed here
#
#------------------------------------------------------------------------------

def counter_due(directive, config):
    """
    function: counter_due

    arguments:
     directive: the ParseDirective
     config: the PipelineConfig

    return:
     True if the counter must run: a counting question, the counter
     enabled, and no usable initial count or one above the threshold
    """
    counting = directive.counting
    if counting is None or not config.ablation.use_counter:
        return False
    return counting.initial_count is None or \
        counting.initial_count > config.counter_trigger_threshold
#
# end of function

def describe_detections(image, question, detections, config, hub, trace=None,
                        book=None):
    """
    function: describe_detections

    arguments:
     image: the full Image
     question: the question text
     detections: a list of Detection inside the image
     config: the PipelineConfig (pad_frac, description_fanout_limit)
     hub: an AgentHub
     trace: the run's TraceLog
     book: a PromptBook (None = built-in templates)

    return:
     a list of ObjectDescription in the order of detections

    description:
     crops are described concurrently with at most
     description_fanout_limit calls in flight. each item traces into its
     own log and the logs are merged in input order, so the trace does not
     depend on completion order. a failed or empty description is dropped
     with a trace warning.
    """
    qid = trace.question_id if trace is not None else ""

    def _describe(det):
        sub = mvt.TraceLog(qid)
        data = mvi.encode_canonical(mvi.crop(image, det.box, config.pad_frac))
        prompt = mvp.render_description_prompt(question, det.label, book)
        try:
            text = hub.lvlm_query(data, prompt, stage=mvt.Stage.DESCRIBE,
                                  trace=sub).strip()
        except (AgentUnavailableError, CassetteMissError,
                ProtocolViolationError) as e:
            logger.warning("description of {} failed: {}", det.label, e)
            sub.warn(mvt.Stage.DESCRIBE,
                     "description of %s dropped: %s" % (det.label, e))
            return None, sub
        if not text:
            sub.warn(mvt.Stage.DESCRIBE,
                     "empty description of %s dropped" % det.label)
            return None, sub
        return mvt.ObjectDescription(det.label, det.box, text), sub

    if not detections:
        return []
    with ThreadPoolExecutor(
            max_workers=config.description_fanout_limit) as executor:
        futures = [executor.submit(_describe, det) for det in detections]
        results = [f.result() for f in futures]

    # merge in input order
    #
    descriptions = []
    for desc, sub in results:
        if trace is not None:
            trace.extend(sub.freeze().events)
        if desc is not None:
            descriptions.append(desc)
    return descriptions
#
# end of function

def _reattempt(q, image, data, attempt, directive, config, session, trace,
               budget, book):

    # find the missing objects
    #
    budget.check(mvt.Stage.DETECT)
    if directive.missing_objects:
        detections = session.detect_objects(
            data, directive.missing_objects,
            threshold=config.detector_threshold, max_boxes=config.max_boxes)
    else:
        logger.warning("failure without missing objects ({})", q.id)
        trace.warn(mvt.Stage.DETECT, "no missing objects named; detector "
                   "skipped")
        detections = []
    trace.enter(mvt.PipelineState.DETECTED)

    # describe them
    #
    budget.check(mvt.Stage.DESCRIBE)
    descriptions = describe_detections(image, q.question, detections, config,
                                       session.hub, trace, book)
    trace.enter(mvt.PipelineState.DESCRIBED)

    # try again with everything we know
    #
    budget.check(mvt.Stage.REATTEMPT)
    prompt = mvp.render_reattempt_prompt(q.question, attempt.raw_response,
                                         descriptions,
                                         config.ablation.detailed_cot, book)
    raw = session.lvlm_query(data, prompt, stage=mvt.Stage.REATTEMPT)
    trace.enter(mvt.PipelineState.REATTEMPTED)
    if mvp.detect_failure_token(raw):
        return mvt.FinalAnswer(mvp.extract_answer_text(raw),
                               mvt.Provenance.BEST_EFFORT)
    return mvt.FinalAnswer(mvp.extract_answer_text(raw),
                           mvt.Provenance.REATTEMPT)
#
# end of function

def run_question(q, config, agents, trace=None, book=None,
                 clock=time.monotonic):
    """
    function: run_question

    arguments:
     q: a VisualQuestion
     config: a PipelineConfig
     agents: an AgentHub with all four agent kinds
     trace: a TraceLog to continue (None = start a new one)
     book: a PromptBook (None = built-in templates)
     clock: the clock used for the question budget

    return:
     (FinalAnswer, PipelineTrace)

    description:
     runs one pass of the state machine. a VqaError raised on the way
     carries the partial trace in its "trace" attribute.
    """

    # display informational message
    #
    logger.info("question {}: {}", q.id, q.question)

    trace = trace if trace is not None else mvt.TraceLog(q.id)
    session = agents.session(trace)
    budget = QuestionBudget(config.question_budget, clock)
    ablation = config.ablation

    try:
        trace.enter(mvt.PipelineState.INIT)
        image = mvi.resolve_image(q.image_ref)
        data = mvi.encode_canonical(image)

        # the direct attempt
        #
        prompt = mvp.render_initial_prompt(q.question, ablation.detailed_cot,
                                           book)
        raw = session.lvlm_query(data, prompt, stage=mvt.Stage.INITIAL)
        attempt = mvp.read_initial_attempt(raw)
        trace.enter(mvt.PipelineState.INITIAL_ATTEMPTED)
        answer = mvt.FinalAnswer(attempt.answer_text, mvt.Provenance.DIRECT)

        if not ablation.use_multi_agent:
            trace.enter(mvt.PipelineState.DONE)
            return answer, trace.freeze()

        # let the parsing agent route the question
        #
        budget.check(mvt.Stage.PARSE)
        directive = mvp.parse_directive(q.question, raw, session, book)
        trace.enter(mvt.PipelineState.PARSED)

        if directive.failure_detected:
            answer = _reattempt(q, image, data, attempt, directive, config,
                                session, trace, budget, book)

        # the counter's answer is final
        #
        if counter_due(directive, config):
            budget.check(mvt.Stage.COUNT)
            count = session.count_objects(data,
                                          directive.counting.target_object)
            trace.enter(mvt.PipelineState.COUNTED)
            answer = mvt.FinalAnswer(str(count), mvt.Provenance.COUNTER)

        trace.enter(mvt.PipelineState.DONE)

    except VqaError as e:
        e.trace = trace.freeze()
        raise

    # display informational message
    #
    logger.info("question {}: {} ({})", q.id, answer.text,
                answer.provenance.value)

    # exit gracefully
    #
    return answer, trace.freeze()
#
# end of function

#
# end of file
