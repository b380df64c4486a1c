#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_types.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# usage:
#  import nedc_mavqa_types as mvt
#
# This file contains the shared domain model: questions, detections,
# answers, grading verdicts, benchmark reports and the per-run trace.
# Every value type is immutable and converts to and from the dicts that
# are written to line-delimited record files.
#------------------------------------------------------------------------------

# import system modules
#
import base64
import hashlib
import threading
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from enum import Enum
from types import MappingProxyType
from typing import Optional, Union

# import NEDC modules
#
import nedc_file_tools as nft
from nedc_mavqa_errors import InvalidInputError

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

# schema version written into every record
#
SCHEMA_VERSION = nft.DEF_SCHEMA_VERSION
KEY_SCHEMA = nft.DEF_SCHEMA_KEY

# latencies are kept in milliseconds to this many decimals
#
LATENCY_DIGITS = int(3)

# percentages are reported with two decimals
#
PCT_QUANTUM = Decimal("0.01")
PCT_SCALE = Decimal(100)

# maximum length of a response summary kept in a trace event
#
MAX_SUMMARY = int(120)

#------------------------------------------------------------------------------
#
# enumerations are listed here
#
#------------------------------------------------------------------------------

class QuestionType(str, Enum):
    """question categories; the values are the dataset spellings"""
    YES_NO = "yes/no"
    NUMBER = "number"
    OTHER = "other"
    UNKNOWN = "unknown"

    @classmethod
    def from_label(cls, label):
        """
        method: from_label

        arguments:
         label: a dataset type string or None

        return:
         a QuestionType; None maps to UNKNOWN

        description:
         raises InvalidInputError on any other spelling.
        """
        if label is None:
            return cls.UNKNOWN
        try:
            return cls(str(label).strip().lower())
        except ValueError:
            raise InvalidInputError("unknown question type (%s)" % label) \
                from None

class AgentKind(str, Enum):
    LVLM = "lvlm"
    LLM = "llm"
    DETECTOR = "detector"
    COUNTER = "counter"

class Stage(str, Enum):
    """the stage an agent call or trace event belongs to"""
    INITIAL = "initial"
    PARSE = "parse"
    DETECT = "detect"
    DESCRIBE = "describe"
    REATTEMPT = "reattempt"
    COUNT = "count"
    GRADE = "grade"

class PipelineState(str, Enum):
    INIT = "Init"
    INITIAL_ATTEMPTED = "InitialAttempted"
    PARSED = "Parsed"
    DETECTED = "Detected"
    DESCRIBED = "Described"
    REATTEMPTED = "Reattempted"
    COUNTED = "Counted"
    GRADED = "Graded"
    DONE = "Done"

class Provenance(str, Enum):
    DIRECT = "Direct"
    REATTEMPT = "Reattempt"
    COUNTER = "Counter"
    BEST_EFFORT = "BestEffort"

class Vote(str, Enum):
    """a single grader's vote; majorities use CORRECT/INCORRECT only"""
    CORRECT = "Correct"
    INCORRECT = "Incorrect"
    ABSTAIN = "Abstain"

# define the legal state transitions. grading happens after Done in
# benchmark runs.
#
TRANSITIONS = MappingProxyType({
    None: frozenset({PipelineState.INIT}),
    PipelineState.INIT: frozenset({PipelineState.INITIAL_ATTEMPTED}),
    PipelineState.INITIAL_ATTEMPTED: frozenset({PipelineState.DONE,
                                                PipelineState.PARSED}),
    PipelineState.PARSED: frozenset({PipelineState.DONE,
                                     PipelineState.DETECTED,
                                     PipelineState.COUNTED}),
    PipelineState.DETECTED: frozenset({PipelineState.DESCRIBED}),
    PipelineState.DESCRIBED: frozenset({PipelineState.REATTEMPTED}),
    PipelineState.REATTEMPTED: frozenset({PipelineState.DONE,
                                          PipelineState.COUNTED}),
    PipelineState.COUNTED: frozenset({PipelineState.DONE}),
    PipelineState.DONE: frozenset({PipelineState.GRADED}),
    PipelineState.GRADED: frozenset(),
})

#------------------------------------------------------------------------------
#
# functions listed here
#
#------------------------------------------------------------------------------

def fingerprint_request(agent_kind, payload):
    """
    function: fingerprint_request

    arguments:
     agent_kind: the AgentKind the request is addressed to
     payload: the canonical serialized request (bytes)

    return:
     a lowercase hex sha256 digest

    description:
     the canonical payload already names the agent kind, so the digest is
     taken over the payload alone. equal payloads give equal digests.
    """
    if not isinstance(payload, (bytes, bytearray)):
        raise InvalidInputError("payload must be bytes (%s, %s)" %
                                (AgentKind(agent_kind).value,
                                 type(payload).__name__))
    return hashlib.sha256(bytes(payload)).hexdigest()
#
# end of function

def percent(correct, total):
    """
    function: percent

    arguments:
     correct: number of correct items
     total: number of items

    return:
     100 * correct / total rounded half-up to two decimals (a Decimal),
     or None when total is zero
    """
    if total == 0:
        return None
    value = PCT_SCALE * Decimal(int(correct)) / Decimal(int(total))
    return value.quantize(PCT_QUANTUM, rounding=ROUND_HALF_UP)
#
# end of function

def summarize(text):
    """shortens a response for a trace event"""
    text = " ".join(str(text).split())
    if len(text) > MAX_SUMMARY:
        return text[:MAX_SUMMARY - 3] + "..."
    return text
#
# end of function

#------------------------------------------------------------------------------
#
# classes are listed here: questions and detections
#
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class VisualQuestion:
    """
    Class: VisualQuestion

    description:
     one image + question item. image_ref is a file path or the encoded
     image bytes. gold_answers may be empty (single-question runs).
    """
    id: str
    image_ref: Union[str, bytes]
    question: str
    question_type: QuestionType = QuestionType.UNKNOWN
    gold_answers: tuple = ()

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise InvalidInputError("empty question (%s)" % self.id)
        object.__setattr__(self, "question_type",
                           QuestionType(self.question_type))
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))

    def to_dict(self):
        if isinstance(self.image_ref, (bytes, bytearray)):
            image = {"bytes": base64.b64encode(self.image_ref).decode("ascii")}
        else:
            image = self.image_ref
        return {"id": self.id, "image": image, "question": self.question,
                "type": self.question_type.value,
                "answers": list(self.gold_answers)}

    @classmethod
    def from_dict(cls, d):
        image = d["image"]
        if isinstance(image, dict):
            image = base64.b64decode(image["bytes"])
        return cls(id=str(d["id"]), image_ref=image, question=d["question"],
                   question_type=QuestionType.from_label(d.get("type")),
                   gold_answers=tuple(d.get("answers") or ()))
#
# end of class

@dataclass(frozen=True)
class BoundingBox:
    """pixel box with exclusive max corner: x_min < x_max, y_min < y_max"""
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if not (0 <= self.x_min < self.x_max and 0 <= self.y_min < self.y_max):
            raise InvalidInputError("invalid box (%d, %d, %d, %d)" %
                                    self.as_tuple())

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def fits(self, width, height):
        """true if the box lies within a width x height image"""
        return self.x_max <= width and self.y_max <= height

    def to_dict(self):
        return list(self.as_tuple())

    @classmethod
    def from_dict(cls, d):
        return cls(*d)
#
# end of class

@dataclass(frozen=True)
class Detection:
    label: str
    box: BoundingBox
    confidence: float
    mask_ref: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= float(self.confidence) <= 1.0:
            raise InvalidInputError("confidence out of range (%s)" %
                                    self.confidence)
        object.__setattr__(self, "confidence", float(self.confidence))

    def to_dict(self):
        d = {"label": self.label, "box": self.box.to_dict(),
             "confidence": self.confidence}
        if self.mask_ref is not None:
            d["mask_ref"] = self.mask_ref
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(label=d["label"], box=BoundingBox.from_dict(d["box"]),
                   confidence=d["confidence"], mask_ref=d.get("mask_ref"))
#
# end of class

#------------------------------------------------------------------------------
#
# classes are listed here: attempts, directives and answers
#
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class Answered:
    answer: str

@dataclass(frozen=True)
class Failed:
    missing_objects: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "missing_objects",
                           tuple(self.missing_objects))

@dataclass(frozen=True)
class InitialAttempt:
    """
    Class: InitialAttempt

    description:
     the LVLM's first response. answer_text is what the pipeline reports
     if this response stands: the extracted answer for Answered outcomes,
     the response minus the failure token for Failed ones.
    """
    raw_response: str
    outcome: Union[Answered, Failed]
    answer_text: str = ""

    @property
    def failed(self):
        return isinstance(self.outcome, Failed)

    def to_dict(self):
        if self.failed:
            outcome = {"failed": list(self.outcome.missing_objects)}
        else:
            outcome = {"answered": self.outcome.answer}
        return {"raw_response": self.raw_response, "outcome": outcome,
                "answer_text": self.answer_text}

    @classmethod
    def from_dict(cls, d):
        o = d["outcome"]
        outcome = Failed(tuple(o["failed"])) if "failed" in o \
            else Answered(o["answered"])
        return cls(d["raw_response"], outcome, d.get("answer_text", ""))
#
# end of class

@dataclass(frozen=True)
class CountingDirective:
    target_object: str
    initial_count: Optional[int] = None

@dataclass(frozen=True)
class ParseDirective:
    failure_detected: bool
    missing_objects: tuple = ()
    counting: Optional[CountingDirective] = None

    def __post_init__(self):
        object.__setattr__(self, "missing_objects",
                           tuple(self.missing_objects))
        if self.missing_objects and not self.failure_detected:
            raise InvalidInputError("missing objects without a failure")

    def to_dict(self):
        counting = None
        if self.counting is not None:
            counting = {"target_object": self.counting.target_object,
                        "initial_count": self.counting.initial_count}
        return {"failure_detected": self.failure_detected,
                "missing_objects": list(self.missing_objects),
                "counting": counting}

    @classmethod
    def from_dict(cls, d):
        c = d.get("counting")
        counting = None if c is None else \
            CountingDirective(c["target_object"], c.get("initial_count"))
        return cls(d["failure_detected"], tuple(d["missing_objects"]),
                   counting)
#
# end of class

@dataclass(frozen=True)
class ObjectDescription:
    label: str
    box: BoundingBox
    description: str

    def __post_init__(self):
        if not self.description or not self.description.strip():
            raise InvalidInputError("empty description (%s)" % self.label)

    def to_dict(self):
        return {"label": self.label, "box": self.box.to_dict(),
                "description": self.description}

    @classmethod
    def from_dict(cls, d):
        return cls(d["label"], BoundingBox.from_dict(d["box"]),
                   d["description"])
#
# end of class

@dataclass(frozen=True)
class FinalAnswer:
    text: str
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def to_dict(self):
        return {"text": self.text, "provenance": self.provenance.value}

    @classmethod
    def from_dict(cls, d):
        return cls(d["text"], Provenance(d["provenance"]))
#
# end of class

#------------------------------------------------------------------------------
#
# classes are listed here: traces
#
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEvent:
    """
    Class: TraceEvent

    description:
     one agent call (agent_kind set) or one warning (agent_kind None).
    """
    stage: Stage
    agent_kind: Optional[AgentKind]
    request_fingerprint: str = ""
    response_summary: str = ""
    latency_ms: float = 0.0
    attempts: int = 0
    note: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "latency_ms",
                           round(float(self.latency_ms), LATENCY_DIGITS))

    def to_dict(self):
        d = {"stage": Stage(self.stage).value,
             "agent_kind": None if self.agent_kind is None
             else AgentKind(self.agent_kind).value,
             "request_fingerprint": self.request_fingerprint,
             "response_summary": self.response_summary,
             "latency": self.latency_ms,
             "attempts": self.attempts}
        if self.note is not None:
            d["note"] = self.note
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("agent_kind")
        return cls(Stage(d["stage"]), None if kind is None else AgentKind(kind),
                   d.get("request_fingerprint", ""),
                   d.get("response_summary", ""), float(d.get("latency", 0.0)),
                   int(d.get("attempts", 0)), d.get("note"))
#
# end of class

@dataclass(frozen=True)
class PipelineTrace:
    question_id: str
    events: tuple = ()
    states: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "states",
                           tuple(PipelineState(s) for s in self.states))

    @property
    def total_agent_calls(self):
        return sum(1 for e in self.events if e.agent_kind is not None)

    @property
    def stage_sequence(self):
        return tuple(s.value for s in self.states)

    def calls(self, kind=None, stage=None):
        """the agent-call events, optionally filtered"""
        return [e for e in self.events if e.agent_kind is not None
                and (kind is None or e.agent_kind == kind)
                and (stage is None or e.stage == stage)]

    def calls_per_stage(self):
        counts = {}
        for e in self.calls():
            counts[e.stage.value] = counts.get(e.stage.value, 0) + 1
        return counts

    def warnings(self):
        return [e for e in self.events if e.agent_kind is None]

    def to_dict(self):
        return {KEY_SCHEMA: SCHEMA_VERSION, "question_id": self.question_id,
                "states": list(self.stage_sequence),
                "events": [e.to_dict() for e in self.events],
                "total_agent_calls": self.total_agent_calls}

    @classmethod
    def from_dict(cls, d):
        return cls(d["question_id"],
                   tuple(TraceEvent.from_dict(e) for e in d["events"]),
                   tuple(d.get("states", ())))
#
# end of class

class TraceLog:
    """
    Class: TraceLog

    arguments:
     question_id: the id of the question being run

    description:
     the mutable accumulator behind a PipelineTrace. state transitions are
     checked against TRANSITIONS, so a run can never revisit a stage.
     events may be recorded from several threads.
    """

    def __init__(self, question_id):
        self.question_id = question_id
        self._lock = threading.Lock()
        self._events = []
        self._states = []

    @property
    def state(self):
        with self._lock:
            return self._states[-1] if self._states else None

    def enter(self, state):
        """
        method: enter

        arguments:
         state: the PipelineState being entered

        return:
         none

        description:
         raises RuntimeError on an illegal transition.
        """
        state = PipelineState(state)
        with self._lock:
            current = self._states[-1] if self._states else None
            if state not in TRANSITIONS[current]:
                raise RuntimeError("illegal transition (%s -> %s)" %
                                   (None if current is None
                                    else current.value, state.value))
            self._states.append(state)

    def record(self, event):
        with self._lock:
            self._events.append(event)

    def extend(self, events):
        with self._lock:
            self._events.extend(events)

    def warn(self, stage, note):
        self.record(TraceEvent(Stage(stage), None, note=note))

    def freeze(self):
        with self._lock:
            return PipelineTrace(self.question_id, tuple(self._events),
                                 tuple(self._states))
#
# end of class

#------------------------------------------------------------------------------
#
# classes are listed here: grading and reporting
#
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class GradeVerdict:
    votes: tuple
    majority: Vote

    def __post_init__(self):
        votes = tuple(Vote(v) for v in self.votes)
        object.__setattr__(self, "votes", votes)
        object.__setattr__(self, "majority", Vote(self.majority))
        if len(votes) != 3:
            raise InvalidInputError("a verdict needs 3 votes (%d)" %
                                    len(votes))
        expected = Vote.CORRECT if votes.count(Vote.CORRECT) >= 2 \
            else Vote.INCORRECT
        if self.majority != expected:
            raise InvalidInputError("majority disagrees with votes (%s)" %
                                    self.majority.value)

    def to_dict(self):
        return {"votes": [v.value for v in self.votes],
                "majority": self.majority.value}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Vote(v) for v in d["votes"]), Vote(d["majority"]))
#
# end of class

# define the ablation flag names accepted on the command line
#
ABL_NO_COT = "no-cot"
ABL_NO_COUNTER = "no-counter"
ABL_NO_MULTI_AGENT = "no-multi-agent"
ABLATION_NAMES = (ABL_NO_COT, ABL_NO_COUNTER, ABL_NO_MULTI_AGENT)

@dataclass(frozen=True)
class AblationConfig:
    """
    Class: AblationConfig

    description:
     the three switches of the ablation study. with use_multi_agent off
     the other two only affect the initial prompt (detailed_cot).
    """
    detailed_cot: bool = True
    use_counter: bool = True
    use_multi_agent: bool = True

    @classmethod
    def from_flags(cls, names, base=None):
        """
        method: from_flags

        arguments:
         names: an iterable of ablation names (no-cot, no-counter,
                no-multi-agent)
         base: the AblationConfig the flags are applied to (None = final)

        return:
         a new AblationConfig
        """
        base = base or cls()
        cot, counter, multi = base.detailed_cot, base.use_counter, \
            base.use_multi_agent
        for name in names:
            if name == ABL_NO_COT:
                cot = False
            elif name == ABL_NO_COUNTER:
                counter = False
            elif name == ABL_NO_MULTI_AGENT:
                multi = False
            else:
                raise InvalidInputError(
                    "unknown ablation (%s); valid names: %s" %
                    (name, ", ".join(ABLATION_NAMES)))
        return cls(cot, counter, multi)

    @property
    def label(self):
        """the method name shown in report tables"""
        parts = []
        if not self.detailed_cot:
            parts.append("w/o detailed CoT")
        if not self.use_counter:
            parts.append("w/o counter")
        if not self.use_multi_agent:
            parts.append("w/o multi-agent")
        return ", ".join(parts) if parts else "final"

    def to_dict(self):
        return {"detailed_cot": self.detailed_cot,
                "use_counter": self.use_counter,
                "use_multi_agent": self.use_multi_agent}

    @classmethod
    def from_dict(cls, d):
        return cls(bool(d["detailed_cot"]), bool(d["use_counter"]),
                   bool(d["use_multi_agent"]))
#
# end of class

@dataclass(frozen=True)
class QuestionRecord:
    """
    Class: QuestionRecord

    description:
     the per-question line of a benchmark results file. failed questions
     carry an error and count as Incorrect with no votes.
    """
    id: str
    question_type: QuestionType
    final_answer: Optional[str]
    provenance: Optional[Provenance]
    verdict: Vote
    votes: tuple = ()
    stage_sequence: tuple = ()
    agent_call_count: int = 0
    calls: MappingProxyType = field(default_factory=dict)
    error: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "question_type",
                           QuestionType(self.question_type))
        object.__setattr__(self, "verdict", Vote(self.verdict))
        object.__setattr__(self, "votes", tuple(Vote(v) for v in self.votes))
        object.__setattr__(self, "stage_sequence", tuple(self.stage_sequence))
        object.__setattr__(self, "calls",
                           MappingProxyType(dict(self.calls)))
        if self.provenance is not None:
            object.__setattr__(self, "provenance",
                               Provenance(self.provenance))

    @property
    def correct(self):
        return self.verdict == Vote.CORRECT

    def to_dict(self):
        d = {KEY_SCHEMA: SCHEMA_VERSION, "id": self.id,
             "type": self.question_type.value,
             "final_answer": self.final_answer,
             "provenance": None if self.provenance is None
             else self.provenance.value,
             "verdict": self.verdict.value,
             "votes": [v.value for v in self.votes],
             "stage_sequence": list(self.stage_sequence),
             "agent_call_count": self.agent_call_count,
             "calls": dict(sorted(self.calls.items()))}
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(id=str(d["id"]), question_type=QuestionType(d["type"]),
                   final_answer=d.get("final_answer"),
                   provenance=d.get("provenance"),
                   verdict=Vote(d["verdict"]),
                   votes=tuple(d.get("votes", ())),
                   stage_sequence=tuple(d.get("stage_sequence", ())),
                   agent_call_count=int(d.get("agent_call_count", 0)),
                   calls=d.get("calls", {}), error=d.get("error"))
#
# end of class

@dataclass(frozen=True)
class TypeScore:
    correct: int = 0
    total: int = 0

    @property
    def accuracy(self):
        return percent(self.correct, self.total)

    def to_dict(self):
        acc = self.accuracy
        return {"correct": self.correct, "total": self.total,
                "accuracy": None if acc is None else str(acc)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["correct"]), int(d["total"]))
#
# end of class

@dataclass(frozen=True)
class BenchmarkReport:
    """
    Class: BenchmarkReport

    description:
     accuracy aggregates of a benchmark run. per_type has one bucket for
     every QuestionType (UNKNOWN included) so that the buckets always sum
     to the overall counts. cost holds agent calls per stage.
    """
    per_type: MappingProxyType
    ablation: AblationConfig
    records: tuple = ()
    cost: MappingProxyType = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        per_type = {QuestionType(k): v for k, v in dict(self.per_type).items()}
        for qtype in QuestionType:
            per_type.setdefault(qtype, TypeScore())
        object.__setattr__(self, "per_type", MappingProxyType(
            {q: per_type[q] for q in QuestionType}))
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "cost",
                           MappingProxyType(dict(sorted(
                               dict(self.cost).items()))))

    @property
    def overall_correct(self):
        return sum(s.correct for s in self.per_type.values())

    @property
    def overall_total(self):
        return sum(s.total for s in self.per_type.values())

    @property
    def overall_accuracy(self):
        return percent(self.overall_correct, self.overall_total)

    @property
    def typed(self):
        """true if any item carries a yes/no, number or other type"""
        return any(self.per_type[q].total for q in QuestionType
                   if q != QuestionType.UNKNOWN)

    def to_dict(self):
        acc = self.overall_accuracy
        return {KEY_SCHEMA: SCHEMA_VERSION, "name": self.name,
                "ablation": self.ablation.to_dict(),
                "overall": {"correct": self.overall_correct,
                            "total": self.overall_total,
                            "accuracy": None if acc is None else str(acc)},
                "per_type": {q.value: s.to_dict()
                             for q, s in self.per_type.items()},
                "cost": dict(self.cost),
                "records": [r.to_dict() for r in self.records]}

    @classmethod
    def from_dict(cls, d):
        return cls(per_type={QuestionType(k): TypeScore.from_dict(v)
                             for k, v in d["per_type"].items()},
                   ablation=AblationConfig.from_dict(d["ablation"]),
                   records=tuple(QuestionRecord.from_dict(r)
                                 for r in d.get("records", ())),
                   cost=d.get("cost", {}), name=d.get("name", ""))
#
# end of class

#
# end of file
