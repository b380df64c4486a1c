#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_agents.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# usage:
#  import nedc_mavqa_agents as mva
#
# This file contains the agent layer: the request/reply contract shared by
# the four agent kinds, the backends that answer requests (an HTTP client,
# a cassette player, a cassette recorder and a scripted mock) and the hub
# that the pipeline talks to.
#------------------------------------------------------------------------------

# import system modules
#
import base64
import hashlib
import io
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from typing import Optional

# import networking modules
#
import requests
from PIL import Image as PILImage

# import logging modules
#
from loguru import logger

# import NEDC modules
#
import nedc_debug_tools as ndt
import nedc_file_tools as nft
import nedc_mavqa_imaging as mvi
import nedc_mavqa_protocol as mvp
import nedc_mavqa_types as mvt
from nedc_mavqa_errors import (AgentUnavailableError, CassetteMissError,
                               ConfigError, ImageFormatError,
                               InvalidInputError, ProtocolViolationError,
                               UnsalvageableBoxError, VqaError)

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

# remote routes, one per agent kind
#
API_PREFIX = "/v1/"
ROUTES = {
    mvt.AgentKind.LVLM: "lvlm",
    mvt.AgentKind.LLM: "llm",
    mvt.AgentKind.DETECTOR: "detect",
    mvt.AgentKind.COUNTER: "count",
}

# response keys
#
KEY_TEXT = "text"
KEY_DETECTIONS = "detections"
KEY_COUNT = "count"

# transport defaults
#
DEF_TIMEOUT = 60.0
DEF_RETRIES = int(3)
DEF_BACKOFF = 0.5
DEF_TEMPERATURE = 0.0
HTTP_SERVER_ERROR = int(500)
HTTP_CLIENT_ERROR = int(400)
AUTH_SCHEME = "Bearer"

# detector filtering defaults
#
DEF_DETECTOR_THRESHOLD = 0.3
DEF_MAX_BOXES = int(10)

# defaults of the scripted mock
#
MOCK_UNKNOWN = "unknown"
MOCK_DESCRIPTION = "A %s."
RE_HOW_MANY = re.compile(
    r"how many\s+([a-z][a-z\s-]*?)(?:\s+(?:are|is|were|was|do|does|did|can|"
    r"could|in|on|at|there)\b|[?.!,]|$)", re.IGNORECASE)

# set the debug level for this module
#
dbgl = ndt.Dbgl()

#------------------------------------------------------------------------------
#
# classes are listed here: requests, replies and cassette entries
#
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentRequest:
    """
    Class: AgentRequest

    description:
     one call to an agent. which fields are set depends on the kind:
     LVLM takes prompt + image, LLM takes prompt, DETECTOR takes image +
     object_names and COUNTER takes image + target_object. sample tells
     repeated identical calls (the graders) apart.
    """
    kind: mvt.AgentKind
    stage: mvt.Stage
    prompt: Optional[str] = None
    image: Optional[bytes] = None
    object_names: tuple = ()
    target_object: Optional[str] = None
    sample: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", mvt.AgentKind(self.kind))
        object.__setattr__(self, "stage", mvt.Stage(self.stage))
        object.__setattr__(self, "object_names", tuple(self.object_names))

        # check that the fields match the kind
        #
        wants_prompt = self.kind in (mvt.AgentKind.LVLM, mvt.AgentKind.LLM)
        wants_image = self.kind != mvt.AgentKind.LLM
        if wants_prompt != bool(self.prompt):
            raise InvalidInputError("%s request %s a prompt" %
                                    (self.kind.value, "needs" if wants_prompt
                                     else "takes no"))
        if wants_image != (self.image is not None):
            raise InvalidInputError("%s request %s an image" %
                                    (self.kind.value, "needs" if wants_image
                                     else "takes no"))
        if (self.kind == mvt.AgentKind.DETECTOR) != bool(self.object_names):
            raise InvalidInputError("object names are for detector requests")
        if (self.kind == mvt.AgentKind.COUNTER) != bool(self.target_object):
            raise InvalidInputError("a target is for counter requests")

    def payload(self):
        """the canonical serialized request: sorted keys, no timestamps"""
        image_sha = None if self.image is None else \
            hashlib.sha256(self.image).hexdigest()
        return nft.dumps_record({
            "kind": self.kind.value, "stage": self.stage.value,
            "prompt": self.prompt, "image_sha256": image_sha,
            "object_names": list(self.object_names),
            "target_object": self.target_object,
            "sample": self.sample}).encode(nft.DEF_CHAR_ENCODING)

    def fingerprint(self):
        return mvt.fingerprint_request(self.kind, self.payload())

    def to_body(self):
        """the JSON body posted to a remote agent"""
        body = {"stage": self.stage.value, "sample": self.sample}
        if self.prompt is not None:
            body["prompt"] = self.prompt
        if self.image is not None:
            body["image"] = base64.b64encode(self.image).decode("ascii")
        if self.object_names:
            body["object_names"] = list(self.object_names)
        if self.target_object is not None:
            body["target_object"] = self.target_object
        return body

    @classmethod
    def from_body(cls, kind, body):
        """
        method: from_body

        arguments:
         kind: the AgentKind of the route the body arrived on
         body: a decoded JSON body

        return:
         an AgentRequest; a malformed body raises InvalidInputError
        """
        try:
            image = body.get("image")
            return cls(kind=kind, stage=mvt.Stage(body["stage"]),
                       prompt=body.get("prompt"),
                       image=None if image is None
                       else base64.b64decode(image, validate=True),
                       object_names=tuple(body.get("object_names") or ()),
                       target_object=body.get("target_object"),
                       sample=int(body.get("sample", 0)))
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidInputError("malformed %s request (%s)" %
                                    (mvt.AgentKind(kind).value, e)) from None
#
# end of class

@dataclass(frozen=True)
class AgentReply:
    response: dict
    latency_ms: Optional[float] = None
    attempts: int = 1

@dataclass(frozen=True)
class CassetteEntry:
    fingerprint: str
    kind: mvt.AgentKind
    response: dict
    recorded_latency: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "recorded_latency", round(
            float(self.recorded_latency), mvt.LATENCY_DIGITS))

    def to_dict(self):
        return {mvt.KEY_SCHEMA: mvt.SCHEMA_VERSION,
                "fingerprint": self.fingerprint,
                "kind": mvt.AgentKind(self.kind).value,
                "response": self.response,
                "recorded_latency": self.recorded_latency}

    @classmethod
    def from_dict(cls, d):
        if d.get(mvt.KEY_SCHEMA) != mvt.SCHEMA_VERSION:
            raise ValueError("unsupported cassette schema (%s)" %
                             d.get(mvt.KEY_SCHEMA))
        return cls(d["fingerprint"], mvt.AgentKind(d["kind"]), d["response"],
                   float(d.get("recorded_latency", 0.0)))
#
# end of class

def _is_finite(value):
    try:
        return math.isfinite(value)
    except OverflowError:
        return False

def check_response(kind, response):
    """
    function: check_response

    arguments:
     kind: an AgentKind
     response: a decoded response body

    return:
     the response

    description:
     raises ProtocolViolationError if the body does not have the shape
     the kind promises.
    """
    kind = mvt.AgentKind(kind)
    ok = isinstance(response, dict)
    if ok and kind in (mvt.AgentKind.LVLM, mvt.AgentKind.LLM):
        ok = isinstance(response.get(KEY_TEXT), str)
    elif ok and kind == mvt.AgentKind.DETECTOR:
        hits = response.get(KEY_DETECTIONS)
        ok = isinstance(hits, list) and all(
            isinstance(h, dict) and "label" in h and "confidence" in h and
            isinstance(h.get("box"), list) and len(h["box"]) == 4
            for h in hits)
    elif ok and kind == mvt.AgentKind.COUNTER:
        count = response.get(KEY_COUNT)
        ok = isinstance(count, (int, float)) and \
            not isinstance(count, bool) and _is_finite(count)
    if not ok:
        raise ProtocolViolationError("malformed %s response" % kind.value,
                                     mvt.summarize(response))
    return response
#
# end of function

#------------------------------------------------------------------------------
#
# classes are listed here: backends
#
#------------------------------------------------------------------------------

class Backend:
    """
    Class: Backend

    description:
     the contract every backend honors: call() answers one request and
     close() releases resources. backends are safe for concurrent calls.
    """

    def call(self, request):
        raise NotImplementedError

    def close(self):
        return True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
#
# end of class

class HttpBackend(Backend):
    """
    Class: HttpBackend

    arguments:
     endpoint: the service base url, e.g. http://host:5000
     token_env: the environment variable that holds the bearer token
     timeout: seconds per attempt
     retries: total attempts per request
     backoff: first retry delay in seconds; doubles each retry
     temperature: sampling temperature sent with model requests
     sleep: the delay function (tests pass a stub)

    description:
     posts requests to /v1/{lvlm|llm|detect|count}. connection errors,
     timeouts and 5xx replies are retried; anything else is final.
    """

    def __init__(self, endpoint, token_env=None, timeout=DEF_TIMEOUT,
                 retries=DEF_RETRIES, backoff=DEF_BACKOFF,
                 temperature=DEF_TEMPERATURE, sleep=time.sleep):
        if not endpoint:
            raise ConfigError("live backend without an endpoint")
        if int(retries) < 1:
            raise ConfigError("retries must be >= 1 (%s)" % retries)
        self.endpoint = endpoint.rstrip("/")
        self.timeout = float(timeout)
        self.retries = int(retries)
        self.backoff = float(backoff)
        self.temperature = float(temperature)
        self._sleep = sleep

        # the token is read from the environment and never stored elsewhere
        #
        self.session = requests.Session()
        if token_env:
            token = os.environ.get(token_env)
            if not token:
                raise ConfigError("token variable is not set (%s)" %
                                  token_env)
            self.session.headers["Authorization"] = "%s %s" % (AUTH_SCHEME,
                                                               token)
    #
    # end of method

    def url(self, kind):
        return self.endpoint + API_PREFIX + ROUTES[mvt.AgentKind(kind)]

    def call(self, request):
        """
        method: call

        arguments:
         request: an AgentRequest

        return:
         an AgentReply

        description:
         raises AgentUnavailableError once the attempts are used up or the
         service rejects the request, ProtocolViolationError if the reply
         is not the JSON the kind promises.
        """
        url = self.url(request.kind)
        body = request.to_body()
        if request.kind in (mvt.AgentKind.LVLM, mvt.AgentKind.LLM):
            body["temperature"] = self.temperature

        last = None
        for attempt in range(1, self.retries + 1):
            if attempt > 1:
                self._sleep(self.backoff * (2 ** (attempt - 2)))

            # display informational message
            #
            if dbgl > ndt.BRIEF:
                logger.debug("POST {} (attempt {}/{})", url, attempt,
                             self.retries)

            start = time.perf_counter()
            try:
                resp = self.session.post(url, json=body, timeout=self.timeout)
            except requests.RequestException as e:
                last = "%s: %s" % (type(e).__name__, e)
                logger.warning("transport error on {}: {}", url, last)
                continue
            latency = (time.perf_counter() - start) * 1000.0

            if resp.status_code >= HTTP_SERVER_ERROR:
                last = "HTTP %d" % resp.status_code
                logger.warning("server error on {}: {}", url, last)
                continue
            if resp.status_code >= HTTP_CLIENT_ERROR:
                error = AgentUnavailableError("%s rejected the request "
                                              "(HTTP %d)" %
                                              (url, resp.status_code))
                error.attempts = attempt
                raise error
            try:
                response = resp.json()
            except ValueError:
                raise ProtocolViolationError("reply is not JSON",
                                             resp.text[:200]) from None
            return AgentReply(check_response(request.kind, response),
                              latency, attempt)

        error = AgentUnavailableError("%s unavailable after %d attempts "
                                      "(%s)" % (url, self.retries, last))
        error.attempts = self.retries
        raise error
    #
    # end of method

    def close(self):
        self.session.close()
        return True
#
# end of class

class Cassette:
    """
    Class: Cassette

    arguments:
     path: a line-delimited cassette file

    description:
     fingerprint-keyed recorded responses. a later line for the same
     fingerprint overrides an earlier one. entries are appended as they
     are recorded and compacted (unique, sorted by fingerprint) by
     save().
    """

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._entries = {}
        if os.path.exists(path):
            for lnum, rec in nft.read_records(path,
                                              tolerate_partial_tail=True):
                try:
                    entry = CassetteEntry.from_dict(rec)
                except (KeyError, ValueError) as e:
                    raise ConfigError("bad cassette entry at line %d (%s): "
                                      "%s" % (lnum, path, e)) from None
                self._entries[entry.fingerprint] = entry

    def __len__(self):
        with self._lock:
            return len(self._entries)

    def __contains__(self, fingerprint):
        with self._lock:
            return fingerprint in self._entries

    def lookup(self, fingerprint):
        with self._lock:
            return self._entries.get(fingerprint)

    def record(self, entry):
        with self._lock:
            self._entries[entry.fingerprint] = entry
            nft.append_record(self.path, entry.to_dict())

    def save(self):
        with self._lock:
            entries = [self._entries[k] for k in sorted(self._entries)]
            nft.write_records(self.path, [e.to_dict() for e in entries])
        return True
#
# end of class

class ReplayBackend(Backend):
    """
    Class: ReplayBackend

    arguments:
     cassette: a Cassette or the path of an existing cassette file

    description:
     answers from the cassette only; no transport is ever constructed.
     a request with no entry raises CassetteMissError.
    """

    def __init__(self, cassette):
        if not isinstance(cassette, Cassette):
            if not os.path.isfile(cassette):
                raise ConfigError("cassette not found (%s)" % cassette)
            cassette = Cassette(cassette)
        self.cassette = cassette
        logger.info("replaying {} recorded responses ({})", len(cassette),
                    cassette.path)

    def call(self, request):
        fingerprint = request.fingerprint()
        entry = self.cassette.lookup(fingerprint)
        if entry is None or entry.kind != request.kind:
            raise CassetteMissError(fingerprint)
        return AgentReply(entry.response, entry.recorded_latency, 1)
#
# end of class

class RecordingBackend(Backend):
    """
    Class: RecordingBackend

    arguments:
     inner: the backend that answers requests
     cassette: a Cassette (shared by several recorders) or a path

    description:
     forwards every call and records the reply. the path must be writable
     at construction; otherwise the OSError is raised right away.
    """

    def __init__(self, inner, cassette):
        if not isinstance(cassette, Cassette):
            nft.make_dir(os.path.dirname(os.path.abspath(cassette)))
            with open(cassette, nft.MODE_APPEND_TEXT,
                      encoding=nft.DEF_CHAR_ENCODING):
                pass
            cassette = Cassette(cassette)
        self.inner = inner
        self.cassette = cassette

    def call(self, request):
        reply = self.inner.call(request)
        self.cassette.record(CassetteEntry(request.fingerprint(),
                                           request.kind, reply.response,
                                           reply.latency_ms or 0.0))
        return reply

    def close(self):
        self.inner.close()
        return self.cassette.save()
#
# end of class

def record_mode(inner, cassette_path):
    """wraps a backend so that every call is recorded into cassette_path"""
    return RecordingBackend(inner, cassette_path)
#
# end of function

@dataclass(frozen=True)
class Scenario:
    """
    Class: Scenario

    description:
     what the scripted mock answers for one question. detections maps a
     label to raw [x0, y0, x1, y1, confidence] hits; counts maps a target
     to a density sum. parse_replies and grade_replies, when given,
     replace the rule-based LLM replies (by attempt and by sample).
     fail_stages lists stages whose calls raise AgentUnavailableError.
    """
    question: str
    image: Optional[str] = None
    initial: str = "ANSWER: " + MOCK_UNKNOWN
    reattempt: str = "ANSWER: " + MOCK_UNKNOWN
    descriptions: dict = field(default_factory=dict)
    describe_failures: tuple = ()
    detections: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    parse_replies: tuple = ()
    grade_replies: tuple = ()
    fail_stages: tuple = ()

    @classmethod
    def from_dict(cls, d, root=None):
        image = d.get("image")
        if image is not None:
            image = nft.get_fullpath(image, root)
        return cls(question=d["question"], image=image,
                   initial=d.get("initial", cls.initial),
                   reattempt=d.get("reattempt", cls.reattempt),
                   descriptions=dict(d.get("descriptions", {})),
                   describe_failures=tuple(d.get("describe_failures", ())),
                   detections={k: [list(h) for h in v] for k, v in
                               d.get("detections", {}).items()},
                   counts={k: float(v) for k, v in
                           d.get("counts", {}).items()},
                   parse_replies=tuple(d.get("parse_replies", ())),
                   grade_replies=tuple(d.get("grade_replies", ())),
                   fail_stages=tuple(mvt.Stage(s) for s in
                                     d.get("fail_stages", ())))
#
# end of class

def question_key(text):
    return " ".join(text.split()).lower()
#
# end of function

def load_scenarios(path):
    """
    function: load_scenarios

    arguments:
     path: a line-delimited scenario script

    return:
     a list of Scenario; relative image paths are resolved against the
     script's directory
    """
    root = os.path.dirname(os.path.abspath(path))
    try:
        return [Scenario.from_dict(rec, root)
                for _, rec in nft.read_records(path)]
    except (KeyError, ValueError) as e:
        raise ConfigError("bad scenario script (%s): %s" % (path, e)) \
            from None
#
# end of function

class ScriptedBackend(Backend):
    """
    Class: ScriptedBackend

    arguments:
     scenarios: a list of Scenario, or the path of a scenario script
     book: the PromptBook the engine renders with (None = built-in)

    description:
     a deterministic stand-in for all four agent kinds. models are keyed
     by the question carried in the prompt, the detector and counter by
     the image. the LLM implements the KEY=VALUE parsing contract and an
     exact-match grader.
    """

    def __init__(self, scenarios, book=None):
        self.book = book or mvp.get_book()
        if isinstance(scenarios, (str, os.PathLike)):
            scenarios = load_scenarios(scenarios)
        self.scenarios = list(scenarios)
        self._by_question = {}
        self._by_image = {}
        for scn in self.scenarios:
            self._by_question.setdefault(question_key(scn.question), scn)
            if scn.image is not None:
                digest = hashlib.sha256(mvi.encode_canonical(
                    mvi.load_image(scn.image))).hexdigest()
                self._by_image.setdefault(digest, []).append(scn)

    def call(self, request):
        start = time.perf_counter()
        handler = {mvt.AgentKind.LVLM: self._lvlm,
                   mvt.AgentKind.LLM: self._llm,
                   mvt.AgentKind.DETECTOR: self._detect,
                   mvt.AgentKind.COUNTER: self._count}[request.kind]
        response = handler(request)
        return AgentReply(response, (time.perf_counter() - start) * 1000.0, 1)

    def scenario_for_prompt(self, prompt):
        question = mvp.extract_tag(prompt, "question")
        if question is None:
            return None
        return self._by_question.get(question_key(question))

    def _check_stage(self, scn, request):
        if scn is not None and request.stage in scn.fail_stages:
            raise AgentUnavailableError("scripted failure (%s)" %
                                        request.stage.value)

    def _lvlm(self, request):
        scn = self.scenario_for_prompt(request.prompt)
        self._check_stage(scn, request)
        if scn is None:
            return {KEY_TEXT: "ANSWER: " + MOCK_UNKNOWN}
        if request.stage == mvt.Stage.DESCRIBE:
            label = mvp.extract_tag(request.prompt, "object") or ""
            if label in scn.describe_failures:
                raise AgentUnavailableError("scripted description failure "
                                            "(%s)" % label)
            return {KEY_TEXT: scn.descriptions.get(label,
                                                   MOCK_DESCRIPTION % label)}
        if request.stage == mvt.Stage.REATTEMPT:
            return {KEY_TEXT: scn.reattempt}
        return {KEY_TEXT: scn.initial}

    def _llm(self, request):
        scn = self.scenario_for_prompt(request.prompt)
        self._check_stage(scn, request)
        if request.stage == mvt.Stage.GRADE:
            if scn is not None and request.sample < len(scn.grade_replies):
                return {KEY_TEXT: scn.grade_replies[request.sample]}
            return {KEY_TEXT: self._grade(request.prompt)}

        # the parsing agent: scripted replies first, then the rules
        #
        attempt = 1 if self.book.parse_retry in request.prompt else 0
        if scn is not None and attempt < len(scn.parse_replies):
            return {KEY_TEXT: scn.parse_replies[attempt]}
        return {KEY_TEXT: self._parse(request.prompt)}

    @staticmethod
    def _parse(prompt):
        question = mvp.extract_tag(prompt, "question") or ""
        response = mvp.extract_tag(prompt, "response") or ""
        failed = mvp.detect_failure_token(response)
        missing = mvp.missing_line_names(response) if failed else ()
        match = RE_HOW_MANY.search(question)
        target = " ".join(match.group(1).split()).lower() if match else None
        return nft.DELIM_NEWLINE.join([
            "%s=%s" % (mvp.KEY_FAILED, mvp.VAL_YES if failed else mvp.VAL_NO),
            "%s=%s" % (mvp.KEY_MISSING,
                       ", ".join(missing) if missing else mvp.VAL_NONE),
            "%s=%s" % (mvp.KEY_COUNTING,
                       mvp.VAL_YES if target else mvp.VAL_NO),
            "%s=%s" % (mvp.KEY_TARGET, target or mvp.VAL_NONE)])

    @staticmethod
    def _grade(prompt):
        golds = (mvp.extract_tag(prompt, "gold") or "").split(mvp.GOLD_SEP)
        candidate = mvp.normalize_answer(
            mvp.extract_tag(prompt, "candidate") or "")
        if any(mvp.normalize_answer(g) == candidate for g in golds):
            return "Exact match.\nCORRECT"
        return "No match.\nINCORRECT"

    def _scenarios_for_image(self, image, labels):
        digest = hashlib.sha256(image).hexdigest()
        candidates = self._by_image.get(digest, [])
        for scn in candidates:
            if any(label in scn.detections or label in scn.counts
                   for label in labels):
                return scn
        if candidates:
            return candidates[0]

        # fall back to any scenario that knows the label
        #
        for scn in self.scenarios:
            if any(label in scn.detections or label in scn.counts
                   for label in labels):
                return scn
        return None

    def _detect(self, request):
        scn = self._scenarios_for_image(request.image, request.object_names)
        self._check_stage(scn, request)
        hits = []
        if scn is not None:
            for name in request.object_names:
                for raw in scn.detections.get(name, ()):
                    hits.append({"label": name, "box": list(raw[:4]),
                                 "confidence": float(raw[4])})
        return {KEY_DETECTIONS: hits}

    def _count(self, request):
        scn = self._scenarios_for_image(request.image,
                                        (request.target_object,))
        self._check_stage(scn, request)
        count = 0.0 if scn is None else \
            scn.counts.get(request.target_object, 0.0)
        return {KEY_COUNT: count}
#
# end of class

#------------------------------------------------------------------------------
#
# classes are listed here: the hub
#
#------------------------------------------------------------------------------

def image_size(data):
    """reads (width, height) from encoded image bytes without decoding"""
    try:
        with PILImage.open(io.BytesIO(data)) as img:
            return img.size
    except (OSError, ValueError) as e:
        raise ImageFormatError("cannot read image header (%s)" % e) from e
#
# end of function

def round_count(value):
    """rounds a density sum half-up to a non-negative integer"""
    if not _is_finite(value):
        raise ProtocolViolationError("non-finite count", str(value))
    if value < 0:
        raise ProtocolViolationError("negative count", str(value))
    return int(Decimal(repr(float(value))).to_integral_value(
        rounding=ROUND_HALF_UP))
#
# end of function

class AgentHub:
    """
    Class: AgentHub

    arguments:
     backends: a dict mapping every AgentKind to a Backend

    description:
     the four agent operations on top of the backends. every call is
     fingerprinted and recorded into the caller's TraceLog. the hub holds
     no per-question state and is shared by concurrent questions.
    """

    def __init__(self, backends):
        self.backends = {mvt.AgentKind(k): v for k, v in backends.items()}
        missing = [k.value for k in mvt.AgentKind if k not in self.backends]
        if missing:
            raise ConfigError("no backend for %s" % ", ".join(missing))

    def close(self):
        seen = []
        for backend in self.backends.values():
            if not any(backend is b for b in seen):
                seen.append(backend)
                backend.close()
        return True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def session(self, trace):
        """binds the hub to one run's TraceLog"""
        return AgentSession(self, trace)

    def call(self, request, trace, summarize):
        """
        method: call

        arguments:
         request: an AgentRequest
         trace: a TraceLog (None = no tracing)
         summarize: turns the response into a short event summary

        return:
         the response dict

        description:
         failed calls are traced with their error in the note and the
         exception is re-raised.
        """
        fingerprint = request.fingerprint()
        try:
            reply = self.backends[request.kind].call(request)
            response = check_response(request.kind, reply.response)
        except VqaError as e:
            if trace is not None:
                trace.record(mvt.TraceEvent(
                    request.stage, request.kind, fingerprint, "",
                    0.0, getattr(e, "attempts", 1), note=str(e)))
            raise

        # display informational message
        #
        if dbgl == ndt.FULL:
            logger.debug("{} {} -> {}", request.kind.value,
                         request.stage.value, summarize(response))

        if trace is not None:
            trace.record(mvt.TraceEvent(
                request.stage, request.kind, fingerprint,
                mvt.summarize(summarize(response)),
                reply.latency_ms or 0.0, reply.attempts))
        return response

    def lvlm_query(self, image, prompt, *, stage, trace=None):
        """
        method: lvlm_query

        arguments:
         image: encoded image bytes
         prompt: the prompt text
         stage: the Stage the call belongs to
         trace: a TraceLog

        return:
         the model's raw text
        """
        if not prompt or not prompt.strip():
            raise InvalidInputError("empty LVLM prompt")
        request = AgentRequest(mvt.AgentKind.LVLM, stage, prompt=prompt,
                               image=bytes(image))
        return self.call(request, trace, lambda r: r[KEY_TEXT])[KEY_TEXT]

    def llm_query(self, prompt, *, stage, sample=0, trace=None):
        if not prompt or not prompt.strip():
            raise InvalidInputError("empty LLM prompt")
        request = AgentRequest(mvt.AgentKind.LLM, stage, prompt=prompt,
                               sample=sample)
        return self.call(request, trace, lambda r: r[KEY_TEXT])[KEY_TEXT]

    def detect_objects(self, image, names, *, threshold=DEF_DETECTOR_THRESHOLD,
                       max_boxes=DEF_MAX_BOXES, trace=None):
        """
        method: detect_objects

        arguments:
         image: encoded image bytes
         names: the object names to look for
         threshold: the minimum confidence kept
         max_boxes: the maximum number of boxes kept per label
         trace: a TraceLog

        return:
         a list of Detection ordered by descending confidence

        description:
         boxes are clamped to the image; hits with a foreign label, a bad
         confidence or a box outside the image are dropped with a trace
         warning.
        """
        names = tuple(n.strip() for n in names)
        if not names or not all(names):
            raise InvalidInputError("detector needs non-empty names (%s)" %
                                    (names,))
        width, height = image_size(image)
        request = AgentRequest(mvt.AgentKind.DETECTOR, mvt.Stage.DETECT,
                               image=bytes(image), object_names=names)
        response = self.call(request, trace, lambda r: "%d raw detections" %
                             len(r[KEY_DETECTIONS]))

        # sanitize the raw hits
        #
        kept = []
        for hit in response[KEY_DETECTIONS]:
            try:
                if hit["label"] not in names:
                    raise InvalidInputError("unrequested label (%s)" %
                                            hit["label"])
                det = mvt.Detection(hit["label"],
                                    mvi.clamp_box(hit["box"], width, height),
                                    float(hit["confidence"]),
                                    hit.get("mask_ref"))
            except (InvalidInputError, UnsalvageableBoxError, OverflowError,
                    TypeError, ValueError) as e:
                logger.warning("dropping detection: {}", e)
                if trace is not None:
                    trace.warn(mvt.Stage.DETECT, "dropped detection: %s" % e)
                continue
            if det.confidence >= threshold:
                kept.append(det)

        # keep the best boxes per label; the sort is stable
        #
        kept.sort(key=lambda d: -d.confidence)
        per_label = {}
        result = []
        for det in kept:
            per_label[det.label] = per_label.get(det.label, 0) + 1
            if per_label[det.label] <= max_boxes:
                result.append(det)
        return result

    def count_objects(self, image, target, *, trace=None):
        """
        method: count_objects

        arguments:
         image: encoded image bytes
         target: the object to count
         trace: a TraceLog

        return:
         the density-map sum rounded half-up to a non-negative integer
        """
        if not target or not target.strip():
            raise InvalidInputError("empty counting target")
        request = AgentRequest(mvt.AgentKind.COUNTER, mvt.Stage.COUNT,
                               image=bytes(image),
                               target_object=target.strip())
        response = self.call(request, trace,
                             lambda r: "count=%s" % r[KEY_COUNT])
        return round_count(response[KEY_COUNT])
#
# end of class

class AgentSession:
    """
    Class: AgentSession

    description:
     an AgentHub bound to one run's TraceLog; the pipeline and the graders
     call agents through a session.
    """

    def __init__(self, hub, trace):
        self.hub = hub
        self.trace = trace

    def lvlm_query(self, image, prompt, *, stage):
        return self.hub.lvlm_query(image, prompt, stage=stage,
                                   trace=self.trace)

    def llm_query(self, prompt, *, stage, sample=0):
        return self.hub.llm_query(prompt, stage=stage, sample=sample,
                                  trace=self.trace)

    def detect_objects(self, image, names, **kwargs):
        return self.hub.detect_objects(image, names, trace=self.trace,
                                       **kwargs)

    def count_objects(self, image, target):
        return self.hub.count_objects(image, target, trace=self.trace)
#
# end of class

#
# end of file
