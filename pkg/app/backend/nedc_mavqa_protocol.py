#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_protocol.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# usage:
#  import nedc_mavqa_protocol as mvp
#
# This file contains everything that touches model text: prompt templates
# and their rendering, failure-token detection, the parsing agent's
# KEY=VALUE reply format, numeric answer extraction and the grader reply.
#------------------------------------------------------------------------------

# import system modules
#
import functools
import os
import re
import string
from dataclasses import dataclass
from typing import Optional

# import logging modules
#
from loguru import logger

# import NEDC modules
#
import nedc_debug_tools as ndt
import nedc_file_tools as nft
import nedc_mavqa_types as mvt
from nedc_mavqa_errors import (ConfigError, InvalidInputError,
                               ProtocolViolationError)

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

# the failure token and the line that follows it
#
FAILURE_TOKEN = "[Answer Failed]"
KEY_MISSING_LINE = "MISSING:"
KEY_ANSWER_LINE = "ANSWER:"

# the parsing agent's reply keys
#
KEY_FAILED = "FAILED"
KEY_MISSING = "MISSING"
KEY_COUNTING = "COUNTING"
KEY_TARGET = "TARGET"
REPLY_KEYS = (KEY_FAILED, KEY_MISSING, KEY_COUNTING, KEY_TARGET)
VAL_YES = "yes"
VAL_NO = "no"
VAL_NONE = "none"

# template files live next to this module by default
#
DEF_TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                "prompts")
TEMPLATE_EXT = ".txt"
TEMPLATE_VERSION = "prompt_v1.0.0"
SFX_COT = "_cot"
SFX_BASIC = "_basic"
NAME_PARSE_RETRY = "parse_retry"

# the placeholders each stage must reference
#
PLACEHOLDERS = {
    mvt.Stage.INITIAL: frozenset({"question"}),
    mvt.Stage.PARSE: frozenset({"question", "response"}),
    mvt.Stage.DESCRIBE: frozenset({"question", "label"}),
    mvt.Stage.REATTEMPT: frozenset({"question", "failed_attempt",
                                    "descriptions"}),
    mvt.Stage.GRADE: frozenset({"question", "gold_answers", "candidate"}),
}

# stages whose templates come in a cot and a basic variant
#
VARIANT_STAGES = (mvt.Stage.INITIAL, mvt.Stage.REATTEMPT)

# stages whose templates must carry the failure instruction
#
ESCAPE_STAGES = (mvt.Stage.INITIAL, mvt.Stage.REATTEMPT)

# separators used when rendering lists into prompts
#
GOLD_SEP = " | "
NO_DESCRIPTIONS = "No additional objects were found in the image."

# number words accepted by the numeric extractor and by normalization
#
NUMBER_WORDS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11,
    "twelve": 12, "thirteen": 13, "fourteen": 14, "fifteen": 15,
    "sixteen": 16, "seventeen": 17, "eighteen": 18, "nineteen": 19,
    "twenty": 20}

# a number must not be glued to a word character or a leading minus sign.
# digit runs longer than MAX_NUMBER_DIGITS saturate at NUMBER_CEILING.
#
RE_NUMBER = re.compile(r"(?<![\w-])([0-9]+|%s)\b" % "|".join(NUMBER_WORDS),
                       re.IGNORECASE)
MAX_NUMBER_DIGITS = int(100)
NUMBER_CEILING = 10 ** MAX_NUMBER_DIGITS
RE_NUMBER_WORD = re.compile(r"\b(%s)\b" % "|".join(NUMBER_WORDS))
RE_TERMINAL_PUNCT = re.compile(r"[\s.,!?;:]+$")
RE_GRADE = re.compile(r"^(?:[\w ]*:)?\W*(correct|incorrect|abstain)\W*$",
                      re.IGNORECASE)

# set the debug level for this module
#
dbgl = ndt.Dbgl()

#------------------------------------------------------------------------------
#
# classes are listed here
#
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class PromptTemplate:
    """
    Class: PromptTemplate

    description:
     one stage's template text with its header lines removed. detailed_cot
     is None for stages that have a single template.
    """
    stage: mvt.Stage
    detailed_cot: Optional[bool]
    template_text: str
    version: Optional[str] = None

    @property
    def placeholders(self):
        return frozenset(name for _, name, _, _ in
                         string.Formatter().parse(self.template_text)
                         if name)

    def render(self, **values):
        return self.template_text.format_map(values)
#
# end of class

class PromptBook:
    """
    Class: PromptBook

    arguments:
     template_dir: a directory of template files (None = built-in set)

    description:
     loads and validates the full template set once. files are named
     <stage>_cot.txt / <stage>_basic.txt for initial and reattempt and
     <stage>.txt for the rest.
    """

    def __init__(self, template_dir=None):

        # display informational message
        #
        self.template_dir = nft.get_fullpath(template_dir or DEF_TEMPLATE_DIR)
        logger.debug("loading prompt templates ({})", self.template_dir)

        self.templates = {}
        for stage in PLACEHOLDERS:
            if stage in VARIANT_STAGES:
                for cot, sfx in ((True, SFX_COT), (False, SFX_BASIC)):
                    self.templates[(stage, cot)] = \
                        self._load(stage, cot, stage.value + sfx)
            else:
                self.templates[(stage, None)] = \
                    self._load(stage, None, stage.value)

        # the retry addendum has no placeholders
        #
        self.parse_retry = self._read(NAME_PARSE_RETRY)[0].strip()
    #
    # end of method

    def _read(self, name):
        fname = os.path.join(self.template_dir, name + TEMPLATE_EXT)
        if not os.path.isfile(fname):
            raise ConfigError("missing prompt template (%s)" % fname)
        with open(fname, nft.MODE_READ_TEXT,
                  encoding=nft.DEF_CHAR_ENCODING) as fp:
            lines = fp.read().split(nft.DELIM_NEWLINE)

        # strip the leading comment block
        #
        start = 0
        while start < len(lines) and \
                lines[start].lstrip().startswith(nft.DELIM_COMMENT):
            start += 1
        text = nft.DELIM_NEWLINE.join(lines[start:]).strip() + \
            nft.DELIM_NEWLINE
        return text, nft.get_version(fname)

    def _load(self, stage, cot, name):
        text, version = self._read(name)
        tmpl = PromptTemplate(stage, cot, text, version)

        # every placeholder the stage fills must be present, and nothing else
        #
        if tmpl.placeholders != PLACEHOLDERS[stage]:
            raise ConfigError("template %s has placeholders %s, expected %s" %
                              (name, sorted(tmpl.placeholders),
                               sorted(PLACEHOLDERS[stage])))
        if stage in ESCAPE_STAGES and \
                (FAILURE_TOKEN not in text or KEY_MISSING_LINE not in text):
            raise ConfigError("template %s lacks the failure instruction" %
                              name)
        if version != TEMPLATE_VERSION:
            logger.warning("template {} has version {} (expected {})",
                           name, version, TEMPLATE_VERSION)
        return tmpl

    def get(self, stage, cot=None):
        """returns the template for a stage (cot selects the variant)"""
        stage = mvt.Stage(stage)
        if stage in VARIANT_STAGES:
            return self.templates[(stage, bool(cot))]
        return self.templates[(stage, None)]
#
# end of class

@functools.lru_cache(maxsize=8)
def get_book(template_dir=None):
    """
    function: get_book

    arguments:
     template_dir: a template directory (None = built-in set)

    return:
     a cached PromptBook for that directory
    """
    return PromptBook(template_dir)
#
# end of function

#------------------------------------------------------------------------------
#
# functions listed here: prompt rendering
#
#------------------------------------------------------------------------------

def render_initial_prompt(question, cot, book=None):
    """
    function: render_initial_prompt

    arguments:
     question: the question text
     cot: True to request step-by-step reasoning
     book: a PromptBook (None = built-in templates)

    return:
     the prompt text
    """
    if not question or not question.strip():
        raise InvalidInputError("empty question")
    book = book or get_book()
    return book.get(mvt.Stage.INITIAL, cot).render(question=question)
#
# end of function

def render_parse_prompt(question, response, book=None, retry=False):
    """
    function: render_parse_prompt

    arguments:
     question: the question text
     response: the raw LVLM response
     book: a PromptBook (None = built-in templates)
     retry: if True, append the reply-format addendum

    return:
     the prompt text
    """
    book = book or get_book()
    prompt = book.get(mvt.Stage.PARSE).render(question=question,
                                              response=response)
    if retry:
        prompt = prompt + nft.DELIM_NEWLINE + book.parse_retry + \
            nft.DELIM_NEWLINE
    return prompt
#
# end of function

def render_description_prompt(question, label, book=None):
    if not label or not label.strip():
        raise InvalidInputError("empty object label")
    book = book or get_book()
    return book.get(mvt.Stage.DESCRIBE).render(question=question, label=label)
#
# end of function

def render_reattempt_prompt(question, failed_attempt, descriptions, cot=True,
                            book=None):
    """
    function: render_reattempt_prompt

    arguments:
     question: the question text
     failed_attempt: the raw first response
     descriptions: a list of ObjectDescription (may be empty)
     cot: True to request step-by-step reasoning
     book: a PromptBook (None = built-in templates)

    return:
     the prompt text

    description:
     descriptions are listed one per line as "- <label>: <description>".
    """
    book = book or get_book()
    if descriptions:
        block = nft.DELIM_NEWLINE.join(
            "- %s: %s" % (d.label, " ".join(d.description.split()))
            for d in descriptions)
    else:
        block = NO_DESCRIPTIONS
    return book.get(mvt.Stage.REATTEMPT, cot).render(
        question=question, failed_attempt=failed_attempt, descriptions=block)
#
# end of function

def render_grading_prompt(question, gold_answers, candidate, book=None):
    """
    function: render_grading_prompt

    arguments:
     question: the question text
     gold_answers: a non-empty list of reference answers
     candidate: the answer being graded
     book: a PromptBook (None = built-in templates)

    return:
     the prompt text
    """
    if not gold_answers:
        raise InvalidInputError("no gold answers (%s)" % question)
    book = book or get_book()
    return book.get(mvt.Stage.GRADE).render(
        question=question, gold_answers=GOLD_SEP.join(gold_answers),
        candidate=candidate)
#
# end of function

def extract_tag(prompt, tag):
    """
    function: extract_tag

    arguments:
     prompt: a rendered prompt
     tag: a tag name such as "question"

    return:
     the text between <tag> and </tag>, or None
    """
    start = prompt.find("<%s>" % tag)
    if start < 0:
        return None
    start += len(tag) + 2
    end = prompt.find("</%s>" % tag, start)
    if end < 0:
        return None
    return prompt[start:end]
#
# end of function

#------------------------------------------------------------------------------
#
# functions listed here: reading model responses
#
#------------------------------------------------------------------------------

def detect_failure_token(response):
    """true iff the exact, case-sensitive failure token occurs"""
    return FAILURE_TOKEN in response
#
# end of function

def missing_line_names(response):
    """
    function: missing_line_names

    arguments:
     response: a raw LVLM response

    return:
     the names listed on the response's first MISSING: line, normalized
    """
    for line in response.splitlines():
        line = line.strip()
        if line.upper().startswith(KEY_MISSING_LINE):
            return split_names(line[len(KEY_MISSING_LINE):])
    return ()
#
# end of function

def split_names(value):
    """
    function: split_names

    arguments:
     value: a comma-separated list of names, or "none"

    return:
     a tuple of trimmed, lowercased names without duplicates (first
     occurrence wins)
    """
    names = []
    for name in value.split(nft.DELIM_COMMA):
        name = " ".join(name.split()).lower()
        if name and name != VAL_NONE and name not in names:
            names.append(name)
    return tuple(names)
#
# end of function

def strip_failure_token(response):
    """removes the failure token and any MISSING: lines"""
    lines = [line for line in response.replace(FAILURE_TOKEN, "").splitlines()
             if not line.strip().upper().startswith(KEY_MISSING_LINE)]
    return nft.DELIM_NEWLINE.join(lines).strip()
#
# end of function

def extract_answer_text(response):
    """
    function: extract_answer_text

    arguments:
     response: a raw LVLM response

    return:
     the answer to report: the last "ANSWER:" line if there is one,
     otherwise the whole response, in both cases without the failure
     token and MISSING lines
    """
    text = strip_failure_token(response)
    answer = None
    for line in text.splitlines():
        sline = line.strip()
        if sline.upper().startswith(KEY_ANSWER_LINE):
            answer = sline[len(KEY_ANSWER_LINE):].strip()
    if answer:
        return answer
    return text
#
# end of function

def read_initial_attempt(response):
    """
    function: read_initial_attempt

    arguments:
     response: the raw LVLM response to the initial prompt

    return:
     an InitialAttempt whose outcome follows the failure token
    """
    if detect_failure_token(response):
        outcome = mvt.Failed(missing_line_names(response))
    else:
        outcome = mvt.Answered(extract_answer_text(response))
    return mvt.InitialAttempt(response, outcome, extract_answer_text(response))
#
# end of function

def extract_numeric_answer(text):
    """
    function: extract_numeric_answer

    arguments:
     text: any text

    return:
     the first non-negative integer written as digits or as a number word
     (zero to twenty), or None

    description:
     "-5", "7apples" and "3rd" hold no number. a digit run longer than
     MAX_NUMBER_DIGITS (leading zeros aside) returns NUMBER_CEILING.
    """
    match = RE_NUMBER.search(text)
    if match is None:
        return None
    token = match.group(1).lower()
    if token in NUMBER_WORDS:
        return NUMBER_WORDS[token]
    digits = token.lstrip("0") or "0"
    if len(digits) > MAX_NUMBER_DIGITS:
        return NUMBER_CEILING
    return int(digits)
#
# end of function

def parse_directive_reply(reply):
    """
    function: parse_directive_reply

    arguments:
     reply: the parsing agent's raw reply

    return:
     a dict with the four keys, or None if the reply is unusable

    description:
     lines without "=" are ignored. keys are case-insensitive and may be
     wrapped in markdown emphasis. FAILED and COUNTING must be yes or no.
    """
    values = {}
    for line in reply.splitlines():
        if nft.DELIM_EQUAL not in line:
            continue
        key, _, value = line.partition(nft.DELIM_EQUAL)
        key = key.strip().strip("*`- ").upper()
        if key in REPLY_KEYS and key not in values:
            values[key] = value.strip().strip("*`").strip()

    if any(key not in values for key in REPLY_KEYS):
        return None
    for key in (KEY_FAILED, KEY_COUNTING):
        values[key] = values[key].lower()
        if values[key] not in (VAL_YES, VAL_NO):
            return None
    return values
#
# end of function

def parse_directive(question, initial_response, llm, book=None):
    """
    function: parse_directive

    arguments:
     question: the question text
     initial_response: the raw LVLM response
     llm: an object with llm_query(prompt, stage=...) (an AgentSession)
     book: a PromptBook (None = built-in templates)

    return:
     a ParseDirective

    description:
     one LLM call, plus one retry with a format reminder if the reply is
     unusable. the failure token decides failure_detected; the agent's
     FAILED value is only checked against it.
    """

    # ask the parsing agent, retrying once
    #
    reply, values = None, None
    for retry in (False, True):
        prompt = render_parse_prompt(question, initial_response, book=book,
                                     retry=retry)
        reply = llm.llm_query(prompt, stage=mvt.Stage.PARSE)
        values = parse_directive_reply(reply)
        if values is not None:
            break
        logger.warning("unusable parsing reply (retry={}): {}", retry,
                       mvt.summarize(reply))
    if values is None:
        raise ProtocolViolationError("parsing reply not in KEY=VALUE form",
                                     reply)

    # the token is authoritative
    #
    failed = detect_failure_token(initial_response)
    if failed != (values[KEY_FAILED] == VAL_YES):
        logger.warning("parsing agent says FAILED={} but token present={}",
                       values[KEY_FAILED], failed)

    missing = ()
    if failed:
        missing = split_names(values[KEY_MISSING]) or \
            missing_line_names(initial_response)

    # fill in the counting directive
    #
    counting = None
    if values[KEY_COUNTING] == VAL_YES:
        target = split_names(values[KEY_TARGET])
        if not target:
            logger.warning("counting question without a target ({})",
                           question)
        else:
            counting = mvt.CountingDirective(
                " ".join(target),
                extract_numeric_answer(extract_answer_text(initial_response)))

    # display informational message
    #
    if dbgl == ndt.FULL:
        logger.debug("directive: failed={} missing={} counting={}",
                     failed, missing, counting)

    # exit gracefully
    #
    return mvt.ParseDirective(failed, missing, counting)
#
# end of function

def parse_grade_reply(reply):
    """
    function: parse_grade_reply

    arguments:
     reply: a grading agent's raw reply

    return:
     the Vote on the last non-empty line; anything else is ABSTAIN

    description:
     accepts "CORRECT", "**Correct.**" and "Verdict: correct" forms.
    """
    lines = [line for line in reply.splitlines() if line.strip()]
    if not lines:
        return mvt.Vote.ABSTAIN
    match = RE_GRADE.match(lines[-1].strip())
    if match is None:
        return mvt.Vote.ABSTAIN
    return {"correct": mvt.Vote.CORRECT,
            "incorrect": mvt.Vote.INCORRECT,
            "abstain": mvt.Vote.ABSTAIN}[match.group(1).lower()]
#
# end of function

def normalize_answer(text):
    """
    function: normalize_answer

    arguments:
     text: an answer

    return:
     the answer lowercased and trimmed, with whitespace collapsed,
     terminal punctuation removed and number words up to twenty mapped
     to digits
    """
    text = " ".join(text.lower().split())
    text = RE_TERMINAL_PUNCT.sub("", text)
    return RE_NUMBER_WORD.sub(lambda m: str(NUMBER_WORDS[m.group(1)]), text)
#
# end of function

#
# end of file
