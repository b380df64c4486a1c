#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_grading.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# usage:
#  import nedc_mavqa_grading as mvg
#
# This file contains open-ended answer grading: three LLM graders judge
# the candidate against the gold answers and the majority decides.
#------------------------------------------------------------------------------

# import logging modules
#
from loguru import logger

# import NEDC modules
#
import nedc_mavqa_protocol as mvp
import nedc_mavqa_types as mvt
from nedc_mavqa_errors import (AgentUnavailableError, CassetteMissError,
                               InvalidInputError, ProtocolViolationError)

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

NGRADERS = int(3)
NMAJORITY = int(2)

#------------------------------------------------------------------------------
#
# functions listed here
#
#------------------------------------------------------------------------------

def majority(votes):
    """
    function: majority

    arguments:
     votes: exactly three Vote values (or their spellings)

    return:
     Vote.CORRECT if at least two votes are CORRECT, else Vote.INCORRECT

    description:
     abstentions count against the answer.
    """
    votes = list(votes)
    if len(votes) != NGRADERS:
        raise InvalidInputError("majority needs %d votes (%d)" %
                                (NGRADERS, len(votes)))
    try:
        votes = [mvt.Vote(v) for v in votes]
    except ValueError as e:
        raise InvalidInputError(str(e)) from None
    if votes.count(mvt.Vote.CORRECT) >= NMAJORITY:
        return mvt.Vote.CORRECT
    return mvt.Vote.INCORRECT
#
# end of function

def grade_answer(q, candidate, llm, book=None):
    """
    function: grade_answer

    arguments:
     q: a VisualQuestion with gold answers
     candidate: the FinalAnswer to grade
     llm: an object with llm_query(prompt, stage=..., sample=...)
     book: a PromptBook (None = built-in templates)

    return:
     a GradeVerdict

    description:
     one prompt, three calls told apart by their sample index. a failed
     call votes ABSTAIN; if all three fail the last error is raised.
    """
    if not q.gold_answers:
        raise InvalidInputError("no gold answers (%s)" % q.id)
    prompt = mvp.render_grading_prompt(q.question, list(q.gold_answers),
                                       candidate.text, book)

    votes = []
    errors = []
    for sample in range(NGRADERS):
        try:
            reply = llm.llm_query(prompt, stage=mvt.Stage.GRADE,
                                  sample=sample)
        except (AgentUnavailableError, CassetteMissError,
                ProtocolViolationError) as e:
            logger.warning("grader {} failed on {}: {}", sample, q.id, e)
            errors.append(e)
            votes.append(mvt.Vote.ABSTAIN)
            continue
        votes.append(mvp.parse_grade_reply(reply))

    if len(errors) == NGRADERS:
        raise errors[-1]

    # exit gracefully
    #
    return mvt.GradeVerdict(tuple(votes), majority(votes))
#
# end of function

#
# end of file
