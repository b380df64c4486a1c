#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_convert.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# usage:
#  import nedc_mavqa_convert as mvv
#
# This file converts third-party VQA annotation files into the normalized
# line-delimited dataset format:
#
#  {"id": ..., "image": ..., "question": ..., "type": ..., "answers": [...]}
#
# VQA-v2 items keep their yes/no, number and other types. GQA items have no
# such split and are written with a null type.
#------------------------------------------------------------------------------

# import system modules
#
import json

# import computational modules
#
import pandas as pd

# import logging modules
#
from loguru import logger

# import NEDC modules
#
import nedc_file_tools as nft
from nedc_mavqa_errors import DatasetLoadError

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

DEF_VQAV2_PREFIX = "COCO_val2014_"
FMT_VQAV2_IMAGE = "%s%012d.jpg"
FMT_GQA_IMAGE = "%s.jpg"
VQAV2_TYPES = ("yes/no", "number", "other")

#------------------------------------------------------------------------------
#
# functions listed here
#
#------------------------------------------------------------------------------

def _load_json(fname):
    try:
        with open(fname, nft.MODE_READ_TEXT,
                  encoding=nft.DEF_CHAR_ENCODING) as fp:
            return json.load(fp)
    except (OSError, ValueError) as e:
        raise DatasetLoadError("cannot read (%s): %s" % (fname, e)) from None
#
# end of function

def read_id_list(fname):
    """reads one id per line; blank lines and # comments are skipped"""
    with open(fname, nft.MODE_READ_TEXT, encoding=nft.DEF_CHAR_ENCODING) as fp:
        return [line.strip() for line in fp
                if line.strip() and not line.startswith(nft.DELIM_COMMENT)]
#
# end of function

def _select(records, ids):
    if ids is None:
        return records
    by_id = {r["id"]: r for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        logger.warning("{} requested ids not found (first: {})",
                       len(missing), missing[0])
    return [by_id[i] for i in ids if i in by_id]
#
# end of function

def ranked_answers(answers):
    """
    function: ranked_answers

    arguments:
     answers: the annotators' answer dicts of one question

    return:
     the distinct answers, most frequent first (ties keep first
     occurrence)
    """
    texts = pd.Series([" ".join(str(a.get("answer", "")).split())
                       for a in answers or ()], dtype=object)
    texts = texts[texts != ""]
    if texts.empty:
        return []
    counts = texts.value_counts(sort=False)
    first = {t: i for i, t in reversed(list(enumerate(texts)))}
    return sorted(counts.index, key=lambda t: (-counts[t], first[t]))
#
# end of function

def convert_vqav2(questions, annotations, out, ids=None,
                  image_prefix=DEF_VQAV2_PREFIX):
    """
    function: convert_vqav2

    arguments:
     questions: the VQA-v2 questions JSON file
     annotations: the matching annotations JSON file
     out: the normalized dataset file to write
     ids: an optional list of question ids to keep (in that order)
     image_prefix: the image file name prefix

    return:
     the number of records written
    """
    qdf = pd.DataFrame(_load_json(questions).get("questions", []))
    adf = pd.DataFrame(_load_json(annotations).get("annotations", []))
    if qdf.empty:
        raise DatasetLoadError("no questions (%s)" % questions)
    for col in ("answer_type", "answers"):
        if col not in adf:
            adf[col] = None
    if "question_id" not in adf:
        adf["question_id"] = pd.Series(dtype=qdf["question_id"].dtype)
    df = qdf.merge(adf[["question_id", "answer_type", "answers"]],
                   on="question_id", how="left")

    records = []
    for row in df.itertuples(index=False):
        qtype = row.answer_type if row.answer_type in VQAV2_TYPES else None
        records.append({
            "id": str(row.question_id),
            "image": FMT_VQAV2_IMAGE % (image_prefix, int(row.image_id)),
            "question": row.question, "type": qtype,
            "answers": ranked_answers(row.answers
                                      if isinstance(row.answers, list)
                                      else [])})

    records = _select(records, ids)
    nft.write_records(out, records)
    logger.info("wrote {} VQA-v2 records ({})", len(records), out)
    return len(records)
#
# end of function

def convert_gqa(questions, out, ids=None):
    """
    function: convert_gqa

    arguments:
     questions: a GQA questions JSON file (a dict keyed by question id)
     out: the normalized dataset file to write
     ids: an optional list of question ids to keep (in that order)

    return:
     the number of records written
    """
    data = _load_json(questions)
    if not isinstance(data, dict):
        raise DatasetLoadError("not a GQA questions file (%s)" % questions)

    records = []
    for qid, item in data.items():
        answers = []
        for key in ("answer", "fullAnswer"):
            value = item.get(key)
            if value and value not in answers:
                answers.append(value)
        records.append({"id": str(qid),
                        "image": FMT_GQA_IMAGE % item["imageId"],
                        "question": item["question"], "type": None,
                        "answers": answers})

    records = _select(records, ids)
    nft.write_records(out, records)
    logger.info("wrote {} GQA records ({})", len(records), out)
    return len(records)
#
# end of function

#
# end of file
