#!/usr/bin/env python
#
# file: tests/test_convert.py
#
# tests of the VQA-v2 and GQA converters.
#------------------------------------------------------------------------------

import json

import pytest

import nedc_file_tools as nft
import nedc_mavqa_convert as mvv
from nedc_mavqa_errors import DatasetLoadError

#------------------------------------------------------------------------------
#
# helpers
#
#------------------------------------------------------------------------------

def dump(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)

def answers(*texts):
    return [{"answer": t, "answer_confidence": "yes", "answer_id": i + 1}
            for i, t in enumerate(texts)]

@pytest.fixture
def vqav2(tmp_path):
    questions = dump(tmp_path / "q.json", {"questions": [
        {"question_id": 10, "image_id": 42, "question": "Is it a cat?"},
        {"question_id": 11, "image_id": 42, "question": "How many cats?"},
        {"question_id": 12, "image_id": 7, "question": "What is it?"},
    ]})
    annotations = dump(tmp_path / "a.json", {"annotations": [
        {"question_id": 11, "answer_type": "number",
         "answers": answers("2", "two", "3", "2", "3", "2")},
        {"question_id": 10, "answer_type": "yes/no",
         "answers": answers("yes", "yes", "no")},
    ]})
    return questions, annotations

def rows(path):
    return [rec for _, rec in nft.read_records(path)]

#------------------------------------------------------------------------------
#
# tests
#
#------------------------------------------------------------------------------

def test_ranked_answers():
    assert mvv.ranked_answers(answers("b", "a", "a", "b", " c ", "")) == \
        ["b", "a", "c"]
    assert mvv.ranked_answers([]) == []
    assert mvv.ranked_answers(None) == []

def test_vqav2_merge(tmp_path, vqav2):
    out = str(tmp_path / "out.jsonl")
    assert mvv.convert_vqav2(*vqav2, out) == 3
    recs = rows(out)
    assert [r["id"] for r in recs] == ["10", "11", "12"]
    assert recs[0] == {"id": "10",
                       "image": "COCO_val2014_000000000042.jpg",
                       "question": "Is it a cat?", "type": "yes/no",
                       "answers": ["yes", "no"]}
    assert recs[1]["answers"] == ["2", "3", "two"]
    assert recs[1]["type"] == "number"

    # a question without annotations keeps no type and no answers
    #
    assert recs[2]["type"] is None and recs[2]["answers"] == []

def test_vqav2_id_list(tmp_path, vqav2):
    ids = tmp_path / "ids.txt"
    ids.write_text("# keep these\n12\n\n10\n99\n", encoding="utf-8")
    out = str(tmp_path / "out.jsonl")
    n = mvv.convert_vqav2(*vqav2, out, ids=mvv.read_id_list(str(ids)),
                          image_prefix="")
    assert n == 2
    recs = rows(out)
    assert [r["id"] for r in recs] == ["12", "10"]
    assert recs[0]["image"] == "000000000007.jpg"

def test_vqav2_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{", encoding="utf-8")
    empty = dump(tmp_path / "empty.json", {"questions": []})
    out = str(tmp_path / "out.jsonl")
    with pytest.raises(DatasetLoadError):
        mvv.convert_vqav2(str(bad), empty, out)
    with pytest.raises(DatasetLoadError):
        mvv.convert_vqav2(empty, empty, out)

def test_gqa(tmp_path):
    questions = dump(tmp_path / "gqa.json", {
        "201": {"imageId": "n123", "question": "Is the sky blue?",
                "answer": "yes", "fullAnswer": "Yes, the sky is blue."},
        "202": {"imageId": "n124", "question": "What is left of the cup?",
                "answer": "plate", "fullAnswer": "plate"},
    })
    out = str(tmp_path / "gqa.jsonl")
    assert mvv.convert_gqa(questions, out, ids=["202", "201"]) == 2
    recs = rows(out)
    assert recs[0] == {"id": "202", "image": "n124.jpg",
                       "question": "What is left of the cup?", "type": None,
                       "answers": ["plate"]}
    assert recs[1]["answers"] == ["yes", "Yes, the sky is blue."]

def test_gqa_rejects_lists(tmp_path):
    with pytest.raises(DatasetLoadError):
        mvv.convert_gqa(dump(tmp_path / "g.json", []),
                        str(tmp_path / "o.jsonl"))
