#!/usr/bin/env python
#
# file: tests/conftest.py
#
# shared fixtures and builders: synthetic images, scenario scripts,
# scripted hubs and run configurations.
#------------------------------------------------------------------------------

import os

import numpy as np
import pytest
from PIL import Image as PILImage

import nedc_debug_tools as ndt
import nedc_file_tools as nft
import nedc_mavqa_agents as mva
import nedc_mavqa_types as mvt

# the agent blocks of a run configuration, in file order
#
AGENT_BLOCK_NAMES = ("LVLM", "LLM", "DETECTOR", "COUNTER")

#------------------------------------------------------------------------------
#
# builders
#
#------------------------------------------------------------------------------

def write_png(path, width=64, height=48, seed=0):
    """writes a deterministic noise image and returns its path"""
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    PILImage.fromarray(pixels, "RGB").save(str(path), format="PNG")
    return str(path)

def write_script(path, scenarios):
    nft.write_records(str(path), scenarios)
    return str(path)

def scripted_hub(scenarios):
    """an AgentHub whose four kinds share one scripted backend"""
    backend = mva.ScriptedBackend(
        [mva.Scenario.from_dict(s) for s in scenarios])
    return mva.AgentHub({kind: backend for kind in mvt.AgentKind})

def write_config(path, script=None, backend="mock", mavqa=None,
                 pipeline=None, agent=None):
    """
    writes a run configuration whose four agents use one backend.
    mavqa, pipeline and agent are extra key/value pairs per block.
    """
    lines = ["version = param_v1.0.0", "", "MAVQA {"]
    lines += [" %s = %s" % kv for kv in (mavqa or {}).items()]
    lines += ["}", "", "PIPELINE {"]
    lines += [" %s = %s" % kv for kv in (pipeline or {}).items()]
    lines.append("}")
    for name in AGENT_BLOCK_NAMES:
        lines += ["", "%s {" % name, " backend = %s" % backend]
        if script is not None:
            lines.append(" script = %s" % script)
        lines += [" %s = %s" % kv for kv in (agent or {}).items()]
        lines.append("}")
    with open(str(path), "w", encoding="utf-8") as fp:
        fp.write("\n".join(lines) + "\n")
    return str(path)

def write_manifest(path, dataset, name="synthetic", image_root=".",
                   declared_size=None):
    lines = ["version = param_v1.0.0", "", "DATASET {",
             " name = %s" % name, " format = NormalizedJsonl",
             " path = %s" % dataset, " image_root = %s" % image_root]
    if declared_size is not None:
        lines.append(" declared_size = %d" % declared_size)
    lines.append("}")
    with open(str(path), "w", encoding="utf-8") as fp:
        fp.write("\n".join(lines) + "\n")
    return str(path)

def build_corpus(root, size=50):
    """
    writes a synthetic corpus of size questions under root: images, the
    dataset file, the scenario script and the manifest. the items cycle
    through direct answers, reattempts, best-effort answers and counting
    questions (with and without a usable initial count).

    returns (manifest path, script path)
    """
    root = str(root)
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    items, scenarios = [], []
    for i in range(size):
        image = os.path.join("images", "img_%03d.png" % i)
        write_png(os.path.join(root, image), 32 + i % 7, 24 + i % 5, seed=i)
        kind = i % 5
        if kind == 0:
            question = "Is there a red object in picture %d?" % i
            scn = {"initial": "The object is red.\nANSWER: yes"}
            answers, qtype = ["yes"], "yes/no"
        elif kind == 1:
            question = "What is on the table in picture %d?" % i
            scn = {"initial": "[Answer Failed]\nMISSING: cup, plate",
                   "detections": {"cup": [[2, 2, 12, 12, 0.9]],
                                  "plate": [[5, 5, 20, 18, 0.8],
                                            [0, 0, 4, 4, 0.1]]},
                   "descriptions": {"cup": "A white cup."},
                   "reattempt": "ANSWER: a cup"}
            answers, qtype = ["cup", "a cup"], "other"
        elif kind == 2:
            question = "What color is the kite in picture %d?" % i
            scn = {"initial": "[Answer Failed]\nMISSING: kite",
                   "detections": {"kite": [[1, 1, 9, 9, 0.7]]},
                   "reattempt": "[Answer Failed]\nANSWER: blue"}
            answers, qtype = ["green"], "other"
        elif kind == 3:
            question = "How many dogs are there in picture %d?" % i
            scn = {"initial": "ANSWER: 7", "counts": {"dogs": 5.4}}
            answers, qtype = ["5"], "number"
        else:
            question = "How many cats are in picture %d?" % i
            scn = {"initial": "ANSWER: two", "counts": {"cats": 9.0}}
            answers, qtype = ["2"], "number"
        scn.update({"question": question, "image": image})
        scenarios.append(scn)
        items.append({"id": "q%03d" % i, "image": image, "question": question,
                      "type": qtype, "answers": answers})

    dataset = os.path.join(root, "dataset.jsonl")
    nft.write_records(dataset, items)
    script = write_script(os.path.join(root, "script.jsonl"), scenarios)
    manifest = write_manifest(os.path.join(root, "manifest.txt"),
                              "dataset.jsonl", declared_size=size)
    return manifest, script

#------------------------------------------------------------------------------
#
# fixtures
#
#------------------------------------------------------------------------------

@pytest.fixture(autouse=True)
def quiet_logs():
    ndt.configure(dbgl="NONE", vrbl="NONE")
    yield

@pytest.fixture
def image_path(tmp_path):
    return write_png(tmp_path / "image.png")

@pytest.fixture
def corpus(tmp_path):
    return build_corpus(tmp_path / "corpus")
