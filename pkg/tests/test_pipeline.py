#!/usr/bin/env python
#
# file: tests/test_pipeline.py
#
# state machine tests of run_question on scripted agents: every path
# through the pipeline, the counter threshold, the ablations, description
# fan-out and error handling.
#------------------------------------------------------------------------------

import itertools
import threading
import time

import pytest

import nedc_mavqa_agents as mva
import nedc_mavqa_pipeline as mvl
import nedc_mavqa_protocol as mvp
import nedc_mavqa_types as mvt
from nedc_mavqa_errors import AgentUnavailableError, BudgetExceededError

from conftest import write_png

DIRECT = ("Init", "InitialAttempted", "Parsed", "Done")
BYPASS = ("Init", "InitialAttempted", "Done")
REATTEMPT = ("Init", "InitialAttempted", "Parsed", "Detected", "Described",
             "Reattempted", "Done")
COUNTED = ("Init", "InitialAttempted", "Parsed", "Counted", "Done")
REATTEMPT_COUNTED = ("Init", "InitialAttempted", "Parsed", "Detected",
                     "Described", "Reattempted", "Counted", "Done")

#------------------------------------------------------------------------------
#
# helpers
#
#------------------------------------------------------------------------------

class Capture(mva.Backend):
    """forwards to a scripted backend and keeps every request"""

    def __init__(self, inner):
        self.inner = inner
        self.requests = []
        self._lock = threading.Lock()

    def call(self, request):
        with self._lock:
            self.requests.append(request)
        return self.inner.call(request)

    def prompts(self, stage):
        return [r.prompt for r in self.requests if r.stage == stage]

class Throttled(Capture):
    """delays descriptions and tracks how many run at once"""

    def __init__(self, inner):
        super().__init__(inner)
        self.active = 0
        self.peak = 0

    def call(self, request):
        if request.stage != mvt.Stage.DESCRIBE:
            return super().call(request)
        with self._lock:
            self.active += 1
            self.peak = max(self.peak, self.active)

        # later labels finish first
        #
        label = mvp.extract_tag(request.prompt, "object")
        time.sleep(0.02 * (10 - int(label[-1])) / 10)
        try:
            return super().call(request)
        finally:
            with self._lock:
                self.active -= 1

def run(tmp_path, scenario, config=None, backend_class=Capture, **kwargs):
    image = write_png(tmp_path / "q.png", 48, 40, seed=1)
    scenario = dict(scenario, image=image)
    backend = backend_class(mva.ScriptedBackend(
        [mva.Scenario.from_dict(scenario)]))
    hub = mva.AgentHub({k: backend for k in mvt.AgentKind})
    q = mvt.VisualQuestion("q1", image, scenario["question"])
    answer, trace = mvl.run_question(q, config or mvl.PipelineConfig(), hub,
                                     **kwargs)
    return answer, trace, backend

def counting_scenario(initial):
    return {"question": "How many dogs are there?", "initial": initial,
            "counts": {"dogs": 6.2}}

def config_with(**switches):
    return mvl.PipelineConfig(ablation=mvt.AblationConfig(**switches))

#------------------------------------------------------------------------------
#
# paths through the state machine
#
#------------------------------------------------------------------------------

def test_direct_answer(tmp_path):
    answer, trace, _ = run(tmp_path, {"question": "Is it sunny?",
                                      "initial": "Bright sky.\nANSWER: yes"})
    assert answer == mvt.FinalAnswer("yes", mvt.Provenance.DIRECT)
    assert trace.stage_sequence == DIRECT
    assert [e.stage.value for e in trace.calls()] == ["initial", "parse"]

def test_failure_is_reattempted(tmp_path):
    answer, trace, backend = run(tmp_path, {
        "question": "What is on the plate?",
        "initial": "[Answer Failed]\nMISSING: plate, fork",
        "detections": {"plate": [[5, 5, 30, 30, 0.9]],
                       "fork": [[1, 1, 4, 20, 0.6]]},
        "descriptions": {"plate": "A plate with a red apple."},
        "reattempt": "The plate holds an apple.\nANSWER: an apple"})
    assert answer == mvt.FinalAnswer("an apple", mvt.Provenance.REATTEMPT)
    assert trace.stage_sequence == REATTEMPT
    assert len(trace.calls(stage=mvt.Stage.DESCRIBE)) == 2

    prompt = backend.prompts(mvt.Stage.REATTEMPT)[0]
    assert "- plate: A plate with a red apple." in prompt
    assert "- fork: A fork." in prompt
    assert mvp.extract_tag(prompt, "failed_attempt").startswith(
        "[Answer Failed]")
    detect = [r for r in backend.requests if r.stage == mvt.Stage.DETECT]
    assert detect[0].object_names == ("plate", "fork")

def test_reattempt_that_fails_again_is_best_effort(tmp_path):
    answer, trace, _ = run(tmp_path, {
        "question": "What does the sign say?",
        "initial": "[Answer Failed]\nMISSING: sign",
        "detections": {"sign": [[0, 0, 10, 10, 0.8]]},
        "reattempt": "Maybe STOP.\n[Answer Failed]\nMISSING: sign"})
    assert answer.provenance == mvt.Provenance.BEST_EFFORT
    assert answer.text == "Maybe STOP."
    assert trace.stage_sequence == REATTEMPT

def test_zero_detections_still_reattempt(tmp_path):
    answer, trace, backend = run(tmp_path, {
        "question": "Where is the cat?",
        "initial": "[Answer Failed]\nMISSING: cat",
        "reattempt": "ANSWER: under the table"})
    assert trace.stage_sequence == REATTEMPT
    assert trace.calls(stage=mvt.Stage.DESCRIBE) == []
    assert mvp.NO_DESCRIPTIONS in backend.prompts(mvt.Stage.REATTEMPT)[0]
    assert answer.provenance == mvt.Provenance.REATTEMPT

def test_failure_without_names_skips_detector(tmp_path):
    _, trace, _ = run(tmp_path, {
        "question": "What is this?",
        "initial": "[Answer Failed]",
        "reattempt": "ANSWER: a lamp"})
    assert trace.stage_sequence == REATTEMPT
    assert trace.calls(kind=mvt.AgentKind.DETECTOR) == []
    assert any("detector skipped" in w.note for w in trace.warnings())

@pytest.mark.parametrize("initial,expected,due", [
    ("ANSWER: 0", "0", False),
    ("ANSWER: 1", "1", False),
    ("ANSWER: 2", "2", False),
    ("ANSWER: 3", "3", False),
    ("ANSWER: 4", "6", True),
    ("ANSWER: 100", "6", True),
    ("ANSWER: a few", "6", True),
])
def test_counter_threshold(tmp_path, initial, expected, due):
    answer, trace, _ = run(tmp_path, counting_scenario(initial))
    counter_calls = trace.calls(kind=mvt.AgentKind.COUNTER)
    assert bool(counter_calls) == due
    assert answer.text == expected
    if due:
        assert answer.provenance == mvt.Provenance.COUNTER
        assert trace.stage_sequence == COUNTED
    else:
        assert answer.provenance == mvt.Provenance.DIRECT
        assert trace.stage_sequence == DIRECT

def test_counting_with_failure(tmp_path):
    answer, trace, _ = run(tmp_path, {
        "question": "How many dogs are on the lawn?",
        "initial": "[Answer Failed]\nMISSING: dog",
        "detections": {"dog": [[2, 2, 12, 12, 0.7]]},
        "reattempt": "ANSWER: 2",
        "counts": {"dogs": 3.5}})
    assert trace.stage_sequence == REATTEMPT_COUNTED
    assert answer == mvt.FinalAnswer("4", mvt.Provenance.COUNTER)

def test_counter_due_rule():
    config = mvl.PipelineConfig()
    for n in (None, 0, 1, 2, 3, 4, 100):
        directive = mvt.ParseDirective(False, (),
                                       mvt.CountingDirective("dogs", n))
        assert mvl.counter_due(directive, config) == (n is None or n > 3)
    assert not mvl.counter_due(mvt.ParseDirective(False), config)
    assert not mvl.counter_due(
        mvt.ParseDirective(False, (), mvt.CountingDirective("dogs")),
        config_with(use_counter=False))

#------------------------------------------------------------------------------
#
# ablations
#
#------------------------------------------------------------------------------

def test_without_multi_agent_one_lvlm_call(tmp_path):
    answer, trace, _ = run(tmp_path, {
        "question": "What is on the plate?",
        "initial": "[Answer Failed]\nMISSING: plate"},
        config_with(use_multi_agent=False))
    assert trace.stage_sequence == BYPASS
    assert trace.total_agent_calls == 1
    assert trace.calls()[0].agent_kind == mvt.AgentKind.LVLM
    assert answer.provenance == mvt.Provenance.DIRECT

def test_without_counter(tmp_path):
    answer, trace, _ = run(tmp_path, counting_scenario("ANSWER: 9"),
                           config_with(use_counter=False))
    assert trace.calls(kind=mvt.AgentKind.COUNTER) == []
    assert answer == mvt.FinalAnswer("9", mvt.Provenance.DIRECT)

def test_without_cot_uses_basic_templates(tmp_path):
    _, _, backend = run(tmp_path, {
        "question": "What is it?",
        "initial": "[Answer Failed]\nMISSING: box",
        "reattempt": "ANSWER: a box"}, config_with(detailed_cot=False))
    assert backend.prompts(mvt.Stage.INITIAL) == [
        mvp.render_initial_prompt("What is it?", False)]
    assert "step by step" not in backend.prompts(mvt.Stage.REATTEMPT)[0]

#------------------------------------------------------------------------------
#
# description fan-out
#
#------------------------------------------------------------------------------

def test_descriptions_bounded_and_in_order(tmp_path):
    hits = {"obj%d" % i: [[i * 4, 0, i * 4 + 4, 8, 0.9 - i * 0.05]]
            for i in range(8)}
    config = mvl.PipelineConfig(description_fanout_limit=3)
    _, trace, backend = run(tmp_path, {
        "question": "What is there?",
        "initial": "[Answer Failed]\nMISSING: " + ", ".join(hits),
        "detections": hits,
        "descriptions": {k: "About %s." % k for k in hits},
        "reattempt": "ANSWER: things"}, config, backend_class=Throttled)
    assert 1 <= backend.peak <= 3
    summaries = [e.response_summary
                 for e in trace.calls(stage=mvt.Stage.DESCRIBE)]
    assert summaries == ["About obj%d." % i for i in range(8)]

def test_failed_description_is_dropped(tmp_path):
    answer, trace, backend = run(tmp_path, {
        "question": "What is on the desk?",
        "initial": "[Answer Failed]\nMISSING: pen, cup",
        "detections": {"pen": [[0, 0, 5, 5, 0.9]],
                       "cup": [[10, 10, 20, 20, 0.8]]},
        "describe_failures": ["pen"],
        "reattempt": "ANSWER: a cup"})
    assert trace.stage_sequence == REATTEMPT
    prompt = backend.prompts(mvt.Stage.REATTEMPT)[0]
    assert "- cup:" in prompt and "- pen:" not in prompt
    assert any("pen" in w.note for w in trace.warnings())
    assert answer.provenance == mvt.Provenance.REATTEMPT

#------------------------------------------------------------------------------
#
# errors
#
#------------------------------------------------------------------------------

def test_agent_failure_carries_partial_trace(tmp_path):
    with pytest.raises(AgentUnavailableError) as err:
        run(tmp_path, {"question": "Q?", "initial": "[Answer Failed]",
                       "fail_stages": ["reattempt"]})
    trace = err.value.trace
    assert trace.stage_sequence == ("Init", "InitialAttempted", "Parsed",
                                    "Detected", "Described")
    assert trace.events[-1].note is not None

def test_budget_is_checked_between_stages(tmp_path):
    clock = itertools.count(0, 10).__next__
    config = mvl.PipelineConfig(question_budget=1.0)
    with pytest.raises(BudgetExceededError) as err:
        run(tmp_path, {"question": "Q?", "initial": "ANSWER: x"}, config,
            clock=clock)
    assert err.value.trace.stage_sequence == ("Init", "InitialAttempted")

def test_unlimited_budget(tmp_path):
    clock = itertools.count(0, 1000).__next__
    config = mvl.PipelineConfig(question_budget=0)
    answer, _, _ = run(tmp_path, {"question": "Q?", "initial": "ANSWER: x"},
                       config, clock=clock)
    assert answer.text == "x"

@pytest.mark.parametrize("field,value", [
    ("counter_trigger_threshold", -1), ("description_fanout_limit", 0),
    ("pad_frac", -0.5), ("detector_threshold", 1.5), ("max_boxes", 0),
    ("question_budget", -1)])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        mvl.PipelineConfig(**{field: value})
