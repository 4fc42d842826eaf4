"""Deterministic offline chat providers.

These drive the pipeline without any network: a rule-based doctor that
follows the guideline statuses rendered into the runtime prompt, a template
summarizer for sensor windows, and a rubric judge for scoring transcripts.
The CLI's offline modes and the test suite both build on them.
"""

from __future__ import annotations

import re

from .config import UNRELIABLE_SENSOR_TAG
from .gateway import ChatRequest
from .sensors import METRIC_LABELS, METRIC_SPECS

_STATUS_RE = re.compile(
    r"status: (AWAITING ANSWER key=(?P<key>\S+) question=\"(?P<question>[^\"]*)\""
    r"|AWAITING MEASUREMENT metric=(?P<metric>\S+)"
    r"|AWAITING IN-LAB test=(?P<test>\S+)"
    r"|CONCLUDED diagnosis=\"(?P<diagnosis>[^\"]*)\""
    r"|NARROWED|NO GUIDELINE|PENDING)")


def _metric_label(metric: str) -> str:
    return METRIC_LABELS.get(metric, metric.replace("_", " "))


class AutoDoctor:
    """Rule-based doctor: asks for pending guideline evidence, falls back to
    the sensor store when the patient cannot answer, requests in-lab tests
    when sensor data is unreliable, and summarizes once nothing is pending.

    Stateful per consultation; create one instance per session.
    """

    def __init__(self):
        self.asked_answers: set[str] = set()
        self.asked_measurements: set[str] = set()
        self.sensor_tried: set[str] = set()
        self.lab_requested: set[str] = set()

    def __call__(self, request: ChatRequest) -> str:
        prompt = request.last_user_content()
        statuses = list(_STATUS_RE.finditer(prompt))
        awaiting_answers = [(m.group("key"), m.group("question"))
                            for m in statuses if m.group("key")]
        awaiting_measurements = [m.group("metric") for m in statuses
                                 if m.group("metric")]
        awaiting_labs = [m.group("test") for m in statuses if m.group("test")]

        if UNRELIABLE_SENSOR_TAG in prompt:
            target = next((m for m in awaiting_measurements
                           if m not in self.lab_requested),
                          next(iter(awaiting_measurements), None))
            if target is not None:
                self.lab_requested.add(target)
                label = _metric_label(target)
                return (f"The sensor readings look unreliable, so let's confirm "
                        f"your {label} with an in-lab measurement.\n"
                        f'ACTION: LAB("{label}")')

        for key, question in awaiting_answers:
            if key not in self.asked_answers:
                self.asked_answers.add(key)
                return f'{question}\nACTION: ASK("{question}")'

        for metric in awaiting_measurements:
            label = _metric_label(metric)
            if metric not in self.asked_measurements:
                self.asked_measurements.add(metric)
                question = f"What is your {label}?"
                return f'{question}\nACTION: ASK("{question}")'
            if metric in METRIC_SPECS and metric not in self.sensor_tried:
                self.sensor_tried.add(metric)
                return (f"Let me check your {label} from your device.\n"
                        f'ACTION: SENSOR("{label} readings from the past week")')
            if metric not in self.lab_requested:
                self.lab_requested.add(metric)
                return (f"Please get your {label} measured in-lab.\n"
                        f'ACTION: LAB("{label}")')

        for test in awaiting_labs:
            if test not in self.lab_requested:
                self.lab_requested.add(test)
                label = test.replace("_", " ")
                return (f"Please have this checked: {label}.\n"
                        f'ACTION: LAB("{label}")')

        return ("Based on everything gathered, here is my diagnostic summary.\n"
                "ACTION: DIAGNOSE")


def template_summarizer(request: ChatRequest) -> str:
    """Deterministic sensor summarizer: restates the retrieved windows."""
    text = request.last_user_content()
    lines = [line[2:] for line in text.splitlines() if line.startswith("- ")]
    if not lines:
        return "No sensor data windows were provided."
    return "Sensor summary: " + " ".join(lines)


class RubricJudge:
    """Scripted transcript judge with a fixed rubric.

    Scores accuracy by whether the ground-truth label appears in the final
    doctor summary, compliance by action-protocol adherence, and sensor
    utilization by whether sensor knowledge was actually consulted. The
    judging prompt carries all three ingredients.
    """

    def __init__(self, malformed_first: bool = False):
        self.malformed_first = malformed_first
        self._calls = 0

    def __call__(self, request: ChatRequest) -> str:
        self._calls += 1
        if self.malformed_first and self._calls == 1:
            return "I cannot score this dialogue."
        prompt = request.full_text()
        truth_match = re.search(r"Ground truth disease: (.+)", prompt)
        truth = truth_match.group(1).strip().lower() if truth_match else ""
        dialogue_lower = prompt.lower()
        accuracy = 10 if truth and truth in dialogue_lower.split(
            "ground truth disease:")[0] else 2
        compliance = 8 if "action:" in dialogue_lower else 4
        sensor = 9 if "sensor" in dialogue_lower else 3
        return (f"compliance: {compliance}/10\n"
                f"explanation: guideline adherence assessed from the action protocol.\n"
                f"sensor_utilization: {sensor}/10\n"
                f"explanation: checked whether device data informed the dialogue.\n"
                f"accuracy: {accuracy}/10\n"
                f"explanation: compared the final summary with the ground truth label.\n")
