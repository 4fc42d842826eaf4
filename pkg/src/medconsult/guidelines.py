"""Diagnosis guideline trees: DSL parsing, validation, and step interpretation.

A guideline tree encodes one disease's diagnostic procedure as an if-else
decision tree authored in a JSON grammar (documented in docs/guideline_dsl.md).
Trees are immutable after load; per-session progress lives in a TreeCursor
that advances as findings arrive, one decidable node at a time.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

PROVENANCES = ("patient-stated", "sensor", "in-lab")


class GuidelineError(Exception):
    pass


class GuidelineSyntaxError(GuidelineError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"syntax error at line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class GuidelineSemanticError(GuidelineError):
    """Base for semantic validation failures; subclasses name the defect."""


class DanglingChildError(GuidelineSemanticError):
    pass


class CycleError(GuidelineSemanticError):
    pass


class UnknownMetricError(GuidelineSemanticError):
    pass


class UnitMismatchError(GuidelineError):
    pass


class NodeKind(str, Enum):
    QUESTION = "question"
    CONDITION = "condition"
    CONCLUSION = "conclusion"
    INLAB = "inlab"


_COMPARATORS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


@dataclass
class GuidelineNode:
    id: str
    kind: NodeKind
    # question
    key: Optional[str] = None
    prompt: Optional[str] = None
    answers: dict[str, str] = field(default_factory=dict)
    # condition
    metric: Optional[str] = None
    op: Optional[str] = None
    threshold: Optional[float] = None
    units: Optional[str] = None
    true_child: Optional[str] = None
    false_child: Optional[str] = None
    provenance: tuple[str, ...] = PROVENANCES
    # conclusion
    diagnosis: Optional[str] = None
    weight: float = 1.0
    # inlab
    test: Optional[str] = None
    child: Optional[str] = None

    def children(self) -> list[str]:
        if self.kind is NodeKind.QUESTION:
            return list(self.answers.values())
        if self.kind is NodeKind.CONDITION:
            return [self.true_child, self.false_child]
        if self.kind is NodeKind.INLAB:
            return [self.child] if self.child else []
        return []

    @property
    def is_evidence(self) -> bool:
        """Question and Condition nodes count toward confirmed evidence."""
        return self.kind in (NodeKind.QUESTION, NodeKind.CONDITION)


@dataclass
class GuidelineTree:
    disease: str
    version: str
    root: str
    nodes: dict[str, GuidelineNode]
    metrics: dict[str, str]  # metric name -> units
    source: str = ""

    def node(self, node_id: str) -> GuidelineNode:
        return self.nodes[node_id]


@dataclass
class Finding:
    value: object  # bool, float/int, or str
    units: Optional[str] = None
    provenance: str = "patient-stated"


FindingSet = dict  # finding key -> Finding


class OutcomeKind(str, Enum):
    NEED_ANSWER = "need_answer"
    NEED_MEASUREMENT = "need_measurement"
    NEED_INLAB = "need_inlab"
    CONCLUDED = "concluded"


@dataclass
class StepOutcome:
    kind: OutcomeKind
    node_id: str
    question: Optional[str] = None
    key: Optional[str] = None
    metric: Optional[str] = None
    provenance: tuple[str, ...] = ()
    test: Optional[str] = None
    diagnosis: Optional[str] = None


@dataclass
class TreeCursor:
    """Root-to-current walk through one tree, plus evidence accounting."""

    tree: GuidelineTree
    node_id: str
    path: list[str] = field(default_factory=list)
    satisfied_evidence: int = 0
    concluded: Optional[str] = None  # diagnosis text once a conclusion is reached

    @classmethod
    def fresh(cls, tree: GuidelineTree) -> "TreeCursor":
        return cls(tree=tree, node_id=tree.root, path=[tree.root])

    @property
    def required_evidence(self) -> int:
        remaining = _remaining_evidence(self.tree, self.node_id,
                                        concluded=self.concluded is not None)
        return self.satisfied_evidence + remaining


# ---------------------------------------------------------------------------
# Parsing and validation
# ---------------------------------------------------------------------------

def parse_guideline(source: str) -> GuidelineTree:
    """Parse DSL text into a validated GuidelineTree.

    Syntax errors carry line/column; semantic defects (dangling child,
    cycle, unknown metric) raise their own exception types naming the
    offending node or id.
    """
    try:
        raw = json.loads(source)
    except json.JSONDecodeError as exc:
        raise GuidelineSyntaxError(exc.msg, exc.lineno, exc.colno) from exc
    if not isinstance(raw, dict):
        raise GuidelineSemanticError("top level must be an object")
    for required in ("disease", "root", "nodes"):
        if required not in raw:
            raise GuidelineSemanticError(f"missing required field {required!r}")

    metrics = dict(raw.get("metrics", {}))
    nodes: dict[str, GuidelineNode] = {}
    for node_id, spec in raw["nodes"].items():
        nodes[node_id] = _parse_node(node_id, spec)

    tree = GuidelineTree(
        disease=raw["disease"],
        version=str(raw.get("version", "1")),
        root=raw["root"],
        nodes=nodes,
        metrics=metrics,
        source=raw.get("source", ""),
    )
    _validate(tree)
    return tree


def _parse_node(node_id: str, spec: dict) -> GuidelineNode:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise GuidelineSemanticError(f"node {node_id!r} missing 'kind'")
    try:
        kind = NodeKind(spec["kind"])
    except ValueError:
        raise GuidelineSemanticError(
            f"node {node_id!r} has unknown kind {spec['kind']!r}") from None

    if kind is NodeKind.QUESTION:
        answers = spec.get("answers")
        if not answers or not isinstance(answers, dict):
            raise GuidelineSemanticError(
                f"question node {node_id!r} needs a non-empty 'answers' map")
        return GuidelineNode(id=node_id, kind=kind, key=spec.get("key", node_id),
                             prompt=spec.get("prompt", ""),
                             answers={str(k).lower(): v for k, v in answers.items()})
    if kind is NodeKind.CONDITION:
        for f in ("metric", "op", "threshold", "true", "false"):
            if f not in spec:
                raise GuidelineSemanticError(
                    f"condition node {node_id!r} missing {f!r}")
        if spec["op"] not in _COMPARATORS:
            raise GuidelineSemanticError(
                f"condition node {node_id!r} has unknown comparator {spec['op']!r}")
        prov = tuple(spec.get("provenance", PROVENANCES))
        for p in prov:
            if p not in PROVENANCES:
                raise GuidelineSemanticError(
                    f"condition node {node_id!r} lists unknown provenance {p!r}")
        return GuidelineNode(id=node_id, kind=kind, metric=spec["metric"],
                             op=spec["op"], threshold=float(spec["threshold"]),
                             units=spec.get("units"), true_child=spec["true"],
                             false_child=spec["false"], provenance=prov)
    if kind is NodeKind.CONCLUSION:
        if "diagnosis" not in spec:
            raise GuidelineSemanticError(
                f"conclusion node {node_id!r} missing 'diagnosis'")
        return GuidelineNode(id=node_id, kind=kind, diagnosis=spec["diagnosis"],
                             weight=float(spec.get("weight", 1.0)))
    # inlab: terminal recommendation when 'child' is absent
    if "test" not in spec:
        raise GuidelineSemanticError(f"inlab node {node_id!r} missing 'test'")
    return GuidelineNode(id=node_id, kind=kind, test=spec["test"],
                         child=spec.get("child"))


def _validate(tree: GuidelineTree) -> None:
    if tree.root not in tree.nodes:
        raise DanglingChildError(f"root id {tree.root!r} is not a declared node")
    for node in tree.nodes.values():
        for child in node.children():
            if child is not None and child not in tree.nodes:
                raise DanglingChildError(
                    f"node {node.id!r} references undeclared child {child!r}")
        if node.kind is NodeKind.CONDITION and node.metric not in tree.metrics:
            raise UnknownMetricError(
                f"condition node {node.id!r} references metric {node.metric!r} "
                f"not in the tree's metric vocabulary")

    # cycle detection: iterative DFS with colors
    WHITE, GREY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in tree.nodes}
    for start in tree.nodes:
        if color[start] != WHITE:
            continue
        stack = [(start, iter(tree.nodes[start].children()))]
        color[start] = GREY
        while stack:
            nid, it = stack[-1]
            advanced = False
            for child in it:
                if child is None:
                    continue
                if color[child] == GREY:
                    raise CycleError(f"cycle detected through node {child!r}")
                if color[child] == WHITE:
                    color[child] = GREY
                    stack.append((child, iter(tree.nodes[child].children())))
                    advanced = True
                    break
            if not advanced:
                color[nid] = BLACK
                stack.pop()


def serialize_guideline(tree: GuidelineTree) -> str:
    """Canonical DSL text; parse(serialize(parse(s))) == parse(s)."""
    nodes = {}
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        if node.kind is NodeKind.QUESTION:
            spec = {"kind": "question", "key": node.key, "prompt": node.prompt,
                    "answers": dict(sorted(node.answers.items()))}
        elif node.kind is NodeKind.CONDITION:
            spec = {"kind": "condition", "metric": node.metric, "op": node.op,
                    "threshold": node.threshold, "units": node.units,
                    "true": node.true_child, "false": node.false_child}
            if node.provenance != PROVENANCES:
                spec["provenance"] = list(node.provenance)
        elif node.kind is NodeKind.CONCLUSION:
            spec = {"kind": "conclusion", "diagnosis": node.diagnosis,
                    "weight": node.weight}
        else:
            spec = {"kind": "inlab", "test": node.test}
            if node.child is not None:
                spec["child"] = node.child
        nodes[node_id] = spec
    doc = {
        "disease": tree.disease,
        "version": tree.version,
        "source": tree.source,
        "metrics": dict(sorted(tree.metrics.items())),
        "root": tree.root,
        "nodes": nodes,
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# Step interpretation
# ---------------------------------------------------------------------------

def _normalize_answer(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    return str(value).strip().lower()


def evaluate_step(cursor: TreeCursor, findings: FindingSet) -> StepOutcome:
    """Advance through every node decidable from `findings`.

    Mutates the cursor only on success; a unit-mismatch error leaves it
    unchanged. A concluded cursor never reopens.
    """
    if cursor.concluded is not None:
        return StepOutcome(OutcomeKind.CONCLUDED, cursor.node_id,
                           diagnosis=cursor.concluded)

    tree = cursor.tree
    node_id = cursor.node_id
    path = list(cursor.path)
    satisfied = cursor.satisfied_evidence
    concluded: Optional[str] = None
    outcome: Optional[StepOutcome] = None

    while outcome is None:
        node = tree.node(node_id)
        if node.kind is NodeKind.CONCLUSION:
            concluded = node.diagnosis
            outcome = StepOutcome(OutcomeKind.CONCLUDED, node_id,
                                  diagnosis=node.diagnosis)
        elif node.kind is NodeKind.QUESTION:
            finding = findings.get(node.key)
            answer = _normalize_answer(finding.value) if finding is not None else None
            if answer is None or answer not in node.answers:
                outcome = StepOutcome(OutcomeKind.NEED_ANSWER, node_id,
                                      question=node.prompt, key=node.key)
            else:
                satisfied += 1
                node_id = node.answers[answer]
                path.append(node_id)
        elif node.kind is NodeKind.CONDITION:
            finding = findings.get(node.metric)
            usable = (finding is not None
                      and finding.provenance in node.provenance
                      and isinstance(finding.value, (int, float))
                      and not isinstance(finding.value, bool))
            if finding is not None and usable and node.units and finding.units \
                    and finding.units != node.units:
                raise UnitMismatchError(
                    f"finding {node.metric!r} has units {finding.units!r}, "
                    f"tree expects {node.units!r}")
            if not usable:
                outcome = StepOutcome(OutcomeKind.NEED_MEASUREMENT, node_id,
                                      metric=node.metric,
                                      provenance=node.provenance)
            else:
                satisfied += 1
                branch = _COMPARATORS[node.op](float(finding.value), node.threshold)
                node_id = node.true_child if branch else node.false_child
                path.append(node_id)
        else:  # inlab
            finding = findings.get(node.test)
            done = finding is not None and finding.provenance == "in-lab"
            if node.child is None or not done:
                outcome = StepOutcome(OutcomeKind.NEED_INLAB, node_id, test=node.test)
            else:
                node_id = node.child
                path.append(node_id)

    cursor.node_id = node_id
    cursor.path = path
    cursor.satisfied_evidence = satisfied
    cursor.concluded = concluded
    return outcome


def _remaining_evidence(tree: GuidelineTree, from_node: str, concluded: bool) -> int:
    """Evidence nodes (Question/Condition) still to pass on the shortest path
    from `from_node` to the tree's own-disease conclusion (any conclusion if
    the tree never concludes its own disease)."""
    if concluded:
        return 0

    def bfs(targets: set[str]) -> Optional[int]:
        start_cost = 1 if tree.node(from_node).is_evidence else 0
        queue = deque([(from_node, start_cost)])
        seen = {from_node}
        while queue:
            nid, cost = queue.popleft()
            if nid in targets:
                return cost
            for child in tree.node(nid).children():
                if child is not None and child not in seen:
                    seen.add(child)
                    step = 1 if tree.node(child).is_evidence else 0
                    queue.append((child, cost + step))
        return None

    own = {nid for nid, n in tree.nodes.items()
           if n.kind is NodeKind.CONCLUSION and n.diagnosis == tree.disease}
    any_conclusion = {nid for nid, n in tree.nodes.items()
                      if n.kind is NodeKind.CONCLUSION}
    for targets in (own, any_conclusion):
        if targets:
            result = bfs(targets)
            if result is not None:
                return result
    return 0


# ---------------------------------------------------------------------------
# Symptom-disease mapping and library retrieval
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiseaseCandidateSeed:
    disease: str
    symptom_similarity: float


@dataclass
class SymptomEntry:
    symptom: str
    diseases: list[str]


class SymptomDiseaseTable:
    """Symptom text -> disease labels, searched by embedding similarity."""

    def __init__(self, entries: Sequence[SymptomEntry], gateway):
        self.entries = list(entries)
        self._gateway = gateway
        if self.entries:
            import numpy as np

            vectors = gateway.embed_texts([e.symptom for e in self.entries])
            matrix = np.asarray(vectors, dtype=np.float64)
            norms = np.linalg.norm(matrix, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            self._matrix = matrix / norms
        else:
            self._matrix = None

    @classmethod
    def load_jsonl(cls, path: str | Path, gateway) -> "SymptomDiseaseTable":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                entries.append(SymptomEntry(symptom=rec["symptom"],
                                            diseases=list(rec["diseases"])))
        return cls(entries, gateway)

    def map_symptoms_to_diseases(self, sym: str, k: int) -> list[DiseaseCandidateSeed]:
        """Top-k diseases by max similarity over the top-k symptom entries."""
        if not self.entries or k < 1:
            return []
        import numpy as np

        qvec = np.asarray(self._gateway.embed_texts([sym])[0], dtype=np.float64)
        norm = np.linalg.norm(qvec)
        if norm > 0:
            qvec = qvec / norm
        sims = self._matrix @ qvec
        order = sorted(range(len(self.entries)), key=lambda i: (-sims[i], i))[:k]
        best: dict[str, float] = {}
        for i in order:
            for disease in self.entries[i].diseases:
                score = float(sims[i])
                if score > best.get(disease, -2.0):
                    best[disease] = score
        ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        return [DiseaseCandidateSeed(disease=d, symptom_similarity=s)
                for d, s in ranked]


@dataclass
class GuidelineRetrieval:
    trees: list[GuidelineTree]
    missing: list[str]


class GuidelineLibrary:
    """Guideline trees keyed by exact disease name; never fabricates."""

    def __init__(self, trees: Sequence[GuidelineTree] = ()):
        self.trees: dict[str, GuidelineTree] = {t.disease: t for t in trees}

    @classmethod
    def load_dir(cls, path: str | Path) -> "GuidelineLibrary":
        lib = cls()
        for file in sorted(Path(path).glob("*.json")):
            lib.add(parse_guideline(file.read_text(encoding="utf-8")))
        return lib

    def add(self, tree: GuidelineTree) -> None:
        self.trees[tree.disease] = tree

    def get(self, disease: str) -> Optional[GuidelineTree]:
        return self.trees.get(disease)

    def retrieve(self, seeds: Sequence[DiseaseCandidateSeed]) -> GuidelineRetrieval:
        trees, missing = [], []
        for seed in seeds:
            tree = self.trees.get(seed.disease)
            if tree is None:
                missing.append(seed.disease)
            else:
                trees.append(tree)
        return GuidelineRetrieval(trees=trees, missing=missing)
