"""Gene Ontology DAG: OBO parsing, protein counts and depth-aware pruning.

Pruning turns the ontology into a set of functional grouping nodes. A node
is kept when its protein count clears a depth-scaled minimum support, or
when the protein counts of its children are so uneven that splitting it
would strand the small children.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, TextIO

from .records import ProteinRecord

log = logging.getLogger(__name__)

NAMESPACES = ("biological_process", "molecular_function", "cellular_component")


class OboParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CycleError(ValueError):
    def __init__(self, child: str, parent: str):
        super().__init__(f"is_a cycle through edge {child} -> {parent}")
        self.edge = (child, parent)


class PruningConfigError(ValueError):
    def __init__(self, failing_roots: list[str]):
        super().__init__(
            "no GO term meets minimum support; failing roots: " + ", ".join(failing_roots)
        )
        self.failing_roots = failing_roots


@dataclass
class GoNode:
    term_id: str
    name: str = ""
    namespace: str = ""
    parents: set[str] = field(default_factory=set)
    children: set[str] = field(default_factory=set)
    direct_count: int = 0
    propagated_count: int = 0
    depth: int = 0


@dataclass
class AnnotationReport:
    n_proteins: int = 0
    n_annotated: int = 0
    unresolved: Counter = field(default_factory=Counter)


class GoDag:
    """is_a-only ontology graph. Treat as read-only once counts are attached."""

    def __init__(self, nodes: Mapping[str, GoNode]):
        self.nodes: dict[str, GoNode] = dict(nodes)
        self.report = AnnotationReport()
        self._ancestors: dict[str, frozenset[str]] = {}

    def __contains__(self, term_id: str) -> bool:
        return term_id in self.nodes

    def __getitem__(self, term_id: str) -> GoNode:
        return self.nodes[term_id]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def roots(self) -> list[str]:
        return sorted(t for t, n in self.nodes.items() if not n.parents)

    def ancestors(self, term_id: str) -> frozenset[str]:
        """Strict is_a ancestors of a term."""
        cached = self._ancestors.get(term_id)
        if cached is not None:
            return cached
        seen: set[str] = set()
        stack = list(self.nodes[term_id].parents)
        while stack:
            t = stack.pop()
            if t not in seen:
                seen.add(t)
                stack.extend(self.nodes[t].parents)
        result = frozenset(seen)
        self._ancestors[term_id] = result
        return result

    def closure(self, terms: Iterable[str]) -> set[str]:
        """Resolvable terms plus all their ancestors; unknown ids are dropped."""
        out: set[str] = set()
        for t in terms:
            if t in self.nodes:
                out.add(t)
                out |= self.ancestors(t)
        return out

    def descendants(self, term_id: str) -> set[str]:
        seen: set[str] = set()
        stack = list(self.nodes[term_id].children)
        while stack:
            t = stack.pop()
            if t not in seen:
                seen.add(t)
                stack.extend(self.nodes[t].children)
        return seen

    def copy(self) -> "GoDag":
        nodes = {
            t: replace(n, parents=set(n.parents), children=set(n.children))
            for t, n in self.nodes.items()
        }
        return GoDag(nodes)


# Parsing ------------------------------------------------------------------


def parse_obo(stream: TextIO | Iterable[str]) -> GoDag:
    """Parse OBO 1.2/1.4 text, keeping non-obsolete [Term] stanzas and is_a edges."""
    stanzas: list[tuple[int, dict]] = []
    current: dict | None = None
    in_term = False
    default_ns = ""
    for lineno, raw in enumerate(stream, 1):
        line = raw.strip()
        if not line or line.startswith("!"):
            continue
        if line.startswith("[") and line.endswith("]"):
            in_term = line == "[Term]"
            current = {"is_a": [], "obsolete": False} if in_term else None
            if in_term:
                stanzas.append((lineno, current))
            continue
        if ":" not in line:
            if in_term:
                raise OboParseError(f"malformed tag-value line {line!r}", lineno)
            continue
        tag, _, value = line.partition(":")
        value = value.strip()
        # trailing '! comment' and {qualifiers}
        if " !" in value:
            value = value.split(" !", 1)[0].strip()
        if current is None:
            if tag == "default-namespace":
                default_ns = value
            continue
        if tag == "id":
            current["id"] = value
        elif tag == "name":
            current["name"] = value
        elif tag == "namespace":
            current["namespace"] = value
        elif tag == "is_a":
            current["is_a"].append(value.split()[0])
        elif tag == "is_obsolete":
            current["obsolete"] = value.lower() == "true"

    nodes: dict[str, GoNode] = {}
    for lineno, st in stanzas:
        if "id" not in st:
            raise OboParseError("[Term] stanza without id", lineno)
        if st["obsolete"]:
            continue
        if st["id"] in nodes:
            raise OboParseError(f"duplicate term id {st['id']}", lineno)
        nodes[st["id"]] = GoNode(
            term_id=st["id"],
            name=st.get("name", ""),
            namespace=st.get("namespace", default_ns),
            parents=set(st["is_a"]),
        )
    for t, node in nodes.items():
        dangling = {p for p in node.parents if p not in nodes}
        if dangling:
            log.warning("%s: dropping is_a edges to unknown/obsolete terms %s", t, sorted(dangling))
            node.parents -= dangling
        for p in node.parents:
            nodes[p].children.add(t)
    _check_acyclic(nodes)
    _assign_depths(nodes)
    return GoDag(nodes)


def _check_acyclic(nodes: Mapping[str, GoNode]) -> None:
    white, grey, black = 0, 1, 2
    color = dict.fromkeys(nodes, white)
    for start in sorted(nodes):
        if color[start] != white:
            continue
        color[start] = grey
        stack = [(start, iter(sorted(nodes[start].parents)))]
        while stack:
            t, it = stack[-1]
            p = next(it, None)
            if p is None:
                color[t] = black
                stack.pop()
            elif color[p] == grey:
                raise CycleError(t, p)
            elif color[p] == white:
                color[p] = grey
                stack.append((p, iter(sorted(nodes[p].parents))))


def _assign_depths(nodes: Mapping[str, GoNode]) -> None:
    queue = deque()
    for t, n in nodes.items():
        if not n.parents:
            n.depth = 0
            queue.append(t)
        else:
            n.depth = -1
    while queue:
        t = queue.popleft()
        for c in nodes[t].children:
            if nodes[c].depth == -1:
                nodes[c].depth = nodes[t].depth + 1
                queue.append(c)


# Counts -------------------------------------------------------------------


def annotate_counts(dag: GoDag, proteins: Iterable[ProteinRecord]) -> GoDag:
    """Return a copy of ``dag`` with direct and propagated protein counts.

    A protein adds at most 1 to any term, however many of its annotations
    share that term as an ancestor. Unknown term ids land in ``dag.report``.
    """
    out = dag.copy()
    report = AnnotationReport()
    for node in out.nodes.values():
        node.direct_count = 0
        node.propagated_count = 0
    for p in proteins:
        report.n_proteins += 1
        direct = set()
        for t in p.go_terms:
            if t in out.nodes:
                direct.add(t)
            else:
                report.unresolved[t] += 1
        if direct:
            report.n_annotated += 1
        for t in direct:
            out.nodes[t].direct_count += 1
        for t in out.closure(direct):
            out.nodes[t].propagated_count += 1
    out.report = report
    return out


# Pruning ------------------------------------------------------------------


@dataclass(frozen=True)
class PruningParams:
    total_count: int
    lambda_: float = 0.001
    beta: float = 0.5
    tau0: float = 10.0
    alpha: float = 0.9

    def __post_init__(self):
        if self.lambda_ <= 0:
            raise ValueError("lambda must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.tau0 <= 1:
            raise ValueError("tau0 must be > 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.total_count < 1:
            raise ValueError("total_count must be >= 1")


class RetentionRule(str, enum.Enum):
    SUPPORT = "support"
    IMBALANCE = "imbalance"


def min_support(depth: int, params: PruningParams) -> float:
    return params.lambda_ * params.total_count * (1 + params.beta * depth)


def imbalance_threshold(depth: int, params: PruningParams) -> float:
    return params.tau0 * params.alpha**depth


def imbalance_ratio(node: GoNode | str, dag: GoDag) -> float | None:
    """max/min propagated count over children with non-zero counts.

    None when fewer than two children carry proteins: the ratio is
    undefined and the node is not considered imbalanced.
    """
    if isinstance(node, str):
        node = dag[node]
    counts = [dag[c].propagated_count for c in node.children]
    counts = [c for c in counts if c > 0]
    if len(counts) <= 1:
        return None
    return max(counts) / min(counts)


def prune(dag: GoDag, params: PruningParams) -> dict[str, RetentionRule]:
    """Select grouping nodes by a top-down walk from each root.

    Returns retained term id -> the rule that kept it. At each node the
    imbalance test runs first and, when it fires, stops the descent. Otherwise
    the walk continues into every child meeting its own support; a node with
    no such child is kept if it meets support itself.
    """
    retained: dict[str, RetentionRule] = {}
    visited: set[str] = set()

    def supported(t: str) -> bool:
        n = dag[t]
        return n.propagated_count >= min_support(n.depth, params)

    def visit(t: str) -> None:
        if t in visited:
            return
        visited.add(t)
        node = dag[t]
        ratio = imbalance_ratio(node, dag)
        if ratio is not None and ratio > imbalance_threshold(node.depth, params):
            retained[t] = RetentionRule.IMBALANCE
            return
        qualifying = [c for c in sorted(node.children) if supported(c)]
        if qualifying:
            for c in qualifying:
                visit(c)
        elif supported(t):
            retained[t] = RetentionRule.SUPPORT

    failing = []
    for root in dag.roots:
        if dag[root].propagated_count == 0:
            continue
        before = len(retained)
        visit(root)
        if len(retained) == before and not any(r in retained for r in dag.descendants(root)):
            failing.append(root)
    if not retained:
        raise PruningConfigError(failing or dag.roots)
    for root in failing:
        log.warning("root %s yields no grouping node under current parameters", root)
    return dict(sorted(retained.items()))


def group_proteins(
    retained: Iterable[str], dag: GoDag, proteins: Iterable[ProteinRecord]
) -> tuple[dict[str, list[ProteinRecord]], list[ProteinRecord]]:
    """Assign proteins to every retained term they reach by is_a closure.

    Returns (groups, ungrouped); groups are keyed by term id in sorted
    order and each member list is sorted by accession.
    """
    keep = set(retained)
    groups: dict[str, list[ProteinRecord]] = {t: [] for t in sorted(keep)}
    ungrouped = []
    for p in sorted(proteins, key=lambda p: p.accession):
        hit = dag.closure(p.go_terms) & keep
        if not hit:
            ungrouped.append(p)
        for t in hit:
            groups[t].append(p)
    return groups, ungrouped


def group_records(
    rules: Mapping[str, RetentionRule], dag: GoDag, groups: Mapping[str, list[ProteinRecord]]
) -> list[dict]:
    """Retained-groups JSONL rows."""
    rows = []
    for t in sorted(rules):
        node = dag[t]
        members = groups.get(t, [])
        rows.append(
            {
                "term_id": t,
                "name": node.name,
                "namespace": node.namespace,
                "depth": node.depth,
                "count": len(members),
                "rule": rules[t].value,
                "protein_ids": [p.accession for p in members],
            }
        )
    return rows
