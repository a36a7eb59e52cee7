"""Redundancy removal inside each functional group.

Two passes: greedy sequence clustering at a fixed identity, then
annotation-level sampling on the summed information content of each
representative's GO closure, with superkingdom quotas.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Mapping, Sequence

from .go_graph import GoDag, annotate_counts
from .records import ProteinRecord

log = logging.getLogger(__name__)

IcTable = dict[str, float]  # term_id -> information content


def lcs_length(a: str, b: str) -> int:
    """Longest common subsequence length, bit-parallel over ``b``.

    Equivalent to the match-count DP (match 1, mismatch 0, gaps 0) but runs
    in O(len(a)) big-integer operations.
    """
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    if m == 0:
        return 0
    masks: dict[str, int] = {}
    for i, ch in enumerate(b):
        masks[ch] = masks.get(ch, 0) | (1 << i)
    full = (1 << m) - 1
    v = full
    for ch in a:
        u = v & masks.get(ch, 0)
        v = ((v + u) | (v - u)) & full
    return m - bin(v).count("1")


def pairwise_identity(a: str, b: str) -> float:
    """Matched residues of the best gap-free-cost global alignment / shorter length."""
    if not a or not b:
        raise ValueError("pairwise_identity needs two non-empty sequences")
    if a == b:
        return 1.0
    return lcs_length(a, b) / min(len(a), len(b))


def kmer_set(seq: str, k: int) -> frozenset[str]:
    return frozenset(seq[i : i + k] for i in range(len(seq) - k + 1))


def shared_kmer_fraction(a: frozenset[str], b: frozenset[str]) -> float:
    if not a or not b:
        return 1.0  # too short to judge; let the alignment decide
    return len(a & b) / min(len(a), len(b))


@dataclass
class Cluster:
    representative: str
    members: list[str] = field(default_factory=list)
    group: str = ""


@dataclass(frozen=True)
class ClusterSettings:
    threshold: float = 0.70
    prefilter: bool = True
    kmer_k: int = 5
    kmer_fraction: float = 0.3


def cluster_group(
    group: Sequence[ProteinRecord],
    threshold: float = 0.70,
    *,
    group_id: str = "",
    prefilter: bool = True,
    kmer_k: int = 5,
    kmer_fraction: float = 0.3,
) -> list[Cluster]:
    """Greedy incremental clustering, longest sequences first.

    Each protein joins the first existing cluster whose representative it
    matches at ``>= threshold`` identity; otherwise it founds a new one.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    order = sorted(group, key=lambda p: (-len(p.sequence), p.accession))
    clusters: list[Cluster] = []
    reps: list[tuple[str, frozenset[str]]] = []
    for p in order:
        kmers = kmer_set(p.sequence, kmer_k) if prefilter else frozenset()
        for cluster, (rep_seq, rep_kmers) in zip(clusters, reps):
            if prefilter and shared_kmer_fraction(kmers, rep_kmers) < kmer_fraction:
                continue
            if pairwise_identity(p.sequence, rep_seq) >= threshold:
                cluster.members.append(p.accession)
                break
        else:
            clusters.append(Cluster(p.accession, [p.accession], group_id))
            reps.append((p.sequence, kmers))
    return clusters


def compute_ic(dag: GoDag, representatives: Iterable[ProteinRecord], base: float = math.e) -> IcTable:
    """IC(g) = -log(count(g) / N), N = representatives annotated in g's namespace.

    Counts are recomputed over ``representatives`` only; zero-count terms
    are left out of the table.
    """
    representatives = list(representatives)
    counted = annotate_counts(dag, representatives)
    per_ns: dict[str, int] = defaultdict(int)
    for p in representatives:
        for ns in {dag[t].namespace for t in p.go_terms if t in dag}:
            per_ns[ns] += 1
    table: IcTable = {}
    for t, node in counted.nodes.items():
        n_ns = per_ns.get(node.namespace, 0)
        if node.propagated_count == 0 or n_ns == 0:
            continue
        # abs() folds the -0.0 of a term shared by every protein
        table[t] = abs(-math.log(node.propagated_count / n_ns, base))
    return table


def protein_functional_ic(p: ProteinRecord, dag: GoDag, ic: Mapping[str, float]) -> float:
    """Sum of IC over the union of a protein's terms and their ancestors."""
    if not p.go_terms:
        raise ValueError(f"{p.accession}: no GO terms")
    return math.fsum(ic.get(t, 0.0) for t in sorted(dag.closure(p.go_terms)))


def round_ic(value: float, places: int = 3) -> Decimal:
    """Half-to-even rounding of the shortest decimal repr of ``value``."""
    return Decimal(repr(value)).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_EVEN)


def sample_by_ic(group: Iterable[ProteinRecord], dag: GoDag, ic: Mapping[str, float]) -> list[ProteinRecord]:
    """Keep one protein (smallest accession) per distinct rounded functional IC."""
    buckets: dict[Decimal, ProteinRecord] = {}
    for p in sorted(group, key=lambda p: p.accession):
        key = round_ic(protein_functional_ic(p, dag, ic))
        buckets.setdefault(key, p)
    return sorted(buckets.values(), key=lambda p: p.accession)


def _largest_remainder(n: int, weights: Mapping[str, float]) -> dict[str, int]:
    total = math.fsum(weights.values())
    if n <= 0 or total <= 0:
        return {k: 0 for k in weights}
    exact = {k: n * w / total for k, w in weights.items()}
    quota = {k: math.floor(v) for k, v in exact.items()}
    left = n - sum(quota.values())
    # remainder ties go to the class with the larger exact share, then by name
    order = sorted(weights, key=lambda k: (-(exact[k] - quota[k]), -exact[k], k))
    for k in order[:left]:
        quota[k] += 1
    return quota


def species_quota_sample(
    candidates: Sequence[ProteinRecord],
    target_n: int,
    global_proportions: Mapping[str, float],
) -> list[ProteinRecord]:
    """Pick ``target_n`` proteins with superkingdom shares matching the corpus.

    Quotas come from largest-remainder apportionment; a class short of
    candidates hands its deficit to the classes that still have some,
    weighted by how many they have left.
    """
    if target_n >= len(candidates):
        return sorted(candidates, key=lambda p: p.accession)
    if abs(math.fsum(global_proportions.values()) - 1.0) > 1e-9:
        raise ValueError("global proportions must sum to 1")
    pools: dict[str, list[ProteinRecord]] = defaultdict(list)
    for p in sorted(candidates, key=lambda p: p.accession):
        pools[p.superkingdom].append(p)
    classes = sorted(set(pools) | set(global_proportions))
    quota = _largest_remainder(target_n, {c: global_proportions.get(c, 0.0) for c in classes})
    taken = {c: 0 for c in classes}
    remaining = target_n
    while remaining > 0:
        granted = 0
        for c in classes:
            n = min(quota.get(c, 0), len(pools[c]) - taken[c])
            taken[c] += n
            granted += n
        remaining -= granted
        if remaining <= 0:
            break
        spare = {c: len(pools[c]) - taken[c] for c in classes if len(pools[c]) > taken[c]}
        if not spare:
            break
        quota = _largest_remainder(remaining, spare)
    chosen = [p for c in classes for p in pools[c][: taken[c]]]
    return sorted(chosen, key=lambda p: p.accession)


def superkingdom_proportions(proteins: Iterable[ProteinRecord]) -> dict[str, float]:
    counts: dict[str, int] = defaultdict(int)
    for p in proteins:
        counts[p.superkingdom] += 1
    total = sum(counts.values())
    if not total:
        return {}
    return {k: v / total for k, v in sorted(counts.items())}


# Full pass ------------------------------------------------------------------


@dataclass
class DedupResult:
    proteins: list[ProteinRecord]
    provenance: list[dict]
    clusters: dict[str, list[Cluster]]
    ic: IcTable


def _cluster_task(args):
    group_id, members, settings = args
    return group_id, cluster_group(
        members,
        settings.threshold,
        group_id=group_id,
        prefilter=settings.prefilter,
        kmer_k=settings.kmer_k,
        kmer_fraction=settings.kmer_fraction,
    )


def deduplicate(
    groups: Mapping[str, Sequence[ProteinRecord]],
    dag: GoDag,
    settings: ClusterSettings = ClusterSettings(),
    per_group_target: int | None = None,
    ic_base: float = math.e,
    workers: int = 1,
) -> DedupResult:
    """Cluster each group, compute IC over all representatives, then sample."""
    tasks = [(g, list(groups[g]), settings) for g in sorted(groups)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            clustered = dict(pool.map(_cluster_task, tasks))
    else:
        clustered = dict(map(_cluster_task, tasks))

    by_acc = {p.accession: p for members in groups.values() for p in members}
    rep_ids = sorted({c.representative for cs in clustered.values() for c in cs})
    reps = [by_acc[a] for a in rep_ids]
    ic = compute_ic(dag, reps, base=ic_base)
    proportions = superkingdom_proportions(reps)

    selected: dict[str, ProteinRecord] = {}
    provenance = []
    for g in sorted(clustered):
        clusters = clustered[g]
        sizes = {c.representative: len(c.members) for c in clusters}
        group_reps = [by_acc[c.representative] for c in clusters if by_acc[c.representative].go_terms]
        kept = sample_by_ic(group_reps, dag, ic)
        if per_group_target is not None:
            kept = species_quota_sample(kept, per_group_target, proportions)
        for p in kept:
            selected[p.accession] = p
            provenance.append(
                {
                    "accession": p.accession,
                    "group": g,
                    "cluster_representative": p.accession,
                    "cluster_size": sizes[p.accession],
                    "functional_ic": round(protein_functional_ic(p, dag, ic), 6),
                }
            )
    log.info("dedup: %d groups, %d representatives, %d kept", len(groups), len(reps), len(selected))
    return DedupResult(
        proteins=sorted(selected.values(), key=lambda p: p.accession),
        provenance=provenance,
        clusters=clustered,
        ic=ic,
    )
