"""Candidate ground-truth construction from crowd agreement.

Crowd votes at each position induce a candidate label set: strong consensus
keeps only the plurality label(s), moderate agreement keeps the labels the
crowd actually used, weak agreement keeps the whole inventory.  The valid
sequences over those sets are the paths respecting the scheme's transition
constraints (plus "no I- at the start" under BIO).  Enumeration is exact;
when the valid count exceeds the cap, exactly the cap-many sequences with
the highest per-position plurality agreement are kept, ties resolved in
lexicographic label-index order.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .types import CrowdInstance, LabelScheme, LabelSeq


@dataclass(frozen=True)
class PositionConsistency:
    """Vote summary for one position."""

    labels: tuple[int, ...]  # distinct labels used, ascending
    counts: tuple[int, ...]  # votes per label, aligned with ``labels``
    consistency: Fraction  # plurality count over distinct-label count

    @property
    def top_labels(self) -> tuple[int, ...]:
        top = max(self.counts)
        return tuple(l for l, c in zip(self.labels, self.counts) if c == top)


def label_consistency(instance: CrowdInstance, j: int) -> PositionConsistency:
    """Vote summary at position j.

    The consistency ratio divides the plurality count by the number of
    distinct labels used, so with many annotators in agreement it can exceed
    one (it reaches the annotator count under unanimity).
    """
    votes: dict[int, int] = {}
    for labels in instance.annotations.values():
        votes[labels[j]] = votes.get(labels[j], 0) + 1
    if not votes:
        raise ValueError(f"no annotations at position {j}")
    labs = tuple(sorted(votes))
    counts = tuple(votes[l] for l in labs)
    return PositionConsistency(labs, counts, Fraction(max(counts), len(labs)))


def consistency_profile(instance: CrowdInstance) -> tuple[PositionConsistency, ...]:
    return tuple(label_consistency(instance, j) for j in range(len(instance.tokens)))


def candidate_labels(
    entry: PositionConsistency, scheme: LabelScheme, hi: float, lo: float
) -> tuple[int, ...]:
    """Candidate truth labels from one position's vote summary.

    Consistency at or above ``hi`` keeps the plurality labels (all of them on
    a tie); strictly between the thresholds keeps every label the crowd used;
    at or below ``lo`` every scheme label is a candidate.
    """
    if not hi > lo >= 0:
        raise ValueError("thresholds must satisfy hi > lo >= 0")
    if entry.consistency >= hi:
        return entry.top_labels
    if entry.consistency > lo:
        return entry.labels
    return tuple(range(scheme.size))


def candidate_sets(
    instance: CrowdInstance,
    scheme: LabelScheme,
    hi: float,
    lo: float,
    normalize_by: int | None = None,
) -> tuple[tuple[int, ...], ...]:
    """Per-position candidate sets for one instance.

    With ``normalize_by`` set (typically the roster size), consistency is
    divided by it before the threshold comparison.  An instance nobody
    labeled admits every label everywhere.
    """
    full = tuple(range(scheme.size))
    if not instance.annotations:
        return tuple(full for _ in instance.tokens)
    sets = []
    for j in range(len(instance.tokens)):
        entry = label_consistency(instance, j)
        if normalize_by:
            entry = PositionConsistency(
                entry.labels, entry.counts, entry.consistency / normalize_by
            )
        sets.append(candidate_labels(entry, scheme, hi, lo))
    return tuple(sets)


def count_valid(candidates, scheme: LabelScheme) -> int:
    """Exact number of constraint-respecting paths through the candidate sets."""
    allowed = scheme.allowed_transitions
    init = scheme.initial_allowed
    counts = {s: 1 for s in candidates[0] if init[s]}
    for j in range(1, len(candidates)):
        nxt: dict[int, int] = {}
        for s in candidates[j]:
            total = sum(c for sp, c in counts.items() if allowed[sp, s])
            if total:
                nxt[s] = total
        counts = nxt
    return sum(counts.values())


@dataclass(frozen=True)
class ValidLattice:
    """Constraint-pruned candidate sequences for one instance."""

    candidates: tuple[tuple[int, ...], ...]  # as requested
    final_candidates: tuple[tuple[int, ...], ...]  # after any widening
    states: tuple[tuple[int, ...], ...]  # per position, labels on some full valid path
    transitions: tuple[tuple[tuple[int, int], ...], ...]  # admitted arcs per adjacent pair
    sequences: tuple[LabelSeq, ...]
    capped: bool
    n_valid: int  # exact count over final_candidates
    widened: tuple[int, ...]  # positions widened to the full label set

    @property
    def n_unpruned(self) -> int:
        out = 1
        for s in self.final_candidates:
            out *= len(s)
        return out


def _forward_sets(cand, allowed, init):
    fwd = [set(s for s in cand[0] if init[s])]
    for j in range(1, len(cand)):
        prev = fwd[-1]
        fwd.append({s for s in cand[j] if any(allowed[p, s] for p in prev)})
    return fwd


def enumerate_valid(
    instance: CrowdInstance,
    candidates,
    scheme: LabelScheme,
    cap: int = 5000,
) -> ValidLattice:
    """All valid sequences over the candidate sets, agreement-capped.

    If constraints eliminate every path, the first blocked position is
    widened to the full label set and the construction is retried (each
    position at most once); a position blocked after its own widening is an
    error.
    """
    if cap < 1:
        raise ValueError("cap must be at least 1")
    cand = [tuple(c) for c in candidates]
    L = len(cand)
    if L != len(instance.tokens):
        raise ValueError("candidate sets do not match the token sequence")
    if any(not c for c in cand):
        raise ValueError("empty candidate set")
    allowed = scheme.allowed_transitions
    init = scheme.initial_allowed
    full = tuple(range(scheme.size))
    requested = tuple(cand)
    widened: list[int] = []
    while True:
        fwd = _forward_sets(cand, allowed, init)
        blocked = next((j for j, f in enumerate(fwd) if not f), None)
        if blocked is None:
            break
        if blocked in widened:
            raise ValueError(f"constraints eliminate every candidate at position {blocked}")
        widened.append(blocked)
        cand[blocked] = full

    # keep only states lying on at least one complete valid path
    bwd = [set() for _ in range(L)]
    bwd[L - 1] = fwd[L - 1]
    for j in range(L - 2, -1, -1):
        bwd[j] = {s for s in fwd[j] if any(allowed[s, n] for n in bwd[j + 1])}
    states = tuple(tuple(sorted(bwd[j])) for j in range(L))
    succ = [
        {a: tuple(b for b in states[j + 1] if allowed[a, b]) for a in states[j]}
        for j in range(L - 1)
    ]
    arcs = tuple(
        tuple((a, b) for a in states[j] for b in succ[j][a]) for j in range(L - 1)
    )
    n_valid = count_valid(cand, scheme)

    if n_valid <= cap:
        seqs: list[LabelSeq] = []
        prefix: list[int] = []

        def walk(j):
            options = states[0] if j == 0 else succ[j - 1][prefix[-1]]
            for s in options:
                prefix.append(s)
                if j + 1 == L:
                    seqs.append(tuple(prefix))
                else:
                    walk(j + 1)
                prefix.pop()

        walk(0)
        return ValidLattice(
            requested, tuple(cand), states, arcs, tuple(seqs), False, n_valid, tuple(widened)
        )

    # over the cap: keep exactly the top sequences by plurality agreement
    top: list[set[int]] = []
    for j in range(L):
        if instance.annotations:
            top.append(set(label_consistency(instance, j).top_labels))
        else:
            top.append(set())

    # dist[j][s]: suffix agreement-score distribution (score -> path count)
    # for valid suffixes starting with label s at position j
    dist: list[dict[int, dict[int, int]]] = [dict() for _ in range(L)]
    for s in states[L - 1]:
        dist[L - 1][s] = {int(s in top[L - 1]): 1}
    for j in range(L - 2, -1, -1):
        for s in states[j]:
            a = int(s in top[j])
            d: dict[int, int] = {}
            for s2 in succ[j][s]:
                for v, c in dist[j + 1][s2].items():
                    d[v + a] = d.get(v + a, 0) + c
            dist[j][s] = d

    total_by_score: dict[int, int] = {}
    for s in states[0]:
        for v, c in dist[0][s].items():
            total_by_score[v] = total_by_score.get(v, 0) + c

    seqs = []
    prefix = []

    def collect(j, need, limit):
        options = states[0] if j == 0 else succ[j - 1][prefix[-1]]
        for s in options:
            if len(seqs) >= limit:
                return
            if not dist[j][s].get(need):
                continue
            prefix.append(s)
            if j + 1 == L:
                seqs.append(tuple(prefix))
            else:
                collect(j + 1, need - int(s in top[j]), limit)
            prefix.pop()

    for v in sorted(total_by_score, reverse=True):
        if len(seqs) >= cap:
            break
        collect(0, v, cap)
    return ValidLattice(
        requested, tuple(cand), states, arcs, tuple(seqs), True, n_valid, tuple(widened)
    )
