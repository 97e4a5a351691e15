"""Brute-force reference implementations the fast code must match."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import logsumexp

from crowdseq import LabelScheme
from crowdseq.crf import SequencePotentials, sequence_score


def all_sequences(pot: SequencePotentials):
    return itertools.product(range(pot.n_labels), repeat=pot.length)


def brute_log_partition(pot: SequencePotentials) -> float:
    return float(logsumexp([sequence_score(pot, z) for z in all_sequences(pot)]))


def brute_marginals(pot: SequencePotentials) -> tuple[np.ndarray, np.ndarray]:
    L, M = pot.length, pot.n_labels
    logZ = brute_log_partition(pot)
    unary = np.zeros((L, M))
    pairwise = np.zeros((max(L - 1, 0), M, M))
    for z in all_sequences(pot):
        p = np.exp(sequence_score(pot, z) - logZ)
        for t, lab in enumerate(z):
            unary[t, lab] += p
            if t > 0:
                pairwise[t - 1, z[t - 1], lab] += p
    return unary, pairwise


def brute_viterbi(pot: SequencePotentials) -> tuple[int, ...]:
    # ties resolve to the lexicographically smallest sequence
    best, best_z = -np.inf, None
    for z in all_sequences(pot):
        s = sequence_score(pot, z)
        if s > best + 1e-12:
            best, best_z = s, z
    return best_z


def brute_valid(candidates, scheme: LabelScheme) -> list[tuple[int, ...]]:
    out = []
    for z in itertools.product(*candidates):
        if not scheme.initial_allowed[z[0]]:
            continue
        if all(scheme.allowed_transitions[a, b] for a, b in zip(z, z[1:])):
            out.append(z)
    return out


def random_potentials(rng, L: int, M: int, per_step: bool = False) -> SequencePotentials:
    pairwise = rng.normal(size=(L - 1, M, M)) if per_step and L > 1 else rng.normal(size=(M, M))
    return SequencePotentials(unary=rng.normal(size=(L, M)), pairwise=pairwise)
