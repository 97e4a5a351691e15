"""Single-truth aggregation baselines: token majority vote and Dawid-Skene.

Both treat tokens independently, so their output may violate BIO adjacency;
downstream training consumes it as-is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .crf import CrfModel, DEFAULT_TEMPLATES, TrainOptions, build_model, optimize
from .types import CrowdDataset, CrowdInstance, LabelSeq


def mv_token(instance: CrowdInstance) -> LabelSeq:
    """Per-position plurality label; ties resolve to the lowest label index."""
    if not instance.annotations:
        raise ValueError("no annotations to vote over")
    out = []
    for j in range(len(instance.tokens)):
        votes = np.bincount([labels[j] for labels in instance.annotations.values()])
        out.append(int(votes.argmax()))
    return tuple(out)


@dataclass
class DsModel:
    """Token-level annotator confusions (truth by assigned) and class prior."""

    roster: tuple[str, ...]
    confusion: np.ndarray  # (K, M, M)
    prior: np.ndarray  # (M,)
    loglik_history: list[float]


def _token_table(ds: CrowdDataset) -> np.ndarray:
    """(T, K) assigned labels over all corpus positions, -1 where absent."""
    k = len(ds.roster)
    rows = []
    for inst in ds.instances:
        block = np.full((len(inst.tokens), k), -1, dtype=np.intp)
        for ki, ann_id in enumerate(ds.roster):
            labels = inst.annotations.get(ann_id)
            if labels is not None:
                block[:, ki] = labels
        rows.append(block)
    return np.concatenate(rows, axis=0)


def ds_fit(
    ds: CrowdDataset, iters: int = 100, tol: float = 1e-8, smoothing: float = 1.0
) -> tuple[DsModel, list[np.ndarray]]:
    """Dawid-Skene estimation over tokens as independent items.

    Posteriors start from normalized vote counts; each round refits the prior
    and per-annotator confusion tables from smoothed posterior-weighted
    counts and then recomputes token posteriors.  The recorded history is the
    objective each round maximizes: marginal token log-likelihood plus, when
    ``smoothing`` > 0, the log-density of the implied Dirichlet prior on the
    tables.  That sum is non-decreasing; the raw likelihood alone need not
    be.  The loop stops early once the change drops below ``tol``.
    """
    if not ds.roster:
        raise ValueError("dataset has no annotator roster")
    m = ds.scheme.size
    k = len(ds.roster)
    a = _token_table(ds)
    t_total = a.shape[0]
    if (a < 0).all(axis=1).any():
        raise ValueError("some token has no annotations")

    post = np.zeros((t_total, m))
    for ki in range(k):
        mask = a[:, ki] >= 0
        post[mask, a[mask, ki]] += 1.0
    post /= post.sum(axis=1, keepdims=True)

    history: list[float] = []
    prior = np.full(m, 1.0 / m)
    confusion = np.zeros((k, m, m))
    for _ in range(max(1, iters)):
        # maximization from current posteriors
        prior = (post.sum(axis=0) + smoothing) / (t_total + smoothing * m)
        for ki in range(k):
            mask = a[:, ki] >= 0
            counts = np.zeros((m, m))
            np.add.at(counts.T, a[mask, ki], post[mask])
            denom = post[mask].sum(axis=0)
            confusion[ki] = (counts + smoothing) / (denom[:, None] + smoothing * m)
        # posterior step, and the objective at the parameters just fitted
        with np.errstate(divide="ignore"):
            logpost = np.tile(np.log(prior), (t_total, 1))
            for ki in range(k):
                mask = a[:, ki] >= 0
                logpost[mask] += np.log(confusion[ki][:, a[mask, ki]]).T
        norm = logsumexp(logpost, axis=1)
        value = float(norm.sum())
        if smoothing > 0:
            value += smoothing * float(np.log(prior).sum() + np.log(confusion).sum())
        history.append(value)
        post = np.exp(logpost - norm[:, None])
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            break

    model = DsModel(tuple(ds.roster), confusion, prior, history)
    splits = np.cumsum([len(inst.tokens) for inst in ds.instances])[:-1]
    return model, [p.copy() for p in np.split(post, splits)]


def ds_decode(model: DsModel, instance: CrowdInstance) -> LabelSeq:
    """Per-token MAP truth under a fitted model (lowest index on ties)."""
    logp = np.tile(np.log(model.prior), (len(instance.tokens), 1))
    for ann_id, labels in instance.annotations.items():
        ki = model.roster.index(ann_id)
        y = np.asarray(labels, dtype=np.intp)
        with np.errstate(divide="ignore"):
            logp += np.log(model.confusion[ki][:, y]).T
    return tuple(int(row.argmax()) for row in logp)


def aggregate_labels(
    ds: CrowdDataset, method: str, ds_iters: int = 100, ds_tol: float = 1e-8
) -> list[LabelSeq]:
    """One label sequence per instance by the named baseline (``mv`` or ``ds``)."""
    if method == "mv":
        return [mv_token(inst) for inst in ds.instances]
    if method == "ds":
        model, _ = ds_fit(ds, iters=ds_iters, tol=ds_tol)
        return [ds_decode(model, inst) for inst in ds.instances]
    raise ValueError(f"unknown aggregation method: {method!r}")


def wrapper_train(
    ds: CrowdDataset,
    method: str = "mv",
    templates=DEFAULT_TEMPLATES,
    opts: TrainOptions = TrainOptions(),
    ds_iters: int = 100,
    ds_tol: float = 1e-8,
) -> CrfModel:
    """Aggregate a single truth per instance, then fit a plain tagger on it."""
    seqs = aggregate_labels(ds, method, ds_iters, ds_tol)
    model = build_model(ds.scheme, (inst.tokens for inst in ds.instances), templates)
    data = [(inst.tokens, z, 1.0) for inst, z in zip(ds.instances, seqs)]
    return optimize(model, data, opts).model
