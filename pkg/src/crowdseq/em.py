"""Joint estimation of the tagger and the annotator reliability tables.

Alternates a posterior step (weights over each instance's candidate truth
sequences, combining the annotator factors with the tagger's sequence
probabilities) with a maximization step (a warm-started, iteration-capped
tagger refit on the posterior-weighted candidates, plus closed-form
smoothed updates of the reliability tables).  Candidate lattices depend only
on the crowd labels, so they are built once and reused across iterations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .annotators import (
    AnnotatorParams,
    bos_context,
    params_from_counts,
    resolve_mentions,
    sample_init_params,
)
from .crf import (
    CrfModel,
    DEFAULT_TEMPLATES,
    FeatureTemplate,
    TrainOptions,
    TrainResult,
    build_model,
    extract_features,
    log_partition,
    optimize,
    sequence_scores,
)
from .lattice import ValidLattice, candidate_sets, enumerate_valid
from .types import CrowdDataset, LabelSeq, validate_dataset


@dataclass(frozen=True)
class EmConfig:
    """Knobs for the alternating estimation loop.

    ``consistency_hi`` defaults to half the roster size and ``consistency_lo``
    to one half; with ``normalize_consistency`` the agreement ratio is first
    divided by the roster size and the defaults become 1/2 and 1/(2K).
    """

    max_iters: int = 20
    rel_tol: float = 1e-4
    consistency_hi: float | None = None
    consistency_lo: float | None = None
    normalize_consistency: bool = False
    lattice_cap: int = 5000
    smoothing: float = 1.0
    l2_penalty: float = 1.0
    seed: int = 0
    templates: tuple[FeatureTemplate, ...] = DEFAULT_TEMPLATES
    init_max_iter: int = 100
    inner_max_iter: int = 25
    opt_tol: float = 1e-5

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be nonnegative")
        if self.lattice_cap < 1:
            raise ValueError("lattice_cap must be at least 1")
        if self.smoothing < 0:
            raise ValueError("smoothing must be nonnegative")

    def thresholds(self, roster_size: int) -> tuple[float, float]:
        if self.normalize_consistency:
            hi = 0.5 if self.consistency_hi is None else self.consistency_hi
            lo = 0.5 / roster_size if self.consistency_lo is None else self.consistency_lo
        else:
            hi = roster_size / 2 if self.consistency_hi is None else self.consistency_hi
            lo = 0.5 if self.consistency_lo is None else self.consistency_lo
        return hi, lo


@dataclass
class _AnnotatorView:
    """One annotator's labels on one instance, with precomputed contexts."""

    index: int  # roster position
    labels: np.ndarray  # (L,)
    ctx: np.ndarray  # (L,) context label; BOS slot for the first, link label for mentions
    is_mention: np.ndarray  # (L,) bool


@dataclass
class _InstanceView:
    z: np.ndarray  # (S, L) candidate truth sequences
    annotators: list[_AnnotatorView]


@dataclass
class EmState:
    """Mutable training state; single-owner, not thread-safe."""

    cfg: EmConfig
    crf: CrfModel
    annotators: AnnotatorParams
    lattices: tuple[ValidLattice, ...]
    posteriors: list[np.ndarray] | None
    iteration: int
    loglik_history: list[float]
    views: list[_InstanceView] = field(repr=False, default_factory=list)
    last_train: TrainResult | None = field(repr=False, default=None)


def _build_views(ds: CrowdDataset, lattices) -> list[_InstanceView]:
    m = ds.scheme.size
    bos = bos_context(m)
    views = []
    for inst, lat in zip(ds.instances, lattices):
        z = np.asarray(lat.sequences, dtype=np.intp)
        links = resolve_mentions(inst.tokens)
        avs = []
        for ki, ann_id in enumerate(ds.roster):
            labels = inst.annotations.get(ann_id)
            if labels is None:
                continue
            y = np.asarray(labels, dtype=np.intp)
            prev = np.empty(y.size, dtype=np.intp)
            prev[0] = bos
            prev[1:] = y[:-1]
            is_mention = np.array([l is not None for l in links])
            link_idx = np.array([l if l is not None else 0 for l in links], dtype=np.intp)
            ctx = np.where(is_mention, y[link_idx], prev)
            avs.append(_AnnotatorView(ki, y, ctx, is_mention))
        views.append(_InstanceView(z, avs))
    return views


def _view_factor(params: AnnotatorParams, av: _AnnotatorView) -> np.ndarray:
    """(L, M) log-probability of the annotator's label per candidate truth label."""
    local_rows = params.local[av.index][av.ctx, :, av.labels]
    mention_rows = params.mention[av.index][av.ctx, :, av.labels]
    with np.errstate(divide="ignore"):
        return np.log(np.where(av.is_mention[:, None], mention_rows, local_rows))


def initialize(ds: CrowdDataset, cfg: EmConfig) -> EmState:
    """Lattices, Dirichlet reliability tables, and a tagger fit on one annotator.

    The seed fixes the tables and the uniformly chosen annotator whose labels
    train the initial tagger; the feature inventory covers the whole corpus.
    """
    problems = validate_dataset(ds)
    if problems:
        raise ValueError("invalid dataset: " + "; ".join(problems[:5]))
    if not ds.roster:
        raise ValueError("dataset has no annotator roster")
    k = len(ds.roster)
    hi, lo = cfg.thresholds(k)
    norm = k if cfg.normalize_consistency else None
    lattices = tuple(
        enumerate_valid(
            inst, candidate_sets(inst, ds.scheme, hi, lo, normalize_by=norm), ds.scheme, cfg.lattice_cap
        )
        for inst in ds.instances
    )
    params = sample_init_params(ds.roster, ds.scheme.size, [cfg.seed, 0])
    rng = np.random.default_rng([cfg.seed, 1])
    with_data = [a for a in ds.roster if any(a in inst.annotations for inst in ds.instances)]
    if not with_data:
        raise ValueError("no annotator labeled any instance")
    chosen = with_data[int(rng.integers(len(with_data)))]
    model = build_model(ds.scheme, (inst.tokens for inst in ds.instances), cfg.templates)
    seed_data = [
        (inst.tokens, inst.annotations[chosen], 1.0)
        for inst in ds.instances
        if chosen in inst.annotations
    ]
    opts = TrainOptions(max_iter=cfg.init_max_iter, tol=cfg.opt_tol, l2=cfg.l2_penalty)
    model = optimize(model, seed_data, opts).model
    state = EmState(cfg, model, params, lattices, None, 0, [])
    state.views = _build_views(ds, lattices)
    return state


def e_step(state: EmState, ds: CrowdDataset) -> list[np.ndarray]:
    """Posterior weight of every candidate truth sequence, per instance.

    Weights multiply each present annotator's label likelihood with the
    tagger's sequence probability and normalize over the lattice.
    """
    out = []
    for inst, view in zip(ds.instances, state.views):
        pot = extract_features(state.crf, inst.tokens)
        logw = sequence_scores(pot, view.z) - log_partition(pot)
        pos = np.arange(view.z.shape[1])[None, :]
        for av in view.annotators:
            phi = _view_factor(state.annotators, av)
            logw = logw + phi[pos, view.z].sum(axis=1)
        logw -= logsumexp(logw)
        out.append(np.exp(logw))
    return out


def confusion_counts(
    state: EmState, ds: CrowdDataset, posteriors: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-weighted (context, truth, assigned) counts, split by context type."""
    m = ds.scheme.size
    k = len(ds.roster)
    local = np.zeros((k, m + 1, m, m))
    mention = np.zeros((k, m + 1, m, m))
    cols = np.arange(m)[None, :]
    for view, w in zip(state.views, posteriors):
        z = view.z
        L = z.shape[1]
        q = np.empty((L, m))
        for t in range(L):
            q[t] = np.bincount(z[:, t], weights=w, minlength=m)
        for av in view.annotators:
            for mask, tab in ((av.is_mention, mention[av.index]), (~av.is_mention, local[av.index])):
                idx = np.nonzero(mask)[0]
                if idx.size:
                    np.add.at(tab, (av.ctx[idx][:, None], cols, av.labels[idx][:, None]), q[idx])
    return local, mention


def m_step(
    state: EmState, ds: CrowdDataset, posteriors: Sequence[np.ndarray]
) -> tuple[CrfModel, AnnotatorParams]:
    """Warm-started tagger refit plus closed-form reliability updates.

    The tagger step is iteration-capped, improving rather than maximizing its
    objective; the reliability update is the exact smoothed maximizer.
    """
    data = []
    for inst, lat, w in zip(ds.instances, state.lattices, posteriors):
        data.extend(
            (inst.tokens, seq, float(wi)) for seq, wi in zip(lat.sequences, w)
        )
    opts = TrainOptions(
        max_iter=state.cfg.inner_max_iter, tol=state.cfg.opt_tol, l2=state.cfg.l2_penalty
    )
    result = optimize(state.crf, data, opts)
    state.last_train = result
    local, mention = confusion_counts(state, ds, posteriors)
    params = params_from_counts(ds.roster, local, mention, state.cfg.smoothing)
    return result.model, params


def observed_loglik(state: EmState, ds: CrowdDataset) -> float:
    """Sum over instances and annotators of the log marginal annotation
    probability, the truth marginalized over the instance's lattice."""
    total = 0.0
    for inst, view in zip(ds.instances, state.views):
        pot = extract_features(state.crf, inst.tokens)
        logp = sequence_scores(pot, view.z) - log_partition(pot)
        pos = np.arange(view.z.shape[1])[None, :]
        for av in view.annotators:
            phi = _view_factor(state.annotators, av)
            total += float(logsumexp(logp + phi[pos, view.z].sum(axis=1)))
    return total


@dataclass
class FitResult:
    crf: CrfModel
    annotators: AnnotatorParams
    history: list[float]
    iterations: int
    converged: bool
    state: EmState


def _log_line(stream, iteration, loglik, delta, opt_iters, seconds) -> None:
    if stream is not None:
        print(f"{iteration}\t{loglik:.6f}\t{delta:.6f}\t{opt_iters}\t{seconds:.2f}", file=stream)


def fit(ds: CrowdDataset, cfg: EmConfig = EmConfig(), log=None) -> FitResult:
    """Alternate posterior and maximization steps until the relative change in
    the observed log-likelihood drops below ``rel_tol`` or ``max_iters`` runs
    out.  ``log`` (a writable stream) receives one tab-separated line per
    iteration: iteration, log-likelihood, delta, tagger iterations, seconds.
    """
    state = initialize(ds, cfg)
    state.loglik_history.append(observed_loglik(state, ds))
    _log_line(log, 0, state.loglik_history[0], float("nan"), 0, 0.0)
    converged = False
    for it in range(1, cfg.max_iters + 1):
        t0 = time.perf_counter()
        post = e_step(state, ds)
        state.crf, state.annotators = m_step(state, ds, post)
        state.posteriors = post
        state.iteration = it
        ll = observed_loglik(state, ds)
        prev = state.loglik_history[-1]
        state.loglik_history.append(ll)
        delta = ll - prev
        _log_line(log, it, ll, delta, state.last_train.iterations, time.perf_counter() - t0)
        if abs(delta) <= cfg.rel_tol * max(1.0, abs(prev)):
            converged = True
            break
    return FitResult(
        state.crf, state.annotators, list(state.loglik_history), state.iteration, converged, state
    )


def posterior_modes(state: EmState, ds: CrowdDataset) -> list[LabelSeq]:
    """Highest-posterior candidate sequence per instance under the final
    parameters (first one in lattice order on a tie)."""
    post = e_step(state, ds)
    return [lat.sequences[int(np.argmax(w))] for lat, w in zip(state.lattices, post)]
