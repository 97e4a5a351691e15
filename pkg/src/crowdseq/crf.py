"""Linear-chain CRF: sparse observation features, exact inference, training.

The score of a label sequence decomposes as

    score(x, z) = sum_t unary[t, z_t] + sum_{t>0} pairwise[z_{t-1}, z_t]

where the unary table collects the weights of every observation feature
firing at a position and the pairwise table holds label-bigram weights
(position-independent unless a caller supplies per-step tables).  All
inference runs in log space with max-shift stabilization; probabilities only
appear in marginal outputs.

The weight vector is the flattened (n_obs, M) unary block followed, when a
label-bigram template is present, by the flattened (M, M) bigram block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .types import LabelScheme, LabelSeq

BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"

MODEL_MAGIC = "crowdseq-crf v1"

_PLAIN_KINDS = (
    "token-identity",
    "token-lowercase",
    "is-capitalized",
    "is-digit",
    "previous-token",
    "next-token",
    "label-bigram",
)
_SIZED_KINDS = ("prefix", "suffix")


@dataclass(frozen=True)
class FeatureTemplate:
    """One observation (or label-bigram) feature generator."""

    kind: str
    width: int | None = None

    def __post_init__(self):
        if self.kind in _PLAIN_KINDS:
            if self.width is not None:
                raise ValueError(f"{self.kind} takes no width")
        elif self.kind in _SIZED_KINDS:
            if not self.width or self.width < 1:
                raise ValueError(f"{self.kind} needs a positive width")
        else:
            raise ValueError(f"unknown template kind: {self.kind!r}")

    @property
    def spec_string(self) -> str:
        return self.kind if self.width is None else f"{self.kind}-{self.width}"

    @classmethod
    def parse(cls, text: str) -> "FeatureTemplate":
        for kind in _SIZED_KINDS:
            if text.startswith(kind + "-"):
                return cls(kind, int(text[len(kind) + 1 :]))
        return cls(text)

    def observation(self, tokens: Sequence[str], t: int) -> str | None:
        """The observation string fired at position t, or None."""
        tok = tokens[t]
        k = self.kind
        if k == "token-identity":
            return "w=" + tok
        if k == "token-lowercase":
            return "wl=" + tok.lower()
        if k == "prefix":
            return f"p{self.width}=" + tok[: self.width] if len(tok) >= self.width else None
        if k == "suffix":
            return f"s{self.width}=" + tok[-self.width :] if len(tok) >= self.width else None
        if k == "is-capitalized":
            return "cap" if tok[:1].isupper() else None
        if k == "is-digit":
            return "num" if tok.isdigit() else None
        if k == "previous-token":
            return "w-1=" + (tokens[t - 1] if t > 0 else BOS_TOKEN)
        if k == "next-token":
            return "w+1=" + (tokens[t + 1] if t + 1 < len(tokens) else EOS_TOKEN)
        return None  # label-bigram fires on label pairs, not observations


DEFAULT_TEMPLATES: tuple[FeatureTemplate, ...] = (
    FeatureTemplate("token-identity"),
    FeatureTemplate("token-lowercase"),
    FeatureTemplate("prefix", 2),
    FeatureTemplate("prefix", 3),
    FeatureTemplate("suffix", 2),
    FeatureTemplate("suffix", 3),
    FeatureTemplate("is-capitalized"),
    FeatureTemplate("is-digit"),
    FeatureTemplate("previous-token"),
    FeatureTemplate("next-token"),
    FeatureTemplate("label-bigram"),
)


@dataclass
class CrfModel:
    """Weights over interned observation features and label bigrams.

    Every interned observation owns one weight per label (an observation is
    "extracted" jointly with each label it could pair with); observations
    never seen during interning contribute nothing at prediction time.
    """

    scheme: LabelScheme
    templates: tuple[FeatureTemplate, ...]
    obs_index: dict[str, int]
    weights: np.ndarray

    @property
    def n_obs(self) -> int:
        return len(self.obs_index)

    @property
    def has_bigram(self) -> bool:
        return any(t.kind == "label-bigram" for t in self.templates)

    @property
    def dim(self) -> int:
        m = self.scheme.size
        return self.n_obs * m + (m * m if self.has_bigram else 0)

    def unary_weights(self) -> np.ndarray:
        m = self.scheme.size
        return self.weights[: self.n_obs * m].reshape(self.n_obs, m)

    def bigram_weights(self) -> np.ndarray:
        m = self.scheme.size
        if not self.has_bigram:
            return np.zeros((m, m))
        return self.weights[self.n_obs * m :].reshape(m, m)

    def feature_names(self) -> Iterable[str]:
        """Feature strings aligned with the weight vector layout."""
        for obs in self.obs_index:
            for lab in self.scheme.labels:
                yield f"{obs}\ty={lab}"
        if self.has_bigram:
            for a in self.scheme.labels:
                for b in self.scheme.labels:
                    yield f"bigram\t{a}\t{b}"


def build_model(
    scheme: LabelScheme,
    token_seqs: Iterable[Sequence[str]],
    templates: Sequence[FeatureTemplate] = DEFAULT_TEMPLATES,
) -> CrfModel:
    """Intern every observation the templates fire on the corpus; zero weights."""
    templates = tuple(templates)
    obs_index: dict[str, int] = {}
    for tokens in token_seqs:
        for t in range(len(tokens)):
            for tpl in templates:
                if tpl.kind == "label-bigram":
                    continue
                obs = tpl.observation(tokens, t)
                if obs is not None and obs not in obs_index:
                    obs_index[obs] = len(obs_index)
    model = CrfModel(scheme, templates, obs_index, np.zeros(0))
    model.weights = np.zeros(model.dim)
    return model


@dataclass
class SequencePotentials:
    """Log-potential tables for one sequence."""

    unary: np.ndarray  # (L, M)
    pairwise: np.ndarray  # (M, M), or (L-1, M, M) for position-dependent scores

    @property
    def length(self) -> int:
        return self.unary.shape[0]

    @property
    def n_labels(self) -> int:
        return self.unary.shape[1]

    def pairwise_at(self, t: int) -> np.ndarray:
        """Transition table applied between positions t-1 and t (t >= 1)."""
        return self.pairwise if self.pairwise.ndim == 2 else self.pairwise[t - 1]


def observation_rows(model: CrfModel, tokens: Sequence[str]) -> list[np.ndarray]:
    """Per position, the interned row ids of the observations firing there."""
    rows: list[np.ndarray] = []
    for t in range(len(tokens)):
        ids = []
        for tpl in model.templates:
            if tpl.kind == "label-bigram":
                continue
            obs = tpl.observation(tokens, t)
            if obs is not None:
                r = model.obs_index.get(obs)
                if r is not None:
                    ids.append(r)
        rows.append(np.array(ids, dtype=np.intp))
    return rows


def extract_features(model: CrfModel, tokens: Sequence[str]) -> SequencePotentials:
    """Potential tables under the model's current weights."""
    m = model.scheme.size
    wu = model.unary_weights()
    unary = np.zeros((len(tokens), m))
    for t, rr in enumerate(observation_rows(model, tokens)):
        if rr.size:
            unary[t] = wu[rr].sum(axis=0)
    return SequencePotentials(unary, model.bigram_weights().copy())


def sequence_score(pot: SequencePotentials, labels: Sequence[int]) -> float:
    """Unnormalized log-score of one label sequence."""
    z = np.asarray(labels, dtype=np.intp)
    if z.size != pot.length:
        raise ValueError("label/position length mismatch")
    s = float(pot.unary[np.arange(z.size), z].sum())
    if z.size > 1:
        if pot.pairwise.ndim == 2:
            s += float(pot.pairwise[z[:-1], z[1:]].sum())
        else:
            s += float(pot.pairwise[np.arange(z.size - 1), z[:-1], z[1:]].sum())
    return s


def sequence_scores(pot: SequencePotentials, z: np.ndarray) -> np.ndarray:
    """Scores for a (S, L) batch of label sequences."""
    L = pot.length
    s = pot.unary[np.arange(L)[None, :], z].sum(axis=1)
    if L > 1:
        if pot.pairwise.ndim == 2:
            s = s + pot.pairwise[z[:, :-1], z[:, 1:]].sum(axis=1)
        else:
            s = s + pot.pairwise[np.arange(L - 1)[None, :], z[:, :-1], z[:, 1:]].sum(axis=1)
    return s


def _check_finite(pot: SequencePotentials) -> None:
    if not (np.isfinite(pot.unary).all() and np.isfinite(pot.pairwise).all()):
        raise ValueError("potentials must be finite")


def _forward(pot: SequencePotentials) -> np.ndarray:
    L, m = pot.unary.shape
    alpha = np.empty((L, m))
    alpha[0] = pot.unary[0]
    for t in range(1, L):
        alpha[t] = pot.unary[t] + logsumexp(alpha[t - 1][:, None] + pot.pairwise_at(t), axis=0)
    return alpha


def _backward(pot: SequencePotentials) -> np.ndarray:
    L, m = pot.unary.shape
    beta = np.zeros((L, m))
    for t in range(L - 2, -1, -1):
        beta[t] = logsumexp(pot.pairwise_at(t + 1) + (pot.unary[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(pot: SequencePotentials) -> float:
    """log of the sum of exp(score) over all M^L label sequences."""
    _check_finite(pot)
    return float(logsumexp(_forward(pot)[-1]))


def _posteriors(pot, alpha, beta, logz):
    uni = np.exp(alpha + beta - logz)
    uni /= uni.sum(axis=1, keepdims=True)
    L, m = pot.unary.shape
    pair = np.empty((max(L - 1, 0), m, m))
    for t in range(1, L):
        p = np.exp(alpha[t - 1][:, None] + pot.pairwise_at(t) + (pot.unary[t] + beta[t])[None, :] - logz)
        pair[t - 1] = p / p.sum()
    return uni, pair


def marginals(pot: SequencePotentials) -> tuple[np.ndarray, np.ndarray]:
    """Posterior label probabilities (L, M) and pair probabilities (L-1, M, M)."""
    _check_finite(pot)
    alpha = _forward(pot)
    beta = _backward(pot)
    logz = float(logsumexp(alpha[-1]))
    return _posteriors(pot, alpha, beta, logz)


def viterbi(pot: SequencePotentials) -> LabelSeq:
    """Highest-scoring label sequence; ties resolve to the lowest label index."""
    _check_finite(pot)
    L, m = pot.unary.shape
    score = pot.unary[0].copy()
    back = np.zeros((L, m), dtype=np.intp)
    for t in range(1, L):
        cand = score[:, None] + pot.pairwise_at(t)
        back[t] = cand.argmax(axis=0)  # first maximum, so the lowest index
        score = cand[back[t], np.arange(m)] + pot.unary[t]
    path = [0] * L
    path[-1] = int(score.argmax())
    for t in range(L - 1, 0, -1):
        path[t - 1] = int(back[t, path[t]])
    return tuple(path)


# One weighted example: (tokens, labels, weight).  The same tokens object may
# appear many times with different label sequences; inference is shared.
WeightedExample = tuple[Sequence[str], LabelSeq, float]


class _WeightedObjective:
    """Weighted negative log-likelihood with its gradient.

    Empirical feature counts do not depend on the weights, so they are
    accumulated once at construction; each evaluation only reruns
    forward-backward per distinct input sequence.
    """

    def __init__(self, model: CrfModel, data: Iterable[WeightedExample], l2: float):
        if l2 < 0:
            raise ValueError("l2 penalty must be nonnegative")
        self.model = model
        self.l2 = float(l2)
        m = model.scheme.size
        self.rows: list[list[np.ndarray]] = []  # per group, per position
        self.total_w: list[float] = []
        self.emp_u = np.zeros((model.n_obs, m))
        self.emp_b = np.zeros((m, m))
        groups: dict[int, int] = {}
        for tokens, labels, w in data:
            w = float(w)
            if not math.isfinite(w):
                raise ValueError("non-finite weight")
            if w < 0:
                raise ValueError("negative weight")
            g = groups.get(id(tokens))
            if g is None:
                g = groups[id(tokens)] = len(self.rows)
                self.rows.append(observation_rows(model, tokens))
                self.total_w.append(0.0)
            if len(labels) != len(self.rows[g]):
                raise ValueError("label/token length mismatch")
            self.total_w[g] += w
            z = np.asarray(labels, dtype=np.intp)
            for t, rr in enumerate(self.rows[g]):
                self.emp_u[rr, z[t]] += w
            if z.size > 1:
                np.add.at(self.emp_b, (z[:-1], z[1:]), w)

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        if not np.isfinite(theta).all():
            raise ValueError("non-finite weights")
        model = self.model
        m = model.scheme.size
        nu = model.n_obs * m
        wu = theta[:nu].reshape(model.n_obs, m)
        wb = theta[nu:].reshape(m, m) if model.has_bigram else None
        value = 0.0
        grad_u = np.zeros_like(wu)
        grad_b = np.zeros((m, m)) if wb is not None else None
        for rows, tw in zip(self.rows, self.total_w):
            if tw == 0.0:
                continue
            unary = np.zeros((len(rows), m))
            for t, rr in enumerate(rows):
                if rr.size:
                    unary[t] = wu[rr].sum(axis=0)
            pot = SequencePotentials(unary, wb if wb is not None else np.zeros((m, m)))
            alpha = _forward(pot)
            beta = _backward(pot)
            logz = float(logsumexp(alpha[-1]))
            value += tw * logz
            uni, pair = _posteriors(pot, alpha, beta, logz)
            for t, rr in enumerate(rows):
                if rr.size:
                    grad_u[rr] += tw * uni[t]
            if grad_b is not None and pair.size:
                grad_b += tw * pair.sum(axis=0)
        value -= float((wu * self.emp_u).sum())
        grad_u -= self.emp_u
        if wb is not None:
            value -= float((wb * self.emp_b).sum())
            grad_b -= self.emp_b
        grad = np.concatenate([grad_u.ravel(), grad_b.ravel() if grad_b is not None else np.zeros(0)])
        value += 0.5 * self.l2 * float(theta @ theta)
        grad += self.l2 * theta
        return value, grad


def weighted_nll_and_gradient(
    model: CrfModel, data: Iterable[WeightedExample], l2: float = 1.0
) -> tuple[float, np.ndarray]:
    """Weighted negative log-likelihood and its gradient at the model's weights.

    objective = sum_i w_i * (log Z(x_i) - score(x_i, z_i)) + (l2/2) ||theta||^2
    """
    return _WeightedObjective(model, data, l2).value_and_grad(model.weights)


@dataclass(frozen=True)
class TrainOptions:
    max_iter: int = 100
    tol: float = 1e-5  # stop when the gradient's infinity norm drops below this
    l2: float = 1.0
    record_history: bool = False


@dataclass
class TrainResult:
    model: CrfModel
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    warning: bool  # line search gave up; weights are the best point seen
    history: list[float]


def optimize(
    model: CrfModel, data: Iterable[WeightedExample], opts: TrainOptions = TrainOptions()
) -> TrainResult:
    """Minimize the weighted negative log-likelihood with L-BFGS.

    The line search enforces sufficient decrease, so the objective never
    increases across accepted iterations; on a line-search failure the best
    point seen so far is returned with ``warning`` set.
    """
    obj = _WeightedObjective(model, data, opts.l2)
    if model.dim == 0:
        return TrainResult(replace(model, weights=model.weights.copy()), 0.0, 0.0, 0, True, False, [])
    history: list[float] = []
    if opts.record_history:
        history.append(obj.value_and_grad(model.weights)[0])

    def callback(xk):
        if opts.record_history:
            history.append(obj.value_and_grad(xk)[0])

    res = minimize(
        obj.value_and_grad,
        model.weights.astype(float, copy=True),
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": opts.max_iter, "gtol": opts.tol, "ftol": 1e-14},
    )
    value, grad = obj.value_and_grad(res.x)
    gnorm = float(np.abs(grad).max()) if grad.size else 0.0
    warning = int(getattr(res, "status", 0)) == 2
    converged = bool(res.success) or gnorm <= opts.tol
    trained = replace(model, weights=np.asarray(res.x, dtype=float).copy())
    return TrainResult(trained, float(value), gnorm, int(res.nit), converged, warning, history)


def save_model(model: CrfModel, path) -> None:
    """Versioned flat text dump; floats use shortest round-trip encoding."""
    m = model.scheme.size
    lines = [MODEL_MAGIC]
    lines.append("kind\t" + model.scheme.kind)
    lines.append("labels\t" + "\t".join(model.scheme.labels))
    lines.append("templates\t" + "\t".join(t.spec_string for t in model.templates))
    lines.append(f"observations\t{model.n_obs}")
    wu = model.unary_weights()
    for obs, r in model.obs_index.items():
        if "\t" in obs or "\n" in obs:
            raise ValueError(f"observation not serializable: {obs!r}")
        for c, lab in enumerate(model.scheme.labels):
            lines.append(f"{obs}\t{lab}\t{float(wu[r, c])!r}")
    if model.has_bigram:
        wb = model.bigram_weights()
        for a, la in enumerate(model.scheme.labels):
            for b, lb in enumerate(model.scheme.labels):
                lines.append(f"bigram\t{la}\t{lb}\t{float(wb[a, b])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> CrfModel:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a {MODEL_MAGIC} file")

    def fields(i, tag, n=None):
        parts = lines[i].split("\t")
        if parts[0] != tag or (n is not None and len(parts) != n):
            raise ValueError(f"{path}, line {i + 1}: expected {tag!r}")
        return parts[1:]

    kind = fields(1, "kind", 2)[0]
    labels = tuple(fields(2, "labels"))
    templates = tuple(FeatureTemplate.parse(s) for s in fields(3, "templates"))
    n_obs = int(fields(4, "observations", 2)[0])
    scheme = LabelScheme(labels, kind)
    m = scheme.size
    model = CrfModel(scheme, templates, {}, np.zeros(0))
    has_bigram = model.has_bigram
    expected = 5 + n_obs * m + (m * m if has_bigram else 0)
    if len(lines) != expected:
        raise ValueError(f"{path}: expected {expected} lines, found {len(lines)}")
    obs_index: dict[str, int] = {}
    weights = np.zeros(n_obs * m + (m * m if has_bigram else 0))
    i = 5
    for r in range(n_obs):
        for c in range(m):
            obs, lab, w = lines[i].split("\t")
            if c == 0:
                obs_index[obs] = r
            elif obs_index.get(obs) != r:
                raise ValueError(f"{path}, line {i + 1}: observation block out of order")
            if lab != labels[c]:
                raise ValueError(f"{path}, line {i + 1}: label column mismatch")
            weights[r * m + c] = float(w)
            i += 1
    if has_bigram:
        for a in range(m):
            for b in range(m):
                tag, la, lb, w = lines[i].split("\t")
                if tag != "bigram" or la != labels[a] or lb != labels[b]:
                    raise ValueError(f"{path}, line {i + 1}: bigram block mismatch")
                weights[n_obs * m + a * m + b] = float(w)
                i += 1
    model.obs_index = obs_index
    model.weights = weights
    return model
