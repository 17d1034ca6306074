"""Inference network over document units and the operations on its beliefs.

A belief is ``q(z_i = 1 | x)`` for every document unit ``i``: the chance that
the unit belongs to the (unobserved) query.  Beliefs gate the query encoder
states to build the query-focused view; during training they may be swapped
for weak labels (posterior dropout), and at test time an observed query
raises the belief of the units it aligns to (calibration).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .bpe import BpeSequence
from .nn import ConfigError, init_linear
from .params import ModelParams
from .weak_labels import WeakLabels, lcs_align

PROB_EPS = 1e-7
SOURCES = ("estimated", "weak_supervision", "calibrated")


@dataclass
class QueryBelief:
    """Per-unit beliefs; ``probs`` has shape ``(M,)`` or ``(batch, M)``."""

    probs: Tensor
    source: str = "estimated"
    replaced: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not isinstance(self.probs, Tensor):
            self.probs = Tensor(np.asarray(self.probs))
        if self.source not in SOURCES:
            raise ValueError(f"unknown belief source {self.source!r}")
        p = self.probs.data
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("beliefs must lie in [0, 1]")

    def numpy(self) -> np.ndarray:
        return self.probs.data

    def __len__(self) -> int:
        return self.probs.shape[-1]


@dataclass(frozen=True)
class CalibrationDelta:
    increments: tuple[float, ...]


# ---------------------------------------------------------------------------
# scoring and posterior
# ---------------------------------------------------------------------------


def init_inference_net(params: ModelParams, d_h: int, rng: np.random.Generator,
                       prefix: str = "lq", dtype=np.float32) -> None:
    init_linear(params, f"{prefix}.hidden", d_h, d_h, rng, dtype)
    init_linear(params, f"{prefix}.out", d_h, 2, rng, dtype)


def score(h_q: Tensor, params: ModelParams, prefix: str = "lq") -> Tensor:
    """Two-layer MLP scorer: ``relu(H_q W_h + b_h) W_s + b_s``, shape ``(..., M, 2)``."""
    w_h = params[f"{prefix}.hidden.weight"]
    b_h = params[f"{prefix}.hidden.bias"]
    w_s = params[f"{prefix}.out.weight"]
    b_s = params[f"{prefix}.out.bias"]
    d_h = h_q.shape[-1]
    if w_h.shape != (d_h, d_h):
        raise ShapeError(f"W_h has shape {w_h.shape}, expected {(d_h, d_h)}")
    if b_h.shape != (d_h,):
        raise ShapeError(f"b_h has shape {b_h.shape}, expected {(d_h,)}")
    if w_s.shape != (d_h, 2):
        raise ShapeError(f"W_s has shape {w_s.shape}, expected {(d_h, 2)}")
    if b_s.shape != (2,):
        raise ShapeError(f"b_s has shape {b_s.shape}, expected (2,)")
    hidden = ad.relu(h_q @ w_h + b_h)
    return hidden @ w_s + b_s


def gumbel_noise(shape, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0)
    return (-np.log(-np.log(u))).astype(dtype)


def posterior(logits: Tensor, tau: float, mode: str = "infer",
              rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> QueryBelief:
    """Gumbel-softmax relaxed belief for class 1.

    ``mode="train"`` adds independent Gumbel noise to both class logits
    (drawn from ``rng`` unless ``noise`` is given); ``mode="infer"`` uses the
    noise mode, zero.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if logits.shape[-1] != 2:
        raise ShapeError(f"posterior expects (..., 2) logits, got {logits.shape}")
    if mode == "train":
        if noise is None:
            if rng is None:
                raise ConfigError("train-mode posterior needs a random generator or noise")
            noise = gumbel_noise(logits.shape, rng, logits.dtype)
        elif noise.shape != logits.shape:
            raise ShapeError(f"noise {noise.shape} does not match logits {logits.shape}")
        logits = logits + Tensor(np.asarray(noise, dtype=logits.dtype))
    elif mode != "infer":
        raise ConfigError(f"unknown posterior mode {mode!r}")
    probs = ad.softmax(logits, axis=-1, temperature=tau)
    return QueryBelief(probs[..., 1], "estimated")


def query_focused_view(belief: QueryBelief, h_q: Tensor) -> Tensor:
    """Row ``i`` of the result is ``belief_i * H_q[i]``."""
    if belief.probs.shape != h_q.shape[:-1]:
        raise ShapeError(f"belief {belief.probs.shape} does not align with encodings {h_q.shape}")
    return ad.mul_rows(h_q, belief.probs)


# ---------------------------------------------------------------------------
# training objective
# ---------------------------------------------------------------------------


def query_loss_terms(belief: QueryBelief, labels, mask=None) -> tuple[Tensor, Tensor]:
    """Return ``(L_tag, L_entropy)`` summed over units, averaged over the batch.

    ``L_tag = sum z log q1 + (1 - z) log q0`` (log-likelihood of the weak
    labels) and ``L_entropy = sum q1 log q1 + q0 log q0`` (negative entropy).
    Beliefs are clamped to ``[1e-7, 1 - 1e-7]`` before the logarithms.
    """
    if belief.source != "estimated":
        raise ValueError("the query loss is defined on estimated beliefs only")
    z = labels.as_array(np.float64) if isinstance(labels, WeakLabels) else np.asarray(labels, dtype=np.float64)
    probs = belief.probs
    if z.shape != probs.shape:
        raise ShapeError(f"labels {z.shape} do not align with beliefs {probs.shape}")
    m = np.ones(z.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    dt = probs.dtype
    z = z.astype(dt)
    m = m.astype(dt)
    q1 = ad.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    q0 = 1.0 - q1
    log_q1, log_q0 = ad.log(q1), ad.log(q0)
    tag = log_q1 * z + log_q0 * (1.0 - z)
    neg_entropy = q1 * log_q1 + q0 * log_q0
    n_examples = 1 if z.ndim == 1 else z.shape[0]
    scale = 1.0 / n_examples
    return (tag * m).sum() * scale, (neg_entropy * m).sum() * scale


def query_loss(belief: QueryBelief, labels, omega: float, beta: float, mask=None) -> Tensor:
    """``-omega * L_tag + beta * L_entropy``."""
    if omega < 0 or beta < 0:
        raise ConfigError(f"omega and beta must be non-negative, got omega={omega}, beta={beta}")
    l_tag, l_ent = query_loss_terms(belief, labels, mask)
    return l_tag * (-omega) + l_ent * beta


def entropy(q) -> np.ndarray:
    """Entropy of Bernoulli beliefs (nats), elementwise."""
    q = np.clip(np.asarray(q, dtype=np.float64), 1e-300, 1.0)
    q0 = np.clip(1.0 - np.asarray(q, dtype=np.float64), 1e-300, 1.0)
    return -(q * np.log(q) + q0 * np.log(q0))


def kl_to_uniform(q) -> np.ndarray:
    """KL divergence of Bernoulli beliefs from the uniform prior, elementwise."""
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros_like(q)
    for p, u in ((q, 0.5), (1.0 - q, 0.5)):
        nz = p > 0
        out[nz] += p[nz] * np.log(p[nz] / u)
    return out


# ---------------------------------------------------------------------------
# posterior dropout
# ---------------------------------------------------------------------------


def posterior_dropout(belief: QueryBelief, labels, delta: float, rng: np.random.Generator | None,
                      per_token: bool = False, draw: np.ndarray | None = None) -> QueryBelief:
    """With probability ``delta`` replace the belief by the weak labels.

    One Bernoulli draw per example (per unit with ``per_token=True``).  A
    precomputed boolean ``draw`` overrides the random one.  The replaced part
    carries no gradient.
    """
    if not 0.0 <= delta <= 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1], got {delta}")
    z = labels.as_array(belief.probs.dtype) if isinstance(labels, WeakLabels) else \
        np.asarray(labels, dtype=belief.probs.dtype)
    if z.shape != belief.probs.shape:
        raise ShapeError(f"labels {z.shape} do not align with beliefs {belief.probs.shape}")
    if draw is not None:
        draw = np.asarray(draw, dtype=bool)
    elif per_token:
        draw = rng.random(z.shape) < delta
    else:
        draw = rng.random(z.shape[:-1]) < delta
    full = np.broadcast_to(draw[..., None], z.shape) if not per_token else draw
    if not full.any():
        return QueryBelief(belief.probs, belief.source, replaced=np.asarray(draw))
    if full.all():
        return QueryBelief(Tensor(z.copy()), "weak_supervision", replaced=np.asarray(draw))
    m = full.astype(z.dtype)
    mixed = belief.probs * (1.0 - m) + Tensor(z * m)
    return QueryBelief(mixed, belief.source, replaced=np.asarray(draw))


def anneal_delta(step: int, total_steps: int, delta_start: float = 1.0, delta_end: float = 0.5) -> float:
    """Linear schedule from ``delta_start`` at step 0 to ``delta_end`` at ``total_steps``."""
    if total_steps <= 0:
        return delta_end
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return delta_start + (delta_end - delta_start) * step / total_steps


# ---------------------------------------------------------------------------
# test-time calibration
# ---------------------------------------------------------------------------


def calibration_delta(doc: BpeSequence, query: BpeSequence) -> CalibrationDelta:
    labels = lcs_align(doc, query)
    return CalibrationDelta(tuple(float(v) for v in labels.labels))


def calibrate(belief: QueryBelief, doc: BpeSequence, query: BpeSequence | None) -> QueryBelief:
    """Raise beliefs to 1 on units aligned with ``query``.

    An empty or missing query returns ``belief`` itself.
    """
    if query is None or len(query) == 0:
        return belief
    if len(belief) != len(doc):
        raise ShapeError(f"belief covers {len(belief)} units but document has {len(doc)}")
    inc = np.asarray(calibration_delta(doc, query).increments, dtype=belief.probs.dtype)
    probs = np.minimum(1.0, belief.probs.data + inc).astype(belief.probs.dtype)
    return QueryBelief(Tensor(probs), "calibrated")


def dump_beliefs(path, doc: BpeSequence, belief: QueryBelief,
                 labels: Sequence[int] | None = None) -> None:
    """JSONL debug dump: one ``{unit, prob, weak_label}`` object per unit."""
    probs = belief.numpy()
    with open(path, "w", encoding="utf-8") as fh:
        for i, (u, p) in enumerate(zip(doc.surfaces, probs)):
            row = {"unit": u, "prob": float(p), "weak_label": None if labels is None else int(labels[i])}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
