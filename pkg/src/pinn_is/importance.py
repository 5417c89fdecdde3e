"""Proposal distributions over collocation points and reweighted batches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError
from .nn import TrainingError

MODES = ("uniform", "exact-loss", "pwc-loss", "grad-norm")


@dataclass
class ProposalDistribution:
    q: np.ndarray
    mode: str

    def __len__(self):
        return len(self.q)

    def entropy(self) -> float:
        q = self.q[self.q > 0]
        return float(-(q * np.log(q)).sum())


@dataclass
class Batch:
    indices: np.ndarray
    weights: np.ndarray  # 1 / (N q_j) for each drawn index


def uniform_proposal(n: int) -> ProposalDistribution:
    return ProposalDistribution(np.full(n, 1.0 / n), "uniform")


def _normalise(values: np.ndarray, mode: str) -> ProposalDistribution:
    total = values.sum()
    if total <= 0.0 or not np.isfinite(total):
        if not np.isfinite(total):
            raise TrainingError("non-finite per-point losses")
        return ProposalDistribution(uniform_proposal(len(values)).q, mode)
    return ProposalDistribution(values / total, mode)


def build_proposal_exact(losses) -> ProposalDistribution:
    """q_j = J_j / sum J; all-zero losses fall back to uniform."""
    losses = np.asarray(losses, dtype=float).ravel()
    if np.any(losses < 0):
        raise ContractError("per-point losses must be non-negative")
    return _normalise(losses, "exact-loss")


def pwc_field(seed_losses, rho, n: int | None = None) -> np.ndarray:
    """Per-collocation losses copied from each point's nearest seed.

    ``seed_losses``/``rho`` may be sequences of the same length, one pair per
    point group; the fields are then summed group by group.
    """
    grouped = isinstance(seed_losses, (list, tuple)) and len(seed_losses) > 0 and all(
        np.ndim(g) >= 1 for g in seed_losses)
    if grouped:
        pairs = list(zip(seed_losses, rho))
    else:
        pairs = [(seed_losses, rho)]
    field = None
    for losses, r in pairs:
        losses = np.asarray(losses, dtype=float).ravel()
        r = np.asarray(getattr(r, "rho", r))
        if n is not None and len(r) != n:
            raise ContractError(f"nearest-seed map covers {len(r)} of {n} collocation points")
        if len(r) and (r.min() < 0 or r.max() >= len(losses)):
            raise ContractError("nearest-seed map points outside the seed set")
        part = losses[r]
        field = part if field is None else field + part
    return field


def build_proposal_pwc(seed_losses, rho, n: int | None = None) -> ProposalDistribution:
    """Piecewise-constant loss proposal over ``n`` collocation points."""
    field = pwc_field(seed_losses, rho, n)
    if np.any(field < 0):
        raise ContractError("per-seed losses must be non-negative")
    return _normalise(field, "pwc-loss")


def build_proposal_gradnorm(norms) -> ProposalDistribution:
    norms = np.asarray(norms, dtype=float).ravel()
    if np.any(norms < 0):
        raise ContractError("gradient norms must be non-negative")
    return _normalise(norms, "grad-norm")


def sample_batch(proposal: ProposalDistribution, m: int, rng) -> Batch:
    """``m`` draws with replacement; ``rng`` is a seed or a numpy Generator.

    Inverse-CDF sampling: an index with q_j = 0 owns an empty CDF interval
    and can never be drawn.
    """
    if m < 1:
        raise ValueError("batch size must be >= 1")
    rng = np.random.default_rng(rng)
    q = proposal.q
    n = len(q)
    cdf = np.cumsum(q)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(m), side="right")
    with np.errstate(divide="ignore"):
        weights = 1.0 / (n * q[idx])
    if not np.all(np.isfinite(weights)):
        raise TrainingError("importance weight overflow (q_j underflowed)")
    return Batch(idx.astype(np.int64), weights)


def reweighted_gradient(per_sample_grads, batch: Batch):
    """(1/m) sum_k w_k g_k for per-sample gradients given as lists of arrays."""
    m = len(batch.indices)
    if len(per_sample_grads) != m:
        raise ContractError(f"expected {m} per-sample gradients, got {len(per_sample_grads)}")
    if not np.all(np.isfinite(batch.weights)):
        raise TrainingError("non-finite importance weight")
    out = None
    for w, g in zip(batch.weights, per_sample_grads):
        scaled = [w * np.asarray(a, dtype=float) for a in g]
        out = scaled if out is None else [o + s for o, s in zip(out, scaled)]
    return [o / m for o in out]
