"""Uniform and importance-sampling training loops."""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import importance as imp
from . import nn
from .autodiff import UnsupportedError
from .geometry import halton_sequence, nearest_seed, sample_interior
from .problems.base import LossGraph, PDEProblem, PointData


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss; ``records`` ends with the bad iterate."""

    def __init__(self, message, records, params):
        super().__init__(message)
        self.records = records
        self.params = params


@dataclass
class TrainConfig:
    problem: PDEProblem
    network: nn.NetworkConfig
    n_collocation: int
    n_boundary: int
    n_seeds: int
    batch_size: int
    learning_rate: float
    max_iterations: int
    tolerance: float = 0.0
    sampling_mode: str = "pwc-loss"
    rng_seed: int = 0
    halton_scramble: int | None = None
    boundary_generator: str = "uniform-random"

    def __post_init__(self):
        if self.sampling_mode not in imp.MODES:
            raise ValueError(f"sampling mode must be one of {imp.MODES}")
        if not 1 <= self.batch_size <= self.n_collocation:
            raise ValueError("batch size must satisfy 1 <= m <= N")
        if not 1 <= self.n_seeds <= self.n_collocation:
            raise ValueError("seed count must satisfy 1 <= S <= N")
        if self.n_boundary < 1:
            raise ValueError("n_boundary must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be > 0")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class TrainingRecord:
    iteration: int
    wall_clock_seconds: float
    total_loss: float
    term_losses: list
    proposal_entropy: float
    batch_indices_hash: int = 0


@dataclass
class TrainingData:
    """Collocation points, paired boundary points and seeds for one run.

    Index ``j`` owns interior point ``j`` and boundary point ``j mod n_b``
    of every boundary group. Seeds are the first ``S`` points of each
    group's (Halton or random) stream, so with ``S = N`` they coincide
    with the collocation points.
    """

    points: dict  # group -> PointSet
    data: dict  # group -> PointData over all points of the group
    seed_data: dict
    rho: dict = field(default_factory=dict)  # group -> NearestSeedIndex
    n: int = 0

    def rows(self, idx: np.ndarray) -> dict:
        out = {}
        for g, d in self.data.items():
            out[g] = d.take(idx % len(d))
        return out

    def collocation(self) -> dict:
        return self.rows(np.arange(self.n))


def prepare_data(config: TrainConfig, need_rho: bool) -> TrainingData:
    problem = config.problem
    n, s = config.n_collocation, config.n_seeds
    groups = problem.groups
    points = {groups[0]: sample_interior(problem.domain, n, "halton",
                                         scramble_seed=config.halton_scramble)}
    for k, g in enumerate(groups[1:], 1):
        points[g] = problem.sample_group(g, config.n_boundary, seed=config.rng_seed * 7919 + k,
                                         boundary_generator=config.boundary_generator)
    data = {g: problem.point_data(g, p) for g, p in points.items()}
    seed_data = {}
    for g, d in data.items():
        k = min(s, len(d))
        seed_data[g] = d.take(slice(0, k))
    td = TrainingData(points, data, seed_data, n=n)
    if need_rho:
        for g, p in points.items():
            # boundary index j is paired with collocation j, so map each pairing
            pts = p.points[np.arange(n) % len(p)]
            seeds = p.points[: len(seed_data[g])]
            td.rho[g] = nearest_seed(pts, seeds)
    return td


def _term_means(problem: PDEProblem, terms: dict, data: dict) -> list:
    out = []
    for t in problem.terms:
        vals = terms[t.name]
        if t.tags is None:
            out.append(float(vals.mean()))
        else:
            mask = data[t.group].fields[f"mask:{t.name}"][: len(vals), 0]
            cnt = mask.sum()
            out.append(float(vals.sum() / cnt) if cnt > 0 else float("nan"))
    return out


def _hash_indices(idx: np.ndarray) -> int:
    return zlib.crc32(np.ascontiguousarray(idx, dtype=np.int64).tobytes())


class _ProposalFailed(Exception):
    def __init__(self, total, terms, ev_data):
        super().__init__()
        self.total, self.terms, self.ev_data = total, terms, ev_data


def _proposal(mode, graph, params, td, uniform):
    """Proposal plus the (total, terms, data) that estimate the current loss."""
    if mode == "uniform":
        return uniform, None, None, None
    if mode == "exact-loss":
        ev = graph.evaluate(params, td.collocation())
        composite = graph.composite_from_groups(ev["groups"])
        total, terms, ev_data = composite.mean(), ev["terms"], td.collocation()
        build = lambda: imp.build_proposal_exact(composite)
    elif mode == "pwc-loss":
        ev = graph.evaluate(params, td.seed_data)
        groups = graph.group_names
        seed_losses = [ev["groups"][g] for g in groups]
        rhos = [td.rho[g] for g in groups]
        total = graph.composite_from_groups(ev["groups"]).mean()
        terms, ev_data = ev["terms"], td.seed_data
        build = lambda: imp.build_proposal_pwc(seed_losses, rhos, len(uniform))
    else:  # grad-norm
        norms, composite = graph.per_point_gradient_norms(params, td.collocation())
        ev = graph.evaluate(params, td.collocation())
        total, terms, ev_data = composite.mean(), ev["terms"], td.collocation()
        build = lambda: imp.build_proposal_gradnorm(norms)
    try:
        return build(), total, terms, ev_data
    except nn.TrainingError as exc:
        raise _ProposalFailed(total, terms, ev_data) from exc


def train(config: TrainConfig, initial_params: nn.Parameters | None = None,
          callback=None) -> tuple[nn.Parameters, list[TrainingRecord]]:
    """Run the sampling loop selected by ``config.sampling_mode``.

    Each record holds the loss *before* that iteration's update. The loop
    stops after ``max_iterations`` updates or as soon as the recorded loss is
    <= ``tolerance`` (no update is taken then). ``callback(i, params, td,
    elapsed)`` runs before the first update and after every update, outside
    the timed region.
    """
    mode = config.sampling_mode
    start = time.perf_counter()
    paused = 0.0
    td = prepare_data(config, need_rho=(mode == "pwc-loss"))
    graph = LossGraph(config.problem, config.network, td.seed_data)
    params = initial_params.copy() if initial_params is not None else nn.init(config.network)
    state = nn.AdamState.zeros_like(params)
    rng = np.random.default_rng(config.rng_seed)
    problem, n, m = config.problem, config.n_collocation, config.batch_size
    uniform = imp.uniform_proposal(n)
    records: list[TrainingRecord] = []

    def notify(i):
        nonlocal paused
        if callback is not None:
            t0 = time.perf_counter()
            callback(i, params, td, t0 - start - paused)
            paused += time.perf_counter() - t0

    notify(0)
    i = 0
    while i < config.max_iterations:
        try:
            proposal, total, terms, ev_data = _proposal(mode, graph, params, td, uniform)
            batch = imp.sample_batch(proposal, m, rng)
        except (_ProposalFailed, nn.TrainingError) as exc:
            cause = exc.__cause__ if isinstance(exc, _ProposalFailed) else exc
            if isinstance(exc, _ProposalFailed):
                total, terms, ev_data = exc.total, exc.terms, exc.ev_data
            records.append(TrainingRecord(i, time.perf_counter() - start - paused, float(total),
                                          _term_means(problem, terms, ev_data), float("nan")))
            raise TrainingAborted(f"iteration {i}: {cause}", records, params) from cause
        batch_data = td.rows(batch.indices)
        _, grads, bt = graph.objective_and_grad(params, batch_data, batch.weights / m)
        if mode == "uniform":
            composite_b = graph.composite_from_groups(bt["groups"])
            total, terms, ev_data = composite_b.mean(), bt["terms"], batch_data

        rec = TrainingRecord(
            iteration=i,
            wall_clock_seconds=time.perf_counter() - start - paused,
            total_loss=float(total),
            term_losses=_term_means(problem, terms, ev_data),
            proposal_entropy=proposal.entropy(),
            batch_indices_hash=_hash_indices(batch.indices),
        )
        records.append(rec)
        if not np.isfinite(rec.total_loss):
            raise TrainingAborted(f"non-finite loss at iteration {i}", records, params)
        if rec.total_loss <= config.tolerance:
            break
        try:
            params, state = nn.adam_step(state, params, grads, config.learning_rate)
        except nn.TrainingError as exc:
            raise TrainingAborted(f"iteration {i}: {exc}", records, params) from exc
        i += 1
        notify(i)
    return params, records


class LossMonitor:
    """Training callback recording the full-collocation mean loss.

    The loss after ``i`` updates is stored every ``every`` updates, with the
    training time elapsed so far. Its own cost is excluded from that time.
    """

    def __init__(self, config: TrainConfig, every: int = 10):
        self.config = config
        self.every = max(1, int(every))
        self.graph = None
        self.iterations: list[int] = []
        self.wall: list[float] = []
        self.loss: list[float] = []

    def __call__(self, i, params, td, elapsed):
        if i % self.every and i != self.config.max_iterations:
            return
        if self.graph is None:
            self.graph = LossGraph(self.config.problem, self.config.network, td.seed_data)
        ev = self.graph.evaluate(params, td.collocation())
        self.iterations.append(i)
        self.wall.append(elapsed)
        self.loss.append(float(self.graph.composite_from_groups(ev["groups"]).mean()))


def collocation_loss(config: TrainConfig, params: nn.Parameters) -> float:
    """Mean composite loss over all N collocation indices."""
    td = prepare_data(config, need_rho=False)
    graph = LossGraph(config.problem, config.network, td.seed_data)
    ev = graph.evaluate(params, td.collocation())
    return float(graph.composite_from_groups(ev["groups"]).mean())


# ---------------------------------------------------------------- diagnostics


def evaluate_error(params: nn.Parameters, problem: PDEProblem, activation: str, n_eval: int,
                   seed: int = 0, per_component: bool = False):
    """Relative L2 error against the problem's reference on Halton points.

    ``seed`` offsets the Halton stream. Returns the aggregate error, or
    ``(aggregate, per-component list)`` when ``per_component`` is set.
    """
    pts = interior_eval_points(problem, n_eval, seed)
    ref = problem.reference(pts)
    if ref is None:
        raise UnsupportedError(f"{problem.name} has no reference solution")
    pred = nn.predict(params, activation, pts)
    diff2 = ((pred - ref) ** 2).sum(axis=0)
    ref2 = (ref**2).sum(axis=0)
    agg = float(np.sqrt(diff2.sum() / ref2.sum()))
    if per_component:
        return agg, [float(np.sqrt(a / b)) for a, b in zip(diff2, ref2)]
    return agg


def interior_eval_points(problem: PDEProblem, n_eval: int, seed: int = 0) -> np.ndarray:
    dom = problem.domain
    lo = np.array([b[0] for b in dom.bbox])
    span = np.array([b[1] - b[0] for b in dom.bbox])
    out, start = [], 1 + int(seed) * 1_000_003
    have = 0
    while have < n_eval:
        cand = lo + halton_sequence(2 * n_eval, problem.input_dim, start=start) * span
        start += 2 * n_eval
        keep = cand[dom.contains(cand)]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:n_eval]


def pwc_approximation_error(params: nn.Parameters, graph: LossGraph, collocation, seeds,
                            rho) -> float:
    """Relative L2 distance between interior losses and their PWC copies.

    ``collocation`` and ``seeds`` are ``{group: PointData}`` (a bare
    ``PointData`` is taken as the interior group). Only the interior (PDE
    residual) part of the composite loss is compared.
    """
    g = graph.problem.groups[0]
    if isinstance(collocation, PointData):
        collocation = {g: collocation}
    if isinstance(seeds, PointData):
        seeds = {g: seeds}
    exact = graph.evaluate(params, collocation)["groups"][g]
    at_seeds = graph.evaluate(params, seeds)["groups"][g]
    approx = imp.pwc_field(at_seeds, rho, len(exact))
    denom = np.sqrt((exact**2).sum())
    if denom == 0.0:
        return 0.0 if np.all(approx == 0) else float("inf")
    return float(np.sqrt(((exact - approx) ** 2).sum()) / denom)
