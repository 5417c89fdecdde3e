"""Shared machinery: loss terms, per-point data, and the compiled loss tape."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..geometry import Domain, PointSet


class UnknownRegionError(ad.ContractError):
    """A loss was requested for a region tag the problem does not define."""


@dataclass(frozen=True)
class Term:
    """One weighted squared-residual term ``weight * J``.

    ``tags`` restricts the term to boundary points carrying one of those
    segment tags; ``None`` applies it to every point of ``group``.
    """

    name: str
    group: str
    weight: float
    tags: tuple | None = None


@dataclass
class PointData:
    """Per-point columns for one group: ``(n, 1)`` float arrays by field name."""

    fields: dict

    def __len__(self):
        return len(next(iter(self.fields.values())))

    def take(self, rows) -> "PointData":
        return PointData({k: v[rows] for k, v in self.fields.items()})


@dataclass
class PDEProblem:
    """Base class; subclasses fill in geometry, terms and residual builders."""

    name: str
    domain: Domain
    input_dim: int
    output_dim: int
    terms: tuple
    groups: tuple = ("interior", "boundary")
    max_derivative_order: int = 2
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for t in self.terms:
            if t.weight < 0:
                raise ValueError(f"term {t.name}: weight must be >= 0")
            if t.group not in self.groups:
                raise ValueError(f"term {t.name}: unknown group {t.group!r}")
            if t.tags is not None:
                unknown = set(t.tags) - set(self.domain.tags)
                if unknown:
                    raise ValueError(f"term {t.name}: unknown region tags {sorted(unknown)}")

    @property
    def term_names(self) -> list[str]:
        return [t.name for t in self.terms]

    # --- hooks ------------------------------------------------------------

    def boundary_tags(self, group: str):
        """Segment tags a boundary group samples from (None = whole boundary)."""
        return None

    def sample_group(self, group: str, n: int, seed: int, boundary_generator="uniform-random"):
        from ..geometry import sample_boundary

        return sample_boundary(self.domain, n, seed=seed, tags=self.boundary_tags(group),
                               generator=boundary_generator)

    def extra_fields(self, group: str, points: PointSet) -> dict:
        """Fixed per-point data (forcing, targets, normals) as ``(n, 1)`` arrays."""
        return {}

    def build_terms(self, tape: ad.Tape, net, nodes: dict) -> dict:
        """Return ``{term name: per-point J node}`` (unweighted, unmasked)."""
        raise NotImplementedError

    def reference(self, points: np.ndarray) -> np.ndarray | None:
        """Exact solution at ``points`` (n, d) -> (n, k), or None if unknown."""
        return None

    # --- data -------------------------------------------------------------

    def point_data(self, group: str, points: PointSet) -> PointData:
        p = np.asarray(points.points, dtype=float)
        cols = {f"c{k}": p[:, k : k + 1].copy() for k in range(self.input_dim)}
        cols.update(self.extra_fields(group, points))
        for t in self.terms:
            if t.group == group and t.tags is not None:
                if points.tags is None:
                    raise UnknownRegionError(f"term {t.name} needs tagged boundary points")
                cols[f"mask:{t.name}"] = np.isin(points.tags, t.tags).astype(float)[:, None]
        return PointData(cols)


class LossGraph:
    """The problem's composite per-point loss compiled onto one tape.

    Each collocation index owns one point from every group; its composite
    loss is the sum over groups of ``sum_i weight_i * mask_i * J_i``. The
    tape is built once and re-evaluated for any batch size.
    """

    def __init__(self, problem: PDEProblem, net_config: nn.NetworkConfig, sample: dict):
        if net_config.input_dim != problem.input_dim or net_config.output_dim != problem.output_dim:
            raise ad.DimensionError(
                f"{problem.name} needs a {problem.input_dim} -> {problem.output_dim} network"
            )
        if net_config.activation == "relu" and problem.max_derivative_order >= 2:
            raise ad.UnsupportedError(
                "ReLU has a zero second derivative almost everywhere; "
                f"{problem.name} needs second input derivatives"
            )
        self.problem = problem
        self.activation = net_config.activation
        self.tape = tape = ad.Tape()
        self.input_keys: list[tuple[str, str]] = []
        self.params = nn.TapeParameters.register(tape, nn.init(net_config))

        nodes = {}
        for g in problem.groups:
            data = sample[g]
            group_nodes = {}
            for name, arr in data.fields.items():
                group_nodes[name] = tape.input(arr)
                self.input_keys.append((g, name))
            coords = [group_nodes[f"c{k}"] for k in range(problem.input_dim)]
            nodes[g] = {"coords": coords, "fields": group_nodes}

        def net(coords):
            return nn.forward(self.params, self.activation, coords)

        raw = problem.build_terms(tape, net, nodes)
        self.term_nodes = {}
        self.group_nodes = {}
        for t in problem.terms:
            j = raw[t.name]
            if t.tags is not None:
                j = nodes[t.group]["fields"][f"mask:{t.name}"] * j
            self.term_nodes[t.name] = j
            weighted = j if t.weight == 1.0 else t.weight * j
            prev = self.group_nodes.get(t.group)
            self.group_nodes[t.group] = weighted if prev is None else prev + weighted
        composite = None
        for g in problem.groups:
            if g in self.group_nodes:
                gn = self.group_nodes[g]
                composite = gn if composite is None else composite + gn
        self.composite = composite
        self.batch_weight = tape.input(np.ones((len(sample[problem.groups[0]]), 1)))
        self.objective = ad.total(self.batch_weight * composite)
        self._eval_outputs = [self.term_nodes[t.name] for t in problem.terms] + [
            self.group_nodes[g] for g in problem.groups if g in self.group_nodes
        ]

    @property
    def group_names(self) -> list[str]:
        return [g for g in self.problem.groups if g in self.group_nodes]

    def _inputs(self, data: dict, weights=None) -> list:
        vals = [data[g].fields[name] for g, name in self.input_keys]
        n = len(vals[0])
        vals.append(np.ones((n, 1)) if weights is None else np.asarray(weights, float).reshape(n, 1))
        return vals

    def evaluate(self, params: nn.Parameters, data: dict, chunk: int = 4096) -> dict:
        """Per-point term values and group losses, evaluated in row chunks.

        Returns ``{"terms": {name: (n,)}, "groups": {group: (n,)}}``. Term
        values are masked but unweighted.
        """
        flat = params.flat_list()
        n = len(data[self.problem.groups[0]])
        parts = []
        for a in range(0, n, chunk):
            sub = {g: d.take(slice(a, a + chunk)) for g, d in data.items()}
            ws = ad.evaluate(self.tape, self._inputs(sub), flat, self._eval_outputs, keep=False)
            parts.append([ws[o.id][:, 0] for o in self._eval_outputs])
        cols = [np.concatenate(c) for c in zip(*parts)]
        k = len(self.problem.terms)
        return {
            "terms": {t.name: cols[i] for i, t in enumerate(self.problem.terms)},
            "groups": {g: cols[k + i] for i, g in enumerate(self.group_names)},
        }

    def composite_from_groups(self, groups: dict) -> np.ndarray:
        out = None
        for g in self.group_names:
            out = groups[g] if out is None else out + groups[g]
        return out

    def objective_and_grad(self, params: nn.Parameters, data: dict, weights) -> tuple:
        """Gradient of ``sum_k weights_k * J(x_k)``; also returns term values."""
        ws = ad.evaluate(self.tape, self._inputs(data, weights), params.flat_list(),
                         [self.objective] + self._eval_outputs)
        grads = ad.grad_parameters(self.tape, self.objective, ws)
        k = len(self.problem.terms)
        terms = {t.name: ws[self.term_nodes[t.name].id][:, 0] for t in self.problem.terms}
        groups = {g: ws[self.group_nodes[g].id][:, 0] for g in self.group_names}
        return float(ws[self.objective.id]), grads, {"terms": terms, "groups": groups, "k": k}

    def per_point_gradient_norms(self, params: nn.Parameters, data: dict, chunk: int = 1024):
        """||dJ(x_j)/dtheta||_2 for every point, plus the per-point losses."""
        flat = params.flat_list()
        n = len(data[self.problem.groups[0]])
        norms, losses = [], []
        for a in range(0, n, chunk):
            sub = {g: d.take(slice(a, a + chunk)) for g, d in data.items()}
            ws = ad.evaluate(self.tape, self._inputs(sub), flat, [self.composite])
            per = ad.grad_parameters(self.tape, self.composite, ws, per_sample=True)
            sq = sum((g.reshape(len(g), -1) ** 2).sum(axis=1) for g in per)
            norms.append(np.sqrt(sq))
            losses.append(ws[self.composite.id][:, 0])
        return np.concatenate(norms), np.concatenate(losses)


def squared(node):
    return node * node
