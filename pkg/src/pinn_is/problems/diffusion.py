"""Transient 1D diffusion with a source, on the (t, x) unit square."""
from __future__ import annotations

import numpy as np

from ..autodiff import input_partial as d
from ..geometry import space_time_box
from .base import PDEProblem, Term, UnknownRegionError, squared

TAIL_TOL = 1e-10
_B_BOUND = 74.0 / np.pi**3  # max_n |b_n| * n^3


def steady_state(x):
    return (x - x**3) / 2.0


def initial_condition(x):
    return 10.0 * (x - x**2)


def series_coefficients(n_terms: int) -> np.ndarray:
    """Sine coefficients of initial_condition - steady_state, n = 1..n_terms."""
    n = np.arange(1, n_terms + 1, dtype=float)
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    return 2.0 * (20.0 - 17.0 * sign) / (np.pi**3 * n**3)


def _terms_needed(t_min: float, tol: float = TAIL_TOL, cap: int = 200_000) -> int:
    # tail bound: sum_{n>K} |b_n| e^{-n^2 pi^2 t} <= B e^{-(K+1)^2 pi^2 t} / (2 K^2)
    k = 1
    while k < cap:
        bound = _B_BOUND * np.exp(-((k + 1) ** 2) * np.pi**2 * t_min) / (2.0 * k * k)
        if bound < tol:
            return k
        k = int(k * 1.25) + 1
    return cap


def diffusion_reference(t, x) -> np.ndarray:
    """u(t, x) by separation of variables, truncated once the tail is < 1e-10.

    At t = 0 the initial condition is returned directly (the series converges
    there only algebraically).
    """
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    out = steady_state(x).astype(float).copy()
    at_zero = t <= 0.0
    out[at_zero] = initial_condition(x[at_zero])
    pos = ~at_zero
    if np.any(pos):
        tp, xp = t[pos].ravel(), x[pos].ravel()
        order = np.argsort(tp)
        acc = np.zeros(tp.size)
        # small t needs many modes; evaluate in blocks sorted by t
        for block in np.array_split(order, max(1, tp.size // 512)):
            if block.size == 0:
                continue
            k = _terms_needed(tp[block].min())
            b = series_coefficients(k)
            n = np.arange(1, k + 1, dtype=float)
            decay = np.exp(-np.outer(tp[block], n**2) * np.pi**2)
            acc[block] = (decay * np.sin(np.outer(xp[block], n) * np.pi)) @ b
        out[pos] = out[pos] + acc.reshape(out[pos].shape)
    return out


class DiffusionProblem(PDEProblem):
    def __init__(self, initial_weight: float = 500.0, boundary_weight: float = 500.0):
        super().__init__(
            name="diffusion",
            domain=space_time_box(),
            input_dim=2,
            output_dim=1,
            terms=(
                Term("J1", "interior", 1.0),
                Term("J2", "initial", initial_weight),
                Term("J3", "lateral", boundary_weight),
            ),
            groups=("interior", "initial", "lateral"),
            config={"lambda1": initial_weight, "lambda2": boundary_weight},
        )

    def boundary_tags(self, group):
        return {"initial": ("initial",), "lateral": ("left", "right")}[group]

    def diffusion_loss(self, region: str, u, t, x):
        """Unweighted per-point loss for interior / initial / lateral points."""
        if region == "interior":
            return squared(d(u, t) - d(u, x, 2) - 3.0 * x)
        if region == "initial":
            return squared(u - 10.0 * (x - x * x))
        if region == "lateral":
            return squared(u)
        raise UnknownRegionError(f"diffusion has no region {region!r}")

    def build_terms(self, tape, net, nodes):
        terms = {}
        for group, name in (("interior", "J1"), ("initial", "J2"), ("lateral", "J3")):
            t, x = nodes[group]["coords"]
            (u,) = net([t, x])
            terms[name] = self.diffusion_loss(group, u, t, x)
        return terms

    def reference(self, points):
        p = np.asarray(points, dtype=float)
        return diffusion_reference(p[:, 0], p[:, 1])[:, None]
