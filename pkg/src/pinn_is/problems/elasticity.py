"""2D isotropic elasticity with a manufactured displacement field."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import input_partial as d
from ..geometry import Domain, PointSet, load_polygon_file, polygon
from .base import PDEProblem, Term, UnknownRegionError, squared


@dataclass(frozen=True)
class MaterialProperties:
    E: float
    nu: float

    @property
    def lame_lambda(self) -> float:
        return self.nu * self.E / ((1.0 + self.nu) * (1.0 - self.nu))

    @property
    def lame_mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))


class ManufacturedSolution:
    """Prescribed displacement field; forcing is derived by autodiff."""

    def __init__(self, props: MaterialProperties):
        self.props = props

    @staticmethod
    def u(x, y):
        return 0.8 * np.sin(np.pi / 2 * (x + 0.78)) * np.cos(y - 1.0) - 0.8 * np.sin(
            np.pi / 2 * (x + 1.50)
        ) * np.cos(y + 1.0)

    @staticmethod
    def v(x, y):
        return 0.72 - 0.65 * (np.exp(-(x**2) * y / 2.0) + x)

    @staticmethod
    def u_node(x, y):
        half_pi = np.pi / 2
        return 0.8 * ad.sin(half_pi * (x + 0.78)) * ad.cos(y - 1.0) - 0.8 * ad.sin(
            half_pi * (x + 1.50)
        ) * ad.cos(y + 1.0)

    @staticmethod
    def v_node(x, y):
        return 0.72 - 0.65 * (ad.exp(-(x * x * y) / 2.0) + x)

    def forcing(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(f_x, f_y) making the prescribed field an exact root of the residuals."""
        p = np.asarray(points, dtype=float)
        tape = ad.Tape()
        x = tape.input(p[:, 0:1])
        y = tape.input(p[:, 1:2])
        zero = tape.apply("zeros_like", x)
        n1, n2 = elasticity_residuals(self.u_node(x, y), self.v_node(x, y), x, y, self.props,
                                      zero, zero)
        return -n1.value, -n2.value


def elasticity_residuals(u, v, x, y, props: MaterialProperties, fx, fy):
    """Navier-type residual nodes (N1, N2) for displacement nodes ``u``, ``v``."""
    lam, mu = props.lame_lambda, props.lame_mu
    div = d(u, x) + d(v, y)
    n1 = (lam + mu) * d(div, x) + mu * (d(u, x, 2) + d(u, y, 2)) + fx
    n2 = (lam + mu) * d(div, y) + mu * (d(v, x, 2) + d(v, y, 2)) + fy
    return n1, n2


def default_plate(n_vertices: int = 64) -> Domain:
    """Smooth irregular blob standing in for the elasticity plate outline."""
    th = 2 * np.pi * np.arange(n_vertices) / n_vertices
    r = 1.0 + 0.18 * np.cos(3 * th + 0.4) + 0.08 * np.sin(2 * th) - 0.05 * np.cos(5 * th)
    return polygon(np.stack([r * np.cos(th), r * np.sin(th)], axis=1))


class ElasticityProblem(PDEProblem):
    def __init__(self, props: MaterialProperties | None = None, domain: Domain | None = None,
                 boundary_weight: float = 1.0, split_residual_squares: bool = False,
                 geometry_file=None):
        self.props = props or MaterialProperties(0.25, 0.2)
        if domain is None:
            domain = load_polygon_file(geometry_file) if geometry_file else default_plate()
        self.solution = ManufacturedSolution(self.props)
        self.split_residual_squares = split_residual_squares
        super().__init__(
            name="elasticity",
            domain=domain,
            input_dim=2,
            output_dim=2,
            terms=(Term("J1", "interior", 1.0), Term("J2", "boundary", boundary_weight)),
            config={"E": self.props.E, "nu": self.props.nu, "lambda2": boundary_weight,
                    "split_residual_squares": split_residual_squares},
        )

    def extra_fields(self, group: str, points: PointSet) -> dict:
        p = points.points
        if group == "interior":
            fx, fy = self.solution.forcing(p)
            return {"fx": fx, "fy": fy}
        return {"uB": self.solution.u(p[:, 0:1], p[:, 1:2]),
                "vB": self.solution.v(p[:, 0:1], p[:, 1:2])}

    def interior_loss(self, u, v, x, y, fx, fy):
        n1, n2 = elasticity_residuals(u, v, x, y, self.props, fx, fy)
        if self.split_residual_squares:
            return squared(n1) + squared(n2)
        return squared(n1 + n2)

    @staticmethod
    def boundary_loss(u, v, u_b, v_b):
        return squared(u - u_b) + squared(v - v_b)

    def elasticity_loss(self, region: str, u, v, x, y, fields: dict):
        """Per-point loss node for an ``interior`` or ``boundary`` point (unweighted)."""
        if region == "interior":
            return self.interior_loss(u, v, x, y, fields["fx"], fields["fy"])
        if region == "boundary":
            return self.boundary_loss(u, v, fields["uB"], fields["vB"])
        raise UnknownRegionError(f"elasticity has no region {region!r}")

    def build_terms(self, tape, net, nodes):
        terms = {}
        for group, name in (("interior", "J1"), ("boundary", "J2")):
            g = nodes[group]
            x, y = g["coords"]
            u, v = net([x, y])
            terms[name] = self.elasticity_loss(group, u, v, x, y, g["fields"])
        return terms

    def reference(self, points):
        p = np.asarray(points, dtype=float)
        return np.hstack([self.solution.u(p[:, 0:1], p[:, 1:2]),
                          self.solution.v(p[:, 0:1], p[:, 1:2])])
