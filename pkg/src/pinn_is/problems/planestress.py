"""Plane stress in a bolted cover plate with three holes (mixed u/sigma form).

Network outputs, in order: u, v, sigma_xx, sigma_xy, sigma_yy, all in
normalised units: x/L, u/U and sigma * L / (mu_c * U) with mu_c = mu.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import input_partial as d
from ..geometry import Hole, PointSet, plate_with_holes
from .base import PDEProblem, Term, UnknownRegionError, squared

# plate geometry in millimetres
WIDTH, HEIGHT = 55.0, 70.0
HOLE_RADIUS = 7.5
HOLE_CENTERS = ((0.0, 20.0), (-9.67, -10.0), (9.67, -10.0))
IMPOSED_DISPLACEMENT = 1.5

DEFAULT_WEIGHTS = (500.0, 1000.0, 1000.0, 75.0, 75.0, 200.0, 75.0, 75.0, 75.0)

# which region tags each boundary term covers
REGIONS = {
    "J2": ("top-edge", "hole-1-top", "hole-2-top", "hole-3-top"),
    "J3": ("bottom-edge",),
    "J4": ("left-edge",),
    "J5": ("right-edge",),
    "J7": ("hole-1",),
    "J8": ("hole-2",),
    "J9": ("hole-3",),
}
INTERIOR_TERMS = ("J1", "J6")


class PlaneStressProblem(PDEProblem):
    def __init__(self, E: float = 210_000.0, nu: float = 0.3, length_scale: float = 35.0,
                 displacement_scale: float = IMPOSED_DISPLACEMENT, weights=DEFAULT_WEIGHTS,
                 hole_centers=HOLE_CENTERS, hole_radius: float = HOLE_RADIUS):
        if len(weights) != 9:
            raise ValueError("plane stress needs nine loss weights")
        self.E, self.nu = float(E), float(nu)
        self.L, self.U = float(length_scale), float(displacement_scale)
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        self.mu_c = mu
        self.lam_hat, self.mu_hat = lam / mu, 1.0
        self.imposed = -IMPOSED_DISPLACEMENT / self.U
        self.holes = tuple(
            Hole((cx / self.L, cy / self.L), hole_radius / self.L) for cx, cy in hole_centers
        )
        domain = plate_with_holes(
            (-WIDTH / 2 / self.L, -HEIGHT / 2 / self.L), (WIDTH / 2 / self.L, HEIGHT / 2 / self.L),
            self.holes, split_top_quarter=True,
        )
        names = [f"J{i}" for i in range(1, 10)]
        terms = tuple(
            Term(n, "interior", w) if n in INTERIOR_TERMS else Term(n, "boundary", w, REGIONS[n])
            for n, w in zip(names, weights)
        )
        super().__init__(
            name="planestress", domain=domain, input_dim=2, output_dim=5, terms=terms,
            max_derivative_order=1,
            config={"E": E, "nu": nu, "L": self.L, "U": self.U, "mu_c": mu,
                    "weights": tuple(weights)},
        )

    def extra_fields(self, group: str, points: PointSet) -> dict:
        if group != "boundary":
            return {}
        p = points.points
        nx = np.zeros((len(p), 1))
        ny = np.zeros((len(p), 1))
        for k, h in enumerate(self.holes, 1):
            on = np.isin(points.tags, (f"hole-{k}", f"hole-{k}-top"))
            nx[on, 0] = (p[on, 0] - h.center[0]) / h.radius
            ny[on, 0] = (p[on, 1] - h.center[1]) / h.radius
        return {"nx": nx, "ny": ny}

    def constitutive_stress(self, u, v, x, y):
        """Stresses implied by the displacement nodes (plane stress)."""
        lam, mu = self.lam_hat, self.mu_hat
        ux, vy = d(u, x), d(v, y)
        div = ux + vy
        shared = lam * (div - (lam / (lam + 2 * mu)) * div)
        sxx = shared + 2 * mu * ux
        syy = shared + 2 * mu * vy
        sxy = mu * (d(u, y) + d(v, x))
        return sxx, sxy, syy

    def plane_stress_loss(self, region: str, outputs, x, y, fields: dict):
        """Unweighted J_i for one region label ``J1`` .. ``J9``."""
        u, v, sxx, sxy, syy = outputs
        if region == "J1":
            return squared(d(sxx, x) + d(sxy, y)) + squared(d(sxy, x) + d(syy, y))
        if region == "J2":
            return squared(u) + squared(v)
        if region == "J3":
            return squared(u) + squared(v - self.imposed)
        if region in ("J4", "J5"):
            return squared(sxx) + squared(sxy)
        if region == "J6":
            hxx, hxy, hyy = self.constitutive_stress(u, v, x, y)
            return squared(hxx - sxx) + squared(hxy - sxy) + squared(hyy - syy)
        if region in ("J7", "J8", "J9"):
            return squared(sxx * fields["nx"] + sxy * fields["ny"])
        raise UnknownRegionError(f"plane stress has no region {region!r}")

    def build_terms(self, tape, net, nodes):
        terms = {}
        for group in ("interior", "boundary"):
            g = nodes[group]
            x, y = g["coords"]
            outs = net([x, y])
            for t in self.terms:
                if t.group == group:
                    terms[t.name] = self.plane_stress_loss(t.name, outs, x, y, g["fields"])
        return terms
