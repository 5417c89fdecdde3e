import numpy as np
import pytest
from scipy.linalg import solve_banded

from pinn_is import autodiff as ad
from pinn_is.geometry import PointSet, halton_sequence, sample_boundary, sample_interior
from pinn_is.problems import (
    DiffusionProblem,
    ElasticityProblem,
    MaterialProperties,
    PlaneStressProblem,
    UnknownRegionError,
    diffusion_reference,
    elasticity_residuals,
)
from pinn_is.problems.diffusion import steady_state


def coord_nodes(pts):
    tape = ad.Tape()
    return tape, tape.input(pts[:, :1]), tape.input(pts[:, 1:2])


def column(tape, v):
    return tape.input(np.asarray(v, float).reshape(-1, 1))


# --------------------------------------------------------------- elasticity


def test_lame_constants():
    p = MaterialProperties(0.25, 0.2)
    assert p.lame_lambda == pytest.approx(0.0520833, abs=1e-7)
    assert p.lame_mu == pytest.approx(0.1041667, abs=1e-7)
    assert abs(p.lame_lambda - p.nu * p.E / ((1 + p.nu) * (1 - p.nu))) <= 1e-15
    assert abs(p.lame_mu - p.E / (2 * (1 + p.nu))) <= 1e-15


def manufactured_residuals(problem, pts):
    fx, fy = problem.solution.forcing(pts)
    tape, x, y = coord_nodes(pts)
    sol = problem.solution
    return elasticity_residuals(sol.u_node(x, y), sol.v_node(x, y), x, y, problem.props,
                                column(tape, fx), column(tape, fy))


def test_manufactured_solution_is_exact_root():
    prob = ElasticityProblem()
    pts = sample_interior(prob.domain, 1000, "halton").points
    n1, n2 = manufactured_residuals(prob, pts)
    assert np.max(np.abs(n1.value)) < 1e-8
    assert np.max(np.abs(n2.value)) < 1e-8


def test_manufactured_fields_closed_form():
    x, y = 0.3, -0.4
    u = 0.8 * np.sin(np.pi / 2 * (x + 0.78)) * np.cos(y - 1) - 0.8 * np.sin(
        np.pi / 2 * (x + 1.5)) * np.cos(y + 1)
    v = 0.72 - 0.65 * (np.exp(-x * x * y / 2) + x)
    sol = ElasticityProblem().solution
    assert sol.u(x, y) == pytest.approx(u, abs=1e-15)
    assert sol.v(x, y) == pytest.approx(v, abs=1e-15)


def test_forcing_matches_hand_differentiated_operator():
    # independent oracle: central differences of the closed-form field
    prob = ElasticityProblem()
    lam, mu = prob.props.lame_lambda, prob.props.lame_mu
    u, v = prob.solution.u, prob.solution.v
    h = 1e-4
    for x, y in [(0.1, 0.2), (-0.5, 0.3), (0.4, -0.6)]:
        uxx = (u(x + h, y) - 2 * u(x, y) + u(x - h, y)) / h**2
        uyy = (u(x, y + h) - 2 * u(x, y) + u(x, y - h)) / h**2
        vyy = (v(x, y + h) - 2 * v(x, y) + v(x, y - h)) / h**2
        vxx = (v(x + h, y) - 2 * v(x, y) + v(x - h, y)) / h**2
        vxy = (v(x + h, y + h) - v(x + h, y - h) - v(x - h, y + h) + v(x - h, y - h)) / (4 * h * h)
        uxy = (u(x + h, y + h) - u(x + h, y - h) - u(x - h, y + h) + u(x - h, y - h)) / (4 * h * h)
        fx = -((lam + mu) * (uxx + vxy) + mu * (uxx + uyy))
        fy = -((lam + mu) * (uxy + vyy) + mu * (vxx + vyy))
        got = prob.solution.forcing(np.array([[x, y]]))
        assert got[0][0, 0] == pytest.approx(fx, abs=1e-5)
        assert got[1][0, 0] == pytest.approx(fy, abs=1e-5)


def test_zero_field_residual_is_forcing():
    prob = ElasticityProblem()
    pts = np.array([[0.2, -0.1], [0.5, 0.3]])
    fx, fy = prob.solution.forcing(pts)
    tape, x, y = coord_nodes(pts)
    zero = 0.0 * x
    n1, n2 = elasticity_residuals(zero, zero, x, y, prob.props, column(tape, fx), column(tape, fy))
    assert np.array_equal(n1.value, fx)
    assert np.array_equal(n2.value, fy)


def test_exact_solution_losses_vanish():
    prob = ElasticityProblem()
    pts = sample_interior(prob.domain, 200).points
    fx, fy = prob.solution.forcing(pts)
    tape, x, y = coord_nodes(pts)
    u, v = prob.solution.u_node(x, y), prob.solution.v_node(x, y)
    j1 = prob.elasticity_loss("interior", u, v, x, y, {"fx": column(tape, fx), "fy": column(tape, fy)})
    assert np.max(j1.value) < 1e-15
    b = sample_boundary(prob.domain, 100).points
    tape, x, y = coord_nodes(b)
    fields = prob.extra_fields("boundary", PointSet(b, "boundary"))
    j2 = prob.elasticity_loss("boundary", prob.solution.u_node(x, y), prob.solution.v_node(x, y),
                              x, y, {k: column(tape, a) for k, a in fields.items()})
    assert np.max(j2.value) == 0.0


@pytest.mark.parametrize("split,expected", [(False, 0.0), (True, 2.0)])
def test_residual_cancellation_flag(split, expected):
    prob = ElasticityProblem(split_residual_squares=split)
    tape, x, y = coord_nodes(np.array([[0.1, 0.1]]))
    zero = 0.0 * x
    j1 = prob.interior_loss(zero, zero, x, y, column(tape, [1.0]), column(tape, [-1.0]))
    assert j1.value[0, 0] == expected


def test_elasticity_unknown_region():
    prob = ElasticityProblem()
    tape, x, y = coord_nodes(np.zeros((1, 2)))
    with pytest.raises(UnknownRegionError):
        prob.elasticity_loss("edge", x, y, x, y, {})


# ------------------------------------------------------------- plane stress


def ps_outputs(x, consts):
    return [0.0 * x + c for c in consts]


def test_plane_stress_fixed_edges():
    prob = PlaneStressProblem()
    tape, x, y = coord_nodes(np.array([[0.1, 1.0]]))
    outs = ps_outputs(x, [0, 0, 0, 0, 0])
    assert prob.plane_stress_loss("J2", outs, x, y, {}).value[0, 0] == 0.0
    assert prob.plane_stress_loss("J3", outs, x, y, {}).value[0, 0] == 1.0


def test_constant_outputs_satisfy_equilibrium():
    prob = PlaneStressProblem()
    tape, x, y = coord_nodes(np.random.default_rng(0).random((5, 2)))
    outs = ps_outputs(x, [0.3, -1.2, 4.0, 2.5, -0.7])
    assert np.all(prob.plane_stress_loss("J1", outs, x, y, {}).value == 0.0)


def test_constitutive_term_on_linear_field():
    prob = PlaneStressProblem()
    a, b, c, dd = 0.3, -0.2, 0.5, 0.1
    pts = np.random.default_rng(1).random((4, 2))
    tape, x, y = coord_nodes(pts)
    lam, mu = prob.lam_hat, prob.mu_hat
    # plane stress: sigma_xx = 2 mu / (lam + 2 mu) * (2 (lam + mu) e_xx + lam e_yy)
    sxx = 2 * mu * (2 * (lam + mu) * a + lam * dd) / (lam + 2 * mu)
    syy = 2 * mu * (2 * (lam + mu) * dd + lam * a) / (lam + 2 * mu)
    sxy = mu * (b + c)
    outs = [a * x + b * y, c * x + dd * y] + ps_outputs(x, [sxx, sxy, syy])
    j6 = prob.plane_stress_loss("J6", outs, x, y, {})
    assert np.max(j6.value) < 1e-28


def test_plane_stress_normalisation():
    prob = PlaneStressProblem()
    assert prob.mu_hat == 1.0
    lam = 210000 * 0.3 / (1.3 * 0.4)
    mu = 210000 / 2.6
    assert prob.lam_hat == pytest.approx(lam / mu, rel=1e-14)
    assert prob.imposed == -1.0


def test_hole_normals_and_traction():
    prob = PlaneStressProblem()
    ps = sample_boundary(prob.domain, 3000, tags=("hole-1", "hole-2", "hole-3"))
    f = prob.extra_fields("boundary", ps)
    assert np.allclose(f["nx"] ** 2 + f["ny"] ** 2, 1.0, atol=1e-12)
    tape, x, y = coord_nodes(ps.points[:3])
    outs = ps_outputs(x, [0.0, 0.0, 2.0, 3.0, 5.0])
    fields = {k: column(tape, a[:3]) for k, a in f.items()}
    j7 = prob.plane_stress_loss("J7", outs, x, y, fields).value[:, 0]
    assert np.allclose(j7, (2.0 * f["nx"][:3, 0] + 3.0 * f["ny"][:3, 0]) ** 2)


def test_plane_stress_hole_centres():
    prob = PlaneStressProblem()
    centres = [tuple(np.array(h.center) * prob.L) for h in prob.holes]
    assert np.allclose(centres, [(0, 20), (-9.67, -10), (9.67, -10)])
    assert all(abs(h.radius * prob.L - 7.5) < 1e-12 for h in prob.holes)


def test_plane_stress_unknown_region():
    prob = PlaneStressProblem()
    tape, x, y = coord_nodes(np.zeros((1, 2)))
    with pytest.raises(UnknownRegionError):
        prob.plane_stress_loss("J10", ps_outputs(x, [0] * 5), x, y, {})


# --------------------------------------------------------------- diffusion


def test_zero_field_diffusion_losses():
    prob = DiffusionProblem()
    pts = np.array([[0.3, 0.2], [0.0, 0.5], [0.7, 1.0]])
    tape, t, x = coord_nodes(pts)
    zero = 0.0 * t
    j1 = prob.diffusion_loss("interior", zero, t, x).value[:, 0]
    assert np.allclose(j1, 9 * pts[:, 1] ** 2, rtol=1e-15)
    assert prob.diffusion_loss("initial", zero, t, x).value[1, 0] == pytest.approx(6.25)
    assert np.all(prob.diffusion_loss("lateral", zero, t, x).value == 0)
    with pytest.raises(UnknownRegionError):
        prob.diffusion_loss("final", zero, t, x)


def test_paper_weights():
    prob = DiffusionProblem()
    assert [t.weight for t in prob.terms] == [1.0, 500.0, 500.0]


def test_reference_boundary_and_initial_values():
    t = np.linspace(0, 1, 21)
    assert np.max(np.abs(diffusion_reference(t, 0.0 * t))) < 1e-12
    assert np.max(np.abs(diffusion_reference(t, 0.0 * t + 1))) < 1e-12
    x = np.linspace(0, 1, 41)
    assert np.max(np.abs(diffusion_reference(0.0 * x, x) - 10 * (x - x * x))) < 1e-10
    # small positive t exercises the series near the initial condition
    assert np.max(np.abs(diffusion_reference(1e-6 + 0 * x, x) - 10 * (x - x * x))) < 1e-4


def test_long_time_limit():
    x = np.linspace(0, 1, 11)
    tail = diffusion_reference(1.0 + 0 * x, x) - steady_state(x)
    first_mode = 2 * (20 + 17) / np.pi**3 * np.exp(-np.pi**2) * np.sin(np.pi * x)
    assert np.max(np.abs(tail - first_mode)) < 1e-10


def crank_nicolson(t_end, nx=400, nt=4000):
    """Test-only oracle for u_t = u_xx + 3x, u(0)=u(1)=0, u(0,x)=10(x-x^2)."""
    x = np.linspace(0, 1, nx + 1)
    h, dt = 1 / nx, t_end / nt
    r = dt / h**2
    u = 10 * (x - x * x)
    n = nx - 1
    ab = np.zeros((3, n))
    ab[0, 1:] = -r / 2
    ab[1, :] = 1 + r
    ab[2, :-1] = -r / 2
    src = 3 * x[1:-1] * dt
    for _ in range(nt):
        inner = u[1:-1]
        rhs = inner + r / 2 * (u[2:] - 2 * inner + u[:-2]) + src
        u = np.concatenate([[0.0], solve_banded((1, 1), ab, rhs), [0.0]])
    return x, u


@pytest.mark.parametrize("t_end", [0.05, 0.3, 1.0])
def test_reference_matches_crank_nicolson(t_end):
    x, u = crank_nicolson(t_end)
    assert np.max(np.abs(diffusion_reference(t_end + 0 * x, x) - u)) < 1e-4


def test_reference_satisfies_pde():
    pts = 0.05 + 0.9 * halton_sequence(50, 2)
    t, x = pts[:, 0], pts[:, 1]
    h = 2e-4
    ut = (diffusion_reference(t + h, x) - diffusion_reference(t - h, x)) / (2 * h)
    uxx = (diffusion_reference(t, x + h) - 2 * diffusion_reference(t, x)
           + diffusion_reference(t, x - h)) / h**2
    assert np.max(np.abs(ut - uxx - 3 * x)) < 1e-5


# ------------------------------------------------------------------ generic


@pytest.mark.parametrize("make", [ElasticityProblem, DiffusionProblem, PlaneStressProblem])
def test_losses_nonnegative_for_random_network(make):
    from pinn_is import nn
    from pinn_is.problems import LossGraph

    prob = make()
    sample = {prob.groups[0]: prob.point_data(prob.groups[0],
                                              sample_interior(prob.domain, 64, seed=1))}
    for k, g in enumerate(prob.groups[1:], 1):
        sample[g] = prob.point_data(g, prob.sample_group(g, 64, seed=k))
    net = nn.NetworkConfig(2, prob.output_dim, (8, 8), "tanh", 3)
    graph = LossGraph(prob, net, sample)
    ev = graph.evaluate(nn.init(net), sample)
    for vals in ev["terms"].values():
        assert np.all(vals >= 0)
