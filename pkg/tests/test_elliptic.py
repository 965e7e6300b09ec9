import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsistab.elliptic import (BeamSolver, LerayProjector, NeumannSolver, beam_biharmonic_solve,
                              leray_project, neumann_solve)
from fsistab.errors import CompatibilityError
from fsistab.generator import vortex_stream
from fsistab.grid import build_calculus, build_geometry


def _calc(n):
    return build_calculus(build_geometry(1.0, 1.0, n, n))


# --- beam ---------------------------------------------------------------------

def test_unit_load_deflection_midpoint():
    # frozen: the clamped 5-point stencil gives 11/4096 at h = 1/16
    w = BeamSolver(_calc(16)).unit_deflection
    assert w[8] == pytest.approx(11 / 4096, rel=1e-12)
    errs = [abs(BeamSolver(_calc(n)).unit_deflection[n // 2] - 1 / 384) for n in (16, 32, 64)]
    assert 3.5 <= errs[0] / errs[1] <= 4.5 and 3.5 <= errs[1] / errs[2] <= 4.5


def test_beam_zero_load(calc16):
    assert np.abs(beam_biharmonic_solve(calc16, np.zeros(17))).max() == 0.0


def test_beam_scaled_load_recovers_polynomial():
    errs = []
    for n in (16, 32, 64):
        calc = _calc(n)
        xb = np.linspace(0, 1, n + 1)
        w = beam_biharmonic_solve(calc, np.full(n + 1, 24.0))
        errs.append(np.abs(w - xb ** 2 * (1 - xb) ** 2).max())
    assert errs[0] == pytest.approx(0.0019531250000000555, rel=1e-9)
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_beam_solution_is_clamped_and_residual_small(calc16):
    rng = np.random.default_rng(0)
    rhs = rng.standard_normal(17)
    w = beam_biharmonic_solve(calc16, rhs)
    I = calc16.beam_interior
    assert w[0] == w[-1] == 0.0
    assert np.linalg.norm(calc16.D4 @ w[I] - rhs[I]) <= 1e-12 * np.linalg.norm(rhs[I]) * 1e3


# --- Neumann ------------------------------------------------------------------

def _neumann_errors(case):
    out = []
    for n in (16, 32, 64):
        calc = _calc(n)
        g = calc.geom
        xb = np.linspace(0, 1, g.n_beam)
        if case == "interior":
            exact = g.sample(lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
            psi = neumann_solve(calc, 2 * np.pi ** 2 * exact, np.zeros(g.n_beam))
        else:
            exact = g.sample(lambda x, y: np.cos(np.pi * x) * np.cosh(np.pi * (y + 1))
                             / (np.pi * np.sinh(np.pi)))
            exact -= calc.ip_o(exact, np.ones(g.n_nodes))
            psi = neumann_solve(calc, np.zeros(g.n_nodes), np.cos(np.pi * xb))
        e = psi - exact
        out.append(np.sqrt(calc.ip_o(e, e)))
    return out


@pytest.mark.parametrize("case,frozen", [("interior", 0.00806769992057215),
                                         ("flux", 0.0013166070986318273)])
def test_neumann_manufactured_second_order(case, frozen):
    errs = _neumann_errors(case)
    assert errs[0] == pytest.approx(frozen, rel=1e-8)
    for a, b in zip(errs, errs[1:]):
        assert 3.5 <= a / b <= 4.5


def test_neumann_zero_data(calc16):
    r = NeumannSolver(calc16).solve(np.zeros(289), np.zeros(17))
    assert np.abs(r.psi).max() <= 1e-14
    assert r.bound_ratio == 0.0


def test_neumann_solution_is_zero_mean(calc16):
    g = calc16.geom
    f = g.sample(lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
    psi = neumann_solve(calc16, f, np.zeros(17))
    assert abs(calc16.ip_o(psi, np.ones(g.n_nodes))) <= 1e-14


def test_neumann_incompatible_data_names_defect(calc16):
    with pytest.raises(CompatibilityError) as info:
        NeumannSolver(calc16).solve(np.ones(289), np.zeros(17))
    assert info.value.defect == pytest.approx(1.0)
    assert "1.000e+00" in str(info.value)


def _compatible(calc, rng):
    g = calc.geom
    f = rng.standard_normal(g.n_nodes)
    gg = rng.standard_normal(g.n_beam)
    f -= calc.ip_o(f, np.ones(g.n_nodes)) + calc.ip_b(gg, np.ones(g.n_beam))
    return f, gg


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_neumann_linear(seed, a, b):
    calc = _calc(8)
    ns = NeumannSolver(calc)
    rng = np.random.default_rng(seed)
    f1, g1 = _compatible(calc, rng)
    f2, g2 = _compatible(calc, rng)
    lhs = ns.solve(a * f1 + b * f2, a * g1 + b * g2).psi
    rhs = a * ns.solve(f1, g1).psi + b * ns.solve(f2, g2).psi
    scale = max(1.0, np.abs(lhs).max())
    assert np.abs(lhs - rhs).max() <= 1e-12 * scale


def test_neumann_pressure_recovery_identity(calc16):
    # <Grad psi, Grad chi> = <f, chi> + <g, chi on the interface> exactly
    rng = np.random.default_rng(5)
    f, g = _compatible(calc16, rng)
    psi = neumann_solve(calc16, f, g)
    chi = rng.standard_normal(289)
    gp, gc = calc16.grad(psi), calc16.grad(chi)
    lhs = calc16.ip_o_vec(gp, gc)
    rhs = calc16.ip_o(f, chi) + calc16.ip_b(g, calc16.trace_top(chi))
    assert lhs == pytest.approx(rhs, rel=1e-11)


# --- Leray --------------------------------------------------------------------

def test_leray_keeps_discrete_curl(calc16):
    phi = vortex_stream(calc16.geom)
    u = (calc16.Dy @ phi, -(calc16.Dx @ phi))
    d = leray_project(calc16, u)
    assert max(np.abs(d.Pu[0] - u[0]).max(), np.abs(d.Pu[1] - u[1]).max()) <= 1e-10
    assert np.abs(d.q).max() <= 1e-10


def test_leray_removes_gradient(calc16):
    g = calc16.geom
    r = g.sample(lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
    u = calc16.grad(r)
    u = (u[0] * (~np.isin(np.arange(g.n_nodes), np.r_[g.left, g.right])),
         u[1] * (~np.isin(np.arange(g.n_nodes), np.r_[g.top, g.bottom])))
    lp = LerayProjector(calc16)
    d = lp.project(u)
    assert max(np.abs(d.Pu[0]).max(), np.abs(d.Pu[1]).max()) <= 1e-10
    # q is fixed only up to the gradient null space
    diff = lp.orthogonalize(d.q - r)
    assert np.abs(diff).max() <= 1e-10


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_leray_invariants_random(seed):
    calc = _calc(12)
    lp = LerayProjector(calc)
    g = calc.geom
    rng = np.random.default_rng(seed)
    u = (rng.standard_normal(g.n_nodes), rng.standard_normal(g.n_nodes))
    Pu = lp.project(u).Pu
    again = lp.project(Pu).Pu
    assert max(np.abs(again[0] - Pu[0]).max(), np.abs(again[1] - Pu[1]).max()) <= 1e-10
    assert np.abs(calc.div(Pu)).max() <= 1e-10
    for nodes, _, (n1, n2) in calc.edge_weights:
        assert np.abs(n1 * Pu[0][nodes] + n2 * Pu[1][nodes]).max() == 0.0
    rest = (u[0] - Pu[0], u[1] - Pu[1])
    assert abs(calc.ip_o_vec(Pu, rest)) <= 1e-10 * calc.ip_o_vec(u, u)


def test_leray_potential_bound_reported(calc16):
    rng = np.random.default_rng(1)
    u = (rng.standard_normal(289), rng.standard_normal(289))
    d = leray_project(calc16, u)
    assert np.isfinite(d.bound_ratio) and d.bound_ratio > 0
    assert abs(calc16.ip_o(d.q, np.ones(289))) <= 1e-12 * np.abs(d.q).max()
