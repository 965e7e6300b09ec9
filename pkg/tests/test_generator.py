import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsistab.elliptic import BeamSolver
from fsistab.errors import AssemblyError, ConfigurationError
from fsistab.generator import (assemble_generator, build_ambient, cc_violating_ambient, check_cc,
                               checkerboard_modes, null_functional, null_residual, null_state,
                               null_vector, project_offnull)
from fsistab.grid import State, build_calculus, build_geometry, inner_product_H, norm_H

from conftest import random_state


# --- ambient fields -----------------------------------------------------------

def test_zero_ambient(calc16):
    amb = build_ambient(calc16, "zero", 0.0)
    assert not np.any(amb.U1) and not np.any(amb.U2) and not np.any(amb.divU)
    assert amb.psiU == 1.0


def test_vortex_ambient_is_tangent_and_solenoidal(calc16):
    amb = build_ambient(calc16, "solenoidal-vortex", 1.0)
    assert amb.normal_trace_max(calc16.geom) <= 1e-14
    assert np.abs(amb.divU).max() <= 1e-12
    assert amb.psiU > 1.0


def test_small_div_scales_linearly(calc16):
    a = build_ambient(calc16, "small-div", 0.3)
    b = build_ambient(calc16, "small-div", 0.6)
    assert np.abs(b.divU).max() / np.abs(a.divU).max() == pytest.approx(2.0, abs=1e-10)
    assert a.normal_trace_max(calc16.geom) == 0.0
    assert np.abs(a.divU).max() > 0


def test_small_div_divergence_defect_is_second_order():
    defects = []
    for n in (16, 32):
        calc = build_calculus(build_geometry(1, 1, n, n))
        defects.append(build_ambient(calc, "small-div", 1.0).div_defect)
    assert defects[0] / defects[1] > 1.9


@pytest.mark.parametrize("preset,amp", [("vortex", 1.0), ("zero", -1.0)])
def test_ambient_rejects_bad_requests(calc8, preset, amp):
    with pytest.raises(ConfigurationError):
        build_ambient(calc8, preset, amp)


# --- compatibility condition ----------------------------------------------------

def test_cc_zero_and_vortex_pass(calc16):
    for preset in ("zero", "solenoidal-vortex"):
        rep = check_cc(calc16, build_ambient(calc16, preset, 1.0))
        assert rep.passed and rep.max_defect <= 1e-12


def test_cc_violation_detected(calc16):
    beam = BeamSolver(calc16)
    amb = cc_violating_ambient(calc16, beam)
    rep = check_cc(calc16, amb, beam)
    slope = calc16.Db @ beam.unit_deflection
    assert rep.max_defect == pytest.approx(np.max(slope ** 2), rel=1e-12)
    assert not rep.passed


# --- assembly -----------------------------------------------------------------

def test_invalid_kappa(calc8):
    with pytest.raises(ConfigurationError):
        assemble_generator(calc8, build_ambient(calc8, "zero"), 2)


def test_constant_pressure_drives_only_the_interface(calc16):
    gen = assemble_generator(calc16, build_ambient(calc16, "zero"), 0)
    g = calc16.geom
    s = State.zeros(g)
    s.p[:] = 2.5
    ds = gen.apply(s)
    d = gen.dofs
    # the beam carries the fluid layer on the interface nodes as added mass
    expected = 2.5 * calc16.wb[d.beam_int] / (calc16.wb[d.beam_int] + calc16.wo[d.top_int])
    assert np.abs(ds.p).max() <= 1e-12 and np.abs(ds.w).max() == 0
    assert np.allclose(ds.v[d.beam_int], expected, rtol=1e-12)
    assert np.allclose(ds.u2[g.top][d.beam_int], expected, rtol=1e-12)
    interior = np.setdiff1d(np.arange(g.n_nodes), g.top)
    assert np.abs(ds.u1).max() <= 1e-12 and np.abs(ds.u2[interior]).max() <= 1e-12


@pytest.mark.parametrize("kappa", [0, 1])
def test_beam_velocity_feeds_displacement(calc16, kappa):
    gen = assemble_generator(calc16, build_ambient(calc16, "solenoidal-vortex", 1.0), kappa)
    s = State.zeros(calc16.geom)
    s.v[1:-1] = np.random.default_rng(0).standard_normal(15)
    s = gen.admissible(s)
    assert np.array_equal(gen.apply(s).w, s.v)


@pytest.mark.parametrize("preset,kappa", [("zero", 0), ("zero", 1), ("solenoidal-vortex", 0),
                                          ("solenoidal-vortex", 1), ("small-div", 0)])
def test_null_vector_residual(calc16, preset, kappa):
    gen = assemble_generator(calc16, build_ambient(calc16, preset, 1.0), kappa)
    assert null_residual(gen, null_state(calc16)) <= 1e-10


def test_null_vector_operation(calc16):
    nv = null_vector(calc16, build_ambient(calc16, "solenoidal-vortex", 1.0))
    assert set(nv.residuals) == {"kappa0", "kappa1"}
    assert max(nv.residuals.values()) <= 1e-10


def test_null_vector_breaks_without_cc(calc16):
    amb = cc_violating_ambient(calc16)
    nv = null_vector(calc16, amb)
    assert "kappa1" not in nv.residuals
    assert null_residual(assemble_generator(calc16, amb, 1), nv.n0) > 1e-6


def test_null_vector_failure_raises(calc16, monkeypatch):
    import fsistab.generator as gmod

    monkeypatch.setattr(gmod, "null_residual", lambda gen, n0: 1.0)
    with pytest.raises(AssemblyError):
        gmod.null_vector(calc16)


def test_pressure_checkerboards_are_filtered(calc16):
    S = checkerboard_modes(calc16)
    W = calc16.wo
    assert np.allclose(S.T @ (W[:, None] * S), np.eye(3), atol=1e-12)
    assert np.abs(S.T @ W).max() <= 1e-12
    gen = assemble_generator(calc16, build_ambient(calc16, "zero"), 0)
    s = gen.admissible(random_state(calc16.geom, np.random.default_rng(0)))
    assert np.abs(S.T @ (W * gen.apply(s).p)).max() <= 1e-10


# --- energy identity and conservation -------------------------------------------

@pytest.mark.parametrize("preset,kappa", [("zero", 0), ("solenoidal-vortex", 1), ("small-div", 0),
                                          ("small-div", 1)])
def test_energy_rate_identity(calc16, preset, kappa):
    gen = assemble_generator(calc16, build_ambient(calc16, preset, 0.7), kappa)
    rng = np.random.default_rng(11)
    for _ in range(3):
        s = gen.admissible(random_state(calc16.geom, rng))
        ds = gen.apply(s)
        lhs = inner_product_H(calc16, s, ds)
        rhs = -gen.dissipation_rate(s) + gen.divergence_source(s) + gen.interface_source(s, ds)
        assert lhs == pytest.approx(rhs, rel=1e-11)


def test_interface_source_nonzero_without_cc(calc16):
    gen = assemble_generator(calc16, cc_violating_ambient(calc16), 1)
    s = gen.admissible(random_state(calc16.geom, np.random.default_rng(2)))
    assert abs(gen.interface_source(s)) > 1e-3


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_null_functional_conserved_when_solenoidal(seed):
    calc = build_calculus(build_geometry(1, 1, 10, 10))
    gen = assemble_generator(calc, build_ambient(calc, "solenoidal-vortex", 1.0), 0)
    s = gen.admissible(random_state(calc.geom, np.random.default_rng(seed)))
    assert abs(null_functional(calc, gen.apply(s))) <= 1e-10 * norm_H(calc, s)


def test_dense_forms_agree(calc8):
    gen = assemble_generator(calc8, build_ambient(calc8, "solenoidal-vortex", 1.0), 1)
    x = random_state(calc8.geom, np.random.default_rng(4)).flat()
    assert np.allclose(gen.full_dense() @ x, gen.matvec(x), atol=1e-10)
    assert np.allclose(gen.A @ x, gen.matvec(x))


# --- off-null projection --------------------------------------------------------

def test_project_offnull_of_null_vector(calc16):
    n0 = null_state(calc16)
    assert norm_H(calc16, project_offnull(calc16, n0, n0)) <= 1e-14


def test_project_offnull_constant_pressure(calc16):
    n0 = null_state(calc16)
    s = State.zeros(calc16.geom)
    s.p[:] = 1.0
    r = project_offnull(calc16, s, n0)
    eps = inner_product_H(calc16, n0, n0) - 1.0
    assert np.allclose(r.p, eps / (1 + eps), rtol=1e-12)
    assert np.allclose(r.w, -n0.w / (1 + eps), rtol=1e-12)
    # the exact value 1/721 is reached at O(h^2)
    assert r.p[0] == pytest.approx(1 / 721, rel=0.05)
    assert abs(null_functional(calc16, r)) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_project_offnull_orthogonal_and_idempotent(seed):
    calc = build_calculus(build_geometry(1, 1, 8, 8))
    n0 = null_state(calc)
    s = random_state(calc.geom, np.random.default_rng(seed))
    r = project_offnull(calc, s, n0)
    assert abs(inner_product_H(calc, r, n0)) <= 1e-12 * norm_H(calc, s)
    assert abs(null_functional(calc, r)) <= 1e-12 * norm_H(calc, s)
    rr = project_offnull(calc, r, n0)
    assert norm_H(calc, rr - r) <= 1e-12 * norm_H(calc, s)
