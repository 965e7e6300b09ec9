import numpy as np
import pytest

from fsistab.errors import ConfigurationError
from fsistab.evolve import (CNStepper, beam_frequency_max, cn_step, default_dt, energy, evolve,
                            resolved_dt)
from fsistab.generator import (assemble_generator, build_ambient, cc_violating_ambient, null_state,
                               project_offnull)
from fsistab.grid import State, norm_H

from conftest import random_state


@pytest.fixture(scope="module")
def gen16(calc16):
    return assemble_generator(calc16, build_ambient(calc16, "zero"), 0)


def test_cn_step_fixed_point_at_null_vector(calc16):
    gen = assemble_generator(calc16, build_ambient(calc16, "solenoidal-vortex", 1.0), 1)
    n0 = null_state(calc16)
    assert norm_H(calc16, cn_step(gen, n0, 0.1) - n0) <= 1e-10 * norm_H(calc16, n0)


def test_cn_step_of_zero(calc16, gen16):
    z = State.zeros(calc16.geom)
    assert not np.any(cn_step(gen16, z, 0.05).flat())


def test_cn_step_solves_the_midpoint_system(calc16, gen16):
    s = gen16.admissible(random_state(calc16.geom, np.random.default_rng(0)))
    dt = 0.03
    s1 = cn_step(gen16, s, dt)
    lhs = s1.flat() - 0.5 * dt * gen16.matvec(s1.flat())
    rhs = s.flat() + 0.5 * dt * gen16.matvec(s.flat())
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_cn_second_order(calc8):
    gen = assemble_generator(calc8, build_ambient(calc8, "solenoidal-vortex", 1.0), 1)
    s0 = gen.admissible(random_state(calc8.geom, np.random.default_rng(0)))
    # steps well below 1 / (largest beam frequency) so every mode is resolved
    ends = [evolve(gen, s0, dt, 0.25, stride=10 ** 6)[0].state(-1) for dt in (1 / 512, 1 / 1024, 1 / 2048)]
    ratio = norm_H(calc8, ends[0] - ends[1]) / norm_H(calc8, ends[1] - ends[2])
    assert 3.5 <= ratio <= 4.5


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
def test_cn_rejects_bad_step(gen16, bad):
    with pytest.raises(ConfigurationError):
        CNStepper(gen16, bad)


def test_evolve_rejects_bad_horizon(calc16, gen16):
    s = State.zeros(calc16.geom)
    with pytest.raises(ConfigurationError):
        evolve(gen16, s, 0.1, 0.05)
    with pytest.raises(ConfigurationError):
        evolve(gen16, s, 0.1, 1.0, stride=0)
    bad = State.zeros(calc16.geom)
    bad.p[0] = np.inf
    with pytest.raises(ConfigurationError):
        evolve(gen16, bad, 0.1, 1.0)


def test_evolve_hits_the_horizon_exactly(calc16, gen16):
    traj, trace = evolve(gen16, State.zeros(calc16.geom), 0.3, 1.0)
    assert trace.times[-1] == pytest.approx(1.0, abs=1e-15)
    assert len(trace.times) == 5 and traj.dt == pytest.approx(0.25)


def test_null_vector_is_a_rest_state(calc16):
    gen = assemble_generator(calc16, build_ambient(calc16, "solenoidal-vortex", 1.0), 1)
    n0 = null_state(calc16)
    traj, trace = evolve(gen, n0, default_dt(calc16), 3.0, stride=8)
    assert np.ptp(trace.E) <= 1e-10
    for col in (trace.D, trace.Sdiv, trace.Skappa):
        assert np.abs(col).max() <= 1e-10
    assert norm_H(calc16, traj.state(-1) - n0) <= 1e-8


def test_energy_nonincreasing_without_ambient(calc16, gen16):
    s = project_offnull(calc16, gen16.admissible(random_state(calc16.geom, np.random.default_rng(4))),
                        null_state(calc16))
    _, trace = evolve(gen16, s, default_dt(calc16), 2.0)
    assert np.diff(trace.E).max() <= 1e-10 * trace.E[0]
    assert np.all(np.diff(trace.D) >= 0)


@pytest.mark.parametrize("preset,kappa", [("zero", 0), ("zero", 1), ("solenoidal-vortex", 0),
                                          ("solenoidal-vortex", 1), ("small-div", 0), ("small-div", 1)])
def test_balance_residual_round_off(calc16, preset, kappa):
    gen = assemble_generator(calc16, build_ambient(calc16, preset, 1.0), kappa)
    s = gen.admissible(random_state(calc16.geom, np.random.default_rng(7)))
    _, trace = evolve(gen, s, 1 / 32, 1.0)
    assert np.abs(trace.balance_residual).max() <= 1e-12 * max(trace.E[0], 1.0)
    assert trace.balance_residual[0] == 0.0


def test_q_conserved_for_solenoidal_ambient(calc16):
    gen = assemble_generator(calc16, build_ambient(calc16, "solenoidal-vortex", 1.0), 0)
    s = gen.admissible(random_state(calc16.geom, np.random.default_rng(8)))
    _, trace = evolve(gen, s, 1 / 32, 2.0)
    assert np.ptp(trace.Q) <= 1e-10


def test_interface_term_is_needed_for_balance(calc16):
    gen = assemble_generator(calc16, cc_violating_ambient(calc16), 1)
    s = gen.admissible(random_state(calc16.geom, np.random.default_rng(9)))
    _, trace = evolve(gen, s, 1 / 32, 1.0)
    assert np.abs(trace.balance_residual).max() <= 1e-12 * max(trace.E[0], 1.0)
    dropped = trace.balance_residual + trace.Skappa
    assert np.abs(dropped).max() > 1e-6


def test_energy_helpers(calc16):
    assert default_dt(calc16) == pytest.approx(1 / 32)
    # frozen from a reference computation
    assert beam_frequency_max(calc16) == pytest.approx(999.4775313994814, rel=1e-10)
    assert resolved_dt(calc16) == pytest.approx(4 / 999.4775313994814, rel=1e-10)
    s = random_state(calc16.geom, np.random.default_rng(0))
    assert energy(calc16, s) > 0


def test_trajectory_stride(calc16, gen16):
    traj, trace = evolve(gen16, null_state(calc16), 0.1, 1.0, stride=3)
    assert np.allclose(traj.times, [0.0, 0.3, 0.6, 0.9, 1.0])
    assert len(traj) == 5 and len(trace.times) == 11
