"""Quick invariant suites run by ``fsistab selftest``."""

from __future__ import annotations

import numpy as np

from fsistab.analyze import decay_fit
from fsistab.elliptic import BeamSolver, LerayProjector, NeumannSolver
from fsistab.evolve import EnergyTrace, evolve
from fsistab.generator import (assemble_generator, build_ambient, check_cc, null_residual,
                               null_state)
from fsistab.grid import State, build_calculus, build_geometry, inner_product_H


def _grid(nx: int, ny: int):
    worst = {}
    for shape in sorted({(8, 8), (16, 16), (nx, ny)}):
        calc = build_calculus(build_geometry(1.0, 1.0, *shape))
        for k, v in calc.self_test(trials=10).items():
            worst[k] = max(worst.get(k, 0.0), v) if k != "dissipation_min" else min(worst.get(k, np.inf), v)
    ok = (max(worst["green_grad_div"], worst["green_elastic"], worst["beam_symmetry"],
              worst["quadrature_const"]) <= 1e-12 and worst["dissipation_min"] >= 0)
    return ok, ", ".join(f"{k} {v:.2e}" for k, v in worst.items())


def _neumann_error(n: int) -> float:
    calc = build_calculus(build_geometry(1.0, 1.0, n, n))
    exact = calc.geom.sample(lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
    f = 2 * np.pi ** 2 * exact
    psi = NeumannSolver(calc).solve(f, np.zeros(calc.geom.n_beam)).psi
    e = psi - exact
    return float(np.sqrt(calc.ip_o(e, e)))


def _elliptic():
    ratio = _neumann_error(16) / _neumann_error(32)
    calc = build_calculus(build_geometry(1.0, 1.0, 16, 16))
    w = BeamSolver(calc).unit_deflection
    beam_err = abs(w[8] - 1 / 384)
    rng = np.random.default_rng(0)
    n = calc.geom.n_nodes
    u = (rng.uniform(-1, 1, n), rng.uniform(-1, 1, n))
    leray = LerayProjector(calc)
    Pu = leray.project(u).Pu
    again = leray.project(Pu).Pu
    idem = max(np.abs(again[0] - Pu[0]).max(), np.abs(again[1] - Pu[1]).max())
    sol = np.abs(calc.div(Pu)).max()
    orth = abs(calc.ip_o_vec(Pu, (u[0] - Pu[0], u[1] - Pu[1]))) / calc.ip_o_vec(u, u)
    ok = 3.5 <= ratio <= 4.5 and beam_err < 1e-4 and max(idem, sol, orth) <= 1e-10
    return ok, (f"neumann ratio {ratio:.3f}, beam midpoint error {beam_err:.2e}, "
                f"leray idempotence {idem:.1e} divergence {sol:.1e} orthogonality {orth:.1e}")


def _generator(nx: int, ny: int):
    calc = build_calculus(build_geometry(1.0, 1.0, nx, ny))
    n0 = null_state(calc)
    worst = 0.0
    energy_err = 0.0
    rng = np.random.default_rng(0)
    for preset in ("zero", "solenoidal-vortex"):
        amb = build_ambient(calc, preset, 1.0)
        if not check_cc(calc, amb).passed:
            return False, f"{preset} ambient fails the compatibility condition"
        for kappa in (0, 1):
            gen = assemble_generator(calc, amb, kappa)
            worst = max(worst, null_residual(gen, n0))
            s = gen.admissible(State.from_flat(calc.geom, rng.uniform(-1, 1, gen.dofs.n_full)))
            ds = gen.apply(s)
            lhs = inner_product_H(calc, s, ds)
            rhs = -gen.dissipation_rate(s) + gen.divergence_source(s) + gen.interface_source(s, ds)
            energy_err = max(energy_err, abs(lhs - rhs) / max(abs(rhs), 1.0))
    ok = worst <= 1e-10 and energy_err <= 1e-10
    return ok, f"null residual {worst:.2e}, energy identity {energy_err:.2e}"


def _evolve(nx: int, ny: int):
    calc = build_calculus(build_geometry(1.0, 1.0, nx, ny))
    gen = assemble_generator(calc, build_ambient(calc, "solenoidal-vortex", 1.0), 1)
    rng = np.random.default_rng(1)
    s = gen.admissible(State.from_flat(calc.geom, rng.uniform(-1, 1, gen.dofs.n_full)))
    _, trace = evolve(gen, s, 1 / 64, 0.5)
    bal = float(np.abs(trace.balance_residual).max()) / max(trace.E[0], 1.0)
    _, tn = evolve(gen, null_state(calc), 1 / 64, 0.5)
    drift = float(np.ptp(tn.E))
    ok = bal <= 1e-12 and drift <= 1e-10
    return ok, f"balance residual {bal:.2e}, n0 energy drift {drift:.2e}"


def _analyze():
    t = np.linspace(0, 5, 101)
    E = 3 * np.exp(-2 * t)
    z = np.zeros_like(t)
    fit = decay_fit(EnergyTrace(t, E, z, z, z, z))
    ok = abs(fit.omega - 1) < 1e-10 and fit.rsq >= 1 - 1e-12
    return ok, f"synthetic rate {fit.omega:.12f}, rsq {fit.rsq:.12f}"


def run_selftest(nx: int = 16, ny: int = 16) -> list[tuple[str, bool, str]]:
    """Run every suite; returns ``(name, passed, detail)`` triples."""
    suites = [("grid-core", lambda: _grid(nx, ny)), ("elliptic", _elliptic),
              ("generator", lambda: _generator(nx, ny)), ("evolve", lambda: _evolve(nx, ny)),
              ("analyze", _analyze)]
    out = []
    for name, fn in suites:
        ok, detail = fn()
        out.append((name, bool(ok), detail))
    return out
