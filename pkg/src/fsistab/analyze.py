"""Decay fits, Datko integrals, generator spectra and the multiplier ledger."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from fsistab.elliptic import LerayProjector, NeumannSolver
from fsistab.errors import CapacityError, CompatibilityError, DegenerateFitError, LedgerError
from fsistab.evolve import EnergyTrace, Trajectory
from fsistab.generator import GeneratorMatrix, null_state
from fsistab.grid import State, state_gram

DENSE_CAP = 6000
FLOOR = 1e-14
DATKO_RTOL = 0.05


# ----------------------------------------------------------------------------
# decay


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit ``sqrt(E(t)/E(0)) ~ M exp(-omega t)`` over ``window``."""

    M: float
    omega: float
    rsq: float
    window: tuple[float, float]
    n_samples: int

    @property
    def energy_rate(self) -> float:
        return 2.0 * self.omega


def decay_fit(trace: EnergyTrace, window: tuple[float, float] | None = None) -> DecayFit:
    """Fit a line to ``log E`` on the window (default ``[0.1 T, 0.9 T]``).

    Samples at or below ``1e-14 E(0)`` are discarded as round-off floor.
    """
    t = np.asarray(trace.times, dtype=float)
    E = np.asarray(trace.E, dtype=float)
    E0 = E[0]
    if not E0 > 0 or not np.any(E > 0):
        raise DegenerateFitError("energy trace is identically zero")
    T = t[-1]
    lo, hi = window if window is not None else (0.1 * T, 0.9 * T)
    keep = (t >= lo) & (t <= hi) & (E > FLOOR * E0)
    if keep.sum() < 10:
        raise DegenerateFitError(f"only {int(keep.sum())} usable samples in window [{lo}, {hi}]")
    tt = t[keep]
    y = np.log(E[keep] / E0)
    slope, intercept = np.polyfit(tt, y, 1)
    resid = y - (slope * tt + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    # a flat trace is fitted perfectly by a zero slope
    rsq = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 1e-24 else 1.0
    if ss_tot <= 1e-24:
        slope, intercept = 0.0, float(y.mean())
    return DecayFit(float(np.exp(0.5 * intercept)), float(-0.5 * slope), rsq,
                    (float(lo), float(hi)), int(keep.sum()))


@dataclass(frozen=True)
class DatkoReport:
    Cstar: float
    Cstar_half: float
    passed: bool

    @property
    def relative_change(self) -> float:
        return abs(self.Cstar - self.Cstar_half) / self.Cstar if self.Cstar > 0 else np.inf


def datko_check(trace: EnergyTrace) -> DatkoReport:
    """``C* = int_0^T E / E(0)``; passes when it has settled between ``T/2`` and ``T``."""
    t = np.asarray(trace.times, dtype=float)
    E = np.asarray(trace.E, dtype=float)
    if not E[0] > 0:
        raise DegenerateFitError("Datko ratio needs E(0) > 0")
    k = int(np.searchsorted(t, 0.5 * t[-1] * (1 - 1e-12)))
    C = float(np.trapezoid(E, t) / E[0])
    C_half = float(np.trapezoid(E[:k + 1], t[:k + 1]) / E[0])
    passed = C > 0 and abs(C - C_half) < DATKO_RTOL * C
    return DatkoReport(C, C_half, bool(passed))


# ----------------------------------------------------------------------------
# spectrum


@dataclass(eq=False)
class SpectrumReport:
    eigenvalues: np.ndarray
    zero_index: int
    gap: float
    alignment: float

    @property
    def order(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def zero_eigenvalue(self) -> complex:
        return complex(self.eigenvalues[self.zero_index])

    def count_near_zero(self, tol: float = 1e-8) -> int:
        return int(np.sum(np.abs(self.eigenvalues) <= tol))


def spectrum(gen: GeneratorMatrix, cap: int = DENSE_CAP, shift: float = 0.0) -> SpectrumReport:
    """Dense eigen-decomposition of ``A + shift I`` on the admissible states.

    Admissible states are the reduced coordinates with the pressure filter
    applied; outside them the generator carries slaved or filtered values
    that would add spurious zero eigenvalues.
    """
    n = gen.dofs.n_reduced
    if n > cap:
        raise CapacityError(
            f"generator order {n} exceeds the dense eigensolver cap {cap}; use a coarser grid")
    Z = gen.admissible_basis()
    M = Z.T @ gen.reduced_dense() @ Z + shift * np.eye(Z.shape[1])
    lam, V = np.linalg.eig(M)
    i0 = int(np.argmin(np.abs(lam)))
    others = np.delete(lam, i0)
    gap = float(-others.real.max()) if others.size else np.inf
    # alignment of the zero eigenvector with n0 in the energy inner product
    calc = gen.calc
    G = state_gram(calc)
    x = gen.lift @ (Z @ V[:, i0])
    n0 = null_state(calc).flat()
    num = abs(np.vdot(x, G @ n0))
    den = np.sqrt(abs(np.vdot(x, G @ x)) * float(n0 @ (G @ n0)))
    return SpectrumReport(lam, i0, gap, float(num / den) if den > 0 else 0.0)


# ----------------------------------------------------------------------------
# multiplier ledger


@dataclass(frozen=True)
class MultiplierLedger:
    """Time-integrated terms of the multiplier argument for one trajectory.

    Step I tests the momentum equation with the admissible lift ``phi`` of
    ``Grad psi(p, w)``: wall-normal components removed, interface-normal
    component set to the Neumann datum ``w``.  Step II tests the beam with
    ``w``.  All integrals use the trapezoid rule over the stored levels;
    time derivatives use second-order differences of the stored states.
    """

    # identity of the tested momentum equation
    momentum_time: float          # int <u_t, phi> + <v_t, w>
    momentum_endpoint: float      # <u, phi> at T minus at 0
    momentum_pressure: float      # -int <p, Div phi>
    momentum_elastic: float       # int <sigma(u), eps(phi)>
    momentum_lower: float         # int <U.grad u + eta u, phi>
    momentum_beam: float          # int |D2 w|^2
    momentum_residual: float      # sum of the identity's terms
    momentum_scale: float         # sum of their magnitudes
    # pressure recovery
    pressure_norm: float          # int |p|^2
    pressure_boundary: float      # int <p, w> on the interface
    pressure_grad_pairing: float  # int <Grad p, Grad psi>
    pressure_residual: float
    # flux and lower-order terms
    traction_flux: float          # int <sigma(u) n, Grad psi> over the boundary
    interface_pairing: float      # int <2 nu d_y u2 + lam div u - p, w> on the interface
    leray_advection: float        # int <q(u), U.grad p>
    # beam multiplier
    beam_bending: float           # int |D2 w|^2
    beam_velocity: float          # int |w_t|^2
    beam_endpoint: float          # <w_t, w> at T minus at 0
    # trace identity
    trace_beam: float             # int |w_t|^2
    trace_fluid: float            # int |u2|^2 on the interface
    trace_residual: float
    # assembled observability inequality
    energy_integral: float
    endpoint_energy: float        # E(T) + E(0)
    dissipation_integral: float
    cross_integral: float         # int sqrt(D E)
    psiU: float
    C: float
    C0: float
    C_eps: float
    eps: float
    slack: float
    Cstar: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @property
    def momentum_relative_residual(self) -> float:
        return abs(self.momentum_residual) / self.momentum_scale if self.momentum_scale > 0 else 0.0


def _admissible_lift(gen: GeneratorMatrix, gpsi: np.ndarray, w: np.ndarray):
    g = gen.calc.geom
    n = g.n_nodes
    phi1 = gpsi[:n].copy()
    phi2 = gpsi[n:].copy()
    phi1[g.left] = phi1[g.right] = 0.0
    phi2[g.bottom] = 0.0
    phi2[g.top] = w
    return phi1, phi2


def multiplier_report(gen: GeneratorMatrix, traj: Trajectory, neumann: NeumannSolver | None = None,
                      leray: LerayProjector | None = None, eps: float = 0.5) -> MultiplierLedger:
    """Evaluate every term of the multiplier estimate along a stored trajectory."""
    calc = gen.calc
    g = calc.geom
    n = g.n_nodes
    if len(traj) < 3:
        raise LedgerError("multiplier ledger needs at least three stored states")
    if not 0 < eps < 1:
        raise LedgerError(f"Young parameter must lie in (0, 1), got {eps}")
    neumann = neumann or NeumannSolver(calc)
    leray = leray or LerayProjector(calc)
    t = np.asarray(traj.times, dtype=float)
    X = np.asarray(traj.states, dtype=float)
    Xt = np.gradient(X, t, axis=0, edge_order=2)
    G = state_gram(calc)
    W = calc.wo
    U1, U2 = gen.ambient.U
    K = len(t)

    cols = {k: np.zeros(K) for k in (
        "time", "pressure", "elastic", "lower", "beam", "pnorm", "pbound", "pgrad",
        "flux", "iface", "leray", "wt2", "u2top", "E", "D")}
    phi_first = phi_last = None
    for k in range(K):
        s = State.from_flat(g, X[k])
        st = State.from_flat(g, Xt[k])
        try:
            nr = neumann.solve(s.p, s.w)
        except CompatibilityError as exc:
            raise LedgerError(
                f"Neumann data incompatible at t={t[k]:.6g} (defect {exc.defect:.3e}); "
                "the initial state is not orthogonal to the null vector") from exc
        psi = nr.psi
        gpsi = calc.Grad @ psi
        phi = _admissible_lift(gen, gpsi, s.w)
        if k == 0:
            phi_first = (s, phi)
        phi_last = (s, phi)
        gx, gy = gpsi[:n], gpsi[n:]
        cols["time"][k] = calc.ip_o_vec(st.u, phi) + calc.ip_b(st.v, s.w)
        cols["pressure"][k] = -calc.ip_o(s.p, calc.div(phi))
        cols["elastic"][k] = calc.dissipation_form(s.u, phi)
        adv = gen.advection2 @ np.concatenate(s.u)
        cols["lower"][k] = calc.ip_o_vec((adv[:n], adv[n:]), phi) + calc.eta * calc.ip_o_vec(s.u, phi)
        cols["beam"][k] = float(s.w @ (calc.Kbeam @ s.w))
        cols["pnorm"][k] = calc.ip_o(s.p, s.p)
        cols["pbound"][k] = calc.ip_b(calc.trace_top(s.p), s.w)
        gp = calc.grad(s.p)
        cols["pgrad"][k] = calc.ip_o(gp[0], gx) + calc.ip_o(gp[1], gy)
        cols["flux"][k] = calc.traction_flux(s.u, (gx, gy))
        cols["iface"][k] = calc.ip_b(calc.normal_stress_top(s.u) - calc.trace_top(s.p), s.w)
        if np.any(U1) or np.any(U2):
            q = leray.project(s.u).q
            cols["leray"][k] = calc.ip_o(q, U1 * (calc.Dx @ s.p) + U2 * (calc.Dy @ s.p))
        cols["wt2"][k] = calc.ip_b(s.v, s.v)
        top = calc.trace_top(s.u2)
        cols["u2top"][k] = calc.ip_b(top, top)
        cols["E"][k] = 0.5 * X[k] @ (G @ X[k])
        cols["D"][k] = gen.dissipation_rate(s)

    I = {key: float(np.trapezoid(val, t)) for key, val in cols.items()}
    (s0, phi0), (sT, phiT) = phi_first, phi_last
    endpoint = calc.ip_o_vec(sT.u, phiT) - calc.ip_o_vec(s0.u, phi0)
    momentum_terms = [I["time"], I["pressure"], I["elastic"], I["lower"], I["beam"]]
    residual = float(sum(momentum_terms))
    scale = float(sum(abs(x) for x in momentum_terms))

    E = cols["E"]
    EI = I["E"]
    endpoint_E = float(E[-1] + E[0])
    DI = I["D"]
    cross = float(np.trapezoid(np.sqrt(np.maximum(cols["D"], 0.0) * np.maximum(E, 0.0)), t))
    psiU = gen.ambient.psiU
    denom = psiU * endpoint_E + cross + DI
    # smallest C with int E <= C (psi [E(T)+E(0)] + int sqrt(DE) + int D)
    C = EI / denom if denom > 0 else 0.0
    # Young: C sqrt(DE) <= eps E + C^2 D / (4 eps)
    C0 = C
    C_eps = C + C * C / (4 * eps)
    slack = C0 * psiU * endpoint_E + C_eps * DI - (1 - eps) * EI
    beam_endpoint = calc.ip_b(sT.v, sT.w) - calc.ip_b(s0.v, s0.w)
    return MultiplierLedger(
        momentum_time=I["time"], momentum_endpoint=float(endpoint),
        momentum_pressure=I["pressure"], momentum_elastic=I["elastic"],
        momentum_lower=I["lower"], momentum_beam=I["beam"],
        momentum_residual=residual, momentum_scale=scale,
        pressure_norm=I["pnorm"], pressure_boundary=I["pbound"], pressure_grad_pairing=I["pgrad"],
        pressure_residual=I["pgrad"] - I["pnorm"] - I["pbound"],
        traction_flux=I["flux"], interface_pairing=I["iface"], leray_advection=I["leray"],
        beam_bending=I["beam"], beam_velocity=I["wt2"], beam_endpoint=float(beam_endpoint),
        trace_beam=I["wt2"], trace_fluid=I["u2top"], trace_residual=I["wt2"] - I["u2top"],
        energy_integral=EI, endpoint_energy=endpoint_E, dissipation_integral=DI,
        cross_integral=cross, psiU=float(psiU), C=float(C), C0=float(C0), C_eps=float(C_eps),
        eps=float(eps), slack=float(slack), Cstar=float(EI / E[0]) if E[0] > 0 else 0.0,
    )

