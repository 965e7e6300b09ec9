"""Ambient fields and the discrete flow-structure generator.

The generator is built from the variational form of the coupled system over
velocities that satisfy the wall and interface constraints:

    <u_t, phi> + <v_t, zeta> = -<sigma(u), eps(phi)> - eta <u, phi>
                               - <U.grad u, phi> + <p, Div phi> - <D2 w, D2 zeta>

for all ``phi`` with ``phi . n = 0`` on the wall and ``phi_2 = zeta`` on the
interface.  Pairing the momentum and plate equations this way makes the
interface traction cancel exactly, leaves the tangential stress-free
condition as the natural boundary condition, and turns the energy relation
into an algebraic identity of the matrices below.

Two coordinate systems are used.  *Full* states hold every nodal value
(``State.flat()``); *reduced* coordinates hold only the free values
``[p, u1 off the side walls, u2 off the top/bottom rows, w, v at interior
beam nodes]``.  Constrained values are recovered by the lifting map, in which
``u2`` on the interface equals ``v + kappa * U1 * d_x w``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from fsistab.elliptic import BeamSolver
from fsistab.errors import AssemblyError, ConfigurationError, DimensionError
from fsistab.grid import DiscreteCalculus, Geometry, State, inner_product_H, norm_H

PRESETS = ("zero", "solenoidal-vortex", "small-div")
CC_RTOL = 1e-8
NULL_TOL = 1e-10


# ----------------------------------------------------------------------------
# ambient fields


@dataclass(frozen=True, eq=False)
class AmbientField:
    U1: np.ndarray = field(repr=False)
    U2: np.ndarray = field(repr=False)
    divU: np.ndarray = field(repr=False)
    psiU: float
    preset: str
    amplitude: float
    div_defect: float = 0.0

    @property
    def U(self):
        return self.U1, self.U2

    def normal_trace_max(self, geom: Geometry) -> float:
        return float(max(
            np.abs(self.U1[geom.left]).max(), np.abs(self.U1[geom.right]).max(),
            np.abs(self.U2[geom.bottom]).max(), np.abs(self.U2[geom.top]).max(),
        ))


def _psi_surrogate(calc: DiscreteCalculus, U1, U2) -> float:
    h1 = calc.ip_o(U1, U1) + calc.ip_o(U2, U2)
    for comp in (U1, U2):
        gx, gy = calc.grad(comp)
        h1 += calc.ip_o(gx, gx) + calc.ip_o(gy, gy)
    sup = float(np.max(np.hypot(U1, U2))) if U1.size else 0.0
    return 1.0 + float(np.sqrt(h1)) + sup


def ambient_from_field(calc: DiscreteCalculus, U1, U2, preset: str = "custom",
                       amplitude: float = 1.0, analytic_div=None) -> AmbientField:
    """Wrap a sampled field; it must be tangent to the boundary at every node."""
    g = calc.geom
    U1 = np.asarray(U1, dtype=float).copy()
    U2 = np.asarray(U2, dtype=float).copy()
    if U1.shape != (g.n_nodes,) or U2.shape != (g.n_nodes,):
        raise DimensionError("ambient field components must be nodal scalar fields")
    if not (np.all(np.isfinite(U1)) and np.all(np.isfinite(U2))):
        raise ConfigurationError("ambient field must be finite")
    divU = calc.div((U1, U2))
    defect = 0.0 if analytic_div is None else float(np.abs(divU - analytic_div).max())
    amb = AmbientField(U1, U2, divU, _psi_surrogate(calc, U1, U2), preset, float(amplitude), defect)
    scale = max(1.0, float(np.abs(U1).max(initial=0)), float(np.abs(U2).max(initial=0)))
    if amb.normal_trace_max(g) > 1e-12 * scale:
        raise ConfigurationError(
            f"ambient field has normal trace {amb.normal_trace_max(g):.3e} on the boundary")
    return amb


def vortex_stream(geom: Geometry) -> np.ndarray:
    """``sin^2(pi x/L1) sin^2(pi y/L2)`` sampled, zeroed within one node of the boundary."""
    phi = geom.sample(lambda x, y: np.sin(np.pi * x / geom.L1) ** 2 * np.sin(np.pi * y / geom.L2) ** 2)
    band = np.zeros(geom.shape, dtype=bool)
    band[:2, :] = band[-2:, :] = band[:, :2] = band[:, -2:] = True
    phi[band.ravel()] = 0.0
    return phi


def build_ambient(calc: DiscreteCalculus, preset: str, amplitude: float = 1.0) -> AmbientField:
    g = calc.geom
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown ambient preset {preset!r}; choose from {PRESETS}")
    if not amplitude >= 0:
        raise ConfigurationError(f"amplitude must be nonnegative, got {amplitude}")
    a = float(amplitude)
    if preset == "zero" or a == 0.0:
        z = np.zeros(g.n_nodes)
        return ambient_from_field(calc, z, z, preset, a, analytic_div=z)
    if preset == "solenoidal-vortex":
        phi = vortex_stream(g)
        return ambient_from_field(calc, a * (calc.Dy @ phi), -a * (calc.Dx @ phi), preset, a,
                                  analytic_div=np.zeros(g.n_nodes))
    L1, L2 = g.L1, g.L2
    U1 = a * g.sample(lambda x, y: x * (L1 - x) * y * (y + L2))
    div_exact = a * g.sample(lambda x, y: (L1 - 2 * x) * y * (y + L2))
    return ambient_from_field(calc, U1, np.zeros(g.n_nodes), preset, a, analytic_div=div_exact)


def cc_violating_ambient(calc: DiscreteCalculus, beam: BeamSolver | None = None) -> AmbientField:
    """Field whose interface trace is ``(d_x A^-1(1), 0)``, decaying into the flow."""
    g = calc.geom
    beam = beam or BeamSolver(calc)
    slope = calc.Db @ beam.unit_deflection
    chi = ((g.y + g.L2) / g.L2) ** 2
    U1 = np.kron(chi, slope)
    return ambient_from_field(calc, U1, np.zeros(g.n_nodes), "cc-violating", 1.0)


@dataclass(frozen=True)
class CCReport:
    max_defect: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_defect <= self.threshold


def check_cc(calc: DiscreteCalculus, amb: AmbientField, beam: BeamSolver | None = None) -> CCReport:
    """Interface compatibility ``U . grad A^-1(1) = 0`` on the beam nodes."""
    beam = beam or BeamSolver(calc)
    slope = calc.Db @ beam.unit_deflection
    defect = float(np.abs(calc.trace_top(amb.U1) * slope).max())
    return CCReport(defect, CC_RTOL * amb.psiU)


# ----------------------------------------------------------------------------
# generator


def advection_matrix(calc: DiscreteCalculus, amb: AmbientField) -> sp.csr_matrix:
    """Skew-symmetric form of ``U . grad``: ``(U.Grad f + Div(U f) - divU f) / 2``."""
    U1 = sp.diags(amb.U1)
    U2 = sp.diags(amb.U2)
    return (0.5 * (U1 @ calc.Dx + U2 @ calc.Dy + calc.Dx @ U1 + calc.Dy @ U2)
            - 0.5 * sp.diags(amb.divU)).tocsr()


@dataclass(eq=False)
class DofMap:
    """Index bookkeeping between full states and reduced coordinates."""

    geom: Geometry

    def __post_init__(self):
        g = self.geom
        n, m = g.n_nodes, g.n_beam
        side = np.zeros(n, dtype=bool)
        side[g.left] = side[g.right] = True
        ends = np.zeros(n, dtype=bool)
        ends[g.bottom] = ends[g.top] = True
        self.free_u1 = np.flatnonzero(~side)
        self.free_u2 = np.flatnonzero(~ends)
        self.beam_int = np.arange(1, m - 1)
        self.top_int = g.top[self.beam_int]
        # slices of the reduced vector
        sizes = [n, self.free_u1.size, self.free_u2.size, self.beam_int.size, self.beam_int.size]
        offs = np.concatenate([[0], np.cumsum(sizes)])
        self.zp, self.zu1, self.zu2, self.zw, self.zv = (
            slice(offs[k], offs[k + 1]) for k in range(5))
        self.n_reduced = int(offs[-1])
        self.n_full = 3 * n + 2 * m
        # full positions of the free coordinates, in reduced order
        self.restrict = np.concatenate([
            np.arange(n), n + self.free_u1, 2 * n + self.free_u2,
            3 * n + self.beam_int, 3 * n + m + self.beam_int,
        ])

    def blocks(self):
        """Full-state slices for p, u1, u2, w, v."""
        n, m = self.geom.n_nodes, self.geom.n_beam
        return (slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n),
                slice(3 * n, 3 * n + m), slice(3 * n + m, 3 * n + 2 * m))


def _selector(rows, cols, shape) -> sp.csr_matrix:
    rows = np.asarray(rows)
    return sp.csr_matrix((np.ones(rows.size), (rows, np.asarray(cols))), shape=shape)


def checkerboard_modes(calc: DiscreteCalculus) -> np.ndarray:
    """Wo-orthonormal basis of the pressure checkerboards, orthogonal to constants.

    With nodal pressure and strongly imposed normal velocities these three
    patterns are invisible to every admissible test velocity, so they must be
    kept out of the pressure space or each would pair with a beam deflection
    into a spurious steady state.
    """
    g = calc.geom
    i = np.tile(np.arange(g.nx + 1), g.ny + 1)
    j = np.repeat(np.arange(g.ny + 1), g.nx + 1)
    sx, sy = (-1.0) ** i, (-1.0) ** j
    S = np.stack([sx, sy, sx * sy], axis=1)
    w = calc.wo
    S = S - np.outer(np.ones(g.n_nodes), (w @ S) / w.sum())
    L = np.linalg.cholesky(S.T @ (w[:, None] * S))
    return np.linalg.solve(L, S.T).T


@dataclass(eq=False)
class GeneratorMatrix:
    """Discrete generator: sparse part minus a rank-3 pressure filter.

    In reduced coordinates ``A_red = A_red_sparse - Ur @ Vr.T``; on full
    states ``A = lift @ A_red @ restrict``.
    """

    calc: DiscreteCalculus
    ambient: AmbientField
    kappa: int
    dofs: DofMap
    A_red_sparse: sp.csr_matrix = field(repr=False)
    Ur: np.ndarray = field(repr=False)
    Vr: np.ndarray = field(repr=False)
    lift: sp.csr_matrix = field(repr=False)
    force: sp.csr_matrix = field(repr=False)
    dissipation: sp.csr_matrix = field(repr=False)
    pressure_modes: np.ndarray = field(repr=False)

    @cached_property
    def restrict(self) -> sp.csr_matrix:
        d = self.dofs
        return _selector(np.arange(d.n_reduced), d.restrict, (d.n_reduced, d.n_full))

    @cached_property
    def A_sparse(self) -> sp.csr_matrix:
        """Sparse part of the full-state generator."""
        A = (self.lift @ self.A_red_sparse @ self.restrict).tocsr()
        A.eliminate_zeros()
        return A

    @cached_property
    def advection2(self) -> sp.csr_matrix:
        """Skew advection acting on stacked velocities ``[u1; u2]``."""
        adv = advection_matrix(self.calc, self.ambient)
        return sp.block_diag([adv, adv], format="csr")

    @property
    def A(self) -> sla.LinearOperator:
        n = self.dofs.n_full
        return sla.LinearOperator((n, n), matvec=self.matvec, dtype=float)

    def matvec_reduced(self, z) -> np.ndarray:
        return self.A_red_sparse @ z - self.Ur @ (self.Vr.T @ z)

    def matvec(self, x) -> np.ndarray:
        return self.lift @ self.matvec_reduced(np.asarray(x).ravel()[self.dofs.restrict])

    def reduced_dense(self) -> np.ndarray:
        return self.A_red_sparse.toarray() - self.Ur @ self.Vr.T

    def full_dense(self) -> np.ndarray:
        L = self.lift.toarray()
        return L @ self.reduced_dense() @ self.restrict.toarray()

    def admissible_basis(self) -> np.ndarray:
        """Columns spanning the reduced coordinates whose pressure is filtered."""
        d = self.dofs
        C = np.zeros((self.pressure_modes.shape[1], d.n_reduced))
        C[:, d.zp] = self.pressure_modes.T * self.calc.wo
        return scipy.linalg.null_space(C)

    def filter_pressure(self, p) -> np.ndarray:
        S = self.pressure_modes
        return p - S @ (S.T @ (self.calc.wo * p))

    def to_reduced(self, s: State) -> np.ndarray:
        return s.flat()[self.dofs.restrict]

    def from_reduced(self, z) -> State:
        return State.from_flat(self.calc.geom, self.lift @ z)

    def admissible(self, s: State) -> State:
        """Filter the pressure and lift the free values: enforces every constraint."""
        z = self.to_reduced(s)
        z[self.dofs.zp] = self.filter_pressure(z[self.dofs.zp])
        return self.from_reduced(z)

    def apply(self, s: State) -> State:
        return State.from_flat(self.calc.geom, self.matvec(s.flat()))

    def interface_slope(self, s: State) -> np.ndarray:
        """``U1 d_x w`` on the interface nodes."""
        return self.calc.trace_top(self.ambient.U1) * (self.calc.Db @ s.w)

    # energy-budget densities, evaluated on admissible states

    def dissipation_rate(self, s: State) -> float:
        u = np.concatenate(s.u)
        return float(u @ (self.dissipation @ u))

    def divergence_source(self, s: State) -> float:
        d = self.ambient.divU
        c = self.calc
        return 0.5 * (c.ip_o(d * s.p, s.p) + c.ip_o(d * s.u1, s.u1) + c.ip_o(d * s.u2, s.u2))

    def interface_source(self, s: State, ds: State | None = None) -> float:
        """Rate of work of the interface traction on ``kappa U . grad w``."""
        if self.kappa == 0:
            return 0.0
        ds = ds if ds is not None else self.apply(s)
        g = self.calc.geom
        n = g.n_nodes
        F = self.force @ np.concatenate([s.p, s.u1, s.u2])
        inertia = self.calc.wo[g.top] * ds.u2[g.top]
        return float(np.dot(self.interface_slope(s), inertia - F[n + g.top]))


def assemble_generator(calc: DiscreteCalculus, amb: AmbientField, kappa: int) -> GeneratorMatrix:
    if kappa not in (0, 1):
        raise ConfigurationError(f"kappa must be 0 or 1, got {kappa}")
    g = calc.geom
    n, m = g.n_nodes, g.n_beam
    d = DofMap(g)
    nz = d.n_reduced
    zr = np.arange(nz)

    # selectors from reduced coordinates
    Sp = _selector(np.arange(n), zr[d.zp], (n, nz))
    Sw = _selector(d.beam_int, zr[d.zw], (m, nz))
    Sv = _selector(d.beam_int, zr[d.zv], (m, nz))
    U1top = calc.trace_top(amb.U1)
    # interface normal velocity, beam-indexed
    iface = Sv + kappa * (sp.diags(U1top) @ calc.Db @ Sw)
    Lu1 = _selector(d.free_u1, zr[d.zu1], (n, nz))
    Lu2 = _selector(d.free_u2, zr[d.zu2], (n, nz)) + _selector(g.top, np.arange(m), (n, m)) @ iface
    Lu = sp.vstack([Lu1, Lu2], format="csr")
    lift = sp.vstack([Sp, Lu, Sw, Sv], format="csr")

    W = sp.diags(calc.wo)
    W2 = sp.block_diag([W, W])
    Adv = advection_matrix(calc, amb)
    Adv2 = sp.block_diag([Adv, Adv])
    diss = (calc.Kelastic + calc.eta * W2).tocsr()
    # weak momentum force on every nodal velocity test direction, from [p; u]
    force = sp.hstack([calc.Div.T @ W, -(diss + W2 @ Adv2)], format="csr")
    F = force @ sp.vstack([Sp, Lu], format="csr")

    rows_p = (-(Adv @ Sp) - calc.Div @ Lu).tocsr()
    rows_u1 = sp.diags(1.0 / calc.wo[d.free_u1]) @ F[d.free_u1]
    rows_u2 = sp.diags(1.0 / calc.wo[d.free_u2]) @ F[n + d.free_u2]
    wtop = calc.wo[d.top_int]
    mass_v = calc.wb[d.beam_int] + wtop
    beam_force = F[n + d.top_int] - calc.Kbeam[d.beam_int] @ Sw
    if kappa:
        beam_force = beam_force - sp.diags(wtop * U1top[d.beam_int]) @ (calc.Db[d.beam_int] @ Sv)
    rows_v = sp.diags(1.0 / mass_v) @ beam_force
    rows_w = Sv[d.beam_int]
    A_red = sp.vstack([rows_p, rows_u1, rows_u2, rows_w, rows_v], format="csr")
    A_red.eliminate_zeros()

    # pressure filter: p_t -> p_t - S S^T Wo p_t
    S = checkerboard_modes(calc)
    Ur = np.zeros((nz, S.shape[1]))
    Ur[d.zp] = S
    Vr = np.asarray((rows_p.T @ (calc.wo[:, None] * S)))
    return GeneratorMatrix(calc, amb, kappa, d, A_red, Ur, Vr, lift, force, diss, S)


# ----------------------------------------------------------------------------
# null space


def null_state(calc: DiscreteCalculus, beam: BeamSolver | None = None) -> State:
    beam = beam or BeamSolver(calc)
    s = State.zeros(calc.geom)
    s.p[:] = 1.0
    s.w[:] = beam.unit_deflection
    return s


@dataclass
class NullVector:
    n0: State
    residuals: dict[str, float]

    def relative_residual(self, gen: GeneratorMatrix) -> float:
        return null_residual(gen, self.n0)


def null_residual(gen: GeneratorMatrix, n0: State) -> float:
    return norm_H(gen.calc, gen.apply(n0)) / norm_H(gen.calc, n0)


def null_vector(calc: DiscreteCalculus, amb: AmbientField | None = None,
                beam: BeamSolver | None = None) -> NullVector:
    """``[1, 0, A^-1(1), 0]``, verified against ``A_0`` and, if cc holds, ``A_1``."""
    beam = beam or BeamSolver(calc)
    amb = amb or build_ambient(calc, "zero")
    n0 = null_state(calc, beam)
    residuals = {"kappa0": null_residual(assemble_generator(calc, amb, 0), n0)}
    if check_cc(calc, amb, beam).passed:
        residuals["kappa1"] = null_residual(assemble_generator(calc, amb, 1), n0)
    bad = {k: r for k, r in residuals.items() if r > NULL_TOL}
    if bad:
        raise AssemblyError(f"null vector check failed: {bad}")
    return NullVector(n0, residuals)


def null_functional(calc: DiscreteCalculus, s: State) -> float:
    """``<p, 1> + <w, 1>``; equals ``<s, n0>_H`` for clamped ``w``."""
    return calc.ip_o(s.p, np.ones_like(s.p)) + calc.ip_b(s.w, np.ones_like(s.w))


def project_offnull(calc: DiscreteCalculus, s: State, n0: State) -> State:
    c = inner_product_H(calc, s, n0) / inner_product_H(calc, n0, n0)
    return s - c * n0
