"""Elliptic solves: clamped biharmonic, Neumann problem, Helmholtz split.

All three factorize once per geometry and are safe to share afterwards.
The Neumann and Leray solves use the same wide-stencil form
``<Grad psi, Grad chi>`` as the generator, so the pressure-recovery
identity used by the multiplier ledger is exact on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from fsistab.errors import AssemblyError, CompatibilityError
from fsistab.grid import DiscreteCalculus

COMPAT_RTOL = 1e-10


class BeamSolver:
    """Inverse of the clamped biharmonic ``D4`` on interior beam nodes."""

    def __init__(self, calc: DiscreteCalculus):
        self.calc = calc
        D4 = calc.D4.tocsc()
        # D4 = Wb^-1 K with K symmetric; Cholesky-free positivity check on K
        K = calc.Kbeam[calc.beam_interior][:, calc.beam_interior].toarray()
        if np.linalg.eigvalsh(K).min() <= 0:
            raise AssemblyError("clamped beam operator is not positive definite")
        self._lu = sla.splu(D4)
        self._unit = None

    def solve(self, rhs) -> np.ndarray:
        calc = self.calc
        rhs = np.asarray(rhs, dtype=float)
        I = calc.beam_interior
        w = np.zeros(calc.geom.n_beam)
        w[I] = self._lu.solve(rhs[I])
        resid = np.linalg.norm(calc.D4 @ w[I] - rhs[I])
        if resid > 1e-10 * max(np.linalg.norm(rhs[I]), 1e-300) and np.linalg.norm(rhs[I]) > 0:
            raise AssemblyError(f"beam solve residual {resid:.3e}")
        return w

    @property
    def unit_deflection(self) -> np.ndarray:
        """Static deflection under unit load."""
        if self._unit is None:
            self._unit = self.solve(np.ones(self.calc.geom.n_beam))
        return self._unit


def beam_biharmonic_solve(calc: DiscreteCalculus, rhs) -> np.ndarray:
    return BeamSolver(calc).solve(rhs)


@dataclass
class NeumannResult:
    psi: np.ndarray
    norm_surrogate: float
    data_norm: float

    @property
    def bound_ratio(self) -> float:
        """``(|psi|_{H1,h} + |psi|) / (|f| + |g|)``; diagnostic only."""
        return self.norm_surrogate / self.data_norm if self.data_norm > 0 else 0.0


def _bordered(K: sp.spmatrix, B: np.ndarray):
    """LU of ``[[K, B], [B^T, 0]]`` for a symmetric K singular on span(B)."""
    Bs = sp.csr_matrix(B)
    M = sp.bmat([[K, Bs], [Bs.T, None]], format="csc")
    return sla.splu(M)


class NeumannSolver:
    """Zero-mean solution of ``-Lap psi = f``, ``d psi/dn = g`` on the interface, 0 elsewhere."""

    def __init__(self, calc: DiscreteCalculus):
        self.calc = calc
        W = sp.diags(calc.wo)
        self.K = (calc.Grad.T @ sp.block_diag([W, W]) @ calc.Grad).tocsr()
        self._lu = _bordered(self.K, calc.wo[:, None])

    def compatibility_defect(self, f, g) -> float:
        calc = self.calc
        return calc.ip_o(f, np.ones_like(f)) + calc.ip_b(g, np.ones_like(g))

    def solve(self, f, g, check: bool = True) -> NeumannResult:
        calc = self.calc
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        fn = np.sqrt(calc.ip_o(f, f))
        gn = np.sqrt(calc.ip_b(g, g))
        defect = self.compatibility_defect(f, g)
        if check and abs(defect) > COMPAT_RTOL * max(fn + gn, 1.0):
            raise CompatibilityError(defect)
        b = calc.wo * f
        b[calc.geom.top] += calc.wb * g
        psi = self._lu.solve(np.append(b, 0.0))[:-1]
        gp = calc.grad(psi)
        surrogate = np.sqrt(calc.ip_o_vec(gp, gp) + calc.ip_o(psi, psi)) + np.sqrt(calc.ip_o(psi, psi))
        return NeumannResult(psi, float(surrogate), float(fn + gn))


def neumann_solve(calc: DiscreteCalculus, f, g) -> np.ndarray:
    return NeumannSolver(calc).solve(f, g).psi


@dataclass
class LerayDecomposition:
    Pu: tuple[np.ndarray, np.ndarray]
    q: np.ndarray
    bound_ratio: float


class LerayProjector:
    """Discrete Helmholtz split ``u = Pu + Grad q``.

    ``Pu`` has zero normal component at every boundary node and zero discrete
    divergence at every node.  The split is Wo-orthogonal.  Off the boundary
    normal components ``u - Pu = Grad q`` holds exactly; on them
    ``u - Pu`` carries the normal trace of ``u``.
    """

    def __init__(self, calc: DiscreteCalculus):
        self.calc = calc
        g = calc.geom
        n = g.n_nodes
        keep1 = np.ones(n)
        keep1[g.left] = keep1[g.right] = 0.0
        keep2 = np.ones(n)
        keep2[g.bottom] = keep2[g.top] = 0.0
        self.tangential = np.concatenate([keep1, keep2])
        Pi = sp.diags(self.tangential)
        W2 = sp.diags(np.concatenate([calc.wo, calc.wo]))
        self.PiGrad = (Pi @ calc.Grad).tocsr()
        K = (self.PiGrad.T @ W2 @ self.PiGrad).tocsr()
        self.null_basis = self._null_basis()
        self._lu = _bordered(K, calc.wo[:, None] * self.null_basis)

    def _null_basis(self) -> np.ndarray:
        g = self.calc.geom
        i = np.tile(np.arange(g.nx + 1), g.ny + 1)
        j = np.repeat(np.arange(g.ny + 1), g.nx + 1)
        sx = (-1.0) ** i
        sy = (-1.0) ** j
        B = np.stack([np.ones(g.n_nodes), sx, sy, sx * sy], axis=1)
        resid = np.abs(self.PiGrad @ B).max()
        if resid > 1e-9:
            raise AssemblyError(f"tangential gradient null basis check failed ({resid:.3e})")
        return B

    def orthogonalize(self, q) -> np.ndarray:
        """Remove the components of ``q`` along the gradient null space."""
        B = self.null_basis
        W = self.calc.wo
        G = B.T @ (W[:, None] * B)
        return q - B @ np.linalg.solve(G, B.T @ (W * q))

    def project(self, u) -> LerayDecomposition:
        calc = self.calc
        n = calc.geom.n_nodes
        uu = np.concatenate([np.asarray(u[0], float), np.asarray(u[1], float)])
        W2 = np.concatenate([calc.wo, calc.wo])
        rhs = self.PiGrad.T @ (W2 * self.tangential * uu)
        q = self._lu.solve(np.append(rhs, np.zeros(self.null_basis.shape[1])))[:n]
        Pu = self.tangential * (uu - calc.Grad @ q)
        un = np.sqrt(calc.ip_o_vec(u, u))
        qn = np.sqrt(calc.ip_o(q, q))
        return LerayDecomposition((Pu[:n], Pu[n:]), q, float(qn / un) if un > 0 else 0.0)


def leray_project(calc: DiscreteCalculus, u) -> LerayDecomposition:
    return LerayProjector(calc).project(u)
