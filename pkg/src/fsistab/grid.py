"""Geometry, grid fields and summation-by-parts difference operators.

The flow domain is the rectangle ``[0, L1] x [-L2, 0]`` sampled on a uniform
collocated grid of ``(nx + 1) * (ny + 1)`` nodes, flattened row-major with x
fastest: node ``(i, j)`` lives at ``j * (nx + 1) + i`` and sits at
``(i * hx, -L2 + j * hy)``.  Row ``j = ny`` is the interface (the beam), the
other three edges form the rigid wall.

First derivatives are the diagonal-norm SBP 2-1 operators ``D = H^-1 Q`` with
``Q + Q^T = diag(-1, 0, ..., 0, 1)`` and ``H`` the trapezoid weights, so every
discrete integration by parts below is an algebraic identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from fsistab.errors import ConfigurationError, DimensionError

MIN_CELLS = 8


@dataclass(frozen=True)
class Geometry:
    L1: float
    L2: float
    nx: int
    ny: int

    @property
    def hx(self) -> float:
        return self.L1 / self.nx

    @property
    def hy(self) -> float:
        return self.L2 / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(ny + 1, nx + 1)`` of a reshaped scalar field."""
        return (self.ny + 1, self.nx + 1)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_beam(self) -> int:
        return self.nx + 1

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.L1, self.nx + 1)

    @cached_property
    def y(self) -> np.ndarray:
        return np.linspace(-self.L2, 0.0, self.ny + 1)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened node coordinates ``(X, Y)``."""
        X, Y = np.meshgrid(self.x, self.y)
        return X.ravel(), Y.ravel()

    def sample(self, func) -> np.ndarray:
        X, Y = self.mesh
        return np.asarray(func(X, Y), dtype=float) * np.ones(self.n_nodes)

    def node(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    @cached_property
    def top(self) -> np.ndarray:
        """Node indices of the interface row, ordered by x."""
        return np.arange(self.nx + 1) + self.ny * (self.nx + 1)

    @cached_property
    def bottom(self) -> np.ndarray:
        return np.arange(self.nx + 1)

    @cached_property
    def left(self) -> np.ndarray:
        return np.arange(self.ny + 1) * (self.nx + 1)

    @cached_property
    def right(self) -> np.ndarray:
        return np.arange(self.ny + 1) * (self.nx + 1) + self.nx

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask.ravel()


def build_geometry(L1: float, L2: float, nx: int, ny: int) -> Geometry:
    if not (L1 > 0 and L2 > 0):
        raise ConfigurationError(f"domain lengths must be positive, got L1={L1}, L2={L2}")
    if int(nx) != nx or int(ny) != ny:
        raise ConfigurationError("cell counts must be integers")
    if nx < MIN_CELLS or ny < MIN_CELLS:
        raise ConfigurationError(f"need nx, ny >= {MIN_CELLS}, got nx={nx}, ny={ny}")
    return Geometry(float(L1), float(L2), int(nx), int(ny))


# ----------------------------------------------------------------------------
# 1-D building blocks


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n + 1, h)
    w[0] = w[-1] = h / 2
    return w


def sbp_first_derivative(n: int, h: float) -> sp.csr_matrix:
    """SBP 2-1 first derivative on ``n + 1`` nodes."""
    main = np.zeros(n + 1)
    main[0], main[-1] = -1.0 / h, 1.0 / h
    upper = np.full(n, 0.5 / h)
    lower = np.full(n, -0.5 / h)
    upper[0] = 1.0 / h
    lower[-1] = -1.0 / h
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr")


def beam_second_difference(n: int, h: float) -> sp.csr_matrix:
    """Second difference on ``n + 1`` beam nodes for clamped displacements.

    The clamped ends are eliminated with the ghost values ``w[-1] = w[1]`` and
    ``w[n + 1] = w[n - 1]``, which is the centred form of ``w' = 0``.
    """
    D = sp.diags(
        [np.ones(n), -2.0 * np.ones(n + 1), np.ones(n)], [-1, 0, 1], format="lil"
    )
    D[0, 1] = 2.0
    D[n, n - 1] = 2.0
    return (D / h**2).tocsr()


def beam_first_difference(n: int, h: float) -> sp.csr_matrix:
    """Centred first difference; zero at the clamped ends (ghost reflection)."""
    D = sp.diags([-0.5 * np.ones(n), 0.5 * np.ones(n)], [-1, 1], format="lil")
    D[0, :] = 0.0
    D[n, :] = 0.0
    return (D / h).tocsr()


# ----------------------------------------------------------------------------
# 2-D calculus


@dataclass(frozen=True, eq=False)
class DiscreteCalculus:
    """Difference and quadrature operators on one geometry.

    Scalars are flat vectors of length ``geom.n_nodes``; vectors are pairs of
    such arrays; beam fields have length ``geom.n_beam`` with zero ends.
    """

    geom: Geometry
    nu: float
    lam: float
    eta: float
    Dx: sp.csr_matrix = field(repr=False)
    Dy: sp.csr_matrix = field(repr=False)
    wo: np.ndarray = field(repr=False)
    wb: np.ndarray = field(repr=False)
    D2: sp.csr_matrix = field(repr=False)
    Db: sp.csr_matrix = field(repr=False)

    # -- quadrature ---------------------------------------------------------

    def ip_o(self, a, b) -> float:
        return float(np.dot(self.wo * a, b))

    def ip_b(self, a, b) -> float:
        return float(np.dot(self.wb * a, b))

    def ip_o_vec(self, a, b) -> float:
        return self.ip_o(a[0], b[0]) + self.ip_o(a[1], b[1])

    # -- scalar / vector calculus ------------------------------------------

    @cached_property
    def Grad(self) -> sp.csr_matrix:
        """Stacked gradient, ``(2 n) x n``."""
        return sp.vstack([self.Dx, self.Dy], format="csr")

    @cached_property
    def Div(self) -> sp.csr_matrix:
        """Divergence of a stacked vector field, ``n x (2 n)``."""
        return sp.hstack([self.Dx, self.Dy], format="csr")

    def grad(self, p):
        return self.Dx @ p, self.Dy @ p

    def div(self, u) -> np.ndarray:
        return self.Dx @ u[0] + self.Dy @ u[1]

    @cached_property
    def Strain(self) -> sp.csr_matrix:
        """``[eps11; eps22; eps12]`` of a stacked vector field."""
        Z = sp.csr_matrix(self.Dx.shape)
        return sp.bmat(
            [[self.Dx, Z], [Z, self.Dy], [0.5 * self.Dy, 0.5 * self.Dx]], format="csr"
        )

    def strain(self, u):
        e = self.Strain @ np.concatenate(u)
        n = self.geom.n_nodes
        return e[:n], e[n : 2 * n], e[2 * n :]

    def stress(self, u):
        e11, e22, e12 = self.strain(u)
        tr = e11 + e22
        return (
            2 * self.nu * e11 + self.lam * tr,
            2 * self.nu * e22 + self.lam * tr,
            2 * self.nu * e12,
        )

    def stress_div(self, u):
        s11, s22, s12 = self.stress(u)
        return self.Dx @ s11 + self.Dy @ s12, self.Dx @ s12 + self.Dy @ s22

    def dissipation_form(self, u, phi) -> float:
        """``<sigma(u), eps(phi)>`` summed over all tensor entries."""
        s11, s22, s12 = self.stress(u)
        e11, e22, e12 = self.strain(phi)
        return self.ip_o(s11, e11) + self.ip_o(s22, e22) + 2 * self.ip_o(s12, e12)

    @cached_property
    def Kelastic(self) -> sp.csr_matrix:
        """Symmetric matrix of the form ``(u, phi) -> <sigma(u), eps(phi)>``."""
        W = sp.diags(self.wo)
        Wstrain = sp.block_diag([W, W, 2 * W])
        E = self.Strain
        return (
            2 * self.nu * (E.T @ Wstrain @ E) + self.lam * (self.Div.T @ W @ self.Div)
        ).tocsr()

    # -- boundary ----------------------------------------------------------

    @cached_property
    def edge_weights(self):
        """``[(nodes, weights, normal)]`` for the four edges, corners on both."""
        g = self.geom
        wx = trapezoid_weights(g.nx, g.hx)
        wy = trapezoid_weights(g.ny, g.hy)
        return [
            (g.left, wy, (-1.0, 0.0)),
            (g.right, wy, (1.0, 0.0)),
            (g.bottom, wx, (0.0, -1.0)),
            (g.top, wx, (0.0, 1.0)),
        ]

    def boundary_flux(self, p, u) -> float:
        """``sum over the boundary of p (u . n)`` with trapezoid edge weights."""
        total = 0.0
        for nodes, w, (n1, n2) in self.edge_weights:
            total += float(np.dot(w, p[nodes] * (n1 * u[0][nodes] + n2 * u[1][nodes])))
        return total

    def traction_flux(self, u, phi) -> float:
        """``sum over the boundary of (sigma(u) n) . phi``."""
        s11, s22, s12 = self.stress(u)
        total = 0.0
        for nodes, w, (n1, n2) in self.edge_weights:
            t1 = s11[nodes] * n1 + s12[nodes] * n2
            t2 = s12[nodes] * n1 + s22[nodes] * n2
            total += float(np.dot(w, t1 * phi[0][nodes] + t2 * phi[1][nodes]))
        return total

    def trace_top(self, f) -> np.ndarray:
        return np.asarray(f)[self.geom.top]

    def normal_stress_top(self, u) -> np.ndarray:
        """``[2 nu d_y u2 + lam div u]`` on the interface nodes."""
        return self.trace_top(self.stress(u)[1])

    # -- beam --------------------------------------------------------------

    @cached_property
    def beam_interior(self) -> np.ndarray:
        return np.arange(1, self.geom.nx)

    @cached_property
    def Kbeam(self) -> sp.csr_matrix:
        """Gram matrix ``D2^T Wb D2`` on the full beam vector."""
        return (self.D2.T @ sp.diags(self.wb) @ self.D2).tocsr()

    @cached_property
    def D4(self) -> sp.csr_matrix:
        """Clamped biharmonic on the interior beam nodes, ``Wb^-1 D2^T Wb D2``."""
        I = self.beam_interior
        return (sp.diags(1.0 / self.wb[I]) @ self.Kbeam[I][:, I]).tocsr()

    def apply_D4(self, w) -> np.ndarray:
        """Clamped fourth difference of a full beam vector; zero at the ends."""
        out = np.zeros(self.geom.n_beam)
        out[self.beam_interior] = self.D4 @ np.asarray(w)[self.beam_interior]
        return out

    def clamp(self, w) -> np.ndarray:
        w = np.array(w, dtype=float)
        w[0] = w[-1] = 0.0
        return w

    # -- self test ---------------------------------------------------------

    def self_test(self, trials: int = 20, seed: int = 0) -> dict[str, float]:
        """Worst relative residual of each discrete identity over random fields."""
        rng = np.random.default_rng(seed)
        g = self.geom
        worst = {"green_grad_div": 0.0, "green_elastic": 0.0, "beam_symmetry": 0.0,
                 "dissipation_min": np.inf, "quadrature_const": 0.0}
        for _ in range(trials):
            p = rng.uniform(-1, 1, g.n_nodes)
            u = (rng.uniform(-1, 1, g.n_nodes), rng.uniform(-1, 1, g.n_nodes))
            phi = (rng.uniform(-1, 1, g.n_nodes), rng.uniform(-1, 1, g.n_nodes))
            w = self.clamp(rng.uniform(-1, 1, g.n_beam))
            v = self.clamp(rng.uniform(-1, 1, g.n_beam))
            worst["green_grad_div"] = max(worst["green_grad_div"], green_grad_div_residual(self, p, u))
            worst["green_elastic"] = max(worst["green_elastic"], green_elastic_residual(self, u, phi))
            worst["beam_symmetry"] = max(worst["beam_symmetry"], beam_symmetry_residual(self, w, v))
            worst["dissipation_min"] = min(worst["dissipation_min"], self.dissipation_form(u, u))
        ones = np.ones(g.n_nodes)
        worst["quadrature_const"] = abs(self.ip_o(ones, ones) - g.L1 * g.L2) / (g.L1 * g.L2)
        return worst


def green_grad_div_residual(calc: DiscreteCalculus, p, u) -> float:
    lhs = calc.ip_o_vec(calc.grad(p), u) + calc.ip_o(p, calc.div(u))
    rhs = calc.boundary_flux(p, u)
    scale = abs(calc.ip_o_vec(calc.grad(p), u)) + abs(calc.ip_o(p, calc.div(u))) + abs(rhs)
    return abs(lhs - rhs) / max(scale, 1e-300)


def green_elastic_residual(calc: DiscreteCalculus, u, phi) -> float:
    lhs = calc.ip_o_vec(calc.stress_div(u), phi)
    a = calc.dissipation_form(u, phi)
    flux = calc.traction_flux(u, phi)
    scale = abs(lhs) + abs(a) + abs(flux)
    return abs(lhs - (-a + flux)) / max(scale, 1e-300)


def beam_symmetry_residual(calc: DiscreteCalculus, w, v) -> float:
    lhs = calc.ip_b(calc.apply_D4(w), v)
    rhs = calc.ip_b(calc.D2 @ w, calc.D2 @ v)
    return abs(lhs - rhs) / max(abs(lhs) + abs(rhs), 1e-300)


def build_calculus(geom: Geometry, nu: float = 1.0, lam: float = 1.0, eta: float = 1.0) -> DiscreteCalculus:
    if not nu > 0:
        raise ConfigurationError(f"nu must be positive, got {nu}")
    if not lam >= 0:
        raise ConfigurationError(f"lambda must be nonnegative, got {lam}")
    if not eta > 0:
        raise ConfigurationError(f"eta must be positive, got {eta}")
    Ix = sp.identity(geom.nx + 1, format="csr")
    Iy = sp.identity(geom.ny + 1, format="csr")
    Dx = sp.kron(Iy, sbp_first_derivative(geom.nx, geom.hx), format="csr")
    Dy = sp.kron(sbp_first_derivative(geom.ny, geom.hy), Ix, format="csr")
    wo = np.kron(trapezoid_weights(geom.ny, geom.hy), trapezoid_weights(geom.nx, geom.hx))
    wb = trapezoid_weights(geom.nx, geom.hx)
    return DiscreteCalculus(
        geom=geom, nu=float(nu), lam=float(lam), eta=float(eta),
        Dx=Dx, Dy=Dy, wo=wo, wb=wb,
        D2=beam_second_difference(geom.nx, geom.hx),
        Db=beam_first_difference(geom.nx, geom.hx),
    )


# ----------------------------------------------------------------------------
# states


@dataclass
class State:
    """The quadruple ``[p, u, w, v]`` on one geometry (u stored as ``u1, u2``)."""

    p: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    w: np.ndarray
    v: np.ndarray

    @property
    def u(self):
        return self.u1, self.u2

    @classmethod
    def zeros(cls, geom: Geometry) -> "State":
        n, m = geom.n_nodes, geom.n_beam
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(m), np.zeros(m))

    @classmethod
    def from_flat(cls, geom: Geometry, x) -> "State":
        n, m = geom.n_nodes, geom.n_beam
        x = np.asarray(x)
        if x.shape != (3 * n + 2 * m,):
            raise DimensionError(f"flat state of length {x.size}, expected {3 * n + 2 * m}")
        return cls(x[:n].copy(), x[n:2 * n].copy(), x[2 * n:3 * n].copy(),
                   x[3 * n:3 * n + m].copy(), x[3 * n + m:].copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.p, self.u1, self.u2, self.w, self.v])

    def sizes(self) -> tuple[int, int]:
        return self.p.size, self.w.size

    def __add__(self, other: "State") -> "State":
        _check_same(self, other)
        return State(*(a + b for a, b in zip(self._blocks(), other._blocks())))

    def __sub__(self, other: "State") -> "State":
        _check_same(self, other)
        return State(*(a - b for a, b in zip(self._blocks(), other._blocks())))

    def __mul__(self, c: float) -> "State":
        return State(*(c * a for a in self._blocks()))

    __rmul__ = __mul__

    def _blocks(self):
        return self.p, self.u1, self.u2, self.w, self.v


def _check_same(a: State, b: State) -> None:
    if a.sizes() != b.sizes():
        raise DimensionError(f"state sizes differ: {a.sizes()} vs {b.sizes()}")


def state_gram(calc: DiscreteCalculus) -> sp.csr_matrix:
    """Gram matrix of the energy inner product on flat states."""
    Wo = sp.diags(calc.wo)
    return sp.block_diag([Wo, Wo, Wo, calc.Kbeam, sp.diags(calc.wb)], format="csr")


def inner_product_H(calc: DiscreteCalculus, s1: State, s2: State) -> float:
    n, m = calc.geom.n_nodes, calc.geom.n_beam
    for s in (s1, s2):
        if s.sizes() != (n, m):
            raise DimensionError(f"state of sizes {s.sizes()} on a grid of sizes {(n, m)}")
    return (
        calc.ip_o(s1.p, s2.p)
        + calc.ip_o_vec(s1.u, s2.u)
        + calc.ip_b(calc.D2 @ s1.w, calc.D2 @ s2.w)
        + calc.ip_b(s1.v, s2.v)
    )


def norm_H(calc: DiscreteCalculus, s: State) -> float:
    return float(np.sqrt(max(inner_product_H(calc, s, s), 0.0)))
