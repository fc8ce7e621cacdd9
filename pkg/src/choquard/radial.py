"""Radial discretisation of R^N.

Nodes sit at cell centres of a uniform grid in a stretched coordinate
s in (0, 1), with r = R * s**gamma.  Everything is done in s:

* volume quadrature is the midpoint rule in s with high-order end
  corrections at s = 1 (nothing is needed at s = 0 because the volume
  density vanishes there to high order);
* derivatives use fourth-order stencils in s, with the even reflection
  u(-s) = u(s) at the origin;
* the gradient energy is assembled on cell faces, so that it is an exact
  quadratic form u^T S u whose weighted adjoint is a consistent Laplacian.

Dilations and power rescalings are pure relabelings of the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.interpolate import PchipInterpolator

# number of nodes carrying the end correction of the midpoint rule
_END_CORRECTION = 6


class InvalidParameter(ValueError):
    pass


class GridMismatch(ValueError):
    pass


def sphere_area(N: int) -> float:
    """Area of the unit sphere S^{N-1}."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


def ball_volume(N: int, R: float) -> float:
    return sphere_area(N) * R**N / N


def fd_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Fornberg weights for derivatives 0..m at z from nodes x.

    Returns an array of shape (m+1, len(x)).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((m + 1, n))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def _bernoulli_half(n: int) -> float:
    # B_n(1/2) = -(1 - 2^{1-n}) B_n
    from scipy.special import bernoulli

    return -(1.0 - 2.0 ** (1 - n)) * bernoulli(n)[n]


def _midpoint_end_correction(K: int) -> np.ndarray:
    """Coefficients c_j (in units of h) on the last K midpoint nodes.

    They cancel the right-end Euler-Maclaurin terms of the midpoint rule
    for all polynomials of degree < K.
    """
    x = -(np.arange(K, 0, -1) - 0.5)  # (s_j - 1)/h, increasing
    V = np.vander(x, K, increasing=True).T  # row m: x_j^m
    rhs = np.zeros(K)
    for m in range(1, K, 2):
        rhs[m] = -_bernoulli_half(m + 1) / (m + 1)
    return np.linalg.solve(V, rhs)


def _stencil_matrix(n_rows: int, n_cols: int, entries) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for i, js, ws in entries:
        for j, w in zip(js, ws):
            rows.append(i)
            cols.append(j)
            vals.append(w)
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
    return mat.tocsr()


def _reflect(j: int) -> int:
    # node indices are 0-based at s = (j + 1/2) h; index -1 mirrors to 0, -2 to 1
    return j if j >= 0 else -j - 1


def _face_derivative_matrix(M: int, h: float) -> sparse.csr_matrix:
    """d/ds at interior faces s = f h, f = 1..M-1 (row f-1)."""
    centred = np.array([1.0, -27.0, 27.0, -1.0]) / (24.0 * h)
    entries = []
    for f in range(1, M):
        if f + 1 <= M - 1:
            js = [_reflect(j) for j in (f - 2, f - 1, f, f + 1)]
            entries.append((f - 1, js, centred))
        else:
            js = list(range(M - 4, M))
            xs = (np.array(js) + 0.5) - f
            entries.append((f - 1, js, fd_weights(0.0, xs, 1)[1] / h))
    return _stencil_matrix(M - 1, M, entries)


def _node_derivative_matrices(M: int, h: float):
    """First and second s-derivatives at the nodes, fourth order."""
    d1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
    d2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    e1, e2 = [], []
    for i in range(M):
        if i + 2 <= M - 1:
            js = [_reflect(j) for j in range(i - 2, i + 3)]
            e1.append((i, js, d1))
            e2.append((i, js, d2))
        else:
            js = list(range(M - 6, M))
            xs = np.array(js, dtype=float) - i
            w = fd_weights(0.0, xs, 2)
            e1.append((i, js, w[1] / h))
            e2.append((i, js, w[2] / (h * h)))
    return _stencil_matrix(M, M, e1), _stencil_matrix(M, M, e2)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Graded radial grid with volume weights.

    Construct with :func:`build_grid`.  `scale` records the accumulated
    dilation so that derived arrays can be rescaled without recomputation.
    """

    N: int
    R: float
    M: int
    gamma: float
    nodes: np.ndarray
    weights: np.ndarray
    jac: np.ndarray  # dr/ds at the nodes
    face_weights: np.ndarray  # weights of |du/ds|^2 at interior faces
    scale: float = 1.0
    base_R: float = field(default=0.0, repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def s(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) / self.M

    @cached_property
    def face_derivative(self) -> sparse.csr_matrix:
        return _face_derivative_matrix(self.M, self.h)

    @cached_property
    def node_derivatives(self):
        return _node_derivative_matrices(self.M, self.h)

    @cached_property
    def stiffness(self) -> sparse.csr_matrix:
        """S with u^T S u = int |u'|^2 dV (face quadrature)."""
        D = self.face_derivative
        return (D.T @ sparse.diags(self.face_weights) @ D).tocsr()

    @property
    def key(self) -> tuple:
        return (self.N, self.base_R, self.M, self.gamma, self.scale)

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or self.key == other.key

    def dilated(self, t: float) -> "RadialGrid":
        if not (t > 0 and math.isfinite(t)):
            raise InvalidParameter(f"dilation factor must be positive, got {t}")
        if t == 1.0:
            return self
        g = RadialGrid(
            N=self.N,
            R=self.R * t,
            M=self.M,
            gamma=self.gamma,
            nodes=self.nodes * t,
            weights=self.weights * t**self.N,
            jac=self.jac * t,
            face_weights=self.face_weights * t ** (self.N - 2),
            scale=self.scale * t,
            base_R=self.base_R,
        )
        # stencils do not depend on the scale
        for name in ("face_derivative", "node_derivatives"):
            if name in self.__dict__:
                g.__dict__[name] = self.__dict__[name]
        if "stiffness" in self.__dict__:
            g.__dict__["stiffness"] = self.__dict__["stiffness"] * t ** (self.N - 2)
        return g

    def header(self) -> str:
        return f"# N={self.N} R={self.R!r} M={self.M} gamma={self.gamma!r}"


def build_grid(N: int, R: float = 30.0, M: int = 2000, gamma: float = 2.0) -> RadialGrid:
    for name, val in (("R", R), ("gamma", gamma)):
        if not math.isfinite(val):
            raise InvalidParameter(f"{name} must be finite")
    if int(N) != N or N < 3:
        raise InvalidParameter(f"N must be an integer >= 3, got {N}")
    if not R > 0:
        raise InvalidParameter(f"R must be positive, got {R}")
    if int(M) != M or M < 16:
        raise InvalidParameter(f"M must be an integer >= 16, got {M}")
    if not gamma >= 1:
        raise InvalidParameter(f"gamma must be >= 1, got {gamma}")
    N, M = int(N), int(M)
    R, gamma = float(R), float(gamma)
    h = 1.0 / M
    omega = sphere_area(N)

    s = (np.arange(M) + 0.5) * h
    r = R * s**gamma
    jac = gamma * R * s ** (gamma - 1)
    rho = omega * r ** (N - 1) * jac
    c = np.zeros(M)
    K = min(_END_CORRECTION, M)
    c[M - K :] = _midpoint_end_correction(K)
    weights = (1.0 + c) * h * rho

    sf = np.arange(1, M) * h
    rf = R * sf**gamma
    jf = gamma * R * sf ** (gamma - 1)
    face_weights = h * omega * rf ** (N - 1) / jf

    return RadialGrid(N, R, M, gamma, r, weights, jac, face_weights, 1.0, R)


def face_aligned_grid(N: int, r_face: float, R: float = 30.0, M: int = 2000, gamma: float = 2.0) -> RadialGrid:
    """Grid with R adjusted (slightly) so that r_face is a cell face.

    Indicators of balls of radius r_face are then integrated without a
    partial cell.
    """
    if not 0 < r_face < R:
        raise InvalidParameter("need 0 < r_face < R")
    k = max(1, round(M * (r_face / R) ** (1.0 / gamma)))
    return build_grid(N, r_face * (M / k) ** gamma, M, gamma)


@dataclass(frozen=True, eq=False)
class RadialField:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.M,):
            raise InvalidParameter(
                f"field has {v.shape} values but the grid has {self.grid.M} nodes"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidParameter("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @cached_property
    def s_derivative(self) -> np.ndarray:
        return self.grid.node_derivatives[0] @ self.values

    @cached_property
    def derivative(self) -> np.ndarray:
        """du/dr at the nodes (fourth order, u'(0) = 0 built in)."""
        return self.s_derivative / self.grid.jac

    def laplacian(self) -> np.ndarray:
        """Strong-form u'' + (N-1) u'/r from node stencils."""
        g = self.grid
        D1, D2 = g.node_derivatives
        us = self.s_derivative
        uss = D2 @ self.values
        s = g.s
        r = g.nodes
        return (uss - (g.gamma - 1.0) * us / s) / g.jac**2 + (g.N - 1) * us / (r * g.jac)

    def with_values(self, values) -> "RadialField":
        return RadialField(self.grid, values)

    def __mul__(self, c: float) -> "RadialField":
        return RadialField(self.grid, self.values * c)

    __rmul__ = __mul__

    def is_ground_state_candidate(self, rtol: float = 1e-8) -> bool:
        u = self.values
        return bool(np.all(u > 0) and np.all(u[1:] <= u[:-1] * (1.0 + rtol)))

    def peak(self) -> float:
        """u(0) by even extrapolation through the first three nodes."""
        u = self.values
        s2 = (np.arange(3) + 0.5) ** 2
        w = fd_weights(0.0, s2, 0)[0]
        return float(w @ u[:3])


def field_from_function(grid: RadialGrid, fn) -> RadialField:
    return RadialField(grid, np.asarray(fn(grid.nodes), dtype=float))


def _check_same(a: RadialField, b: RadialField):
    if not a.grid.same_as(b.grid):
        raise GridMismatch("fields live on different grids")


def volume_integral(f: RadialField) -> float:
    return float(f.grid.weights @ f.values)


def lebesgue_integral(f: RadialField, s: float) -> float:
    """int |f|^s dV."""
    return float(f.grid.weights @ np.abs(f.values) ** s)


def gradient_energy(f: RadialField) -> float:
    """int |f'|^2 dV."""
    g = f.grid
    du = g.face_derivative @ f.values
    return float(g.face_weights @ (du * du))


def inner(f: RadialField, g: RadialField) -> float:
    _check_same(f, g)
    return float(f.grid.weights @ (f.values * g.values))


def norm(f: RadialField, kind: str = "L2", s: float | None = None, eps: float | None = None) -> float:
    """L2, Ls (needs s), GradL2, or H1 (needs eps) norm."""
    k = kind.lower()
    if k == "l2":
        return math.sqrt(lebesgue_integral(f, 2.0))
    if k == "ls":
        if s is None or not s >= 1:
            raise InvalidParameter(f"Ls norm needs s >= 1, got {s}")
        val = lebesgue_integral(f, s)
        return val ** (1.0 / s)
    if k in ("gradl2", "grad"):
        return math.sqrt(gradient_energy(f))
    if k == "h1":
        if eps is None or not eps >= 0:
            raise InvalidParameter(f"H1 norm needs eps >= 0, got {eps}")
        return math.sqrt(gradient_energy(f) + eps * lebesgue_integral(f, 2.0))
    raise InvalidParameter(f"unknown norm kind {kind!r}")


def dilate(f: RadialField, t: float) -> RadialField:
    """u_t(x) = u(x/t) as a relabeling of the grid."""
    if not t > 0:
        raise InvalidParameter(f"dilation factor must be positive, got {t}")
    if t == 1.0:
        return f
    return RadialField(f.grid.dilated(t), f.values)


def power_rescale(f: RadialField, a: float, b: float) -> RadialField:
    """w(x) = a f(b x)."""
    if not (a > 0 and b > 0):
        raise InvalidParameter(f"power_rescale needs a, b > 0, got {a}, {b}")
    g = dilate(f, 1.0 / b)
    return RadialField(g.grid, a * f.values) if a != 1.0 else g


def resample(f: RadialField, grid: RadialGrid) -> RadialField:
    """Monotone cubic interpolation onto another grid (zero beyond R)."""
    if f.grid.same_as(grid):
        return f
    r = f.grid.nodes
    u = f.values
    x = np.concatenate([-r[::-1], r])
    y = np.concatenate([u[::-1], u])
    # underflowed tails give 1/0 slopes inside PCHIP's harmonic mean; harmless
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        interp = PchipInterpolator(x, y, extrapolate=False)
        vals = interp(grid.nodes)
    vals = np.where(np.isnan(vals), 0.0, vals)
    return RadialField(grid, vals)


def write_field_csv(f: RadialField, path) -> None:
    path = Path(path)
    lines = [f.grid.header(), "r,value"]
    lines += [f"{r:.17g},{v:.17g}" for r, v in zip(f.grid.nodes, f.values)]
    path.write_text("\n".join(lines) + "\n")


def _parse_header(line: str) -> dict:
    if not line.startswith("#"):
        raise InvalidParameter("field CSV must start with a '# N=... R=... M=... gamma=...' header")
    out = {}
    for tok in line[1:].split():
        key, _, val = tok.partition("=")
        out[key] = val
    try:
        return dict(N=int(out["N"]), R=float(out["R"]), M=int(out["M"]), gamma=float(out["gamma"]))
    except KeyError as exc:
        raise InvalidParameter(f"field CSV header lacks {exc}") from None


def read_field_csv(path) -> RadialField:
    text = Path(path).read_text().splitlines()
    hdr = _parse_header(text[0])
    data = np.array([[float(x) for x in ln.split(",")] for ln in text[2:] if ln.strip()])
    grid = build_grid(hdr["N"], hdr["R"], hdr["M"], hdr["gamma"])
    if len(data) != grid.M:
        raise InvalidParameter("row count does not match header M")
    if not np.allclose(data[:, 0], grid.nodes, rtol=1e-12, atol=0):
        raise InvalidParameter("node column does not match the header grid")
    return RadialField(grid, data[:, 1])
