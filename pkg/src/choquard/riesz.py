"""Riesz potential I_alpha * f for radial f on a RadialGrid.

The kernel of the radial reduction is the spherical mean

    k(r, s) = mean over |theta| = 1 of |r e_1 - s theta|^{-(N - alpha)},

which depends on m = max(r, s) and x = min(r, s)/m only:
k = m^{-(N-alpha)} F(x).  For N = 3 F is elementary; for other N it is
computed by Gauss-Legendre quadrature in the polar angle on dyadic panels
that resolve the peak at theta = 0 when x is close to 1.

The operator is a Nystrom matrix K_ij = A w_j k(r_i, r_j) off the
diagonal.  The diagonal uses singularity subtraction,

    (I*f)(r_i) = sum_{j != i} K_ij (f_j - f_i) + f_i Phi(r_i),

where Phi is the potential of the indicator of the truncation ball, which
is a smooth one-dimensional angular integral.  This keeps w_i K_ij exactly
symmetric.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gamma as G
from scipy.special import hyp2f1

from .radial import GridMismatch, InvalidParameter, RadialField, RadialGrid, sphere_area

_GL_PANEL = 20
_BALL_ORDER = 256
_MAX_DENSE = 20000


def _check_alpha(N: int, alpha: float):
    if not (0 < alpha < N):
        raise InvalidParameter(f"alpha must lie in (0, {N}), got {alpha}")


def riesz_constant(N: int, alpha: float) -> float:
    """A_alpha(N) = Gamma((N-a)/2) / (Gamma(a/2) pi^{N/2} 2^a)."""
    _check_alpha(N, alpha)
    return G((N - alpha) / 2) / (G(alpha / 2) * math.pi ** (N / 2) * 2.0**alpha)


def hls_sharp_constant(N: int, alpha: float) -> float:
    """Sharp constant of the diagonal HLS inequality for |x|^{-(N-alpha)}."""
    _check_alpha(N, alpha)
    return (
        math.pi ** ((N - alpha) / 2)
        * G(alpha / 2)
        / G((N + alpha) / 2)
        * (G(N / 2) / G(N)) ** (-alpha / N)
    )


# ---------------------------------------------------------------- kernels

def kernel_profile_3d(alpha: float, x) -> np.ndarray:
    """F(x) for N = 3, written to avoid cancellation for small x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x == 0
    xs = np.where(small, 0.5, x)
    # x = 1 (coincident nodes) is singular; callers overwrite that entry
    with np.errstate(divide="ignore", invalid="ignore"):
        if alpha == 1.0:
            val = np.arctanh(xs) / xs
        else:
            b = alpha - 1.0
            val = (np.expm1(b * np.log1p(xs)) - np.expm1(b * np.log1p(-xs))) / (2.0 * xs * b)
    out[...] = np.where(small, 1.0, val)
    return out


def kernel_3d(alpha: float, r, s) -> np.ndarray:
    r, s = np.broadcast_arrays(np.asarray(r, float), np.asarray(s, float))
    m = np.maximum(r, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.minimum(r, s) / m
    return m ** (alpha - 3.0) * kernel_profile_3d(alpha, x)


def _panel_nodes(n: int):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


def kernel_profile_angular(N: int, alpha: float, x, panel_order: int = _GL_PANEL) -> np.ndarray:
    """F(x) for any N by dyadic Gauss-Legendre panels in theta."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lam = N - alpha
    tn, tw = _panel_nodes(panel_order)
    norm = math.sqrt(math.pi) * G((N - 1) / 2) / G(N / 2)  # int_0^pi sin^{N-2}
    delta = np.maximum(1.0 - x, 1e-300)
    levels = np.maximum(np.ceil(np.log2(math.pi / delta)).astype(int), 0) + 1
    out = np.empty_like(x)
    for L in np.unique(levels):
        idx = np.nonzero(levels == L)[0]
        d = delta[idx][:, None]
        if L == 1:
            edges = np.array([0.0, math.pi])[None, :].repeat(len(idx), 0)
        else:
            k = np.arange(L)
            edges = np.concatenate([np.zeros((len(idx), 1)), d * 2.0**k], axis=1)
            edges[:, -1] = math.pi
        a, b = edges[:, :-1], edges[:, 1:]
        width = b - a
        theta = a[:, :, None] + width[:, :, None] * tn[None, None, :]
        wts = width[:, :, None] * tw[None, None, :]
        xx = x[idx][:, None, None]
        # 1 + x^2 - 2x cos t = (1-x)^2 + 4x sin^2(t/2), no cancellation
        base = (1.0 - xx) ** 2 + 4.0 * xx * np.sin(0.5 * theta) ** 2
        with np.errstate(divide="ignore"):
            integrand = base ** (-lam / 2) * np.sin(theta) ** (N - 2)
        out[idx] = (integrand * wts).sum(axis=(1, 2)) / norm
    return out


def kernel_angular(N: int, alpha: float, r, s, panel_order: int = _GL_PANEL) -> np.ndarray:
    r, s = np.broadcast_arrays(np.asarray(r, float), np.asarray(s, float))
    m = np.maximum(r, s)
    x = np.minimum(r, s) / m
    F = kernel_profile_angular(N, alpha, x.ravel(), panel_order).reshape(x.shape)
    return m ** (alpha - N) * F


def kernel_hypergeometric(N: int, alpha: float, r, s) -> np.ndarray:
    """Closed form through 2F1; used as an independent check only."""
    r, s = np.broadcast_arrays(np.asarray(r, float), np.asarray(s, float))
    lam = N - alpha
    m = np.maximum(r, s)
    z = (np.minimum(r, s) / m) ** 2
    return m ** (-lam) * hyp2f1(lam / 2, lam / 2 - N / 2 + 1, N / 2, z)


def kernel(N: int, alpha: float, r, s) -> np.ndarray:
    if N == 3:
        return kernel_3d(alpha, r, s)
    return kernel_angular(N, alpha, r, s)


def ball_potential(N: int, alpha: float, r, R: float, order: int = _BALL_ORDER) -> np.ndarray:
    """(I_alpha * 1_{B_R})(r) for 0 <= r < R."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    A = riesz_constant(N, alpha)
    t, w = np.polynomial.legendre.leggauss(order)
    theta = 0.5 * math.pi * (t + 1.0)
    w = 0.5 * math.pi * w
    ct, st = np.cos(theta), np.sin(theta)
    rr = r[:, None]
    # distance to the sphere along direction theta
    rho = -rr * ct + np.sqrt(R * R - (rr * st) ** 2)
    integral = (rho**alpha * st ** (N - 2)) @ w
    return A * sphere_area(N - 1) / alpha * integral


def exterior_potential(grid: RadialGrid, values: np.ndarray, alpha: float, r, terms: int = 40) -> np.ndarray:
    """(I_alpha * f)(r) for r beyond the support of f, by the radial multipole series

        A r^{-(N-alpha)} sum_k c_k r^{-2k} int f |y|^{2k} dy,

    c_k the 2F1 coefficients of the spherical mean.  The k = 0 term alone is
    the far-field law A |f|_1 r^{-(N-alpha)}.
    """
    N = grid.N
    _check_alpha(N, alpha)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    support = grid.nodes[np.nonzero(values)[0]]
    rmax = support.max() if support.size else 0.0
    if np.any(r <= rmax):
        raise InvalidParameter("exterior_potential needs r outside the support of f")
    lam = N - alpha
    a, b, c = lam / 2, lam / 2 - N / 2 + 1, N / 2
    total = np.zeros_like(r)
    coef = 1.0
    x = rmax / r
    for k in range(terms):
        mom = float(grid.weights @ (values * (grid.nodes / rmax) ** (2 * k))) if rmax > 0 else 0.0
        total += coef * mom * x ** (2 * k)
        coef *= (a + k) * (b + k) / ((c + k) * (k + 1))
    return riesz_constant(N, alpha) * r ** (-lam) * total


# ---------------------------------------------------------------- operator

@dataclass(frozen=True, eq=False)
class RieszOperator:
    grid: RadialGrid
    alpha: float
    A: float
    K: np.ndarray

    def _check(self, f: RadialField):
        if not self.grid.same_as(f.grid):
            raise GridMismatch("field is not on the operator's grid")

    def potential(self, values: np.ndarray) -> np.ndarray:
        return self.K @ values

    def dilated(self, t: float) -> "RieszOperator":
        if t == 1.0:
            return self
        return RieszOperator(self.grid.dilated(t), self.alpha, self.A, self.K * t**self.alpha)

    def for_grid(self, grid: RadialGrid) -> "RieszOperator":
        """This operator relabeled onto a dilation of its own grid."""
        if grid.same_as(self.grid):
            return self
        if (grid.N, grid.base_R, grid.M, grid.gamma) != (
            self.grid.N,
            self.grid.base_R,
            self.grid.M,
            self.grid.gamma,
        ):
            raise GridMismatch("grid is not a dilation of the operator's grid")
        op = self.dilated(grid.scale / self.grid.scale)
        return RieszOperator(grid, op.alpha, op.A, op.K)


def _kernel_matrix(grid: RadialGrid, alpha: float) -> np.ndarray:
    r = grid.nodes
    M = grid.M
    if grid.N == 3:
        k = kernel_3d(alpha, r[:, None], r[None, :])
        np.fill_diagonal(k, 0.0)
        return k
    iu = np.triu_indices(M, 1)
    vals = np.empty(len(iu[0]))
    chunk = 200_000
    for start in range(0, len(vals), chunk):
        sl = slice(start, start + chunk)
        vals[sl] = kernel_angular(grid.N, alpha, r[iu[0][sl]], r[iu[1][sl]])
    k = np.zeros((M, M))
    k[iu] = vals
    return k + k.T


def build_operator(grid: RadialGrid, alpha: float) -> RieszOperator:
    _check_alpha(grid.N, alpha)
    if grid.M > _MAX_DENSE:
        raise MemoryError(
            f"dense Riesz matrix with M={grid.M} needs {8 * grid.M**2 / 2**30:.1f} GiB; "
            f"limit is M={_MAX_DENSE}"
        )
    A = riesz_constant(grid.N, alpha)
    k = _kernel_matrix(grid, alpha)
    K = A * k * grid.weights[None, :]
    phi = ball_potential(grid.N, alpha, grid.nodes, grid.R)
    K[np.diag_indices_from(K)] = phi - K.sum(axis=1)
    return RieszOperator(grid, float(alpha), A, K)


def apply(op: RieszOperator, f: RadialField) -> RadialField:
    op._check(f)
    return RadialField(f.grid, op.potential(f.values))


def bilinear(op: RieszOperator, f: RadialField, g: RadialField) -> float:
    """<f, g>_alpha = int (I_alpha * f) g dV."""
    op._check(f)
    op._check(g)
    return float(g.grid.weights @ (g.values * op.potential(f.values)))


def choquard_energy(op: RieszOperator, u: RadialField, p: float) -> float:
    """D_p(u) = int (I_alpha * |u|^p) |u|^p dV."""
    if p < 1:
        raise InvalidParameter(f"p must be >= 1, got {p}")
    op._check(u)
    up = np.abs(u.values) ** p
    return float(u.grid.weights @ (up * op.potential(up)))


# ---------------------------------------------------------------- cache

def grid_hash(grid: RadialGrid) -> str:
    h = hashlib.sha256()
    h.update(struct.pack("<qdqd", grid.N, grid.R, grid.M, grid.gamma))
    h.update(grid.nodes.astype("<f8").tobytes())
    return h.hexdigest()[:16]


_HEADER = struct.Struct("<qddqd")


def save_operator(op: RieszOperator, path) -> None:
    g = op.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(g.N, op.alpha, g.R, g.M, g.gamma))
        fh.write(np.ascontiguousarray(op.K, dtype="<f8").tobytes())


def load_operator(path, grid: RadialGrid) -> RieszOperator:
    data = Path(path).read_bytes()
    N, alpha, R, M, gamma = _HEADER.unpack_from(data)
    if (N, M) != (grid.N, grid.M) or not math.isclose(R, grid.R, rel_tol=1e-15) or gamma != grid.gamma:
        raise GridMismatch("cached kernel belongs to a different grid")
    K = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(M, M).copy()
    return RieszOperator(grid, alpha, riesz_constant(N, alpha), K)


def cached_operator(grid: RadialGrid, alpha: float, cache_dir=None) -> RieszOperator:
    """build_operator with an optional on-disk cache keyed by (N, alpha, grid)."""
    if cache_dir is None:
        return build_operator(grid, alpha)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"riesz_N{grid.N}_a{alpha!r}_{grid_hash(grid)}.bin"
    if path.exists():
        return load_operator(path, grid)
    op = build_operator(grid, alpha)
    save_operator(op, path)
    return op
