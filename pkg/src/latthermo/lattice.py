"""Bravais lattice geometry, periodic supercells and Fourier analysis on them.

The supercell of level N collects the lattice points inside B(-N,N]^d; its
dual group is the finite k-grid on which the discrete Fourier transform is
orthogonal. All site bookkeeping is done in integer coordinates x with
site = A x, which keeps wrapping and membership tests exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "LatticeSpec",
    "Supercell",
    "DualGrid",
    "DisplacementField",
    "build_supercell",
    "stencil_difference",
    "dft",
    "idft",
    "periodic_projection",
    "cutoff_T_R",
]


class ConfigurationError(ValueError):
    """Raised for invalid lattice / model configuration."""


class PreconditionError(ValueError):
    """Raised when an operation's precondition is violated."""


def _integer_matrix(M: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    R = np.rint(M)
    if not np.allclose(M, R, atol=tol):
        raise ConfigurationError("matrix is not integer within tolerance")
    return R.astype(np.int64)


def _adjugate_int(C: np.ndarray) -> tuple[np.ndarray, int]:
    """Exact adjugate and determinant of a small integer matrix."""
    d = C.shape[0]
    det = int(round(np.linalg.det(C.astype(float))))
    if det == 0:
        raise ConfigurationError("supercell matrix is singular")
    adj = np.empty((d, d), dtype=np.int64)
    if d == 1:
        adj[0, 0] = 1
    else:
        for i in range(d):
            for j in range(d):
                minor = np.delete(np.delete(C, i, axis=0), j, axis=1)
                adj[j, i] = (-1) ** (i + j) * int(round(np.linalg.det(minor.astype(float))))
    # exactness check: adj @ C == det * I
    if not np.array_equal(adj @ C, det * np.eye(d, dtype=np.int64)):
        raise ConfigurationError("adjugate computation failed (matrix too large?)")
    return adj, det


def _span_index(vectors: np.ndarray) -> int:
    """Index of the integer span of the given d-vectors in Z^d.

    Returns gcd of all d x d minors (Cauchy-Binet); the vectors span Z^d
    exactly when this equals 1, and 0 means they do not span a full-rank
    sublattice.
    """
    d, ncols = vectors.shape[1], vectors.shape[0]
    if ncols < d:
        return 0
    g = 0
    for cols in itertools.combinations(range(ncols), d):
        sub = vectors[list(cols), :].astype(float)
        minor = int(round(np.linalg.det(sub)))
        g = int(np.gcd(g, abs(minor)))
        if g == 1:
            return 1
    return g


@dataclass(frozen=True)
class LatticeSpec:
    """Bravais lattice Lambda = A Z^d with interaction stencil R.

    A: lattice generator (d x d, nonsingular); B: supercell generator with
    A^-1 B integer; m: displacement dimension; r_cut: interaction cut-off.
    The stencil R is derived: all nonzero lattice points inside the open
    ball of radius r_cut, in a fixed point-symmetric order.
    """

    A: np.ndarray
    B: np.ndarray
    m: int
    r_cut: float
    d: int = field(init=False)
    C: np.ndarray = field(init=False)          # A^-1 B, integer
    stencil_x: np.ndarray = field(init=False)  # (|R|, d) integer coords
    stencil: np.ndarray = field(init=False)    # (|R|, d) real vectors A x

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        d = A.shape[0]
        if A.shape != (d, d) or B.shape != (d, d):
            raise ConfigurationError("A and B must be square matrices of equal size")
        if abs(np.linalg.det(A)) < 1e-14:
            raise ConfigurationError("lattice generator A is singular")
        if self.m < 1:
            raise ConfigurationError("displacement dimension m must be >= 1")
        if self.r_cut <= 0:
            raise ConfigurationError("r_cut must be positive")
        C = _integer_matrix(np.linalg.solve(A, B))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "C", C)
        sx = self._enumerate_stencil(A, d, self.r_cut)
        object.__setattr__(self, "stencil_x", sx)
        object.__setattr__(self, "stencil", sx @ A.T)
        if _span_index(sx) != 1:
            raise ConfigurationError(
                "interaction range does not span the lattice over the integers; increase r_cut"
            )

    @staticmethod
    def _enumerate_stencil(A: np.ndarray, d: int, r_cut: float) -> np.ndarray:
        # bound integer coordinates via |x| <= |A^-1| r_cut
        bound = int(np.ceil(np.linalg.norm(np.linalg.inv(A), 2) * r_cut)) + 1
        pts = []
        for x in itertools.product(range(-bound, bound + 1), repeat=d):
            if all(v == 0 for v in x):
                continue
            if np.linalg.norm(A @ np.array(x, dtype=float)) < r_cut - 1e-12:
                pts.append(x)
        if not pts:
            raise ConfigurationError("empty interaction range; increase r_cut")
        sx = np.array(sorted(pts), dtype=np.int64)
        # point symmetry of the ball is automatic; assert it anyway
        keys = {tuple(p) for p in sx.tolist()}
        assert all(tuple(-q for q in p) in keys for p in keys)
        return sx

    @property
    def nR(self) -> int:
        return self.stencil_x.shape[0]

    def stencil_slot(self, rho_x: Iterable[int]) -> int:
        key = tuple(int(v) for v in rho_x)
        for i, r in enumerate(self.stencil_x.tolist()):
            if tuple(r) == key:
                return i
        raise KeyError(f"{key} not in stencil")


@dataclass(frozen=True)
class DualGrid:
    """Dual group of the supercell: k-points of the discrete Fourier basis."""

    N: int
    y: np.ndarray        # (nk, d) integer labels, k = (pi/N) B^-T y
    k: np.ndarray        # (nk, d) real k-points

    def __len__(self) -> int:
        return self.y.shape[0]


def _enumerate_cell(C: np.ndarray, N: int) -> np.ndarray:
    """Integer points x with C^-1 x in (-N, N]^d, ordered by C^-1 x lexicographically."""
    d = C.shape[0]
    adj, det = _adjugate_int(C)
    D = 2 * N * det
    if D < 0:
        adj, D = -adj, -D
    corners = np.array(list(itertools.product((-N, N), repeat=d)), dtype=np.int64)
    verts = corners @ C.T
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    ranges = [np.arange(lo[i], hi[i] + 1, dtype=np.int64) for i in range(d)]
    grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, d)
    # C^-1 x = (adj x) * 2N / D; membership in (-N, N]^d tested in exact integers
    s = 2 * N * (grid @ adj.T)
    keep = np.all((s > -N * D) & (s <= N * D), axis=1)
    pts = grid[keep]
    order = np.lexsort((pts @ adj.T)[:, ::-1].T)
    return pts[order]


def _wrap_points(x: np.ndarray, C: np.ndarray, N: int) -> np.ndarray:
    """Canonical representatives of x modulo 2N C Z^d (exact integer arithmetic)."""
    adj, det = _adjugate_int(C)
    D = 2 * N * det
    if D < 0:
        adj, D = -adj, -D
    a = x @ adj.T                        # det * C^-1 x
    # want z with (a - det*2N*C... ) : t = a/D, z = ceil(t - 1/2) = floor((2a + D - 1)/(2D))
    z = (2 * a + D - 1) // (2 * D)
    return x - 2 * N * (z @ C.T)


class Supercell:
    """Periodic supercell of level N: site enumeration, wrapping, stencils, DFT.

    Sites are stored in integer coordinates (rows of ``x``); real positions
    are ``x @ A.T``. A fast FFT transform is used when A^-1 B is diagonal,
    otherwise a dense DFT matrix over the exact dual group.
    """

    def __init__(self, spec: LatticeSpec, N: int, check_interaction: bool = True):
        if N < 1:
            raise PreconditionError("N must be a positive integer")
        self.spec = spec
        self.N = int(N)
        self.x = _enumerate_cell(spec.C, N)
        self.n = self.x.shape[0]
        expect = (2 * N) ** spec.d * abs(int(round(np.linalg.det(spec.C.astype(float)))))
        if self.n != expect:
            raise ConfigurationError(f"site enumeration produced {self.n} sites, expected {expect}")
        self.pos = self.x @ spec.A.T
        self.r = np.linalg.norm(self.pos, axis=1)
        self._index: dict[tuple, int] = {tuple(p): i for i, p in enumerate(self.x.tolist())}
        # the interaction ball must embed into the cell for stencil energetics
        ball = spec.stencil_x
        wrapped = _wrap_points(ball, spec.C, N)
        self.interaction_fits = bool(np.array_equal(ball, wrapped))
        if check_interaction and not self.interaction_fits:
            raise PreconditionError(f"N={N} too small for r_cut={spec.r_cut}")
        self._neighbors = self.site_indices(self.x[:, None, :] + spec.stencil_x[None, :, :])
        self.dual = self._build_dual()
        self._fft_shape = self._diagonal_fft_shape()
        self._dft_matrix_cache: np.ndarray | None = None

    # -- site bookkeeping -------------------------------------------------

    def wrap(self, x: np.ndarray) -> np.ndarray:
        return _wrap_points(np.asarray(x, dtype=np.int64), self.spec.C, self.N)

    def site_indices(self, x: np.ndarray) -> np.ndarray:
        """Ordinals of (...,(d)) integer points after periodic wrapping."""
        x = np.asarray(x, dtype=np.int64)
        shape = x.shape[:-1]
        w = self.wrap(x.reshape(-1, x.shape[-1]))
        idx = np.fromiter(
            (self._index[tuple(p)] for p in w.tolist()), dtype=np.int64, count=w.shape[0]
        )
        return idx.reshape(shape)

    def index(self, x: Iterable[int]) -> int:
        return int(self.site_indices(np.asarray(list(x), dtype=np.int64)[None, :])[0])

    @property
    def neighbors(self) -> np.ndarray:
        """(n, |R|) site ordinals of ell + rho for every site and stencil vector."""
        return self._neighbors

    def offset_table(self, rows: np.ndarray | None = None) -> np.ndarray:
        """(len(rows), n) ordinals of wrap(x_i - x_j); rows defaults to all sites."""
        xi = self.x if rows is None else self.x[rows]
        return self.site_indices(xi[:, None, :] - self.x[None, :, :])

    def site_permutation(self, Q: np.ndarray) -> np.ndarray:
        """perm[i] = index of wrap(Q x_i) for an integer lattice automorphism Q."""
        Q = _integer_matrix(np.asarray(Q, dtype=float))
        return self.site_indices(self.x @ Q.T)

    # -- dual group --------------------------------------------------------

    def _build_dual(self) -> DualGrid:
        Ct = self.spec.C.T.copy()
        y = _enumerate_cell(Ct, self.N)
        # k = (pi/N) B^-T y
        k = (np.pi / self.N) * np.linalg.solve(self.spec.B.T, y.T).T
        return DualGrid(N=self.N, y=y, k=k)

    def _diagonal_fft_shape(self) -> tuple[int, ...] | None:
        C = self.spec.C
        if np.array_equal(C, np.diag(np.diag(C))) and np.all(np.diag(C) > 0):
            return tuple(int(2 * self.N * c) for c in np.diag(C))
        return None

    def _dft_matrix(self) -> np.ndarray:
        if self._dft_matrix_cache is None:
            # phase k.ell = (pi/N) y^T C^-1 x
            Cinv = np.linalg.inv(self.spec.C.astype(float))
            phase = (np.pi / self.N) * (self.dual.y @ Cinv @ self.x.T)
            self._dft_matrix_cache = np.exp(1j * phase)
        return self._dft_matrix_cache

    def _grid_scatter_indices(self) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
        shape = self._fft_shape
        gx = tuple(np.mod(self.x[:, i], shape[i]) for i in range(self.spec.d))
        gy = tuple(np.mod(self.dual.y[:, i], shape[i]) for i in range(self.spec.d))
        return gx, gy

    def dft(self, f: np.ndarray) -> np.ndarray:
        """g_hat(k) = sum_ell e^{i k.ell} f(ell); f has shape (n, ...)."""
        f = np.asarray(f)
        if f.shape[0] != self.n:
            raise ValueError(f"field has {f.shape[0]} entries, cell has {self.n} sites")
        if self._fft_shape is None:
            E = self._dft_matrix()
            return np.tensordot(E, f, axes=(1, 0))
        shape = self._fft_shape
        gx, gy = self._grid_scatter_indices()
        grid = np.zeros(shape + f.shape[1:], dtype=complex)
        grid[gx] = f
        d = self.spec.d
        ghat = np.fft.ifftn(grid, axes=tuple(range(d))) * np.prod(shape)
        return ghat[gy]

    def idft(self, fhat: np.ndarray) -> np.ndarray:
        """Inverse transform: f(ell) = |B_N|^-1 sum_k e^{-i k.ell} g_hat(k)."""
        fhat = np.asarray(fhat, dtype=complex)
        if fhat.shape[0] != self.n:
            raise ValueError("spectrum size does not match dual grid")
        if self._fft_shape is None:
            E = self._dft_matrix()
            return np.tensordot(E.conj().T, fhat, axes=(1, 0)) / self.n
        shape = self._fft_shape
        gx, gy = self._grid_scatter_indices()
        grid = np.zeros(shape + fhat.shape[1:], dtype=complex)
        grid[gy] = fhat
        d = self.spec.d
        f = np.fft.fftn(grid, axes=tuple(range(d))) / np.prod(shape)
        return f[gx]

    # -- fields -----------------------------------------------------------

    def zero_field(self) -> "DisplacementField":
        return DisplacementField(self, np.zeros((self.n, self.spec.m)))

    def field(self, values: np.ndarray, layout: str = "periodic",
              support_radius: float | None = None) -> "DisplacementField":
        return DisplacementField(self, np.asarray(values, dtype=float),
                                 layout=layout, support_radius=support_radius)

    def stencil_gradients(self, values: np.ndarray) -> np.ndarray:
        """(n, |R|, m) finite-difference gradients Du for all sites at once."""
        return values[self._neighbors] - values[:, None, :]


def build_supercell(spec: LatticeSpec, N: int, check_interaction: bool = True) -> Supercell:
    return Supercell(spec, N, check_interaction=check_interaction)


@dataclass
class DisplacementField:
    """Map from supercell sites to R^m, periodic or compactly supported."""

    cell: Supercell
    values: np.ndarray
    layout: str = "periodic"
    support_radius: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.cell.n, self.cell.spec.m):
            raise ValueError(f"values must have shape ({self.cell.n}, {self.cell.spec.m})")
        if self.layout not in ("periodic", "compact"):
            raise ValueError("layout must be 'periodic' or 'compact'")
        if self.layout == "compact" and self.support_radius is None:
            raise ValueError("compact layout requires a support radius")
        self.values = v

    @property
    def m(self) -> int:
        return self.cell.spec.m

    def __call__(self, x: Iterable[int]) -> np.ndarray:
        return self.values[self.cell.index(x)]

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def zero_mean(self) -> "DisplacementField":
        return DisplacementField(self.cell, self.values - self.mean(), self.layout,
                                 self.support_radius)

    def gradients(self) -> np.ndarray:
        return self.cell.stencil_gradients(self.values)

    def translated(self, shift_x: Iterable[int]) -> "DisplacementField":
        """Field ell -> u(ell - a) for a lattice translation a."""
        sx = np.asarray(list(shift_x), dtype=np.int64)
        src = self.cell.site_indices(self.cell.x - sx[None, :])
        return DisplacementField(self.cell, self.values[src], self.layout, self.support_radius)


def stencil_difference(u: DisplacementField, x: Iterable[int]) -> np.ndarray:
    """Finite-difference gradient Du(ell) as an (|R|, m) tuple in stencil order."""
    cell = u.cell
    i = cell.index(x)
    return u.values[cell.neighbors[i]] - u.values[i]


def dft(u: DisplacementField | np.ndarray, cell: Supercell | None = None) -> np.ndarray:
    if isinstance(u, DisplacementField):
        return u.cell.dft(u.values)
    if cell is None:
        raise ValueError("cell required for raw arrays")
    return cell.dft(u)


def idft(fhat: np.ndarray, cell: Supercell) -> np.ndarray:
    return cell.idft(fhat)


def periodic_projection(f_hat: Callable[[np.ndarray], np.ndarray], cell: Supercell,
                        skip_zero: bool = False) -> np.ndarray:
    """Sample a reciprocal-space symbol on the dual grid and transform back.

    f_hat maps a (nk, d) array of k-points to (nk, ...) values. With
    ``skip_zero`` the k=0 term is omitted (for symbols singular at the
    origin); the result then has zero mean over the cell.
    """
    k = cell.dual.k
    zero = np.all(cell.dual.y == 0, axis=1)
    if skip_zero:
        vals_nz = np.asarray(f_hat(k[~zero]), dtype=complex)
        vals = np.zeros((cell.n,) + vals_nz.shape[1:], dtype=complex)
        vals[~zero] = vals_nz
    else:
        vals = np.asarray(f_hat(k), dtype=complex)
        if vals.shape[0] != cell.n:
            raise ValueError("symbol returned wrong number of values")
    out = cell.idft(vals)
    imag = np.max(np.abs(out.imag)) if out.size else 0.0
    return out.real if imag < 1e-9 * (1 + np.max(np.abs(out.real))) else out


def _taper_profile(r: np.ndarray, r_inner: float, r_outer: float) -> np.ndarray:
    """C^2 radial taper: 1 below r_inner, 0 above r_outer, quintic blend between."""
    t = np.clip((r_outer - r) / (r_outer - r_inner), 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def cutoff_T_R(u: DisplacementField, R: float) -> DisplacementField:
    """Truncate a displacement field: exact inside |ell| <= R/2, constant outside R.

    Realized as eta_R (u - c) + c with a C^2 radial taper eta_R and c the
    mean of u over the blending annulus. The taper is 1 on |ell| <= R/2 + r_cut
    and 0 on |ell| >= R - r_cut, so both the inner-region identity Dw = Du
    (|ell| <= R/2) and the outer vanishing Dw = 0 (|ell| >= R) hold exactly.
    """
    cell = u.cell
    r_cut = cell.spec.r_cut
    r_inner = R / 2 + r_cut
    r_outer = R - r_cut
    if r_outer <= r_inner + 1e-12:
        raise PreconditionError(f"cut-off radius R={R} below minimal radius {4 * r_cut}")
    r = cell.r
    annulus = (r > R / 2) & (r < R)
    c = u.values[annulus].mean(axis=0) if np.any(annulus) else u.mean()
    eta = _taper_profile(r, r_inner, r_outer)
    w = eta[:, None] * (u.values - c) + c
    w[eta >= 1.0] = u.values[eta >= 1.0]       # inner region bit-exact
    w[eta <= 0.0] = c                          # outer region exactly constant
    return DisplacementField(cell, w, layout="compact", support_radius=R)
