"""Square-root kernels, conjugated operators and positive-spectrum calculus.

F_hat(k) = h_hat(k)^{-1/2} defines the inverse square root of the homogeneous
Hessian; its periodic projection (k=0 excluded) gives the supercell kernel
F_N with F_N H_hom F_N + pi_N = I. log+ / det+ act on the strictly positive
part of the spectrum only, with a hard error on ambiguous eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import LinearLatticeOperator
from .lattice import Supercell
from .potentials import PotentialModel, symbol_h_batch

__all__ = [
    "AmbiguousSpectrumError",
    "ModeClassification",
    "SpectralDecomposition",
    "KernelTable",
    "symbol_F",
    "kernel_FN",
    "kernel_F",
    "projector_constants",
    "conjugate_operator",
    "classify_eigenvalues",
    "spectral_decomposition",
    "logdet_plus",
    "logdet_plus_factorized",
    "matrix_log_plus",
    "log_plus_contour",
    "smallest_eigenpair",
    "generalized_eigen",
    "FApplier",
    "site_log_traces",
]

DENSE_LIMIT = 6000
ZERO_TOL_FACTOR = 1e-8
GAP_FACTOR = 10.0


class AmbiguousSpectrumError(RuntimeError):
    """Eigenvalues fell inside the classification dead zone."""


@dataclass
class ModeClassification:
    """Audit record of an operator spectrum split into zero / negative / positive."""

    eigenvalues: np.ndarray
    labels: list[str]
    tau_zero: float
    n_zero: int
    n_negative: int
    n_positive: int
    sigma_min: float
    sigma_max: float
    complete: bool = True

    def to_dict(self) -> dict:
        return {
            "tau_zero": self.tau_zero,
            "n_zero": self.n_zero,
            "n_negative": self.n_negative,
            "n_positive": self.n_positive,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "complete": self.complete,
        }

    def audit_text(self) -> str:
        """Human-readable classification audit (structured text)."""
        lines = [f"tau_zero {self.tau_zero!r}",
                 f"counts zero={self.n_zero} negative={self.n_negative} "
                 f"positive={self.n_positive} complete={self.complete}",
                 f"sigma [{self.sigma_min!r}, {self.sigma_max!r}]"]
        labels = self.labels if self.labels else [""] * len(self.eigenvalues)
        for lam, lab in zip(np.asarray(self.eigenvalues).ravel(), labels):
            lines.append(f"  {lam!r} {lab}")
        return "\n".join(lines) + "\n"


@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    classification: ModeClassification


def classify_eigenvalues(eigs: np.ndarray, expected_zero: int,
                         complete: bool = True) -> ModeClassification:
    """Split eigenvalues into translation zeros, negatives and positives.

    tau_zero = 1e-8 * max|lambda|; exactly ``expected_zero`` eigenvalues may
    lie in the dead zone [-tau, tau], and every other eigenvalue must clear
    the zone by a factor of 10, otherwise a hard error is raised.
    """
    eigs = np.sort(np.asarray(eigs, dtype=float))
    scale = float(np.max(np.abs(eigs))) if eigs.size else 0.0
    tau = ZERO_TOL_FACTOR * scale
    zero = np.abs(eigs) <= tau
    if int(zero.sum()) != expected_zero:
        raise AmbiguousSpectrumError(
            f"expected {expected_zero} zero modes, found {int(zero.sum())} within {tau:g}"
        )
    neg = eigs < -tau
    pos = eigs > tau
    ambiguous_neg = neg & (eigs > -GAP_FACTOR * tau)
    ambiguous_pos = pos & (eigs < GAP_FACTOR * tau)
    if np.any(ambiguous_neg) or np.any(ambiguous_pos):
        bad = eigs[ambiguous_neg | ambiguous_pos]
        raise AmbiguousSpectrumError(f"eigenvalues {bad} inside the dead zone around {tau:g}")
    labels = np.where(zero, "translation_zero",
                      np.where(neg, "unstable_negative", "positive")).tolist()
    pos_vals = eigs[pos]
    return ModeClassification(
        eigenvalues=eigs, labels=labels, tau_zero=tau,
        n_zero=int(zero.sum()), n_negative=int(neg.sum()), n_positive=int(pos.sum()),
        sigma_min=float(pos_vals.min()) if pos_vals.size else np.nan,
        sigma_max=float(pos_vals.max()) if pos_vals.size else np.nan,
        complete=complete,
    )


# ---------------------------------------------------------------------------
# symbols and kernels
# ---------------------------------------------------------------------------

def _inverse_sqrt_batch(hs: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(hs)
    if np.min(w) <= 0:
        raise FloatingPointError(
            f"symbol not positive definite (min eigenvalue {np.min(w):g}); "
            "unstable model or k=0 requested"
        )
    return np.einsum("kij,kj,klj->kil", U, 1.0 / np.sqrt(w), U.conj(), optimize=True)


def symbol_F(model: PotentialModel, k: np.ndarray) -> np.ndarray:
    """Inverse square root of the homogeneous symbol at one k != 0."""
    k = np.asarray(k, dtype=float)
    out = _inverse_sqrt_batch(symbol_h_batch(model, k[None]))[0]
    return out.real if np.max(np.abs(out.imag)) < 1e-13 else out


@dataclass
class KernelTable:
    """Translation-invariant m x m kernel tabulated on a supercell.

    ``source`` is 'periodic' (the level-N kernel itself) or 'infinite' (a
    Brillouin-zone quadrature stand-in for the infinite-lattice kernel at
    level M_quad, valid for offsets up to about a quarter of the cell).
    """

    cell: Supercell
    values: np.ndarray          # (n, m, m), indexed like cell sites
    source: str
    level: int
    _dtable: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.cell.spec.m

    def value_at(self, x: Iterable[int]) -> np.ndarray:
        return self.values[self.cell.index(x)]

    @property
    def validity_radius(self) -> float:
        if self.source == "periodic":
            return np.inf
        rB = np.linalg.svd(self.cell.spec.B, compute_uv=False)[-1]
        return self.level * rB / 4.0

    def dtable(self) -> np.ndarray:
        """D_rho F(ell) = F(ell + rho) - F(ell) for all sites; (n, nR, m, m)."""
        if self._dtable is None:
            nb = self.cell.neighbors
            self._dtable = self.values[nb] - self.values[:, None]
        return self._dtable

    def d2_at(self, rows: np.ndarray) -> np.ndarray:
        """Second differences D_rho1 D_rho2 F at given site ordinals; (k, nR, nR, m, m)."""
        cell = self.cell
        sx = cell.spec.stencil_x
        x0 = cell.x[rows]
        idx_pp = cell.site_indices(x0[:, None, None, :] + sx[None, :, None, :] + sx[None, None, :, :])
        idx_p1 = cell.site_indices(x0[:, None, :] + sx[None, :, :])
        V = self.values
        return (V[idx_pp] - V[idx_p1][:, :, None] - V[idx_p1][:, None, :]
                + V[rows][:, None, None])

    def dense_operator(self) -> LinearLatticeOperator:
        """Full block-Toeplitz matrix (F)_{ell n} = F(ell - n)."""
        cell = self.cell
        dim = cell.n * self.m
        if dim > DENSE_LIMIT:
            raise MemoryError(f"dense kernel operator of dimension {dim} exceeds limit")
        off = cell.offset_table()
        blocks = self.values[off]                       # (n, n, m, m)
        mat = blocks.transpose(0, 2, 1, 3).reshape(dim, dim)
        return LinearLatticeOperator(cell, mat, "F_N")

    def to_csv(self, path) -> None:
        """Offset coordinates and kernel entries, one row per lattice offset."""
        d, m = self.cell.spec.d, self.m
        header = [f"l{i+1}" for i in range(d)]
        header += [f"F{i+1}{j+1}" for i in range(m) for j in range(m)]
        lines = [",".join(header)]
        for x, block in zip(self.cell.x.tolist(), self.values.reshape(-1, m * m)):
            lines.append(",".join([str(v) for v in x] + [repr(float(v)) for v in block]))
        from .serialize import atomic_write_text
        atomic_write_text(path, "\n".join(lines) + "\n")


def kernel_FN(model: PotentialModel, cell: Supercell) -> KernelTable:
    """Periodic kernel F_N via the dual grid with the k=0 term excluded."""
    k = cell.dual.k
    zero = np.all(cell.dual.y == 0, axis=1)
    fh = np.zeros((cell.n, model.spec.m, model.spec.m), dtype=complex)
    fh[~zero] = _inverse_sqrt_batch(symbol_h_batch(model, k[~zero]))
    vals = cell.idft(fh)
    imag = float(np.max(np.abs(vals.imag)))
    if imag > 1e-10 * (1 + np.max(np.abs(vals.real))):
        raise FloatingPointError(f"periodic kernel has imaginary residue {imag:g}")
    return KernelTable(cell=cell, values=vals.real, source="periodic", level=cell.N)


def kernel_F(model: PotentialModel, M_quad: int, max_offset: float | None = None) -> KernelTable:
    """Infinite-lattice kernel via Brillouin-zone quadrature at level M_quad.

    Identical to the periodic projection at level M_quad; offsets should stay
    below a quarter of the quadrature cell (checked against ``max_offset``).
    """
    big = Supercell(model.spec, M_quad)
    table = kernel_FN(model, big)
    table = KernelTable(cell=big, values=table.values, source="infinite", level=M_quad)
    if max_offset is not None and max_offset > table.validity_radius + 1e-9:
        raise ValueError(
            f"M_quad={M_quad} too small for offsets up to {max_offset}"
        )
    return table


def projector_constants(cell: Supercell) -> LinearLatticeOperator:
    """Orthogonal projector pi_N onto constant (translation) displacements."""
    n, m = cell.n, cell.spec.m
    mat = np.kron(np.full((n, n), 1.0 / n), np.eye(m))
    return LinearLatticeOperator(cell, mat, "projector")


def conjugate_operator(FN: KernelTable, H: LinearLatticeOperator,
                       include_pi: bool = True) -> LinearLatticeOperator:
    """Dense F_N H F_N, optionally plus the constant projector pi_N."""
    if FN.cell is not H.cell:
        if FN.cell.N != H.cell.N or FN.cell.n != H.cell.n:
            raise ValueError("kernel table and operator live on different supercells")
    Fmat = FN.dense_operator().mat
    A = Fmat @ (H.mat @ Fmat)
    A = 0.5 * (A + A.T)
    if include_pi:
        A += projector_constants(H.cell).mat
    return LinearLatticeOperator(H.cell, A, "F_H_F")


# ---------------------------------------------------------------------------
# positive-spectrum calculus
# ---------------------------------------------------------------------------

def _dense(op) -> np.ndarray:
    if isinstance(op, LinearLatticeOperator):
        return op.dense()
    return np.asarray(op)


def spectral_decomposition(op, expected_zero: int) -> SpectralDecomposition:
    A = _dense(op)
    w, V = np.linalg.eigh(A)
    cls = classify_eigenvalues(w, expected_zero)
    return SpectralDecomposition(eigenvalues=w, eigenvectors=V, classification=cls)


def logdet_plus(op, expected_zero: int,
                expected_negative: int | None = None) -> tuple[float, ModeClassification]:
    """Sum of log over strictly positive eigenvalues, with audit classification."""
    A = _dense(op)
    w = np.linalg.eigvalsh(A)
    cls = classify_eigenvalues(w, expected_zero)
    if expected_negative is not None and cls.n_negative != expected_negative:
        raise AmbiguousSpectrumError(
            f"expected {expected_negative} negative modes, found {cls.n_negative}"
        )
    pos = w[w > cls.tau_zero]
    return float(np.sum(np.log(pos))), cls


def _perm_parity(perm: np.ndarray) -> int:
    seen = np.zeros(len(perm), dtype=bool)
    parity = 1
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            parity = -parity
    return parity


def logdet_plus_factorized(H: LinearLatticeOperator, negatives: Sequence[float] = ()) -> float:
    """log det+ of a sparse lattice Hessian via a bordered sparse factorization.

    Borders H with the orthonormal translation modes Z, so that
    det [[H, Z], [Z^T, 0]] = (-1)^m det+(H) * prod(negative eigenvalues).
    Known negative eigenvalues (from certification) are divided back out;
    the overall sign is audited.
    """
    cell = H.cell
    n, m = cell.n, cell.spec.m
    Z = sp.lil_matrix((n * m, m))
    for i in range(m):
        Z[i::m, i] = 1.0 / np.sqrt(n)
    M = sp.bmat([[sp.csc_matrix(H.mat), Z.tocsc()], [Z.T.tocsc(), None]], format="csc")
    lu = spla.splu(M)
    diag = lu.U.diagonal()
    if np.any(diag == 0):
        raise AmbiguousSpectrumError("singular bordered factorization")
    logabs = float(np.sum(np.log(np.abs(diag))))
    sign = int(np.prod(np.sign(diag))) * _perm_parity(lu.perm_r) * _perm_parity(lu.perm_c)
    expect_sign = (-1) ** m * (int(np.prod(np.sign(negatives))) if negatives else 1)
    if sign != expect_sign:
        raise AmbiguousSpectrumError(
            f"determinant sign {sign} inconsistent with {len(negatives)} negative modes"
        )
    if negatives:
        logabs -= float(np.sum(np.log(np.abs(np.asarray(negatives)))))
    return logabs


def matrix_log_plus(op, expected_zero: int,
                    expected_negative: int = 0) -> tuple[LinearLatticeOperator, ModeClassification]:
    """log+ A via eigendecomposition: log on positive modes, zero elsewhere."""
    A = _dense(op)
    w, V = np.linalg.eigh(A)
    cls = classify_eigenvalues(w, expected_zero)
    if cls.n_negative != expected_negative:
        raise AmbiguousSpectrumError(
            f"expected {expected_negative} negative modes, found {cls.n_negative}"
        )
    lw = np.where(w > cls.tau_zero, np.log(np.maximum(w, 1e-300)), 0.0)
    L = (V * lw) @ V.T
    cell = op.cell if isinstance(op, LinearLatticeOperator) else None
    if cell is None:
        return L, cls
    return LinearLatticeOperator(cell, L, "log_plus"), cls


def _rectangle_nodes(sig_lo: float, sig_hi: float, n_per_edge: int):
    """Counter-clockwise rectangle enclosing [sig_lo, sig_hi] but not 0."""
    re_lo, re_hi = sig_lo / 2.0, 2.0 * sig_hi
    im = sig_lo / 2.0
    corners = [re_lo - 1j * im, re_hi - 1j * im, re_hi + 1j * im, re_lo + 1j * im]
    nodes, weights = [], []
    for a, b in zip(corners, corners[1:] + corners[:1]):
        t = np.linspace(0.0, 1.0, n_per_edge + 1)
        z = a + (b - a) * t
        w = np.full(n_per_edge + 1, (b - a) / n_per_edge, dtype=complex)
        w[0] *= 0.5
        w[-1] *= 0.5
        nodes.append(z)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def log_plus_contour(op, sigma_bounds: tuple[float, float] | None = None,
                     tol: float = 1e-6, start_nodes: int = 16,
                     max_nodes: int = 2048) -> np.ndarray:
    """log+ A by trapezoidal resolvent quadrature around the positive spectrum.

    Node count per edge doubles until stable to ``tol``. The rectangle's
    corners limit the plain trapezoid sums to O(h^2), so one Richardson level
    is applied across the doubling sequence (Romberg acceleration on the same
    samples). Independent of the eigenvector path; used as a
    functional-calculus cross-check.
    """
    A = _dense(op)
    if sigma_bounds is None:
        w = np.linalg.eigvalsh(A)
        pos = w[w > ZERO_TOL_FACTOR * np.max(np.abs(w))]
        sigma_bounds = (float(pos.min()), float(pos.max()))
    sig_lo, sig_hi = sigma_bounds
    if sig_lo <= 0:
        raise ValueError("contour requires a strictly positive lower spectral bound")
    eye = np.eye(A.shape[0])
    prev_T = None
    prev_R = None
    n_edge = start_nodes
    while n_edge <= max_nodes:
        nodes, weights = _rectangle_nodes(sig_lo, sig_hi, n_edge)
        acc = np.zeros_like(A, dtype=complex)
        for z, w_z in zip(nodes, weights):
            acc += w_z * np.log(z) * np.linalg.solve(z * eye - A, eye)
        T = acc / (2j * np.pi)
        R = (4.0 * T - prev_T) / 3.0 if prev_T is not None else T
        if prev_R is not None and np.max(np.abs(R - prev_R)) < tol * (1 + np.max(np.abs(R))):
            return R.real
        prev_T, prev_R = T, R
        n_edge *= 2
    raise RuntimeError("contour quadrature did not stabilize")


# ---------------------------------------------------------------------------
# iterative eigenpairs on the zero-mean subspace
# ---------------------------------------------------------------------------

def _mean_project(v: np.ndarray, n: int, m: int) -> np.ndarray:
    """pi_N v for flattened (dim,) or (dim, batch) vectors."""
    shape = v.shape
    vv = v.reshape(n, m, -1)
    mean = vv.mean(axis=0, keepdims=True)
    return np.broadcast_to(mean, vv.shape).reshape(shape)


def _shifted_operator(matvec, dim: int, n: int, m: int, pi_shift: float,
                      deflate_shift: float, deflate: Sequence[np.ndarray] = ()):
    def mv(v):
        v = np.asarray(v).ravel()
        out = matvec(v)
        if pi_shift != 0.0:
            out = out + pi_shift * _mean_project(v, n, m)
        for w in deflate:
            out = out + deflate_shift * (w @ v) * w
        return out
    return spla.LinearOperator((dim, dim), matvec=mv, dtype=float)


def _extremal_eig(matvec, cell: Supercell, norm_scale: float, k: int = 1,
                  deflate: Sequence[np.ndarray] = (), mode: str = "SA",
                  tol: float = 1e-12, seed: int = 7, shiftless: bool = False):
    """Extremal eigenpairs of a symmetric operator with constants (and optional
    extra vectors) shifted out of the way; ``shiftless`` keeps the translation
    zeros in view (used by certification)."""
    n, m = cell.n, cell.spec.m
    dim = n * m
    shift = 10.0 * norm_scale if mode == "SA" else -10.0 * norm_scale
    op = _shifted_operator(matvec, dim, n, m, 0.0 if shiftless else shift, shift, deflate)
    if dim <= 400:
        A = np.column_stack([op.matvec(col) for col in np.eye(dim)])
        w, V = np.linalg.eigh(0.5 * (A + A.T))
        order = np.argsort(w) if mode == "SA" else np.argsort(-w)
        idx = order[:k]
        return w[idx], V[:, idx]
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(dim)
    v0 -= _mean_project(v0, n, m)
    w, V = spla.eigsh(op, k=k, which=mode, v0=v0, tol=tol, maxiter=5000)
    order = np.argsort(w) if mode == "SA" else np.argsort(-w)
    return w[order], V[:, order]


def _operator_norm_estimate(matvec, dim: int, iters: int = 30, seed: int = 3) -> float:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(iters):
        w = matvec(v)
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 1.0
        v = w / lam
    return lam


def smallest_eigenpair(H: LinearLatticeOperator, tol: float = 1e-9,
                       seed: int = 7) -> tuple[float, np.ndarray]:
    """Minimal eigenvalue of a symmetric lattice operator on the zero-mean subspace.

    Returns (lambda, phi) with phi a unit-norm zero-mean field (n, m);
    residual is checked against tol * ||H||.
    """
    cell = H.cell
    n, m = cell.n, cell.spec.m
    matvec = lambda v: np.asarray(H.mat @ v)
    scale = _operator_norm_estimate(matvec, n * m)
    w, V = _extremal_eig(matvec, cell, scale, k=1, mode="SA", seed=seed)
    phi = V[:, 0]
    phi = phi - _mean_project(phi, n, m)
    phi /= np.linalg.norm(phi)
    lam = float(phi @ matvec(phi))
    res = np.linalg.norm(matvec(phi) - lam * phi)
    if res > max(tol, 1e-9) * max(scale, 1.0):
        raise RuntimeError(f"eigenpair residual {res:g} above tolerance")
    return lam, phi.reshape(n, m)


class FApplier:
    """Matrix-free application of the periodic kernel F_N through the dual grid."""

    def __init__(self, cell: Supercell, model: PotentialModel):
        self.cell = cell
        self.m = model.spec.m
        k = cell.dual.k
        zero = np.all(cell.dual.y == 0, axis=1)
        fh = np.zeros((cell.n, self.m, self.m), dtype=complex)
        fh[~zero] = _inverse_sqrt_batch(symbol_h_batch(model, k[~zero]))
        self.fhat = fh

    def apply(self, v: np.ndarray) -> np.ndarray:
        """v: (dim,) or (dim, batch) flattened fields; returns same shape."""
        single = v.ndim == 1
        vv = v.reshape(self.cell.n, self.m, -1)
        vhat = self.cell.dft(vv)
        what = np.einsum("kij,kjb->kib", self.fhat, vhat, optimize=True)
        out = self.cell.idft(what).real.reshape(v.shape if not single else (-1, 1))
        return out[:, 0] if single else out.reshape(v.shape)


def _fhf_matvec(F: FApplier, H: LinearLatticeOperator):
    def mv(v):
        return F.apply(np.asarray(H.mat @ F.apply(v)))
    return mv


def generalized_eigen(H: LinearLatticeOperator, model: PotentialModel,
                      H_hom: LinearLatticeOperator | None = None,
                      tol: float = 1e-8, seed: int = 11) -> tuple[float, np.ndarray]:
    """Minimal generalized eigenvalue H psi = mu H_hom psi on the zero-mean subspace.

    Computed through the conjugated operator F_N H F_N, whose nonzero spectrum
    equals the generalized spectrum; psi = F_N w is normalized to
    <H_hom psi, psi> = 1. The residual of the generalized eigenproblem is
    checked when H_hom is given.
    """
    cell = H.cell
    n, m = cell.n, cell.spec.m
    F = FApplier(cell, model)
    matvec = _fhf_matvec(F, H)
    scale = max(_operator_norm_estimate(matvec, n * m), 1.0)
    w, V = _extremal_eig(matvec, cell, scale, k=1, mode="SA", seed=seed)
    wvec = V[:, 0]
    wvec = wvec - _mean_project(wvec, n, m)
    wvec /= np.linalg.norm(wvec)
    mu = float(wvec @ matvec(wvec))
    psi = F.apply(wvec)
    if H_hom is not None:
        lhs = np.asarray(H.mat @ psi)
        rhs = np.asarray(H_hom.mat @ psi)
        res = np.linalg.norm(lhs - mu * rhs)
        if res > max(tol, 1e-9) * max(np.linalg.norm(lhs), 1e-12):
            raise RuntimeError(f"generalized eigenpair residual {res:g} above tolerance")
    return mu, psi.reshape(n, m)


# ---------------------------------------------------------------------------
# diagonal blocks of log+ (site entropy engine)
# ---------------------------------------------------------------------------

def _cheb_log_poly(a: float, b: float, tol: float = 1e-11):
    from numpy.polynomial import chebyshev as C

    deg = 32
    scale = max(1.0, abs(np.log(a)), abs(np.log(b)))
    while True:
        p = C.Chebyshev.interpolate(np.log, deg, domain=[a, b])
        xs = np.linspace(a, b, 4 * deg + 17)
        err = float(np.max(np.abs(p(xs) - np.log(xs))))
        if err < tol * scale:
            return p, err
        if deg >= 2048:
            raise RuntimeError(
                f"log approximation stalled at error {err:g} on [{a:g}, {b:g}]"
            )
        deg *= 2


def site_log_traces(H: LinearLatticeOperator, model: PotentialModel,
                    sites: np.ndarray, expected_negative: int = 0,
                    method: str = "auto") -> tuple[np.ndarray, dict]:
    """tr [log+ (F_N H F_N)]_{ell ell} for the requested site ordinals.

    Dense eigendecomposition when the operator fits, otherwise a Chebyshev
    expansion of log on the measured positive spectral interval applied to
    deflated site basis columns (matrix-free F through the dual grid).
    Returns (traces, info) with measured spectral bounds in info.
    """
    cell = H.cell
    n, m = cell.n, cell.spec.m
    dim = n * m
    sites = np.asarray(sites, dtype=int)
    if method == "auto":
        method = "dense" if dim <= DENSE_LIMIT else "chebyshev"

    if method == "dense":
        FN = kernel_FN(model, cell)
        A = conjugate_operator(FN, H, include_pi=False)
        w, V = np.linalg.eigh(A.dense())
        cls = classify_eigenvalues(w, expected_zero=m)
        if cls.n_negative != expected_negative:
            raise AmbiguousSpectrumError(
                f"expected {expected_negative} negative modes, found {cls.n_negative}")
        pos = w > cls.tau_zero
        lw = np.log(w[pos])
        comp = V[:, pos].reshape(n, m, -1)
        traces = np.einsum("sij,j->s", comp[sites] ** 2, lw)
        info = {"method": "dense", "sigma_min": cls.sigma_min, "sigma_max": cls.sigma_max}
        return traces, info

    F = FApplier(cell, model)
    matvec = _fhf_matvec(F, H)
    scale = max(_operator_norm_estimate(matvec, dim), 1.0)
    deflate = []
    negatives = []
    if expected_negative:
        wneg, Vneg = _extremal_eig(matvec, cell, scale, k=expected_negative, mode="SA",
                                   tol=1e-13)
        for j in range(expected_negative):
            if wneg[j] >= 0:
                raise AmbiguousSpectrumError("expected negative mode not found")
            vec = Vneg[:, j] - _mean_project(Vneg[:, j], n, m)
            vec /= np.linalg.norm(vec)
            deflate.append(vec)
            negatives.append(float(wneg[j]))
    w_lo, _ = _extremal_eig(matvec, cell, scale, k=1, mode="SA", deflate=deflate)
    w_hi, _ = _extremal_eig(matvec, cell, scale, k=1, mode="LA", deflate=deflate)
    sig_lo, sig_hi = float(w_lo[0]), float(w_hi[0])
    if sig_lo <= 0:
        raise AmbiguousSpectrumError(f"positive spectrum lower bound {sig_lo:g} <= 0")
    a, b = 0.95 * sig_lo, 1.05 * sig_hi
    poly, err = _cheb_log_poly(a, b)
    coef = poly.coef
    mid, half = 0.5 * (a + b), 0.5 * (b - a)

    traces = np.zeros(len(sites))
    cols_per_chunk = max(1, 256 // m)
    for lo in range(0, len(sites), cols_per_chunk):
        batch_sites = sites[lo:lo + cols_per_chunk]
        nb = len(batch_sites) * m
        E = np.zeros((dim, nb))
        for j, s in enumerate(batch_sites):
            for i in range(m):
                E[s * m + i, j * m + i] = 1.0
        Ed = E - _mean_project(E, n, m)
        for vec in deflate:
            Ed -= np.outer(vec, vec @ Ed)
        t_prev = Ed
        t_cur = (matvec(Ed) - mid * Ed) / half
        acc = coef[0] * t_prev + (coef[1] * t_cur if len(coef) > 1 else 0.0)
        for ck in coef[2:]:
            t_next = 2.0 * (matvec(t_cur) - mid * t_cur) / half - t_prev
            acc += ck * t_next
            t_prev, t_cur = t_cur, t_next
        for j, s in enumerate(batch_sites):
            traces[lo + j] = sum(acc[s * m + i, j * m + i] for i in range(m))
    info = {"method": "chebyshev", "sigma_min": sig_lo, "sigma_max": sig_hi,
            "cheb_degree": len(coef) - 1, "cheb_error": err, "negatives": negatives}
    return traces, info
