"""Stationary points of the supercell energy: minima, index-1 saddles, tracking.

The minimiser is a damped Newton iteration with the exact sparse Hessian,
solved on the zero-mean subspace through a bordered factorization. The saddle
search follows the softest non-translation mode (eigenvector following), with
a symmetric-subspace fallback for models that declare a mirror symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import energy_periodic, gradient_periodic, hessian
from .lattice import DisplacementField, Supercell, cutoff_T_R
from .potentials import PotentialModel
from .spectral import (
    AmbiguousSpectrumError,
    FApplier,
    ModeClassification,
    _extremal_eig,
    _fhf_matvec,
    _mean_project,
    _operator_norm_estimate,
    classify_eigenvalues,
    smallest_eigenpair,
)

__all__ = [
    "StationaryPoint",
    "CertificationError",
    "tol_grad",
    "relax_minimum",
    "find_saddle",
    "continue_in_N",
    "certify",
]


class CertificationError(RuntimeError):
    """A converged point failed its spectral certificate."""

    def __init__(self, message: str, classification: ModeClassification | None = None):
        super().__init__(message)
        self.classification = classification


def tol_grad(cell: Supercell) -> float:
    """Gradient tolerance 1e-10 sqrt(|Lambda_N|): per-site residual N-independent."""
    return 1e-10 * np.sqrt(cell.n)


@dataclass
class StationaryPoint:
    kind: str                       # 'minimum' or 'saddle'
    u: DisplacementField
    energy: float
    gradient_norm: float
    certificate: ModeClassification
    sigma: tuple[float, float]      # measured bounds of F_N H F_N + pi_N
    model_hash: str
    n_iter: int
    lam: float | None = None        # unstable eigenvalue at a saddle
    phi: np.ndarray | None = None   # unstable mode at a saddle
    gradient_history: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.u.cell.N


def _bordered_solve(H: sp.spmatrix, nu: float, rhs: np.ndarray, cell: Supercell) -> np.ndarray:
    """Solve (H + nu I) p = rhs on the zero-mean subspace via translation borders."""
    n, m = cell.n, cell.spec.m
    dim = n * m
    Z = sp.lil_matrix((dim, m))
    for i in range(m):
        Z[i::m, i] = 1.0 / np.sqrt(n)
    K = H + nu * sp.identity(dim, format="csr")
    M = sp.bmat([[K, Z.tocsc()], [Z.T.tocsc(), None]], format="csc")
    sol = spla.splu(M).solve(np.concatenate([rhs, np.zeros(m)]))
    return sol[:dim]


def _certify_spectrum(model: PotentialModel, u: DisplacementField, kind: str,
                      with_overrides: bool = True) -> tuple[ModeClassification, float]:
    """Partial spectral classification from the extremal spectrum of the Hessian."""
    cell = u.cell
    m = cell.spec.m
    H = hessian(model, u, kind="defect" if with_overrides else "homogeneous")
    matvec = lambda v: np.asarray(H.mat @ v)
    scale = _operator_norm_estimate(matvec, cell.n * m)
    expected_neg = 1 if kind == "saddle" else 0
    k_small = min(m + expected_neg + 2, cell.n * m - 1)
    w_small, _ = _extremal_eig(matvec, cell, scale, k=k_small, mode="SA", shiftless=True)
    w_large, _ = _extremal_eig(matvec, cell, scale, k=1, mode="LA", shiftless=True)
    eigs = np.concatenate([w_small, w_large])
    cls = classify_eigenvalues(eigs, expected_zero=m, complete=False)
    cls.n_positive = cell.n * m - cls.n_zero - cls.n_negative
    if cls.n_negative != expected_neg:
        raise CertificationError(
            f"{kind} certificate: expected {expected_neg} negative modes, "
            f"found {cls.n_negative}", cls)
    return cls, scale


def _fhf_sigma_bounds(model: PotentialModel, u: DisplacementField,
                      expected_negative: int) -> tuple[float, float]:
    """Measured [sigma_lo, sigma_hi] of the positive spectrum of F_N H F_N + pi_N."""
    cell = u.cell
    H = hessian(model, u, kind="defect")
    F = FApplier(cell, model)
    matvec = _fhf_matvec(F, H)
    scale = max(_operator_norm_estimate(matvec, cell.n * cell.spec.m), 1.0)
    deflate = []
    if expected_negative:
        wneg, Vneg = _extremal_eig(matvec, cell, scale, k=expected_negative, mode="SA")
        for j in range(expected_negative):
            v = Vneg[:, j] - _mean_project(Vneg[:, j], cell.n, cell.spec.m)
            deflate.append(v / np.linalg.norm(v))
    lo, _ = _extremal_eig(matvec, cell, scale, k=1, mode="SA", deflate=deflate)
    hi, _ = _extremal_eig(matvec, cell, scale, k=1, mode="LA", deflate=deflate)
    # pi_N contributes eigenvalue 1, inside [lo, hi] for the shipped corpus
    return float(lo[0]), float(hi[0])


def certify(model: PotentialModel, point: "StationaryPoint") -> ModeClassification:
    """Re-run the spectral certificate of a converged point."""
    cls, _ = _certify_spectrum(model, point.u, point.kind)
    return cls


def relax_minimum(model: PotentialModel, cell: Supercell,
                  initial_guess: DisplacementField | np.ndarray | None = None,
                  max_iter: int = 100, symmetrize=None) -> StationaryPoint:
    """Damped-Newton minimisation of the defect supercell energy.

    Returns a certified minimum with zero-mean gauge. ``symmetrize`` is an
    optional field projector applied to iterates and gradients (used by the
    symmetric saddle search).
    """
    tol = tol_grad(cell)
    if initial_guess is None:
        vals = np.zeros((cell.n, cell.spec.m))
    elif isinstance(initial_guess, DisplacementField):
        vals = initial_guess.values.copy()
    else:
        vals = np.asarray(initial_guess, dtype=float).copy()
    u = DisplacementField(cell, vals - vals.mean(axis=0)).values
    if symmetrize is not None:
        u = symmetrize(u)
    nu = 0.0
    energy = energy_periodic(model, DisplacementField(cell, u)).value
    n_iter = 0
    history: list[float] = []
    for n_iter in range(1, max_iter + 1):
        fld = DisplacementField(cell, u)
        g = gradient_periodic(model, fld)
        if symmetrize is not None:
            g = symmetrize(g)
        gnorm = float(np.linalg.norm(g))
        history.append(gnorm)
        if gnorm <= tol:
            break
        H = hessian(model, fld).mat
        accepted = False
        for _ in range(12):
            p = _bordered_solve(H, nu, -g.reshape(-1), fld.cell).reshape(u.shape)
            if symmetrize is not None:
                p = symmetrize(p)
            slope = float(np.sum(p * g))
            if slope >= 0:
                nu = max(10.0 * nu, 1e-6)
                continue
            t = 1.0
            while t > 1e-6:
                trial = u + t * p
                trial -= trial.mean(axis=0)
                e_t = energy_periodic(model, DisplacementField(cell, trial)).value
                if e_t <= energy + 1e-4 * t * slope:
                    u, energy = trial, e_t
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                nu = 0.0 if t == 1.0 else nu
                break
            nu = max(10.0 * nu, 1e-6)
        if not accepted:
            raise RuntimeError(f"line search failed at iteration {n_iter} (|g|={gnorm:g})")
    else:
        raise RuntimeError(f"minimisation did not converge in {max_iter} iterations")

    fld = DisplacementField(cell, u - u.mean(axis=0))
    g = gradient_periodic(model, fld)
    gnorm = float(np.linalg.norm(g))
    if gnorm > tol:
        raise RuntimeError(f"converged point has residual {gnorm:g} > {tol:g}")
    if symmetrize is not None:
        # symmetric-subspace solve used internally by the saddle search;
        # certification happens in the caller
        return StationaryPoint("minimum", fld, energy, gnorm, None, (np.nan, np.nan),
                               model.model_hash(), n_iter, gradient_history=history)
    cls, _ = _certify_spectrum(model, fld, "minimum")
    sig = _fhf_sigma_bounds(model, fld, expected_negative=0)
    return StationaryPoint("minimum", fld, energy, gnorm, cls, sig,
                           model.model_hash(), n_iter, gradient_history=history)


def _mirror_symmetrizer(cell: Supercell, Q: np.ndarray):
    perm = cell.site_permutation(Q)
    Qm = np.asarray(Q, dtype=float)

    def symmetrize(values: np.ndarray) -> np.ndarray:
        reflected = values[perm] @ Qm.T
        return 0.5 * (values + reflected)

    return symmetrize


def _projected_cg(H: sp.spmatrix, rhs: np.ndarray, cell: Supercell,
                  modes: list[np.ndarray], nu: float, rtol: float,
                  max_iter: int = 400) -> np.ndarray:
    """CG for (H + nu) p = rhs on the complement of constants and given modes."""
    n, m = cell.n, cell.spec.m

    def project(v):
        out = v - _mean_project(v, n, m)
        for w in modes:
            out = out - w * (w @ out)
        return out

    b = project(rhs)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    b2 = np.sqrt(rs)
    for _ in range(max_iter):
        Hp = project(np.asarray(H @ p) + nu * p)
        alpha = rs / float(p @ Hp)
        x += alpha * p
        r -= alpha * Hp
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= rtol * max(b2, 1e-300):
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return project(x)


def find_saddle(model: PotentialModel, cell: Supercell,
                guess_pair: tuple | None = None,
                initial_guess: DisplacementField | np.ndarray | None = None,
                max_iter: int = 120, step_max: float = 0.25,
                method: str = "auto") -> StationaryPoint:
    """Index-1 saddle search by eigenvector following.

    Start from the midpoint of two minima (``guess_pair``) or an explicit
    guess. Tracks the softest non-translation mode between iterations by
    overlap, inverts it in the Newton step, and certifies an index-1 point.
    Models declaring a mirror symmetry fall back to a constrained
    minimisation over the symmetric subspace if mode following fails.
    """
    if method not in ("auto", "follow", "symmetric"):
        raise ValueError("method must be auto, follow or symmetric")
    if method in ("auto", "follow"):
        try:
            return _saddle_follow(model, cell, guess_pair, initial_guess, max_iter, step_max)
        except (RuntimeError, AmbiguousSpectrumError):
            if method == "follow" or model.mirror is None:
                raise
    if model.mirror is None:
        raise CertificationError("symmetric saddle search requires a declared mirror")
    return _saddle_symmetric(model, cell, max_iter)


def _initial_saddle_guess(cell: Supercell, guess_pair, initial_guess) -> np.ndarray:
    if guess_pair is not None:
        ua, ub = guess_pair
        va = ua.u.values if isinstance(ua, StationaryPoint) else np.asarray(ua.values if isinstance(ua, DisplacementField) else ua)
        vb = ub.u.values if isinstance(ub, StationaryPoint) else np.asarray(ub.values if isinstance(ub, DisplacementField) else ub)
        return 0.5 * (va + vb)
    if initial_guess is None:
        return np.zeros((cell.n, cell.spec.m))
    if isinstance(initial_guess, DisplacementField):
        return initial_guess.values.copy()
    return np.asarray(initial_guess, dtype=float).copy()


def _saddle_follow(model: PotentialModel, cell: Supercell, guess_pair,
                   initial_guess, max_iter: int, step_max: float) -> StationaryPoint:
    tol = tol_grad(cell)
    u = _initial_saddle_guess(cell, guess_pair, initial_guess)
    u -= u.mean(axis=0)
    n, m = cell.n, cell.spec.m
    track = None
    gnorm_prev = np.inf
    for n_iter in range(1, max_iter + 1):
        fld = DisplacementField(cell, u)
        g = gradient_periodic(model, fld).reshape(-1)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            break
        H = hessian(model, fld)
        matvec = lambda v: np.asarray(H.mat @ v)
        scale = _operator_norm_estimate(matvec, n * m)
        # constants shifted out of view: the two softest non-translation modes
        w, V = _extremal_eig(matvec, cell, scale, k=2, mode="SA")
        cand = [(float(w[j]), V[:, j]) for j in range(len(w))]
        if track is not None and len(cand) > 1:
            overlaps = [abs(v @ track) for _, v in cand]
            if max(overlaps) >= 0.5 and overlaps[0] != max(overlaps):
                cand.sort(key=lambda ev: -abs(ev[1] @ track))
        lam1, v1 = cand[0]
        v1 = v1 - _mean_project(v1, n, m)
        v1 /= np.linalg.norm(v1)
        track = v1
        lam2 = cand[1][0] if len(cand) > 1 else scale

        delta = 1e-3 * scale
        lam_eff = lam1 if lam1 < -delta else -max(abs(lam1), delta)
        g1 = float(g @ v1)
        p1 = -(g1 / lam_eff) * v1
        nu = max(0.0, delta - lam2)
        rtol = min(0.1, max(gnorm, 1e-14)) if gnorm > 1e3 * tol else 1e-10
        p_perp = _projected_cg(H.mat, -(g - g1 * v1), cell, [v1], nu, rtol)
        p = p1 + p_perp
        pmax = float(np.max(np.abs(p)))
        if pmax > step_max:
            p *= step_max / pmax
        u = u + p.reshape(n, m)
        u -= u.mean(axis=0)
        gnorm_prev = gnorm
    else:
        raise RuntimeError(f"saddle search did not converge in {max_iter} iterations "
                           f"(|g|={gnorm_prev:g})")

    fld = DisplacementField(cell, u - u.mean(axis=0))
    g = gradient_periodic(model, fld)
    gnorm = float(np.linalg.norm(g))
    cls, _ = _certify_spectrum(model, fld, "saddle")
    H = hessian(model, fld)
    lam, phi = smallest_eigenpair(H)
    if lam >= 0:
        raise CertificationError("converged point has no unstable mode", cls)
    sig = _fhf_sigma_bounds(model, fld, expected_negative=1)
    energy = energy_periodic(model, fld).value
    return StationaryPoint("saddle", fld, energy, gnorm, cls, sig,
                           model.model_hash(), n_iter, lam=float(lam), phi=phi)


def _saddle_symmetric(model: PotentialModel, cell: Supercell, max_iter: int) -> StationaryPoint:
    symmetrize = _mirror_symmetrizer(cell, model.mirror)
    point = relax_minimum(model, cell, max_iter=max_iter, symmetrize=symmetrize)
    fld = point.u
    cls, _ = _certify_spectrum(model, fld, "saddle")
    H = hessian(model, fld)
    lam, phi = smallest_eigenpair(H)
    if lam >= 0:
        raise CertificationError("symmetric stationary point is not index-1", cls)
    sig = _fhf_sigma_bounds(model, fld, expected_negative=1)
    return StationaryPoint("saddle", fld, point.energy, point.gradient_norm, cls, sig,
                           model.model_hash(), point.n_iter, lam=float(lam), phi=phi)


def continue_in_N(model: PotentialModel, point: StationaryPoint,
                  cell_new: Supercell) -> DisplacementField:
    """Prolong a converged point to a larger cell as a warm-start guess.

    The periodic extension of the old field is tapered to its mean outside
    the old cell's inradius, so the guess carries the defect core exactly
    and a constant far field.
    """
    old = point.u
    if cell_new.N < old.cell.N:
        raise ValueError("continuation requires N' >= N")
    if cell_new.N == old.cell.N:
        return old
    idx_old = old.cell.site_indices(cell_new.x)
    ext = DisplacementField(cell_new, old.values[idx_old])
    r_old = old.cell.N * float(np.linalg.svd(old.cell.spec.B, compute_uv=False)[-1])
    if r_old >= 4.0 * old.cell.spec.r_cut + 1e-9:
        w = cutoff_T_R(ext, r_old)
        ext = DisplacementField(cell_new, w.values)
    return ext.zero_mean()
