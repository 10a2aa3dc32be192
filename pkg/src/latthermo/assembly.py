"""Assembly of energies, gradients, Hessians and higher variations on supercells.

All operators act on flattened periodic displacement vectors (site-major,
component-minor) and are stored as sparse CSR blocks or dense arrays wrapped
in LinearLatticeOperator. Hessians have bandwidth bounded by twice the
interaction cut-off and annihilate constant displacements.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
import scipy.sparse as sp

from .lattice import DisplacementField, Supercell
from .potentials import PotentialModel, SitePotential

__all__ = [
    "LinearLatticeOperator",
    "EnergyReport",
    "energy_periodic",
    "energy_homogeneous",
    "gradient_periodic",
    "hessian",
    "hessian_interp",
    "hessian_truncated",
    "variation_contractions",
]

_CHUNK = 128


@dataclass
class LinearLatticeOperator:
    """Symmetric block operator on periodic displacement space."""

    cell: Supercell
    mat: sp.spmatrix | np.ndarray
    kind: str = "composite"

    @property
    def n(self) -> int:
        return self.cell.n

    @property
    def m(self) -> int:
        return self.cell.spec.m

    @property
    def dim(self) -> int:
        return self.n * self.m

    def apply(self, v: np.ndarray) -> np.ndarray:
        if v.shape == (self.n, self.m):
            return np.asarray(self.mat @ v.reshape(self.dim)).reshape(self.n, self.m)
        return np.asarray(self.mat @ v)

    def dense(self) -> np.ndarray:
        if sp.issparse(self.mat):
            return self.mat.toarray()
        return np.asarray(self.mat)

    def block(self, i: int, j: int) -> np.ndarray:
        m = self.m
        if sp.issparse(self.mat):
            return self.mat[i * m:(i + 1) * m, j * m:(j + 1) * m].toarray()
        return self.mat[i * m:(i + 1) * m, j * m:(j + 1) * m]

    def quadratic(self, v: np.ndarray, w: np.ndarray | None = None) -> float:
        w = v if w is None else w
        return float(v.reshape(-1) @ (self.mat @ w.reshape(-1)))

    def symmetry_defect(self) -> float:
        if sp.issparse(self.mat):
            return float(abs(self.mat - self.mat.T).max())
        return float(np.max(np.abs(self.mat - self.mat.T)))

    def __add__(self, other: "LinearLatticeOperator") -> "LinearLatticeOperator":
        return LinearLatticeOperator(self.cell, self.mat + other.mat, "composite")

    def __sub__(self, other: "LinearLatticeOperator") -> "LinearLatticeOperator":
        return LinearLatticeOperator(self.cell, self.mat - other.mat, "composite")

    def __rmul__(self, c: float) -> "LinearLatticeOperator":
        return LinearLatticeOperator(self.cell, c * self.mat, "composite")

    def export_coo(self, path) -> None:
        """Write (row_site, col_site, i, j, value) text for external inspection."""
        coo = sp.coo_matrix(self.mat)
        m = self.m
        with open(path, "w") as fh:
            fh.write("# row_site col_site i j value\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r // m} {c // m} {r % m} {c % m} {float(v)!r}\n")


@dataclass
class EnergyReport:
    value: float
    gradient_norm: float
    defect_flag: bool


def _site_potential_groups(model: PotentialModel, cell: Supercell,
                           with_overrides: bool = True):
    """Partition sites into (potential, site-index array) groups."""
    groups: list[tuple[SitePotential, np.ndarray]] = []
    override_idx = {}
    if with_overrides and model.overrides:
        for key, pot in model.overrides.items():
            override_idx[cell.index(key)] = pot
    mask = np.ones(cell.n, dtype=bool)
    for idx, pot in override_idx.items():
        groups.append((pot, np.array([idx])))
        mask[idx] = False
    groups.append((model.homogeneous, np.flatnonzero(mask)))
    return groups


def _gradient(model: PotentialModel, u: DisplacementField, with_overrides: bool) -> np.ndarray:
    cell = u.cell
    G = u.gradients()
    out = np.zeros((cell.n, cell.spec.m))
    for pot, idx in _site_potential_groups(model, cell, with_overrides):
        if idx.size == 0:
            continue
        gv = pot.grad_batch(G[idx])                      # (ns, nR, m)
        np.add.at(out, cell.neighbors[idx], gv)
        np.add.at(out, idx, -gv.sum(axis=1))
    return out


def _energy(model: PotentialModel, u: DisplacementField, with_overrides: bool) -> EnergyReport:
    cell = u.cell
    G = u.gradients()
    total = 0.0
    for pot, idx in _site_potential_groups(model, cell, with_overrides):
        if idx.size:
            total += float(pot.value_batch(G[idx]).sum())
    g = _gradient(model, u, with_overrides)
    return EnergyReport(value=total, gradient_norm=float(np.linalg.norm(g)),
                        defect_flag=with_overrides and model.has_defect)


def energy_periodic(model: PotentialModel, u: DisplacementField) -> EnergyReport:
    """Defect supercell energy: sum over sites of V_ell(Du(ell))."""
    return _energy(model, u, with_overrides=True)


def energy_homogeneous(model: PotentialModel, u: DisplacementField) -> EnergyReport:
    """Defect-free supercell energy: the homogeneous V at every site."""
    return _energy(model, u, with_overrides=False)


def gradient_periodic(model: PotentialModel, u: DisplacementField,
                      with_overrides: bool = True) -> np.ndarray:
    return _gradient(model, u, with_overrides)


def _incidence(cell: Supercell):
    """Local-to-global signed incidence for stencil quadratic forms.

    D(delta_loc e_i)(xi) couples each site xi to its |R| neighbours and
    itself; the local DOF list is (neighbours..., center).
    """
    nR = cell.spec.nR
    W = np.zeros((nR, nR + 1))
    W[:, :nR] = np.eye(nR)
    W[:, nR] = -1.0
    return W


def _scatter_local(cell: Supercell, idx: np.ndarray, local: np.ndarray,
                   rows_out, cols_out, vals_out) -> None:
    """Accumulate per-site local matrices (ns, (nR+1)m, (nR+1)m) into COO lists."""
    m = cell.spec.m
    nR = cell.spec.nR
    sites = np.concatenate([cell.neighbors[idx], idx[:, None]], axis=1)  # (ns, nR+1)
    dof = (sites[:, :, None] * m + np.arange(m)[None, None, :]).reshape(idx.size, -1)
    ns, ld = dof.shape
    rows_out.append(np.repeat(dof, ld, axis=1).reshape(-1))
    cols_out.append(np.tile(dof, (1, ld)).reshape(-1))
    vals_out.append(local.reshape(-1))


def _assemble_quadratic(cell: Supercell, site_tensors, idx: np.ndarray,
                        rows, cols, vals) -> None:
    """site_tensors: (ns, nR, m, nR, m) second-derivative tensors at sites idx."""
    m = cell.spec.m
    nR = cell.spec.nR
    W = _incidence(cell)
    Wm = np.kron(W, np.eye(m))                       # (nR*m, (nR+1)*m)
    T = site_tensors.reshape(idx.size, nR * m, nR * m)
    local = np.einsum("ra,nrs,sb->nab", Wm, T, Wm, optimize=True)
    _scatter_local(cell, idx, local, rows, cols, vals)


def _hessian_matrix(model: PotentialModel, u: DisplacementField,
                    with_overrides: bool) -> sp.csr_matrix:
    cell = u.cell
    G = u.gradients()
    rows, cols, vals = [], [], []
    for pot, idx in _site_potential_groups(model, cell, with_overrides):
        for lo in range(0, idx.size, _CHUNK):
            sl = idx[lo:lo + _CHUNK]
            _assemble_quadratic(cell, pot.hess_batch(G[sl]), sl, rows, cols, vals)
    dim = cell.n * cell.spec.m
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()
    H.sum_duplicates()
    return H


def hessian(model: PotentialModel, u: DisplacementField,
            kind: str = "defect") -> LinearLatticeOperator:
    """Second variation of the supercell energy at u.

    kind='defect' uses the per-site potentials V_ell, kind='homogeneous' the
    homogeneous V everywhere. Symmetric, constants in the kernel.
    """
    if kind not in ("defect", "homogeneous"):
        raise ValueError("kind must be 'defect' or 'homogeneous'")
    H = _hessian_matrix(model, u, with_overrides=(kind == "defect"))
    tag = "hessian" if kind == "defect" else "hessian_hom"
    return LinearLatticeOperator(u.cell, H, tag)


def hessian_interp(model: PotentialModel, u: DisplacementField, t: float) -> LinearLatticeOperator:
    """Homotopy (1-t) H_hom + t H(u), blockwise."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("interpolation parameter t must lie in [0, 1]")
    zero = u.cell.zero_field()
    Hh = hessian(model, zero, kind="homogeneous")
    Hd = hessian(model, u, kind="defect")
    return LinearLatticeOperator(u.cell, (1.0 - t) * Hh.mat + t * Hd.mat, "hessian_interp")


def hessian_truncated(model: PotentialModel, u: DisplacementField, M: float) -> LinearLatticeOperator:
    """Far-field-linearized Hessian: nabla^2 V(0) inside |ell| <= M, nabla^2 V(Du)
    outside, homogeneous V everywhere (defect overrides removed)."""
    if M < 0:
        raise ValueError("truncation radius must be nonnegative")
    cell = u.cell
    G = u.gradients()
    inner = cell.r <= M + 1e-12
    pot = model.homogeneous
    G_eff = G.copy()
    G_eff[inner] = 0.0
    rows, cols, vals = [], [], []
    idx = np.arange(cell.n)
    for lo in range(0, cell.n, _CHUNK):
        sl = idx[lo:lo + _CHUNK]
        _assemble_quadratic(cell, pot.hess_batch(G_eff[sl]), sl, rows, cols, vals)
    dim = cell.n * cell.spec.m
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()
    return LinearLatticeOperator(cell, H, "hessian_truncated")


def variation_contractions(model: PotentialModel, u: DisplacementField,
                           v: DisplacementField, w: DisplacementField | None = None,
                           with_overrides: bool = True) -> LinearLatticeOperator:
    """First (or second) variation of the Hessian contracted with direction fields.

    Assembles the operator with blocks sum_xi nabla^3 V_xi(Du)[., ., Dv(xi)]
    (and the nabla^4 analogue when w is given). For homogeneous variations
    pass the homogenized model or with_overrides=False.
    """
    cell = u.cell
    G = u.gradients()
    Gv = v.gradients()
    Gw = w.gradients() if w is not None else None
    rows, cols, vals = [], [], []
    nR, m = cell.spec.nR, cell.spec.m
    for pot, idx in _site_potential_groups(model, cell, with_overrides):
        for lo in range(0, idx.size, _CHUNK):
            sl = idx[lo:lo + _CHUNK]
            if w is None:
                T3 = pot.third_batch(G[sl])
                T = np.einsum("nabcdef,nef->nabcd", T3, Gv[sl], optimize=True)
            else:
                T4 = pot.fourth_batch(G[sl])
                T = np.einsum("nabcdefgh,nef,ngh->nabcd", T4, Gv[sl], Gw[sl], optimize=True)
            _assemble_quadratic(cell, T, sl, rows, cols, vals)
    dim = cell.n * m
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()
    return LinearLatticeOperator(cell, H, "hessian_variation")
