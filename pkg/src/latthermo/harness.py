"""N-sweeps, Richardson references, rate fitting and result tables."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fitting import fit_rate
from .lattice import DisplacementField, Supercell
from .potentials import PotentialModel, stability_scan
from .serialize import atomic_write_text, certificate_hash, load_point, save_point
from .stationary import StationaryPoint, find_saddle, relax_minimum
from .thermo import delta_S_saddle, entropy_total, htst_rate

__all__ = ["RunConfig", "ConvergenceTable", "sweep", "fit_rate", "richardson", "emit"]

SCHEMA_VERSION = 1

ROW_COLUMNS = [
    "N", "n_sites", "status", "E_min", "S_min", "grad_min", "E_saddle", "S_saddle",
    "grad_saddle", "dE", "dS", "K", "lam", "mu", "dS_split_gap", "K_product_gap",
    "cert_min", "cert_saddle",
    "err_E", "err_S", "err_dE", "err_dS", "err_K", "err_lam", "err_mu",
]


@dataclass
class RunConfig:
    model: PotentialModel
    N_list: list[int]
    beta: list[float] = field(default_factory=lambda: [1.0])
    seed: int = 0
    workers: int = 1
    out: Path | None = None
    saddle: str = "auto"                    # auto | on | off
    kick_site: tuple | None = None
    kick_vector: np.ndarray | None = None
    N_ref: int | None = None
    R_sum: float | None = None
    max_iter: int = 100
    fit_exclude_largest: int = 1            # rows held out of rate fits (extrapolation anchors)
    formats: tuple[str, ...] = ("csv", "json")

    def __post_init__(self):
        Ns = list(self.N_list)
        if Ns != sorted(Ns) or len(set(Ns)) != len(Ns):
            raise ValueError("N list must be strictly ascending")
        if self.N_ref is not None and Ns and self.N_ref < 2 * max(Ns):
            raise ValueError("N_ref must be at least twice the largest sweep N")
        if any(b <= 0 for b in self.beta):
            raise ValueError("inverse temperatures must be positive")

    @property
    def wants_saddle(self) -> bool:
        if self.saddle == "off":
            return False
        if self.saddle == "on":
            return True
        return self.model.mirror is not None and self.kick_vector is not None


@dataclass
class ConvergenceTable:
    rows: list[dict]
    fits: dict[str, dict]
    limits: dict[str, dict]
    meta: dict

    def ok_rows(self) -> list[dict]:
        return [r for r in self.rows if r["status"] == "ok"]

    def column(self, key: str, rows: list[dict] | None = None) -> np.ndarray:
        src = self.rows if rows is None else rows
        return np.array([r[key] for r in src if r.get(key) is not None], dtype=float)


def richardson(Ns: np.ndarray, values: np.ndarray, exponent: float) -> tuple[float, float]:
    """Limit estimate assuming v_N = v + C N^-p with p fixed at the proved rate.

    Uses the two largest N; the change when substituting the third-largest
    pair is reported as the reference uncertainty.
    """
    if len(Ns) < 3:
        raise ValueError("Richardson reference needs at least 3 values")
    order = np.argsort(Ns)
    Ns, values = np.asarray(Ns, float)[order], np.asarray(values, float)[order]

    def two_point(a: int, b: int) -> float:
        wa, wb = Ns[a] ** -exponent, Ns[b] ** -exponent
        return float((values[b] * wa - values[a] * wb) / (wa - wb))

    best = two_point(-2, -1)
    alt = two_point(-3, -2)
    return best, abs(best - alt)


def _mirror_image(point: StationaryPoint, model: PotentialModel) -> DisplacementField:
    cell = point.u.cell
    Q = np.asarray(model.mirror, dtype=float)
    perm = cell.site_permutation(model.mirror)
    return DisplacementField(cell, point.u.values[perm] @ Q.T)


def _kick_field(cell: Supercell, site, vector) -> np.ndarray:
    vals = np.zeros((cell.n, cell.spec.m))
    vals[cell.index(site)] = np.asarray(vector, dtype=float)
    return vals


def solve_row(config: RunConfig, N: int) -> dict:
    """Relax, certify, (optionally) find the saddle and rate for one cell size."""
    model = config.model
    cell = Supercell(model.spec, N)
    row: dict = {k: None for k in ROW_COLUMNS}
    row.update(N=N, n_sites=cell.n, status="ok")
    outdir = None if config.out is None else Path(config.out) / "points"

    def load_or_solve(name: str, solver):
        if outdir is not None:
            cached = load_point(outdir, name, model, cell)
            if cached is not None:
                return cached
        point = solver()
        if outdir is not None:
            save_point(outdir, name, point)
        return point

    guess = None
    if config.kick_vector is not None and config.kick_site is not None:
        guess = _kick_field(cell, config.kick_site, config.kick_vector)
    minimum = load_or_solve(f"min_N{N}", lambda: relax_minimum(
        model, cell, initial_guess=guess, max_iter=config.max_iter))
    row.update(E_min=minimum.energy, S_min=entropy_total(model, minimum),
               grad_min=minimum.gradient_norm, cert_min=certificate_hash(minimum.certificate))

    if config.wants_saddle:
        def solve_saddle():
            pair = None
            if model.mirror is not None:
                pair = (minimum.u.values, _mirror_image(minimum, model).values)
            return find_saddle(model, cell, guess_pair=pair, max_iter=config.max_iter)

        saddle = load_or_solve(f"saddle_N{N}", solve_saddle)
        ds = delta_S_saddle(model, minimum, saddle)
        rate = htst_rate(model, minimum, saddle, beta=config.beta[0])
        row.update(E_saddle=saddle.energy, S_saddle=entropy_total(model, saddle),
                   grad_saddle=saddle.gradient_norm, dE=rate.dE, dS=rate.dS,
                   K=rate.K, lam=rate.lam, mu=rate.mu,
                   dS_split_gap=abs(ds.splitting - ds.direct),
                   K_product_gap=abs(rate.K - rate.product_form_K) / rate.K,
                   cert_saddle=certificate_hash(saddle.certificate))
        for b in config.beta[1:]:
            row[f"K_beta_{b:g}"] = htst_rate(model, minimum, saddle, beta=b).K
    return row


def sweep(config: RunConfig) -> ConvergenceTable:
    """Run the N-sweep, attach error-vs-reference columns and rate fits.

    A failing stage marks its row with the reason and the sweep continues.
    Rate fits exclude the largest rows used as extrapolation anchors.
    """
    scan = stability_scan(config.model)
    if not scan.passed:
        raise RuntimeError(f"stability scan failed (c0={scan.c0:g}); refusing to sweep")

    rows: list[dict] = []

    def run_one(N: int) -> dict:
        try:
            return solve_row(config, N)
        except Exception as exc:  # noqa: BLE001 - failure is a recorded row state
            row = {k: None for k in ROW_COLUMNS}
            row.update(N=N, status=f"error: {type(exc).__name__}: {exc}")
            return row

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(run_one, config.N_list))
    else:
        rows = [run_one(N) for N in config.N_list]
    rows.sort(key=lambda r: r["N"])

    d = config.model.spec.d
    ok = [r for r in rows if r["status"] == "ok"]
    limits: dict[str, dict] = {}
    fits: dict[str, dict] = {}
    targets = [("E_min", "err_E"), ("S_min", "err_S"), ("dE", "err_dE"),
               ("dS", "err_dS"), ("K", "err_K"), ("lam", "err_lam"), ("mu", "err_mu")]
    for col, errcol in targets:
        vals = [(r["N"], r[col]) for r in ok if r[col] is not None]
        if len(vals) < 3:
            continue
        Ns = np.array([v[0] for v in vals], float)
        ys = np.array([v[1] for v in vals], float)
        if np.allclose(ys, ys[0]):
            limits[col] = {"value": float(ys[0]), "uncertainty": 0.0, "degenerate": True}
            continue
        ref, unc = richardson(Ns, ys, exponent=float(d))
        limits[col] = {"value": ref, "uncertainty": unc, "degenerate": False}
        for r in ok:
            if r[col] is not None:
                r[errcol] = abs(r[col] - ref)
        fit_rows = [r for r in ok if r[errcol] is not None]
        if config.fit_exclude_largest:
            fit_rows = fit_rows[: len(fit_rows) - config.fit_exclude_largest]
        if len(fit_rows) >= 3:
            try:
                f = fit_rate(np.array([r["N"] for r in fit_rows], float),
                             np.array([r[errcol] for r in fit_rows], float))
                fits[col] = {"exponent": f.exponent, "ci95": f.ci95,
                             "residual": f.residual, "n_points": f.n_points,
                             "dropped": f.dropped, "converging": f.converging}
            except ValueError as exc:
                fits[col] = {"error": str(exc)}

    meta = {
        "schema_version": SCHEMA_VERSION,
        "model_hash": config.model.model_hash(),
        "model_name": config.model.name,
        "d": d, "m": config.model.spec.m,
        "N_list": list(config.N_list),
        "beta": list(config.beta),
        "seed": config.seed,
        "stability": {"c0": scan.c0, "c1": scan.c1},
        "fit_protocol": f"pure power on |value - richardson(d={d})| excluding "
                        f"{config.fit_exclude_largest} largest N",
    }
    return ConvergenceTable(rows=rows, fits=fits, limits=limits, meta=meta)


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def table_to_csv(table: ConvergenceTable) -> str:
    cols = list(ROW_COLUMNS)
    extra = sorted({k for r in table.rows for k in r} - set(cols))
    cols += extra
    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(cols)
    for r in table.rows:
        writer.writerow([_csv_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def table_to_json(table: ConvergenceTable) -> str:
    payload = {"meta": table.meta, "rows": table.rows, "fits": table.fits,
               "limits": table.limits}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def plot_data_csv(table: ConvergenceTable) -> str:
    """Long-format (quantity, N, error) rows for log-log plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(["quantity", "N", "error"])
    for col, errcol in [("E_min", "err_E"), ("S_min", "err_S"), ("dE", "err_dE"),
                        ("dS", "err_dS"), ("K", "err_K"), ("lam", "err_lam"),
                        ("mu", "err_mu")]:
        for r in table.rows:
            if r.get(errcol):
                writer.writerow([col, r["N"], repr(float(r[errcol]))])
    return buf.getvalue()


def emit(table: ConvergenceTable, outdir: Path,
         formats: tuple[str, ...] = ("csv", "json")) -> list[Path]:
    """Write table files (atomic, byte-deterministic for a fixed config+seed)."""
    outdir = Path(outdir)
    written: list[Path] = []
    try:
        if "csv" in formats:
            p = outdir / "table.csv"
            atomic_write_text(p, table_to_csv(table))
            written.append(p)
            q = outdir / "plotdata.csv"
            atomic_write_text(q, plot_data_csv(table))
            written.append(q)
        if "json" in formats:
            p = outdir / "table.json"
            atomic_write_text(p, table_to_json(table))
            written.append(p)
    except OSError as exc:
        raise OSError(f"failed writing results under {outdir}: {exc}") from exc
    return written
