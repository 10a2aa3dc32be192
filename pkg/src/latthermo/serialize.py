"""Field / point persistence and atomic, deterministic file output."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .lattice import DisplacementField, Supercell
from .spectral import ModeClassification
from .stationary import StationaryPoint

__all__ = [
    "atomic_write_text",
    "save_field_csv",
    "load_field_csv",
    "save_point",
    "load_point",
    "certificate_hash",
]


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _float(s: float) -> str:
    return repr(float(s))


def save_field_csv(path: Path, field: DisplacementField) -> None:
    """Columns l1..ld (integer lattice coordinates), u1..um."""
    cell = field.cell
    d, m = cell.spec.d, cell.spec.m
    rows = [",".join([f"l{i+1}" for i in range(d)] + [f"u{i+1}" for i in range(m)])]
    for x, u in zip(cell.x.tolist(), field.values.tolist()):
        rows.append(",".join([str(v) for v in x] + [_float(v) for v in u]))
    atomic_write_text(Path(path), "\n".join(rows) + "\n")


def load_field_csv(path: Path, cell: Supercell) -> DisplacementField:
    d, m = cell.spec.d, cell.spec.m
    values = np.zeros((cell.n, m))
    seen = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != d + m:
            raise ValueError(f"field file has {len(header)} columns, expected {d + m}")
        for row in reader:
            x = [int(v) for v in row[:d]]
            values[cell.index(x)] = [float(v) for v in row[d:]]
            seen += 1
    if seen != cell.n:
        raise ValueError(f"field file has {seen} sites, cell has {cell.n}")
    return DisplacementField(cell, values)


def certificate_hash(cls: ModeClassification | None) -> str:
    if cls is None:
        return ""
    payload = {"eigs": [repr(float(v)) for v in np.asarray(cls.eigenvalues).ravel()],
               **cls.to_dict()}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def save_point(outdir: Path, name: str, point: StationaryPoint) -> None:
    outdir = Path(outdir)
    save_field_csv(outdir / f"{name}.csv", point.u)
    meta = {
        "kind": point.kind,
        "N": point.N,
        "model_hash": point.model_hash,
        "energy": repr(point.energy),
        "gradient_norm": repr(point.gradient_norm),
        "lam": None if point.lam is None else repr(point.lam),
        "sigma": [repr(point.sigma[0]), repr(point.sigma[1])],
        "n_iter": point.n_iter,
        "certificate": None if point.certificate is None else {
            **point.certificate.to_dict(),
            "eigenvalues": [repr(float(v)) for v in point.certificate.eigenvalues],
            "hash": certificate_hash(point.certificate),
        },
    }
    atomic_write_text(outdir / f"{name}.json", json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_point(outdir: Path, name: str, model, cell: Supercell) -> StationaryPoint | None:
    """Reload a persisted stationary point if it matches model and cell."""
    outdir = Path(outdir)
    meta_path = outdir / f"{name}.json"
    field_path = outdir / f"{name}.csv"
    if not (meta_path.exists() and field_path.exists()):
        return None
    meta = json.loads(meta_path.read_text())
    if meta["model_hash"] != model.model_hash() or meta["N"] != cell.N:
        return None
    u = load_field_csv(field_path, cell)
    cert = None
    if meta["certificate"] is not None:
        c = meta["certificate"]
        cert = ModeClassification(
            eigenvalues=np.array([float(v) for v in c["eigenvalues"]]),
            labels=[], tau_zero=c["tau_zero"], n_zero=c["n_zero"],
            n_negative=c["n_negative"], n_positive=c["n_positive"],
            sigma_min=c["sigma_min"], sigma_max=c["sigma_max"],
            complete=c["complete"])
    return StationaryPoint(
        kind=meta["kind"], u=u, energy=float(meta["energy"]),
        gradient_norm=float(meta["gradient_norm"]), certificate=cert,
        sigma=(float(meta["sigma"][0]), float(meta["sigma"][1])),
        model_hash=meta["model_hash"], n_iter=meta["n_iter"],
        lam=None if meta["lam"] is None else float(meta["lam"]))
