"""YAML run configuration: lattice, potential model and sweep parameters."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .lattice import ConfigurationError, LatticeSpec
from .harness import RunConfig
from .potentials import (
    HarmonicBondPotential,
    MorseBondPotential,
    PotentialModel,
    preset_model,
)

__all__ = ["load_config", "model_from_config"]

PRESET_KICKS = {
    "square_double_well": ((0, 0), (0.12, 0.0)),
    "square_misfit": None,
}


def _lattice_from_config(cfg: dict) -> LatticeSpec:
    return LatticeSpec(
        A=np.asarray(cfg["A"], dtype=float),
        B=np.asarray(cfg["B"], dtype=float),
        m=int(cfg["m"]),
        r_cut=float(cfg["r_cut"]),
    )


def _classes_to_bonds(spec: LatticeSpec, classes: list[dict], key: str) -> np.ndarray:
    lens = np.linalg.norm(spec.stencil, axis=1)
    out = np.zeros(spec.nR)
    assigned = np.zeros(spec.nR, dtype=bool)
    for cls in classes:
        sel = np.abs(lens - float(cls["len"])) < 1e-9
        out[sel] = float(cls[key])
        assigned |= sel
    if not assigned.all():
        raise ConfigurationError(f"bond classes leave stencil lengths {set(np.round(lens[~assigned], 6))} unassigned")
    return out


def _potential_from_config(spec: LatticeSpec, cfg: dict):
    kind = cfg.get("kind", "morse")
    if kind == "harmonic":
        lens = np.linalg.norm(spec.stencil, axis=1)
        K = np.zeros((spec.nR, spec.m, spec.m))
        k_per_bond = _classes_to_bonds(spec, cfg["classes"], "k")
        for i in range(spec.nR):
            nhat = spec.stencil[i] / lens[i]
            K[i] = k_per_bond[i] * (np.outer(nhat, nhat) if spec.m == spec.d
                                    else np.eye(spec.m))
        scale = float(cfg.get("scale", 1.0))
        b = None
        if cfg.get("b_radial"):
            b = float(cfg["b_radial"]) * spec.stencil / lens[:, None]
        return HarmonicBondPotential(spec.stencil, spec.m, scale * K, b=b)
    if kind == "morse":
        D = _classes_to_bonds(spec, cfg["classes"], "D")
        a = _classes_to_bonds(spec, cfg["classes"], "a")
        scale = float(cfg.get("scale", 1.0))
        shift = float(cfg.get("shift", 0.0))
        return MorseBondPotential.from_morse(spec.stencil, spec.m, scale * D, a,
                                             shift=shift if shift else None)
    raise ConfigurationError(f"unknown potential kind '{kind}'")


def model_from_config(cfg: dict) -> PotentialModel:
    """Build a model from a config mapping: a preset name or explicit tables."""
    if "preset" in cfg:
        model = preset_model(cfg["preset"])
        scale = cfg.get("override_scale")
        if scale is not None:
            raise ConfigurationError("override_scale applies to explicit models only")
        return model
    spec = _lattice_from_config(cfg["lattice"])
    hom = _potential_from_config(spec, cfg["potential"])
    overrides = {}
    for key, ocfg in (cfg.get("overrides") or {}).items():
        site = tuple(int(v) for v in str(key).split(","))
        overrides[site] = _potential_from_config(spec, ocfg)
    mirror = None
    if cfg.get("mirror") is not None:
        mirror = np.asarray(cfg["mirror"], dtype=int)
    return PotentialModel(spec, hom, overrides, name=cfg.get("name", "config"),
                          mirror=mirror)


def load_config(path: Path, out_override: Path | None = None,
                workers: int | None = None, seed: int | None = None,
                formats: tuple[str, ...] | None = None) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    model = model_from_config(raw["model"])
    run = raw.get("run", {})
    kick = run.get("kick")
    if kick is None and raw["model"].get("preset") in PRESET_KICKS:
        kick = PRESET_KICKS[raw["model"]["preset"]]
        kick = None if kick is None else {"site": kick[0], "vector": kick[1]}
    kick_site = tuple(kick["site"]) if kick else None
    kick_vector = np.asarray(kick["vector"], dtype=float) if kick else None
    out = out_override or run.get("out")
    return RunConfig(
        model=model,
        N_list=[int(v) for v in run.get("N_list", [4, 6, 8, 12])],
        beta=[float(b) for b in run.get("beta", [1.0])],
        seed=seed if seed is not None else int(run.get("seed", 0)),
        workers=workers if workers is not None else int(run.get("workers", 1)),
        out=Path(out) if out else None,
        saddle=run.get("saddle", "auto"),
        kick_site=kick_site,
        kick_vector=kick_vector,
        N_ref=None if run.get("N_ref") is None else int(run["N_ref"]),
        R_sum=None if run.get("R_sum") is None else float(run["R_sum"]),
        max_iter=int(run.get("max_iter", 100)),
        formats=formats or tuple(run.get("formats", ("csv", "json"))),
    )
