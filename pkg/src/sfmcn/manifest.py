"""Run manifest: one JSON file pinning every experimental parameter.

Units are fixed per field (suffix-encoded key names, no inference) so
reruns are bit-exact.  Unknown keys are rejected to catch typos early.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .model import AtomSpecies, DriveConfig, EnsembleGeometry
from .numerics import QuadratureSpec


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class RunManifest:
    species: AtomSpecies                 # SI (gamma in rad/s)
    geom: EnsembleGeometry               # meters
    drives: tuple[DriveConfig, ...]      # omega/delta in gamma units, tau_p s
    shot_dir: Path | None
    volts_per_watt: float | None
    output_dir: Path
    seed: int
    quad: QuadratureSpec
    minimize_tol: float
    sha256: str
    path: Path


def _require_keys(block: dict, allowed: set[str], required: set[str],
                  where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ManifestError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(block)
    if missing:
        raise ManifestError(f"{where}: missing keys {sorted(missing)}")


def _number(block: dict, key: str, where: str, *, positive: bool = True) -> float:
    value = block[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ManifestError(f"{where}.{key}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ManifestError(f"{where}.{key}: must be finite")
    if positive and not value > 0.0:
        raise ManifestError(f"{where}.{key}: must be > 0")
    return value


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    raw = path.read_bytes()
    sha256 = hashlib.sha256(raw).hexdigest()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")

    _require_keys(
        doc,
        allowed={"species", "geometry", "drives", "data", "output_dir",
                 "seed", "tolerances"},
        required={"species", "geometry", "drives"},
        where=str(path),
    )

    sp = doc["species"]
    _require_keys(
        sp,
        allowed={"gamma_mhz_2pi", "lambda_nm", "branching_ratio",
                 "sigma13_cm2", "gamma0_gamma"},
        required={"gamma_mhz_2pi", "lambda_nm", "branching_ratio",
                  "sigma13_cm2", "gamma0_gamma"},
        where="species",
    )
    gamma = 2.0 * math.pi * _number(sp, "gamma_mhz_2pi", "species") * 1e6
    species = AtomSpecies(
        gamma=gamma,
        wavelength=_number(sp, "lambda_nm", "species") * 1e-9,
        branching=_number(sp, "branching_ratio", "species"),
        sigma13=_number(sp, "sigma13_cm2", "species") * 1e-4,
        gamma0=_number(sp, "gamma0_gamma", "species") * gamma,
    )

    ge = doc["geometry"]
    _require_keys(
        ge,
        allowed={"sigma_a_um", "sigma_p_um", "length_cm", "core_radius_um"},
        required={"sigma_a_um", "sigma_p_um", "length_cm", "core_radius_um"},
        where="geometry",
    )
    geom = EnsembleGeometry.from_widths(
        sigma_a=_number(ge, "sigma_a_um", "geometry") * 1e-6,
        sigma_p=_number(ge, "sigma_p_um", "geometry") * 1e-6,
        length=_number(ge, "length_cm", "geometry") * 1e-2,
        core_radius=_number(ge, "core_radius_um", "geometry") * 1e-6,
        wavelength=species.wavelength,
    )

    if not isinstance(doc["drives"], list) or not doc["drives"]:
        raise ManifestError("drives: expected a non-empty list")
    drives = []
    for k, dr in enumerate(doc["drives"]):
        where = f"drives[{k}]"
        _require_keys(
            dr,
            allowed={"omega_p0_gamma", "delta_p_gamma", "tau_p_ns"},
            required={"omega_p0_gamma", "delta_p_gamma", "tau_p_ns"},
            where=where,
        )
        drives.append(DriveConfig(
            omega_p0=_number(dr, "omega_p0_gamma", where),
            delta_p=_number(dr, "delta_p_gamma", where, positive=False),
            tau_p=_number(dr, "tau_p_ns", where) * 1e-9,
        ))

    shot_dir = None
    volts_per_watt = None
    if "data" in doc:
        da = doc["data"]
        _require_keys(da, allowed={"shot_dir", "volts_per_watt"},
                      required=set(), where="data")
        if "shot_dir" in da:
            if not isinstance(da["shot_dir"], str):
                raise ManifestError("data.shot_dir: expected a string path")
            shot_dir = (path.parent / da["shot_dir"]).resolve()
        if "volts_per_watt" in da:
            volts_per_watt = _number(da, "volts_per_watt", "data")

    output_dir = doc.get("output_dir", "out")
    if not isinstance(output_dir, str):
        raise ManifestError("output_dir: expected a string path")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ManifestError("seed: expected a non-negative integer")

    tol = doc.get("tolerances", {})
    _require_keys(tol, allowed={"quad_rel_tol", "quad_abs_tol",
                                "quad_max_subdivisions", "minimize_tol"},
                  required=set(), where="tolerances")
    quad = QuadratureSpec(
        rel_tol=_number(tol, "quad_rel_tol", "tolerances")
        if "quad_rel_tol" in tol else 1e-10,
        abs_tol=_number(tol, "quad_abs_tol", "tolerances", positive=False)
        if "quad_abs_tol" in tol else 0.0,
        max_subdivisions=int(tol.get("quad_max_subdivisions", 256)),
    )
    minimize_tol = _number(tol, "minimize_tol", "tolerances") \
        if "minimize_tol" in tol else 1e-5

    return RunManifest(
        species=species,
        geom=geom,
        drives=tuple(drives),
        shot_dir=shot_dir,
        volts_per_watt=volts_per_watt,
        output_dir=(path.parent / output_dir).resolve(),
        seed=seed,
        quad=quad,
        minimize_tol=minimize_tol,
        sha256=sha256,
        path=path.resolve(),
    )
