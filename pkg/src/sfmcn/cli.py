"""Batch command-line front end.

Verbs:
  model      McnBreakdown table over an atom-number list
  synth      write a synthetic shot set (pump + Stokes CSVs)
  analyze    burst-extract a shot directory and aggregate statistics
  calibrate  fit beta per detuning and the linear beta(detuning) law
  map        relative-MCN map with boundary curves

Exit codes: 0 success, 2 partial per-row failures, 1 hard failure.
All outputs are written atomically (temp file + rename) and carry the
manifest hash and tool version in a header comment.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import __version__, model, synth, traces
from .calibration import (
    BetaLaw,
    DelayDataset,
    MapGrid,
    ModelContext,
    fit_beta_law,
    fit_beta_single,
    mcn_map,
)
from .manifest import ManifestError, RunManifest, load_manifest
from .model import ModelStageError
from .synth import SynthSpec

EXIT_OK = 0
EXIT_HARD = 1
EXIT_PARTIAL = 2

_BREAKDOWN_FIELDS = [
    "mean_rate_r", "delta_s", "delta_rate", "sigma_inh", "eta_inh",
    "alpha0", "alpha_det", "gamma_dec", "gain", "beta", "alpha_tilde",
    "eff_rate", "eta_s", "n_mu", "n_mc",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _header(manifest: RunManifest) -> str:
    return (f"# manifest_sha256={manifest.sha256}\n"
            f"# tool=sfmcn {__version__}\n")


def _write_table(path: Path, manifest: RunManifest, columns: list[str],
                 rows: list[list]) -> None:
    buf = io.StringIO()
    buf.write(_header(manifest))
    writer = csv.writer(buf)
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    _atomic_write(path, buf.getvalue())


def _write_json(path: Path, manifest: RunManifest, payload: dict) -> None:
    doc = {"_meta": {"manifest_sha256": manifest.sha256,
                     "tool": f"sfmcn {__version__}"}}
    doc.update(payload)
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _parse_floats(text: str) -> list[float]:
    items = [s for s in text.split(",") if s.strip()]
    return [float(s) for s in items]


def _parse_beta_args(args, out_dir: Path) -> BetaLaw:
    """Resolve the beta source: constant, explicit law, or a law file."""
    if args.beta_law_file:
        doc = json.loads(Path(args.beta_law_file).read_text())
        return BetaLaw(intercept=float(doc["intercept"]),
                       slope=float(doc["slope"]),
                       valid_min_detuning=float(doc["valid_min_detuning"]))
    if args.beta_law:
        intercept, slope = _parse_floats(args.beta_law)
        return BetaLaw(intercept=intercept, slope=slope,
                       valid_min_detuning=0.0)
    return BetaLaw(intercept=float(args.beta), slope=0.0,
                   valid_min_detuning=0.0)


def _context(manifest: RunManifest, drive_index: int) -> ModelContext:
    if not 0 <= drive_index < len(manifest.drives):
        raise ManifestError(f"drive index {drive_index} out of range "
                            f"(manifest has {len(manifest.drives)})")
    drive = manifest.drives[drive_index]
    return ModelContext(species=manifest.species, geom=manifest.geom,
                        omega_p0=drive.omega_p0, tau_p=drive.tau_p)


def cmd_model(args, manifest: RunManifest, out_dir: Path) -> int:
    beta_law = _parse_beta_args(args, out_dir)
    n_list = _parse_floats(args.n_atoms)
    columns = (["n_atoms", "delta_p_gamma"] + _BREAKDOWN_FIELDS
               + ["t_d_mu_s", "t_d_mc_s", "error"])
    rows = []
    failures = 0
    for drive in manifest.drives:
        beta = beta_law.beta_at(drive.delta_p)
        for n in n_list:
            base = [n, drive.delta_p]
            try:
                b = model.mcn(n, drive, manifest.geom, manifest.species,
                              beta, manifest.quad)
                t_mu = model.mean_delay(b.n_mu, b.mean_rate_r, n)
                t_mc = model.mean_delay(b.n_mc, b.mean_rate_r, n)
                rows.append(base + [getattr(b, f) for f in _BREAKDOWN_FIELDS]
                            + [t_mu, t_mc, ""])
            except (ModelStageError, ValueError) as err:
                failures += 1
                stage = getattr(err, "stage", "input")
                rows.append(base + [""] * (len(_BREAKDOWN_FIELDS) + 2)
                            + [f"{stage}: {err}"])
    _write_table(out_dir / "mcn_table.csv", manifest, columns, rows)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_synth(args, manifest: RunManifest, out_dir: Path) -> int:
    drive = manifest.drives[args.drive_index]
    spec = SynthSpec(
        n_atoms=args.n_atoms_single,
        drive=drive,
        geom=manifest.geom,
        species=manifest.species,
        beta=args.beta,
        snr=args.snr,
        ringing_ratio=args.ringing_ratio,
        ringing_gap=args.ringing_gap,
        n_shots=args.n_shots,
        seed=args.seed if args.seed is not None else manifest.seed,
    )
    shot_dir = Path(args.shot_dir) if args.shot_dir else out_dir / "shots"
    paths = synth.write_shot_set(spec, shot_dir, args.run_id,
                                 jitter_override=args.jitter,
                                 quad=manifest.quad)
    params = synth.shot_parameters(spec, manifest.quad)
    _write_json(out_dir / f"{args.run_id}_truth.json", manifest, {
        "run_id": args.run_id,
        "n_atoms": spec.n_atoms,
        "delta_p_gamma": drive.delta_p,
        "beta": spec.beta,
        "snr": spec.snr,
        "n_shots": spec.n_shots,
        "seed": spec.seed,
        "t_d_mean_s": params["t_d_mean"],
        "tau_b_s": params["tau_b"],
        "p_s_w": params["p_s"],
        "jitter_rel": (params["jitter_rel"] if args.jitter is None
                       else args.jitter),
        "n_mc": params["breakdown"].n_mc,
        "files": [p.name for p in paths],
    })
    return EXIT_OK


_SHOT_RE = re.compile(r"_shot(\d+)\.csv$")


def _analyze_one(path_str: str, volts_per_watt, t_zero: float,
                 smooth_window: int, min_prominence_sigma: float):
    """Worker for one shot file; returns (shot_index, features|None, error)."""
    path = Path(path_str)
    k = int(_SHOT_RE.search(path.name).group(1))
    try:
        trace = traces.read_trace_csv(path, volts_per_watt=volts_per_watt)
        features = traces.analyze_shot(
            trace, t_zero=t_zero, smooth_window=smooth_window,
            min_prominence_sigma=min_prominence_sigma)
        if features is None:
            return k, None, "no burst detected"
        return k, features, ""
    except (ValueError, OSError) as err:
        return k, None, str(err)


def cmd_analyze(args, manifest: RunManifest, out_dir: Path) -> int:
    shot_dir = Path(args.shot_dir) if args.shot_dir else manifest.shot_dir
    if shot_dir is None:
        print("analyze: no shot directory (manifest data.shot_dir or "
              "--shot-dir)", file=sys.stderr)
        return EXIT_HARD
    pump_path = shot_dir / f"{args.run_id}_pump.csv"
    if not pump_path.exists():
        print(f"analyze: missing pump reference {pump_path}", file=sys.stderr)
        return EXIT_HARD
    shot_paths = sorted(
        (p for p in shot_dir.glob(f"{args.run_id}_shot*.csv")
         if _SHOT_RE.search(p.name)),
        key=lambda p: int(_SHOT_RE.search(p.name).group(1)))
    if not shot_paths:
        print(f"analyze: no shot files for run {args.run_id!r} in {shot_dir}",
              file=sys.stderr)
        return EXIT_HARD

    pump = traces.read_trace_csv(pump_path,
                                 volts_per_watt=manifest.volts_per_watt)
    t_zero = traces.align_time_zero(pump)
    # Smooth over the pump rise time to suppress shot noise.
    smooth_window = max(3, int(round(manifest.drives[0].tau_p / pump.dt)))
    job_args = [(str(p), manifest.volts_per_watt, t_zero, smooth_window,
                 args.min_prominence_sigma) for p in shot_paths]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_analyze_one, *zip(*job_args)))
    else:
        results = [_analyze_one(*a) for a in job_args]
    results.sort(key=lambda r: r[0])

    feature_cols = ["shot", "t_d_s", "p_s_w", "tau_b_s", "t_d_raw_s",
                    "n_bursts", "second_peak_ratio", "fit_rms", "fit_ok",
                    "error"]
    rows = []
    good = []
    failures = 0
    for k, features, error in results:
        if features is None:
            failures += 1
            rows.append([k] + [""] * 8 + [error])
        else:
            good.append(features)
            rows.append([k, features.t_d, features.p_s, features.tau_b,
                         features.t_d_raw, features.n_bursts,
                         features.second_peak_ratio, features.fit_rms,
                         int(features.fit_ok), ""])
    _write_table(out_dir / f"{args.run_id}_features.csv", manifest,
                 feature_cols, rows)

    if not good:
        print("analyze: no shot produced burst features", file=sys.stderr)
        return EXIT_HARD
    stats = traces.shot_statistics(good)
    stat_cols = ["run_id", "t_zero_s", "n_files"] + list(asdict(stats))
    _write_table(out_dir / f"{args.run_id}_statistics.csv", manifest,
                 stat_cols,
                 [[args.run_id, t_zero, len(shot_paths)]
                  + list(asdict(stats).values())])
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_calibrate(args, manifest: RunManifest, out_dir: Path) -> int:
    dataset = DelayDataset.from_csv(args.dataset)
    ctx = _context(manifest, args.drive_index)
    beta_rows = []
    samples = []
    failures = 0
    for d in dataset.detunings():
        pts = dataset.at_detuning(d)
        if len(pts) < 2:
            failures += 1
            beta_rows.append([d, len(pts), "", "too few points"])
            continue
        try:
            beta = fit_beta_single(d, pts, ctx, tol=manifest.minimize_tol,
                                   quad=manifest.quad)
        except (ModelStageError, ValueError) as err:
            failures += 1
            beta_rows.append([d, len(pts), "", str(err)])
            continue
        samples.append((d, beta))
        beta_rows.append([d, len(pts), beta, ""])
    _write_table(out_dir / "beta_table.csv", manifest,
                 ["delta_p_gamma", "n_points", "beta", "error"], beta_rows)

    try:
        law = fit_beta_law(samples, args.min_detuning)
    except ValueError as err:
        print(f"calibrate: beta law not fitted: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    _write_json(out_dir / "beta_law.json", manifest, {
        "intercept": law.intercept,
        "slope": law.slope,
        "valid_min_detuning": law.valid_min_detuning,
        "n_samples_used": sum(1 for d, _ in samples if d > args.min_detuning),
        "n_samples_total": len(samples),
    })
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_map(args, manifest: RunManifest, out_dir: Path) -> int:
    beta_law = _parse_beta_args(args, out_dir)
    ctx = _context(manifest, args.drive_index)
    grid = MapGrid(
        n_min=args.n_min, n_max=args.n_max, n_points=args.n_points,
        detuning_min=args.delta_min, detuning_max=args.delta_max,
        detuning_points=args.delta_points, log_n=not args.linear_n,
    )
    result = mcn_map(grid, ctx, beta_law, manifest.quad)

    rows = []
    for i, d in enumerate(result.detuning_values):
        for j, n in enumerate(result.n_values):
            rows.append([
                n, result.mu * n, d,
                result.ratio[i, j], result.n_mc[i, j],
                result.alpha_tilde[i, j], result.eta_inh[i, j],
                result.eta_s[i, j],
                int(result.valid[i, j]), int(result.model_invalid[i, j]),
                result.error_stage[i][j],
            ])
    _write_table(out_dir / "mcn_map.csv", manifest,
                 ["n_atoms", "n_mu", "delta_p_gamma", "n_mc_over_n_mu",
                  "n_mc", "alpha_tilde", "eta_inh", "eta_s", "valid",
                  "model_invalid", "error_stage"], rows)

    boundary_rows = [["attenuation_unity", n, result.mu * n, d]
                     for d, n in result.boundary_attenuation]
    boundary_rows += [["broadening_equals_shadow", n, result.mu * n, d]
                      for n, d in result.boundary_equal]
    _write_table(out_dir / "mcn_boundaries.csv", manifest,
                 ["boundary", "n_atoms", "n_mu", "delta_p_gamma"],
                 boundary_rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfmcn",
        description="Collective-decay MCN model and burst-trace analysis")
    parser.add_argument("--version", action="version",
                        version=f"sfmcn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", required=True, help="run manifest JSON")
        p.add_argument("--out", default=None,
                       help="output directory (default: manifest output_dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the manifest seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for per-row parallel work")

    def beta_source(p):
        p.add_argument("--beta", type=float, default=0.0,
                       help="constant Stokes-gain scaling (default 0: "
                            "absorption-only attenuation)")
        p.add_argument("--beta-law", default=None, metavar="INTERCEPT,SLOPE",
                       help="linear beta(detuning) law in gamma units")
        p.add_argument("--beta-law-file", default=None,
                       help="beta_law.json produced by calibrate")

    p = sub.add_parser("model", help="evaluate the MCN pipeline on an N list")
    common(p)
    beta_source(p)
    p.add_argument("--n-atoms", required=True,
                   help="comma-separated atom numbers (may be empty)")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("synth", help="generate a synthetic shot set")
    common(p)
    p.add_argument("--run-id", default="synth")
    p.add_argument("--n-atoms", dest="n_atoms_single", type=float,
                   required=True)
    p.add_argument("--drive-index", type=int, default=0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--snr", type=float, default=10.0)
    p.add_argument("--n-shots", type=int, default=100)
    p.add_argument("--ringing-ratio", type=float, default=0.5)
    p.add_argument("--ringing-gap", type=float, default=2.0)
    p.add_argument("--jitter", type=float, default=None,
                   help="override the relative delay jitter (0 disables)")
    p.add_argument("--shot-dir", default=None,
                   help="where to write shot CSVs (default <out>/shots)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="burst-extract a shot directory")
    common(p)
    p.add_argument("--run-id", required=True)
    p.add_argument("--shot-dir", default=None,
                   help="override manifest data.shot_dir")
    p.add_argument("--min-prominence-sigma", type=float, default=5.0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("calibrate", help="fit beta per detuning and its law")
    common(p)
    p.add_argument("--dataset", required=True,
                   help="delay dataset CSV (n_atoms,delta_p_gamma,"
                        "mean_t_d_s,std_t_d_s,n_shots)")
    p.add_argument("--min-detuning", type=float, default=6.0,
                   help="law fitted only above this detuning (gamma units)")
    p.add_argument("--drive-index", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("map", help="relative-MCN map with boundary curves")
    common(p)
    beta_source(p)
    p.add_argument("--drive-index", type=int, default=0)
    p.add_argument("--n-min", type=float, required=True)
    p.add_argument("--n-max", type=float, required=True)
    p.add_argument("--n-points", type=int, required=True)
    p.add_argument("--delta-min", type=float, required=True)
    p.add_argument("--delta-max", type=float, required=True)
    p.add_argument("--delta-points", type=int, required=True)
    p.add_argument("--linear-n", action="store_true",
                   help="linear instead of logarithmic N spacing")
    p.set_defaults(func=cmd_map)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        manifest = load_manifest(args.manifest)
    except (ManifestError, OSError, ValueError) as err:
        print(f"sfmcn: {err}", file=sys.stderr)
        return EXIT_HARD
    out_dir = Path(args.out) if args.out else manifest.output_dir
    try:
        return args.func(args, manifest, out_dir)
    except (ManifestError, ModelStageError, ValueError, OSError) as err:
        print(f"sfmcn {args.command}: {err}", file=sys.stderr)
        return EXIT_HARD


if __name__ == "__main__":
    sys.exit(main())
