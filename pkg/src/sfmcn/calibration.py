"""Calibration of the Stokes-gain scaling factor and scaling analyses.

fit_beta_single():  least-squares fit of beta against measured delays at
                    one detuning
fit_beta_law():     linear fit of beta(detuning) above a validity threshold
scaling_fit():      linear fit with explicit point exclusions
mcn_map():          relative-MCN surface over (N, detuning) with the
                    attenuation and broadening boundary curves
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from . import model
from .model import AtomSpecies, DriveConfig, EnsembleGeometry, ModelStageError
from .numerics import (
    BracketError,
    DEFAULT_QUADRATURE,
    LinFitResult,
    QuadratureSpec,
    linfit,
    minimize_scalar,
    warn_if_multimodal,
)


@dataclass(frozen=True)
class DelayPoint:
    """One measured (or synthesized) mean delay."""

    n_atoms: float
    delta_p: float          # units of gamma
    mean_t_d: float         # seconds (1/gamma-unit time in general)
    std_t_d: float
    n_shots: int

    def __post_init__(self):
        if not self.mean_t_d > 0.0:
            raise ValueError("mean_t_d must be > 0")
        if self.std_t_d < 0.0:
            raise ValueError("std_t_d must be >= 0")
        if self.n_shots < 1:
            raise ValueError("n_shots must be >= 1")


@dataclass(frozen=True)
class DelayDataset:
    points: tuple[DelayPoint, ...]

    def detunings(self) -> list[float]:
        return sorted({p.delta_p for p in self.points})

    def at_detuning(self, delta_p: float, rel_tol: float = 1e-9):
        return [p for p in self.points
                if math.isclose(p.delta_p, delta_p, rel_tol=rel_tol)]

    @classmethod
    def from_csv(cls, path: str | Path) -> "DelayDataset":
        points = []
        with Path(path).open() as fh:
            reader = csv.DictReader(
                row for row in fh if not row.startswith("#"))
            required = {"n_atoms", "delta_p_gamma", "mean_t_d_s",
                        "std_t_d_s", "n_shots"}
            if reader.fieldnames is None or not required <= set(reader.fieldnames):
                raise ValueError(
                    f"{path}: expected columns {sorted(required)}")
            for row in reader:
                points.append(DelayPoint(
                    n_atoms=float(row["n_atoms"]),
                    delta_p=float(row["delta_p_gamma"]),
                    mean_t_d=float(row["mean_t_d_s"]),
                    std_t_d=float(row["std_t_d_s"]),
                    n_shots=int(row["n_shots"]),
                ))
        return cls(points=tuple(points))

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n_atoms", "delta_p_gamma", "mean_t_d_s",
                             "std_t_d_s", "n_shots"])
            for p in self.points:
                writer.writerow([repr(p.n_atoms), repr(p.delta_p),
                                 repr(p.mean_t_d), repr(p.std_t_d),
                                 p.n_shots])


@dataclass(frozen=True)
class BetaLaw:
    """Linear detuning dependence of the Stokes-gain scaling factor."""

    intercept: float
    slope: float                 # per gamma of detuning
    valid_min_detuning: float    # fit only trusted above this detuning

    def beta_at(self, delta_p: float) -> float:
        return max(0.0, self.intercept + self.slope * delta_p)


@dataclass(frozen=True)
class ModelContext:
    """Fixed model inputs shared by every point of a calibration."""

    species: AtomSpecies
    geom: EnsembleGeometry
    omega_p0: float      # units of gamma
    tau_p: float         # inverse gamma units

    def drive(self, delta_p: float) -> DriveConfig:
        return DriveConfig(omega_p0=self.omega_p0, delta_p=delta_p,
                           tau_p=self.tau_p)


def model_delay(ctx: ModelContext, n_atoms: float, delta_p: float,
                beta: float,
                quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Pipeline-predicted mean delay for one parameter point."""
    breakdown = model.mcn(n_atoms, ctx.drive(delta_p), ctx.geom, ctx.species,
                          beta, quad)
    return model.mean_delay(breakdown.n_mc, breakdown.mean_rate_r, n_atoms)


def fit_beta_single(
    delta_p: float,
    points: Iterable[DelayPoint],
    ctx: ModelContext,
    *,
    bracket: tuple[float, float] = (0.0, 2.0),
    tol: float = 1e-5,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Fit beta at one detuning against measured mean delays.

    Minimizes sum_i w_i (t_model(N_i; beta) - mean_t_d_i)^2 over the
    bracket, with w_i = n_shots_i/std_t_d_i^2 when every point carries a
    positive std and uniform weights otherwise.  A boundary minimum (for
    example beta = 0) is returned as-is.
    """
    pts = [p for p in points
           if math.isclose(p.delta_p, delta_p, rel_tol=1e-9)]
    if len(pts) < 2:
        raise ValueError(
            f"need at least two delay points at detuning {delta_p}")
    if all(p.std_t_d > 0.0 for p in pts):
        weights = [p.n_shots / p.std_t_d**2 for p in pts]
    else:
        weights = [1.0] * len(pts)

    cache: dict[float, float] = {}

    def objective(beta: float) -> float:
        beta = float(beta)
        if beta not in cache:
            total = 0.0
            for w, p in zip(weights, pts):
                t_model = model_delay(ctx, p.n_atoms, delta_p, beta, quad)
                total += w * (t_model - p.mean_t_d) ** 2
            cache[beta] = total
        return cache[beta]

    scan_x = np.linspace(bracket[0], bracket[1], 9)
    scan_y = [objective(x) for x in scan_x]
    warn_if_multimodal(scan_x, scan_y, f"beta fit at detuning {delta_p}")
    try:
        return minimize_scalar(objective, bracket, tol, probe_points=7)
    except BracketError as err:
        return float(err.best_x)


def fit_beta_law(
    samples: Sequence[tuple[float, float]],
    min_detuning: float,
) -> BetaLaw:
    """Unweighted linear fit of (detuning, beta) samples above min_detuning."""
    kept = [(d, b) for d, b in samples if d > min_detuning]
    if len(kept) < 2:
        raise ValueError(
            f"beta law needs at least two samples above detuning "
            f"{min_detuning} (got {len(kept)})")
    fit = linfit([d for d, _ in kept], [b for _, b in kept])
    return BetaLaw(intercept=fit.intercept, slope=fit.slope,
                   valid_min_detuning=min_detuning)


class ScalingFitResult(NamedTuple):
    fit: LinFitResult
    excluded: tuple[int, ...]


def scaling_fit(
    xs: Sequence[float],
    ys: Sequence[float],
    exclusions: Iterable[int] = (),
) -> ScalingFitResult:
    """Linear fit of ys against xs with an explicit exclusion set.

    xs is typically N_mc or N_mc^2; excluded indices are echoed back so
    downstream tables can show which points were dropped.
    """
    excluded = tuple(sorted(set(int(i) for i in exclusions)))
    for i in excluded:
        if not 0 <= i < len(xs):
            raise ValueError(f"exclusion index {i} out of range")
    keep = [i for i in range(len(xs)) if i not in excluded]
    if len(keep) < 2:
        raise ValueError("need at least two retained points")
    fit = linfit([xs[i] for i in keep], [ys[i] for i in keep])
    return ScalingFitResult(fit=fit, excluded=excluded)


@dataclass(frozen=True)
class MapGrid:
    """Grid specification of the relative-MCN map."""

    n_min: float
    n_max: float
    n_points: int
    detuning_min: float
    detuning_max: float
    detuning_points: int
    log_n: bool = True

    def __post_init__(self):
        if not 1 < self.n_min <= self.n_max:
            raise ValueError("need 1 < n_min <= n_max")
        if self.n_points < 1 or self.detuning_points < 1:
            raise ValueError("grid needs at least one point per axis")
        if not 0 < self.detuning_min <= self.detuning_max:
            raise ValueError("need 0 < detuning_min <= detuning_max")

    def n_values(self) -> np.ndarray:
        if self.n_points == 1:
            return np.array([self.n_min])
        if self.log_n:
            return np.geomspace(self.n_min, self.n_max, self.n_points)
        return np.linspace(self.n_min, self.n_max, self.n_points)

    def detuning_values(self) -> np.ndarray:
        if self.detuning_points == 1:
            return np.array([self.detuning_min])
        return np.linspace(self.detuning_min, self.detuning_max,
                           self.detuning_points)


@dataclass
class McnMap:
    """Relative MCN over (N, detuning) plus the two boundary curves.

    Arrays are indexed [i_detuning, j_n].  Cells where the pipeline
    failed carry valid=False and NaN values; cells where the effective
    two-level approximation breaks (detuning <= peak Rabi frequency) are
    flagged model_invalid but still computed.
    """

    n_values: np.ndarray
    detuning_values: np.ndarray
    ratio: np.ndarray
    n_mc: np.ndarray
    alpha_tilde: np.ndarray
    eta_inh: np.ndarray
    eta_s: np.ndarray
    valid: np.ndarray
    model_invalid: np.ndarray
    error_stage: list[list[str]]
    boundary_attenuation: list[tuple[float, float]]   # (detuning, n_atoms)
    boundary_equal: list[tuple[float, float]]         # (n_atoms, detuning)
    mu: float


def _attenuation_at(ctx: ModelContext, delta_p: float, beta: float,
                    n_atoms: float, quad: QuadratureSpec) -> float:
    """alpha_tilde without the expensive z-average (enough for boundaries)."""
    drive = ctx.drive(delta_p)
    mean_rate = model.radial_mean_rate(drive, ctx.geom, ctx.species, quad)
    delta_s = model.radial_std("stark", drive, ctx.geom, ctx.species, quad)
    alpha0 = model.peak_od(n_atoms, ctx.geom, ctx.species, quad)
    alpha_det = model.absorption(alpha0, drive, ctx.geom, ctx.species, quad)
    gamma_dec = model.decoherence(ctx.species, delta_s, mean_rate)
    gain = model.stokes_gain(alpha0, mean_rate, gamma_dec)
    return model.attenuation(alpha_det, beta, gain)


def _eta_s_at_unit_attenuation(ctx: ModelContext, delta_p: float,
                               quad: QuadratureSpec) -> float:
    """Shadow factor at fixed alpha_tilde = 1 (independent of N)."""
    drive = ctx.drive(delta_p)
    mean_rate = model.radial_mean_rate(drive, ctx.geom, ctx.species, quad)
    eff = model.effective_collective_rate(1.0, drive, ctx.geom, ctx.species,
                                          1.0, quad)
    return model.shadow_factor(eff, 1.0, ctx.geom.mu, mean_rate)


def _eta_inh_of(ctx: ModelContext, delta_p: float,
                quad: QuadratureSpec) -> float:
    drive = ctx.drive(delta_p)
    sigma_inh = (model.radial_std("stark", drive, ctx.geom, ctx.species, quad)
                 + model.radial_std("rate", drive, ctx.geom, ctx.species, quad))
    return model.inhomogeneous_factor(ctx.tau_p, sigma_inh)


def mcn_map(
    grid: MapGrid,
    ctx: ModelContext,
    beta_law: BetaLaw,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> McnMap:
    """Evaluate N_mc/N_mu over the grid and locate the boundary curves.

    The attenuation boundary solves alpha_tilde(detuning, N) = 1 for N in
    each detuning column.  The broadening boundary solves
    eta_inh(detuning) = eta_s(alpha_tilde=1)(detuning); neither side
    depends on N, so the curve is a constant-detuning line replicated
    across the N axis.
    """
    n_vals = grid.n_values()
    d_vals = grid.detuning_values()
    shape = (d_vals.size, n_vals.size)
    ratio = np.full(shape, np.nan)
    n_mc = np.full(shape, np.nan)
    alpha_tilde = np.full(shape, np.nan)
    eta_inh = np.full(shape, np.nan)
    eta_s = np.full(shape, np.nan)
    valid = np.zeros(shape, dtype=bool)
    model_invalid = np.zeros(shape, dtype=bool)
    error_stage = [["" for _ in range(n_vals.size)] for _ in range(d_vals.size)]

    for i, d in enumerate(d_vals):
        beta = beta_law.beta_at(float(d))
        for j, n in enumerate(n_vals):
            model_invalid[i, j] = d <= ctx.omega_p0
            try:
                b = model.mcn(float(n), ctx.drive(float(d)), ctx.geom,
                              ctx.species, beta, quad)
            except ModelStageError as err:
                error_stage[i][j] = err.stage
                continue
            ratio[i, j] = b.n_mc / b.n_mu
            n_mc[i, j] = b.n_mc
            alpha_tilde[i, j] = b.alpha_tilde
            eta_inh[i, j] = b.eta_inh
            eta_s[i, j] = b.eta_s
            valid[i, j] = True

    boundary_attenuation = []
    if n_vals.size > 1:
        log_lo, log_hi = math.log(grid.n_min), math.log(grid.n_max)
        for d in d_vals:
            beta = beta_law.beta_at(float(d))

            def resid(log_n, d=float(d), beta=beta):
                return _attenuation_at(ctx, d, beta, math.exp(log_n), quad) - 1.0

            try:
                f_lo, f_hi = resid(log_lo), resid(log_hi)
            except (ModelStageError, ValueError):
                continue
            if f_lo == 0.0:
                boundary_attenuation.append((float(d), grid.n_min))
            elif f_hi == 0.0:
                boundary_attenuation.append((float(d), grid.n_max))
            elif f_lo * f_hi < 0.0:
                root = brentq(resid, log_lo, log_hi, xtol=1e-13, rtol=1e-14)
                boundary_attenuation.append((float(d), math.exp(root)))

    boundary_equal = []
    if d_vals.size > 1:
        def equal_resid(delta):
            return (_eta_inh_of(ctx, float(delta), quad)
                    - _eta_s_at_unit_attenuation(ctx, float(delta), quad))

        # Bracket sign changes on the detuning grid, then refine each.
        try:
            vals = [equal_resid(d) for d in d_vals]
        except (ModelStageError, ValueError):
            vals = []
        roots = []
        for k in range(len(vals) - 1):
            if vals[k] == 0.0:
                roots.append(float(d_vals[k]))
            elif vals[k] * vals[k + 1] < 0.0:
                roots.append(float(brentq(equal_resid, float(d_vals[k]),
                                          float(d_vals[k + 1]),
                                          xtol=1e-10, rtol=1e-12)))
        if vals and vals[-1] == 0.0:
            roots.append(float(d_vals[-1]))
        for root in roots:
            boundary_equal.extend((float(n), root) for n in n_vals)

    return McnMap(
        n_values=n_vals,
        detuning_values=d_vals,
        ratio=ratio,
        n_mc=n_mc,
        alpha_tilde=alpha_tilde,
        eta_inh=eta_inh,
        eta_s=eta_s,
        valid=valid,
        model_invalid=model_invalid,
        error_stage=error_stage,
        boundary_attenuation=boundary_attenuation,
        boundary_equal=boundary_equal,
        mu=ctx.geom.mu,
    )


def synthesize_delay_dataset(
    ctx: ModelContext,
    detunings: Sequence[float],
    n_values: Sequence[float],
    beta_of_detuning,
    *,
    noise_rel: float = 0.0,
    n_shots: int = 100,
    seed: int = 0,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> DelayDataset:
    """Pipeline-generated delay dataset for calibration round trips.

    beta_of_detuning maps detuning to the injected beta (a float works
    too).  noise_rel perturbs each mean delay multiplicatively with
    N(1, noise_rel); std_t_d carries the vacuum-jitter estimate of the
    per-shot spread.
    """
    rng = np.random.default_rng(seed)
    beta_fn = beta_of_detuning if callable(beta_of_detuning) \
        else (lambda _d: float(beta_of_detuning))
    points = []
    for d in detunings:
        beta = beta_fn(float(d))
        for n in n_values:
            t_d = model_delay(ctx, float(n), float(d), beta, quad)
            if noise_rel > 0.0:
                t_d *= 1.0 + noise_rel * rng.standard_normal()
                t_d = abs(t_d)
            std = model.delay_jitter_rel(float(n)) * t_d
            points.append(DelayPoint(n_atoms=float(n), delta_p=float(d),
                                     mean_t_d=t_d, std_t_d=std,
                                     n_shots=n_shots))
    return DelayDataset(points=tuple(points))
