"""Synthetic pump/Stokes shot generation from model parameters.

Each shot draws its burst delay from the model delay law with the
vacuum-fluctuation jitter 2.6/ln N, builds a sech^2 first burst (width
from the delay-based collective rate), optionally appends a ringing
burst, and adds Gaussian noise at the requested SNR.  Shots are
bit-reproducible for a fixed seed and may be generated concurrently via
per-shot derived seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from pathlib import Path

import numpy as np

from . import model
from .model import AtomSpecies, DriveConfig, EnsembleGeometry
from .numerics import DEFAULT_QUADRATURE, QuadratureSpec
from .traces import FWHM_FACTOR, Trace, sech2_burst, write_trace_csv

# Detector-units normalization of the peak power; only ratios across shots
# carry meaning.
PEAK_POWER_SCALE = 1e-12
PUMP_PLATEAU = 1.0


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic shot set."""

    n_atoms: float
    drive: DriveConfig
    geom: EnsembleGeometry
    species: AtomSpecies
    beta: float
    snr: float
    ringing_ratio: float = 0.5    # second/first burst amplitude, 0..1.5
    ringing_gap: float = 2.0      # burst separation in units of tau_b
    n_shots: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.snr > 0.0:
            raise ValueError("snr must be > 0")
        if self.n_shots < 1:
            raise ValueError("n_shots must be >= 1")
        if not 0.0 <= self.ringing_ratio <= 1.5:
            raise ValueError("ringing_ratio must lie in [0, 1.5]")
        if not self.ringing_gap > 0.0:
            raise ValueError("ringing_gap must be > 0")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if self.n_atoms <= 1:
            raise ValueError("n_atoms must exceed 1")


def shot_parameters(spec: SynthSpec,
                    quad: QuadratureSpec = DEFAULT_QUADRATURE) -> dict:
    """Model-derived generator parameters (delay, width, peak, jitter)."""
    breakdown = model.mcn(spec.n_atoms, spec.drive, spec.geom, spec.species,
                          spec.beta, quad)
    t_d_mean = model.mean_delay(breakdown.n_mc, breakdown.mean_rate_r,
                                spec.n_atoms)
    gamma_n = model.gamma_n_from_delay(t_d_mean, spec.n_atoms)
    tau_b = model.BURST_WIDTH_RATE_CONST / gamma_n
    return {
        "breakdown": breakdown,
        "t_d_mean": t_d_mean,
        "gamma_n": gamma_n,
        "tau_b": tau_b,
        "p_s": PEAK_POWER_SCALE * breakdown.n_mc**2,
        "jitter_rel": model.delay_jitter_rel(spec.n_atoms),
    }


def _time_grid(spec: SynthSpec, params: dict, jitter_rel: float):
    tau_p = spec.drive.tau_p
    tau_b = params["tau_b"]
    t_pre = 8.0 * tau_p
    t_post = (params["t_d_mean"] * (1.0 + 8.0 * jitter_rel)
              + (spec.ringing_gap + 6.0) * tau_b)
    dt = tau_b / 24.0
    n = max(int(math.ceil((t_pre + t_post) / dt)) + 1, 16)
    return -t_pre + dt * np.arange(n), dt


def synth_shot_set(
    spec: SynthSpec,
    *,
    jitter_override: float | None = None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> tuple[Trace, list[Trace]]:
    """Generate the pump reference plus n_shots Stokes traces.

    jitter_override replaces the 2.6/ln N relative delay jitter (0 makes
    the delays deterministic; intended for round-trip tests).  The pump
    is a saturating exponential crossing 50% of its plateau at t = 0;
    noise levels are plateau/snr on the pump and peak/snr on the Stokes
    signal.  meta of every Stokes trace records the generator truth
    (true_t_d, true_p_s, true_tau_b).
    """
    params = shot_parameters(spec, quad)
    jitter_rel = params["jitter_rel"] if jitter_override is None \
        else float(jitter_override)
    if jitter_rel < 0.0:
        raise ValueError("jitter must be >= 0")
    t, dt = _time_grid(spec, params, jitter_rel)
    tau_p = spec.drive.tau_p
    tau = params["tau_b"] / FWHM_FACTOR
    peak = params["p_s"]
    noise_sigma = 0.0 if math.isinf(spec.snr) else peak / spec.snr

    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_shots + 1)

    # Pump rise 1 - exp(-(t - t_on)/tau_p) reaches 50% at t = 0.
    t_on = -tau_p * math.log(2.0)
    rise = np.where(t >= t_on, -np.expm1(-(t - t_on) / tau_p), 0.0)
    pump_p = PUMP_PLATEAU * rise
    if not math.isinf(spec.snr):
        rng = np.random.default_rng(seeds[0])
        pump_p = pump_p + rng.normal(0.0, PUMP_PLATEAU / spec.snr, t.size)
    pump = Trace(t=t, p=pump_p, dt=dt, meta={
        "n_atoms": spec.n_atoms, "delta_p": spec.drive.delta_p,
        "kind": "pump",
    })

    shots = []
    for k in range(spec.n_shots):
        rng = np.random.default_rng(seeds[k + 1])
        t_d = params["t_d_mean"]
        if jitter_rel > 0.0:
            sigma = jitter_rel * params["t_d_mean"]
            t_d = -1.0
            while t_d <= 0.0:  # truncate the normal law at t_d > 0
                t_d = rng.normal(params["t_d_mean"], sigma)
        p = sech2_burst(t, peak, t_d, tau, 0.0)
        if spec.ringing_ratio > 0.0:
            p = p + sech2_burst(t, spec.ringing_ratio * peak,
                                t_d + spec.ringing_gap * params["tau_b"],
                                tau, 0.0)
        if noise_sigma > 0.0:
            p = p + rng.normal(0.0, noise_sigma, t.size)
        shots.append(Trace(t=t, p=p, dt=dt, meta={
            "n_atoms": spec.n_atoms, "delta_p": spec.drive.delta_p,
            "shot": k, "true_t_d": float(t_d), "true_p_s": peak,
            "true_tau_b": params["tau_b"],
        }))
    return pump, shots


def write_shot_set(spec: SynthSpec, out_dir: str | Path, run_id: str,
                   *, jitter_override: float | None = None,
                   quad: QuadratureSpec = DEFAULT_QUADRATURE) -> list[Path]:
    """Write a shot set in the CSV layout the analysis side ingests."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pump, shots = synth_shot_set(spec, jitter_override=jitter_override,
                                 quad=quad)
    paths = [out_dir / f"{run_id}_pump.csv"]
    write_trace_csv(paths[0], pump)
    for k, shot in enumerate(shots):
        path = out_dir / f"{run_id}_shot{k}.csv"
        write_trace_csv(path, shot)
        paths.append(path)
    return paths


def delay_formula_highprec(prefactor_atoms: float, rate: float,
                           n_atoms: float) -> float:
    """Burst delay [ln sqrt(2*pi*N)]^2/(4*prefactor*rate), via Decimal.

    Textually independent of model.mean_delay and evaluated at 40-digit
    precision; serves as the anti-regression oracle for the delay law.
    """
    if n_atoms <= 1 or not prefactor_atoms > 0.0 or not rate > 0.0:
        raise ValueError("invalid delay-law arguments")
    with localcontext() as ctx:
        ctx.prec = 40
        two_pi_n = 2 * Decimal(repr(math.pi)) * Decimal(repr(float(n_atoms)))
        log_term = two_pi_n.ln() / 2
        denom = 4 * Decimal(repr(float(prefactor_atoms))) * Decimal(repr(float(rate)))
        return float(log_term * log_term / denom)


def oracle_delay(spec: SynthSpec,
                 quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Mean burst delay for a SynthSpec via the high-precision path."""
    params = shot_parameters(spec, quad)
    breakdown = params["breakdown"]
    return delay_formula_highprec(breakdown.n_mc, breakdown.mean_rate_r,
                                  spec.n_atoms)
