"""Time-series ingestion and burst extraction for shot data.

align_time_zero():  locate t=0 at the 50% crossing of the pump rise
detect_bursts():    threshold-based burst intervals on a smoothed trace
fit_burst():        sech^2 least-squares fit of a single burst
analyze_shot():     detect + fit + second-burst bookkeeping for one shot
shot_statistics():  per-parameter-set aggregation

Shot files are CSV with header ``time_s,power_w`` (or ``power_v`` with a
volts-per-watt conversion), one file per shot, named <runid>_shot<k>.csv;
the pump reference is <runid>_pump.csv.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import curve_fit

from .numerics import summary_stats

# FWHM of sech^2((t-t0)/tau) is 2*arccosh(sqrt(2))*tau.
FWHM_FACTOR = 2.0 * math.acosh(math.sqrt(2.0))


@dataclass
class Trace:
    """Uniformly sampled power trace.

    t/p are equal-length arrays (>= 16 samples), dt the sample spacing
    (constant to 1e-9 relative), meta carries run identifiers.
    """

    t: np.ndarray
    p: np.ndarray
    dt: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.t.ndim != 1 or self.t.shape != self.p.shape:
            raise ValueError("t and p must be 1-D arrays of equal length")
        if self.t.size < 16:
            raise ValueError("trace needs at least 16 samples")
        if not self.dt > 0.0:
            raise ValueError("dt must be > 0")
        steps = np.diff(self.t)
        if np.any(np.abs(steps - self.dt) > 1e-9 * self.dt):
            raise ValueError("time axis must be uniform to 1e-9 relative")

    @classmethod
    def from_arrays(cls, t, p, meta=None) -> "Trace":
        t = np.asarray(t, dtype=float)
        if t.size < 2:
            raise ValueError("trace needs at least 2 samples to infer dt")
        dt = (t[-1] - t[0]) / (t.size - 1)
        return cls(t=t, p=p, dt=float(dt), meta=dict(meta or {}))


@dataclass(frozen=True)
class BurstFeatures:
    """Fit results for the first burst of one shot."""

    t_d: float                 # fitted peak time relative to t=0
    p_s: float                 # fitted peak power
    tau_b: float               # FWHM of the fitted burst
    t_d_raw: float             # argmax of the raw samples in the window
    n_bursts: int = 1
    second_peak_ratio: float = 0.0
    fit_rms: float = 0.0
    fit_ok: bool = True


@dataclass(frozen=True)
class ShotStatistics:
    mean_t_d: float
    std_t_d: float
    stderr_t_d: float
    mean_p_s: float
    std_p_s: float
    mean_tau_b: float
    std_tau_b: float
    n_shots: int
    dominant_shape: str        # "first-burst-dominant" | "second-burst-dominant"


def _smooth(p: np.ndarray, window: int) -> np.ndarray:
    window = max(int(window), 1) | 1  # odd, centered
    if window == 1:
        return p
    return uniform_filter1d(p, size=window, mode="nearest")


def align_time_zero(pump_reference: Trace, *, smooth_window: int = 5) -> float:
    """Time at which the pump power first reaches 50% of its plateau mean.

    The plateau is the mean of the top-decile samples; the crossing is
    linearly interpolated between the bracketing samples (exact on a
    linear ramp).  Raises ValueError when no rising crossing exists.
    """
    p = _smooth(pump_reference.p, smooth_window)
    t = pump_reference.t
    top = np.sort(p)[-max(1, p.size // 10):]
    threshold = 0.5 * float(top.mean())
    above = p >= threshold
    if not above.any():
        raise ValueError("pump trace never reaches 50% of its plateau")
    idx = int(np.argmax(above))
    if idx == 0:
        raise ValueError("pump trace starts above 50% of its plateau")
    p0, p1 = p[idx - 1], p[idx]
    if p1 == p0:
        return float(t[idx])
    frac = (threshold - p0) / (p1 - p0)
    return float(t[idx - 1] + frac * (t[idx] - t[idx - 1]))


def detect_bursts(
    trace: Trace,
    min_prominence_sigma: float = 5.0,
    *,
    baseline_fraction: float = 0.1,
    smooth_window: int = 3,
) -> list[tuple[int, int]]:
    """Half-open sample intervals where the smoothed power exceeds
    baseline + min_prominence_sigma * noise_std.

    The baseline and noise floor come from the pre-trigger window (first
    ``baseline_fraction`` of samples).  Intervals separated by less than
    3 smoothing windows are merged; slivers narrower than one smoothing
    window are dropped.  An empty list means no burst, not a failure.
    """
    if not 0.0 < baseline_fraction < 1.0:
        raise ValueError("baseline_fraction must be in (0, 1)")
    sm = _smooth(trace.p, smooth_window)
    n_base = max(4, int(trace.p.size * baseline_fraction))
    base = float(sm[:n_base].mean())
    noise = float(sm[:n_base].std(ddof=1))
    threshold = base + min_prominence_sigma * noise

    mask = sm > threshold
    if not mask.any():
        return []
    idx = np.flatnonzero(mask)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    run_starts = np.concatenate(([0], breaks + 1))
    run_ends = np.concatenate((breaks, [idx.size - 1]))
    intervals = [(int(idx[a]), int(idx[b]) + 1) for a, b in zip(run_starts, run_ends)]

    merged: list[list[int]] = []
    max_gap = 3 * (max(int(smooth_window), 1) | 1)
    for lo, hi in intervals:
        if merged and lo - merged[-1][1] < max_gap:
            merged[-1][1] = hi
        else:
            merged.append([lo, hi])
    min_width = max(int(smooth_window), 1) | 1
    return [(lo, hi) for lo, hi in merged if hi - lo >= min_width]


def sech2_burst(t, amplitude, t0, tau, baseline):
    """Mean-field burst shape A*sech^2((t - t0)/tau) + baseline."""
    x = (t - t0) / tau
    with np.errstate(over="ignore"):
        return amplitude / np.cosh(x) ** 2 + baseline


def _raw_width(tt: np.ndarray, pp: np.ndarray, base: float) -> float:
    """FWHM estimate from half-maximum crossings of the raw samples."""
    half = base + 0.5 * (pp.max() - base)
    above = np.flatnonzero(pp >= half)
    if above.size >= 2:
        width = tt[above[-1]] - tt[above[0]]
        if width > 0:
            return float(width)
    return float(max(tt[-1] - tt[0], tt[1] - tt[0]) / 3.0)


def fit_burst(trace: Trace, interval: tuple[int, int],
              *, t_zero: float = 0.0) -> BurstFeatures:
    """Least-squares sech^2 fit of one detected burst interval.

    On a non-convergent or unphysical fit the features fall back to raw
    peak/half-maximum estimates, flagged by fit_ok=False and
    fit_rms=inf; the shot stays usable for statistics.
    """
    i0, i1 = int(interval[0]), int(interval[1])
    if i1 - i0 < 8:
        raise ValueError("burst interval must contain at least 8 samples")
    tt = trace.t[i0:i1]
    pp = trace.p[i0:i1]
    # Fit in window-local time for well-conditioned parameters.
    t_ref = float(tt[0])
    tl = tt - t_ref

    base0 = float(pp.min())
    peak_idx = int(np.argmax(pp))
    amp0 = float(pp[peak_idx] - base0)
    t_d_raw = float(tt[peak_idx] - t_zero)
    tau0 = _raw_width(tt, pp, base0) / FWHM_FACTOR

    try:
        if amp0 <= 0.0:
            raise RuntimeError("no burst above baseline")
        popt, _ = curve_fit(
            sech2_burst, tl, pp,
            p0=(amp0, float(tl[peak_idx]), tau0, base0),
            method="lm", maxfev=400,
        )
        amplitude, t0_local, tau, _ = popt
        tau = abs(float(tau))
        if amplitude <= 0.0 or tau <= 0.0 or not np.isfinite(popt).all():
            raise RuntimeError("unphysical fit")
        resid = sech2_burst(tl, *popt) - pp
        return BurstFeatures(
            t_d=float(t0_local + t_ref - t_zero),
            p_s=float(amplitude),
            tau_b=FWHM_FACTOR * tau,
            t_d_raw=t_d_raw,
            fit_rms=float(np.sqrt(np.mean(resid**2))),
            fit_ok=True,
        )
    except (RuntimeError, ValueError):
        return BurstFeatures(
            t_d=t_d_raw,
            p_s=amp0,
            tau_b=_raw_width(tt, pp, base0),
            t_d_raw=t_d_raw,
            fit_rms=math.inf,
            fit_ok=False,
        )


def analyze_shot(
    trace: Trace,
    *,
    t_zero: float = 0.0,
    min_prominence_sigma: float = 5.0,
    smooth_window: int = 3,
    baseline_fraction: float = 0.1,
) -> BurstFeatures | None:
    """Detect bursts in one shot and fit the first (earliest) one.

    The earliest interval is taken as the first burst even when a later
    burst is taller; the second burst only enters through
    second_peak_ratio.  Returns None when no burst is detected.
    """
    bursts = detect_bursts(
        trace, min_prominence_sigma,
        baseline_fraction=baseline_fraction, smooth_window=smooth_window,
    )
    if not bursts:
        return None
    features = fit_burst(trace, bursts[0], t_zero=t_zero)
    n_base = max(4, int(trace.p.size * baseline_fraction))
    base = float(trace.p[:n_base].mean())
    ratio = 0.0
    if len(bursts) > 1:
        first = float(trace.p[slice(*bursts[0])].max() - base)
        second = float(trace.p[slice(*bursts[1])].max() - base)
        if first > 0.0:
            ratio = second / first
    return replace(features, n_bursts=len(bursts), second_peak_ratio=ratio)


def shot_statistics(features: list[BurstFeatures]) -> ShotStatistics:
    """Aggregate per-shot burst features for one parameter set."""
    if not features:
        raise ValueError("shot_statistics requires at least one shot")
    t_d = summary_stats([f.t_d for f in features])
    p_s = summary_stats([f.p_s for f in features])
    tau_b = summary_stats([f.tau_b for f in features])
    ratios = sorted(f.second_peak_ratio for f in features)
    median_ratio = ratios[len(ratios) // 2] if len(ratios) % 2 else \
        0.5 * (ratios[len(ratios) // 2 - 1] + ratios[len(ratios) // 2])
    return ShotStatistics(
        mean_t_d=t_d.mean,
        std_t_d=t_d.std_dev,
        stderr_t_d=t_d.std_err,
        mean_p_s=p_s.mean,
        std_p_s=p_s.std_dev,
        mean_tau_b=tau_b.mean,
        std_tau_b=tau_b.std_dev,
        n_shots=len(features),
        dominant_shape=("second-burst-dominant" if median_ratio > 1.0
                        else "first-burst-dominant"),
    )


def read_trace_csv(path: str | Path, *, volts_per_watt: float | None = None,
                   meta: dict | None = None) -> Trace:
    """Load one shot CSV (header time_s,power_w or time_s,power_v)."""
    path = Path(path)
    with path.open() as fh:
        header = None
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                header = line
                break
        if header is None:
            raise ValueError(f"{path}: empty trace file")
        cols = [c.strip() for c in header.split(",")]
        if cols[:1] != ["time_s"] or len(cols) != 2 or \
                cols[1] not in ("power_w", "power_v"):
            raise ValueError(f"{path}: expected header time_s,power_w|power_v")
        data = np.loadtxt(fh, delimiter=",", comments="#", ndmin=2)
    t, p = data[:, 0], data[:, 1]
    if cols[1] == "power_v":
        if volts_per_watt is None or not volts_per_watt > 0:
            raise ValueError(
                f"{path}: power_v traces need a positive volts_per_watt")
        p = p / volts_per_watt
    return Trace.from_arrays(t, p, meta=meta)


def write_trace_csv(path: str | Path, trace: Trace) -> None:
    """Write one shot CSV in the time_s,power_w layout."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("time_s,power_w\n")
        for ti, pi in zip(trace.t, trace.p):
            fh.write(f"{ti!r},{pi!r}\n")
