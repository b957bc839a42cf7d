"""Generic numerical primitives shared by the whole package.

integrate():        adaptive Gauss-Kronrod quadrature on finite and
                    semi-infinite intervals
minimize_scalar():  derivative-free 1-D minimization on a bracket
linfit():           (weighted) linear least squares with parameter errors
summary_stats():    mean / n-1 standard deviation / standard error

All functions are pure; there is no shared mutable state.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize


class QuadratureError(RuntimeError):
    """Quadrature did not converge within the subdivision budget.

    Carries the best available estimate and its error bound so callers can
    decide whether to accept a degraded result.
    """

    def __init__(self, message: str, estimate: float, error_bound: float):
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound


class BracketError(ValueError):
    """The bracket endpoints do not enclose an interior minimum.

    ``best_x``/``best_value`` hold the better endpoint, which is the
    constrained minimizer when the objective is monotone on the bracket.
    """

    def __init__(self, message: str, best_x: float, best_value: float):
        super().__init__(message)
        self.best_x = best_x
        self.best_value = best_value


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerance contract for integrate().

    The result satisfies |result - true| <= max(abs_tol, rel_tol*|true|)
    (up to the usual reliability of the Kronrod error estimate).
    """

    rel_tol: float = 1e-10
    abs_tol: float = 0.0
    max_subdivisions: int = 256

    def __post_init__(self):
        if not self.rel_tol > 0.0:
            raise ValueError("rel_tol must be > 0")
        if self.abs_tol < 0.0:
            raise ValueError("abs_tol must be >= 0")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUADRATURE = QuadratureSpec()

# 15-point Kronrod extension of the 7-point Gauss rule (nodes on [-1, 1],
# ascending; Gauss nodes sit at the odd indices).
_XK = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0,
    0.207784955007898, 0.405845151377397, 0.586087235467691,
    0.741531185599394, 0.864864423359769, 0.949107912342759,
    0.991455371120813,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
    0.204432940075298, 0.190350578064785, 0.169004726639267,
    0.140653259715525, 0.104790010322250, 0.063092092629979,
    0.022935322010529,
])
_WG = np.zeros(15)
_WG[1::2] = [
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870,
]


def _make_evaluator(f: Callable, vectorized: bool | None):
    """Wrap f so it maps a node array to a float array.

    With vectorized=None the first call probes whether f broadcasts over
    arrays; anything that fails the probe (exception or wrong shape) falls
    back to a scalar loop.
    """
    if vectorized is True:
        return lambda xs: np.asarray(f(xs), dtype=float)
    if vectorized is False:
        return lambda xs: np.array([float(f(x)) for x in xs])

    state = {"vec": None}

    def evaluate(xs):
        if state["vec"] is None:
            try:
                ys = np.asarray(f(xs), dtype=float)
                state["vec"] = ys.shape == xs.shape
                if state["vec"]:
                    return ys
            except Exception:
                state["vec"] = False
        if state["vec"]:
            return np.asarray(f(xs), dtype=float)
        return np.array([float(f(x)) for x in xs])

    return evaluate


def _kronrod_panel(evaluate, a: float, b: float):
    """Return (value, error_bound) of the K15/G7 pair on [a, b]."""
    center = 0.5 * (a + b)
    half = 0.5 * (b - a)
    ys = evaluate(center + half * _XK)
    k15 = half * float(_WK @ ys)
    g7 = half * float(_WG @ ys)
    # QUADPACK-style error estimate: rescale |K－G| by the integrand spread.
    resasc = half * float(_WK @ np.abs(ys - k15 / (b - a)))
    diff = abs(k15 - g7)
    if resasc != 0.0 and diff != 0.0:
        err = resasc * min(1.0, (200.0 * diff / resasc) ** 1.5)
    else:
        err = diff
    return k15, err


def integrate(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    *,
    scale: float = 1.0,
    vectorized: bool | None = None,
) -> float:
    """Adaptively integrate f over [lo, hi]; hi may be math.inf.

    A semi-infinite domain is mapped onto [0, 1) by the substitution
    u = (x - lo) / (x - lo + c), i.e. x = lo + c*u/(1-u) with Jacobian
    dx = c/(1-u)^2 du, where c = ``scale`` sets the length scale of the
    transition.  All Kronrod nodes are interior so f is never evaluated
    at infinity.

    Parameters
    ----------
    f : callable
        Integrand.  May accept numpy arrays (faster); probed automatically
        unless ``vectorized`` is set.
    lo, hi : float
        Integration limits, lo < hi.
    spec : QuadratureSpec
        Tolerances and subdivision budget.
    scale : float
        Length scale of the semi-infinite substitution (ignored for finite
        domains).
    vectorized : bool or None
        Force vectorized / scalar evaluation, or None to auto-detect.

    Raises
    ------
    QuadratureError
        If the tolerance is not reached within ``spec.max_subdivisions``
        panel splits; the exception carries the best estimate.
    """
    if not lo < hi:
        raise ValueError("integration requires lo < hi")
    if math.isinf(hi):
        if not scale > 0.0:
            raise ValueError("scale must be > 0 for semi-infinite domains")
        inner = _make_evaluator(f, vectorized)

        def g(us):
            one_minus = 1.0 - us
            xs = lo + scale * us / one_minus
            return inner(xs) * (scale / one_minus**2)

        evaluate = _make_evaluator(g, True)
        a, b = 0.0, 1.0
    else:
        if math.isinf(lo):
            raise ValueError("lower limit must be finite")
        evaluate = _make_evaluator(f, vectorized)
        a, b = float(lo), float(hi)

    val, err = _kronrod_panel(evaluate, a, b)
    # Panels kept as (error, a, b, value); worst panel split first.
    panels = [(err, a, b, val)]
    total_val, total_err = val, err
    splits = 0
    while total_err > max(spec.abs_tol, spec.rel_tol * abs(total_val)):
        if splits >= spec.max_subdivisions:
            raise QuadratureError(
                f"quadrature did not converge after {splits} subdivisions "
                f"(estimate {total_val!r}, error bound {total_err!r})",
                estimate=total_val,
                error_bound=total_err,
            )
        idx = max(range(len(panels)), key=lambda i: panels[i][0])
        perr, pa, pb, pval = panels.pop(idx)
        mid = 0.5 * (pa + pb)
        left = _kronrod_panel(evaluate, pa, mid)
        right = _kronrod_panel(evaluate, mid, pb)
        panels.append((left[1], pa, mid, left[0]))
        panels.append((right[1], mid, pb, right[0]))
        total_val += left[0] + right[0] - pval
        total_err += left[1] + right[1] - perr
        splits += 1
    return total_val


def minimize_scalar(
    g: Callable[[float], float],
    bracket: tuple[float, float],
    tol: float = 1e-9,
    *,
    probe_points: int = 9,
) -> float:
    """Minimize a unimodal scalar function on a bracket.

    A coarse probe first checks that some interior point beats both
    endpoints; if not, the minimum sits on the boundary and BracketError
    is raised carrying the better endpoint.  The interior search is a
    bounded golden-section/parabolic (Brent) iteration, so the result
    never leaves the bracket.

    Returns x* with |x* - argmin| <= tol for unimodal g.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")
    if not tol > 0.0:
        raise ValueError("tol must be > 0")

    xs = np.linspace(lo, hi, probe_points + 2)
    ys = np.array([float(g(x)) for x in xs])
    interior_best = ys[1:-1].min()
    edge_best = min(ys[0], ys[-1])
    if interior_best > edge_best:
        best_x = lo if ys[0] <= ys[-1] else hi
        raise BracketError(
            "bracket endpoints do not enclose an interior minimum",
            best_x=best_x,
            best_value=float(edge_best),
        )

    res = optimize.minimize_scalar(
        g, bounds=(lo, hi), method="bounded",
        options={"xatol": tol, "maxiter": 1000},
    )
    return float(min(max(res.x, lo), hi))


@dataclass(frozen=True)
class LinFitResult:
    slope: float
    intercept: float
    slope_err: float
    intercept_err: float
    residual_sum_sq: float


def linfit(
    xs: Sequence[float],
    ys: Sequence[float],
    weights: Sequence[float] | None = None,
) -> LinFitResult:
    """Weighted linear least squares y = slope*x + intercept.

    Explicit ``weights`` are treated as inverse variances, and parameter
    errors come directly from the WLS covariance (X' W X)^-1.  Without
    weights the residual variance is estimated as RSS/(n-2) and folded
    into the ordinary least-squares covariance (0 when n == 2).
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D arrays of equal length")
    n = x.size
    if n < 2:
        raise ValueError("linfit needs at least two points")
    if np.ptp(x) == 0.0:
        raise ValueError("degenerate design: all x values are equal")
    if weights is None:
        w = np.ones_like(x)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != x.shape:
            raise ValueError("weights must match xs in length")
        if np.any(w < 0.0) or not np.any(w > 0.0):
            raise ValueError("weights must be non-negative with a positive sum")

    sw = w.sum()
    sx = (w * x).sum()
    sy = (w * y).sum()
    sxx = (w * x * x).sum()
    sxy = (w * x * y).sum()
    delta = sw * sxx - sx * sx
    if delta <= 0.0:
        raise ValueError("degenerate design matrix")

    slope = (sw * sxy - sx * sy) / delta
    intercept = (sxx * sy - sx * sxy) / delta
    resid = y - slope * x - intercept
    rss = float((w * resid * resid).sum())
    if weights is None:
        variance = rss / (n - 2) if n > 2 else 0.0
    else:
        variance = 1.0
    return LinFitResult(
        slope=float(slope),
        intercept=float(intercept),
        slope_err=math.sqrt(variance * sw / delta),
        intercept_err=math.sqrt(variance * sxx / delta),
        residual_sum_sq=rss,
    )


@dataclass(frozen=True)
class SampleStats:
    mean: float
    std_dev: float
    std_err: float
    n: int


def summary_stats(samples: Sequence[float]) -> SampleStats:
    """Mean, n-1 standard deviation and standard error of the mean.

    A single sample has std_dev = std_err = 0 rather than NaN so that
    downstream aggregation never propagates NaN.  std_dev is built as
    std_err*sqrt(n) so the two are related exactly in floating point.
    """
    vals = [float(v) for v in samples]
    n = len(vals)
    if n == 0:
        raise ValueError("summary_stats requires at least one sample")
    mean = math.fsum(vals) / n
    if n == 1:
        return SampleStats(mean=mean, std_dev=0.0, std_err=0.0, n=1)
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    std_err = math.sqrt(var / n)
    return SampleStats(
        mean=mean,
        std_dev=std_err * math.sqrt(n),
        std_err=std_err,
        n=n,
    )


def warn_if_multimodal(xs: Sequence[float], ys: Sequence[float], label: str) -> None:
    """Emit a warning when a coarse scan of an objective shows several dips."""
    y = np.asarray(ys, dtype=float)
    interior = (y[1:-1] < y[:-2]) & (y[1:-1] <= y[2:])
    if int(interior.sum()) > 1:
        warnings.warn(
            f"{label}: objective scan shows multiple local minima; "
            "result may depend on the bracket",
            stacklevel=3,
        )
