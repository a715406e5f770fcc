"""Revolution peak-train model, nonlinear least-squares fitting, distribution
statistics, adiabatic-compression scaling, and interferometer figures of merit.

The probe signal of a decaying, freely expanding orbiting cloud is modeled as

    S(t) = exp(-t/tau) * sum_n  N0/(sqrt(2 pi) s_n) * exp(-(t - n T)^2 / (2 s_n^2))
         + N0 * beta * (1 - exp(-t/tau_fill)) * exp(-t/tau)

with s_n^2 = (sigma0^2 + sigma_v^2 (n T)^2) / v_bar^2 + probe_width^2: one
area-preserving Gaussian per completed revolution under a global exponential
decay, plus an optional saturating diffuse-background floor. The fit is a
bounded trust-region least-squares (monotone non-increasing cost across
accepted steps) with the analytic Jacobian below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .errors import InitializationError, InvalidInputError

FIT_PARAM_NAMES = ("amplitude", "period", "sigma0", "sigma_v", "tau", "beta", "tau_fill")


@dataclass(frozen=True)
class PeakTrainParams:
    """Parameters of the decay-plus-expansion peak-train model."""

    amplitude: float            # N0, atoms per peak area unit
    period: float               # orbit period T, s
    sigma0: float               # initial azimuthal spatial spread, m
    sigma_v: float              # azimuthal velocity spread, m/s
    v_bar: float                # mean orbital speed, m/s
    tau: float                  # ring 1/e lifetime, s (may be inf)
    beta: float = 0.0           # diffuse-background amplitude fraction
    tau_fill: float = 0.05      # background fill time, s
    probe_width: float = 0.0    # probe-pulse convolution width, s

    def __post_init__(self):
        if not (self.period > 0 and self.v_bar > 0 and self.tau > 0 and self.tau_fill > 0):
            raise InvalidInputError("period, v_bar, tau, tau_fill must be positive")
        if self.sigma0 < 0 or self.sigma_v < 0 or self.beta < 0 or self.probe_width < 0:
            raise InvalidInputError("sigma0, sigma_v, beta, probe_width must be >= 0")
        for name in ("amplitude", "period", "sigma0", "sigma_v", "v_bar", "beta",
                     "tau_fill", "probe_width"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"non-finite parameter {name}")

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FIT_PARAM_NAMES])

    def with_vector(self, x) -> "PeakTrainParams":
        return replace(self, **dict(zip(FIT_PARAM_NAMES, (float(v) for v in x))))


def _sigma_n(p: PeakTrainParams, n: np.ndarray) -> np.ndarray:
    return np.sqrt((p.sigma0 ** 2 + p.sigma_v ** 2 * (n * p.period) ** 2) / p.v_bar ** 2
                   + p.probe_width ** 2)


def _n_range(p: PeakTrainParams, t_max: float) -> np.ndarray:
    # include every peak whose tail can still contribute > ~1e-12 relative
    n_max = max(1, math.ceil(t_max / p.period) + 1)
    for _ in range(2):
        s = float(_sigma_n(p, np.array([n_max]))[0])
        n_max = max(1, math.ceil((t_max + 12.0 * s) / p.period))
        if n_max > 10_000:
            n_max = 10_000
            break
    return np.arange(1, n_max + 1)


def peak_train_model(p: PeakTrainParams, t) -> np.ndarray:
    """Evaluate the model signal at times t (s)."""
    t = np.atleast_1d(np.asarray(t, float))
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("non-finite sample times")
    ns = _n_range(p, float(t.max(initial=0.0)))
    sig = _sigma_n(p, ns)
    mus = ns * p.period
    gauss = np.exp(-(t[None, :] - mus[:, None]) ** 2 / (2.0 * sig[:, None] ** 2))
    amps = p.amplitude / (math.sqrt(2.0 * math.pi) * sig)
    peaks = amps @ gauss
    decay = np.exp(-t / p.tau) if math.isfinite(p.tau) else np.ones_like(t)
    bg = p.amplitude * p.beta * (1.0 - np.exp(-t / p.tau_fill))
    return decay * (peaks + bg)


def peak_train_jacobian(p: PeakTrainParams, t) -> np.ndarray:
    """Analytic d S / d (amplitude, period, sigma0, sigma_v, tau, beta, tau_fill)."""
    t = np.atleast_1d(np.asarray(t, float))
    ns = _n_range(p, float(t.max(initial=0.0)))
    sig = _sigma_n(p, ns)
    s2 = sig ** 2
    mus = ns * p.period
    dtm = t[None, :] - mus[:, None]
    gauss = np.exp(-dtm ** 2 / (2.0 * s2[:, None]))
    amps = p.amplitude / (math.sqrt(2.0 * math.pi) * sig)
    ag = amps[:, None] * gauss                      # (M, T)
    decay = np.exp(-t / p.tau) if math.isfinite(p.tau) else np.ones_like(t)
    peaks = ag.sum(axis=0)
    bg_fill = 1.0 - np.exp(-t / p.tau_fill)
    bg = p.amplitude * p.beta * bg_fill

    # common factor for variance sensitivities
    dlog_ds2 = (-0.5 / s2[:, None] + dtm ** 2 / (2.0 * s2[:, None] ** 2))
    v2 = p.v_bar ** 2

    dT = (ag * (dtm * ns[:, None] / s2[:, None]
                + dlog_ds2 * (2.0 * p.sigma_v ** 2 * ns[:, None] ** 2 * p.period / v2))
          ).sum(axis=0)
    ds0 = (ag * dlog_ds2).sum(axis=0) * (2.0 * p.sigma0 / v2)
    dsv = (ag * dlog_ds2 * (2.0 * p.sigma_v * (ns[:, None] * p.period) ** 2 / v2)).sum(axis=0)

    jac = np.empty((len(t), len(FIT_PARAM_NAMES)))
    jac[:, 0] = decay * (peaks / p.amplitude + p.beta * bg_fill)
    jac[:, 1] = decay * dT
    jac[:, 2] = decay * ds0
    jac[:, 3] = decay * dsv
    if math.isfinite(p.tau):
        jac[:, 4] = decay * (peaks + bg) * (t / p.tau ** 2)
    else:
        jac[:, 4] = 0.0
    jac[:, 5] = decay * p.amplitude * bg_fill
    jac[:, 6] = -decay * p.amplitude * p.beta * np.exp(-t / p.tau_fill) * t / p.tau_fill ** 2
    return jac


@dataclass
class FitResult:
    params: PeakTrainParams
    covariance: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    param_names: tuple[str, ...] = FIT_PARAM_NAMES

    def uncertainty(self, name: str) -> float:
        i = self.param_names.index(name)
        return float(math.sqrt(max(self.covariance[i, i], 0.0)))

    def to_dict(self) -> dict:
        return {
            "params": {n: getattr(self.params, n) for n in
                       (*self.param_names, "v_bar", "probe_width")},
            "uncertainties": {n: self.uncertainty(n) for n in self.param_names},
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _detect_peaks(t: np.ndarray, y: np.ndarray):
    if len(y) >= 7:
        kernel = np.ones(3) / 3.0
        ys = np.convolve(y, kernel, mode="same")
    else:
        ys = y
    top = float(ys.max(initial=0.0))
    if top <= 0:
        return np.array([], dtype=int), ys
    idx, _ = find_peaks(ys, height=0.15 * top, prominence=0.1 * top)
    return idx, ys


def _moment_width(t, y, center, half_window, floor):
    m = (t > center - half_window) & (t < center + half_window)
    if m.sum() < 3:
        return np.nan
    w = np.clip(y[m] - floor, 0.0, None)
    if w.sum() <= 0:
        return np.nan
    mu = np.sum(t[m] * w) / np.sum(w)
    var = np.sum((t[m] - mu) ** 2 * w) / np.sum(w)
    return math.sqrt(max(var, 0.0))


def initial_peak_train_guess(t, y, v_bar: float, probe_width: float = 0.0) -> PeakTrainParams:
    """Heuristic initialization: period from the autocorrelation peak, lifetime
    from the log-envelope slope, spreads from the width-growth regression."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    idx, ys = _detect_peaks(t, y)
    if len(idx) < 3:
        raise InitializationError("fewer than 3 discernible peaks in the trace")
    t_pk = t[idx]
    h_pk = ys[idx]
    spacing = float(np.median(np.diff(t_pk)))

    # autocorrelation refinement of the period around the raw peak spacing
    yc = y - y.mean()
    ac = np.correlate(yc, yc, mode="full")[len(y) - 1:]
    dt_s = float(np.median(np.diff(t)))
    lo = max(1, int(0.6 * spacing / dt_s))
    hi = min(len(ac) - 1, int(1.4 * spacing / dt_s))
    period = (lo + int(np.argmax(ac[lo:hi + 1]))) * dt_s if hi > lo else spacing

    # lifetime from the peak-height envelope
    pos = h_pk > 0
    if pos.sum() >= 2:
        slope = np.polyfit(t_pk[pos], np.log(h_pk[pos]), 1)[0]
        tau = -1.0 / slope if slope < -1e-12 else 10.0 * t.max()
    else:
        tau = 10.0 * t.max()

    # width growth -> sigma_v, sigma0
    floor = float(np.percentile(y, 10))
    widths = np.array([_moment_width(t, y, tc, 0.35 * period, floor) for tc in t_pk])
    ok = np.isfinite(widths)
    n_idx = np.round(t_pk / period)
    sigma_v, sigma0 = 0.01 * v_bar, 0.0
    if ok.sum() >= 2:
        w2 = widths[ok] ** 2 - probe_width ** 2
        x2 = (n_idx[ok] * period) ** 2
        coef = np.polyfit(x2, w2, 1)
        if coef[0] > 0:
            sigma_v = v_bar * math.sqrt(coef[0])
        sigma0 = v_bar * math.sqrt(max(coef[1], 0.0))

    k_top = int(np.argmax(h_pk))
    s_top = math.sqrt((sigma0 ** 2 + sigma_v ** 2 * t_pk[k_top] ** 2) / v_bar ** 2
                      + probe_width ** 2)
    amplitude = h_pk[k_top] * math.sqrt(2.0 * math.pi) * s_top * math.exp(t_pk[k_top] / tau)
    return PeakTrainParams(amplitude=float(max(amplitude, 1e-12)), period=float(period),
                           sigma0=float(sigma0), sigma_v=float(sigma_v), v_bar=v_bar,
                           tau=float(min(max(tau, 0.01 * t.max()), 100.0 * t.max())),
                           beta=0.0, tau_fill=float(max(t.max() / 3.0, 1e-3)),
                           probe_width=probe_width)


def fit_peak_train(trace, init: PeakTrainParams | None = None,
                   v_bar: float | None = None, probe_width: float | None = None,
                   weights=None, max_nfev: int = 400) -> FitResult:
    """Least-squares fit of the peak-train model to a probe trace.

    ``trace`` is a ProbeTrace or a (times, signal) pair. v_bar and probe_width
    are held fixed (v_bar from geometry/measurement, the pulse width from the
    probe configuration); the seven parameters in FIT_PARAM_NAMES are free,
    bounded to their physical domains. Weights default to uniform.
    """
    if hasattr(trace, "delays"):
        t = np.asarray(trace.delays, float)
        y = np.asarray(trace.signal, float)
    else:
        t, y = (np.asarray(a, float) for a in trace)
    if len(t) != len(y) or len(t) < 10:
        raise InvalidInputError("trace must provide matching times/signals (>= 10 points)")

    if init is None:
        if v_bar is None:
            raise InvalidInputError("v_bar is required when no init is given")
        init = initial_peak_train_guess(t, y, v_bar, probe_width or 0.0)
    else:
        if v_bar is not None:
            init = replace(init, v_bar=v_bar)
        if probe_width is not None:
            init = replace(init, probe_width=probe_width)

    w = np.ones_like(y) if weights is None else np.asarray(weights, float)
    if np.any(w <= 0):
        raise InvalidInputError("weights must be positive")

    x0 = init.vector()
    tiny = 1e-12
    span = float(t.max())
    lower = np.array([tiny, tiny, 0.0, 0.0, 1e-4 * max(span, 1.0), 0.0, 1e-4])
    # tau_fill/beta are capped to keep the saturating background identifiable
    # (unbounded, a linearly growing floor is the degenerate limit of both)
    upper = np.array([np.inf, np.inf, np.inf, np.inf, np.inf, 100.0, 5.0 * span])
    x0 = np.clip(x0, lower, upper)

    def residuals(x):
        return w * (peak_train_model(init.with_vector(x), t) - y)

    def jac(x):
        return w[:, None] * peak_train_jacobian(init.with_vector(x), t)

    scale = np.maximum(np.abs(x0), np.array([1.0, 1e-3, 1e-5, 1e-4, 1e-2, 1e-2, 1e-2]))
    res = least_squares(residuals, x0, jac=jac, bounds=(lower, upper),
                        method="trf", x_scale=scale, max_nfev=max_nfev)
    params = init.with_vector(res.x)
    dof = max(len(t) - len(res.x), 1)
    sigma2 = 2.0 * res.cost / dof
    jtj = res.jac.T @ res.jac
    cov = sigma2 * np.linalg.pinv(jtj)
    cov = 0.5 * (cov + cov.T)
    return FitResult(params=params, covariance=cov,
                     residual_norm=float(np.linalg.norm(res.fun)),
                     iterations=int(res.nfev), converged=bool(res.status > 0))


# ---------------------------------------------------------------------------
# distribution statistics, compression, interferometer metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistributionStats:
    sigma_v: float
    temperature: float
    fwhm: float
    speed_ratio: float
    estimator: str


def distribution_stats(samples, v_bar: float, estimator: str = "quantile",
                       constants: PhysicalConstants = DEFAULT_CONSTANTS) -> DistributionStats:
    """Spread, temperature T = m sigma^2 / kB, FWHM, and speed ratio v_bar/sigma.

    estimator "quantile": half the central 68.27% interquantile range (robust,
    exact for Gaussians); "rms": sample standard deviation. The speed ratio is
    +inf for identical samples.
    """
    s = np.asarray(samples, float)
    if s.size < 2:
        raise InvalidInputError("need at least 2 samples")
    if estimator == "quantile":
        q_hi, q_lo = np.quantile(s, [0.8413447460685429, 0.15865525393145707])
        sigma = 0.5 * float(q_hi - q_lo)
    elif estimator == "rms":
        sigma = float(np.std(s, ddof=1))
    else:
        raise InvalidInputError(f"unknown estimator {estimator!r}")
    temperature = constants.mass * sigma ** 2 / constants.kB
    fwhm = 2.3548 * sigma
    ratio = v_bar / sigma if sigma > 0 else math.inf
    return DistributionStats(sigma_v=sigma, temperature=temperature, fwhm=fwhm,
                             speed_ratio=ratio, estimator=estimator)


def compression_temperature(t_in: float, grad_in: float, grad_out: float,
                            exponent: float = 2.0 / 3.0) -> float:
    """Transverse temperature after slow gradient change: T*(g_out/g_in)^exponent.

    The default 2/3 exponent is the linear-trap adiabatic scaling calibrated
    against slow-ramp trajectory simulation; it is configurable because the
    scaling law depends on the trap shape.
    """
    if grad_in <= 0 or grad_out <= 0:
        raise InvalidInputError("gradients must be positive")
    if t_in < 0:
        raise InvalidInputError("temperature must be non-negative")
    return t_in * (grad_out / grad_in) ** exponent


def interferometer_metrics(n_rev: float, radius: float,
                           convention: str = "sagnac-pair") -> dict:
    """Enclosed area and guided path length after n_rev revolutions.

    "single-path" counts the geometric loop area once per revolution;
    "sagnac-pair" doubles it, counting both counter-propagating interferometer
    arms. Path length is n_rev * 2 pi R either way.
    """
    if n_rev < 0:
        raise InvalidInputError("revolution count must be >= 0")
    if convention not in ("single-path", "sagnac-pair"):
        raise InvalidInputError(f"unknown convention {convention!r}")
    path = n_rev * 2.0 * math.pi * radius
    area = n_rev * math.pi * radius ** 2
    if convention == "sagnac-pair":
        area *= 2.0
    return {"guided_path": path, "enclosed_area": area, "convention": convention}


def peak_width_growth(t, y, period: float, n_peaks: int | None = None) -> dict:
    """Regression of measured peak width^2 against (n*period)^2.

    Returns slope, intercept, and R^2; the slope estimates (sigma_v/v_bar)^2
    under the free-expansion law.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    n_max = int(t.max() / period) if n_peaks is None else n_peaks
    floor = float(np.percentile(y, 10))
    xs, ws = [], []
    for n in range(1, n_max + 1):
        wid = _moment_width(t, y, n * period, 0.35 * period, floor)
        if math.isfinite(wid):
            xs.append((n * period) ** 2)
            ws.append(wid ** 2)
    if len(xs) < 3:
        raise InvalidInputError("not enough measurable peaks for width regression")
    x = np.asarray(xs)
    w2 = np.asarray(ws)
    coef = np.polyfit(x, w2, 1)
    pred = np.polyval(coef, x)
    ss_res = float(np.sum((w2 - pred) ** 2))
    ss_tot = float(np.sum((w2 - w2.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(coef[0]), "intercept": float(coef[1]), "r_squared": r2,
            "n_points": len(xs)}
