"""Large-time decay laws: predictions and log-log fits.

All sup-norm fits work on ``|u|^{m-1}``, whose decay has the clean form
``t^{-alpha} (log t)^beta`` (possibly with a log log correction in the
critical regimes); fitting the power ``m-1`` of the sup norm avoids
m-dependent exponent conversions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RegimeError

__all__ = [
    "RegimePrediction",
    "FitResult",
    "predict",
    "fit_exponents",
    "fit_support",
    "volume_check",
    "VolumeReport",
    "append_fit_ledger",
]


@dataclass(frozen=True)
class RegimePrediction:
    """Predicted large-time behaviour for one curvature regime.

    ``alpha`` and ``beta`` describe ``sup|u|^{m-1} ~ t^-alpha (log t)^beta``
    (with ``loglog_flag`` the log factor is replaced by log log t);
    ``support_exponent`` is the exponent of the free-boundary law in its
    ``support_law`` variable.
    """

    regime: str
    alpha: float
    beta: float
    loglog_flag: bool
    support_law: str            # 'log_power' | 'sqrt_log' | 'power'
    support_exponent: float
    volume_exponent: float      # d log V(R(t)) / d log t


def predict(regime: str, n: int, m: float, mu: float | None = None,
            Q: float | None = None, nu: float | None = None) -> RegimePrediction:
    """Exponent predictions per regime.

    regimes: ``qh_subcritical`` (mu in (-1,1)), ``qh_critical`` (mu = 1),
    ``qe_subcritical`` (mu < -1), ``qe_critical`` (mu = -1, needs Q),
    ``weighted`` (density ~ |x|^{-2} (log|x|)^{-nu}, nu <= 1).
    The supercritical window mu > 1 is out of range.
    """
    if m <= 1:
        raise RegimeError("m > 1 required")
    if regime == "qh_subcritical":
        if mu is None or not (-1 < mu < 1):
            raise RegimeError("qh_subcritical needs mu in (-1, 1)")
        return RegimePrediction(regime, 1.0, (1 - mu) / (1 + mu), False,
                                "log_power", 1.0 / (1 + mu), 1.0 / (m - 1))
    if regime == "qh_critical":
        return RegimePrediction(regime, 1.0, 0.0, True, "sqrt_log", 0.5,
                                1.0 / (m - 1))
    if regime == "qe_subcritical":
        if mu is not None and mu >= -1:
            raise RegimeError("qe_subcritical needs mu < -1")
        a = n * (m - 1) / (n * (m - 1) + 2.0)
        return RegimePrediction(regime, a, 0.0, False, "power",
                                1.0 / (n * (m - 1) + 2.0),
                                n / (n * (m - 1) + 2.0))
    if regime == "qe_critical":
        if Q is None:
            raise RegimeError("qe_critical needs the curvature coefficient Q")
        q = 0.5 * (1 + math.sqrt(1 + 4 * Q))
        n_q = 1 + q * (n - 1)
        a = n_q * (m - 1) / (2.0 + n_q * (m - 1))
        return RegimePrediction(regime, a, 0.0, False, "power",
                                1.0 / (2.0 + n_q * (m - 1)),
                                n / (n * (m - 1) + 2.0))
    if regime == "weighted":
        if nu is None or nu > 1:
            raise RegimeError("weighted regime needs nu <= 1")
        if nu == 1:
            # free boundary: log|x| ~ e^eta log t
            return RegimePrediction(regime, 1.0, 0.0, True, "log_power", 1.0,
                                    math.nan)
        # free boundary: log|x| ~ gamma^{1/(1-nu)} log t
        return RegimePrediction(regime, 1.0, 1.0 - nu, False, "log_power",
                                1.0, math.nan)
    if regime in ("qh_supercritical",) or (mu is not None and mu > 1):
        raise RegimeError("the supercritical window mu > 1 is not covered")
    raise RegimeError(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class FitResult:
    alpha: float
    beta: float
    loglog: bool
    alpha_stderr: float
    beta_stderr: float
    rss: float
    model: str                   # 'power' | 'log_power' | 'loglog'
    window: tuple


def _lstsq(X, y):
    coef, res, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ coef
    rss = float(np.sum((y - fitted) ** 2))
    dof = max(y.size - X.shape[1], 1)
    sigma2 = rss / dof
    cov = sigma2 * np.linalg.pinv(X.T @ X)
    return coef, rss, np.sqrt(np.maximum(np.diag(cov), 0.0))


def _window(times, frac):
    """Final ``frac`` of the samples in log t."""
    lt = np.log(times)
    lo = lt[-1] - frac * (lt[-1] - lt[0])
    return lt >= lo


def fit_exponents(times, sup_norms, m: float,
                  window_frac: float = 0.6) -> FitResult:
    """Fit ``log(sup^{m-1}) = c - alpha log t [+ beta log log t | + log log log t]``.

    Three nested models are compared on the final ``window_frac`` of the
    samples (in log t): a pure power law, a power law with a free
    ``(log t)^beta`` factor, and a power law with a fixed ``log log t``
    factor.  The extra free regressor beta is kept only when it shrinks
    the residual sum by at least a factor e (an information-criterion
    style penalty; the regimes are distinguished analytically in theory,
    so the statistical rule only needs to be decisive on clean data).
    """
    times = np.asarray(times, dtype=float)
    sup_norms = np.asarray(sup_norms, dtype=float)
    keep = (times > 1.0) & (sup_norms > 0)
    times, sup_norms = times[keep], sup_norms[keep]
    if times.size < 10:
        raise RegimeError("need at least 10 samples with t > 1")
    if times[-1] / times[0] < 100.0:
        raise RegimeError("need samples spanning at least 2 decades of t")
    w = _window(times, window_frac)
    if w.sum() < 6:
        raise RegimeError("fit window too short; increase window_frac")
    t = times[w]
    z = (m - 1.0) * np.log(sup_norms[w])
    lt = np.log(t)
    llt = np.log(lt)

    ones = np.ones_like(lt)
    c0, rss0, se0 = _lstsq(np.column_stack([ones, lt]), z)
    c1, rss1, se1 = _lstsq(np.column_stack([ones, lt, llt]), z)
    z2 = z - np.log(llt)          # fixed unit log log log coefficient
    c2, rss2, se2 = _lstsq(np.column_stack([ones, lt]), z2)

    floor = 1e-22 * t.size
    pick = "power"
    if rss0 > floor and rss1 * math.e < rss0:
        pick = "log_power"
    # the fixed log log model wins when it beats the pure power law and the
    # free-beta model is not decisively (factor e) better than it
    if rss2 * math.e < rss0 and rss1 * math.e >= rss2 and rss0 > floor:
        pick = "loglog"

    window = (float(t[0]), float(t[-1]))
    if pick == "power":
        return FitResult(-float(c0[1]), 0.0, False, float(se0[1]), 0.0,
                         rss0, "power", window)
    if pick == "log_power":
        return FitResult(-float(c1[1]), float(c1[2]), False, float(se1[1]),
                         float(se1[2]), rss1, "log_power", window)
    return FitResult(-float(c2[1]), 0.0, True, float(se2[1]), 0.0, rss2,
                     "loglog", window)


def fit_support(times, radii, law: str,
                window_frac: float = 0.6) -> FitResult:
    """Fit the free-boundary law.

    ``law='log_power'``: log R against log log t (quasi-hyperbolic,
    R ~ (log t)^exponent); ``law='power'``: log R against log t
    (quasi-Euclidean).  Returns the exponent in ``alpha``.
    """
    times = np.asarray(times, dtype=float)
    radii = np.asarray(radii, dtype=float)
    keep = (times > 1.0) & (radii > 0)
    times, radii = times[keep], radii[keep]
    if times.size < 10:
        raise RegimeError("need at least 10 samples with t > 1")
    w = _window(times, window_frac)
    t, R = times[w], radii[w]
    x = np.log(np.log(t)) if law == "log_power" else np.log(t)
    coef, rss, se = _lstsq(np.column_stack([np.ones_like(x), x]), np.log(R))
    return FitResult(float(coef[1]), 0.0, False, float(se[1]), 0.0, rss,
                     law, (float(t[0]), float(t[-1])))


@dataclass(frozen=True)
class VolumeReport:
    fitted_exponent: float
    predicted_exponent: float
    rel_dev: float
    window: tuple


def volume_check(traj, regime: str, n: int | None = None,
                 m: float | None = None,
                 window_frac: float = 0.6) -> VolumeReport:
    """Fit log V(R(t)) against log t and compare with the regime's law.

    Hyperbolic-type regimes propagate volume like ``t^{1/(m-1)}``;
    Euclidean-type like ``t^{n/(n(m-1)+2)}``.
    """
    m = traj.m if m is None else m
    times = np.asarray(traj.times, dtype=float)
    vols = np.asarray(traj.volume, dtype=float)
    keep = (times > 1.0) & (vols > 0) & np.isfinite(vols)
    times, vols = times[keep], vols[keep]
    if times.size < 8:
        raise RegimeError("not enough volume samples")
    w = _window(times, window_frac)
    coef, rss, se = _lstsq(
        np.column_stack([np.ones(int(w.sum())), np.log(times[w])]),
        np.log(vols[w]))
    fitted = float(coef[1])
    if regime in ("qh_subcritical", "qh_critical", "hyperbolic"):
        pred = 1.0 / (m - 1.0)
    elif regime in ("qe_subcritical", "euclidean"):
        if n is None:
            raise RegimeError("euclidean volume law needs n")
        pred = n / (n * (m - 1.0) + 2.0)
    else:
        raise RegimeError(f"no volume law for regime {regime!r}")
    return VolumeReport(fitted, pred, abs(fitted - pred) / abs(pred),
                        (float(times[w][0]), float(times[w][-1])))


def append_fit_ledger(path, regime, pred: RegimePrediction, fit: FitResult):
    """Append one CSV row (regime, alpha_pred, alpha_fit, beta_pred,
    beta_fit, stderr, window) to a results ledger file."""
    import os
    new = not os.path.exists(path)
    with open(path, "a") as fh:
        if new:
            fh.write("regime,alpha_pred,alpha_fit,beta_pred,beta_fit,"
                     "stderr,window_lo,window_hi\n")
        fh.write(f"{regime},{pred.alpha:.17g},{fit.alpha:.17g},"
                 f"{pred.beta:.17g},{fit.beta:.17g},{fit.alpha_stderr:.17g},"
                 f"{fit.window[0]:.17g},{fit.window[1]:.17g}\n")
