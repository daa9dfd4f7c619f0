"""Radial change of variables between manifold and weighted-Euclidean PME.

For a profile ``psi`` in dimension ``n >= 3`` the map

    1 / ((n-2) s^{n-2}) = int_r^inf psi(t)^{1-n} dt

turns radial solutions of  u_t = (u^m)'' + (n-1)(psi'/psi)(u^m)'  into
radial solutions of  rho(s) u_t = Laplacian_s(u^m)  with density

    rho(s) = psi(r(s))^{2(n-1)} / s^{2(n-1)},

and back via  r = int_0^s rho^{1/2}.  Dimension 2 inputs use either the
dimension lift (``s`` lives in a fictitious dimension ``n1 > 2``) or the
logarithmic map ``log s = A + int_1^r dt/psi``.

Sub- and supersolutions are preserved in both directions, so barriers can
be transplanted between the two pictures.

The numerical core integrates the defining tail integral as an ODE with
dense output; the tail beyond the sampled range is closed analytically
from the profile's asymptotic class with a first-order correction

    int_r^inf psi^{-k} dt  ~=  psi(r)^{-k} / (k g(r) + g'(r)/g(r)),

which is exact for pure power profiles and for the Euclidean case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import PchipInterpolator

from .errors import NumericalError, RegimeError
from .geometry import AsymptoticClass, ModelFunction

__all__ = [
    "WeightClass",
    "WeightProfile",
    "ChangeOfVariables",
    "forward_map",
    "inverse_map",
    "dim_lift_2d",
    "log_map_2d",
    "verify_table1",
    "Table1Report",
    "TransplantedBarrier",
    "export_weight_table",
]

_LOG_PSI_CAP = 680.0  # keep psi^{1-n} representable in a float


@dataclass(frozen=True)
class WeightClass:
    """Large-s behaviour of a weight rho(s).

    kind:
      * ``inv_square_log``: rho ~ c / (s^2 (log s)^nu)
      * ``power``:          rho ~ c * s^{-p}
      * ``log_power``:      rho ~ c * (log s)^{-p}
      * ``constant``:       rho -> c
    """

    kind: str
    c: float
    nu: float = 0.0   # log exponent (inv_square_log)
    p: float = 0.0    # power exponent (power / log_power)

    @property
    def super_euclidean(self) -> bool:
        """True when s rho'/rho -> -2 is expected."""
        return self.kind == "inv_square_log"

    def sqrt_integral_diverges(self) -> bool:
        """Whether int_0^inf rho^{1/2} = +inf (inverse map defined on all of R+)."""
        if self.kind == "inv_square_log":
            return self.nu <= 2.0
        if self.kind == "power":
            return self.p < 2.0
        return True  # constant and log_power decay slower than s^{-2}


def _weight_class_from_psi(asym: AsymptoticClass, n: int) -> WeightClass | None:
    """Predicted weight class for the standard (n >= 3) forward map."""
    if asym is None:
        return None
    if asym.kind == "exp_power":
        mu = asym.power - 1.0
        coef_f = asym.coef * asym.power  # f' ~ coef_f r^mu
        kappa = coef_f ** (1.0 / (1 + mu)) * (1 + mu) ** (mu / (1 + mu))
        c = ((n - 2) / (n - 1)) ** (2.0 / (1 + mu)) / kappa ** 2
        return WeightClass("inv_square_log", c=c, nu=2 * mu / (1 + mu))
    if asym.kind == "double_exp":
        return WeightClass("inv_square_log", c=1.0 / asym.coef ** 2, nu=2.0)
    if asym.kind == "power":
        a, q = asym.amp, asym.power
        p_q = 2.0 * (n - 1) * (q - 1) / ((n - 1) * q - 1)
        cg = (a ** (-(n - 1.0) / ((n - 1) * q - 1))
              * ((n - 2.0) / ((n - 1) * q - 1)) ** (1.0 / ((n - 1) * q - 1)))
        c1 = a ** (2 * (n - 1)) * cg ** (2 * (n - 1) * q)
        return WeightClass("power", c=c1, p=p_q)
    if asym.kind == "linear":
        return WeightClass("constant", c=asym.amp ** (-2.0 * (n - 1) / (n - 2)))
    if asym.kind == "log_linear":
        return WeightClass("log_power",
                           c=asym.amp ** (-2.0 * (n - 1) / (n - 2)),
                           p=2.0 * asym.power * (n - 1) / (n - 2))
    return None


@dataclass
class WeightProfile:
    """A sampled density rho(s) with derivative and asymptotic tag."""

    n: float
    sampler: object               # s -> (rho, drho)
    s_range: tuple
    asymptotic_class: WeightClass | None = None
    vanishes_at_zero: bool = False   # dimension-lift weights vanish as s -> 0+

    def rho(self, s):
        return self.sampler(s)[0]

    def drho(self, s):
        return self.sampler(s)[1]

    def srho_ratio(self, s):
        """s rho'(s) / rho(s)."""
        r, dr = self.sampler(s)
        return np.asarray(s) * dr / r


@dataclass
class ChangeOfVariables:
    """Monotone map r <-> s with the associated weight and profile."""

    mode: str                     # 'standard_n_ge_3' | 'dim_lift_2d' | 'log_map_2d'
    n: float                      # dimension on the weighted side
    forward: object               # r -> s
    inverse: object               # s -> r
    weight: WeightProfile
    psi: ModelFunction
    r_range: tuple
    lift_dimension: float | None = None
    log_constant: float | None = None

    def ds_dr(self, r):
        """ds/dr = (s/psi)^{n-1} (or s^{n1-1}/psi in lift mode)."""
        s = self.forward(r)
        if self.mode == "dim_lift_2d":
            return np.exp((self.n - 1) * np.log(s) - self.psi.log_psi(r))
        if self.mode == "log_map_2d":
            return s / self.psi.psi(r)
        return np.exp((self.n - 1) * (np.log(s) - self.psi.log_psi(r)))


def _cap_radius(psi: ModelFunction, k: float, r_max: float) -> float:
    """Largest radius where psi^{-k} still fits in a float."""
    if k * float(psi.log_psi(r_max)) <= _LOG_PSI_CAP:
        return r_max
    lo, hi = 1.0, r_max
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if k * float(psi.log_psi(mid)) <= _LOG_PSI_CAP:
            lo = mid
        else:
            hi = mid
    return lo


def _tail_integral(psi: ModelFunction, k: float, r: float) -> float:
    """First-order closure of int_r^inf psi^{-k} dt."""
    g = float(psi.g(r))
    p, dp, ddp = psi.sample(r)
    gp = float(ddp) / float(p) - g * g if math.isfinite(float(p)) else 0.0
    denom = k * g + gp / g
    if denom <= 0:
        raise RegimeError("tail integral of psi^{-k} does not converge")
    return math.exp(-k * float(psi.log_psi(r))) / denom


def _decay_power(psi: ModelFunction, k: float, r: float) -> float:
    """Effective decay power of psi^{-k} at radius r (p_eff > 1 converges)."""
    return k * float(psi.g(r)) * r


def _monotone_inverse(xs, ys, deriv):
    """Inverse of monotone y(x) via log-log interpolation + Newton polish.

    ``deriv(x)`` must return dy/dx.  Both xs and ys must be positive and
    strictly increasing.
    """
    interp = PchipInterpolator(np.log(ys), np.log(xs), extrapolate=True)
    x_lo, x_hi = xs[0], xs[-1]

    def inv(y, y_of_x):
        scalar = np.ndim(y) == 0
        y1 = np.atleast_1d(np.asarray(y, dtype=float))
        x = np.exp(interp(np.log(y1)))
        x = np.clip(x, x_lo, x_hi)
        for _ in range(3):
            f = y_of_x(x) - y1
            d = deriv(x)
            step = f / d
            # keep Newton inside the sampled window
            x = np.clip(x - step, x_lo, x_hi)
        return x[0] if scalar else x

    return inv


def _build_map(psi: ModelFunction, k: float, dim_s: float, rho_pow: float,
               r_lo: float, rtol: float):
    """Shared machinery: s from int_r^inf psi^{-k}, rho = psi^rho_pow / s^..."""
    r_cap = _cap_radius(psi, k, psi.r_max)
    if _decay_power(psi, k, r_cap) <= 1.05:
        raise RegimeError(
            "int psi^{-k} tail diverges (effective decay power <= 1); "
            "use dim_lift_2d or log_map_2d")
    T = _tail_integral(psi, k, r_cap)

    def rhs(r, y):
        return (-math.exp(-k * float(psi.log_psi(r))),)

    sol = solve_ivp(rhs, (r_cap, r_lo), (T,), method="RK45", rtol=rtol,
                    atol=T * 1e-14 + 1e-280, dense_output=True)
    if sol.status != 0:
        raise NumericalError(f"tail-integral ODE failed: {sol.message}")
    dense_I = sol.sol

    nm2 = dim_s - 2.0

    def log_s(r):
        r = np.asarray(r, dtype=float)
        I = np.maximum(dense_I(np.clip(r, r_lo, r_cap))[0], 1e-300)
        return -(np.log(nm2) + np.log(I)) / nm2

    def forward(r):
        scalar = np.ndim(r) == 0
        out = np.exp(log_s(np.atleast_1d(r)))
        return out[0] if scalar else out

    def ds_dr(r):
        r = np.asarray(r, dtype=float)
        return np.exp((dim_s - 1) * log_s(r) - k * psi.log_psi(r))

    rs = np.geomspace(r_lo * 1.0000001, r_cap, 1200)
    ss = forward(rs)
    inv = _monotone_inverse(rs, ss, ds_dr)

    def inverse(s):
        return inv(s, forward)

    def sampler(s):
        s = np.asarray(s, dtype=float)
        r = inverse(s)
        logs = np.log(s)
        rho = np.exp(rho_pow * psi.log_psi(r) - 2 * (dim_s - 1) * logs)
        # s rho'/rho = rho_pow * g(r) * dr/ds * s - 2 (dim_s - 1), exact chain rule
        ratio = rho_pow * psi.g(r) * s * np.exp(k * psi.log_psi(r)
                                                - (dim_s - 1) * logs) \
            - 2 * (dim_s - 1)
        return rho, ratio * rho / s

    s_lo, s_hi = float(forward(r_lo)), float(forward(r_cap))
    return forward, inverse, sampler, (r_lo, r_cap), (s_lo, s_hi)


def forward_map(psi: ModelFunction, n: int | None = None, r_lo: float = 1e-6,
                rtol: float = 1e-12) -> ChangeOfVariables:
    """Map a profile (dimension n >= 3) to its weighted-Euclidean density.

    Returns a ChangeOfVariables whose ``weight`` samples
    rho(s) = psi(r(s))^{2(n-1)} / s^{2(n-1)} with the exact chain-rule
    derivative.  Raises RegimeError when the defining tail integral of
    psi^{1-n} diverges (the caller should then use the 2-d machinery).
    """
    n = psi.n if n is None else n
    if n < 3:
        raise RegimeError("forward_map needs n >= 3; use dim_lift_2d or "
                          "log_map_2d in dimension 2")
    fw, inv, sampler, r_range, s_range = _build_map(
        psi, k=n - 1.0, dim_s=float(n), rho_pow=2.0 * (n - 1), r_lo=r_lo,
        rtol=rtol)
    wc = _weight_class_from_psi(psi.asympt, n)
    wp = WeightProfile(n=float(n), sampler=sampler, s_range=s_range,
                       asymptotic_class=wc)
    return ChangeOfVariables("standard_n_ge_3", float(n), fw, inv, wp, psi,
                             r_range)


def dim_lift_2d(psi: ModelFunction, n1: float, r_lo: float = 1e-6,
                rtol: float = 1e-12) -> ChangeOfVariables:
    """Lift a 2-d profile to a weighted problem in dimension n1 > 2.

    Uses 1/((n1-2) s^{n1-2}) = int_r^inf dt/psi(t) and
    rho(s) = psi(r(s))^2 / s^{2(n1-1)}.  The density vanishes as s -> 0+,
    so the local class-B normalisation does not apply (flagged on the
    returned weight).
    """
    if psi.n != 2:
        raise RegimeError("dim_lift_2d expects a 2-dimensional profile")
    if not n1 > 2:
        raise RegimeError("lift dimension n1 must exceed 2; n1 = 2 would "
                          "make the density singular at finite s")
    fw, inv, sampler, r_range, s_range = _build_map(
        psi, k=1.0, dim_s=float(n1), rho_pow=2.0, r_lo=r_lo, rtol=rtol)
    wc = None
    if psi.asympt is not None and psi.asympt.kind == "power":
        a, q = psi.asympt.amp, psi.asympt.power
        ct = a ** 2 * ((n1 - 2.0) / (a * (q - 1))) ** (2.0 * q / (q - 1))
        wc = WeightClass("power", c=ct, p=-2.0 * (n1 - q - 1) / (q - 1))
    elif psi.asympt is not None and psi.asympt.kind == "linear":
        raise RegimeError("int dt/psi diverges for linear growth; "
                          "use log_map_2d")
    wp = WeightProfile(n=float(n1), sampler=sampler, s_range=s_range,
                       asymptotic_class=wc, vanishes_at_zero=True)
    return ChangeOfVariables("dim_lift_2d", float(n1), fw, inv, wp, psi,
                             r_range, lift_dimension=float(n1))


def log_map_2d(psi: ModelFunction, r_lo: float = 1e-6,
               rtol: float = 1e-12) -> ChangeOfVariables:
    """Two-dimensional logarithmic map log s = A + int_1^r dt/psi.

    The constant A is chosen as -int_0^1 (1/psi - 1/t) dt so that
    s(r)/r -> 1 as r -> 0+, which keeps rho(s) = psi^2/s^2 -> 1 near the
    origin.  Intended for profiles whose 1/psi tail is *not* integrable
    (almost-linear growth).
    """
    if psi.n != 2:
        raise RegimeError("log_map_2d expects a 2-dimensional profile")
    if _decay_power(psi, 1.0, psi.r_max) > 1.3:
        raise RegimeError("int dt/psi converges for this profile; "
                          "use dim_lift_2d instead")
    A = -quad(lambda t: 1.0 / float(psi.psi(t)) - 1.0 / t, 0.0, 1.0,
              limit=200)[0]

    def rhs(r, y):
        return (1.0 / float(psi.psi(r)),)

    sol = solve_ivp(rhs, (r_lo, psi.r_max), (0.0,), method="RK45", rtol=rtol,
                    atol=1e-14, dense_output=True)
    if sol.status != 0:
        raise NumericalError(f"log-map quadrature failed: {sol.message}")
    K = sol.sol
    K1 = float(K(1.0)[0]) if psi.r_max >= 1.0 else 0.0

    def log_s(r):
        r = np.asarray(r, dtype=float)
        return A + K(np.clip(r, r_lo, psi.r_max))[0] - K1

    def forward(r):
        scalar = np.ndim(r) == 0
        out = np.exp(log_s(np.atleast_1d(r)))
        return out[0] if scalar else out

    def ds_dr(r):
        return forward(r) / psi.psi(r)

    rs = np.geomspace(r_lo * 1.0000001, psi.r_max, 1200)
    inv = _monotone_inverse(rs, forward(rs), ds_dr)

    def inverse(s):
        return inv(s, forward)

    def sampler(s):
        s = np.asarray(s, dtype=float)
        r = inverse(s)
        rho = np.exp(2.0 * (psi.log_psi(r) - np.log(s)))
        # dr/ds = psi/s here, so s rho'/rho = 2 (g psi - 1)
        ratio = 2.0 * (psi.g(r) * psi.psi(r) - 1.0)
        return rho, ratio * rho / s

    s_range = (float(forward(r_lo)), float(forward(psi.r_max)))
    wc = None
    if psi.asympt is not None and psi.asympt.kind == "linear":
        a = psi.asympt.amp
        if abs(a - 1.0) < 1e-12:
            tail = quad(lambda t: 1.0 / float(psi.psi(t)) - 1.0 / t,
                        1.0, psi.r_max, limit=200)[0]
            c = math.exp(A + tail)
            wc = WeightClass("constant", c=1.0 / c ** 2)
        else:
            wc = WeightClass("power", c=math.nan, p=-2.0 * (a - 1.0))
    wp = WeightProfile(n=2.0, sampler=sampler, s_range=s_range,
                       asymptotic_class=wc)
    return ChangeOfVariables("log_map_2d", 2.0, forward, inverse, wp, psi,
                             (r_lo, psi.r_max), log_constant=A)


def inverse_map(wp: WeightProfile, n: int | None = None,
                rtol: float = 1e-12) -> ChangeOfVariables:
    """Recover the profile from a density: r = int_0^s rho^{1/2}.

    Requires int_0^inf rho^{1/2} = +inf (checked through the weight's
    asymptotic class), otherwise the recovered manifold would not cover
    all radii.  The returned ChangeOfVariables carries the reconstructed
    profile as ``.psi``; its second derivative is obtained by centred
    differencing of psi' (the weight sampler only provides rho and rho').
    """
    n = int(wp.n) if n is None else n
    if n < 3:
        raise RegimeError("inverse_map needs n >= 3")
    if wp.vanishes_at_zero:
        raise RegimeError("densities from the dimension lift are not in "
                          "class B; invert the lift directly instead")
    if wp.asymptotic_class is not None and \
            not wp.asymptotic_class.sqrt_integral_diverges():
        raise RegimeError("int rho^{1/2} converges; the inverse profile "
                          "is not defined on all of R+")

    s_lo, s_hi = wp.s_range
    x_lo, x_hi = math.log(s_lo), math.log(s_hi)

    def rhs(x, y):
        s = math.exp(x)
        return (s * math.sqrt(float(wp.rho(s))),)

    # rho -> 1 near s = 0 for class-B weights, so r(s_lo) ~= s_lo
    sol = solve_ivp(rhs, (x_lo, x_hi), (s_lo,), method="RK45", rtol=rtol,
                    atol=1e-14, dense_output=True)
    if sol.status != 0:
        raise NumericalError(f"inverse-map quadrature failed: {sol.message}")
    dense_r = sol.sol

    def r_of_s(s):
        s = np.asarray(s, dtype=float)
        return dense_r(np.clip(np.log(s), x_lo, x_hi))[0]

    def dr_ds(s):
        s = np.asarray(s, dtype=float)
        return np.sqrt(wp.rho(s))

    ss = np.geomspace(s_lo * 1.0000001, s_hi, 1200)
    inv = _monotone_inverse(ss, r_of_s(ss), lambda s: dr_ds(s))

    def s_of_r(r):
        return inv(r, r_of_s)

    r_range = (float(r_of_s(s_lo)), float(r_of_s(s_hi)))
    e = 2.0 * (n - 1)

    def psi_fn(r):
        r = np.asarray(r, dtype=float)
        s = s_of_r(np.maximum(r, r_range[0]))
        rho = wp.rho(s)
        out = s * rho ** (1.0 / e)
        return np.where(r < r_range[0], r, out)

    def dpsi_fn(r):
        r = np.asarray(r, dtype=float)
        s = s_of_r(np.maximum(r, r_range[0]))
        rho, drho = wp.sampler(s)
        dpsi_ds = rho ** (1.0 / e) * (1.0 + s * drho / (e * rho))
        return np.where(r < r_range[0], 1.0, dpsi_ds / np.sqrt(rho))

    def ddpsi_fn(r):
        r = np.asarray(r, dtype=float)
        h = 1e-6 * np.maximum(r, 1.0)
        h = np.minimum(h, 0.25 * (r_range[1] - r))
        return (dpsi_fn(r + h) - dpsi_fn(np.maximum(r - h, r_range[0]))) / \
            (h + np.minimum(h, r - r_range[0]))

    def log_psi_fn(r):
        return np.log(psi_fn(r))

    def g_fn(r):
        return dpsi_fn(r) / psi_fn(r)

    psi_rec = ModelFunction(n, "from_weight", {}, (
        psi_fn, dpsi_fn, ddpsi_fn, log_psi_fn, g_fn), r_range[1])
    return ChangeOfVariables("standard_n_ge_3", float(n), s_of_r, r_of_s,
                             wp, psi_rec, r_range)


# ---------------------------------------------------------------------------
# classification against the predicted asymptotic weight laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Table1Report:
    kind: str
    fitted_exponent: float
    predicted_exponent: float
    exponent_rel_dev: float
    const_ratio: float            # measured amplitude / predicted amplitude
    srho_at_smax: float           # s rho'/rho at the top of the window
    srho_target: float | None     # -2 for super-Euclidean, 0 for constant
    window: tuple

    @property
    def srho_dev(self):
        if self.srho_target is None:
            return math.nan
        return abs(self.srho_at_smax - self.srho_target)


def verify_table1(psi: ModelFunction, cov: ChangeOfVariables,
                  s_window: tuple | None = None,
                  n_points: int = 48) -> Table1Report:
    """Fit the sampled density against its predicted asymptotic law.

    The fit runs on a geometric s-grid (default: the top two decades of
    the sampled range) and compares the fitted exponent and amplitude with
    the class prediction attached to the weight.
    """
    wc = cov.weight.asymptotic_class
    if wc is None:
        raise RegimeError("weight has no declared asymptotic class")
    s_lo_all, s_hi_all = cov.weight.s_range
    if s_window is None:
        s_hi = s_hi_all
        s_lo = max(s_hi / 100.0, s_lo_all * 10)
    else:
        s_lo, s_hi = s_window
        if s_lo < s_lo_all or s_hi > s_hi_all * (1 + 1e-9):
            raise RegimeError(
                f"requested window [{s_lo:g}, {s_hi:g}] outside sampled "
                f"range [{s_lo_all:g}, {s_hi_all:g}]")
    if s_hi / s_lo < 10.0 or n_points < 8:
        raise RegimeError("insufficient s-range for a stable fit "
                          "(need at least one decade and 8 points)")

    ss = np.geomspace(s_lo, s_hi, n_points)
    rho = np.asarray(cov.weight.rho(ss), dtype=float)
    srr = np.asarray(cov.weight.srho_ratio(np.array([s_hi]))).item()

    if wc.kind == "inv_square_log":
        y = np.log(rho * ss ** 2)
        x = np.log(np.log(ss))
        pred = -wc.nu
        tgt = -2.0
    elif wc.kind == "power":
        y = np.log(rho)
        x = np.log(ss)
        pred = -wc.p
        tgt = None
    elif wc.kind == "log_power":
        y = np.log(rho)
        x = np.log(np.log(ss))
        pred = -wc.p
        tgt = None
    elif wc.kind == "constant":
        ratio = float(rho[-1] / wc.c)
        return Table1Report("constant", 0.0, 0.0, abs(ratio - 1.0), ratio,
                            srr, 0.0, (s_lo, s_hi))
    else:
        raise RegimeError(f"unknown weight class {wc.kind!r}")

    A = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[1])
    denom = abs(pred) if pred != 0 else 1.0
    rel = abs(slope - pred) / denom
    const_ratio = float(math.exp(coef[0]) / wc.c) if wc.c == wc.c and wc.c > 0 \
        else math.nan
    return Table1Report(wc.kind, slope, pred, rel, const_ratio, srr, tgt,
                        (s_lo, s_hi))


class TransplantedBarrier:
    """A radial space-time function pushed through a change of variables.

    Wraps an object with ``value(r, t)`` / ``dt(r, t)`` so it can be
    evaluated in the weighted picture: sub- and supersolutions transform
    into sub- and supersolutions of the weighted equation.
    """

    def __init__(self, spec, cov: ChangeOfVariables):
        self.spec = spec
        self.cov = cov

    def value(self, s, t):
        return self.spec.value(self.cov.inverse(s), t)

    def dt(self, s, t):
        return self.spec.dt(self.cov.inverse(s), t)


def export_weight_table(cov: ChangeOfVariables, rs, path):
    """CSV columns (r, s, rho, s_drho_over_rho) at the given radii."""
    rs = np.asarray(rs, dtype=float)
    ss = cov.forward(rs)
    rho, drho = cov.weight.sampler(ss)
    ratio = ss * drho / rho
    with open(path, "w") as fh:
        fh.write("r,s,rho,s_drho_over_rho\n")
        for i in range(rs.size):
            fh.write(f"{rs[i]:.17g},{ss[i]:.17g},{rho[i]:.17g},"
                     f"{ratio[i]:.17g}\n")
