"""Radial model-manifold geometry.

A rotationally symmetric manifold is described by a single profile
``psi(r)`` with ``psi(0) = 0``, ``psi'(0) = 1`` and ``psi > 0`` for
``r > 0`` (class-A profile).  All geometric quantities are radial:

    K(r)     = -psi''/psi            (radial sectional curvature)
    H(r)     = (1 - psi'^2)/psi^2    (orthogonal sectional curvature)
    Ric(r)   = -(n-1) psi''/psi      (radial Ricci curvature)
    drift(r) = (n-1) psi'/psi        (first-order coefficient of the
                                      radial Laplacian)

Profiles come in three flavours: closed-form cut-and-paste constructions
(Euclidean core glued to an exponential / power / almost-linear outer
branch), the exact Euclidean and sinh profiles, and profiles defined by
integrating ``psi'' = w(r) psi`` for a prescribed coefficient ``w``.

Because ``psi`` can grow doubly exponentially, ODE-defined profiles are
integrated in rescaled segments: the linear ODE is restarted with
``(psi, psi')/psi`` whenever ``psi`` gets large and the accumulated
``log`` offset is tracked, so ratios like ``psi'/psi`` and ``log psi``
remain accurate at radii where ``psi`` itself overflows a float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq
from scipy.special import gamma as gamma_fn

from .errors import ConstraintError, NumericalError

__all__ = [
    "AsymptoticClass",
    "ModelFunction",
    "CurvatureProfile",
    "CurvatureValues",
    "CurvatureEnvelope",
    "RiccatiReport",
    "make_closed_form",
    "solve_psi_from_curvature",
    "curvatures",
    "riccati_diagnostic",
    "volume",
    "sphere_area",
    "curvature_envelope",
    "export_psi_table",
]

# seed radius for ODE starts; avoids the psi(0)=0 coordinate singularity
_R_SEED = 1e-8
# renormalize the linear ODE state when psi exceeds this
_RENORM_AT = 1e250


def sphere_area(n: int) -> float:
    """Area of the unit (n-1)-sphere, 2 pi^{n/2} / Gamma(n/2)."""
    return 2.0 * math.pi ** (n / 2.0) / gamma_fn(n / 2.0)


@dataclass(frozen=True)
class AsymptoticClass:
    """Large-r behaviour tag for a profile.

    kind:
      * ``exp_power``: psi ~ amp * exp(coef * r**power), power = 1 + mu
      * ``power``:     psi ~ amp * r**power  (power > 1)
      * ``linear``:    psi ~ amp * r
      * ``log_linear``: psi ~ amp * r * (log r)**power
      * ``double_exp``: log psi ~ exp(coef * r)
    """

    kind: str
    amp: float = 1.0
    coef: float = 0.0
    power: float = 0.0

    @property
    def mu(self) -> float:
        """Curvature growth exponent: -K ~ r^{2 mu} at infinity."""
        if self.kind == "exp_power":
            return self.power - 1.0
        if self.kind == "power":
            return -1.0
        if self.kind in ("linear", "log_linear"):
            # -K decays faster than r^{-2}; exact rate depends on the tail
            return -math.inf
        if self.kind == "double_exp":
            return math.inf
        raise ValueError(f"unknown asymptotic kind {self.kind!r}")


class ModelFunction:
    """A sampled radial metric profile with derivatives.

    Instances are immutable after construction and safe to share between
    threads.  All evaluation methods accept scalars or arrays.
    """

    def __init__(self, n, kind, params, fns, r_max, r_bar=None,
                 asympt=None, profile=None):
        if n < 2:
            raise ConstraintError("dimension n >= 2", f"got n={n}")
        self.n = int(n)
        self.kind = kind
        self.params = dict(params)
        self.r_max = float(r_max)
        self.r_bar = r_bar
        self.asympt = asympt
        self.profile = profile  # CurvatureProfile for ODE-defined psi
        (self._psi, self._dpsi, self._ddpsi, self._log_psi, self._g) = fns

    def _check(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or np.any(r > self.r_max * (1 + 1e-12)):
            raise ValueError(
                f"r outside valid range [0, {self.r_max}] for this profile")
        return r

    def psi(self, r):
        return self._psi(self._check(r))

    def dpsi(self, r):
        return self._dpsi(self._check(r))

    def ddpsi(self, r):
        return self._ddpsi(self._check(r))

    def log_psi(self, r):
        """log psi(r), computed without overflow for fast-growing profiles."""
        return self._log_psi(self._check(r))

    def g(self, r):
        """psi'(r)/psi(r), stable at radii where psi overflows."""
        return self._g(self._check(r))

    def drift(self, r):
        """Laplacian drift coefficient (n-1) psi'/psi."""
        return (self.n - 1) * self.g(r)

    def sample(self, r):
        """Return (psi, psi', psi'') at r."""
        r = self._check(r)
        return self._psi(r), self._dpsi(r), self._ddpsi(r)

    def is_class_a(self, hs=(1e-4, 1e-5), rtol=1e-3) -> bool:
        """Check psi(h)/h -> 1 as h -> 0 at the sample offsets ``hs``."""
        for h in hs:
            if abs(float(self.psi(h)) / h - 1.0) > rtol:
                return False
        return True

    def __repr__(self):
        return (f"ModelFunction(kind={self.kind!r}, n={self.n}, "
                f"r_max={self.r_max:g}, params={self.params})")


# ---------------------------------------------------------------------------
# closed-form constructions
# ---------------------------------------------------------------------------

def _euclidean_fns():
    return (
        lambda r: np.asarray(r, dtype=float).copy(),
        lambda r: np.ones_like(np.asarray(r, dtype=float)),
        lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        lambda r: np.log(np.asarray(r, dtype=float)),
        lambda r: 1.0 / np.asarray(r, dtype=float),
    )


def _sinh_fns():
    def log_psi(r):
        r = np.asarray(r, dtype=float)
        # log sinh r = r + log(1 - e^{-2r}) - log 2, stable for large r
        with np.errstate(divide="ignore"):
            return np.where(r > 1e-6,
                            r + np.log1p(-np.exp(-2.0 * r)) - math.log(2.0),
                            np.log(np.sinh(np.maximum(r, 1e-300))))

    def g(r):
        r = np.asarray(r, dtype=float)
        return 1.0 / np.tanh(r)

    return (np.sinh, np.cosh, np.sinh, log_psi, g)


def _root_bracketed(fun, lo, hi, widen=10.0, max_widen=12):
    """Bracketed root of ``fun`` with geometric bracket widening."""
    flo, fhi = fun(lo), fun(hi)
    tries = 0
    while flo * fhi > 0 and tries < max_widen:
        hi *= widen
        fhi = fun(hi)
        tries += 1
    if flo * fhi > 0:
        raise NumericalError(
            f"no sign change for matching-radius equation in [{lo:g}, {hi:g}]")
    return brentq(fun, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=200)


def _piecewise(r, r_bar, inner, outer):
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    mask = r <= r_bar
    out[mask] = inner(r[mask])
    out[~mask] = outer(r[~mask])
    return out


def _type1_fns(a1, alpha, A):
    """Exponential outer branch A(e^{a1 r^alpha} - e^{a1 rbar^alpha}) + rbar."""
    if alpha > 1:
        lo = 1e-6
    elif alpha == 1:
        if A >= 1.0 / a1:
            raise ConstraintError("Type I with alpha=1 requires A < 1/a1",
                                  f"A={A}, 1/a1={1.0 / a1}")
        lo = 1e-6
    else:
        amax = (1.0 / (alpha * a1)) * ((1 - alpha) / (math.e * alpha * a1)) ** ((1 - alpha) / alpha)
        if A > amax * (1 + 1e-12):
            raise ConstraintError(
                "Type I with alpha in (0,1) requires "
                "A <= (1/(alpha a1)) ((1-alpha)/(e alpha a1))^{(1-alpha)/alpha}",
                f"A={A}, bound={amax}")
        # take the root beyond the minimiser of the matching function
        lo = ((1 - alpha) / (alpha * a1)) ** (1.0 / alpha)

    def match(r):
        return A * alpha * a1 * r ** (alpha - 1) * math.exp(a1 * r ** alpha) - 1.0

    r_bar = _root_bracketed(match, lo, max(2.0 * lo, 1.0))
    e_bar = math.exp(a1 * r_bar ** alpha)
    bconst = r_bar - A * e_bar  # outer branch: A e^{a1 r^alpha} + bconst

    def outer_log_psi(r):
        x = a1 * r ** alpha
        return x + math.log(A) + np.log1p(bconst * np.exp(-x) / A)

    def outer_psi(r):
        with np.errstate(over="ignore"):
            return np.exp(outer_log_psi(r))

    def outer_dpsi(r):
        with np.errstate(over="ignore"):
            return A * a1 * alpha * r ** (alpha - 1) * np.exp(a1 * r ** alpha)

    def outer_ddpsi(r):
        with np.errstate(over="ignore"):
            return (A * a1 * alpha * np.exp(a1 * r ** alpha)
                    * ((alpha - 1) * r ** (alpha - 2) + a1 * alpha * r ** (2 * alpha - 2)))

    def outer_g(r):
        x = a1 * r ** alpha
        return a1 * alpha * r ** (alpha - 1) / (1.0 + bconst * np.exp(-x) / A)

    eu = _euclidean_fns()
    fns = (
        lambda r: _piecewise(r, r_bar, eu[0], outer_psi),
        lambda r: _piecewise(r, r_bar, eu[1], outer_dpsi),
        lambda r: _piecewise(r, r_bar, eu[2], outer_ddpsi),
        lambda r: _piecewise(r, r_bar, eu[3], outer_log_psi),
        lambda r: _piecewise(r, r_bar, eu[4], outer_g),
    )
    asympt = AsymptoticClass("exp_power", amp=A, coef=a1, power=alpha)
    return fns, r_bar, asympt


def _type2_fns(a1, alpha):
    """Power outer branch a1 r^alpha + rbar (alpha-1)/alpha, alpha > 1."""
    if alpha <= 1:
        raise ConstraintError("Type II requires alpha > 1", f"alpha={alpha}")
    r_bar = (a1 * alpha) ** (-1.0 / (alpha - 1.0))
    bconst = r_bar * (alpha - 1.0) / alpha

    def outer_psi(r):
        return a1 * r ** alpha + bconst

    eu = _euclidean_fns()
    fns = (
        lambda r: _piecewise(r, r_bar, eu[0], outer_psi),
        lambda r: _piecewise(r, r_bar, eu[1],
                             lambda rr: a1 * alpha * rr ** (alpha - 1)),
        lambda r: _piecewise(r, r_bar, eu[2],
                             lambda rr: a1 * alpha * (alpha - 1) * rr ** (alpha - 2)),
        lambda r: _piecewise(r, r_bar, eu[3], lambda rr: np.log(outer_psi(rr))),
        lambda r: _piecewise(r, r_bar, eu[4],
                             lambda rr: a1 * alpha * rr ** (alpha - 1) / outer_psi(rr)),
    )
    asympt = AsymptoticClass("power", amp=a1, power=alpha)
    return fns, r_bar, asympt


def _type4_fns(A, c, alpha):
    """Almost-linear outer branch A(r e^{c r^-alpha} - rbar e^{c rbar^-alpha}) + rbar."""
    if A <= 1:
        raise ConstraintError("Type IV requires A > 1", f"A={A}")
    ok = (alpha > 1 and c > 0) or (0 < alpha < 1 and c < 0)
    if not ok:
        raise ConstraintError(
            "Type IV requires alpha > 1 with c > 0, or alpha in (0,1) with c < 0",
            f"alpha={alpha}, c={c}")

    def match(r):
        return A * math.exp(c * r ** (-alpha)) * (1.0 - alpha * c * r ** (-alpha)) - 1.0

    if c > 0:
        lo = (alpha * c) ** (1.0 / alpha)  # matching function vanishes here
    else:
        lo = 1e-6
    r_bar = _root_bracketed(match, lo * (1 + 1e-12), max(2.0 * lo, 1.0))
    bconst = r_bar - A * r_bar * math.exp(c * r_bar ** (-alpha))

    def outer_psi(r):
        return A * r * np.exp(c * r ** (-alpha)) + bconst

    def outer_dpsi(r):
        return A * np.exp(c * r ** (-alpha)) * (1.0 - alpha * c * r ** (-alpha))

    def outer_ddpsi(r):
        return (A * np.exp(c * r ** (-alpha)) * c * alpha * r ** (-alpha - 1)
                * (alpha - 1.0 + c * alpha * r ** (-alpha)))

    eu = _euclidean_fns()
    fns = (
        lambda r: _piecewise(r, r_bar, eu[0], outer_psi),
        lambda r: _piecewise(r, r_bar, eu[1], outer_dpsi),
        lambda r: _piecewise(r, r_bar, eu[2], outer_ddpsi),
        lambda r: _piecewise(r, r_bar, eu[3], lambda rr: np.log(outer_psi(rr))),
        lambda r: _piecewise(r, r_bar, eu[4], lambda rr: outer_dpsi(rr) / outer_psi(rr)),
    )
    asympt = AsymptoticClass("linear", amp=A)
    return fns, r_bar, asympt


def make_closed_form(kind, params=None, n=3, r_max=100.0) -> ModelFunction:
    """Build a closed-form class-A profile.

    Parameters
    ----------
    kind : str
        One of ``euclidean``, ``hyperbolic_sinh``, ``type1``, ``type2``,
        ``type4``.  ``type1`` takes parameters ``a1 > 0``, ``alpha > 0``,
        ``A > 0`` (exponential growth, curvature ~ -r^{2(alpha-1)});
        ``type2`` takes ``a1 > 0``, ``alpha > 1`` (power growth, curvature
        ~ -alpha(alpha-1)/r^2); ``type4`` takes ``A > 1``, ``c``, ``alpha``
        (almost linear, curvature ~ -r^{-(alpha+2)}).  ``type3``
        (r (log r)^q growth) is supported only as a classification target,
        not as a constructor.
    params : dict
        Type-specific parameters, see above.
    n : int
        Dimension (>= 2).
    r_max : float
        Largest radius the profile will be sampled at.

    Raises
    ------
    ConstraintError
        If a named type-specific parameter constraint is violated.
    NumericalError
        If the matching-radius equation has no root in the search bracket.
    """
    params = dict(params or {})
    if kind == "euclidean":
        mf = ModelFunction(n, kind, params, _euclidean_fns(), r_max,
                           asympt=AsymptoticClass("linear", amp=1.0))
    elif kind == "hyperbolic_sinh":
        mf = ModelFunction(n, kind, params, _sinh_fns(), r_max,
                           asympt=AsymptoticClass("exp_power", amp=0.5,
                                                  coef=1.0, power=1.0))
    elif kind == "type1":
        fns, r_bar, asym = _type1_fns(params["a1"], params["alpha"], params["A"])
        mf = ModelFunction(n, kind, params, fns, r_max, r_bar=r_bar, asympt=asym)
    elif kind == "type2":
        fns, r_bar, asym = _type2_fns(params["a1"], params["alpha"])
        mf = ModelFunction(n, kind, params, fns, r_max, r_bar=r_bar, asympt=asym)
    elif kind == "type4":
        fns, r_bar, asym = _type4_fns(params["A"], params["c"], params["alpha"])
        mf = ModelFunction(n, kind, params, fns, r_max, r_bar=r_bar, asympt=asym)
    elif kind == "type3":
        raise ConstraintError(
            "Type III has no closed-form constructor",
            "its r (log r)^q growth is available as a classification target only")
    else:
        raise ConstraintError("unknown profile kind", repr(kind))
    return mf


# ---------------------------------------------------------------------------
# ODE-defined profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurvatureProfile:
    """Coefficient ``w(r)`` of ``psi'' = w psi`` with power-law envelope.

    The ``upper`` branch is zero inside radius ``R`` and ramps linearly to
    ``Q r^{2 mu}`` on (R, 2R]; it stays below ``Q r^{2 mu}`` outside ``R``.
    The ``lower`` branch carries an inner floor ``D``: for ``mu < 0`` it
    blends linearly from ``D`` to the envelope across (R, 2R], for
    ``mu >= 0`` it is ``max(D, Q r^{2 mu})``.  With ``D >= Q R^{2 mu}`` the
    lower branch stays above ``Q r^{2 mu} [r>R] + D [r<=R]``.
    """

    Q: float
    mu: float
    R: float
    D: float = 0.0
    branch: str = "upper"  # 'upper' or 'lower'

    def __post_init__(self):
        if self.Q <= 0 or self.R <= 0:
            raise ConstraintError("CurvatureProfile requires Q > 0 and R > 0",
                                  f"Q={self.Q}, R={self.R}")
        if self.branch not in ("upper", "lower"):
            raise ConstraintError("branch must be 'upper' or 'lower'",
                                  repr(self.branch))
        if self.branch == "lower" and self.D <= 0:
            raise ConstraintError("lower branch requires D > 0", f"D={self.D}")

    def w(self, r):
        r = np.asarray(r, dtype=float)
        Q, mu, R, D = self.Q, self.mu, self.R, self.D
        if self.branch == "upper":
            ramp = Q * (2 * R) ** (2 * mu) / R
            return np.where(r <= R, 0.0,
                            np.where(r <= 2 * R, ramp * (r - R),
                                     Q * np.maximum(r, R) ** (2 * mu)))
        if mu < 0:
            ramp = Q * (2 * R) ** (2 * mu) / R
            return np.where(r <= R, D,
                            np.where(r <= 2 * R,
                                     ramp * (r - R) + (D / R) * (2 * R - r),
                                     Q * np.maximum(r, R) ** (2 * mu)))
        return np.maximum(D, Q * np.maximum(r, 1e-300) ** (2 * mu))

    def w_scalar(self, r: float) -> float:
        """Scalar fast path for ODE right-hand sides."""
        Q, mu, R, D = self.Q, self.mu, self.R, self.D
        if self.branch == "upper":
            if r <= R:
                return 0.0
            if r <= 2 * R:
                return Q * (2 * R) ** (2 * mu) / R * (r - R)
            return Q * r ** (2 * mu)
        if mu < 0:
            if r <= R:
                return D
            if r <= 2 * R:
                return (Q * (2 * R) ** (2 * mu) / R * (r - R)
                        + (D / R) * (2 * R - r))
            return Q * r ** (2 * mu)
        return max(D, Q * r ** (2 * mu))

    def seed_region(self) -> tuple[float, float]:
        """(radius, constant w) of the inner region where w is constant."""
        if self.branch == "upper":
            return self.R, 0.0
        if self.mu < 0:
            return self.R, self.D
        if self.mu == 0:
            return math.inf, max(self.D, self.Q)
        cross = (self.D / self.Q) ** (1.0 / (2 * self.mu))
        return min(self.R, cross), self.D

    def envelope(self, r):
        """Q r^{2 mu} [r > R] (+ D [r <= R] on the lower branch)."""
        r = np.asarray(r, dtype=float)
        env = np.where(r > self.R, self.Q * np.maximum(r, self.R) ** (2 * self.mu), 0.0)
        if self.branch == "lower":
            env = env + np.where(r <= self.R, self.D, 0.0)
        return env


class _HybridPsi:
    """Dense psi'' = w psi solution: plain (psi, psi') inner piece plus a
    (log psi, psi'/psi) outer piece for the growth regime."""

    def __init__(self, sol_plain, r_switch, sol_log, w):
        self.sol_plain = sol_plain
        self.r_switch = r_switch
        self.sol_log = sol_log
        self.w = w

    def _ev(self, r):
        """Return (log_psi, g) arrays at r (r >= seed)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        L = np.empty(r.size)
        G = np.empty(r.size)
        inner = r <= self.r_switch
        if np.any(inner):
            rr = np.clip(r[inner], self.sol_plain.t_min, self.sol_plain.t_max)
            p, dp = self.sol_plain(rr)
            L[inner] = np.log(p)
            G[inner] = dp / p
        if np.any(~inner):
            rr = np.clip(r[~inner], self.sol_log.t_min, self.sol_log.t_max)
            y = self.sol_log(rr)
            L[~inner] = y[0]
            G[~inner] = y[1]
        return L, G

    def make_fns(self):
        def _lg(r):
            scalar = np.ndim(r) == 0
            r1 = np.atleast_1d(np.asarray(r, dtype=float))
            L, G = self._ev(np.maximum(r1, _R_SEED))
            small = r1 < _R_SEED
            with np.errstate(divide="ignore"):
                L = np.where(small, np.log(np.maximum(r1, 1e-300)), L)
            G = np.where(small, 1.0 / np.maximum(r1, 1e-300), G)
            return scalar, r1, L, G

        def psi(r):
            scalar, r1, L, G = _lg(r)
            with np.errstate(over="ignore"):
                out = np.exp(L)
            return out[0] if scalar else out

        def dpsi(r):
            scalar, r1, L, G = _lg(r)
            with np.errstate(over="ignore"):
                out = G * np.exp(L)
            return out[0] if scalar else out

        def log_psi(r):
            scalar, r1, L, G = _lg(r)
            return L[0] if scalar else L

        def g(r):
            scalar, r1, L, G = _lg(r)
            return G[0] if scalar else G

        def ddpsi(r):
            # exact from the ODE, never finite-differenced
            return self.w(np.asarray(r, dtype=float)) * psi(r)

        return psi, dpsi, ddpsi, log_psi, g


def solve_psi_from_curvature(profile: CurvatureProfile, r_max: float,
                             n: int = 3, rtol: float = 1e-10,
                             atol: float = 1e-12) -> ModelFunction:
    """Integrate ``psi'' = w(r) psi``, ``psi(0)=0``, ``psi'(0)=1`` up to r_max.

    Uses the adaptive embedded Runge-Kutta 5(4) pair with dense output
    (between-step values come from the integrator's continuous extension).
    The integration is seeded at ``r = 1e-8`` with ``psi = r``, ``psi' = 1``
    to avoid the coordinate singularity, and switches to the equivalent
    ``(log psi, psi'/psi)`` system once ``psi`` has grown past O(1), so
    profiles that overflow a float (``log psi`` in the thousands) still
    report ``log psi`` and ``psi'/psi`` accurately.  ``psi''`` is always
    returned as ``w(r) psi(r)``.

    Parameters
    ----------
    profile : CurvatureProfile
    r_max : float
        Must exceed ``2 * profile.R``.
    n : int
        Dimension carried by the resulting ModelFunction.
    """
    if r_max <= 2 * profile.R:
        raise ConstraintError("r_max must exceed 2R", f"r_max={r_max}, R={profile.R}")

    ws = profile.w_scalar

    def rhs_plain(r, y):
        return (y[1], ws(r) * y[0])

    def switch(r, y):
        return y[0] - 2.0

    switch.terminal = True
    switch.direction = 1

    sol_a = solve_ivp(rhs_plain, (_R_SEED, r_max), (_R_SEED, 1.0),
                      method="RK45", rtol=rtol, atol=atol,
                      dense_output=True, events=switch)
    if sol_a.status < 0:
        raise NumericalError(
            f"psi integration failed at r={sol_a.t[-1]:.6g}: {sol_a.message}")
    if profile.branch == "upper" and np.min(sol_a.y[1]) < 1.0 - 1e-8:
        # the upper branch keeps psi' >= 1; tolerate roundoff only
        raise NumericalError("psi' dropped below 1 on the upper branch")

    if sol_a.status == 1:
        r_sw = float(sol_a.t_events[0][0])
        y_sw = sol_a.y_events[0][0]

        def rhs_log(r, y):
            G = y[1]
            return (G, ws(r) - G * G)

        sol_b = solve_ivp(rhs_log, (r_sw, r_max),
                          (math.log(y_sw[0]), y_sw[1] / y_sw[0]),
                          method="RK45", rtol=rtol, atol=atol,
                          dense_output=True)
        if sol_b.status < 0:
            raise NumericalError(
                f"psi integration failed at r={sol_b.t[-1]:.6g}: {sol_b.message}")
        hyb = _HybridPsi(sol_a.sol, r_sw, sol_b.sol, profile.w)
    else:
        hyb = _HybridPsi(sol_a.sol, r_max, None, profile.w)

    fns = hyb.make_fns()
    psi_f, dpsi_f, _, log_psi_f, _ = fns
    # classify the large-r behaviour from the envelope exponent
    mu = profile.mu
    if mu > -1:
        # log psi ~ sqrt(Q) r^{1+mu} / (1+mu)
        asympt = AsymptoticClass("exp_power",
                                 coef=math.sqrt(profile.Q) / (1 + mu),
                                 power=1 + mu)
    elif mu == -1:
        q = 0.5 * (1 + math.sqrt(1 + 4 * profile.Q))
        amp = (float(psi_f(r_max)) / r_max ** q
               if float(log_psi_f(r_max)) < 700 else 1.0)
        asympt = AsymptoticClass("power", amp=amp, power=q)
    else:
        asympt = AsymptoticClass("linear", amp=float(dpsi_f(r_max)))
    return ModelFunction(n, "ode_defined",
                         {"Q": profile.Q, "mu": profile.mu, "R": profile.R,
                          "D": profile.D, "branch": profile.branch},
                         fns, r_max, asympt=asympt, profile=profile)


# ---------------------------------------------------------------------------
# interrogation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurvatureValues:
    K_radial: float
    H_orthogonal: float
    Ric_radial: float
    drift: float


def curvatures(psi: ModelFunction, r):
    """Radial curvatures and Laplacian drift of a profile at radius r.

    Returns a CurvatureValues with K = -psi''/psi, H = (1 - psi'^2)/psi^2,
    Ric = -(n-1) psi''/psi and drift = (n-1) psi'/psi.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("curvatures need r > 0")
    p, dp, ddp = psi.sample(r)
    if np.all(np.isfinite(p)):
        K = -ddp / p
        H = (1.0 - dp ** 2) / p ** 2
    else:
        # ratio forms survive overflow of psi itself
        gg = psi.g(r)
        if psi.profile is not None:
            K = -psi.profile.w(r)
        else:
            K = -ddp / p
        H = np.where(np.isfinite(p), (1.0 - dp ** 2) / p ** 2, -gg ** 2)
    Ric = (psi.n - 1) * K
    drift = (psi.n - 1) * psi.g(r)
    if np.ndim(r) == 0:
        return CurvatureValues(float(K), float(H), float(Ric), float(drift))
    return CurvatureValues(K, H, Ric, drift)


@dataclass(frozen=True)
class RiccatiReport:
    G: float
    sqrtQ: float
    deviation: float          # |G/sqrt(Q) - 1|
    k_lower: float
    k_upper: float
    within_bounds: bool
    applicable: bool
    r_probe: float


def riccati_diagnostic(psi: ModelFunction, Q: float, mu: float,
                       r_probe: float, R: float | None = None,
                       n_samples: int = 512) -> RiccatiReport:
    """Convergence diagnostic for G(r) = psi'(r) / (psi(r) r^mu).

    For profiles driven by a ``Q r^{2 mu}`` curvature envelope beyond 2R,
    G converges to sqrt(Q) and is a priori sandwiched between

        k_lower = min(-|mu|/(2 (2R)^{mu+1}) + sqrt(Q + mu^2/(4 (2R)^{2mu+2})), G(2R))
        k_upper = max(+|mu|/(2 (2R)^{mu+1}) + sqrt(Q + mu^2/(4 (2R)^{2mu+2})), G(2R))

    The sandwich is checked on ``n_samples`` log-spaced radii in
    [2R, r_probe].  Profiles that do not follow the envelope (e.g. the
    flat psi = r) fail the stabilisation check and are flagged as not
    applicable.
    """
    if R is None:
        if psi.profile is None:
            raise ValueError("R is required when psi carries no CurvatureProfile")
        R = psi.profile.R
    if r_probe <= 2 * R:
        raise ValueError(f"r_probe must exceed 2R = {2 * R:g}")

    def G(r):
        return psi.g(r) / np.asarray(r, dtype=float) ** mu

    sq = math.sqrt(Q)
    g_probe = float(G(r_probe))
    dev = abs(g_probe / sq - 1.0)

    g2R = float(G(2 * R))
    disc = math.sqrt(Q + mu ** 2 / (4.0 * (2 * R) ** (2 * mu + 2)))
    shift = abs(mu) / (2.0 * (2 * R) ** (mu + 1))
    k_lo = min(-shift + disc, g2R)
    k_hi = max(shift + disc, g2R)

    rs = np.geomspace(2 * R, r_probe, n_samples)
    Gs = G(rs)
    within = bool(np.all(Gs >= k_lo * (1 - 1e-9)) and np.all(Gs <= k_hi * (1 + 1e-9)))

    # 'applicable' requires G to have stabilised between r_probe/2 and r_probe
    g_half = float(G(0.5 * r_probe))
    applicable = abs(g_probe / g_half - 1.0) < 0.05

    return RiccatiReport(g_probe, sq, dev, k_lo, k_hi, within, applicable,
                         float(r_probe))


def volume(psi: ModelFunction, R_ball: float) -> float:
    """Riemannian volume of the ball of radius R_ball around the pole."""
    if R_ball < 0 or R_ball > psi.r_max:
        raise ValueError(f"R_ball must lie in [0, {psi.r_max}]")
    if R_ball == 0:
        return 0.0
    pts = None
    if psi.r_bar is not None and 0 < psi.r_bar < R_ball:
        pts = [psi.r_bar]
    val, err = quad(lambda t: float(psi.psi(t)) ** (psi.n - 1), 0.0, R_ball,
                    points=pts, limit=200)
    if not math.isfinite(val) or (abs(val) > 0 and err > 1e-6 * abs(val)):
        raise NumericalError(f"ball-volume quadrature did not converge "
                             f"(value={val:g}, err={err:g})")
    return sphere_area(psi.n) * val


@dataclass(frozen=True)
class CurvatureEnvelope:
    """Power-law curvature envelope extracted from a concrete geometry."""
    Q_upper: float   # K <= -Q_upper r^{2 mu} outside B_R
    Q_lower: float   # Ric >= -(n-1) Q_lower r^{2 mu} outside B_R
    D: float         # inner floor for the lower-branch profile
    mu: float
    R: float


def curvature_envelope(psi: ModelFunction, mu: float, R: float,
                       r_max: float | None = None, margin: float = 1e-3,
                       n_samples: int = 4096) -> CurvatureEnvelope:
    """Fit the tightest ``-Q r^{2 mu}`` curvature bounds of a geometry.

    Q_upper is (just under) the infimum of ``-K(r)/r^{2 mu}`` over
    ``[R, r_max]``, Q_lower (just over) the supremum, and D follows the
    lower-branch recipe ``max(sup_{B_R} psi''/psi, Q_lower R^{2 mu})``.
    """
    r_hi = r_max if r_max is not None else psi.r_max
    rs = np.geomspace(R, r_hi, n_samples)
    ratio = -curvatures(psi, rs).K_radial / rs ** (2 * mu)
    if np.any(ratio <= 0):
        raise NumericalError("geometry has non-negative radial curvature "
                             "in the envelope window")
    Q_up = float(np.min(ratio)) * (1 - margin)
    Q_lo = float(np.max(ratio)) * (1 + margin)
    rs_in = np.linspace(1e-6, R, 1024)
    inner = np.max(np.append(-curvatures(psi, rs_in).K_radial, 0.0))
    D = max(float(inner) * (1 + margin), Q_lo * R ** (2 * mu))
    return CurvatureEnvelope(Q_up, Q_lo, D, mu, R)


def export_psi_table(psi: ModelFunction, rs, path):
    """Write a CSV table of (r, psi, dpsi, K, Ric) at the given radii."""
    rs = np.asarray(rs, dtype=float)
    cv = curvatures(psi, rs)
    p = psi.psi(rs)
    dp = psi.dpsi(rs)
    with open(path, "w") as fh:
        fh.write("r,psi,dpsi,K,Ric\n")
        for i in range(rs.size):
            fh.write(f"{rs[i]:.17g},{p[i]:.17g},{dp[i]:.17g},"
                     f"{cv.K_radial[i]:.17g},{cv.Ric_radial[i]:.17g}\n")
