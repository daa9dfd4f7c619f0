"""Compiled finite-volume update kernels."""

import numpy as np
from numba import njit


@njit(cache=True)
def pme_steps(u, v, Tface, Tout, Vloc, dt, nsteps, mexp):
    """Explicit conservative update of u_t = div(T grad u^m) / V.

    ``Tface[i]`` couples cells i and i+1; the inner boundary carries zero
    flux, the outer wall is a Dirichlet ghost at value zero through
    ``Tout``.  ``v`` is scratch for u^m.  Returns the max of u.
    """
    N = u.shape[0]
    for _ in range(nsteps):
        if mexp == 2.0:
            for i in range(N):
                v[i] = u[i] * u[i]
        elif mexp == 3.0:
            for i in range(N):
                v[i] = u[i] * u[i] * u[i]
        else:
            for i in range(N):
                v[i] = u[i] ** mexp
        prev = 0.0
        for i in range(N - 1):
            f = Tface[i] * (v[i + 1] - v[i])
            u[i] += dt * (f - prev) / Vloc[i]
            prev = f
        f = Tout * (0.0 - v[N - 1])
        u[N - 1] += dt * (f - prev) / Vloc[N - 1]
    umax = 0.0
    for i in range(N):
        if u[i] > umax:
            umax = u[i]
    return umax
