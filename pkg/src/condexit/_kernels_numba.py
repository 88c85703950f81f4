"""Compiled Euler step kernel.

Mirrors ``_kernels_numpy`` operation for operation; the two backends must
stay bitwise interchangeable.  See that module for the step semantics.
"""

import numpy as np
from numba import njit

KIND_INTERVAL = 0
KIND_BALL = 1


@njit(cache=True, nogil=True)
def advance_step(
    x,
    sd,
    alive,
    exit_times,
    drift,
    z,
    u,
    kind,
    a,
    b,
    center,
    radius,
    dt,
    sig_sqdt,
    sig2_dt,
    t_k,
    bridge,
    bound2,
    out_x,
    out_ctl,
):
    n, d = x.shape
    for i in range(n):
        if not alive[i]:
            for j in range(d):
                out_x[i, j] = x[i, j]
                out_ctl[i, j] = 0.0
            continue
        s2 = 0.0
        for j in range(d):
            s2 += drift[i, j] * drift[i, j]
        if s2 > bound2:
            return i
        sd0 = sd[i]
        acc = 0.0
        for j in range(d):
            out_ctl[i, j] = drift[i, j]
            xn = x[i, j] + drift[i, j] * dt + sig_sqdt * z[i, j]
            out_x[i, j] = xn
            if kind == KIND_BALL:
                dxc = xn - center[j]
                acc += dxc * dxc
        if kind == KIND_INTERVAL:
            xn = out_x[i, 0]
            lo = a - xn
            hi = xn - b
            sdn = lo if lo > hi else hi
        else:
            sdn = np.sqrt(acc) - radius
        if sdn >= 0.0:
            # left at a node: exit time from the linear signed-distance crossing
            alive[i] = False
            exit_times[i] = t_k + dt * (sd0 / (sd0 - sdn))
            sd[i] = sdn
        elif bridge and u[i] < np.exp(-2.0 * sd0 * sdn / sig2_dt):
            # still inside at both nodes but the bridge crossed in between;
            # freeze on the boundary nearest the landing node
            alive[i] = False
            exit_times[i] = t_k + dt * (sd0 / (sd0 + sdn))
            if kind == KIND_INTERVAL:
                xn = out_x[i, 0]
                out_x[i, 0] = a if (xn - a) < (b - xn) else b
            else:
                dist = sdn + radius
                if dist > 0.0:
                    scale = radius / dist
                    for j in range(d):
                        out_x[i, j] = center[j] + (out_x[i, j] - center[j]) * scale
                else:
                    for j in range(d):
                        out_x[i, j] = center[j]
                    out_x[i, 0] = center[0] + radius
            sd[i] = 0.0
        else:
            sd[i] = sdn
        for j in range(d):
            x[i, j] = out_x[i, j]
    return -1
