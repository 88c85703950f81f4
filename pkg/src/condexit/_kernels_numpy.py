"""Vectorized Euler step kernel (pure numpy backend).

One call advances every particle of a chunk by one Euler step and applies
the two exit tests:

* node exit: the proposed position has non-negative signed distance;
  the exit time interpolates the signed-distance crossing linearly,
* bridge exit: both endpoints are inside but a Brownian bridge between
  them crossed the boundary with probability
  ``exp(-2*dist0*dist1 / (sigma^2*dt))``; the particle freezes on the
  boundary point nearest the landing node.

Dead particles keep their frozen position and record a zero control.  The
compiled backend in ``_kernels_numba`` performs the identical arithmetic
per particle; results must match it bit for bit.
"""

import numpy as np

KIND_INTERVAL = 0
KIND_BALL = 1


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
    np.copyto(out_x, x)
    out_ctl[:] = 0.0
    live = np.flatnonzero(alive)
    if live.size == 0:
        return -1
    dl = drift[live]
    s2 = (dl * dl).sum(axis=1)
    bad = np.flatnonzero(s2 > bound2)
    if bad.size:
        return int(live[bad[0]])
    out_ctl[live] = dl
    xn = x[live] + dl * dt + sig_sqdt * z[live]
    if kind == KIND_INTERVAL:
        sdn = np.maximum(a - xn[:, 0], xn[:, 0] - b)
    else:
        diff = xn - center
        sdn = np.sqrt((diff * diff).sum(axis=1)) - radius
    sd0 = sd[live]
    node = sdn >= 0.0
    killed = node.copy()
    frac = np.empty(live.size)
    frac[node] = sd0[node] / (sd0[node] - sdn[node])
    if bridge:
        inside = np.flatnonzero(~node)
        if inside.size:
            p = np.exp(-2.0 * sd0[inside] * sdn[inside] / sig2_dt)
            hit = inside[u[live][inside] < p]
            if hit.size:
                killed[hit] = True
                frac[hit] = sd0[hit] / (sd0[hit] + sdn[hit])
                if kind == KIND_INTERVAL:
                    xh = xn[hit, 0]
                    xn[hit, 0] = np.where((xh - a) < (b - xh), a, b)
                else:
                    dist = sdn[hit] + radius
                    ok = dist > 0.0
                    scale = np.where(ok, radius / np.where(ok, dist, 1.0), 0.0)
                    xn[hit] = center + (xn[hit] - center) * scale[:, None]
                    if not ok.all():
                        deg = hit[~ok]
                        xn[deg] = center
                        xn[deg, 0] = center[0] + radius
                sdn[hit] = 0.0
    if killed.any():
        exit_times[live[killed]] = t_k + dt * frac[killed]
        alive[live[killed]] = False
    sd[live] = sdn
    out_x[live] = xn
    x[live] = xn
    return -1
