"""Pure-Python versions of the compiled sweep kernels.

Same arithmetic, same order, so chains are bit-identical across backends.
"""

import numpy as np


def log_g(s, t, w, kind):
    acc = 0.0
    if kind == 0:
        for c in range(len(s)):
            acc -= w[c] * abs(s[c] - t[c])
    else:
        for c in range(len(s)):
            z = s[c] - t[c]
            acc -= w[c] * (z * z)
    return acc


def additive_sweep(x, rec, x_star, rec_star, t, s, w, log_u, n, kind,
                   log_alpha_out=None):
    """Sequential Metropolis sweep over records ``0..n-1``.

    Updates ``x``, ``rec`` and ``t`` in place. Returns ``(accepted,
    min_log_alpha)``.
    """
    s_l = s.tolist()
    w_l = w.tolist()
    t_l = t.tolist()
    d = len(t_l)
    rec_l = rec[:n].tolist()
    star_l = rec_star[:n].tolist()
    lu = log_u[:n].tolist()
    accepted = 0
    min_la = 0.0
    lg_cur = log_g(s_l, t_l, w_l, kind)
    for i in range(n):
        ri = rec_l[i]
        rs = star_l[i]
        t_new = [t_l[c] - ri[c] + rs[c] for c in range(d)]
        lg_new = log_g(s_l, t_new, w_l, kind)
        la = lg_new - lg_cur
        if la > 0.0:
            la = 0.0
        if la < min_la:
            min_la = la
        if log_alpha_out is not None:
            log_alpha_out[i] = la
        if lu[i] < la:
            accepted += 1
            lg_cur = lg_new
            t_l = t_new
            rec[i] = rec_star[i]
            x[i] = x_star[i]
    t[:] = t_l
    return accepted, min_la
