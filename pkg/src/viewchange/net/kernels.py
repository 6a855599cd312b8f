"""JIT-compiled fused optimizer step.

A single pass per tensor updates the Adam moments and the parameters in
place; the arithmetic matches the textbook elementwise formulas, so results
are bitwise reproducible for a fixed seed and schedule.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(parallel=True, cache=True)
def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    pf = p.reshape(p.size)
    gf = g.reshape(g.size)
    mf = m.reshape(m.size)
    vf = v.reshape(v.size)
    for i in numba.prange(pf.size):
        gi = gf[i]
        mi = beta1 * mf[i] + (1.0 - beta1) * gi
        vi = beta2 * vf[i] + (1.0 - beta2) * gi * gi
        mf[i] = mi
        vf[i] = vi
        pf[i] -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)
