"""Compiled per-point EFE for the range-bearing sensor under Taylor expansions.

Same quantities as :func:`efe_nav.efe.batched_efe_terms`, written out for
2-D observations. For Taylor expansions the conditional covariance
``sigma - gamma.T inv(S) gamma`` reduces exactly to ``R + 0.5 * tr(H_i S H_j S)``
(zero Hessian term at first order), which is what is evaluated here.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

_LOG_2PI_E = math.log(2.0 * math.pi * math.e)


@njit(cache=True)
def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@njit(cache=True)
def range_bearing_taylor_terms(means, covs, station, R, goal_mean, goal_prec, goal_logdet,
                               second_order, include_ambiguity, guard):
    n = means.shape[0]
    risk = np.empty(n)
    amb = np.zeros(n)
    bad = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        d1 = means[k, 0] - station[0]
        d2 = means[k, 1] - station[1]
        r2 = d1 * d1 + d2 * d2
        r = math.sqrt(r2)
        if r < guard:
            bad[k] = True
            risk[k] = 0.0
            continue
        p11 = covs[k, 0, 0]
        p12 = 0.5 * (covs[k, 0, 1] + covs[k, 1, 0])
        p22 = covs[k, 1, 1]
        a1, a2 = d1 / r, d2 / r
        b1, b2 = d2 / r2, -d1 / r2
        # J P J^T
        s11 = a1 * (p11 * a1 + p12 * a2) + a2 * (p12 * a1 + p22 * a2)
        s12 = a1 * (p11 * b1 + p12 * b2) + a2 * (p12 * b1 + p22 * b2)
        s22 = b1 * (p11 * b1 + p12 * b2) + b2 * (p12 * b1 + p22 * b2)
        mu0 = r
        mu1 = math.atan2(d1, d2)
        c11 = 0.0
        c12 = 0.0
        c22 = 0.0
        if second_order:
            r3 = r2 * r
            r4 = r2 * r2
            h00, h01, h11 = d2 * d2 / r3, -d1 * d2 / r3, d1 * d1 / r3
            g00, g01, g11 = -2.0 * d1 * d2 / r4, (d1 * d1 - d2 * d2) / r4, 2.0 * d1 * d2 / r4
            # M = H P for each Hessian
            hm00 = h00 * p11 + h01 * p12
            hm01 = h00 * p12 + h01 * p22
            hm10 = h01 * p11 + h11 * p12
            hm11 = h01 * p12 + h11 * p22
            gm00 = g00 * p11 + g01 * p12
            gm01 = g00 * p12 + g01 * p22
            gm10 = g01 * p11 + g11 * p12
            gm11 = g01 * p12 + g11 * p22
            c11 = 0.5 * (hm00 * hm00 + 2.0 * hm01 * hm10 + hm11 * hm11)
            c22 = 0.5 * (gm00 * gm00 + 2.0 * gm01 * gm10 + gm11 * gm11)
            c12 = 0.5 * (hm00 * gm00 + hm01 * gm10 + hm10 * gm01 + hm11 * gm11)
            mu0 += 0.5 * (hm00 + hm11)
            mu1 += 0.5 * (gm00 + gm11)
        q11 = c11 + R[0, 0]
        q12 = c12 + 0.5 * (R[0, 1] + R[1, 0])
        q22 = c22 + R[1, 1]
        sig11 = s11 + q11
        sig12 = s12 + q12
        sig22 = s22 + q22
        det = sig11 * sig22 - sig12 * sig12
        if not det > 0.0:
            bad[k] = True
            risk[k] = 0.0
            continue
        e0 = goal_mean[0] - mu0
        e1 = _wrap(goal_mean[1] - _wrap(mu1))
        trace = goal_prec[0, 0] * sig11 + 2.0 * goal_prec[0, 1] * sig12 + goal_prec[1, 1] * sig22
        maha = goal_prec[0, 0] * e0 * e0 + 2.0 * goal_prec[0, 1] * e0 * e1 + goal_prec[1, 1] * e1 * e1
        risk[k] = 0.5 * (goal_logdet - math.log(det) - 2.0 + trace + maha)
        if include_ambiguity:
            det_c = q11 * q22 - q12 * q12
            if not det_c > 0.0:
                bad[k] = True
                continue
            amb[k] = _LOG_2PI_E + 0.5 * math.log(det_c)
    return risk, amb, bad
