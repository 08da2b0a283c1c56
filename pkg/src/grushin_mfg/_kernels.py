"""Compiled inner loops. Everything here works on plain arrays."""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _bilinear(vals, x1min, x2min, h1, h2, y1, y2):
    n1, n2 = vals.shape
    r1 = (y1 - x1min) / h1
    r2 = (y2 - x2min) / h2
    # constant extension outside the box
    if r1 < 0.0:
        r1 = 0.0
    elif r1 > n1 - 1:
        r1 = n1 - 1.0
    if r2 < 0.0:
        r2 = 0.0
    elif r2 > n2 - 1:
        r2 = n2 - 1.0
    i = int(math.floor(r1))
    j = int(math.floor(r2))
    if i > n1 - 2:
        i = n1 - 2
    if j > n2 - 2:
        j = n2 - 2
    a = r1 - i
    b = r2 - j
    return (
        (1 - a) * (1 - b) * vals[i, j]
        + a * (1 - b) * vals[i + 1, j]
        + (1 - a) * b * vals[i, j + 1]
        + a * b * vals[i + 1, j + 1]
    )


@njit(cache=True)
def bilinear_many(vals, x1min, x2min, h1, h2, y1, y2):
    out = np.empty(y1.shape[0])
    for k in range(y1.shape[0]):
        out[k] = _bilinear(vals, x1min, x2min, h1, h2, y1[k], y2[k])
    return out


@njit(cache=True)
def _polish(u_next, x1min, x2min, h1, h2, i, j, hx, dt, a_max, best, b1, b2):
    """Exact minimiser of the interpolated one-step cost over the control square
    |alpha_i| <= a_max. With dt a_max <= h the foot points stay in the four cells
    touching node (i, j); in cell coordinates theta = k * alpha each piece is a
    quadratic on a rectangle, minimised over its stationary point, the
    stationary points of its edges and its corners. Returns the better of that
    and the lattice pick."""
    n1, n2 = u_next.shape
    xi = x1min + i * h1
    xj = x2min + j * h2
    u00 = u_next[i, j]
    for s1 in (-1, 1):
        i1 = min(max(i + s1, 0), n1 - 1)
        for s2 in (-1, 1):
            j1 = min(max(j + s2, 0), n2 - 1)
            A = u_next[i1, j] - u00
            B = u_next[i, j1] - u00
            C = u_next[i1, j1] - u_next[i1, j] - u_next[i, j1] + u00
            k1 = s1 * dt / h1
            k2 = s2 * dt * hx / h2
            U1 = min(1.0, abs(k1) * a_max)
            U2 = min(1.0, abs(k2) * a_max)
            cand = np.empty((7, 2))
            nc = 0
            det = dt * dt - (C * k1 * k2) ** 2
            if det > 0.0:
                a1 = (-A * k1 * dt + C * k1 * k2 * B * k2) / det
                a2 = (-B * k2 * dt + C * k1 * k2 * A * k1) / det
                cand[nc, 0] = k1 * a1
                cand[nc, 1] = k2 * a2
                nc += 1
            for e in (0.0, U1):
                cand[nc, 0] = e
                cand[nc, 1] = -(B + C * e) * k2 * k2 / dt
                nc += 1
            for e in (0.0, U2):
                cand[nc, 0] = -(A + C * e) * k1 * k1 / dt
                cand[nc, 1] = e
                nc += 1
            cand[nc, 0] = U1
            cand[nc, 1] = U2
            nc += 1
            for c in range(nc):
                t1 = min(max(cand[c, 0], 0.0), U1)
                t2 = min(max(cand[c, 1], 0.0), U2)
                a1 = t1 / k1
                a2 = t2 / k2 if k2 != 0.0 else 0.0
                v = 0.5 * dt * (a1 * a1 + a2 * a2) + _bilinear(
                    u_next, x1min, x2min, h1, h2, xi + dt * a1, xj + dt * hx * a2
                )
                if v < best:
                    best = v
                    b1 = a1
                    b2 = a2
    return best, b1, b2


@njit(cache=True, parallel=True)
def sl_step(u_next, x1min, x2min, h1, h2, hvals, controls, dt, f_k, a_max, refine):
    """One backward semi-Lagrangian step of the discrete dynamic programming
    principle. Ties go to the lowest control index."""
    n1, n2 = u_next.shape
    u_k = np.empty((n1, n2))
    alpha = np.empty((n1, n2, 2))
    m = controls.shape[0]
    for i in prange(n1):
        xi = x1min + i * h1
        hx = hvals[i]
        for j in range(n2):
            xj = x2min + j * h2
            best = np.inf
            b1 = 0.0
            b2 = 0.0
            for c in range(m):
                a1 = controls[c, 0]
                a2 = controls[c, 1]
                v = 0.5 * dt * (a1 * a1 + a2 * a2) + _bilinear(
                    u_next, x1min, x2min, h1, h2, xi + dt * a1, xj + dt * hx * a2
                )
                if v < best:
                    best = v
                    b1 = a1
                    b2 = a2
            if refine:
                best, b1, b2 = _polish(
                    u_next, x1min, x2min, h1, h2, i, j, hx, dt, a_max, best, b1, b2
                )
            u_k[i, j] = best + dt * f_k[i, j]
            alpha[i, j, 0] = b1
            alpha[i, j, 1] = b2
    return u_k, alpha


@njit(cache=True, parallel=True)
def sl_apply(u_next, x1min, x2min, h1, h2, hvals, alpha, dt, f_k):
    """Evaluate the one-step recursion with a prescribed control field."""
    n1, n2 = u_next.shape
    out = np.empty((n1, n2))
    for i in prange(n1):
        xi = x1min + i * h1
        hx = hvals[i]
        for j in range(n2):
            xj = x2min + j * h2
            a1 = alpha[i, j, 0]
            a2 = alpha[i, j, 1]
            out[i, j] = (
                0.5 * dt * (a1 * a1 + a2 * a2)
                + _bilinear(u_next, x1min, x2min, h1, h2, xi + dt * a1, xj + dt * hx * a2)
                + dt * f_k[i, j]
            )
    return out


@njit(cache=True)
def bump_sum_grid(pos, w, eps, x1min, x2min, h1, h2, n1, n2):
    """sum_i w_i rho_eps(node - x_i) on every grid node."""
    out = np.zeros((n1, n2))
    norm = 4.0 / (math.pi * eps * eps)
    for p in range(pos.shape[0]):
        c1 = pos[p, 0]
        c2 = pos[p, 1]
        ilo = max(int(math.ceil((c1 - eps - x1min) / h1)), 0)
        ihi = min(int(math.floor((c1 + eps - x1min) / h1)), n1 - 1)
        jlo = max(int(math.ceil((c2 - eps - x2min) / h2)), 0)
        jhi = min(int(math.floor((c2 + eps - x2min) / h2)), n2 - 1)
        for i in range(ilo, ihi + 1):
            d1 = x1min + i * h1 - c1
            for j in range(jlo, jhi + 1):
                d2 = x2min + j * h2 - c2
                s = (d1 * d1 + d2 * d2) / (eps * eps)
                if s < 1.0:
                    q = 1.0 - s
                    out[i, j] += w[p] * norm * q * q * q
    return out


@njit(cache=True)
def bump_grad_sum(x1, x2, pos, w, eps):
    """Gradient at one point of sum_i w_i rho_eps(x - x_i)."""
    norm = 4.0 / (math.pi * eps * eps)
    e2 = eps * eps
    g1 = 0.0
    g2 = 0.0
    for p in range(pos.shape[0]):
        z1 = x1 - pos[p, 0]
        z2 = x2 - pos[p, 1]
        s = (z1 * z1 + z2 * z2) / e2
        if s < 1.0:
            q = 1.0 - s
            c = -6.0 * norm * q * q / e2 * w[p]
            g1 += c * z1
            g2 += c * z2
    return g1, g2
