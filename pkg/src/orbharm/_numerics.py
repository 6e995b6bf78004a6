"""Finite-difference helpers used across modules."""
from __future__ import annotations

import numpy as np


def central_jacobian(fun, x, h):
    """Jacobian of a vectorised map ``fun: (N, n) -> (N, m)`` at ``x`` (N, n). Returns (N, m, n)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[-1]
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def central_hessian(fun, x, h):
    """Second derivatives (N, m, n, n) by central differences with step ``h``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[-1]
    f0 = fun(x)
    out = np.empty(f0.shape + (n, n))
    eye = np.eye(n) * h
    for i in range(n):
        fp = fun(x + eye[i])
        fm = fun(x - eye[i])
        out[..., i, i] = (fp - 2 * f0 + fm) / h**2
        for j in range(i + 1, n):
            fpp = fun(x + eye[i] + eye[j])
            fpm = fun(x + eye[i] - eye[j])
            fmp = fun(x - eye[i] + eye[j])
            fmm = fun(x - eye[i] - eye[j])
            v = (fpp - fpm - fmp + fmm) / (4 * h**2)
            out[..., i, j] = v
            out[..., j, i] = v
    return out


def clean(a, eps=1e-15):
    """Snap float noise (|v| < eps) to exact zero; used for generated rotation matrices."""
    a = np.array(a, dtype=float)
    a[np.abs(a) < eps] = 0.0
    return a + 0.0
