"""Batched small-matrix helpers.

All routines broadcast over arbitrary leading batch dimensions; the trailing
one or two axes hold chart/frame components (dimension n <= 3 throughout).
"""

from __future__ import annotations

import numpy as np


def mat_vec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(..., n, n) @ (..., n) -> (..., n)."""
    return np.einsum("...ij,...j->...i", m, v)


def dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean dot product over the last axis."""
    return np.einsum("...i,...i->...", a, b)


def dot_g(g: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Metric inner product  a^T g b  over the last axis."""
    return np.einsum("...i,...ij,...j->...", a, g, b)


def outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(..., n) x (..., n) -> (..., n, n)."""
    return a[..., :, None] * b[..., None, :]


def transpose(m: np.ndarray) -> np.ndarray:
    return np.swapaxes(m, -1, -2)


def max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def gram_matrix(g: np.ndarray, u: np.ndarray) -> np.ndarray:
    """U^T g U for a batch of frames (columns are frame vectors)."""
    return np.einsum("...ai,...ab,...bj->...ij", u, g, u)


def gram_schmidt(g: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Metric Gram-Schmidt on the columns of ``u``.

    Stable for nearly orthonormal inputs; used after every integrator step to
    project the frame back onto the metric orthonormal group.
    """
    n = u.shape[-1]
    cols = []
    for i in range(n):
        w = u[..., :, i]
        for v in cols:
            w = w - dot_g(g, v, w)[..., None] * v
        norm = np.sqrt(dot_g(g, w, w))
        cols.append(w / norm[..., None])
    return np.stack(cols, axis=-1)


def frame_inverse(g: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse of a g-orthonormal frame: U^{-1} = U^T g."""
    return np.einsum("...ai,...ab->...ib", u, g)


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def expm_so(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of antisymmetric 2x2 / 3x3 matrices (closed form)."""
    n = a.shape[-1]
    if n == 1:
        return np.ones_like(a)
    if n == 2:
        th = a[..., 1, 0]
        c, s = np.cos(th), np.sin(th)
        out = np.empty_like(a)
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
        return out
    if n == 3:
        # Rodrigues with axial vector w, exp(A) = I + sinc(t) A + (1-cos t)/t^2 A^2.
        w = np.stack([a[..., 2, 1], a[..., 0, 2], a[..., 1, 0]], axis=-1)
        t = np.sqrt(dot(w, w))
        small = t < 1e-8
        ts = np.where(small, 1.0, t)
        c1 = np.where(small, 1.0 - t**2 / 6.0, np.sin(ts) / ts)
        c2 = np.where(small, 0.5 - t**2 / 24.0, (1.0 - np.cos(ts)) / ts**2)
        eye = np.broadcast_to(np.eye(3), a.shape)
        return eye + c1[..., None, None] * a + c2[..., None, None] * (a @ a)
    raise ValueError(f"expm_so implemented for n <= 3, got n={n}")


def rotation_to_pole(p: np.ndarray) -> np.ndarray:
    """SO(3) matrices mapping unit vectors ``p`` to (0, 0, 1).

    Rotation about the axis p x e3; falls back to a rotation about e1 when p
    is (anti)parallel to e3.
    """
    e3 = np.zeros_like(p)
    e3[..., 2] = 1.0
    axis = np.cross(p, e3)
    s = np.sqrt(dot(axis, axis))
    c = p[..., 2]
    degenerate = s < 1e-12
    axis = np.where(degenerate[..., None], np.array([1.0, 0.0, 0.0]), axis)
    s_safe = np.where(degenerate, 1.0, s)
    axis = axis / np.where(degenerate, 1.0, s_safe)[..., None]
    # Rodrigues: R = I + sin(t) K + (1-cos t) K^2 with sin t = s, cos t = c.
    k = np.zeros(p.shape[:-1] + (3, 3))
    k[..., 0, 1] = -axis[..., 2]
    k[..., 0, 2] = axis[..., 1]
    k[..., 1, 0] = axis[..., 2]
    k[..., 1, 2] = -axis[..., 0]
    k[..., 2, 0] = -axis[..., 1]
    k[..., 2, 1] = axis[..., 0]
    sin_t = np.where(degenerate, 0.0, s)
    cos_t = np.where(degenerate, np.sign(c), c)
    eye = np.broadcast_to(np.eye(3), k.shape)
    r = eye + sin_t[..., None, None] * k + (1.0 - cos_t)[..., None, None] * (k @ k)
    return r
