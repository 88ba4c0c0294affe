"""Shared finite-difference oracles for the geometry tests.

These recompute connection and curvature data from the metric alone, so the
closed-form chart implementations are checked against an independent route.
"""

import numpy as np
import pytest


def fd_christoffel(chart, x, h=1e-6):
    """Christoffel symbols from central differences of the metric."""
    n = chart.dim
    x = np.asarray(x, dtype=float)
    dg = np.zeros((n, n, n))  # dg[l, i, j] = d g_ij / d x_l
    for l in range(n):
        e = np.zeros(n)
        e[l] = h
        dg[l] = (chart.metric(x + e) - chart.metric(x - e)) / (2 * h)
    ginv = np.linalg.inv(chart.metric(x))
    gam = np.zeros((n, n, n))
    for k in range(n):
        for i in range(n):
            for j in range(n):
                gam[k, i, j] = 0.5 * sum(
                    ginv[k, l] * (dg[i, j, l] + dg[j, i, l] - dg[l, i, j])
                    for l in range(n)
                )
    return gam


def fd_riemann_apply(chart, x, a, b, c, h=1e-5):
    """R(a,b)c from central differences of the Christoffel symbols.

    Convention: R(X,Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X,Y] Z,
    i.e. R^l_{kij} = d_i Gam^l_{jk} - d_j Gam^l_{ik} + Gam^l_{ie} Gam^e_{jk}
    - Gam^l_{je} Gam^e_{ik} applied to a^i b^j c^k.
    """
    n = chart.dim
    x = np.asarray(x, dtype=float)
    dgam = np.zeros((n, n, n, n))  # dgam[i, k, a, b] = d_i Gam^k_{ab}
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        dgam[i] = (fd_christoffel(chart, x + e) - fd_christoffel(chart, x - e)) / (2 * h)
    gam = fd_christoffel(chart, x)
    riem = (
        np.einsum("iljk->lkij", dgam)
        - np.einsum("jlik->lkij", dgam)
        + np.einsum("lie,ejk->lkij", gam, gam)
        - np.einsum("lje,eik->lkij", gam, gam)
    )
    return np.einsum("lkij,i,j,k->l", riem, a, b, c)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
