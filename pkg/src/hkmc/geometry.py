"""Model Riemannian manifolds in explicit coordinate charts.

Every catalog manifold is presented in a chart conformal to the flat one,
g = e^{2*phi} * delta, which gives a single closed form for the Christoffel
symbols and, in two dimensions, for the Gauss curvature K = -e^{-2*phi} *
(flat Laplacian of phi).  Charts expose the metric, connection, curvature
tensors, geodesic distance data (model manifolds only) and a smoothed
exhaustion function; all accessors broadcast over a leading batch of points.

Sign conventions, fixed here because they propagate into every estimator:
constant curvature kappa means R(X,Y)Z = kappa*(<Y,Z>X - <X,Z>Y) and
Ric = (n-1)*kappa*g.  The frame curvature operator is the matrix
(R_U(e1,e2))_{ab} = <R(U e1, U e2) U e_b, U e_a>_g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidFrameError, UnsupportedManifoldError
from .linops import (
    dot,
    dot_g,
    frame_inverse,
    gram_matrix,
    gram_schmidt,
    mat_vec,
    max_abs,
    outer,
    rotation_to_pole,
)

FRAME_TOL = 1e-8


class ManifoldChart:
    """Base chart: conformal factor hooks plus model-manifold extras.

    Subclasses provide ``log_factor`` and its first three derivative arrays;
    constant-curvature models set ``const_curvature`` so curvature accessors
    skip the conformal formulas.  Chart objects are immutable after
    construction and safe to share across workers.
    """

    kind: str = "abstract"
    dim: int = 0
    const_curvature: float | None = None
    recenter_threshold: float | None = None

    # -- conformal factor hooks -------------------------------------------------

    def log_factor(self, x):
        raise NotImplementedError

    def log_factor_d1(self, x):
        raise NotImplementedError

    def log_factor_d2(self, x):
        raise NotImplementedError

    def log_factor_d3(self, x):
        raise NotImplementedError

    # -- metric and connection --------------------------------------------------

    def metric(self, x) -> np.ndarray:
        lam2 = np.exp(2.0 * self.log_factor(x))
        eye = np.eye(self.dim)
        return lam2[..., None, None] * eye

    def inverse_metric(self, x) -> np.ndarray:
        lam2 = np.exp(-2.0 * self.log_factor(x))
        eye = np.eye(self.dim)
        return lam2[..., None, None] * eye

    def christoffel(self, x) -> np.ndarray:
        """Gamma[..., k, i, j] = Gamma^k_{ij} for g = e^{2 phi} delta."""
        dphi = self.log_factor_d1(x)
        n = self.dim
        eye = np.eye(n)
        gam = (
            np.einsum("ij,...k->...kij", eye, -dphi)
            + np.einsum("jk,...i->...kij", eye, dphi)
            + np.einsum("ik,...j->...kij", eye, dphi)
        )
        return gam

    def christoffel_quad(self, x, u, v) -> np.ndarray:
        """Gamma(u, v)^k contracted directly from the conformal closed form."""
        dphi = self.log_factor_d1(x)
        return (
            dot(dphi, u)[..., None] * v
            + dot(dphi, v)[..., None] * u
            - dot(u, v)[..., None] * dphi
        )

    def christoffel_columns(self, x, u_mat, w) -> np.ndarray:
        """Gamma(U_i, w) for every frame column, shape (..., n, n).

        Hot path of the SDE integrator: avoids materialising the full
        Christoffel array per step.
        """
        dphi = self.log_factor_d1(x)
        c1 = np.einsum("...b,...bi->...i", dphi, u_mat)
        c3 = np.einsum("...b,...bi->...i", w, u_mat)
        return (
            w[..., :, None] * c1[..., None, :]
            + dot(dphi, w)[..., None, None] * u_mat
            - dphi[..., :, None] * c3[..., None, :]
        )

    # -- curvature ---------------------------------------------------------------

    def curvature_scale(self, x) -> np.ndarray:
        """Pointwise sectional curvature (exact for all catalog manifolds)."""
        if self.const_curvature is not None:
            return np.full(np.shape(x)[:-1], float(self.const_curvature))
        if self.dim != 2:
            raise UnsupportedManifoldError(
                "variable curvature only implemented in dimension 2"
            )
        d2 = self.log_factor_d2(x)
        lap = d2[..., 0, 0] + d2[..., 1, 1]
        return -np.exp(-2.0 * self.log_factor(x)) * lap

    def curvature_scale_grad(self, x) -> np.ndarray:
        """Coordinate gradient dK (zero on constant-curvature models)."""
        if self.const_curvature is not None:
            return np.zeros(np.shape(x))
        d2 = self.log_factor_d2(x)
        d3 = self.log_factor_d3(x)
        lap = d2[..., 0, 0] + d2[..., 1, 1]
        dlap = d3[..., 0, 0, :] + d3[..., 1, 1, :]
        dphi = self.log_factor_d1(x)
        return np.exp(-2.0 * self.log_factor(x)) * (
            2.0 * dphi * lap[..., None] - dlap
        )

    def riemann_apply(self, x, a, b, c) -> np.ndarray:
        """R(a,b)c in chart components."""
        g = self.metric(x)
        k = self.curvature_scale(x)
        return k[..., None] * (
            dot_g(g, b, c)[..., None] * a - dot_g(g, a, c)[..., None] * b
        )

    def ricci_matrix(self, x) -> np.ndarray:
        """Ric-sharp as a (1,1)-tensor in chart components: (n-1)K(x) Id."""
        k = self.curvature_scale(x)
        eye = np.eye(self.dim)
        return (self.dim - 1) * k[..., None, None] * eye

    def grad_ricci_apply(self, x, a, b) -> np.ndarray:
        """(nabla_a Ric-sharp)(b); nonzero only with variable curvature."""
        dk = self.curvature_scale_grad(x)
        return (self.dim - 1) * dot(dk, a)[..., None] * b

    # -- model-manifold distance data ---------------------------------------------

    def distance(self, x, y) -> np.ndarray:
        raise UnsupportedManifoldError(f"{self.kind}: no closed-form distance")

    def grad_half_dist_sq(self, x, y) -> np.ndarray:
        raise UnsupportedManifoldError(f"{self.kind}: no closed-form distance")

    def hess_half_dist_sq(self, x, y) -> np.ndarray:
        raise UnsupportedManifoldError(f"{self.kind}: no closed-form distance")

    def dist_cot(self, d) -> np.ndarray:
        """The comparison factor d*ct_kappa(d) entering Hess(d^2/2)."""
        raise UnsupportedManifoldError(f"{self.kind}: no closed-form distance")

    def _hess_half_from_radial(self, x, y) -> np.ndarray:
        g = self.metric(x)
        d = self.distance(x, y)
        dct = self.dist_cot(d)
        grad_half = self.grad_half_dist_sq(x, y)
        # dr-flat = g grad(d); bounded away from d=0 via grad(d^2/2)/d.
        small = d < 1e-8
        dsafe = np.where(small, 1.0, d)
        drb = mat_vec(g, grad_half) / dsafe[..., None]
        h = dct[..., None, None] * g + (1.0 - dct)[..., None, None] * outer(drb, drb)
        if np.any(small):
            h = np.where(small[..., None, None], g, h)
        return h

    # -- exhaustion ---------------------------------------------------------------

    def exhaustion(self, x) -> np.ndarray:
        """Smoothed half-distance hd with |hd - d(x,o)/2| < 1, 0 < |grad hd|_g <= 1."""
        raise NotImplementedError

    def exhaustion_grad_norm(self, x) -> np.ndarray:
        raise NotImplementedError

    # -- chart bookkeeping ----------------------------------------------------------

    def in_domain(self, x) -> np.ndarray:
        return np.ones(np.shape(x)[:-1], dtype=bool)

    def needs_recenter(self, x) -> np.ndarray:
        if self.recenter_threshold is None:
            return np.zeros(np.shape(x)[:-1], dtype=bool)
        return dot(x, x) > self.recenter_threshold**2

    def recenter(self, x, u):
        raise UnsupportedManifoldError(f"{self.kind}: no recentering isometry")


class EuclideanChart(ManifoldChart):
    kind = "euclidean"
    const_curvature = 0.0

    def __init__(self, dim: int):
        if dim < 1:
            raise ConfigError("euclidean: dim must be >= 1")
        self.dim = dim

    def log_factor(self, x):
        return np.zeros(np.shape(x)[:-1])

    def log_factor_d1(self, x):
        return np.zeros(np.shape(x))

    def log_factor_d2(self, x):
        return np.zeros(np.shape(x) + (self.dim,))

    def log_factor_d3(self, x):
        return np.zeros(np.shape(x) + (self.dim, self.dim))

    def metric(self, x):
        return np.broadcast_to(np.eye(self.dim), np.shape(x)[:-1] + (self.dim, self.dim)).copy()

    def inverse_metric(self, x):
        return self.metric(x)

    def christoffel(self, x):
        n = self.dim
        return np.zeros(np.shape(x)[:-1] + (n, n, n))

    def christoffel_quad(self, x, u, v):
        return np.zeros(np.broadcast_shapes(np.shape(u), np.shape(v)))

    def christoffel_columns(self, x, u_mat, w):
        return np.zeros(np.shape(u_mat))

    def distance(self, x, y):
        diff = np.asarray(x) - np.asarray(y)
        return np.sqrt(dot(diff, diff))

    def grad_half_dist_sq(self, x, y):
        return np.asarray(x) - np.asarray(y) + np.zeros(np.shape(x))

    def hess_half_dist_sq(self, x, y):
        return self.metric(x)

    def dist_cot(self, d):
        return np.ones_like(np.asarray(d, dtype=float))

    def exhaustion(self, x):
        return 0.5 * np.sqrt(dot(x, x) + 1.0)

    def exhaustion_grad_norm(self, x):
        r = np.sqrt(dot(x, x))
        return r / (2.0 * np.sqrt(r * r + 1.0))


class SphereChart(ManifoldChart):
    """Unit 2-sphere in the stereographic chart (projection from the south pole).

    The chart origin is the north pole; |xi| = 1 is the equator.  A recentering
    rotation is triggered once |xi| exceeds ``recenter_threshold``, mapping the
    current point back to the origin and transporting frames by the rotation
    differential.
    """

    kind = "sphere2"
    dim = 2
    const_curvature = 1.0
    recenter_threshold = 1.5

    def log_factor(self, x):
        return np.log(2.0) - np.log1p(dot(x, x))

    def log_factor_d1(self, x):
        s = dot(x, x)
        return -2.0 * np.asarray(x) / (1.0 + s)[..., None]

    def log_factor_d2(self, x):
        s = dot(x, x)
        eye = np.eye(2)
        return (
            -2.0 * eye / (1.0 + s)[..., None, None]
            + 4.0 * outer(x, x) / ((1.0 + s) ** 2)[..., None, None]
        )

    def log_factor_d3(self, x):
        x = np.asarray(x)
        s = dot(x, x)
        eye = np.eye(2)
        p2 = ((1.0 + s) ** 2)[..., None, None, None]
        p3 = ((1.0 + s) ** 3)[..., None, None, None]
        t = 4.0 * np.einsum("ij,...k->...ijk", eye, x) / p2
        t += 4.0 * np.einsum("ik,...j->...ijk", eye, x) / p2
        t += 4.0 * np.einsum("jk,...i->...ijk", eye, x) / p2
        t -= 16.0 * np.einsum("...i,...j,...k->...ijk", x, x, x) / p3
        return t

    # -- embedding helpers -------------------------------------------------------

    @staticmethod
    def embed(x) -> np.ndarray:
        x = np.asarray(x)
        s = dot(x, x)
        denom = (1.0 + s)[..., None]
        p = np.concatenate([2.0 * x, (1.0 - s)[..., None]], axis=-1)
        return p / denom

    @staticmethod
    def unembed(p) -> np.ndarray:
        return p[..., :2] / (1.0 + p[..., 2])[..., None]

    @staticmethod
    def embed_jacobian(x) -> np.ndarray:
        """d(embed)/d(xi), shape (..., 3, 2); J^T J = lambda^2 I (conformal)."""
        x = np.asarray(x)
        s = dot(x, x)
        one = (1.0 + s)[..., None, None]
        dnum = np.zeros(np.shape(x)[:-1] + (3, 2))
        dnum[..., 0, 0] = 2.0
        dnum[..., 1, 1] = 2.0
        dnum[..., 2, :] = -2.0 * x
        p = SphereChart.embed(x)
        return (dnum - 2.0 * np.einsum("...a,...j->...aj", p, x)) / one

    def push_tangent(self, x, v) -> np.ndarray:
        return np.einsum("...aj,...j->...a", self.embed_jacobian(x), v)

    def pull_tangent(self, x, w) -> np.ndarray:
        """Inverse of push_tangent for w tangent to the sphere at embed(x)."""
        jac = self.embed_jacobian(x)
        lam2 = np.exp(2.0 * self.log_factor(x))
        return np.einsum("...aj,...a->...j", jac, w) / lam2[..., None]

    # -- distance data --------------------------------------------------------------

    def distance(self, x, y):
        c = np.clip(dot(self.embed(x), self.embed(y)), -1.0, 1.0)
        return np.arccos(c)

    def grad_half_dist_sq(self, x, y):
        p, q = self.embed(x), self.embed(y)
        c = np.clip(dot(p, q), -1.0, 1.0)
        d = np.arccos(c)
        # d * arccos'(c) * dc, with d/sin(d) kept smooth through d = 0.
        sin_d = np.sqrt(np.maximum(1.0 - c * c, 0.0))
        ratio = np.where(d < 1e-8, 1.0, d / np.where(sin_d == 0.0, 1.0, sin_d))
        dc = np.einsum("...aj,...a->...j", self.embed_jacobian(x), q)
        ginv = self.inverse_metric(x)
        return -ratio[..., None] * mat_vec(ginv, dc)

    def hess_half_dist_sq(self, x, y):
        return self._hess_half_from_radial(x, y)

    def dist_cot(self, d):
        d = np.asarray(d, dtype=float)
        return np.where(d < 1e-8, 1.0, d / np.tan(np.where(d < 1e-8, 1.0, d)))

    def exhaustion(self, x):
        # 0.5*sqrt(3 - 2 cos d(x, o)): smooth at the antipode, bounded by ~1.12.
        p3 = self.embed(x)[..., 2]
        return 0.5 * np.sqrt(3.0 - 2.0 * p3)

    def exhaustion_grad_norm(self, x):
        p3 = self.embed(x)[..., 2]
        sin_d = np.sqrt(np.maximum(1.0 - p3 * p3, 0.0))
        return sin_d / (2.0 * np.sqrt(3.0 - 2.0 * p3))

    def recenter(self, x, u):
        """Rotate the configuration so x sits at the chart origin."""
        p = self.embed(x)
        rot = rotation_to_pole(p)
        iso = SphereIsometry(rotation=rot)
        x_new = np.zeros_like(np.asarray(x, dtype=float))
        w = np.einsum("...ab,...bj->...aj", rot, np.einsum("...aj->...aj", self._frame_embed(x, u)))
        u_new = 0.5 * w[..., :2, :]
        return x_new, u_new, iso

    def _frame_embed(self, x, u):
        jac = self.embed_jacobian(x)
        return np.einsum("...aj,...ji->...ai", jac, u)


@dataclass(frozen=True)
class SphereIsometry:
    """Rotation isometry produced by sphere recentering."""

    rotation: np.ndarray

    def point(self, xi) -> np.ndarray:
        p = SphereChart.embed(xi)
        return SphereChart.unembed(np.einsum("...ab,...b->...a", self.rotation, p))

    def vector(self, xi, v) -> np.ndarray:
        chart = SphereChart()
        w = np.einsum("...ab,...b->...a", self.rotation, chart.push_tangent(xi, v))
        return chart.pull_tangent(self.point(xi), w)


class HyperbolicChart(ManifoldChart):
    """Hyperbolic space (curvature -1) in the Poincare ball chart."""

    kind = "hyperbolic"
    const_curvature = -1.0

    def __init__(self, dim: int):
        if dim not in (2, 3):
            raise ConfigError("hyperbolic: dim must be 2 or 3")
        self.dim = dim
        self.kind = f"hyperbolic{dim}"

    def log_factor(self, x):
        return np.log(2.0) - np.log1p(-dot(x, x))

    def log_factor_d1(self, x):
        s = dot(x, x)
        return 2.0 * np.asarray(x) / (1.0 - s)[..., None]

    def log_factor_d2(self, x):
        s = dot(x, x)
        eye = np.eye(self.dim)
        return (
            2.0 * eye / (1.0 - s)[..., None, None]
            + 4.0 * outer(x, x) / ((1.0 - s) ** 2)[..., None, None]
        )

    def log_factor_d3(self, x):
        x = np.asarray(x)
        s = dot(x, x)
        eye = np.eye(self.dim)
        p2 = ((1.0 - s) ** 2)[..., None, None, None]
        p3 = ((1.0 - s) ** 3)[..., None, None, None]
        t = 4.0 * np.einsum("ij,...k->...ijk", eye, x) / p2
        t += 4.0 * np.einsum("ik,...j->...ijk", eye, x) / p2
        t += 4.0 * np.einsum("jk,...i->...ijk", eye, x) / p2
        t += 16.0 * np.einsum("...i,...j,...k->...ijk", x, x, x) / p3
        return t

    def in_domain(self, x):
        return dot(x, x) < 1.0 - 1e-12

    def _cosh_dist(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        diff = x - y
        px = 1.0 - dot(x, x)
        py = 1.0 - dot(y, y)
        return 1.0 + 2.0 * dot(diff, diff) / (px * py)

    def distance(self, x, y):
        return np.arccosh(np.maximum(self._cosh_dist(x, y), 1.0))

    def grad_half_dist_sq(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        a = self._cosh_dist(x, y)
        d = np.arccosh(np.maximum(a, 1.0))
        sinh_d = np.sqrt(np.maximum(a * a - 1.0, 0.0))
        ratio = np.where(d < 1e-8, 1.0, d / np.where(sinh_d == 0.0, 1.0, sinh_d))
        px = 1.0 - dot(x, x)
        py = 1.0 - dot(y, y)
        q = dot(x - y, x - y)
        da = (4.0 * (x - y) * px[..., None] + 4.0 * q[..., None] * x) / (
            px * px * py
        )[..., None]
        ginv = self.inverse_metric(x)
        return ratio[..., None] * mat_vec(ginv, da)

    def hess_half_dist_sq(self, x, y):
        return self._hess_half_from_radial(x, y)

    def dist_cot(self, d):
        d = np.asarray(d, dtype=float)
        return np.where(d < 1e-8, 1.0, d / np.tanh(np.where(d < 1e-8, 1.0, d)))

    def exhaustion(self, x):
        d = self.distance(x, np.zeros(self.dim))
        return 0.5 * np.sqrt(d * d + 1.0)

    def exhaustion_grad_norm(self, x):
        d = self.distance(x, np.zeros(self.dim))
        return d / (2.0 * np.sqrt(d * d + 1.0))


@dataclass(frozen=True)
class BumpProfile:
    """Compactly supported radial bump  A * exp(1 - 1/(1 - |x-c|^2/R^2)).

    Gaussian-shaped but exactly zero outside the disk of radius R about the
    center; closed-form derivatives through third order feed the conformal
    curvature formulas.
    """

    amplitude: float = 0.3
    center: tuple = (0.0, 0.0)
    radius: float = 1.5

    def _rho(self, x):
        delta = np.asarray(x) - np.asarray(self.center)
        return dot(delta, delta) / self.radius**2, delta

    def _psi_derivs(self, rho):
        """psi(rho) = A e^{1 - 1/(1-rho)} and d/d rho derivatives, zero for rho >= 1."""
        inside = rho < 1.0 - 1e-12
        om = np.where(inside, 1.0 - rho, 1.0)
        psi = np.where(inside, self.amplitude * np.exp(1.0 - 1.0 / om), 0.0)
        u1 = np.where(inside, -1.0 / om**2, 0.0)
        u2 = np.where(inside, -2.0 / om**3, 0.0)
        u3 = np.where(inside, -6.0 / om**4, 0.0)
        p1 = psi * u1
        p2 = psi * (u1 * u1 + u2)
        p3 = psi * (u1**3 + 3.0 * u1 * u2 + u3)
        return psi, p1, p2, p3

    def value(self, x):
        rho, _ = self._rho(x)
        return self._psi_derivs(rho)[0]

    def d1(self, x):
        rho, delta = self._rho(x)
        _, p1, _, _ = self._psi_derivs(rho)
        drho = 2.0 * delta / self.radius**2
        return p1[..., None] * drho

    def d2(self, x):
        rho, delta = self._rho(x)
        _, p1, p2, _ = self._psi_derivs(rho)
        drho = 2.0 * delta / self.radius**2
        ddrho = 2.0 * np.eye(2) / self.radius**2
        return p2[..., None, None] * outer(drho, drho) + p1[..., None, None] * ddrho

    def d3(self, x):
        rho, delta = self._rho(x)
        _, p1, p2, p3 = self._psi_derivs(rho)
        dr = 2.0 * delta / self.radius**2
        dd = 2.0 * np.eye(2) / self.radius**2
        t = p3[..., None, None, None] * np.einsum("...i,...j,...k->...ijk", dr, dr, dr)
        t += p2[..., None, None, None] * (
            np.einsum("ij,...k->...ijk", dd, dr)
            + np.einsum("ik,...j->...ijk", dd, dr)
            + np.einsum("jk,...i->...ijk", dd, dr)
        )
        return t


class ConformalPlaneChart(ManifoldChart):
    """R^2 with metric e^{2 phi} delta for a compactly supported bump phi.

    Provides the one catalog manifold with nonzero nabla Ric-sharp.  No
    closed-form distance; the exhaustion uses the Euclidean radius, valid while
    min(phi) > -log 2 so that |grad hd|_g stays below 1.
    """

    kind = "conformal_plane"
    dim = 2
    const_curvature = None

    def __init__(self, profile: BumpProfile | None = None):
        self.profile = profile if profile is not None else BumpProfile()

    def log_factor(self, x):
        return self.profile.value(x)

    def log_factor_d1(self, x):
        return self.profile.d1(x)

    def log_factor_d2(self, x):
        return self.profile.d2(x)

    def log_factor_d3(self, x):
        return self.profile.d3(x)

    def exhaustion(self, x):
        return 0.5 * np.sqrt(dot(x, x) + 1.0)

    def exhaustion_grad_norm(self, x):
        r = np.sqrt(dot(x, x))
        return np.exp(-self.log_factor(x)) * r / (2.0 * np.sqrt(r * r + 1.0))


# -- catalog ------------------------------------------------------------------------


def make_chart(kind: str, params: dict | None = None) -> ManifoldChart:
    """Build a catalog manifold from its config key."""
    params = dict(params or {})
    if kind == "euclidean":
        return EuclideanChart(int(params.pop("dim", 2)))
    if kind == "sphere2":
        return SphereChart()
    if kind == "hyperbolic2":
        return HyperbolicChart(2)
    if kind == "hyperbolic3":
        return HyperbolicChart(3)
    if kind == "conformal_plane":
        profile = BumpProfile(
            amplitude=float(params.pop("amplitude", 0.3)),
            center=tuple(params.pop("center", (0.0, 0.0))),
            radius=float(params.pop("radius", 1.5)),
        )
        return ConformalPlaneChart(profile)
    raise ConfigError(f"unknown manifold kind: {kind!r}")


# -- frames --------------------------------------------------------------------------


def default_frame(chart: ManifoldChart, x) -> np.ndarray:
    """g-orthonormal frame from Gram-Schmidt of the coordinate basis."""
    g = chart.metric(x)
    eye = np.broadcast_to(np.eye(chart.dim), g.shape).copy()
    return gram_schmidt(g, eye)


def random_frame(chart: ManifoldChart, x, rng: np.random.Generator) -> np.ndarray:
    g = chart.metric(x)
    raw = rng.standard_normal(g.shape)
    return gram_schmidt(g, raw)


def check_frame(chart: ManifoldChart, x, u, tol: float = FRAME_TOL) -> None:
    g = chart.metric(x)
    err = max_abs(gram_matrix(g, u) - np.eye(chart.dim))
    if err > tol:
        raise InvalidFrameError(f"frame orthonormality defect {err:.3e} > {tol:.1e}")


def frame_curvature_op(chart: ManifoldChart, x, u, e1, e2) -> np.ndarray:
    """so(n)-valued operator  U^{-1} R(U e1, U e2) U  of the frame process.

    For the catalog manifolds this reduces to K(x) * (e1 e2^T - e2 e1^T); the
    generic tensor route is kept in tests as an independent oracle.
    """
    check_frame(chart, x, u)
    k = chart.curvature_scale(x)
    e1, e2 = np.asarray(e1, dtype=float), np.asarray(e2, dtype=float)
    return k[..., None, None] * (outer(e1, e2) - outer(e2, e1))


def frame_ricci_op(chart: ManifoldChart, x, u, e) -> np.ndarray:
    """ric_U(e) = U^{-1} Ric-sharp(U e) = (n-1) K(x) e on the catalog."""
    check_frame(chart, x, u)
    k = chart.curvature_scale(x)
    return (chart.dim - 1) * k[..., None] * np.asarray(e, dtype=float)


def grad_ricci_op(chart: ManifoldChart, x, u, e) -> np.ndarray:
    """U^{-1} (nabla Ric-sharp)(U e, U e) in frame components."""
    check_frame(chart, x, u)
    dk = chart.curvature_scale_grad(x)
    ue = mat_vec(u, np.asarray(e, dtype=float))
    return (chart.dim - 1) * dot(dk, ue)[..., None] * np.asarray(e, dtype=float)


def frame_curvature_tensor(chart: ManifoldChart, x, u, e1, e2) -> np.ndarray:
    """Same operator as ``frame_curvature_op`` via the full curvature tensor."""
    g = chart.metric(x)
    uinv = frame_inverse(g, u)
    ue1, ue2 = mat_vec(u, e1), mat_vec(u, e2)
    cols = [
        mat_vec(uinv, chart.riemann_apply(x, ue1, ue2, u[..., :, j]))
        for j in range(chart.dim)
    ]
    return np.stack(cols, axis=-1)


# -- exhaustion domains -----------------------------------------------------------------


@dataclass(frozen=True)
class ExhaustionDomain:
    """Sublevel set D_m = {hd < m} of the smoothed half-distance."""

    chart: ManifoldChart
    m: int

    def contains(self, x) -> np.ndarray:
        return self.chart.exhaustion(x) < self.m


def exhaustion_domains(chart: ManifoldChart, m: int) -> ExhaustionDomain:
    if m < 1:
        raise ConfigError("exhaustion domain index m must be >= 1")
    return ExhaustionDomain(chart=chart, m=m)
