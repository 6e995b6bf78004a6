"""
Riemannian geometry on charts
=============================

Metrics are vectorised evaluators ``(N, n) -> (N, n, n)``. Christoffel symbols
use the layout ``Gamma[..., k, i, j]`` for :math:`\\Gamma^k_{ij}`.

Conformal presets ``lambda(x) I`` carry analytic derivatives. With
``phi = log(lambda) / 2``,

.. math::

    \\Gamma^k_{ij} = \\delta_{ik}\\partial_j\\phi + \\delta_{jk}\\partial_i\\phi
                    - \\delta_{ij}\\partial_k\\phi .

Any other metric goes through central differences (default ``h = 1e-3``).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ._numerics import central_jacobian
from .atlas import RESIDUAL_TOL, Domain, FiniteGroupAction
from .errors import PointTooCloseToBoundary, UnsupportedValence

FD_STEP = 1e-3
SPD_TOL = 1e-12


class MetricField:
    """Riemannian metric on a chart.

    Parameters
    ----------
    kind : str
        ``flat``, ``sphere``, ``hyperbolic``, ``polynomial`` or ``callable``.
    dim : int
    evaluator : callable, optional
        ``(N, n) -> (N, n, n)``; required for ``polynomial`` and ``callable``.
    domain : Domain, optional
        Where the metric is defined. Used for boundary-margin checks.
    """

    def __init__(self, kind: str, dim: int, evaluator=None, domain: Domain | None = None,
                 chart: str | None = None, spec=None):
        self.kind, self.dim, self.domain, self.chart = kind, int(dim), domain, chart
        self._eval = evaluator
        self.spec = spec
        if kind not in ("flat", "sphere", "hyperbolic", "polynomial", "callable"):
            raise ValueError(f"unknown metric kind {kind!r}")
        if kind in ("polynomial", "callable") and evaluator is None:
            raise ValueError(f"{kind} metric needs an evaluator")

    # presets --------------------------------------------------------------------
    @classmethod
    def flat(cls, dim: int = 2, domain=None):
        return cls("flat", dim, domain=domain)

    @classmethod
    def sphere(cls, dim: int = 2, domain=None):
        return cls("sphere", dim, domain=domain)

    @classmethod
    def hyperbolic(cls, dim: int = 2, domain=None):
        return cls("hyperbolic", dim, domain=domain if domain is not None else Domain.disk(1.0, dim=dim))

    @classmethod
    def polynomial(cls, entries, domain=None):
        """``entries[i][j]`` is a list of ``(coef, exponents)`` terms; the matrix is symmetrised."""
        from .lifts import PolynomialLift
        n = len(entries)
        comps = [entries[i][j] for i in range(n) for j in range(n)]
        poly = PolynomialLift(comps, dim_in=n)

        def ev(pts):
            g = poly(pts).reshape(-1, n, n)
            return (g + np.swapaxes(g, -1, -2)) / 2

        return cls("polynomial", n, ev, domain=domain, spec=entries)

    @classmethod
    def from_callable(cls, fun, dim: int, domain=None):
        return cls("callable", dim, fun, domain=domain)

    @classmethod
    def preset(cls, name: str, dim: int = 2, domain=None):
        return {"flat": cls.flat, "sphere": cls.sphere, "hyperbolic": cls.hyperbolic}[name](dim, domain)

    # evaluation -------------------------------------------------------------------
    @property
    def conformal(self) -> bool:
        return self.kind in ("flat", "sphere", "hyperbolic")

    @property
    def is_flat(self) -> bool:
        return self.kind == "flat"

    @property
    def analytic(self) -> bool:
        return self.conformal

    def factor(self, pts) -> np.ndarray:
        p = np.atleast_2d(np.asarray(pts, float))
        r2 = (p * p).sum(-1)
        if self.kind == "flat":
            return np.ones(len(p))
        if self.kind == "sphere":
            return 4.0 / (1 + r2) ** 2
        return 4.0 / (1 - r2) ** 2

    def dphi(self, pts) -> np.ndarray:
        """Gradient of ``log(factor) / 2``."""
        p = np.atleast_2d(np.asarray(pts, float))
        r2 = (p * p).sum(-1, keepdims=True)
        if self.kind == "flat":
            return np.zeros_like(p)
        if self.kind == "sphere":
            return -2 * p / (1 + r2)
        return 2 * p / (1 - r2)

    def __call__(self, pts) -> np.ndarray:
        p = np.atleast_2d(np.asarray(pts, float))
        if self.conformal:
            return self.factor(p)[:, None, None] * np.eye(self.dim)
        return np.asarray(self._eval(p), float).reshape(len(p), self.dim, self.dim)

    def derivative(self, pts, h: float = FD_STEP) -> np.ndarray:
        """``dg[..., k, i, j] = d_k g_ij``; analytic for presets."""
        p = np.atleast_2d(np.asarray(pts, float))
        n = self.dim
        if self.conformal:
            lam = self.factor(p)
            return (2 * lam[:, None] * self.dphi(p))[:, :, None, None] * np.eye(n)
        flat = lambda q: self(q).reshape(len(q), n * n)  # noqa: E731
        jac = central_jacobian(flat, p, h)  # (N, n*n, n)
        return np.moveaxis(jac.reshape(len(p), n, n, n), -1, 1)

    def to_dict(self):
        d = {"kind": self.kind, "dim": self.dim}
        if self.kind == "polynomial":
            d["entries"] = self.spec
        return d


def _check_margin(metric: MetricField, pts, h: float):
    if metric.domain is None:
        return
    d = metric.domain.boundary_distance(pts)
    if np.any(d < 2 * h):
        bad = np.atleast_2d(pts)[int(np.argmin(d))]
        raise PointTooCloseToBoundary(f"point {bad.tolist()} is within 2h = {2 * h:g} of the metric domain boundary")


def christoffel(metric: MetricField, pts, h: float = FD_STEP, mode: str = "auto") -> np.ndarray:
    """Levi-Civita symbols ``Gamma[..., k, i, j]`` at ``pts``.

    ``mode`` is ``analytic`` (presets only), ``fd`` or ``auto`` (analytic when available).
    """
    p = np.atleast_2d(np.asarray(pts, float))
    n = metric.dim
    if mode == "auto":
        mode = "analytic" if metric.analytic else "fd"
    if mode == "analytic":
        if not metric.analytic:
            raise ValueError(f"no analytic Christoffel symbols for a {metric.kind} metric")
        d = metric.dphi(p)
        eye = np.eye(n)
        return (np.einsum("ik,nj->nkij", eye, d) + np.einsum("jk,ni->nkij", eye, d)
                - np.einsum("ij,nk->nkij", eye, d))
    _check_margin(metric, p, h)
    g = metric(p)
    ginv = np.linalg.inv(g)
    dg = metric.derivative(p, h) if not metric.conformal else _fd_metric_derivative(metric, p, h)
    # lower[l, i, j] = (d_i g_lj + d_j g_li - d_l g_ij) / 2
    lower = 0.5 * (np.einsum("nilj->nlij", dg) + np.einsum("njli->nlij", dg) - dg)
    gam = np.einsum("nkl,nlij->nkij", ginv, lower)
    return 0.5 * (gam + np.swapaxes(gam, -1, -2))


def _fd_metric_derivative(metric, p, h):
    n = metric.dim
    flat = lambda q: metric(q).reshape(len(q), n * n)  # noqa: E731
    return np.moveaxis(central_jacobian(flat, p, h).reshape(len(p), n, n, n), -1, 1)


def metric_compatibility_residual(metric: MetricField, pts, h: float = FD_STEP, mode: str = "auto") -> float:
    """``max |d_k g_ij - Gamma^l_ki g_lj - Gamma^l_kj g_il|``.

    The metric derivative is analytic for presets in analytic mode and central
    differences otherwise.
    """
    p = np.atleast_2d(np.asarray(pts, float))
    gam = christoffel(metric, p, h, mode)
    g = metric(p)
    if mode == "fd" or not metric.analytic:
        dg = _fd_metric_derivative(metric, p, h)
    else:
        dg = metric.derivative(p)
    rhs = np.einsum("nlki,nlj->nkij", gam, g) + np.einsum("nlkj,nil->nkij", gam, g)
    return float(np.abs(dg - rhs).max())


def is_spd(metric: MetricField, pts, tol: float = SPD_TOL) -> tuple[bool, float, float]:
    """Symmetry residual and minimum eigenvalue over ``pts``."""
    g = metric(pts)
    sym = float(np.abs(g - np.swapaxes(g, -1, -2)).max())
    lo = float(np.linalg.eigvalsh((g + np.swapaxes(g, -1, -2)) / 2).min())
    return sym < 1e-12 and lo > tol, sym, lo


def covariant_derivative(metric: MetricField, X, Y, pts, h: float = 1e-5, fd_h: float = FD_STEP) -> np.ndarray:
    """``(nabla_X Y)^k = X^i d_i Y^k + Gamma^k_ij X^i Y^j`` for vectorised fields ``X``, ``Y``."""
    p = np.atleast_2d(np.asarray(pts, float))
    x, y = X(p), Y(p)
    dy = central_jacobian(Y, p, h)
    return np.einsum("nki,ni->nk", dy, x) + np.einsum("nkij,ni,nj->nk", christoffel(metric, p, fd_h), x, y)


def tensor_covariant_derivative(metric: MetricField, T, p_up: int, q_down: int, pts,
                                h: float = 1e-5, fd_h: float = FD_STEP) -> np.ndarray:
    """``nabla T`` with the derivative index appended last.

    ``T`` maps ``(N, n)`` to ``(N,) + (n,) * (p_up + q_down)``; contravariant slots first.
    """
    p = np.atleast_2d(np.asarray(pts, float))
    n = metric.dim
    val = np.asarray(T(p), float)
    N = len(p)
    rank = p_up + q_down
    flat = lambda q: np.asarray(T(q), float).reshape(len(q), -1)  # noqa: E731
    dT = central_jacobian(flat, p, h).reshape((N,) + (n,) * rank + (n,))
    gam = christoffel(metric, p, fd_h)  # (N, k, i, j): Gamma^k_ij
    out = dT.copy()
    for s in range(rank):
        # move slot s to the end, contract, move back
        moved = np.moveaxis(val, 1 + s, -1)  # (N, ..., l)
        if s < p_up:
            term = np.einsum("n...l,nalm->n...am", moved, gam)  # Gamma^a_{m l} T^{..l..}
            out += np.moveaxis(term, -2, 1 + s)
        else:
            term = np.einsum("n...l,nlam->n...am", moved, gam)  # Gamma^l_{m a} T_{..l..}
            out -= np.moveaxis(term, -2, 1 + s)
    return out


# ---------------------------------------------------------------------------
# Tensors and group actions
# ---------------------------------------------------------------------------

def pullback_tensor(A, T, p_up: int, q_down: int) -> np.ndarray:
    """``A^* T``: covariant slots contract with ``A``, contravariant slots with ``A^{-1}``.

    For a bilinear form this is ``A^T T A``.
    """
    A = np.asarray(A, float)
    Ainv = np.linalg.inv(A)
    out = np.asarray(T, float)
    lead = out.ndim - p_up - q_down
    for s in range(p_up + q_down):
        M = Ainv if s < p_up else A.T
        out = np.moveaxis(np.tensordot(out, M, axes=([lead + s], [1])), -1, lead + s)
    return out


def metric_invariance_residual(metric: MetricField, action: FiniteGroupAction, pts=None,
                               domain: Domain | None = None, m: int = 17) -> float:
    """``max |g^T g(g x) g - g(x)|`` (entrywise max) over ``pts`` and the group."""
    if pts is None:
        dom = domain or metric.domain or Domain.box([-1.0] * metric.dim, [1.0] * metric.dim)
        pts = dom.sample(m)
    p = np.atleast_2d(np.asarray(pts, float))
    g0 = metric(p)
    worst = 0.0
    for G in action.elements:
        gg = np.einsum("ai,nab,bj->nij", G, metric(p @ G.T), G)
        worst = max(worst, float(np.abs(gg - g0).max()))
    return worst


def christoffel_equivariance_residual(metric: MetricField, action: FiniteGroupAction, pts,
                                      h: float = FD_STEP, mode: str = "auto") -> float:
    """Compares ``Gamma(x)`` with ``Gamma(g x)`` pulled back by the linear isometry ``g``."""
    p = np.atleast_2d(np.asarray(pts, float))
    g0 = christoffel(metric, p, h, mode)
    worst = 0.0
    for G in action.elements:
        gx = christoffel(metric, p @ G.T, h, mode)
        pulled = np.einsum("ka,nabc,bi,cj->nkij", np.linalg.inv(G), gx, G, G)
        worst = max(worst, float(np.abs(pulled - g0).max()))
    return worst


@dataclass
class ModelTensor:
    """Constant tensor ``T0`` of valence ``(p, q)`` on ``R^n``; contravariant slots first."""

    components: np.ndarray
    p: int = 0
    q: int = 2

    def __post_init__(self):
        self.components = np.asarray(self.components, float)
        if self.components.ndim != self.p + self.q:
            raise ValueError("component array rank must equal p + q")
        if len(set(self.components.shape)) > 1:
            raise ValueError("all slots must have the same dimension")

    @property
    def dim(self) -> int:
        return self.components.shape[0] if self.components.ndim else 0

    @classmethod
    def euclidean(cls, n: int = 2):
        return cls(np.eye(n))

    @classmethod
    def minkowski(cls, n: int = 2):
        return cls(np.diag([-1.0] + [1.0] * (n - 1)))

    @classmethod
    def area_form(cls):
        return cls(np.array([[0.0, 1.0], [-1.0, 0.0]]))

    @classmethod
    def volume_form(cls, n: int = 3):
        t = np.zeros((n,) * n)
        for perm in itertools.permutations(range(n)):
            inv = sum(1 for a in range(n) for b in range(a + 1, n) if perm[a] > perm[b])
            t[perm] = -1.0 if inv % 2 else 1.0
        return cls(t, 0, n)

    def pullback(self, A) -> "ModelTensor":
        return ModelTensor(pullback_tensor(A, self.components, self.p, self.q), self.p, self.q)

    def is_symmetric_bilinear(self) -> bool:
        return self.p == 0 and self.q == 2 and np.allclose(self.components, self.components.T, atol=1e-12)


def stabilizer_membership(A, T0: ModelTensor, tol: float = RESIDUAL_TOL) -> tuple[bool, float]:
    """Whether ``A^* T0 = T0``; residual is the entrywise max of the difference."""
    res = float(np.abs(T0.pullback(A).components - T0.components).max())
    return res < tol, res


def infinitesimal_action_matrix(T0: ModelTensor) -> np.ndarray:
    """Matrix of ``a -> d/dt (exp(t a))^* T0`` at ``t = 0``; columns indexed by the entries of ``a``."""
    n = T0.dim
    cols = []
    for k in range(n * n):
        a = np.zeros((n, n))
        a.flat[k] = 1.0
        out = np.zeros_like(T0.components)
        for s in range(T0.p + T0.q):
            M = -a if s < T0.p else a.T
            out += np.moveaxis(np.tensordot(T0.components, M, axes=([s], [1])), -1, s)
        cols.append(out.ravel())
    return np.array(cols).T


def stabilizer_algebra_dim(T0: ModelTensor, tol: float = RESIDUAL_TOL) -> int:
    """Dimension of the Lie algebra of ``G(T0)``: null space of the infinitesimal action."""
    M = infinitesimal_action_matrix(T0)
    s = np.linalg.svd(M, compute_uv=False)
    return int(M.shape[1] - np.sum(s > tol))


@dataclass
class OrbiTensorField:
    """Tensor field on a chart, ``evaluator: (N, n) -> (N,) + (n,) * (p + q)``."""

    chart: str
    p: int
    q: int
    evaluator: object
    action: FiniteGroupAction | None = None
    _residual: float | None = field(default=None, repr=False)

    def __call__(self, pts):
        return np.asarray(self.evaluator(np.atleast_2d(np.asarray(pts, float))), float)

    @classmethod
    def from_metric(cls, metric: MetricField, chart: str = "U", action=None):
        return cls(chart, 0, 2, metric, action)

    def invariance_residual(self, pts) -> float:
        """``max |g^* T(g x) - T(x)|`` over the chart group."""
        if self.action is None:
            return 0.0
        p = np.atleast_2d(np.asarray(pts, float))
        t0 = self(p)
        worst = 0.0
        for G in self.action.elements:
            pulled = pullback_tensor(G, self(p @ G.T), self.p, self.q)
            worst = max(worst, float(np.abs(pulled - t0).max()))
        self._residual = worst
        return worst


def _signature(mats, tol: float = SPD_TOL) -> np.ndarray:
    ev = np.linalg.eigvalsh(mats)
    return np.stack([(ev > tol).sum(-1), (ev < -tol).sum(-1), (np.abs(ev) <= tol).sum(-1)], -1)


def is_zero_deformable(tensor_field, T0: ModelTensor, pts) -> bool:
    """Whether a frame carrying ``T_x`` to ``T0`` exists at every sample.

    Only symmetric 2-covariant tensors are supported; by Sylvester's law such a
    frame exists iff the signatures agree.
    """
    if isinstance(tensor_field, MetricField):
        tensor_field = OrbiTensorField.from_metric(tensor_field)
    if not T0.is_symmetric_bilinear() or (tensor_field.p, tensor_field.q) != (0, 2):
        raise UnsupportedValence("0-deformability is implemented for symmetric 2-covariant tensors only")
    vals = tensor_field(pts)
    if not np.allclose(vals, np.swapaxes(vals, -1, -2), atol=1e-12):
        raise UnsupportedValence("tensor field is not symmetric")
    sig = _signature(vals)
    return bool(np.all(sig == _signature(T0.components[None])[0]))


def adapted_frame(T_x, T0: ModelTensor) -> np.ndarray:
    """A matrix ``P`` with ``P^T T_x P = T0`` for symmetric forms of equal signature."""
    if not T0.is_symmetric_bilinear():
        raise UnsupportedValence("adapted frames are implemented for symmetric 2-covariant tensors only")
    T_x = np.asarray(T_x, float)
    lx, qx = np.linalg.eigh(T_x)
    l0, q0 = np.linalg.eigh(T0.components)
    if not np.array_equal(_signature(T_x[None])[0], _signature(T0.components[None])[0]):
        raise ValueError("signatures differ; no adapted frame exists")
    # eigh sorts ascending, so sign patterns line up
    sx = np.where(np.abs(lx) > SPD_TOL, 1 / np.sqrt(np.abs(lx) + (np.abs(lx) <= SPD_TOL)), 1.0)
    s0 = np.sqrt(np.abs(l0))
    return qx @ np.diag(sx * s0) @ q0.T
