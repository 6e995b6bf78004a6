"""
Tension fields, energy and equivariant heat flow
================================================

In chart coordinates the tension of a lift ``f`` is

.. math::

    \\tau^a = g^{ij}\\left(\\partial_i\\partial_j f^a - \\Gamma^k_{ij}\\partial_k f^a
              + \\Gamma'^a_{bc}(f)\\,\\partial_i f^b\\,\\partial_j f^c\\right).

The heat flow works on one :class:`~orbharm.lifts.GridLift`. The frozen nodes
carry the Dirichlet data. Each explicit Euler step is followed by averaging
over the chart group, ``f(x) <- |G|^{-1} sum_g theta(g)^{-1} f(g x)``.
On polar grids the step is chosen per node from the local stencil, since the
innermost ring would otherwise force a global step of order ``(dr dtheta)^2``.

Two code paths evaluate tension on grids. The flow uses assembled sparse
difference operators. :func:`tension` on a ``GridLift`` uses the array
stencils of :meth:`GridLift.node_derivatives`. Agreement between them is
part of the test suite.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from ._numerics import central_hessian, central_jacobian
from .atlas import Domain, FiniteGroupAction
from .errors import Diverged, NonEquivariantBoundary, PointTooCloseToBoundary
from .geometry import MetricField, christoffel
from .lifts import GridLift, Lift, radial_initial_grid
from .orbmap import CompleteOrbifoldMap
from .report import write_csv

log = logging.getLogger(__name__)

HARMONIC_TOL = 1e-6


# ---------------------------------------------------------------------------
# Tension
# ---------------------------------------------------------------------------

@dataclass
class TensionField:
    chart: str
    points: np.ndarray
    values: np.ndarray
    grid: GridLift | None = None
    mask: np.ndarray | None = None

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=-1)

    @property
    def sup_norm(self) -> float:
        nrm = self.norms
        return float(nrm.max()) if nrm.size else 0.0

    def equivariance_residual(self, action: FiniteGroupAction, theta_matrices, tol: float = 1e-9) -> float:
        """``max |tau(g x) - theta(g) tau(x)|`` over points whose images are also points."""
        lookup = {tuple(np.round(p, 9)): i for i, p in enumerate(self.points)}
        worst = 0.0
        for G, T in zip(action.elements, theta_matrices):
            for i, p in enumerate(self.points):
                j = lookup.get(tuple(np.round(G @ p, 9)))
                if j is not None:
                    worst = max(worst, float(np.linalg.norm(self.values[j] - T @ self.values[i])))
        return worst

    def to_csv(self, path, comment: str = "tension field; chart coordinates, target-coordinate components"):
        n, m = self.points.shape[1], self.values.shape[1]
        cols = [f"x{i}" for i in range(n)] + [f"tau{a}" for a in range(m)] + ["norm"]
        rows = np.concatenate([self.points, self.values, self.norms[:, None]], axis=1) if len(self.points) \
            else np.zeros((0, n + m + 1))
        return write_csv(path, cols, rows, comment=comment)


def tension_formula(J, H, gs, gam_s, gam_t) -> np.ndarray:
    """Local trace formula from derivative arrays.

    ``J`` (N, m, n), ``H`` (N, m, n, n), ``gs`` source metric (N, n, n),
    ``gam_s`` (N, n, n, n) and ``gam_t`` (N, m, m, m) at the image points.
    """
    ginv = np.linalg.inv(gs)
    inner = H - np.einsum("nkij,nak->naij", gam_s, J) + np.einsum("nabc,nbi,ncj->naij", gam_t, J, J)
    return np.einsum("nij,naij->na", ginv, inner)


def _resolve(fmap, chart: str | None):
    if isinstance(fmap, CompleteOrbifoldMap):
        cid = chart or fmap.source.charts[0].id
        cl = fmap.chart_lift(cid)
        return cid, cl.lift, fmap.source[cid].domain
    return chart or "U", fmap, None


def tension(fmap, source_metric: MetricField, target_metric: MetricField, points=None,
            chart: str | None = None, h: float = 1e-4, fd_h: float = 1e-3, m: int = 17) -> TensionField:
    """Tension field of a lift.

    ``fmap`` is a :class:`CompleteOrbifoldMap` or a bare :class:`Lift`.
    Derivatives are analytic for exact lifts and central differences (step ``h``)
    otherwise. For grid lifts with ``points=None``, node stencils are used at
    every interior node.
    """
    cid, lift, dom = _resolve(fmap, chart)
    if isinstance(lift, GridLift) and points is None:
        J, Hs, valid = lift.node_derivatives()
        valid = valid & ~lift.frozen
        mask = valid.reshape(-1)
        pts = lift.nodes()[mask]
        J = J.reshape((-1,) + J.shape[len(lift.shape):])[mask]
        Hs = Hs.reshape((-1,) + Hs.shape[len(lift.shape):])[mask]
        fx = lift.flat_values()[mask]
        vals = tension_formula(J, Hs, source_metric(pts), christoffel(source_metric, pts, fd_h),
                               christoffel(target_metric, fx, fd_h))
        return TensionField(cid, pts, vals, lift, valid)
    if points is None:
        if dom is None:
            raise ValueError("points are required when evaluating a bare lift")
        points = dom.sample(m, shrink=0.9)
    p = np.atleast_2d(np.asarray(points, float))
    if dom is not None and not lift.exact and np.any(dom.boundary_distance(p) < 2 * h):
        raise PointTooCloseToBoundary(f"tension sample within 2h = {2 * h:g} of the chart boundary")
    if lift.exact:
        J, Hs = lift.jacobian(p), lift.hessian(p)
    else:
        J, Hs = central_jacobian(lift, p, h), central_hessian(lift, p, h)
    vals = tension_formula(J, Hs, source_metric(p), christoffel(source_metric, p, fd_h),
                           christoffel(target_metric, lift(p), fd_h))
    return TensionField(cid, p, vals)


def is_harmonic(fmap, source_metric, target_metric, tol: float = HARMONIC_TOL, points=None,
                chart: str | None = None, m: int = 17, **kw) -> tuple[bool, float]:
    """``sup |tau| < tol`` over an interior sample grid (or grid nodes)."""
    if isinstance(fmap, CompleteOrbifoldMap) and chart is None:
        sups = [tension(fmap, source_metric, target_metric, points, c.id, m=m, **kw).sup_norm
                for c in fmap.source.charts]
        sup = max(sups)
    else:
        sup = tension(fmap, source_metric, target_metric, points, chart, m=m, **kw).sup_norm
    return sup < tol, sup


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------

def _quadrature(domain: Domain, order: int = 48):
    """Gauss-Legendre nodes and weights on a box, or Gauss in radius times trapezoid in angle on a 2-D disk."""
    x, w = np.polynomial.legendre.leggauss(order)
    if domain.kind == "box":
        lo, hi = domain.bounds
        axes = [(lo[i] + (x + 1) * (hi[i] - lo[i]) / 2, w * (hi[i] - lo[i]) / 2) for i in range(domain.dim)]
        pts = np.stack(np.meshgrid(*[a for a, _ in axes], indexing="ij"), -1).reshape(-1, domain.dim)
        wts = np.prod(np.stack(np.meshgrid(*[b for _, b in axes], indexing="ij"), -1).reshape(-1, domain.dim), -1)
        return pts, wts
    if domain.dim != 2:
        raise ValueError("disk quadrature implemented for 2-D disks")
    R = domain.radius
    r = (x + 1) * R / 2
    wr = w * R / 2
    k = 2 * order
    t = 2 * np.pi * np.arange(k) / k
    rr, tt = np.meshgrid(r, t, indexing="ij")
    pts = np.stack([rr * np.cos(tt), rr * np.sin(tt)], -1).reshape(-1, 2) + np.array(domain.center)
    wts = (wr[:, None] * rr * (2 * np.pi / k)).reshape(-1)
    return pts, wts


def energy_density(J, gs, gt) -> np.ndarray:
    """``1/2 g^ij h_ab d_i f^a d_j f^b sqrt(det g)``."""
    ginv = np.linalg.inv(gs)
    dens = 0.5 * np.einsum("nij,nab,nai,nbj->n", ginv, gt, J, J)
    return dens * np.sqrt(np.linalg.det(gs))


def _edge_energy(values, frozen, spacing) -> float:
    act = ~frozen
    n = frozen.ndim
    total = 0.0
    for ax in range(n):
        d = np.diff(values, axis=ax)
        lo = [slice(None)] * n
        hi = [slice(None)] * n
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        touch = act[tuple(lo)] | act[tuple(hi)]
        scale = np.prod(spacing) / spacing[ax] ** 2
        total += 0.5 * scale * float((d[touch] ** 2).sum())
    return total


def node_weights(grid: GridLift) -> np.ndarray:
    """Quadrature weight of every node (cell area around it)."""
    if grid.kind == "cartesian":
        return np.full(grid.nodes().shape[0], float(np.prod(grid.spacing)))
    r = np.linalg.norm(grid.nodes(), axis=-1)
    return np.where(r > 0, r * grid.dr * grid.dtheta, np.pi * grid.dr**2 / 4 / (grid.m - 1))


def grid_energy(grid: GridLift, source_metric: MetricField, target_metric: MetricField) -> float:
    """Discrete energy of a grid lift over the whole lattice.

    For flat metrics on a Cartesian lattice this is the edge sum
    ``1/2 sum |f_i - f_j|^2 h^(n-2)`` over edges touching an active node. The
    Cartesian flow with averaging does not increase it when ``dt < h^2/4``.
    Otherwise it is a node quadrature with stencil derivatives.
    """
    if grid.kind == "cartesian" and source_metric.is_flat and target_metric.is_flat:
        return _edge_energy(grid.values, grid.frozen, grid.spacing)
    J, _, valid = grid.node_derivatives()
    mask = (valid & ~grid.frozen).reshape(-1)
    pts = grid.nodes()[mask]
    J = J.reshape((-1,) + J.shape[len(grid.shape):])[mask]
    dens = energy_density(J, source_metric(pts), target_metric(grid.flat_values()[mask]))
    return float((dens * node_weights(grid)[mask]).sum())


def energy(fmap, source_metric: MetricField, target_metric: MetricField, chart: str | None = None,
           domain: Domain | None = None, order: int = 48, fundamental: bool = True) -> float:
    """Dirichlet energy of a lift on one chart.

    With ``fundamental=True`` the chart integral is divided by the order of the
    chart group, giving the energy of the quotient piece.
    """
    cid, lift, dom = _resolve(fmap, chart)
    dom = domain or dom
    group = fmap.source[cid].action.order if isinstance(fmap, CompleteOrbifoldMap) else 1
    if isinstance(lift, GridLift):
        e = grid_energy(lift, source_metric, target_metric)
    else:
        if dom is None:
            raise ValueError("a domain is required for a bare lift")
        pts, wts = _quadrature(dom, order)
        J = lift.jacobian(pts) if lift.exact else central_jacobian(lift, pts, 1e-5)
        e = float((energy_density(J, source_metric(pts), target_metric(lift(pts))) * wts).sum())
    return e / group if fundamental else e


# ---------------------------------------------------------------------------
# Sparse difference operators for the flow
# ---------------------------------------------------------------------------

def _diff1(m: int, h: float):
    main = np.zeros(m)
    up = np.full(m - 1, 1 / (2 * h))
    lo = np.full(m - 1, -1 / (2 * h))
    up[0] = 0.0
    lo[-1] = 0.0
    return sps.diags([lo, main, up], [-1, 0, 1], format="csr")


def _diff2(m: int, h: float):
    main = np.full(m, -2 / h**2)
    off = np.full(m - 1, 1 / h**2)
    main[[0, -1]] = 0.0
    up, lo = off.copy(), off.copy()
    up[0] = 0.0
    lo[-1] = 0.0
    return sps.diags([lo, main, up], [-1, 0, 1], format="csr")


def _kron_axis(ops_1d, n, axis, m):
    eye = sps.identity(m, format="csr")
    mats = [ops_1d if k == axis else eye for k in range(n)]
    out = mats[0]
    for mat in mats[1:]:
        out = sps.kron(out, mat, format="csr")
    return out


def grid_operators(grid: GridLift):
    """Sparse first and second derivative operators on the lattice nodes.

    Returns ``(D, D2)`` with ``D[i]`` and ``D2[i][j]`` acting on flattened node
    values (rows of nodes without a full stencil are zero).
    """
    if grid.kind == "cartesian":
        n, m = grid.dim_in, grid.m
        D = [_kron_axis(_diff1(m, grid.spacing[i]), n, i, m) for i in range(n)]
        D2 = [[None] * n for _ in range(n)]
        for i in range(n):
            D2[i][i] = _kron_axis(_diff2(m, grid.spacing[i]), n, i, m)
            for j in range(i + 1, n):
                D2[i][j] = D2[j][i] = (D[i] @ D[j]).tocsr()
        return D, D2
    return _polar_operators(grid)


def _polar_operators(grid: GridLift):
    m, M = grid.m, grid.m - 1
    dr, dt = grid.dr, grid.dtheta
    N = m * M
    idx = np.arange(N).reshape(m, M)
    # radial operators on rows 1..m-2
    rows, cols, v1, v2 = [], [], [], []
    for i in range(1, m - 1):
        for j in range(M):
            r0 = idx[i, j]
            rows += [r0, r0, r0]
            cols += [idx[i + 1, j], idx[i - 1, j], r0]
            v1 += [1 / (2 * dr), -1 / (2 * dr), 0.0]
            v2 += [1 / dr**2, 1 / dr**2, -2 / dr**2]
    Dr = sps.csr_matrix((v1, (rows, cols)), shape=(N, N))
    Drr = sps.csr_matrix((v2, (rows, cols)), shape=(N, N))
    rows, cols, v1, v2 = [], [], [], []
    for i in range(1, m):
        for j in range(M):
            r0 = idx[i, j]
            jp, jm = idx[i, (j + 1) % M], idx[i, (j - 1) % M]
            rows += [r0, r0, r0]
            cols += [jp, jm, r0]
            v1 += [1 / (2 * dt), -1 / (2 * dt), 0.0]
            v2 += [1 / dt**2, 1 / dt**2, -2 / dt**2]
    Dt = sps.csr_matrix((v1, (rows, cols)), shape=(N, N))
    Dtt = sps.csr_matrix((v2, (rows, cols)), shape=(N, N))
    Drt = (Dr @ Dt).tocsr()
    r = np.repeat(grid.radii, M)
    th = np.tile(grid.angles, m)
    c, s = np.cos(th), np.sin(th)
    inner = (r > 0) & (r < grid.radii[-1] - 1e-14)
    ir = np.where(inner, 1 / np.where(r > 0, r, 1), 0.0)
    dg = lambda a: sps.diags(np.where(inner, a, 0.0))  # noqa: E731
    Dx = dg(c) @ Dr - dg(s * ir) @ Dt
    Dy = dg(s) @ Dr + dg(c * ir) @ Dt
    Hxx = (dg(c * c) @ Drr - dg(2 * c * s * ir) @ Drt + dg(s * s * ir**2) @ Dtt
           + dg(s * s * ir) @ Dr + dg(2 * c * s * ir**2) @ Dt)
    Hyy = (dg(s * s) @ Drr + dg(2 * c * s * ir) @ Drt + dg(c * c * ir**2) @ Dtt
           + dg(c * c * ir) @ Dr - dg(2 * c * s * ir**2) @ Dt)
    Hxy = (dg(c * s) @ Drr + dg((c * c - s * s) * ir) @ Drt - dg(c * s * ir**2) @ Dtt
           - dg(c * s * ir) @ Dr - dg((c * c - s * s) * ir**2) @ Dt)
    # origin rows from the Fourier modes of the first ring
    ang = grid.angles
    ring = idx[1]
    o_rows, o_cols = [], []
    vals = {k: [] for k in ("x", "y", "xx", "yy", "xy")}
    for j0 in range(M):
        r0 = idx[0, j0]
        for j, col in enumerate(ring):
            o_rows.append(r0)
            o_cols.append(col)
            cj, sj = np.cos(ang[j]), np.sin(ang[j])
            c2, s2 = np.cos(2 * ang[j]), np.sin(2 * ang[j])
            lap = 4 / (M * dr**2)
            vals["x"].append(2 * cj / (M * dr))
            vals["y"].append(2 * sj / (M * dr))
            vals["xx"].append((lap + 8 * c2 / (M * dr**2)) / 2)
            vals["yy"].append((lap - 8 * c2 / (M * dr**2)) / 2)
            vals["xy"].append(4 * s2 / (M * dr**2))
        o_rows.append(r0)
        o_cols.append(r0)
        vals["x"].append(0.0)
        vals["y"].append(0.0)
        vals["xx"].append(-2 / dr**2)
        vals["yy"].append(-2 / dr**2)
        vals["xy"].append(0.0)
    O = {k: sps.csr_matrix((v, (o_rows, o_cols)), shape=(N, N)) for k, v in vals.items()}
    D = [(Dx + O["x"]).tocsr(), (Dy + O["y"]).tocsr()]
    D2 = [[(Hxx + O["xx"]).tocsr(), (Hxy + O["xy"]).tocsr()],
          [(Hxy + O["xy"]).tocsr(), (Hyy + O["yy"]).tocsr()]]
    return D, D2


def operator_tension(F, pts, ops, source_metric, target_metric, gs_cache=None, fd_h: float = 1e-3,
                     lap=None):
    """Tension at every node from the assembled operators.

    Returns ``(tau, J)``. Rows without a full stencil hold meaningless values
    and must be masked by the caller.
    """
    D, D2 = ops
    n = pts.shape[1]
    flat = source_metric.is_flat and target_metric.is_flat
    if flat and lap is not None:
        return lap @ F, None
    J = np.stack([D[i] @ F for i in range(n)], -1)
    if flat:
        return sum(D2[i][i] @ F for i in range(n)), J
    H = np.stack([np.stack([D2[i][j] @ F for j in range(n)], -1) for i in range(n)], -2)
    if gs_cache is None:
        gs_cache = (source_metric(pts), christoffel(source_metric, pts, fd_h))
    gs, gam_s = gs_cache
    return tension_formula(J, H, gs, gam_s, christoffel(target_metric, F, fd_h)), J


# ---------------------------------------------------------------------------
# Flow
# ---------------------------------------------------------------------------

@dataclass
class FlowParams:
    dt: float | None = None
    max_iter: int = 20000
    tol: float = HARMONIC_TOL
    grid: int = 65
    average: bool = True
    growth_window: int = 50
    clamp_fraction: float = 0.01
    record_every: int = 1
    local_step: bool | None = None

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")

    def step(self, grid: GridLift) -> float:
        return self.dt if self.dt is not None else 0.2 * grid.min_spacing**2

    def uses_local_step(self, grid: GridLift) -> bool:
        return grid.kind == "polar" if self.local_step is None else bool(self.local_step)

    def node_steps(self, grid: GridLift, source_metric: MetricField) -> np.ndarray:
        """Per-node steps ``0.8 / d_i`` with ``d_i`` the diagonal of the discrete Laplacian.

        ``d_i`` is scaled by the largest eigenvalue of ``g^{-1}``. On a Cartesian
        lattice with the flat metric this is the uniform default ``0.2 h^2``.
        An explicit ``dt`` caps every node.
        """
        pts = grid.nodes()
        if grid.kind == "cartesian":
            d = np.full(len(pts), float(np.sum(2 / np.asarray(grid.spacing) ** 2)))
        else:
            r = np.linalg.norm(pts, axis=-1)
            # origin rows: the ring-mean stencil has diagonal 4 / dr^2
            ang = np.divide(2.0, (r * grid.dtheta) ** 2, out=np.full(len(r), 2 / grid.dr**2), where=r > 0)
            d = 2 / grid.dr**2 + ang
        lam = np.linalg.eigvalsh(np.linalg.inv(source_metric(pts)))[:, -1]
        steps = 0.8 / (d * lam)
        return np.minimum(steps, self.dt) if self.dt is not None else steps


@dataclass
class FlowDiagnostics:
    energy: list = field(default_factory=list)
    sup_tau: list = field(default_factory=list)
    equivariance: list = field(default_factory=list)
    clamped: list = field(default_factory=list)
    iterations: int = 0
    reason: str = ""
    dt: float = 0.0

    def rows(self):
        return [(k, e, s, q, c) for k, (e, s, q, c) in
                enumerate(zip(self.energy, self.sup_tau, self.equivariance, self.clamped))]

    def to_csv(self, path):
        return write_csv(path, ["iteration", "energy", "sup_tau", "equivariance_residual", "clamped"],
                         self.rows(), comment="flow diagnostics; energy in chart units, sup_tau is the "
                                               "max Euclidean norm of tau over active nodes")

    def to_dict(self):
        return {"iterations": self.iterations, "reason": self.reason, "dt": self.dt,
                "final_energy": self.energy[-1] if self.energy else None,
                "final_sup_tau": self.sup_tau[-1] if self.sup_tau else None,
                "max_equivariance_residual": max(self.equivariance) if self.equivariance else 0.0,
                "max_clamped": max(self.clamped) if self.clamped else 0}


class _Symmetrizer:
    """Group averaging on lattice nodes.

    Each group element becomes a sparse matrix ``P_g`` with ``(P_g f)(x) = f(g x)``.
    It is a permutation when ``g`` maps nodes to nodes and bilinear
    interpolation weights otherwise.
    """

    def __init__(self, grid: GridLift, action: FiniteGroupAction, theta_mats):
        self.grid = grid
        self.theta = np.asarray(theta_mats, float)
        self.theta_inv = np.array([np.linalg.inv(t) for t in self.theta])
        nodes = grid.nodes()
        N = len(nodes)
        key = {tuple(np.round(p, 9)): i for i, p in enumerate(nodes)}
        self.P = []
        self.exact = []
        self.perm = []
        for G in action.elements:
            img = nodes @ G.T
            perm = np.array([key.get(tuple(np.round(p, 9)), -1) for p in img])
            if np.all(perm >= 0):
                self.P.append(sps.csr_matrix((np.ones(N), (np.arange(N), perm)), shape=(N, N)))
                self.exact.append(True)
                self.perm.append(perm)
            else:
                self.P.append(self._interp_matrix(img))
                self.exact.append(False)
                self.perm.append(None)

    def _interp_matrix(self, pts):
        g = self.grid
        N = len(g.nodes())
        cols_all, w_all, rows_all = [], [], []
        if g.kind == "cartesian":
            n = g.dim_in
            lo = np.array([a[0] for a in g.axes])
            s = (pts - lo) / g.spacing
            i0 = np.clip(np.floor(s).astype(int), 0, g.m - 2)
            t = s - i0
            for corner in range(2**n):
                bits = [(corner >> k) & 1 for k in range(n)]
                w = np.ones(len(pts))
                idx = []
                for k, b in enumerate(bits):
                    w = w * (t[:, k] if b else 1 - t[:, k])
                    idx.append(i0[:, k] + b)
                cols_all.append(np.ravel_multi_index(tuple(idx), g.shape))
                w_all.append(w)
                rows_all.append(np.arange(len(pts)))
        else:
            M = g.m - 1
            r = np.hypot(pts[:, 0], pts[:, 1])
            th = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
            sr = r / g.dr
            i0 = np.clip(np.floor(sr).astype(int), 0, g.m - 2)
            tr = sr - i0
            q = th / g.dtheta
            j0 = np.floor(q).astype(int) % M
            tq = q - np.floor(q)
            j1 = (j0 + 1) % M
            for ii, wi in ((i0, 1 - tr), (i0 + 1, tr)):
                for jj, wj in ((j0, 1 - tq), (j1, tq)):
                    cols_all.append(ii * M + jj)
                    w_all.append(wi * wj)
                    rows_all.append(np.arange(len(pts)))
        return sps.csr_matrix((np.concatenate(w_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
                              shape=(len(pts), N))

    def pull(self, k, F, rows=None):
        """``f(g_k x)`` at ``rows`` (all nodes by default)."""
        if self.perm[k] is not None:
            return F[self.perm[k] if rows is None else self.perm[k][rows]]
        out = self.P[k] @ F
        return out if rows is None else out[rows]

    def average(self, F, rows=None):
        acc = 0.0
        for k, Ti in enumerate(self.theta_inv):
            acc = acc + self.pull(k, F, rows) @ Ti.T
        return acc / len(self.P)

    def residual(self, F, rows) -> float:
        """``max |f(g x) - theta(g) f(x)|`` over ``rows`` (active nodes)."""
        worst = 0.0
        for k, T in enumerate(self.theta):
            d = self.pull(k, F, rows) - F[rows] @ T.T
            worst = max(worst, float(np.abs(d).max()) if d.size else 0.0)
        return worst


def _clamp(F, rows, domain: Domain | None):
    if domain is None:
        return 0
    inside = domain.contains(F[rows])
    bad = rows[~inside]
    if len(bad) == 0:
        return 0
    if domain.kind == "disk":
        c = np.array(domain.center)
        d = F[bad] - c
        F[bad] = c + d * ((domain.radius * (1 - 1e-9)) / np.linalg.norm(d, axis=-1))[:, None]
    else:
        lo, hi = domain.bounds
        eps = 1e-9 * (hi - lo)
        F[bad] = np.clip(F[bad], lo + eps, hi - eps)
    return len(bad)


def check_boundary_equivariance(grid: GridLift, action: FiniteGroupAction, theta_mats,
                                boundary: Lift | None = None, tol: float = 1e-9) -> float:
    """Equivariance residual of the Dirichlet data.

    With a ``boundary`` lift the check runs on the exact boundary circle or
    faces. Otherwise it runs on frozen nodes whose group images are nodes.
    """
    if boundary is not None:
        b = grid.domain.boundary_samples(64)
        fb = boundary(b)
        res = max(float(np.abs(boundary(b @ G.T) - fb @ T.T).max())
                  for G, T in zip(action.elements, theta_mats))
    else:
        nodes = grid.nodes()
        key = {tuple(np.round(p, 9)): i for i, p in enumerate(nodes)}
        F = grid.flat_values()
        frozen = np.where(grid.frozen.reshape(-1))[0]
        res = 0.0
        for G, T in zip(action.elements, theta_mats):
            for i in frozen:
                j = key.get(tuple(np.round(G @ nodes[i], 9)))
                if j is not None:
                    res = max(res, float(np.abs(F[j] - T @ F[i]).max()))
    if res > tol:
        raise NonEquivariantBoundary(f"Dirichlet data is not equivariant (residual {res:.3e})")
    return res


def heat_flow(fmap, source_metric: MetricField, target_metric: MetricField,
              params: FlowParams | None = None, chart: str | None = None, action=None,
              theta_mats=None, target_domain: Domain | None = None, boundary: Lift | None = None):
    """Equivariant harmonic map heat flow on a grid lift.

    Parameters
    ----------
    fmap : CompleteOrbifoldMap or GridLift
        Holds the initial state. Frozen nodes carry the Dirichlet data.
    params : FlowParams
    action, theta_mats
        Source group and the target matrices ``theta(g)`` (taken from ``fmap`` when it is a map).
    target_domain : Domain, optional
        Images are clamped into it. Clamping more than 1% of nodes raises Diverged.
    boundary : Lift, optional
        Exact boundary data used for the equivariance check.

    Returns
    -------
    (result, FlowDiagnostics)
        ``result`` has the same type as ``fmap`` and carries the final grid.

    Raises
    ------
    Diverged
        non-finite values, energy growth over ``growth_window`` consecutive
        steps, or too many clamped nodes.
    NonEquivariantBoundary
        the Dirichlet data violates the symmetry.
    """
    params = params or FlowParams()
    if isinstance(fmap, CompleteOrbifoldMap):
        cid = chart or fmap.source.charts[0].id
        cl = fmap.chart_lift(cid)
        grid = cl.lift
        action = fmap.source[cid].action
        theta_mats = fmap.theta_matrices(cid)
        if target_domain is None:
            target_domain = fmap.target[cl.target].domain
    else:
        grid = fmap
    if not isinstance(grid, GridLift):
        raise TypeError("heat flow needs a GridLift state")
    dt = params.step(grid)
    if params.uses_local_step(grid):
        # a column so it broadcasts over the value components
        dt = params.node_steps(grid, source_metric)[:, None]
    diag = FlowDiagnostics(dt=float(np.min(dt)))
    sym = None
    if action is not None and params.average and action.order > 1:
        check_boundary_equivariance(grid, action, theta_mats, boundary)
        sym = _Symmetrizer(grid, action, theta_mats)
    ops = grid_operators(grid)
    _, _, valid = grid.node_derivatives() if grid.kind == "polar" else (None, None, None)
    active = ~grid.frozen
    if grid.kind == "polar":
        active &= valid
    rows = np.where(active.reshape(-1))[0]
    origin_rows = np.arange(grid.m - 1) if grid.kind == "polar" else None
    F = grid.flat_values().copy()
    pts = grid.nodes()
    cache = None
    if not (source_metric.is_flat and target_metric.is_flat):
        cache = (source_metric(pts), christoffel(source_metric, pts))
    growth = 0
    prev_e = None

    def sup_tau(tau):
        t = tau[rows]
        return float(np.linalg.norm(t, axis=-1).max()) if len(t) else 0.0

    edge = grid.kind == "cartesian" and source_metric.is_flat and target_metric.is_flat
    gs_rows = source_metric(pts[rows])
    ginv_rows = np.linalg.inv(gs_rows)
    vol = node_weights(grid)[rows] * np.sqrt(np.linalg.det(gs_rows))

    lap = sum(ops[1][i][i] for i in range(grid.dim_in)).tocsr()
    Dn = ops[0]

    def energy_of(F, J):
        if edge:
            return _edge_energy(F.reshape(grid.values.shape), grid.frozen, grid.spacing)
        if J is None:
            J = np.stack([Dn[i] @ F for i in range(grid.dim_in)], -1)
        Jr = J[rows]
        if target_metric.is_flat:
            dens = 0.5 * np.einsum("nij,nai,naj->n", ginv_rows, Jr, Jr, optimize=True)
        else:
            dens = 0.5 * np.einsum("nij,nab,nai,nbj->n", ginv_rows, target_metric(F[rows]), Jr, Jr,
                                   optimize=True)
        return float((dens * vol).sum())

    k = 0
    while True:
        tau, J = operator_tension(F, pts, ops, source_metric, target_metric, cache, lap=lap)
        s = sup_tau(tau)
        e = energy_of(F, J)
        if not np.isfinite(s) or not np.isfinite(e):
            diag.reason = "diverged"
            raise Diverged(f"non-finite values at iteration {k}", diag)
        diag.energy.append(e)
        diag.sup_tau.append(s)
        if len(diag.equivariance) < len(diag.energy):
            diag.equivariance.append(sym.residual(F, rows) if sym is not None else 0.0)
        if len(diag.clamped) < len(diag.energy):
            diag.clamped.append(0)
        if prev_e is not None and e > prev_e:
            growth += 1
            if growth >= params.growth_window:
                diag.reason = "diverged"
                diag.iterations = k
                raise Diverged(f"energy grew for {growth} consecutive steps (dt={diag.dt:.3e})", diag)
        else:
            growth = 0
        prev_e = e
        if s < params.tol:
            diag.reason = "tolerance"
            break
        if k >= params.max_iter:
            diag.reason = "max_iter"
            break
        F[rows] += (dt[rows] if np.ndim(dt) else dt) * tau[rows]
        if origin_rows is not None:
            F[origin_rows] = F[origin_rows].mean(axis=0)
        if sym is not None:
            F[rows] = sym.average(F, rows)
            diag.equivariance.append(sym.residual(F, rows))
        nclamp = _clamp(F, rows, target_domain)
        diag.clamped.append(nclamp)
        if nclamp > params.clamp_fraction * max(1, len(rows)):
            diag.reason = "diverged"
            diag.iterations = k + 1
            raise Diverged(f"{nclamp} nodes left the target chart at iteration {k + 1}", diag)
        k += 1
    diag.iterations = k
    state = grid.with_values(F)
    log.debug("flow stopped after %d iterations (%s), sup tau %.3e", k, diag.reason, diag.sup_tau[-1])
    if isinstance(fmap, CompleteOrbifoldMap):
        return fmap.with_lift(cid, state), diag
    return state, diag


def dirichlet_problem(fmap: CompleteOrbifoldMap, boundary: Lift, kind: str = "cartesian",
                      m: int = 65, chart: str | None = None) -> CompleteOrbifoldMap:
    """Replace a chart lift by a grid lift with ``boundary`` as Dirichlet data and radial initial values."""
    cid = chart or fmap.source.charts[0].id
    grid = radial_initial_grid(kind, fmap.source[cid].domain, m, boundary)
    return fmap.with_lift(cid, grid)
