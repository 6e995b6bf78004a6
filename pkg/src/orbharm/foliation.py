"""
Riemannian foliations with compact leaves
=========================================

Two constructions are supported, both with circle leaves:

- the mapping torus ``R x D / (t + 1, x) ~ (t, gamma x)`` of a finite-order
  isometry ``gamma`` of a disk ``D``;
- the product ``S^1 x N`` (the case ``gamma = id``).

Total-space coordinates are ``(t, x)`` with ``t`` the leaf coordinate. The
bundle-like metric is ``rho(x)^2 dt^2 + g(x)``, where ``g`` is the base metric
and ``rho = 1 + warp |x|^2``. With ``warp = 0`` the leaves are closed geodesics.
A nonzero warp bends them, so they are no longer minimal. The horizontal
distribution ``{dt = 0}`` is integrable in every case.

The cocycle uses two leaf charts, ``a`` centred at ``t = 0`` and ``b`` at
``t = 1/2``, each with leaf coordinate range ``(-0.4, 0.4)`` about its centre.
The submersion of a chart forgets the leaf coordinate.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from .atlas import (AffineEmbedding, Chart, Domain, FiniteGroupAction, GluingEmbedding, OrbifoldAtlas,
                    validate_group)
from .errors import (ClosureExceedsCap, LeafNotPreserved, MetricNotInvariant, NonCompactLeaves, NotFiniteOrder,
                     ScenarioNotApplicable)
from .geometry import MetricField, christoffel, covariant_derivative, metric_invariance_residual
from .harmonic import is_harmonic, tension
from .lifts import ExpressionLift
from .orbmap import ChartLift, CompleteOrbifoldMap
from .report import ValidationReport

HALF_WIDTH = 0.4
# leaf coordinates used where a quantity may vary along leaves
LEAF_SAMPLES = np.linspace(-0.3, 0.3, 13)
ZERO_TOL = 1e-5
COORDS = ("x", "y", "z", "w")


@dataclass(frozen=True)
class LeafChart:
    id: str
    offset: float
    half_width: float = HALF_WIDTH


@dataclass
class Transition:
    """``f_i = matrix . f_j`` on the overlap component ``t in interval`` (chart ``j`` leaf coordinates)."""

    i: str
    j: str
    matrix: np.ndarray
    interval: tuple
    residual: float


@dataclass
class FoliationCocycle:
    charts: list
    transitions: list

    def transition(self, i: str, j: str) -> list:
        return [tr for tr in self.transitions if tr.i == i and tr.j == j]


class FoliatedManifold:
    """Mapping torus (or product) foliation over a disk or box ``domain``."""

    def __init__(self, domain: Domain, metric: MetricField, gamma, tag: str, warp: float = 0.0,
                 leaf: str = "circle", cap: int = 256, name: str | None = None):
        self.domain, self.metric, self.tag = domain, metric, tag
        self.q = domain.dim
        self.gamma = np.atleast_2d(np.asarray(gamma, float))
        self.warp = float(warp)
        self.leaf = leaf
        self.name = name or tag
        try:
            self.holonomy = validate_group([self.gamma], cap=cap)
        except ClosureExceedsCap as exc:
            raise NotFiniteOrder(f"gamma does not have finite order under cap {cap}") from exc
        self.charts = [LeafChart("a", 0.0), LeafChart("b", 0.5)]
        self._cocycle = None

    # geometry -----------------------------------------------------------------------
    @property
    def dim(self) -> int:
        return 1 + self.q

    @property
    def order(self) -> int:
        return self.holonomy.order

    @property
    def compact_leaves(self) -> bool:
        return self.leaf == "circle"

    @property
    def variables(self) -> tuple:
        return ("t",) + COORDS[: self.q]

    def rho(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return 1.0 + self.warp * (x * x).sum(-1)

    def total_metric(self) -> MetricField:
        q, base = self.q, self.metric

        def ev(p):
            p = np.atleast_2d(p)
            out = np.zeros((len(p), q + 1, q + 1))
            out[:, 0, 0] = self.rho(p[:, 1:]) ** 2
            out[:, 1:, 1:] = base(p[:, 1:])
            return out

        return MetricField.from_callable(ev, q + 1)

    # charts and cocycle ---------------------------------------------------------------
    def _gamma_power(self, n: int) -> np.ndarray:
        return np.linalg.matrix_power(self.gamma, int(n)) if n >= 0 else \
            np.linalg.matrix_power(self.gamma.T, int(-n))

    def to_chart(self, chart: LeafChart, pts):
        """Express total points ``(t, x)`` in ``chart``: returns local points (leaf coordinate ``t - n``)."""
        p = np.atleast_2d(np.asarray(pts, float))
        n = np.round(p[:, 0] - chart.offset).astype(int)
        out = np.empty_like(p)
        for k, (row, nk) in enumerate(zip(p, n)):
            out[k, 0] = row[0] - nk
            out[k, 1:] = self._gamma_power(nk) @ row[1:]
        if np.any(np.abs(out[:, 0] - chart.offset) >= chart.half_width):
            raise ValueError(f"points outside leaf chart {chart.id}")
        return out

    def submersion(self, chart: LeafChart, pts) -> np.ndarray:
        return self.to_chart(chart, pts)[:, 1:]

    def cocycle(self, m: int = 9) -> FoliationCocycle:
        """Transitions found numerically by least squares on overlap samples."""
        if self._cocycle is not None:
            return self._cocycle
        xs = self.domain.sample(m, shrink=0.9)
        trs = []
        a, b = self.charts
        for ci, cj in ((a, b), (b, a)):
            for lo, hi in ((0.1, 0.4), (0.6, 0.9)):
                ts = np.linspace(lo + 0.05, hi - 0.05, 3)
                P = np.array([[t, *x] for t in ts for x in xs])
                try:
                    fi, fj = self.submersion(ci, P), self.submersion(cj, P)
                except ValueError:
                    continue
                A = np.linalg.lstsq(fj, fi, rcond=None)[0].T
                k = self.holonomy.index(A, tol=1e-6)
                if k is not None:
                    A = self.holonomy.elements[k]
                res = float(np.abs(fi - fj @ A.T).max())
                trs.append(Transition(ci.id, cj.id, A, (lo, hi), res))
        self._cocycle = FoliationCocycle(list(self.charts), trs)
        return self._cocycle

    def cocycle_report(self, tol: float = 1e-9) -> ValidationReport:
        rep = ValidationReport(f"{self.name}:cocycle")
        coc = self.cocycle()
        for tr in coc.transitions:
            rep.add("submersion_relation", tr.residual < tol, residual=tr.residual,
                    charts=[tr.i, tr.j], interval=list(tr.interval))
        for tr in coc.transitions:
            back = [r for r in coc.transition(tr.j, tr.i) if r.interval == tr.interval]
            if back:
                res = float(np.abs(tr.matrix @ back[0].matrix - np.eye(self.q)).max())
                rep.add("cocycle_identity", res < tol, residual=res, charts=[tr.i, tr.j, tr.i],
                        interval=list(tr.interval))
        iso = holonomy_pseudogroup(self).isometry_residual(self.metric, self.domain)
        rep.add("holonomy_isometry", iso < tol, residual=iso)
        return rep

    def to_dict(self):
        return {"tag": self.tag, "gamma": self.gamma.tolist(), "order": self.order, "warp": self.warp,
                "leaf": self.leaf, "metric": self.metric.kind, "transverse_dim": self.q}


def build_mapping_torus(gamma, base_metric: MetricField, order: int | None = None,
                        domain: Domain | None = None, warp: float = 0.0, tol: float = 1e-9,
                        name: str | None = None) -> FoliatedManifold:
    """Suspension of the finite-order isometry ``gamma`` of ``domain`` (unit disk by default).

    Raises
    ------
    NotFiniteOrder
        ``gamma`` generates an infinite group (or ``gamma**order != id``).
    MetricNotInvariant
        the base metric is not ``gamma``-invariant.
    """
    g = np.atleast_2d(np.asarray(gamma, float))
    domain = domain or Domain.disk(1.0, dim=g.shape[0])
    if order is not None and np.abs(np.linalg.matrix_power(g, order) - np.eye(len(g))).max() > tol:
        raise NotFiniteOrder(f"gamma**{order} is not the identity")
    fm = FoliatedManifold(domain, base_metric, g, "mapping_torus", warp=warp, name=name)
    res = metric_invariance_residual(base_metric, fm.holonomy, domain=domain)
    if res >= tol:
        raise MetricNotInvariant(f"base metric is not invariant under gamma (residual {res:.3e})")
    return fm


def build_product(domain: Domain, base_metric: MetricField, warp: float = 0.0, leaf: str = "circle",
                  name: str | None = None) -> FoliatedManifold:
    """Product foliation ``S^1 x N`` (``leaf="line"`` marks non-compact leaves)."""
    return FoliatedManifold(domain, base_metric, np.eye(domain.dim), "product", warp=warp, leaf=leaf,
                            name=name)


@dataclass
class HolonomyPseudogroup:
    generators: list
    group: FiniteGroupAction
    transverse: dict

    def isometry_residual(self, metric: MetricField, domain: Domain) -> float:
        return metric_invariance_residual(metric, self.group, domain=domain)

    def to_dict(self):
        return {"order": self.group.order, "generators": [g.tolist() for g in self.generators],
                "transverse_charts": list(self.transverse)}


def holonomy_pseudogroup(fm: FoliatedManifold) -> HolonomyPseudogroup:
    """Closure of the cocycle transitions acting on the transverse manifold ``N_a u N_b``."""
    gens = [tr.matrix for tr in fm.cocycle().transitions]
    group = FiniteGroupAction(gens, dim=fm.q)
    return HolonomyPseudogroup(gens, group, {f"N_{c.id}": fm.domain for c in fm.charts})


def leaf_space_orbifold(fm: FoliatedManifold) -> OrbifoldAtlas:
    """Orbifold atlas of ``M / F``: transverse blocks with the holonomy stabilizers."""
    if not fm.compact_leaves:
        raise NonCompactLeaves("leaf space orbifold needs compact leaves")
    grp = fm.holonomy
    charts = [Chart(f"N_{c.id}", fm.domain, grp) for c in fm.charts]
    glue = GluingEmbedding("N_a", "N_b", AffineEmbedding(np.eye(fm.q)), np.arange(grp.order))
    return OrbifoldAtlas(charts, [glue], overlaps=[("N_a", "N_b")], name=f"leafspace_{fm.name}")


def trace_leaf(fm: FoliatedManifold, x0, max_laps: int = 1024, tol: float = 1e-9) -> int:
    """Number of turns of the base circle before the leaf through ``(0, x0)`` closes up."""
    x0 = np.asarray(x0, float)
    x = x0.copy()
    for lap in range(1, max_laps + 1):
        x = fm.gamma @ x  # (1, x) ~ (0, gamma x)
        if np.linalg.norm(x - x0) < tol:
            return lap
    raise NotFiniteOrder("leaf did not close")


def leaf_isotropy(fm: FoliatedManifold, x0) -> int:
    """Holonomy order of the leaf through ``x0``: group order over number of laps."""
    return fm.order // trace_leaf(fm, x0)


# ---------------------------------------------------------------------------
# Foliated maps
# ---------------------------------------------------------------------------

class FoliatedMap:
    """``F(t, x) = (s(t, x), y(t, x))`` given by sympy-parsable expressions.

    Variables are ``t`` and ``x, y, z, ...`` for the source transverse coordinates.
    """

    def __init__(self, source: FoliatedManifold, target: FoliatedManifold, leaf: str,
                 transverse, name: str = "F"):
        self.source, self.target, self.name = source, target, name
        self.leaf_expr = str(leaf)
        self.transverse_expr = [str(e) for e in transverse]
        if len(self.transverse_expr) != target.q:
            raise ValueError("transverse component count must equal the target transverse dimension")
        self.total = ExpressionLift([self.leaf_expr] + self.transverse_expr, source.variables)

    def __call__(self, pts):
        return self.total(pts)

    def leaf_preservation_residual(self, m: int = 9) -> float:
        """``max |y(t, x) - y(0, x)|`` over leaf samples."""
        xs = self.source.domain.sample(m, shrink=0.9)
        base = self.total(np.column_stack([np.zeros(len(xs)), xs]))[:, 1:]
        worst = 0.0
        for t in np.linspace(-0.35, 0.35, 8):
            val = self.total(np.column_stack([np.full(len(xs), t), xs]))[:, 1:]
            worst = max(worst, float(np.abs(val - base).max()))
        return worst

    def leaf_degree(self, m: int = 9) -> tuple[int, float]:
        """Integer ``n`` with ``s(t + 1, x) = s(t, gamma x) + n``, and the integrality residual."""
        xs = self.source.domain.sample(m, shrink=0.9)
        g = self.source.gamma
        vals = []
        for t in (-0.2, 0.0, 0.3):
            p1 = np.column_stack([np.full(len(xs), t + 1), xs])
            p0 = np.column_stack([np.full(len(xs), t), xs @ g.T])
            vals.append(self.total(p1)[:, 0] - self.total(p0)[:, 0])
        d = np.concatenate(vals)
        n = int(np.round(np.mean(d)))
        return n, float(np.abs(d - n).max())

    def to_dict(self):
        return {"name": self.name, "leaf": self.leaf_expr, "transverse": self.transverse_expr,
                "source": self.source.to_dict(), "target": self.target.to_dict()}


def _substitute_t(expr: str, variables, value: float = 0.0) -> str:
    syms = sp.symbols(variables)
    local = {str(s): s for s in syms}
    e = parse_expr(expr, local_dict=local, transformations=standard_transformations)
    return str(e.subs(local["t"], value))


@dataclass
class InducedMap:
    orbifold_map: CompleteOrbifoldMap
    report: ValidationReport
    degree: int
    lift: ExpressionLift = field(repr=False, default=None)


def induced_transverse_map(F: FoliatedMap, tol: float = 1e-9) -> InducedMap:
    """``f-bar`` on the transverse manifolds, packaged as a map of leaf-space orbifolds.

    Raises :class:`LeafNotPreserved` when the transverse part varies along leaves.
    """
    res = F.leaf_preservation_residual()
    if res >= tol:
        raise LeafNotPreserved(f"transverse component varies along leaves (residual {res:.3e})")
    src, tgt = F.source, F.target
    xvars = src.variables[1:]
    comps = [_substitute_t(e, src.variables) for e in F.transverse_expr]
    lift = ExpressionLift(comps, xvars)
    n, int_res = F.leaf_degree()
    rep = ValidationReport(f"{F.name}:induced")
    rep.add("leaf_preserved", True, residual=res)
    rep.add("leaf_degree_integral", int_res < tol, residual=int_res, degree=n)
    image = tgt._gamma_power(n)
    k = tgt.holonomy.index(image)
    if k is None:
        raise ValueError("target transition for the leaf degree is not a holonomy element")
    # compatibility h o fbar = fbar o g on the overlap whose transition is gamma
    xs = src.domain.sample(9, shrink=0.9)
    comp = float(np.abs(lift(xs) @ image.T - lift(xs @ src.gamma.T)).max())
    rep.add("transverse_compatibility", comp < tol, residual=comp)
    inside = tgt.domain.contains(lift(xs))
    rep.add("image_inside_target", bool(inside.all()), outside=int((~inside).sum()))
    X, Y = leaf_space_orbifold(src), leaf_space_orbifold(tgt)
    theta = src.holonomy.table_from_images(tgt.holonomy, [k] * len(src.holonomy.generators))
    lifts = {f"N_{c.id}": ChartLift(f"N_{c.id}", f"N_{c.id}", lift, theta) for c in src.charts}
    fbar = CompleteOrbifoldMap(X, Y, lifts, name=f"{F.name}_bar")
    return InducedMap(fbar, rep, n, lift)


# ---------------------------------------------------------------------------
# Connections and tension on the total space
# ---------------------------------------------------------------------------

def _vertical_projector(G, v_index: int = 0) -> np.ndarray:
    """``Pi = I - v v^T G / (v^T G v)`` for ``v = e_{v_index}``: orthogonal projection onto ``v^perp``."""
    N, n, _ = G.shape
    v = np.zeros(n)
    v[v_index] = 1.0
    Gv = G @ v  # (N, n)
    return np.eye(n)[None] - np.einsum("i,nj->nij", v, Gv) / (Gv @ v)[:, None, None]


def total_points(fm: FoliatedManifold, xs, t_values=(0.0, 0.5)) -> np.ndarray:
    xs = np.atleast_2d(xs)
    return np.array([[t, *x] for t in t_values for x in xs])


def basic_connection(fm: FoliatedManifold, X, Y, xs, t: float = 0.0, fd_h: float = 1e-4, h: float = 1e-5):
    """``D_X Y`` for foliated horizontal fields given by transverse components.

    ``X`` and ``Y`` map ``(N, q)`` transverse points to ``(N, q)`` components.
    Their horizontal lifts are ``(0, X(x))``. Returns ``(upstairs, downstairs)``:
    the transverse part of ``Pi_1 nabla_X Y`` computed on the total space, and
    ``nabla^gbar_X Y`` computed on the base.
    """
    xs = np.atleast_2d(np.asarray(xs, float))
    P = np.column_stack([np.full(len(xs), t), xs])
    G = fm.total_metric()
    lift = lambda F: (lambda p: np.column_stack([np.zeros(len(p)), F(np.atleast_2d(p)[:, 1:])]))  # noqa: E731
    up = covariant_derivative(G, lift(X), lift(Y), P, h=h, fd_h=fd_h)
    Pi = _vertical_projector(G(P))
    up = np.einsum("nij,nj->ni", Pi, up)[:, 1:]
    down = covariant_derivative(fm.metric, X, Y, xs, h=h)
    return up, down


def _projected_jacobian_column(F: FoliatedMap, G2: MetricField, P, j: int) -> np.ndarray:
    """``W_j = Pi_2(F(p)) dF(p) e_j`` in target total coordinates."""
    J = F.total.jacobian(P)
    Pi2 = _vertical_projector(G2(F.total(P)))
    return np.einsum("nab,nb->na", Pi2, J[:, :, j])


def transverse_tension_field(F: FoliatedMap, xs, t_values=(0.0, 0.5), fd_h: float = 1e-4,
                             h: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """``tau_b`` at total points built from ``xs`` and ``t_values``.

    Trace over the horizontal frame ``e_{x_i}`` (the metrics are block diagonal)
    of ``Pi_2 nabla^F_{X_i}(Pi_2 dF X_j) - Pi_2 dF(Pi_1 nabla_{X_i} X_j)``.
    The Levi-Civita symbols of both total metrics come from central differences.
    Returns ``(points, tau_b)`` with ``tau_b`` in target total coordinates.
    """
    src, tgt = F.source, F.target
    G1, G2 = src.total_metric(), tgt.total_metric()
    P = total_points(src, xs, t_values)
    Y = F.total(P)
    J = F.total.jacobian(P)
    g1 = G1(P)
    gam1 = christoffel(G1, P, fd_h)
    gam2 = christoffel(G2, Y, fd_h)
    Pi1 = _vertical_projector(g1)
    Pi2 = _vertical_projector(G2(Y))
    hinv = np.linalg.inv(g1[:, 1:, 1:])
    q1 = src.q
    tau = np.zeros((len(P), tgt.dim))
    W = [_projected_jacobian_column(F, G2, P, 1 + j) for j in range(q1)]
    for i in range(q1):
        e = np.zeros(src.dim)
        e[1 + i] = h
        for j in range(q1):
            dW = (_projected_jacobian_column(F, G2, P + e, 1 + j)
                  - _projected_jacobian_column(F, G2, P - e, 1 + j)) / (2 * h)
            nablaW = dW + np.einsum("nabc,nb,nc->na", gam2, J[:, :, 1 + i], W[j])
            first = np.einsum("nab,nb->na", Pi2, nablaW)
            nXX = np.einsum("nkl,nl->nk", Pi1, gam1[:, :, 1 + i, 1 + j])
            second = np.einsum("nab,nbc,nc->na", Pi2, J, nXX)
            tau += hinv[:, i, j, None] * (first - second)
    return P, tau


@dataclass
class TransverseTension:
    points: np.ndarray
    tau_b: np.ndarray
    projected: np.ndarray
    tau_fbar: np.ndarray

    @property
    def discrepancy(self) -> float:
        return float(np.linalg.norm(self.projected - self.tau_fbar, axis=-1).max())

    @property
    def sup_tau_b(self) -> float:
        return float(np.linalg.norm(self.tau_b, axis=-1).max())

    @property
    def sup_tau_fbar(self) -> float:
        return float(np.linalg.norm(self.tau_fbar, axis=-1).max())

    def rows(self):
        q = self.projected.shape[1]
        return [list(p) + list(a) + list(b) for p, a, b in zip(self.points, self.projected, self.tau_fbar)], q


def transverse_tension(F: FoliatedMap, xs=None, t_values=(0.0, 0.5), m: int = 9) -> TransverseTension:
    """``tau_b`` upstairs and ``tau(f-bar)`` downstairs at the same points.

    Upstairs uses total-space derivatives. Downstairs uses :func:`harmonic.tension`
    on the induced lift with the base metrics.
    """
    if xs is None:
        xs = F.source.domain.sample(m, shrink=0.8)
    P, tb = transverse_tension_field(F, xs, t_values)
    ind = induced_transverse_map(F)
    tf = tension(ind.lift, F.source.metric, F.target.metric, points=P[:, 1:]).values
    return TransverseTension(P, tb, tb[:, 1:], tf)


def leafwise_tension(F: FoliatedMap, xs=None, t_values=None, h: float = 1e-4, m: int = 9):
    """Tension of the restrictions of ``F`` to leaves, as curves in target leaves.

    For the leaf ``t -> (t, x)`` with metric ``a(t) dt^2`` mapped to ``s`` in a
    target leaf with metric ``b(s) ds^2``, the tension is
    ``(s'' - Gamma_a s' + Gamma_b s'^2) / a`` with ``Gamma_a = a'/(2a)``. Its
    size is measured in the target metric. Returns ``(sup, per-leaf sup)``.
    """
    src, tgt = F.source, F.target
    if xs is None:
        xs = src.domain.sample(m, shrink=0.8)
    xs = np.atleast_2d(xs)
    ts = LEAF_SAMPLES if t_values is None else np.asarray(t_values, float)
    G1, G2 = src.total_metric(), tgt.total_metric()
    per_leaf = []
    for x in xs:
        P = np.array([[t, *x] for t in ts])
        s = lambda tt: F.total(np.column_stack([tt, np.repeat(x[None], len(tt), 0)]))  # noqa: E731
        s0, sp_, sm = s(ts), s(ts + h), s(ts - h)
        d1 = (sp_[:, 0] - sm[:, 0]) / (2 * h)
        d2 = (sp_[:, 0] - 2 * s0[:, 0] + sm[:, 0]) / h**2
        a = G1(P)[:, 0, 0]
        e1 = np.zeros(src.dim)
        e1[0] = h
        da = (G1(P + e1)[:, 0, 0] - G1(P - e1)[:, 0, 0]) / (2 * h)
        Y = s0
        b = G2(Y)[:, 0, 0]
        e = np.zeros(tgt.dim)
        e[0] = h
        db = (G2(Y + e)[:, 0, 0] - G2(Y - e)[:, 0, 0]) / (2 * h)
        tl = (d2 - da / (2 * a) * d1 + db / (2 * b) * d1**2) / a
        per_leaf.append(float(np.max(np.abs(tl) * np.sqrt(b))))
    return max(per_leaf), np.array(per_leaf)


# ---------------------------------------------------------------------------
# Theorem hypotheses
# ---------------------------------------------------------------------------

def leaf_curvature(fm: FoliatedManifold, xs, fd_h: float = 1e-4) -> float:
    """Sup of the geodesic curvature ``|Pi nabla_T T| / |T|^2`` of the circle leaves (``T = d/dt``).

    For one-dimensional leaves, minimal and totally geodesic both mean this vanishes.
    """
    G = fm.total_metric()
    P = total_points(fm, xs)
    g = G(P)
    k = christoffel(G, P, fd_h)[:, :, 0, 0]
    hk = np.einsum("nij,nj->ni", _vertical_projector(g), k)
    nrm = np.sqrt(np.einsum("ni,nij,nj->n", hk, g, hk))
    return float((nrm / g[:, 0, 0]).max())


def horizontality_residual(F: FoliatedMap, xs) -> float:
    """``max |h(dF X_i, v)| / |v|`` over horizontal ``X_i`` with ``v = d/ds`` in the target."""
    P = total_points(F.source, xs, LEAF_SAMPLES)
    J = F.total.jacobian(P)
    G2 = F.target.total_metric()(F.total(P))
    v_norm = np.sqrt(G2[:, 0, 0])
    worst = 0.0
    for i in range(F.source.q):
        inner = np.einsum("na,na->n", G2[:, 0, :], J[:, :, 1 + i])
        worst = max(worst, float(np.max(np.abs(inner) / v_norm)))
    return worst


def horizontal_integrability_residual(fm: FoliatedManifold, xs, h: float = 1e-5) -> float:
    """Vertical part of brackets of horizontal lifts ``H_i = Pi e_{x_i}`` (zero iff integrable)."""
    G = fm.total_metric()
    P = total_points(fm, xs)

    def H(p, i):
        e = np.zeros(fm.dim)
        e[1 + i] = 1.0
        return _vertical_projector(G(p)) @ e

    def dH(p, i, k):
        e = np.zeros(fm.dim)
        e[k] = h
        return (H(p + e, i) - H(p - e, i)) / (2 * h)

    worst = 0.0
    for i in range(fm.q):
        for j in range(i + 1, fm.q):
            Hi, Hj = H(P, i), H(P, j)
            br = sum(dH(P, j, k) * Hi[:, k:k + 1] - dH(P, i, k) * Hj[:, k:k + 1] for k in range(fm.dim))
            g = G(P)
            vert = np.einsum("na,na->n", g[:, 0, :], br) / np.sqrt(g[:, 0, 0])
            worst = max(worst, float(np.abs(vert).max()))
    return worst


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------

def _check(name, hyp, fn):
    """Run one theorem check; report ``applicable = False`` with the reason when hypotheses fail."""
    try:
        if not all(hyp.values()):
            missing = [k for k, v in hyp.items() if not v]
            raise ScenarioNotApplicable(f"{name}: hypotheses fail: {', '.join(missing)}")
        out = fn()
        out.update(applicable=True)
        return out
    except ScenarioNotApplicable as exc:
        return {"applicable": False, "reason": str(exc)}


def theorem_scenario(F: FoliatedMap, tol: float = ZERO_TOL, m: int = 7, keep_fields: bool = False) -> dict:
    """Evaluate every theorem check on one foliated map.

    Each side of each equivalence is a boolean ``sup < tol`` from a separate
    computation. Upstairs quantities come from this module. ``tau(f-bar)`` and
    the orbifold harmonicity come from :mod:`orbharm.harmonic`.
    """
    src, tgt = F.source, F.target
    xs = src.domain.sample(m, shrink=0.8)
    tt = transverse_tension(F, xs)
    lw, _ = leafwise_tension(F, xs)
    # the full tension need not be constant along leaves
    P = total_points(src, xs, LEAF_SAMPLES)
    full = tension(F.total, src.total_metric(), tgt.total_metric(), points=P, fd_h=1e-4).values
    G2 = tgt.total_metric()(F.total(P))
    horiz_full = np.einsum("nij,nj->ni", _vertical_projector(G2), full)
    sups = {
        "tau_b": tt.sup_tau_b,
        "tau_fbar": tt.sup_tau_fbar,
        "tau": float(np.linalg.norm(full, axis=-1).max()),
        "tau_horizontal": float(np.linalg.norm(horiz_full, axis=-1).max()),
        "leafwise": lw,
    }
    z = {k: v < tol for k, v in sups.items()}
    geo = {
        "source_leaf_curvature": leaf_curvature(src, xs),
        "target_leaf_curvature": leaf_curvature(tgt, F.total(P)[:, 1:]),
        "horizontality": horizontality_residual(F, xs),
        "target_integrability": horizontal_integrability_residual(tgt, F.total(P)[:, 1:]),
    }
    hyp_min = geo["source_leaf_curvature"] < tol
    hyp_tg2 = geo["target_leaf_curvature"] < tol
    checks = {}
    checks["a"] = _check("a", {"regular foliations": True}, lambda: {
        "lhs": z["tau_b"], "rhs": z["tau_fbar"], "agree": z["tau_b"] == z["tau_fbar"]})
    checks["b"] = _check("b", {"source leaves minimal": hyp_min, "target totally geodesic": hyp_tg2,
                               "map horizontal": geo["horizontality"] < tol}, lambda: {
        "premise": z["tau"], "conclusion": z["tau_b"], "violated": z["tau"] and not z["tau_b"]})
    checks["c"] = _check("c", {"source leaves minimal": hyp_min, "target totally geodesic": hyp_tg2},
                         lambda: {"lhs": z["tau"], "rhs": z["tau_b"] and z["leafwise"],
                                  "agree": z["tau"] == (z["tau_b"] and z["leafwise"])})

    def check_d():
        ind = induced_transverse_map(F)
        harm, sup = is_harmonic(ind.orbifold_map, src.metric, tgt.metric, tol=tol)
        return {"lhs": z["tau_b"], "rhs": harm, "agree": z["tau_b"] == harm, "sup_tau_orbifold": sup}

    checks["d"] = _check("d", {"compact leaves": src.compact_leaves and tgt.compact_leaves}, check_d)
    checks["e"] = _check("e", {"source totally geodesic": hyp_min, "target totally geodesic": hyp_tg2,
                               "target horizontal distribution integrable": geo["target_integrability"] < tol},
                         lambda: {"lhs": z["tau_b"], "rhs": z["tau_horizontal"],
                                  "agree": z["tau_b"] == z["tau_horizontal"]})
    out = {"name": F.name, "sup": sups, "zero": z, "geometry": geo, "checks": checks,
           "projection_discrepancy": tt.discrepancy, "threshold": tol}
    if keep_fields:
        out["fields"] = tt
    return out


def theorem_harness(maps, tol: float = ZERO_TOL, threads: int = 1, keep_fields: bool = False) -> dict:
    """Run :func:`theorem_scenario` over a suite; scenarios are independent.

    With ``keep_fields`` each result also holds its :class:`TransverseTension` under ``"fields"``.
    """
    maps = list(maps)
    run = lambda F: theorem_scenario(F, tol, keep_fields=keep_fields)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, maps))
    else:
        results = [run(F) for F in maps]
    summary = {}
    for key in ("a", "c", "d", "e"):
        app = [r["checks"][key] for r in results if r["checks"][key]["applicable"]]
        summary[key] = {"applicable": len(app), "agree": sum(c["agree"] for c in app),
                        "passed": all(c["agree"] for c in app)}
    app_b = [r["checks"]["b"] for r in results if r["checks"]["b"]["applicable"]]
    summary["b"] = {"applicable": len(app_b), "violations": sum(c["violated"] for c in app_b),
                    "passed": not any(c["violated"] for c in app_b)}
    disc = max((r["projection_discrepancy"] for r in results), default=0.0)
    summary["projection_identity"] = {"max_discrepancy": disc, "passed": disc < ZERO_TOL}
    return {"scenarios": results, "summary": summary,
            "passed": all(v["passed"] for v in summary.values())}
