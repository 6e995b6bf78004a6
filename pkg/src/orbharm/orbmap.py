"""
Complete orbifold maps
======================

A :class:`CompleteOrbifoldMap` stores, for every source chart, a lift into one
target chart together with a homomorphism ``theta`` between the chart groups
(as an element-index table). Lifts are defined on whole charts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .atlas import RESIDUAL_TOL, FiniteGroupAction, OrbifoldAtlas
from .errors import ImageOutsideTargetChart, MissingLift, PointTooCloseToBoundary
from .lifts import ComposedLift, GridLift, Lift, identity_lift
from .report import ValidationReport

GRID_TOL = 1e-6


@dataclass
class ChartLift:
    source: str
    target: str
    lift: Lift
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=int)


def theta_from_images(source: FiniteGroupAction, target: FiniteGroupAction, images) -> np.ndarray:
    """Element table of the homomorphism sending generator ``i`` to target element ``images[i]``.

    Images may be given as element indices or as matrices.
    """
    idx = []
    for im in images:
        if np.ndim(im) == 0:
            idx.append(int(im))
        else:
            j = target.index(np.asarray(im, float))
            if j is None:
                raise ValueError("generator image is not an element of the target group")
            idx.append(j)
    return source.table_from_images(target, idx)


@dataclass
class TangentVector:
    chart: str
    base: np.ndarray
    components: np.ndarray

    def __post_init__(self):
        self.base = np.asarray(self.base, float)
        self.components = np.asarray(self.components, float)


@dataclass
class CompleteOrbifoldMap:
    source: OrbifoldAtlas
    target: OrbifoldAtlas
    lifts: dict = field(default_factory=dict)
    name: str = "map"

    def __post_init__(self):
        if not isinstance(self.lifts, dict):
            self.lifts = {cl.source: cl for cl in self.lifts}

    def chart_lift(self, chart_id: str) -> ChartLift:
        try:
            return self.lifts[chart_id]
        except KeyError:
            raise MissingLift(f"map {self.name!r} has no lift on chart {chart_id!r}") from None

    def theta_matrices(self, chart_id: str) -> np.ndarray:
        cl = self.chart_lift(chart_id)
        return self.target[cl.target].action.elements[cl.theta]

    def with_lift(self, chart_id: str, lift: Lift) -> "CompleteOrbifoldMap":
        new = dict(self.lifts)
        old = self.chart_lift(chart_id)
        new[chart_id] = ChartLift(old.source, old.target, lift, old.theta)
        return CompleteOrbifoldMap(self.source, self.target, new, self.name)

    def push(self, v: TangentVector, h: float | None = None) -> TangentVector:
        """Differential applied to a tangent vector, landing in the lift's target chart."""
        cl = self.chart_lift(v.chart)
        J = differential(self, v.chart, v.base, h)
        return TangentVector(cl.target, cl.lift(v.base[None])[0], J @ v.components)


def identity_map(atlas: OrbifoldAtlas) -> CompleteOrbifoldMap:
    lifts = {c.id: ChartLift(c.id, c.id, identity_lift(c.domain.dim), np.arange(c.action.order))
             for c in atlas.charts}
    return CompleteOrbifoldMap(atlas, atlas, lifts, name=f"id_{atlas.name}")


def _lift_samples(chart, lift: Lift, m: int) -> np.ndarray:
    if isinstance(lift, GridLift):
        nodes = lift.nodes()
        return nodes[chart.domain.contains(nodes)]
    return chart.domain.sample(m)


def equivariance_residual(chart, target_chart, lift: Lift, theta, pts=None, m: int = 17) -> float:
    """``max |f(g y) - theta(g) f(y)|`` over the source group and samples ``y``."""
    y = _lift_samples(chart, lift, m) if pts is None else np.atleast_2d(pts)
    fy = lift(y)
    worst = 0.0
    for e, g in enumerate(chart.action.elements):
        lhs = lift(y @ g.T)
        rhs = fy @ target_chart.action.elements[theta[e]].T
        worst = max(worst, float(np.linalg.norm(lhs - rhs, axis=-1).max()))
    return worst


def _overlap_residual(fmap: CompleteOrbifoldMap, gluing, m: int):
    """Compatibility of the lifts across one source gluing ``lam: V -> U``.

    Searches target gluings ``mu`` from the lift target of ``V`` to that of ``U``
    (the identity if they coincide) and target group elements ``k`` for the
    smallest ``max |f_U(lam v) - k mu(f_V(v))|``. Ties go to the smallest index.
    """
    src, tgt = fmap.source, fmap.target
    lv, lu = fmap.chart_lift(gluing.source), fmap.chart_lift(gluing.target)
    v = src[gluing.source].domain.sample(m)
    lhs = lu.lift(gluing.embedding(v))
    fv = lv.lift(v)
    candidates = []
    if lv.target == lu.target:
        candidates.append(("identity", fv))
    for k, mu in enumerate(tgt.gluings):
        if mu.source == lv.target and mu.target == lu.target:
            candidates.append((k, mu.embedding(fv)))
    best = (float("inf"), None, None)
    for label, img in candidates:
        for e, g in enumerate(tgt[lu.target].action.elements):
            r = float(np.linalg.norm(lhs - img @ g.T, axis=-1).max())
            if r < best[0]:
                best = (r, label, e)
    return best


def validate_map(fmap: CompleteOrbifoldMap, tol: float = RESIDUAL_TOL, grid_tol: float = GRID_TOL,
                 m: int = 17) -> ValidationReport:
    """Check Theta tables, lift equivariance, images and overlap compatibility.

    Raises :class:`MissingLift` when a source chart has no lift. Every other
    failure is a report entry.
    """
    rep = ValidationReport(fmap.name)
    for c in fmap.source.charts:
        cl = fmap.chart_lift(c.id)
        tc = fmap.target[cl.target]
        limit = grid_tol if isinstance(cl.lift, GridLift) else tol
        hom = c.action.is_homomorphism(cl.theta, tc.action)
        rep.add("theta_homomorphism", hom, chart=c.id)
        res = equivariance_residual(c, tc, cl.lift, cl.theta, m=m) if hom else float("inf")
        rep.add("equivariance", res < limit, residual=res, chart=c.id, tolerance=limit)
        y = _lift_samples(c, cl.lift, m)
        if isinstance(cl.lift, GridLift):
            y = y[~cl.lift.frozen.reshape(-1)[c.domain.contains(cl.lift.nodes())]]
        inside = tc.domain.contains(cl.lift(y)) if len(y) else np.ones(0, bool)
        rep.add("image_inside_target", bool(inside.all()), chart=c.id, outside=int((~inside).sum()))
    for k, g in enumerate(fmap.source.gluings):
        res, via, elem = _overlap_residual(fmap, g, m)
        grid = any(isinstance(fmap.chart_lift(cid).lift, GridLift) for cid in (g.source, g.target))
        limit = grid_tol if grid else tol
        rep.add("overlap_compatibility", res < limit, residual=res, gluing=k,
                source=g.source, target=g.target, target_gluing=via, element=elem)
    return rep


def differential(fmap: CompleteOrbifoldMap, chart_id: str, point, h: float | None = None) -> np.ndarray:
    """Jacobian of the lift at ``point``.

    Exact for analytic lifts. Otherwise central differences with step ``h``
    (default: the grid spacing for grid lifts, 1e-4 else). The point must sit at
    least ``2h`` inside the chart.
    """
    cl = fmap.chart_lift(chart_id)
    dom = fmap.source[chart_id].domain
    if h is None:
        h = cl.lift.h if isinstance(cl.lift, GridLift) else 1e-4
    p = np.atleast_2d(np.asarray(point, float))
    margin = 0.0 if cl.lift.exact else 2 * h
    if not dom.contains(p, margin)[0]:
        raise PointTooCloseToBoundary(
            f"point {p[0].tolist()} is within {margin:g} of the boundary of chart {chart_id!r}")
    return cl.lift.jacobian(p, h)[0]


@dataclass
class PullbackFrame:
    """Where a source point lands: the target chart and point used to evaluate target geometry."""

    source_chart: str
    source_point: np.ndarray
    target_chart: str
    target_point: np.ndarray

    def evaluate(self, metric):
        """Target metric and Christoffel symbols at the image point."""
        from .geometry import christoffel
        return metric(self.target_point[None])[0], christoffel(metric, self.target_point[None])[0]


def pullback_frame(fmap: CompleteOrbifoldMap, chart_id: str, point) -> PullbackFrame:
    cl = fmap.chart_lift(chart_id)
    p = np.asarray(point, float)
    img = cl.lift(p[None])[0]
    if not fmap.target[cl.target].domain.contains(img)[0]:
        raise ImageOutsideTargetChart(
            f"image {img.tolist()} of {p.tolist()} lies outside target chart {cl.target!r}")
    return PullbackFrame(chart_id, p, cl.target, img)


def compose(g: CompleteOrbifoldMap, f: CompleteOrbifoldMap) -> CompleteOrbifoldMap:
    """``g o f``. Each lift of ``f`` must land in a chart on which ``g`` has a lift."""
    lifts = {}
    for cid, fl in f.lifts.items():
        gl = g.chart_lift(fl.target)
        lifts[cid] = ChartLift(cid, gl.target, ComposedLift(gl.lift, fl.lift), gl.theta[fl.theta])
    return CompleteOrbifoldMap(f.source, g.target, lifts, name=f"{g.name}o{f.name}")


def single_chart_map(source: OrbifoldAtlas, target: OrbifoldAtlas, lift: Lift, images,
                     name: str = "map") -> CompleteOrbifoldMap:
    """Map between single-chart atlases with Theta given by generator images."""
    sc, tc = source.charts[0], target.charts[0]
    theta = theta_from_images(sc.action, tc.action, images)
    return CompleteOrbifoldMap(source, target, {sc.id: ChartLift(sc.id, tc.id, lift, theta)}, name)
