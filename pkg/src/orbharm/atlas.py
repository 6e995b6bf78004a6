"""
Orbifold atlases
================

Charts are open boxes or balls in R^n carrying a finite group of orthogonal
matrices. Charts are tied together by gluing embeddings ``lambda`` with an
explicit homomorphism table ``alpha`` between the chart groups, and
``lambda(g u) = alpha(g) lambda(u)`` is checked numerically.

The quotient space is never built. Points of the orbifold are always handled
through a lift ``(chart id, coordinates)``.

Group elements are indexed by their position in :attr:`FiniteGroupAction.elements`.
Index 0 is always the identity, and the remaining elements follow in
breadth-first order of the closure over the generators.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._numerics import clean
from .errors import (
    AtlasError,
    ClosureExceedsCap,
    InconsistentIsotropy,
    NotEffective,
    NotOrthogonal,
    PointNotCovered,
)
from .report import ValidationReport

DEFAULT_CAP = 256
IDENTITY_TOL = 1e-12
RESIDUAL_TOL = 1e-9


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    """Open box ``lower < x < upper`` or open ball ``|x - center| < radius``."""

    kind: str
    dim: int
    lower: tuple = ()
    upper: tuple = ()
    radius: float = 0.0
    center: tuple = ()

    def __post_init__(self):
        if self.kind == "box":
            lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,):
                raise ValueError("box corners must have length dim")
            if not np.all(lo < hi):
                raise ValueError(f"box corners not strictly ordered: {self.lower} vs {self.upper}")
        elif self.kind == "disk":
            if not self.radius > 0:
                raise ValueError("disk radius must be positive")
            if len(self.center) != self.dim:
                raise ValueError("disk center must have length dim")
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "Domain":
        lower = tuple(float(v) for v in lower)
        return cls("box", len(lower), lower=lower, upper=tuple(float(v) for v in upper))

    @classmethod
    def disk(cls, radius: float, center: Sequence[float] | None = None, dim: int = 2) -> "Domain":
        if center is None:
            center = (0.0,) * dim
        center = tuple(float(v) for v in center)
        return cls("disk", len(center), radius=float(radius), center=center)

    @property
    def bounds(self):
        if self.kind == "box":
            return np.array(self.lower), np.array(self.upper)
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def boundary_distance(self, points) -> np.ndarray:
        """Signed distance to the boundary, positive inside."""
        p = np.atleast_2d(np.asarray(points, float))
        if self.kind == "disk":
            return self.radius - np.linalg.norm(p - np.array(self.center), axis=-1)
        lo, hi = self.bounds
        inside = np.minimum(p - lo, hi - p)
        d_in = inside.min(axis=-1)
        outside = np.linalg.norm(np.maximum(0.0, np.maximum(lo - p, p - hi)), axis=-1)
        return np.where(d_in >= 0, d_in, -outside)

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        return self.boundary_distance(points) > margin

    def sample(self, m: int = 17, shrink: float = 0.98) -> np.ndarray:
        """Tensor grid with ``m`` nodes per axis, kept where it lies inside the shrunken domain."""
        lo, hi = self.bounds
        mid, half = (lo + hi) / 2, (hi - lo) / 2 * shrink
        axes = [np.linspace(mid[i] - half[i], mid[i] + half[i], m) for i in range(self.dim)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        if self.kind == "disk":
            keep = np.linalg.norm(pts - np.array(self.center), axis=-1) <= shrink * self.radius + 1e-15
            pts = pts[keep]
        return pts

    def boundary_samples(self, m: int = 32) -> np.ndarray:
        n = self.dim
        if self.kind == "disk":
            c = np.array(self.center)
            if n == 1:
                return np.array([[c[0] - self.radius], [c[0] + self.radius]])
            if n == 2:
                t = 2 * np.pi * np.arange(m) / m
                return c + self.radius * np.stack([np.cos(t), np.sin(t)], -1)
            cube = Domain.box([-1.0] * n, [1.0] * n).boundary_samples(max(3, m // 4))
            return c + self.radius * cube / np.linalg.norm(cube, axis=-1, keepdims=True)
        lo, hi = self.bounds
        k = max(2, m // 4)
        faces = []
        for axis in range(n):
            others = [np.linspace(lo[i], hi[i], k) for i in range(n) if i != axis]
            grid = np.stack(np.meshgrid(*others, indexing="ij"), -1).reshape(-1, n - 1) if others else np.zeros((1, 0))
            for val in (lo[axis], hi[axis]):
                pts = np.insert(grid, axis, val, axis=1)
                faces.append(pts)
        return np.unique(np.concatenate(faces), axis=0)


# ---------------------------------------------------------------------------
# Finite linear groups
# ---------------------------------------------------------------------------

def rotation2d(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return clean([[c, -s], [s, c]])


def reflection2d(angle: float = 0.0) -> np.ndarray:
    """Reflection across the line through 0 at ``angle`` to the x-axis."""
    c, s = np.cos(2 * angle), np.sin(2 * angle)
    return clean([[c, s], [s, -c]])


def _key(m: np.ndarray) -> tuple:
    return tuple(np.round(m, 12).ravel() + 0.0)


class FiniteGroupAction:
    """Finite group of orthogonal n x n matrices acting linearly on R^n.

    Build through :func:`validate_group`; the constructor performs the closure
    and raises on caps but skips the effectiveness sampling.
    """

    def __init__(self, generators: Sequence, cap: int = DEFAULT_CAP, dim: int | None = None):
        gens = [np.array(g, dtype=float) for g in generators]
        if not gens:
            if dim is None:
                raise ValueError("dimension required for a group with no generators")
            gens = [np.eye(dim)]
        n = gens[0].shape[0]
        for g in gens:
            if g.ndim != 2 or g.shape != (n, n):
                raise ValueError("generators must be square matrices of equal size")
            err = np.linalg.norm(g.T @ g - np.eye(n))
            if err >= IDENTITY_TOL:
                raise NotOrthogonal(f"generator is not orthogonal (|g^T g - I| = {err:.3e})")
        self.dim = n
        self.cap = cap
        self.generators = np.array(gens)
        elems = [np.eye(n)]
        words: list[tuple] = [()]
        lookup = {_key(elems[0]): 0}
        head = 0
        while head < len(elems):
            base = elems[head]
            for gi, g in enumerate(gens):
                p = g @ base
                if self._find(p, lookup, elems) is None:
                    if len(elems) >= cap:
                        raise ClosureExceedsCap(
                            f"closure exceeds cap {cap}: generators do not generate a small finite group")
                    lookup[_key(p)] = len(elems)
                    elems.append(p)
                    words.append((gi,) + words[head])
            head += 1
        self.elements = np.array(elems)
        self.words = words
        self._mult = None
        self._inv = None
        self.gen_index = [self.index(g) for g in gens]
        self.effectiveness = float("inf")

    @staticmethod
    def _find(p, lookup, elems):
        i = lookup.get(_key(p))
        if i is not None:
            return i
        d = np.linalg.norm(np.asarray(elems) - p, axis=(1, 2))
        j = int(np.argmin(d))
        return j if d[j] < IDENTITY_TOL else None

    @property
    def order(self) -> int:
        return len(self.elements)

    def __len__(self):
        return self.order

    def index(self, matrix, tol: float = 1e-9) -> int | None:
        d = np.linalg.norm(self.elements - np.asarray(matrix, float), axis=(1, 2))
        j = int(np.argmin(d))
        return j if d[j] < tol else None

    @property
    def mult(self) -> np.ndarray:
        """Cayley table: ``mult[i, j]`` is the index of ``elements[i] @ elements[j]``."""
        if self._mult is None:
            k = self.order
            t = np.empty((k, k), dtype=int)
            for i in range(k):
                for j in range(k):
                    idx = self.index(self.elements[i] @ self.elements[j])
                    if idx is None:
                        raise AssertionError("group not closed under products")
                    t[i, j] = idx
            self._mult = t
        return self._mult

    @property
    def inverse(self) -> np.ndarray:
        if self._inv is None:
            self._inv = np.array([int(np.where(row == 0)[0][0]) for row in self.mult])
        return self._inv

    def act(self, points) -> np.ndarray:
        """All images ``g x``: array (order, N, n)."""
        p = np.atleast_2d(np.asarray(points, float))
        return np.einsum("gij,nj->gni", self.elements, p)

    def stabilizer(self, point, tol: float = RESIDUAL_TOL) -> list[int]:
        p = np.asarray(point, float)
        d = np.linalg.norm(self.elements @ p - p, axis=-1)
        return [int(i) for i in np.where(d < tol)[0]]

    def table_from_images(self, target: "FiniteGroupAction", images: Sequence[int]) -> np.ndarray:
        """Extend generator images (target indices) to a full element table along closure words."""
        if len(images) != len(self.generators):
            raise ValueError("need one image per generator")
        table = np.empty(self.order, dtype=int)
        for e, word in enumerate(self.words):
            acc = 0
            for gi in reversed(word):
                acc = target.mult[int(images[gi]), acc]
            table[e] = acc
        return table

    def is_homomorphism(self, table, target: "FiniteGroupAction") -> bool:
        table = np.asarray(table)
        if table.shape != (self.order,) or table.min() < 0 or table.max() >= target.order:
            return False
        lhs = table[self.mult]
        rhs = target.mult[table[:, None], table[None, :]]
        return bool(np.array_equal(lhs, rhs))

    def is_closed_subset(self, indices: Iterable[int]) -> bool:
        s = set(int(i) for i in indices)
        return 0 in s and all(int(self.mult[a, b]) in s for a in s for b in s)


def validate_group(generators, cap: int = DEFAULT_CAP, dim: int | None = None) -> FiniteGroupAction:
    """Close ``generators`` under products and certify the result.

    Raises
    ------
    NotOrthogonal
        a generator fails ``|g^T g - I|_F < 1e-12``.
    ClosureExceedsCap
        more than ``cap`` distinct elements were produced.
    NotEffective
        some non-identity element moves every probe point by at most 1e-6.
    """
    grp = FiniteGroupAction(generators, cap=cap, dim=dim)
    probe = Domain.box([-1.0] * grp.dim, [1.0] * grp.dim).sample(5, shrink=1.0)
    cert = float("inf")
    for g in grp.elements[1:]:
        cert = min(cert, float(np.linalg.norm(probe @ g.T - probe, axis=-1).max()))
    if cert <= 1e-6:
        raise NotEffective(f"a non-identity element acts trivially (displacement {cert:.3e})")
    grp.effectiveness = cert
    return grp


def cyclic_rotations(k: int) -> FiniteGroupAction:
    return validate_group([rotation2d(2 * np.pi / k)])


# ---------------------------------------------------------------------------
# Charts and gluings
# ---------------------------------------------------------------------------

@dataclass
class Chart:
    id: str
    domain: Domain
    action: FiniteGroupAction

    def __post_init__(self):
        if self.action.dim != self.domain.dim:
            raise AtlasError(f"chart {self.id}: action dimension {self.action.dim} "
                             f"!= domain dimension {self.domain.dim}")

    def preservation_residual(self, m: int = 32) -> float:
        """Max distance of ``g b`` from the domain boundary over boundary samples ``b``."""
        if self.action.order == 1:
            return 0.0
        b = self.domain.boundary_samples(m)
        imgs = self.action.act(b).reshape(-1, self.domain.dim)
        return float(np.abs(self.domain.boundary_distance(imgs)).max())


class AffineEmbedding:
    """``u -> A u + b`` with ``A`` orthogonal."""

    kind = "affine"

    def __init__(self, matrix, translation=None):
        self.matrix = np.array(matrix, dtype=float)
        n = self.matrix.shape[0]
        self.translation = np.zeros(n) if translation is None else np.array(translation, dtype=float)

    def __call__(self, pts):
        return np.atleast_2d(pts) @ self.matrix.T + self.translation

    def inverse(self, pts):
        return (np.atleast_2d(pts) - self.translation) @ self.matrix

    def to_dict(self):
        return {"kind": "affine", "matrix": self.matrix.tolist(), "translation": self.translation.tolist()}


class PowerEmbedding:
    """Planar ``z -> z**(p/q)`` on the principal branch (source must avoid the negative real axis)."""

    kind = "power"

    def __init__(self, numerator: int, denominator: int = 1):
        if numerator == 0 or denominator <= 0:
            raise ValueError("power embedding needs a nonzero exponent and positive denominator")
        self.numerator, self.denominator = int(numerator), int(denominator)
        self.exponent = self.numerator / self.denominator

    @staticmethod
    def _pow(pts, e):
        p = np.atleast_2d(pts)
        z = p[:, 0] + 1j * p[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.exp(e * np.log(z))
        return np.stack([w.real, w.imag], -1)

    def __call__(self, pts):
        return self._pow(pts, self.exponent)

    def inverse(self, pts):
        return self._pow(pts, 1.0 / self.exponent)

    def to_dict(self):
        return {"kind": "power", "exponent": [self.numerator, self.denominator]}


@dataclass
class GluingEmbedding:
    source: str
    target: str
    embedding: object
    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=int)


@dataclass
class OrbifoldAtlas:
    """Charts, gluing embeddings and declared overlaps (pairs of chart ids)."""

    charts: list
    gluings: list = field(default_factory=list)
    overlaps: list = field(default_factory=list)
    name: str = "atlas"

    def __post_init__(self):
        ids = [c.id for c in self.charts]
        if len(set(ids)) != len(ids):
            raise AtlasError("duplicate chart ids")
        if len({c.domain.dim for c in self.charts}) > 1:
            raise AtlasError("charts of different dimensions")
        self._by_id = {c.id: c for c in self.charts}
        for g in self.gluings:
            for cid in (g.source, g.target):
                if cid not in self._by_id:
                    raise AtlasError(f"gluing refers to unknown chart {cid!r}")
        for a, b in self.overlaps:
            for cid in (a, b):
                if cid not in self._by_id:
                    raise AtlasError(f"overlap refers to unknown chart {cid!r}")

    def __getitem__(self, chart_id: str) -> Chart:
        try:
            return self._by_id[chart_id]
        except KeyError:
            raise AtlasError(f"unknown chart {chart_id!r}") from None

    @property
    def dim(self) -> int:
        return self.charts[0].domain.dim

    def chart_ids(self) -> list[str]:
        return [c.id for c in self.charts]

    def has_witness(self, a: str, b: str) -> str | None:
        """Id of a chart embedding into both ``a`` and ``b`` (a chart counts as embedding into itself)."""
        into = {}
        for c in self.charts:
            into[c.id] = {c.id}
        for g in self.gluings:
            into[g.source].add(g.target)
        for cid, targets in into.items():
            if a in targets and b in targets:
                return cid
        return None


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def gluing_residual(atlas: OrbifoldAtlas, gluing: GluingEmbedding, m: int = 17) -> float:
    """``max |lambda(g u) - alpha(g) lambda(u)|`` over the source group and a sample grid."""
    src, tgt = atlas[gluing.source], atlas[gluing.target]
    u = src.domain.sample(m)
    lam_u = gluing.embedding(u)
    worst = 0.0
    for e, g in enumerate(src.action.elements):
        lhs = gluing.embedding(u @ g.T)
        rhs = lam_u @ tgt.action.elements[gluing.alpha[e]].T
        worst = max(worst, float(np.linalg.norm(lhs - rhs, axis=-1).max()))
    return worst


def validate_atlas(atlas: OrbifoldAtlas, tol: float = RESIDUAL_TOL, m: int = 17) -> ValidationReport:
    rep = ValidationReport(atlas.name)
    for c in atlas.charts:
        rep.add("effective", c.action.effectiveness > 1e-6, chart=c.id,
                certificate=c.action.effectiveness, order=c.action.order)
        res = c.preservation_residual()
        rep.add("domain_preserved", res < tol, residual=res, chart=c.id)
    for k, g in enumerate(atlas.gluings):
        src, tgt = atlas[g.source], atlas[g.target]
        label = dict(gluing=k, source=g.source, target=g.target)
        hom = src.action.is_homomorphism(g.alpha, tgt.action)
        rep.add("alpha_homomorphism", hom, **label)
        res = gluing_residual(atlas, g, m) if hom or g.alpha.shape == (src.action.order,) else float("inf")
        rep.add("equivariance", res < tol, residual=res, **label)
        u = src.domain.sample(m)
        img = g.embedding(u)
        inside = tgt.domain.contains(img)
        rep.add("image_inside_target", bool(inside.all()), outside=int((~inside).sum()), **label)
        d_img = np.linalg.norm(img[:, None] - img[None], axis=-1)
        d_src = np.linalg.norm(u[:, None] - u[None], axis=-1)
        off = ~np.eye(len(u), dtype=bool)
        ratio = float((d_img[off] / d_src[off]).min()) if len(u) > 1 else 1.0
        rep.add("injective", ratio > 1e-6, min_distance_ratio=ratio, **label)
    for a, b in atlas.overlaps:
        w = atlas.has_witness(a, b)
        rep.add("compatibility_witness", w is not None, charts=[a, b], witness=w)
    return rep


def isotropy_orders(atlas: OrbifoldAtlas, chart_id: str, point, tol: float = RESIDUAL_TOL) -> dict:
    """Stabilizer order of the point in every chart reachable through gluings."""
    chart = atlas[chart_id]
    u = np.asarray(point, float)
    if not chart.domain.contains(u)[0]:
        raise PointNotCovered(f"point {u.tolist()} is not inside chart {chart_id!r}")
    seen = {chart_id: u}
    queue = [chart_id]
    while queue:
        cid = queue.pop(0)
        cu = seen[cid]
        for g in atlas.gluings:
            if g.source == cid and g.target not in seen:
                seen[g.target] = g.embedding(cu)[0]
                queue.append(g.target)
            elif g.target == cid and g.source not in seen:
                src = atlas[g.source]
                for v in atlas[cid].action.act(cu)[:, 0]:
                    w = g.embedding.inverse(v)
                    if src.domain.contains(w)[0] and np.linalg.norm(g.embedding(w)[0] - v) < tol:
                        seen[g.source] = w[0]
                        queue.append(g.source)
                        break
    return {cid: len(atlas[cid].action.stabilizer(p, tol)) for cid, p in seen.items()}


def isotropy_order(atlas: OrbifoldAtlas, chart_id: str, point, tol: float = RESIDUAL_TOL) -> int:
    """Order of the isotropy group at the orbifold point lifted to ``point`` in ``chart_id``.

    Raises :class:`InconsistentIsotropy` when charts reached through gluings disagree.
    """
    orders = isotropy_orders(atlas, chart_id, point, tol)
    values = set(orders.values())
    if len(values) != 1:
        raise InconsistentIsotropy(f"isotropy differs across charts: {orders}")
    return values.pop()


# ---------------------------------------------------------------------------
# Suborbifolds
# ---------------------------------------------------------------------------

@dataclass
class SuborbifoldWitness:
    """Affine subspace ``point + span(basis rows)`` in a host chart with a subgroup of its group."""

    chart: str
    subgroup: tuple
    point: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        self.point = np.asarray(self.point, float)
        b = np.atleast_2d(np.asarray(self.basis, float))
        if b.size and np.linalg.norm(b @ b.T - np.eye(len(b))) > 1e-9:
            raise ValueError("suborbifold basis must be orthonormal")
        self.basis = b
        self.subgroup = tuple(int(i) for i in self.subgroup)

    def distance(self, pts) -> np.ndarray:
        d = np.atleast_2d(pts) - self.point
        return np.linalg.norm(d - (d @ self.basis.T) @ self.basis, axis=-1)

    def samples(self, domain: Domain, m: int = 17) -> np.ndarray:
        k = len(self.basis)
        if k == 0:
            p = self.point[None]
            return p[domain.contains(p)]
        lo, hi = domain.bounds
        span = float(np.max(hi - lo))
        t = np.linspace(-span, span, m)
        grid = np.stack(np.meshgrid(*([t] * k), indexing="ij"), -1).reshape(-1, k)
        pts = self.point + grid @ self.basis
        return pts[domain.contains(pts)]


def validate_suborbifold(atlas: OrbifoldAtlas, witnesses: Sequence[SuborbifoldWitness],
                         tol: float = RESIDUAL_TOL) -> ValidationReport:
    rep = ValidationReport(f"{atlas.name}:suborbifold")
    for k, w in enumerate(witnesses):
        chart = atlas[w.chart]
        closed = chart.action.is_closed_subset(w.subgroup)
        v = w.samples(chart.domain)
        res = 0.0
        for e in w.subgroup:
            if len(v):
                res = max(res, float(w.distance(v @ chart.action.elements[e].T).max()))
        full = set(w.subgroup) == set(range(chart.action.order))
        rep.add("subgroup_closed", closed, witness=k, chart=w.chart)
        rep.add("invariant_submanifold", res < tol and len(v) > 0, residual=res,
                witness=k, chart=w.chart, full=full, samples=int(len(v)))
    return rep


# ---------------------------------------------------------------------------
# Standard atlases
# ---------------------------------------------------------------------------

def _identity_table(src: FiniteGroupAction) -> np.ndarray:
    return np.arange(src.order)


def cone_atlas(k: int, radius: float = 1.0) -> OrbifoldAtlas:
    """Single disk chart with the rotation group of order ``k`` (the cone ``D/Z_k``)."""
    return OrbifoldAtlas([Chart("U", Domain.disk(radius), cyclic_rotations(k))], name=f"cone_Z{k}")


def mirror_atlas(radius: float = 1.0) -> OrbifoldAtlas:
    """Disk modulo the reflection across the x-axis: the half-disk with mirror edge."""
    grp = validate_group([reflection2d(0.0)])
    return OrbifoldAtlas([Chart("U", Domain.disk(radius), grp)], name="mirror_half_disk")


def football_atlas(p: int, q: int, radius: float = 1.25) -> OrbifoldAtlas:
    """Sphere with cone points of orders ``p`` (north) and ``q`` (south).

    Charts ``N`` and ``S`` are cone charts in the coordinates whose ``p``-th
    (resp. ``q``-th) powers are the two stereographic coordinates. ``N0``/``S0``
    are smaller cone charts embedded by inclusion. ``W`` is a small disk with
    trivial group around ``z = 1`` that embeds into ``N`` by inclusion and into
    ``S`` by ``z -> z**(-p/q)``; it witnesses the overlap of the two caps.
    """
    gp, gq = cyclic_rotations(p), cyclic_rotations(q)
    trivial = validate_group([], dim=2)
    charts = [
        Chart("N", Domain.disk(radius), gp),
        Chart("S", Domain.disk(radius), gq),
        Chart("N0", Domain.disk(0.5), gp),
        Chart("S0", Domain.disk(0.5), gq),
        Chart("W", Domain.disk(0.08, center=(1.0, 0.0)), trivial),
    ]
    ident = AffineEmbedding(np.eye(2))
    gluings = [
        GluingEmbedding("N0", "N", ident, _identity_table(gp)),
        GluingEmbedding("S0", "S", ident, _identity_table(gq)),
        GluingEmbedding("W", "N", ident, [0]),
        GluingEmbedding("W", "S", PowerEmbedding(-p, q), [0]),
    ]
    return OrbifoldAtlas(charts, gluings, overlaps=[("N", "S"), ("N0", "N"), ("S0", "S")],
                         name=f"football_S2({p},{q})")


def atlas_from_charts(charts: Mapping[str, tuple], name: str = "atlas") -> OrbifoldAtlas:
    """Convenience: ``{id: (domain, generators)}`` with no gluings."""
    return OrbifoldAtlas([Chart(cid, dom, validate_group(gens, dim=dom.dim))
                          for cid, (dom, gens) in charts.items()], name=name)
