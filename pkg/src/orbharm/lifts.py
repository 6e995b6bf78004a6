"""
Chart lifts
===========

A lift evaluates a map between chart coordinates. Every lift exposes the same
vectorised surface:

- ``lift(points)`` gives ``(N, m)`` values for ``(N, n)`` points
- ``lift.jacobian(points, h)`` gives ``(N, m, n)``
- ``lift.hessian(points, h)`` gives ``(N, m, n, n)``

``exact = True`` means derivatives are analytic and ``h`` is ignored.
:class:`GridLift` stores node values on a Cartesian or polar lattice and
interpolates bilinearly between nodes.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from ._numerics import central_hessian, central_jacobian
from .atlas import Domain
from .report import write_csv


class Lift:
    dim_in: int
    dim_out: int
    exact = False

    def __call__(self, pts) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, pts, h: float = 1e-4) -> np.ndarray:
        return central_jacobian(self, pts, h)

    def hessian(self, pts, h: float = 1e-4) -> np.ndarray:
        return central_hessian(self, pts, h)

    def to_dict(self) -> dict:
        return {"kind": type(self).__name__}


class CallableLift(Lift):
    """Wraps a vectorised python callable; derivatives by central differences."""

    def __init__(self, fun, dim_in: int, dim_out: int, name: str = "callable"):
        self.fun, self.dim_in, self.dim_out, self.name = fun, dim_in, dim_out, name

    def __call__(self, pts):
        return np.asarray(self.fun(np.atleast_2d(np.asarray(pts, float))), float).reshape(-1, self.dim_out)

    def to_dict(self):
        return {"kind": "callable", "name": self.name}


class AffineLift(Lift):
    exact = True

    def __init__(self, matrix, translation=None):
        self.matrix = np.atleast_2d(np.asarray(matrix, float))
        self.dim_out, self.dim_in = self.matrix.shape
        self.translation = np.zeros(self.dim_out) if translation is None else np.asarray(translation, float)

    def __call__(self, pts):
        return np.atleast_2d(pts) @ self.matrix.T + self.translation

    def jacobian(self, pts, h=None):
        return np.broadcast_to(self.matrix, (len(np.atleast_2d(pts)),) + self.matrix.shape).copy()

    def hessian(self, pts, h=None):
        return np.zeros((len(np.atleast_2d(pts)), self.dim_out, self.dim_in, self.dim_in))

    def to_dict(self):
        return {"kind": "affine", "matrix": self.matrix.tolist(), "translation": self.translation.tolist()}


def identity_lift(n: int) -> AffineLift:
    return AffineLift(np.eye(n))


class PolynomialLift(Lift):
    """Each output component is ``sum_t c_t prod_i x_i**e_ti``.

    ``components`` is a list (one per output) of ``[(coef, exponents), ...]``.
    """

    exact = True

    def __init__(self, components: Sequence[Sequence], dim_in: int | None = None):
        comps = []
        for terms in components:
            coefs = np.array([float(c) for c, _ in terms]) if terms else np.zeros(0)
            exps = np.array([list(e) for _, e in terms], dtype=int) if terms else np.zeros((0, dim_in or 0), int)
            comps.append((coefs, exps))
        self.components = comps
        self.dim_out = len(comps)
        self.dim_in = dim_in if dim_in is not None else max(e.shape[1] for _, e in comps)
        self._d1 = None
        self._d2 = None

    @staticmethod
    def _eval(coefs, exps, x):
        if len(coefs) == 0:
            return np.zeros(len(x))
        return (np.prod(x[:, None, :] ** exps[None], axis=-1) * coefs).sum(-1)

    @staticmethod
    def _diff(coefs, exps, i):
        c = coefs * exps[:, i]
        keep = c != 0
        e = exps[keep].copy()
        e[:, i] -= 1
        return c[keep], e

    def __call__(self, pts):
        x = np.atleast_2d(np.asarray(pts, float))
        return np.stack([self._eval(c, e, x) for c, e in self.components], -1)

    def _derivs(self):
        if self._d1 is None:
            n = self.dim_in
            self._d1 = [[self._diff(c, e, i) for i in range(n)] for c, e in self.components]
            self._d2 = [[[self._diff(*d[i], j) for j in range(n)] for i in range(n)] for d in self._d1]
        return self._d1, self._d2

    def jacobian(self, pts, h=None):
        x = np.atleast_2d(np.asarray(pts, float))
        d1, _ = self._derivs()
        return np.stack([np.stack([self._eval(*d[i], x) for i in range(self.dim_in)], -1) for d in d1], 1)

    def hessian(self, pts, h=None):
        x = np.atleast_2d(np.asarray(pts, float))
        _, d2 = self._derivs()
        n = self.dim_in
        return np.stack([np.stack([np.stack([self._eval(*d[i][j], x) for j in range(n)], -1)
                                   for i in range(n)], -2) for d in d2], 1)

    def to_dict(self):
        return {"kind": "polynomial", "components": [
            [[float(c), e.tolist()] for c, e in zip(cs, es)] for cs, es in self.components]}


class ComplexPowerLift(Lift):
    """Planar ``z -> c * z**k`` for an integer ``k >= 0``."""

    exact = True
    dim_in = dim_out = 2

    def __init__(self, power: int, coefficient: complex = 1.0):
        if int(power) != power or power < 0:
            raise ValueError("complex power lifts need a non-negative integer power")
        self.power = int(power)
        self.coefficient = complex(coefficient)

    @staticmethod
    def _z(pts):
        p = np.atleast_2d(np.asarray(pts, float))
        return p[:, 0] + 1j * p[:, 1]

    def _deriv(self, z, order):
        k, c = self.power, self.coefficient
        coef = c
        for j in range(order):
            coef = coef * (k - j)
        if coef == 0:
            return np.zeros_like(z)
        return coef * z ** (k - order)

    def __call__(self, pts):
        w = self._deriv(self._z(pts), 0)
        return np.stack([w.real, w.imag], -1)

    def jacobian(self, pts, h=None):
        d = self._deriv(self._z(pts), 1)
        a, b = d.real, d.imag
        return np.stack([np.stack([a, -b], -1), np.stack([b, a], -1)], 1)

    def hessian(self, pts, h=None):
        d = self._deriv(self._z(pts), 2)
        p, q = d.real, d.imag
        u = np.stack([np.stack([p, -q], -1), np.stack([-q, -p], -1)], -2)
        v = np.stack([np.stack([q, p], -1), np.stack([p, -q], -1)], -2)
        return np.stack([u, v], 1)

    def to_dict(self):
        return {"kind": "complex_power", "power": self.power,
                "coefficient": [self.coefficient.real, self.coefficient.imag]}


class ExpressionLift(Lift):
    """Components given as sympy-parsable strings in named variables; derivatives are symbolic."""

    exact = True

    def __init__(self, components: Sequence[str], variables: Sequence[str] = ("x", "y")):
        self.sources = list(components)
        self.variables = list(variables)
        syms = sp.symbols(self.variables)
        local = {str(s): s for s in syms}
        exprs = [parse_expr(c, local_dict=local, transformations=standard_transformations)
                 for c in self.sources]
        self.dim_in, self.dim_out = len(syms), len(exprs)
        jac = [[sp.diff(e, s) for s in syms] for e in exprs]
        hes = [[[sp.diff(e, s, t) for t in syms] for s in syms] for e in exprs]
        self._f = sp.lambdify(syms, exprs, "numpy")
        self._j = sp.lambdify(syms, jac, "numpy")
        self._h = sp.lambdify(syms, hes, "numpy")

    def _apply(self, fun, pts, shape):
        x = np.atleast_2d(np.asarray(pts, float))
        out = np.empty((len(x),) + shape)
        flat = out.reshape(len(x), -1)
        vals = fun(*x.T)

        def fill(v, idx):
            if isinstance(v, (list, tuple)):
                for k, item in enumerate(v):
                    idx = fill(item, idx)
                return idx
            flat[:, idx] = np.broadcast_to(np.asarray(v, float), (len(x),))
            return idx + 1

        fill(vals, 0)
        return out

    def __call__(self, pts):
        return self._apply(self._f, pts, (self.dim_out,))

    def jacobian(self, pts, h=None):
        return self._apply(self._j, pts, (self.dim_out, self.dim_in))

    def hessian(self, pts, h=None):
        return self._apply(self._h, pts, (self.dim_out, self.dim_in, self.dim_in))

    def to_dict(self):
        return {"kind": "expression", "components": self.sources, "variables": self.variables}


class ComposedLift(Lift):
    """``outer o inner`` with chain-rule derivatives."""

    def __init__(self, outer: Lift, inner: Lift):
        self.outer, self.inner = outer, inner
        self.dim_in, self.dim_out = inner.dim_in, outer.dim_out
        self.exact = outer.exact and inner.exact

    def __call__(self, pts):
        return self.outer(self.inner(pts))

    def jacobian(self, pts, h=1e-4):
        y = self.inner(pts)
        return np.einsum("nab,nbi->nai", self.outer.jacobian(y, h), self.inner.jacobian(pts, h))

    def hessian(self, pts, h=1e-4):
        y = self.inner(pts)
        ji = self.inner.jacobian(pts, h)
        return (np.einsum("nab,nbij->naij", self.outer.jacobian(y, h), self.inner.hessian(pts, h))
                + np.einsum("nabc,nbi,ncj->naij", self.outer.hessian(y, h), ji, ji))

    def to_dict(self):
        return {"kind": "composed", "outer": self.outer.to_dict(), "inner": self.inner.to_dict()}


# ---------------------------------------------------------------------------
# Grid lifts
# ---------------------------------------------------------------------------

class GridLift(Lift):
    """Node values on a lattice over a chart domain.

    ``kind="cartesian"``: ``m`` nodes per axis spanning the domain's bounding box.
    For a disk domain the nodes on or outside the circle are frozen (Dirichlet).

    ``kind="polar"`` (2-D disks centred at 0): ``m`` radii ``r_i = i R/(m-1)``
    times ``m - 1`` distinct angles ``2 pi j/(m-1)``. The angle ``2 pi`` closes
    the period, so the lattice reads as ``m x m``. Row ``i = 0`` holds copies
    of the origin value, and the outer ring is frozen.
    """

    def __init__(self, kind: str, domain: Domain, m: int, values, frozen=None):
        if kind not in ("cartesian", "polar"):
            raise ValueError(f"unknown grid kind {kind!r}")
        if m < 3:
            raise ValueError("grid needs at least 3 nodes per axis")
        self.kind, self.domain, self.m = kind, domain, int(m)
        n = domain.dim
        self.dim_in = n
        if kind == "polar":
            if domain.kind != "disk" or n != 2 or np.any(np.array(domain.center) != 0):
                raise ValueError("polar grids need a 2-D disk centred at the origin")
            self.radii = np.linspace(0.0, domain.radius, self.m)
            self.angles = 2 * np.pi * np.arange(self.m - 1) / (self.m - 1)
            self.dr = self.radii[1]
            self.dtheta = self.angles[1]
            self.shape = (self.m, self.m - 1)
            rr, tt = np.meshgrid(self.radii, self.angles, indexing="ij")
            self._nodes = np.stack([rr * np.cos(tt), rr * np.sin(tt)], -1)
        else:
            lo, hi = domain.bounds
            self.axes = [np.linspace(lo[i], hi[i], self.m) for i in range(n)]
            self.spacing = (hi - lo) / (self.m - 1)
            self.shape = (self.m,) * n
            self._nodes = np.stack(np.meshgrid(*self.axes, indexing="ij"), -1)
        vals = np.asarray(values, float)
        if vals.shape[: len(self.shape)] != self.shape:
            vals = vals.reshape(self.shape + (-1,))
        if vals.ndim == len(self.shape):
            vals = vals[..., None]
        self.values = vals.copy()
        self.dim_out = self.values.shape[-1]
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        self.frozen = self.default_frozen() if frozen is None else np.asarray(frozen, bool).reshape(self.shape)

    # -- geometry of the lattice -------------------------------------------------
    def default_frozen(self) -> np.ndarray:
        if self.kind == "polar":
            fr = np.zeros(self.shape, bool)
            fr[-1] = True
            return fr
        nodes = self._nodes
        edge = np.zeros(self.shape, bool)
        for ax in range(self.dim_in):
            idx = [slice(None)] * self.dim_in
            idx[ax] = 0
            edge[tuple(idx)] = True
            idx[ax] = -1
            edge[tuple(idx)] = True
        inside = self.domain.boundary_distance(nodes.reshape(-1, self.dim_in)).reshape(self.shape)
        return edge | (inside <= 1e-12 * max(1.0, self.h))

    @property
    def h(self) -> float:
        """Representative spacing: the lattice step (Cartesian) or the radial step (polar)."""
        return float(self.dr) if self.kind == "polar" else float(np.max(self.spacing))

    @property
    def min_spacing(self) -> float:
        if self.kind == "polar":
            return float(min(self.dr, self.dr * self.dtheta))
        return float(np.min(self.spacing))

    def nodes(self) -> np.ndarray:
        return self._nodes.reshape(-1, self.dim_in)

    def flat_values(self) -> np.ndarray:
        return self.values.reshape(-1, self.dim_out)

    @property
    def active(self) -> np.ndarray:
        return ~self.frozen

    def with_values(self, values) -> "GridLift":
        return GridLift(self.kind, self.domain, self.m, np.asarray(values).reshape(self.values.shape),
                        frozen=self.frozen)

    # -- evaluation ----------------------------------------------------------------
    def __call__(self, pts):
        p = np.atleast_2d(np.asarray(pts, float))
        if self.kind == "polar":
            return self._interp_polar(p)
        return self._interp_cartesian(p)

    def _interp_cartesian(self, p):
        n = self.dim_in
        lo = np.array([a[0] for a in self.axes])
        s = (p - lo) / self.spacing
        i0 = np.clip(np.floor(s).astype(int), 0, self.m - 2)
        t = s - i0
        out = np.zeros((len(p), self.dim_out))
        for corner in range(2 ** n):
            bits = [(corner >> k) & 1 for k in range(n)]
            w = np.ones(len(p))
            idx = []
            for k, b in enumerate(bits):
                w = w * (t[:, k] if b else 1 - t[:, k])
                idx.append(i0[:, k] + b)
            out += w[:, None] * self.values[tuple(idx)]
        return out

    def _interp_polar(self, p):
        r = np.hypot(p[:, 0], p[:, 1])
        th = np.mod(np.arctan2(p[:, 1], p[:, 0]), 2 * np.pi)
        M = self.m - 1
        s = r / self.dr
        i0 = np.clip(np.floor(s).astype(int), 0, self.m - 2)
        tr = s - i0
        q = th / self.dtheta
        j0 = np.floor(q).astype(int) % M
        tq = q - np.floor(q)
        j1 = (j0 + 1) % M
        v = self.values
        lower = (1 - tq)[:, None] * v[i0, j0] + tq[:, None] * v[i0, j1]
        upper = (1 - tq)[:, None] * v[i0 + 1, j0] + tq[:, None] * v[i0 + 1, j1]
        return (1 - tr)[:, None] * lower + tr[:, None] * upper

    def jacobian(self, pts, h=None):
        return central_jacobian(self, pts, self.h if h is None else h)

    def hessian(self, pts, h=None):
        return central_hessian(self, pts, self.h if h is None else h)

    # -- node derivatives by array stencils ----------------------------------------
    def node_derivatives(self):
        """First and second derivatives at lattice nodes from central stencils.

        Returns ``(J, H, valid)`` with ``J`` of shape ``shape + (m, n)``,
        ``H`` of shape ``shape + (m, n, n)`` and ``valid`` the nodes where the
        stencil is complete (NaN elsewhere).
        """
        if self.kind == "polar":
            return self._polar_derivatives()
        return self._cartesian_derivatives()

    def _cartesian_derivatives(self):
        n, f = self.dim_in, self.values
        J = np.full(self.shape + (self.dim_out, n), np.nan)
        H = np.full(self.shape + (self.dim_out, n, n), np.nan)
        core = tuple(slice(1, -1) for _ in range(n))

        def shifted(offsets):
            return f[tuple(slice(1 + o, self.m - 1 + o) for o in offsets)]

        zero = [0] * n
        fc = f[core]
        for i in range(n):
            ep, em = list(zero), list(zero)
            ep[i], em[i] = 1, -1
            hi = self.spacing[i]
            J[core + (slice(None), i)] = (shifted(ep) - shifted(em)) / (2 * hi)
            H[core + (slice(None), i, i)] = (shifted(ep) - 2 * fc + shifted(em)) / hi**2
            for j in range(i + 1, n):
                hj = self.spacing[j]
                o = {}
                for si in (1, -1):
                    for sj in (1, -1):
                        off = list(zero)
                        off[i], off[j] = si, sj
                        o[si, sj] = shifted(off)
                mixed = (o[1, 1] - o[1, -1] - o[-1, 1] + o[-1, -1]) / (4 * hi * hj)
                H[core + (slice(None), i, j)] = mixed
                H[core + (slice(None), j, i)] = mixed
        valid = np.zeros(self.shape, bool)
        valid[core] = True
        return J, H, valid

    def _polar_derivatives(self):
        f = self.values
        dr, dt = self.dr, self.dtheta
        J = np.full(self.shape + (self.dim_out, 2), np.nan)
        H = np.full(self.shape + (self.dim_out, 2, 2), np.nan)
        r = self.radii[1:-1, None, None]
        th = self.angles[None, :, None]
        c, s = np.cos(th), np.sin(th)
        fc, fp, fm = f[1:-1], f[2:], f[:-2]
        f_r = (fp - fm) / (2 * dr)
        f_rr = (fp - 2 * fc + fm) / dr**2
        roll = lambda a, k: np.roll(a, k, axis=1)  # noqa: E731
        f_t = (roll(fc, -1) - roll(fc, 1)) / (2 * dt)
        f_tt = (roll(fc, -1) - 2 * fc + roll(fc, 1)) / dt**2
        f_rt = (roll(fp, -1) - roll(fp, 1) - roll(fm, -1) + roll(fm, 1)) / (4 * dr * dt)
        J[1:-1, :, :, 0] = c * f_r - s / r * f_t
        J[1:-1, :, :, 1] = s * f_r + c / r * f_t
        H[1:-1, :, :, 0, 0] = (c * c * f_rr - 2 * c * s / r * f_rt + s * s / r**2 * f_tt
                              + s * s / r * f_r + 2 * c * s / r**2 * f_t)
        H[1:-1, :, :, 1, 1] = (s * s * f_rr + 2 * c * s / r * f_rt + c * c / r**2 * f_tt
                              + c * c / r * f_r - 2 * c * s / r**2 * f_t)
        mixed = (c * s * f_rr + (c * c - s * s) / r * f_rt - c * s / r**2 * f_tt
                 - c * s / r * f_r - (c * c - s * s) / r**2 * f_t)
        H[1:-1, :, :, 0, 1] = mixed
        H[1:-1, :, :, 1, 0] = mixed
        # origin: Fourier modes of the first ring
        ring, f0 = f[1], f[0, 0]
        ang = self.angles[:, None]
        mean = lambda a: a.mean(axis=0)  # noqa: E731
        fx = 2 * mean(ring * np.cos(ang)) / dr
        fy = 2 * mean(ring * np.sin(ang)) / dr
        lap = 4 * (mean(ring) - f0) / dr**2
        diff = 8 * mean(ring * np.cos(2 * ang)) / dr**2
        fxy = 4 * mean(ring * np.sin(2 * ang)) / dr**2
        J[0, :, :, 0] = fx
        J[0, :, :, 1] = fy
        H[0, :, :, 0, 0] = (lap + diff) / 2
        H[0, :, :, 1, 1] = (lap - diff) / 2
        H[0, :, :, 0, 1] = fxy
        H[0, :, :, 1, 0] = fxy
        valid = np.zeros(self.shape, bool)
        valid[:-1] = True
        return J, H, valid

    # -- io --------------------------------------------------------------------------
    def header(self) -> str:
        d = self.domain
        geo = (f"radius={d.radius!r} center={','.join(map(repr, d.center))}" if d.kind == "disk"
               else f"lower={','.join(map(repr, d.lower))} upper={','.join(map(repr, d.upper))}")
        return f"grid kind={self.kind} m={self.m} domain={d.kind} {geo} values={self.dim_out}"

    def to_csv(self, path) -> Path:
        n, k = self.dim_in, self.dim_out
        cols = [f"x{i}" for i in range(n)] + [f"f{a}" for a in range(k)] + ["frozen"]
        rows = np.concatenate([self.nodes(), self.flat_values(),
                               self.frozen.reshape(-1, 1).astype(float)], axis=1)
        return write_csv(path, cols, rows, comment=self.header())

    @classmethod
    def from_csv(cls, path) -> "GridLift":
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text or not text[0].startswith("# grid"):
            raise ValueError(f"{path}: missing '# grid ...' header line")
        meta = dict(tok.split("=", 1) for tok in text[0][2:].split()[1:])
        if meta["domain"] == "disk":
            center = [float(v) for v in meta["center"].split(",")]
            dom = Domain.disk(float(meta["radius"]), center)
        else:
            dom = Domain.box([float(v) for v in meta["lower"].split(",")],
                             [float(v) for v in meta["upper"].split(",")])
        data = np.loadtxt(text[2:], delimiter=",", ndmin=2)
        n, k = dom.dim, int(meta["values"])
        g = cls(meta["kind"], dom, int(meta["m"]), data[:, n:n + k], frozen=data[:, n + k] > 0.5)
        if not np.allclose(g.nodes(), data[:, :n], atol=1e-12):
            raise ValueError(f"{path}: node coordinates do not match the declared lattice")
        return g

    def to_dict(self):
        return {"kind": "grid", "grid": self.kind, "m": self.m}


def grid_from_lift(kind: str, domain: Domain, m: int, lift: Lift) -> GridLift:
    """Sample ``lift`` at every lattice node."""
    shape = (m,) * domain.dim if kind == "cartesian" else (m, m - 1)
    probe = GridLift(kind, domain, m, np.zeros(shape + (lift.dim_out,)))
    return probe.with_values(lift(probe.nodes()).reshape(probe.values.shape))


def radial_initial_grid(kind: str, domain: Domain, m: int, boundary: Lift) -> GridLift:
    """Frozen nodes take ``boundary`` values; active nodes interpolate linearly in the radius
    between the value at the centre and the boundary value along the same ray."""
    g = grid_from_lift(kind, domain, m, boundary)
    if domain.kind != "disk":
        raise ValueError("radial initialisation needs a disk domain")
    c = np.array(domain.center)
    x = g.nodes()
    d = x - c
    rho = np.linalg.norm(d, axis=-1)
    t = rho / domain.radius
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(rho[:, None] > 0, d / rho[:, None], 0.0)
    edge = boundary(c + domain.radius * unit)
    centre = boundary(c[None])
    init = t[:, None] * edge + (1 - t[:, None]) * centre
    vals = np.where(g.frozen.reshape(-1)[:, None], g.flat_values(), init)
    return g.with_values(vals.reshape(g.values.shape))
