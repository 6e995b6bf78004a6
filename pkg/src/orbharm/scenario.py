"""
Scenario files
==============

A scenario is a JSON document naming atlases, metrics, maps, model tensors,
foliations, foliated maps and flow parameters. It also lists the checks each
CLI subcommand should run. Validation has two stages. The first is a strict
JSON schema (unknown keys rejected). The second resolves every name reference.
Either stage raises :class:`SchemaError` naming the offending path.

The format is documented in ``docs/scenarios.md``.
"""
from __future__ import annotations

import json
from functools import cached_property
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .atlas import (AffineEmbedding, Chart, Domain, GluingEmbedding, OrbifoldAtlas, PowerEmbedding,
                    cone_atlas, football_atlas, mirror_atlas, validate_group)
from .errors import OrbharmError, SchemaError
from .foliation import FoliatedMap, build_mapping_torus, build_product
from .geometry import MetricField, ModelTensor
from .lifts import AffineLift, ComplexPowerLift, ExpressionLift, GridLift, identity_lift
from .orbmap import ChartLift, CompleteOrbifoldMap, theta_from_images

SCHEMA_VERSION = 1
SUBCOMMANDS = ("validate-atlas", "validate-map", "metric-check", "christoffel", "tension", "flow",
               "stabilizer", "foliation-build", "foliation-harness")

_num = {"type": "number"}
_name = {"type": "string", "minLength": 1}
_vector = {"type": "array", "items": _num, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}


def _obj(props: dict, required=(), **extra) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False, **extra}


def _named(schema: dict) -> dict:
    return {"type": "object", "additionalProperties": schema}


_domain = _obj({"kind": {"enum": ["disk", "box"]}, "radius": {"type": "number", "exclusiveMinimum": 0},
                "center": _vector, "dim": {"type": "integer", "minimum": 1},
                "lower": _vector, "upper": _vector}, ["kind"])

_embedding = {"oneOf": [
    _obj({"kind": {"const": "affine"}, "matrix": _matrix, "translation": _vector}, ["kind", "matrix"]),
    _obj({"kind": {"const": "power"}, "numerator": {"type": "integer"},
          "denominator": {"type": "integer", "minimum": 1}}, ["kind", "numerator"]),
]}

_atlas = {"oneOf": [
    _obj({"factory": {"enum": ["cone", "mirror", "football"]}, "k": {"type": "integer", "minimum": 1},
          "p": {"type": "integer", "minimum": 1}, "q": {"type": "integer", "minimum": 1},
          "radius": {"type": "number", "exclusiveMinimum": 0}, "description": {"type": "string"}},
         ["factory"]),
    _obj({"charts": {"type": "array", "minItems": 1, "items": _obj(
              {"id": _name, "domain": _domain, "generators": {"type": "array", "items": _matrix},
               "cap": {"type": "integer", "minimum": 1}}, ["id", "domain", "generators"])},
          "gluings": {"type": "array", "items": _obj(
              {"source": _name, "target": _name, "embedding": _embedding,
               "alpha": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
              ["source", "target", "embedding", "alpha"])},
          "overlaps": {"type": "array", "items": {"type": "array", "items": _name,
                                                  "minItems": 2, "maxItems": 2}},
          "description": {"type": "string"}},
         ["charts"]),
]}

_term = {"type": "array", "prefixItems": [_num, {"type": "array", "items": {"type": "integer", "minimum": 0}}],
         "minItems": 2, "maxItems": 2}
_metric = {"oneOf": [
    _obj({"preset": {"enum": ["flat", "sphere", "hyperbolic"]}, "dim": {"type": "integer", "minimum": 1},
          "domain": _domain, "description": {"type": "string"}}, ["preset"]),
    _obj({"polynomial": {"type": "array", "items": {"type": "array", "items": {"type": "array",
                                                                                 "items": _term}}},
          "domain": _domain, "description": {"type": "string"}}, ["polynomial"]),
]}

_lift = _obj({
    "target_chart": _name,
    "theta_images": {"type": "array", "items": {"anyOf": [{"type": "integer", "minimum": 0}, _matrix]}},
    "expression": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    "variables": {"type": "array", "items": _name},
    "power": {"type": "integer", "minimum": 0},
    "coefficient": _num,
    "affine": _obj({"matrix": _matrix, "translation": _vector}, ["matrix"]),
    "identity": {"const": True},
    "grid": {"type": "string"},
}, ["target_chart", "theta_images"], oneOf=[{"required": [k]} for k in
                                            ("expression", "power", "affine", "identity", "grid")])

_map = _obj({"source": _name, "target": _name, "lifts": _named(_lift), "description": {"type": "string"}},
            ["source", "target", "lifts"])

_tensor = _obj({"components": {"type": ["array", "number"]}, "p": {"type": "integer", "minimum": 0},
                "q": {"type": "integer", "minimum": 0}, "description": {"type": "string"}}, ["components"])

_foliation = _obj({"construction": {"enum": ["mapping_torus", "product"]}, "gamma": _matrix,
                   "order": {"type": "integer", "minimum": 1}, "metric": _name, "domain": _domain,
                   "warp": _num, "leaf": {"enum": ["circle", "line"]}, "description": {"type": "string"}},
                  ["construction", "metric"])

_fmap = _obj({"source": _name, "target": _name, "leaf": {"type": "string"},
              "transverse": {"type": "array", "items": {"type": "string"}, "minItems": 1},
              "description": {"type": "string"}}, ["source", "target", "leaf", "transverse"])

_flow = _obj({"map": _name, "chart": _name, "boundary": _name, "source_metric": _name,
              "target_metric": _name, "kind": {"enum": ["cartesian", "polar"]},
              "grid": {"type": "integer", "minimum": 5}, "dt": {"type": ["number", "null"]},
              "tol": {"type": "number", "exclusiveMinimum": 0}, "max_iter": {"type": "integer", "minimum": 1},
              "average": {"type": "boolean"}, "local_step": {"type": "boolean"},
              "growth_window": {"type": "integer", "minimum": 1},
              "clamp_fraction": {"type": "number", "exclusiveMinimum": 0},
              "max_final_error": {"type": "number", "exclusiveMinimum": 0}},
             ["map", "source_metric", "target_metric"])

_checks = _obj({
    "validate-atlas": {"type": "array", "items": _name},
    "validate-map": {"type": "array", "items": _name},
    "metric-check": {"type": "array", "items": _obj({"metric": _name, "atlas": _name}, ["metric"])},
    "christoffel": {"type": "array", "items": _obj(
        {"metric": _name, "h": {"type": "number", "exclusiveMinimum": 0},
         "points": {"type": "integer", "minimum": 1}, "tol": {"type": "number", "exclusiveMinimum": 0}},
        ["metric"])},
    "tension": {"type": "array", "items": _obj(
        {"map": _name, "chart": _name, "source_metric": _name, "target_metric": _name,
         "expect": {"anyOf": [{"const": "harmonic"}, _num]}, "tol": {"type": "number", "exclusiveMinimum": 0},
         "grid": {"type": "integer", "minimum": 2}},
        ["map", "source_metric", "target_metric"])},
    "stabilizer": {"type": "array", "items": _obj({"tensor": _name, "expected_dim": {"type": "integer",
                                                                                     "minimum": 0}},
                                                  ["tensor"])},
    "foliation-build": {"type": "array", "items": _name},
    "foliation-harness": _obj({"maps": {"type": "array", "items": _name},
                               "tol": {"type": "number", "exclusiveMinimum": 0}}),
})

SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "name": {"type": "string"},
    "description": {"type": "string"},
    "tolerance": {"type": "number", "exclusiveMinimum": 0},
    "atlases": _named(_atlas),
    "metrics": _named(_metric),
    "maps": _named(_map),
    "tensors": _named(_tensor),
    "foliations": _named(_foliation),
    "foliated_maps": _named(_fmap),
    "flow": _flow,
    "checks": _checks,
}, ["schema_version"], **{"$schema": "https://json-schema.org/draft/2020-12/schema"})


def _path(parts) -> str:
    return "/".join(str(p) for p in parts) or "<root>"


def validate_schema(doc) -> None:
    """Raise :class:`SchemaError` for the most relevant violation, naming its JSON path."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    err = jsonschema.exceptions.best_match(v.iter_errors(doc))
    if err is not None:
        raise SchemaError(f"{_path(err.absolute_path)}: {err.message}")


def shipped_scenarios() -> list[str]:
    root = resources.files("orbharm") / "scenarios"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def locate(path) -> Path:
    """A path on disk, or the name of a scenario shipped with the package."""
    p = Path(path)
    if p.exists():
        return p
    for name in (p.name, p.name + ".json"):
        shipped = resources.files("orbharm") / "scenarios" / name
        if shipped.is_file():
            return Path(str(shipped))
    raise FileNotFoundError(f"scenario file {path} not found")


def _domain_from(d: dict) -> Domain:
    if d["kind"] == "disk":
        return Domain.disk(d.get("radius", 1.0), d.get("center"), d.get("dim", len(d.get("center", [0, 0]))))
    return Domain.box(d["lower"], d["upper"])


class Scenario:
    """Parsed and cross-checked scenario; objects are built on first access."""

    def __init__(self, doc: dict, base: Path | None = None, name: str = "scenario"):
        validate_schema(doc)
        self.doc = doc
        self.base = base or Path(".")
        self.name = doc.get("name", name)
        self.tolerance = doc.get("tolerance", 1e-9)
        self._cache = {}
        self._resolve_references()

    @classmethod
    def load(cls, path) -> "Scenario":
        p = locate(path)
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"<root>: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls(doc, p.parent, p.stem)

    def section(self, key: str) -> dict:
        return self.doc.get(key, {})

    def checks(self, sub: str):
        return self.doc.get("checks", {}).get(sub)

    # reference resolution -------------------------------------------------------------
    def _need(self, section: str, name: str, where: list):
        if name not in self.section(section):
            raise SchemaError(f"{_path(where)}: unknown {section[:-1].replace('_', ' ')} {name!r}")

    def _chart_ids(self, atlas: str) -> list:
        spec = self.section("atlases")[atlas]
        if "charts" in spec:
            return [c["id"] for c in spec["charts"]]
        return {"cone": ["U"], "mirror": ["U"], "football": ["N", "S", "N0", "S0", "W"]}[spec["factory"]]

    def _resolve_references(self):
        for aname, spec in self.section("atlases").items():
            if "charts" in spec:
                ids = self._chart_ids(aname)
                for k, c in enumerate(spec["charts"]):
                    n = _domain_from(c["domain"]).dim
                    for j, G in enumerate(c["generators"]):
                        if np.asarray(G, dtype=object).shape != (n, n):
                            raise SchemaError(f"atlases/{aname}/charts/{k}/generators/{j}: "
                                              f"expected a {n}x{n} matrix")
                for k, g in enumerate(spec.get("gluings", [])):
                    for end in ("source", "target"):
                        if g[end] not in ids:
                            raise SchemaError(f"atlases/{aname}/gluings/{k}/{end}: unknown chart {g[end]!r}")
                for k, pair in enumerate(spec.get("overlaps", [])):
                    for j, cid in enumerate(pair):
                        if cid not in ids:
                            raise SchemaError(f"atlases/{aname}/overlaps/{k}/{j}: unknown chart {cid!r}")
            elif spec["factory"] == "cone" and "k" not in spec:
                raise SchemaError(f"atlases/{aname}: cone factory needs 'k'")
            elif spec["factory"] == "football" and not {"p", "q"} <= set(spec):
                raise SchemaError(f"atlases/{aname}: football factory needs 'p' and 'q'")
        for mname, spec in self.section("maps").items():
            for end in ("source", "target"):
                self._need("atlases", spec[end], ["maps", mname, end])
            src_ids, tgt_ids = self._chart_ids(spec["source"]), self._chart_ids(spec["target"])
            for cid, lift in spec["lifts"].items():
                if cid not in src_ids:
                    raise SchemaError(f"maps/{mname}/lifts/{cid}: unknown source chart {cid!r}")
                if lift["target_chart"] not in tgt_ids:
                    raise SchemaError(f"maps/{mname}/lifts/{cid}/target_chart: unknown chart "
                                      f"{lift['target_chart']!r}")
        for fname, spec in self.section("foliations").items():
            self._need("metrics", spec["metric"], ["foliations", fname, "metric"])
            if spec["construction"] == "mapping_torus" and "gamma" not in spec:
                raise SchemaError(f"foliations/{fname}: mapping_torus needs 'gamma'")
        for fname, spec in self.section("foliated_maps").items():
            for end in ("source", "target"):
                self._need("foliations", spec[end], ["foliated_maps", fname, end])
        if "flow" in self.doc:
            fl = self.doc["flow"]
            self._need("maps", fl["map"], ["flow", "map"])
            if "boundary" in fl:
                self._need("maps", fl["boundary"], ["flow", "boundary"])
            for key in ("source_metric", "target_metric"):
                self._need("metrics", fl[key], ["flow", key])
        refs = {"validate-atlas": "atlases", "validate-map": "maps", "foliation-build": "foliations"}
        for sub, section in refs.items():
            for k, name in enumerate(self.checks(sub) or []):
                self._need(section, name, ["checks", sub, k])
        for k, item in enumerate(self.checks("metric-check") or []):
            self._need("metrics", item["metric"], ["checks", "metric-check", k, "metric"])
            if "atlas" in item:
                self._need("atlases", item["atlas"], ["checks", "metric-check", k, "atlas"])
        for k, item in enumerate(self.checks("christoffel") or []):
            self._need("metrics", item["metric"], ["checks", "christoffel", k, "metric"])
        for k, item in enumerate(self.checks("tension") or []):
            self._need("maps", item["map"], ["checks", "tension", k, "map"])
            for key in ("source_metric", "target_metric"):
                self._need("metrics", item[key], ["checks", "tension", k, key])
        for k, item in enumerate(self.checks("stabilizer") or []):
            self._need("tensors", item["tensor"], ["checks", "stabilizer", k, "tensor"])
        harness = self.checks("foliation-harness") or {}
        for k, name in enumerate(harness.get("maps", [])):
            self._need("foliated_maps", name, ["checks", "foliation-harness", "maps", k])

    # builders ---------------------------------------------------------------------------
    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def atlas(self, name: str) -> OrbifoldAtlas:
        return self._cached(("atlas", name), lambda: self._build_atlas(name))

    def _build_atlas(self, name: str) -> OrbifoldAtlas:
        spec = self.section("atlases")[name]
        if "factory" in spec:
            f = spec["factory"]
            if f == "cone":
                return cone_atlas(spec["k"], spec.get("radius", 1.0))
            if f == "mirror":
                return mirror_atlas(spec.get("radius", 1.0))
            return football_atlas(spec["p"], spec["q"], spec.get("radius", 1.25))
        charts = []
        for k, c in enumerate(spec["charts"]):
            dom = _domain_from(c["domain"])
            try:
                grp = validate_group(c["generators"] or [np.eye(dom.dim)], cap=c.get("cap", 256), dim=dom.dim)
            except OrbharmError as exc:
                raise type(exc)(f"atlases/{name}/charts/{k}/generators: {exc}") from None
            charts.append(Chart(c["id"], dom, grp))
        glue = []
        for g in spec.get("gluings", []):
            e = g["embedding"]
            emb = (AffineEmbedding(e["matrix"], e.get("translation")) if e["kind"] == "affine"
                   else PowerEmbedding(e["numerator"], e.get("denominator", 1)))
            glue.append(GluingEmbedding(g["source"], g["target"], emb, g["alpha"]))
        overlaps = [tuple(p) for p in spec.get("overlaps", [])]
        return OrbifoldAtlas(charts, glue, overlaps=overlaps, name=name)

    def metric(self, name: str) -> MetricField:
        return self._cached(("metric", name), lambda: self._build_metric(name))

    def _build_metric(self, name: str) -> MetricField:
        spec = self.section("metrics")[name]
        dom = _domain_from(spec["domain"]) if "domain" in spec else None
        if "preset" in spec:
            return MetricField.preset(spec["preset"], spec.get("dim", 2), dom)
        entries = [[[(float(c), tuple(e)) for c, e in terms] for terms in row] for row in spec["polynomial"]]
        return MetricField.polynomial(entries, dom)

    def tensor(self, name: str) -> ModelTensor:
        spec = self.section("tensors")[name]
        comps = np.asarray(spec["components"], float)
        return ModelTensor(comps, spec.get("p", 0), spec.get("q", comps.ndim - spec.get("p", 0)))

    def _lift(self, spec: dict, dim: int):
        if "expression" in spec:
            return ExpressionLift(spec["expression"], spec.get("variables", ("x", "y", "z")[:dim]))
        if "power" in spec:
            return ComplexPowerLift(spec["power"], spec.get("coefficient", 1.0))
        if "affine" in spec:
            return AffineLift(spec["affine"]["matrix"], spec["affine"].get("translation"))
        if "identity" in spec:
            return identity_lift(dim)
        return GridLift.from_csv(self.base / spec["grid"])

    def map(self, name: str) -> CompleteOrbifoldMap:
        return self._cached(("map", name), lambda: self._build_map(name))

    def _build_map(self, name: str) -> CompleteOrbifoldMap:
        spec = self.section("maps")[name]
        X, Y = self.atlas(spec["source"]), self.atlas(spec["target"])
        lifts = {}
        for cid, ls in spec["lifts"].items():
            sc, tc = X[cid], Y[ls["target_chart"]]
            if len(ls["theta_images"]) != len(sc.action.generators):
                raise SchemaError(f"maps/{name}/lifts/{cid}/theta_images: expected "
                                  f"{len(sc.action.generators)} images, got {len(ls['theta_images'])}")
            try:
                theta = theta_from_images(sc.action, tc.action, ls["theta_images"])
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"maps/{name}/lifts/{cid}/theta_images: {exc}") from None
            lifts[cid] = ChartLift(cid, tc.id, self._lift(ls, sc.domain.dim), theta)
        return CompleteOrbifoldMap(X, Y, lifts, name=name)

    def foliation(self, name: str):
        return self._cached(("foliation", name), lambda: self._build_foliation(name))

    def _build_foliation(self, name: str):
        spec = self.section("foliations")[name]
        metric = self.metric(spec["metric"])
        dom = _domain_from(spec["domain"]) if "domain" in spec else None
        warp = spec.get("warp", 0.0)
        if spec["construction"] == "product":
            dom = dom or Domain.disk(1.0, dim=metric.dim)
            return build_product(dom, metric, warp=warp, leaf=spec.get("leaf", "circle"), name=name)
        return build_mapping_torus(spec["gamma"], metric, spec.get("order"), dom, warp=warp,
                                   tol=self.tolerance, name=name)

    def foliated_map(self, name: str) -> FoliatedMap:
        spec = self.section("foliated_maps")[name]
        return FoliatedMap(self.foliation(spec["source"]), self.foliation(spec["target"]), spec["leaf"],
                           spec["transverse"], name=name)

    @cached_property
    def names(self) -> dict:
        return {k: list(self.section(k)) for k in ("atlases", "metrics", "maps", "tensors", "foliations",
                                                   "foliated_maps")}
