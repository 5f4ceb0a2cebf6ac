"""JSON manifests: declarations of spaces, fields, families, maps, systems and tasks.

Schema (version ``"orbitkit/1"``)::

    {
      "version": "orbitkit/1",
      "options": {"rtol": 1e-9, ...},                      # optional
      "spaces":   [{"name", "coords", "constraints"?, "domain"?,
                    "retraction"?, "periods"?, "sampling_box"?}],
      "fields":   [{"name", "space", "components", "declared_complete"}],
      "families": [{"name", "fields": [field names]}],
      "maps":     [{"name", "domain", "codomain", "components"}],
      "systems":  [{"name", "map", "F0", "F1",
                    "pairing": [[F0 field, F1 field], ...]}],
      "tasks":    [{"name", "kind", ...arguments, "options"?, "seed"?,
                    "expect"?}]
    }

Pairing entries name fields or give 0-based indices into the families.
Flow words act rightmost letter first and index fields from 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .expr import ExprError, parse
from .fields import Family, VectorField
from .geometry import RETRACTIONS, Space
from .intertwine import MappedSystem, SmoothMap

VERSION = "orbitkit/1"

OPTION_KEYS = {"rtol": float, "atol": float, "max_step": float, "method": str, "escape_norm": float}

# kind -> (required arguments with their reference type, optional arguments with defaults)
TASKS: dict[str, tuple[dict[str, str], dict[str, Any]]] = {
    "bracket": ({"X": "field", "Y": "field"}, {}),
    "closure": ({"family": "family"}, {"depth": 2, "random_points": 0, "points": []}),
    "rank": (
        {"family": "family", "point": "point:family"},
        {"bracket_depth": 4, "push_words": 64, "push_len": 3, "push_t_max": 1.0, "rank_rel_tol": 1e-7},
    ),
    "chart": (
        {"family": "family", "point": "point:family"},
        {"bracket_depth": 4, "generators_only": False, "box": 1.0, "push_t_max": 1.0, "cond_max": 1e3},
    ),
    "sample": (
        {"family": "family", "point": "point:family", "budget": "int"},
        {"max_len": 6, "t_max": 1.0, "cell": 0.05, "csv": None},
    ),
    "check-map": ({"system": "system"}, {"n_samples": 64, "tol": 1e-8}),
    "rank-orbit": (
        {"system": "system", "point": "point:domain"},
        {"n_words": 20, "tol": 1e-7, "max_len": 4, "t_max": 1.0},
    ),
    "trivialize": (
        {"system": "system", "m1": "point:codomain", "u0star": "point:domain"},
        {
            "box": 1.0, "push_t_max": 1.0, "fiber_budget": 2000, "fiber_cell": 0.05, "fiber_max_len": 6,
            "fiber_t_max": 1.0, "n_samples": 100, "tol": 1e-6, "overlap": None, "csv": None,
        },
    ),
    "fiber": (
        {"system": "system", "m1": "point:codomain", "u0star": "point:domain"},
        {"budget": 2000, "cell": 0.05, "max_len": 6, "t_max": 1.0, "csv": None},
    ),
}
COMMON_TASK_KEYS = {"name", "kind", "options", "seed", "expect"}


@dataclass
class Diagnostic:
    locator: str
    message: str

    def __str__(self) -> str:
        return f"{self.locator}: {self.message}"


class ManifestError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("\n".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


@dataclass
class Manifest:
    path: Path
    raw: dict
    options: dict
    spaces: dict[str, Space] = field(default_factory=dict)
    fields: dict[str, VectorField] = field(default_factory=dict)
    families: dict[str, Family] = field(default_factory=dict)
    maps: dict[str, SmoothMap] = field(default_factory=dict)
    systems: dict[str, MappedSystem] = field(default_factory=dict)
    tasks: list[dict] = field(default_factory=list)
    # names declared per section, including ones whose definition failed
    declared: dict[str, set] = field(default_factory=dict)


class _Checker:
    def __init__(self):
        self.diags: list[Diagnostic] = []

    def err(self, loc: str, msg: str):
        self.diags.append(Diagnostic(loc, msg))

    def is_list(self, obj, key: str, loc: str, required: bool = True) -> list:
        if key not in obj:
            if required:
                self.err(f"{loc}.{key}" if loc else key, "missing")
            return []
        val = obj[key]
        if not isinstance(val, list):
            self.err(f"{loc}.{key}" if loc else key, "must be a list")
            return []
        return val

    def unknown(self, loc: str, what: str, val, declared: set):
        # a declared but broken definition was already reported at its own locator
        if not (isinstance(val, str) and val in declared):
            self.err(loc, f"unknown {what} {val!r}")

    def name(self, obj, loc: str, seen: set) -> str | None:
        nm = obj.get("name")
        if not isinstance(nm, str) or not nm:
            self.err(f"{loc}.name", "must be a non-empty string")
            return None
        if nm in seen:
            self.err(f"{loc}.name", f"duplicate name {nm!r}")
            return None
        seen.add(nm)
        return nm

    def expr(self, text, coords, loc: str):
        if not isinstance(text, str):
            self.err(loc, "expression must be a string")
            return None
        try:
            return parse(text, coords)
        except ExprError as exc:
            self.err(loc, str(exc))
            return None


def _check_spaces(ck: _Checker, raw: dict, m: Manifest):
    seen: set = m.declared.setdefault("spaces", set())
    for i, sp in enumerate(ck.is_list(raw, "spaces", "")):
        loc = f"spaces[{i}]"
        if not isinstance(sp, dict):
            ck.err(loc, "must be an object")
            continue
        nm = ck.name(sp, loc, seen)
        coords = sp.get("coords")
        if not (isinstance(coords, list) and coords and all(isinstance(c, str) and c for c in coords)):
            ck.err(f"{loc}.coords", "must be a non-empty list of names")
            continue
        if len(set(coords)) != len(coords):
            ck.err(f"{loc}.coords", "coordinate names must be unique")
            continue
        cons = [ck.expr(c, coords, f"{loc}.constraints[{j}]") for j, c in enumerate(ck.is_list(sp, "constraints", loc, False))]
        dom = [ck.expr(d, coords, f"{loc}.domain[{j}]") for j, d in enumerate(ck.is_list(sp, "domain", loc, False))]
        retraction = sp.get("retraction", "newton")
        if retraction not in RETRACTIONS:
            ck.err(f"{loc}.retraction", f"unknown retraction {retraction!r}; expected one of {sorted(RETRACTIONS)}")
            continue
        periods = sp.get("periods")
        if periods is not None and not (
            isinstance(periods, list) and len(periods) == len(coords) and all(isinstance(p, (int, float)) and p >= 0 for p in periods)
        ):
            ck.err(f"{loc}.periods", "must list one non-negative period per coordinate (0 = not periodic)")
            continue
        box = sp.get("sampling_box")
        if box is not None and not (
            isinstance(box, list) and len(box) == len(coords)
            and all(isinstance(b, list) and len(b) == 2 and all(isinstance(v, (int, float)) for v in b) and b[0] < b[1] for b in box)
        ):
            ck.err(f"{loc}.sampling_box", "must give one [lo, hi] pair per coordinate")
            continue
        if nm is None or None in cons or None in dom:
            continue
        try:
            m.spaces[nm] = Space(
                nm, tuple(coords), tuple(cons), tuple(dom), retraction,
                None if periods is None else tuple(float(p) for p in periods),
                None if box is None else tuple(tuple(map(float, b)) for b in box),
            )
        except ValueError as exc:
            ck.err(loc, str(exc))


def _check_fields(ck: _Checker, raw: dict, m: Manifest):
    seen: set = m.declared.setdefault("fields", set())
    for i, fd in enumerate(ck.is_list(raw, "fields", "")):
        loc = f"fields[{i}]"
        if not isinstance(fd, dict):
            ck.err(loc, "must be an object")
            continue
        nm = ck.name(fd, loc, seen)
        space = m.spaces.get(fd.get("space"))
        if space is None:
            ck.unknown(f"{loc}.space", "space", fd.get("space"), m.declared["spaces"])
            continue
        if not isinstance(fd.get("declared_complete"), bool):
            ck.err(f"{loc}.declared_complete", "must be given explicitly as true or false")
        comps = ck.is_list(fd, "components", loc)
        if len(comps) != space.dim:
            ck.err(f"{loc}.components", f"expected {space.dim} components, got {len(comps)}")
            continue
        exprs = [ck.expr(c, space.coords, f"{loc}.components[{j}]") for j, c in enumerate(comps)]
        if nm is None or None in exprs or not isinstance(fd.get("declared_complete"), bool):
            continue
        m.fields[nm] = VectorField(nm, space, tuple(exprs), fd["declared_complete"])


def _check_families(ck: _Checker, raw: dict, m: Manifest):
    seen: set = m.declared.setdefault("families", set())
    for i, fam in enumerate(ck.is_list(raw, "families", "")):
        loc = f"families[{i}]"
        if not isinstance(fam, dict):
            ck.err(loc, "must be an object")
            continue
        nm = ck.name(fam, loc, seen)
        members = ck.is_list(fam, "fields", loc)
        if not members:
            ck.err(f"{loc}.fields", "a family needs at least one field")
            continue
        resolved = []
        for j, f in enumerate(members):
            if f not in m.fields:
                ck.unknown(f"{loc}.fields[{j}]", "field", f, m.declared["fields"])
            else:
                resolved.append(m.fields[f])
        if len(resolved) != len(members) or nm is None:
            continue
        if len({id(f.space) for f in resolved}) != 1:
            ck.err(f"{loc}.fields", "all fields of a family must live on one space")
            continue
        if len(set(members)) != len(members):
            ck.err(f"{loc}.fields", "duplicate field in family")
            continue
        m.families[nm] = Family(nm, tuple(resolved))


def _check_maps(ck: _Checker, raw: dict, m: Manifest):
    seen: set = m.declared.setdefault("maps", set())
    for i, mp in enumerate(ck.is_list(raw, "maps", "", False)):
        loc = f"maps[{i}]"
        if not isinstance(mp, dict):
            ck.err(loc, "must be an object")
            continue
        nm = ck.name(mp, loc, seen)
        dom, cod = m.spaces.get(mp.get("domain")), m.spaces.get(mp.get("codomain"))
        if dom is None:
            ck.unknown(f"{loc}.domain", "space", mp.get("domain"), m.declared["spaces"])
        if cod is None:
            ck.unknown(f"{loc}.codomain", "space", mp.get("codomain"), m.declared["spaces"])
        if dom is None or cod is None:
            continue
        comps = ck.is_list(mp, "components", loc)
        if len(comps) != cod.dim:
            ck.err(f"{loc}.components", f"expected {cod.dim} components, got {len(comps)}")
            continue
        exprs = [ck.expr(c, dom.coords, f"{loc}.components[{j}]") for j, c in enumerate(comps)]
        if nm is not None and None not in exprs:
            m.maps[nm] = SmoothMap(nm, dom, cod, tuple(exprs))


def _resolve_member(ref, fam: Family):
    if isinstance(ref, bool):
        return None
    if isinstance(ref, int):
        return ref if 0 <= ref < len(fam) else None
    if isinstance(ref, str):
        try:
            return fam.index(ref)
        except KeyError:
            return None
    return None


def _check_systems(ck: _Checker, raw: dict, m: Manifest):
    seen: set = m.declared.setdefault("systems", set())
    for i, sy in enumerate(ck.is_list(raw, "systems", "", False)):
        loc = f"systems[{i}]"
        if not isinstance(sy, dict):
            ck.err(loc, "must be an object")
            continue
        nm = ck.name(sy, loc, seen)
        phi = m.maps.get(sy.get("map"))
        F0, F1 = m.families.get(sy.get("F0")), m.families.get(sy.get("F1"))
        for key, obj in (("map", phi), ("F0", F0), ("F1", F1)):
            if obj is None:
                section = "maps" if key == "map" else "families"
                ck.unknown(f"{loc}.{key}", "map" if key == "map" else "family", sy.get(key), m.declared[section])
        if phi is None or F0 is None or F1 is None:
            continue
        ok = True
        if F0.space is not phi.domain:
            ck.err(f"{loc}.F0", f"family lives on {F0.space.name!r} but the map starts on {phi.domain.name!r}")
            ok = False
        if F1.space is not phi.codomain:
            ck.err(f"{loc}.F1", f"family lives on {F1.space.name!r} but the map ends on {phi.codomain.name!r}")
            ok = False
        pairs = []
        for j, pr in enumerate(ck.is_list(sy, "pairing", loc)):
            ploc = f"{loc}.pairing[{j}]"
            if not (isinstance(pr, list) and len(pr) == 2):
                ck.err(ploc, "must be a [F0 field, F1 field] pair")
                ok = False
                continue
            a, b = _resolve_member(pr[0], F0), _resolve_member(pr[1], F1)
            if a is None:
                ck.err(ploc, f"unknown field {pr[0]!r} in family {F0.name!r}")
            if b is None:
                ck.err(ploc, f"unknown field {pr[1]!r} in family {F1.name!r}")
            if a is None or b is None:
                ok = False
                continue
            pairs.append((a, b))
        if not ok:
            continue
        missing0 = [F0[a].name for a in range(len(F0)) if a not in {p[0] for p in pairs}]
        missing1 = [F1[b].name for b in range(len(F1)) if b not in {p[1] for p in pairs}]
        if missing0:
            ck.err(f"{loc}.pairing", f"not total on F0: no image for {missing0}")
        if missing1:
            ck.err(f"{loc}.pairing", f"not onto F1: no lift for {missing1}")
        if nm is not None and not missing0 and not missing1:
            m.systems[nm] = MappedSystem(nm, phi, F0, F1, tuple(pairs))


def _point_ok(val, dim: int) -> bool:
    return isinstance(val, list) and len(val) == dim and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val)


def _check_point(ck: _Checker, loc: str, val, space: Space | None):
    if space is not None and not _point_ok(val, space.dim):
        ck.err(loc, f"expected a point with {space.dim} coordinates on {space.name!r}")


def _check_options(ck: _Checker, opts, loc: str):
    if opts is None:
        return
    if not isinstance(opts, dict):
        ck.err(loc, "must be an object")
        return
    for k, v in opts.items():
        if k not in OPTION_KEYS:
            ck.err(f"{loc}.{k}", f"unknown option; expected one of {sorted(OPTION_KEYS)}")
        elif OPTION_KEYS[k] is float and (isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0):
            ck.err(f"{loc}.{k}", "must be a positive number")
        elif OPTION_KEYS[k] is str and v not in ("rk45_adaptive", "rk4_fixed"):
            ck.err(f"{loc}.{k}", "must be 'rk45_adaptive' or 'rk4_fixed'")


def _check_tasks(ck: _Checker, raw: dict, m: Manifest):
    seen: set = set()
    for i, task in enumerate(ck.is_list(raw, "tasks", "")):
        loc = f"tasks[{i}]"
        if not isinstance(task, dict):
            ck.err(loc, "must be an object")
            continue
        ck.name(task, loc, seen)
        kind = task.get("kind")
        if kind not in TASKS:
            ck.err(f"{loc}.kind", f"unknown task kind {kind!r}; expected one of {sorted(TASKS)}")
            continue
        required, optional = TASKS[kind]
        for key in task:
            if key not in required and key not in optional and key not in COMMON_TASK_KEYS:
                ck.err(f"{loc}.{key}", f"unknown argument for a {kind} task")
        _check_options(ck, task.get("options"), f"{loc}.options")
        if "seed" in task and (isinstance(task["seed"], bool) or not isinstance(task["seed"], int)):
            ck.err(f"{loc}.seed", "must be an integer")
        if "expect" in task and not isinstance(task["expect"], dict):
            ck.err(f"{loc}.expect", "must be an object")
        family = m.families.get(task.get("family"))
        system = m.systems.get(task.get("system"))
        for key, ref in required.items():
            kloc = f"{loc}.{key}"
            if key not in task:
                ck.err(kloc, "missing")
                continue
            val = task[key]
            if ref == "field" and val not in m.fields:
                ck.unknown(kloc, "field", val, m.declared["fields"])
            elif ref == "family" and family is None:
                ck.unknown(kloc, "family", val, m.declared["families"])
            elif ref == "system" and system is None:
                ck.unknown(kloc, "system", val, m.declared["systems"])
            elif ref == "int" and (isinstance(val, bool) or not isinstance(val, int) or val < 1):
                ck.err(kloc, "must be a positive integer")
            elif ref == "point:family":
                _check_point(ck, kloc, val, family.space if family else None)
            elif ref == "point:domain":
                _check_point(ck, kloc, val, system.phi.domain if system else None)
            elif ref == "point:codomain":
                _check_point(ck, kloc, val, system.phi.codomain if system else None)
        if kind == "bracket" and task.get("X") in m.fields and task.get("Y") in m.fields:
            X, Y = m.fields[task["X"]], m.fields[task["Y"]]
            if X.space is not Y.space:
                ck.err(f"{loc}.Y", "X and Y live on different spaces")
            expect = task.get("expect", {})
            if isinstance(expect, dict) and "components" in expect:
                comps = expect["components"]
                if not isinstance(comps, list) or len(comps) != X.space.dim:
                    ck.err(f"{loc}.expect.components", f"expected {X.space.dim} components")
                else:
                    for j, c in enumerate(comps):
                        ck.expr(c, X.space.coords, f"{loc}.expect.components[{j}]")
        if kind == "closure" and family is not None:
            for j, p in enumerate(task.get("points", [])):
                _check_point(ck, f"{loc}.points[{j}]", p, family.space)
        if kind == "trivialize" and task.get("overlap") is not None and system is not None:
            ov = task["overlap"]
            if not isinstance(ov, dict):
                ck.err(f"{loc}.overlap", "must be an object with m1 and u0star")
            else:
                _check_point(ck, f"{loc}.overlap.m1", ov.get("m1"), system.phi.codomain)
                _check_point(ck, f"{loc}.overlap.u0star", ov.get("u0star"), system.phi.domain)
        m.tasks.append(task)


def check(raw: Any, path: str | Path = "<memory>") -> tuple[Manifest | None, list[Diagnostic]]:
    """Validate a decoded manifest and build its objects.

    Returns the manifest (``None`` when diagnostics were found) and the
    diagnostics.  No flows are integrated.
    """
    ck = _Checker()
    if not isinstance(raw, dict):
        return None, [Diagnostic("$", "manifest must be a JSON object")]
    if raw.get("version") != VERSION:
        ck.err("version", f"expected {VERSION!r}, got {raw.get('version')!r}")
    known = {"version", "options", "spaces", "fields", "families", "maps", "systems", "tasks", "description"}
    for key in raw:
        if key not in known:
            ck.err(key, "unknown top-level key")
    _check_options(ck, raw.get("options"), "options")
    m = Manifest(Path(path), raw, dict(raw.get("options") or {}))
    _check_spaces(ck, raw, m)
    _check_fields(ck, raw, m)
    _check_families(ck, raw, m)
    _check_maps(ck, raw, m)
    _check_systems(ck, raw, m)
    _check_tasks(ck, raw, m)
    return (None if ck.diags else m), ck.diags


def load(path: str | Path) -> tuple[Manifest | None, list[Diagnostic]]:
    """Read and validate a manifest file; JSON syntax errors become diagnostics."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        return None, [Diagnostic("$", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")]
    return check(raw, path)


def validate(path: str | Path) -> list[Diagnostic]:
    return load(path)[1]
