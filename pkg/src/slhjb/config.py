"""Run configuration: JSON text in, validated dataclasses out.

Every numeric field is checked here, before any mesh is built, so bad input
fails fast with a message naming the offending field.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import expr as ex
from .errors import ExpressionError, SlhjbError
from .mesh import BoxDomain
from .problem import (
    REGISTRY,
    ManufacturedProblem,
    Problem,
    ProblemBounds,
    benchmark,
    make_manufactured,
    problem_from_expressions,
    sample_control_set,
)


class ConfigError(SlhjbError, ValueError):
    def __init__(self, field_name: str, message: str) -> None:
        self.field = field_name
        super().__init__(f"config field '{field_name}': {message}")


@dataclass
class StudySpec:
    schedule: list[tuple[float, list[int]]] = field(default_factory=list)
    reference: Any = "exact"
    fixed_k: dict | None = None


@dataclass
class RunConfig:
    problem: dict
    domain: dict
    lam: float
    controls: dict
    cells_per_dim: list[int] | None = None
    h: float | None = None
    solver: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    study: StudySpec | None = None
    oracle: dict | None = None
    rollout: dict | None = None
    seed: int = 0

    def effective(self) -> dict:
        """JSON-ready dict that reproduces this run exactly when loaded again."""
        out = {
            "problem": self.problem,
            "domain": self.domain,
            "lambda": self.lam,
            "controls": self.controls,
            "solver": self.solver,
            "seed": self.seed,
        }
        if self.cells_per_dim is not None:
            out["cells_per_dim"] = self.cells_per_dim
        if self.h is not None:
            out["h"] = self.h
        if self.bounds:
            out["bounds"] = self.bounds
        if self.study is not None:
            study = asdict(self.study)
            study["schedule"] = [{"h": h, "cells": c} for h, c in self.study.schedule]
            if study["fixed_k"] is None:
                del study["fixed_k"]
            out["study"] = study
        if self.oracle is not None:
            out["oracle"] = self.oracle
        if self.rollout is not None:
            out["rollout"] = self.rollout
        return out

    def domain_box(self) -> BoxDomain:
        return BoxDomain(self.domain["lower"], self.domain["upper"])

    def build_problem(self) -> Problem | ManufacturedProblem:
        dom = self.domain_box()
        ctrl = sample_control_set((self.controls["lower"], self.controls["upper"]), self.controls["counts"])
        bounds = ProblemBounds(**self.bounds) if self.bounds else None
        desc = self.problem
        try:
            if "name" in desc:
                mp = benchmark(desc["name"], self.lam, dom, ctrl)
                if bounds is not None:
                    mp = ManufacturedProblem(mp.problem.with_bounds(**self.bounds), mp.vstar, mp.grad_vstar)
                return mp
            if "vstar" in desc:
                return make_manufactured(desc["vstar"], desc["dynamics"], self.lam, dom, ctrl, bounds)
            return problem_from_expressions(desc["dynamics"], desc["running_cost"], self.lam, dom, ctrl, bounds)
        except ExpressionError as exc:
            raise ConfigError("problem", str(exc)) from exc


def _num(
    raw: dict, key: str, *, positive: bool = False, required: bool = True, default=None, name: str | None = None
) -> float | None:
    name = name or key
    if key not in raw:
        if required:
            raise ConfigError(name, "is required")
        return default
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(name, f"must be a finite number, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(name, f"must be positive, got {value!r}")
    return float(value)


def _int(raw: dict, key: str, name: str, *, minimum: int = 1, required: bool = True, default=None) -> int | None:
    if key not in raw:
        if required:
            raise ConfigError(name, "is required")
        return default
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(name, f"must be an integer >= {minimum}, got {value!r}")
    return value


def _vector(value, name: str, length: int | None = None) -> list[float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not value:
        raise ConfigError(name, f"must be a nonempty list of numbers, got {value!r}")
    for x in value:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(name, f"entries must be finite numbers, got {x!r}")
    if length is not None and len(value) != length:
        raise ConfigError(name, f"must have {length} entries, got {len(value)}")
    return [float(x) for x in value]


def _cells(value, name: str, n: int) -> list[int]:
    if isinstance(value, int) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or len(value) != n:
        raise ConfigError(name, f"must list {n} cell count(s), got {value!r}")
    for c in value:
        if isinstance(c, bool) or not isinstance(c, int) or c < 1:
            raise ConfigError(name, f"cell counts must be integers >= 1, got {c!r}")
    return list(value)


def _check_step(h: float, lam: float, name: str) -> None:
    if not (0.0 < h < 1.0 / lam):
        raise ConfigError(name, f"h must lie in (0, 1/lambda) = (0, {1.0 / lam:.17g}), got {h!r}")


def _point(value, name: str, lower: list[float], upper: list[float]) -> list[float]:
    pt = _vector(value, name, len(lower))
    if any(p < lo or p > hi for p, lo, hi in zip(pt, lower, upper)):
        raise ConfigError(name, f"point {pt} lies outside the domain [{lower}, {upper}]")
    return pt


def parse_config(raw: dict, command: str) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    lam = _num(raw, "lambda", positive=True)

    dom_raw = raw.get("domain")
    if not isinstance(dom_raw, dict):
        raise ConfigError("domain", "is required as an object with 'lower' and 'upper'")
    lower = _vector(dom_raw.get("lower"), "domain.lower")
    upper = _vector(dom_raw.get("upper"), "domain.upper", len(lower))
    if any(lo >= hi for lo, hi in zip(lower, upper)):
        raise ConfigError("domain", "requires lower < upper in every coordinate")
    n = len(lower)

    c_raw = raw.get("controls")
    if not isinstance(c_raw, dict):
        raise ConfigError("controls", "is required as an object with 'lower', 'upper', 'counts'")
    c_lower = _vector(c_raw.get("lower"), "controls.lower")
    c_upper = _vector(c_raw.get("upper"), "controls.upper", len(c_lower))
    if any(lo > hi for lo, hi in zip(c_lower, c_upper)):
        raise ConfigError("controls", "requires lower <= upper")
    counts = c_raw.get("counts")
    counts = _cells(counts, "controls.counts", len(c_lower))
    m = len(c_lower)

    p_raw = raw.get("problem")
    if not isinstance(p_raw, dict):
        raise ConfigError("problem", "is required as an object")
    if "name" in p_raw:
        if p_raw["name"] not in REGISTRY:
            raise ConfigError("problem.name", f"unknown problem {p_raw['name']!r}; known: {sorted(REGISTRY)}")
        pn, pm, _ = REGISTRY[p_raw["name"]]
        if (pn, pm) != (n, m):
            raise ConfigError("problem.name", f"{p_raw['name']} needs a {pn}-D domain and {pm}-D controls")
    else:
        dyn = p_raw.get("dynamics")
        if isinstance(dyn, str):
            dyn = [dyn]
        if not isinstance(dyn, list) or len(dyn) != n or not all(isinstance(s, str) for s in dyn):
            raise ConfigError("problem.dynamics", f"must list {n} expression string(s)")
        key = "vstar" if "vstar" in p_raw else "running_cost"
        if not isinstance(p_raw.get(key), str):
            raise ConfigError("problem", "needs 'name', or 'dynamics' with 'running_cost' or 'vstar'")
        for label, text in [(f"problem.dynamics[{i}]", s) for i, s in enumerate(dyn)] + [(f"problem.{key}", p_raw[key])]:
            try:
                e = ex.parse_expression(text)
                ex.compile_expression(e, n, m)
                if key == "vstar" and label == "problem.vstar":
                    ex.gradient(e, n)
            except ExpressionError as exc:
                raise ConfigError(label, str(exc)) from exc
        p_raw = {"dynamics": dyn, key: p_raw[key]}

    bounds = raw.get("bounds", {}) or {}
    if not isinstance(bounds, dict):
        raise ConfigError("bounds", "must be an object")
    for key in bounds:
        if key not in ("L_f", "L_g", "M_f", "M_g", "L_u"):
            raise ConfigError(f"bounds.{key}", "unknown bound")
        _num(bounds, key, positive=True, name=f"bounds.{key}")

    s_raw = raw.get("solver", {}) or {}
    solver = {
        "tolerance": _num(s_raw, "tolerance", positive=True, required=False, default=1e-10, name="solver.tolerance"),
        "max_iterations": _int(s_raw, "max_iterations", "solver.max_iterations", required=False, default=100_000),
        "out_of_domain": s_raw.get("out_of_domain", "clamp"),
    }
    if solver["out_of_domain"] not in ("clamp", "reject"):
        raise ConfigError("solver.out_of_domain", "must be 'clamp' or 'reject'")

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")

    cfg = RunConfig(
        problem=p_raw,
        domain={"lower": lower, "upper": upper},
        lam=lam,
        controls={"lower": c_lower, "upper": c_upper, "counts": counts},
        solver=solver,
        bounds={k: float(v) for k, v in bounds.items()},
        seed=seed,
    )

    if command in ("solve", "oracle", "rollout", "validate"):
        cfg.h = _num(raw, "h", positive=True)
        _check_step(cfg.h, lam, "h")
        if "cells_per_dim" not in raw:
            raise ConfigError("cells_per_dim", "is required")
        cfg.cells_per_dim = _cells(raw["cells_per_dim"], "cells_per_dim", n)

    if command == "study":
        st = raw.get("study")
        if not isinstance(st, dict):
            raise ConfigError("study", "is required for the study command")
        schedule = []
        for i, entry in enumerate(st.get("schedule", []) or []):
            name = f"study.schedule[{i}]"
            if not isinstance(entry, dict):
                raise ConfigError(name, "must be an object with 'h' and 'cells'")
            h = _num(entry, "h", positive=True, name=f"{name}.h")
            _check_step(h, lam, f"{name}.h")
            schedule.append((h, _cells(entry.get("cells"), f"{name}.cells", n)))
        ref = st.get("reference", "exact")
        if ref == "exact":
            if "name" not in p_raw and "vstar" not in p_raw:
                raise ConfigError("study.reference", "'exact' needs a manufactured problem (name or vstar)")
        elif isinstance(ref, dict):
            rh = _num(ref, "h", positive=True, name="study.reference.h")
            _check_step(rh, lam, "study.reference.h")
            ref = {"h": rh, "cells": _cells(ref.get("cells"), "study.reference.cells", n)}
        else:
            raise ConfigError("study.reference", "must be 'exact' or {'h': ..., 'cells': [...]}")
        fixed = st.get("fixed_k")
        if fixed is not None:
            if not isinstance(fixed, dict):
                raise ConfigError("study.fixed_k", "must be an object")
            h_list = fixed.get("h_list")
            if not isinstance(h_list, list) or not h_list:
                raise ConfigError("study.fixed_k.h_list", "must be a nonempty list")
            hs = _vector(h_list, "study.fixed_k.h_list")
            for h in hs:
                _check_step(h, lam, "study.fixed_k.h_list")
            if any(b >= a for a, b in zip(hs, hs[1:])):
                raise ConfigError("study.fixed_k.h_list", "must be strictly decreasing")
            if "cells" in fixed:
                fixed = {"cells": _cells(fixed["cells"], "study.fixed_k.cells", n), "h_list": hs}
            else:
                fixed = {"k": _num(fixed, "k", positive=True, name="study.fixed_k.k"), "h_list": hs}
        if not schedule and fixed is None:
            raise ConfigError("study.schedule", "is empty")
        cfg.study = StudySpec(schedule=schedule, reference=ref, fixed_k=fixed)

    if command == "oracle":
        o = raw.get("oracle")
        if not isinstance(o, dict):
            raise ConfigError("oracle", "is required for the oracle command")
        cfg.oracle = {
            "y0": _point(o.get("y0"), "oracle.y0", lower, upper),
            "N": _int(o, "N", "oracle.N"),
            "tail_tol": _num(o, "tail_tol", positive=True, name="oracle.tail_tol"),
        }

    if command == "rollout":
        r = raw.get("rollout")
        if not isinstance(r, dict):
            raise ConfigError("rollout", "is required for the rollout command")
        cfg.rollout = {
            "y0": _point(r.get("y0"), "rollout.y0", lower, upper),
            "steps": _int(r, "steps", "rollout.steps"),
        }
    return cfg


def load_config(path: str | Path, command: str) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from exc
    return parse_config(raw, command)
