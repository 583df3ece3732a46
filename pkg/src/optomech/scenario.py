"""Declarative experiment configs: schema, validation, serialization.

A scenario JSON file has the sections
    name, space, params, initial_state, hamiltonian, dissipation, run,
    measurements, output
with defaults filled at parse time. Parsing is strict: unknown keys are
hard errors, physical-validity violations point at the offending path.
The resolved config echoed into result metadata re-parses to an identical
Scenario (round-trip contract).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import hilbert as hs
from . import model
from .dynamics import SteadyStateCriteria
from .errors import ConfigError

MODE_LABELS = ("cavity1", "mo", "cavity2")
SUBSYSTEMS = ("atom1", "atom2", "cavity1", "mo", "cavity2")
HAMILTONIAN_PARTS = ("effective", "drive", "squeeze_pump_mo", "squeeze_pump_c1", "oscillatory")

_TOP_KEYS = {
    "name", "description", "space", "params", "initial_state", "state_tail_tol",
    "hamiltonian", "dissipation", "run", "measurements", "output",
}
_SPACE_KEYS = {"cavity1", "mo", "cavity2", "atom_levels"}
_PARAM_KEYS = {
    "omega_m", "omega_c", "omega_atom", "g", "lambda", "Lambda", "Omega1", "Omega2",
    "q", "q_prime", "gamma21", "gamma10", "kappa_a", "kappa_b",
    "nbar_a", "nbar_c", "nbar_m", "phi_c1", "phi_m", "phi_c2",
}
_RUN_KEYS = {
    "mode", "t0", "t1", "samples", "rtol", "store_states", "vacuum_approximation",
    "criteria", "warm_start_truncation", "parameters", "values", "inner",
}
_CRITERIA_KEYS = {"residual_max", "observable_tol", "window", "max_time", "block", "rtol"}
_PREP_KEYS = {"kind", "n", "r", "theta", "alpha", "alpha_imag", "nbar"}
_MEASUREMENT_KEYS = {
    "type", "name", "mode", "pair", "reference", "phase", "which",
    "label", "n", "times", "x_range", "p_range", "resolution",
}
MEASUREMENT_TYPES = (
    "fidelity", "negativity", "contangle", "quadrature", "wigner",
    "population", "occupation_marginal", "mean_occupation", "rwa_min_fidelity",
)


def _reject_unknown(section: dict, allowed: set, path: str):
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys {unknown} (allowed: {sorted(allowed)})", path=path)


def _pair(value, path: str, cast=float) -> tuple:
    if isinstance(value, (int, float)):
        return (cast(value), cast(value))
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return (cast(value[0]), cast(value[1]))
    raise ConfigError(f"expected a number or a pair, got {value!r}", path=path)


@dataclass(frozen=True)
class Measurement:
    type: str
    name: str
    mode: str | None = None
    pair: tuple[str, str] | None = None
    reference: model.StatePrep | None = None
    phase: float | None = None
    which: str = "X"
    label: tuple[int, ...] | None = None
    n: int | None = None
    times: tuple[float, ...] = ()
    x_range: tuple[float, float] = (-4.0, 4.0)
    p_range: tuple[float, float] = (-4.0, 4.0)
    resolution: int = 128


@dataclass(frozen=True)
class TimeEvolutionRun:
    t0: float = 0.0
    t1: float = 10.0
    samples: int = 201
    rtol: float | None = None
    store_states: str = "none"
    vacuum_approximation: bool = False


@dataclass(frozen=True)
class SteadyStateRun:
    criteria: SteadyStateCriteria = field(default_factory=SteadyStateCriteria)
    # solve once at this coarse Fock truncation and reuse as the initial guess
    warm_start_truncation: int | None = None


@dataclass(frozen=True)
class RwaValidationRun:
    t0: float = 0.0
    t1: float = 10.0
    samples: int = 201
    rtol: float = 1e-8


@dataclass(frozen=True)
class SweepRun:
    parameters: tuple[str, ...]
    values: tuple[Any, ...]
    inner: "TimeEvolutionRun | SteadyStateRun | RwaValidationRun"


@dataclass(frozen=True)
class Scenario:
    name: str
    space: hs.CompositeSpace
    params: model.SystemParams
    recipe: model.StateRecipe
    hamiltonian_parts: tuple[str, ...]
    dissipation: bool
    run: TimeEvolutionRun | SteadyStateRun | RwaValidationRun | SweepRun
    measurements: tuple[Measurement, ...]
    output_dir: str | None
    tail_tol: float
    resolved: dict = field(compare=False, repr=False, default_factory=dict)

    def rates_active(self) -> bool:
        return self.dissipation and self.params.dissipative()


# ---------------------------------------------------------------------------
# parsing


def _parse_space(cfg: dict) -> hs.CompositeSpace:
    _reject_unknown(cfg, _SPACE_KEYS, "space")
    levels = int(cfg.get("atom_levels", 3))
    return model.standard_space(
        n_c1=int(cfg.get("cavity1", 8)),
        n_m=int(cfg.get("mo", 6)),
        n_c2=int(cfg.get("cavity2", 8)),
        atom_levels=levels,
    )


def _parse_params(cfg: dict) -> model.SystemParams:
    _reject_unknown(cfg, _PARAM_KEYS, "params")
    kw: dict[str, Any] = {}
    if "omega_m" in cfg:
        kw["omega_m"] = float(cfg["omega_m"])
    if "omega_c" in cfg:
        kw["omega_c"] = _pair(cfg["omega_c"], "params.omega_c")
    if "omega_atom" in cfg:
        w = cfg["omega_atom"]
        try:
            kw["omega_atom"] = tuple(tuple(float(x) for x in row) for row in w)
        except TypeError:
            raise ConfigError("expected two rows of three level energies", path="params.omega_atom")
    for key, attr in (("g", "g"), ("Omega1", "Omega1"), ("Omega2", "Omega2"),
                      ("gamma21", "gamma21"), ("gamma10", "gamma10"),
                      ("kappa_a", "kappa_a"), ("nbar_a", "nbar_a"), ("nbar_c", "nbar_c")):
        if key in cfg:
            kw[attr] = _pair(cfg[key], f"params.{key}")
    if "lambda" in cfg:
        kw["lam"] = float(cfg["lambda"])
    if "Lambda" in cfg and cfg["Lambda"] is not None:
        kw["Lambda"] = _pair(cfg["Lambda"], "params.Lambda")
    for key in ("q", "q_prime", "kappa_b", "nbar_m", "phi_c1", "phi_m", "phi_c2"):
        if key in cfg:
            kw[key] = float(cfg[key])
    try:
        return model.SystemParams(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc), path="params") from exc


def _parse_prep(cfg: dict, path: str) -> model.StatePrep:
    _reject_unknown(cfg, _PREP_KEYS, path)
    kind = cfg.get("kind")
    if kind not in ("ground", "fock", "squeezed", "cat", "thermal"):
        raise ConfigError(f"unknown state kind {kind!r}", path=path)
    try:
        if kind == "fock":
            return model.StatePrep("fock", n=int(cfg.get("n", 0)))
        if kind == "squeezed":
            r = float(cfg.get("r", 0.0))
            theta = float(cfg.get("theta", 0.0))
            return model.StatePrep("squeezed", xi=r * complex(math.cos(theta), math.sin(theta)))
        if kind == "cat":
            return model.StatePrep(
                "cat", alpha=complex(float(cfg.get("alpha", 0.0)), float(cfg.get("alpha_imag", 0.0)))
            )
        if kind == "thermal":
            return model.StatePrep("thermal", nbar=float(cfg.get("nbar", 0.0)))
        return model.StatePrep("ground")
    except ValueError as exc:
        raise ConfigError(str(exc), path=path) from exc


def _parse_recipe(cfg: dict) -> model.StateRecipe:
    _reject_unknown(cfg, set(SUBSYSTEMS), "initial_state")
    preps = []
    for label in SUBSYSTEMS:
        sub = cfg.get(label, {"kind": "ground"})
        preps.append(_parse_prep(sub, f"initial_state.{label}"))
    return model.StateRecipe(tuple(preps))


def _parse_criteria(cfg: dict) -> SteadyStateCriteria:
    _reject_unknown(cfg, _CRITERIA_KEYS, "run.criteria")
    kw = {}
    for key in _CRITERIA_KEYS:
        if key in cfg and cfg[key] is not None:
            kw[key] = float(cfg[key])
    return SteadyStateCriteria(**kw)


def _parse_run(cfg: dict, path: str = "run"):
    _reject_unknown(cfg, _RUN_KEYS, path)
    mode = cfg.get("mode")
    if mode == "time_evolution":
        run = TimeEvolutionRun(
            t0=float(cfg.get("t0", 0.0)),
            t1=float(cfg.get("t1", 10.0)),
            samples=int(cfg.get("samples", 201)),
            rtol=None if cfg.get("rtol") is None else float(cfg["rtol"]),
            store_states=str(cfg.get("store_states", "none")),
            vacuum_approximation=bool(cfg.get("vacuum_approximation", False)),
        )
        if run.t1 < run.t0:
            raise ConfigError("t1 must not precede t0", path=f"{path}.t1")
        if run.samples < 1:
            raise ConfigError("need at least one sample", path=f"{path}.samples")
        return run
    if mode == "steady_state":
        warm = cfg.get("warm_start_truncation")
        return SteadyStateRun(
            criteria=_parse_criteria(cfg.get("criteria", {})),
            warm_start_truncation=None if warm is None else int(warm),
        )
    if mode == "rwa_validation":
        return RwaValidationRun(
            t0=float(cfg.get("t0", 0.0)),
            t1=float(cfg.get("t1", 10.0)),
            samples=int(cfg.get("samples", 201)),
            rtol=float(cfg.get("rtol", 1e-8)),
        )
    if mode == "sweep":
        parameters = cfg.get("parameters")
        values = cfg.get("values")
        if not parameters or not isinstance(parameters, list):
            raise ConfigError("sweep needs a list of parameter paths", path=f"{path}.parameters")
        if not values or not isinstance(values, list):
            raise ConfigError("sweep needs a list of values", path=f"{path}.values")
        if not all(_finite(v) for v in values):
            raise ConfigError("sweep values must be finite", path=f"{path}.values")

        def freeze(v):
            return tuple(freeze(x) for x in v) if isinstance(v, list) else v

        inner = _parse_run(cfg.get("inner", {}), path=f"{path}.inner")
        if isinstance(inner, SweepRun):
            raise ConfigError("nested sweeps are not supported", path=f"{path}.inner")
        return SweepRun(tuple(parameters), freeze(values), inner)
    raise ConfigError(
        f"unknown run mode {mode!r} (expected time_evolution, steady_state, "
        "rwa_validation or sweep)", path=f"{path}.mode",
    )


def _finite(v) -> bool:
    if isinstance(v, (list, tuple)):
        return all(_finite(x) for x in v)
    if isinstance(v, (int, float)):
        return math.isfinite(v)
    return True  # non-numeric sweep values (e.g. hamiltonian part lists)


def _parse_measurement(cfg: dict, idx: int, params: model.SystemParams) -> Measurement:
    path = f"measurements[{idx}]"
    _reject_unknown(cfg, _MEASUREMENT_KEYS, path)
    mtype = cfg.get("type")
    if mtype not in MEASUREMENT_TYPES:
        raise ConfigError(f"unknown measurement type {mtype!r}", path=path)
    kw: dict[str, Any] = {"type": mtype}
    if mtype in ("fidelity", "quadrature", "wigner", "occupation_marginal", "mean_occupation"):
        mode = cfg.get("mode")
        if mode not in MODE_LABELS:
            raise ConfigError(f"measurement needs a bosonic mode from {MODE_LABELS}", path=path)
        kw["mode"] = mode
    if mtype == "fidelity":
        ref = cfg.get("reference")
        if not isinstance(ref, dict):
            raise ConfigError("fidelity needs a reference state recipe", path=f"{path}.reference")
        kw["reference"] = _parse_prep(ref, f"{path}.reference")
    if mtype == "negativity":
        pair = cfg.get("pair")
        if not (isinstance(pair, list) and len(pair) == 2 and all(p in SUBSYSTEMS for p in pair)):
            raise ConfigError(f"negativity needs a pair of subsystem labels", path=f"{path}.pair")
        kw["pair"] = tuple(pair)
    if mtype == "quadrature":
        kw["which"] = cfg.get("which", "X")
        if kw["which"] not in ("X", "Y"):
            raise ConfigError("quadrature 'which' must be X or Y", path=f"{path}.which")
        kw["phase"] = float(cfg["phase"]) if cfg.get("phase") is not None else params.phi(kw["mode"])
    if mtype == "wigner":
        kw["times"] = tuple(float(t) for t in cfg.get("times", []))
        kw["x_range"] = tuple(cfg.get("x_range", (-4.0, 4.0)))
        kw["p_range"] = tuple(cfg.get("p_range", (-4.0, 4.0)))
        kw["resolution"] = int(cfg.get("resolution", 128))
    if mtype == "population":
        label = cfg.get("label")
        if not (isinstance(label, list) and len(label) == len(SUBSYSTEMS)):
            raise ConfigError("population needs a 5-entry basis label", path=f"{path}.label")
        kw["label"] = tuple(int(x) for x in label)
    if mtype == "occupation_marginal":
        kw["n"] = int(cfg.get("n", 0))
    kw["name"] = cfg.get("name") or _default_name(kw)
    return Measurement(**kw)


def _default_name(kw: dict) -> str:
    t = kw["type"]
    if t == "fidelity":
        return f"fidelity_{kw['mode']}"
    if t == "negativity":
        return f"negativity_{kw['pair'][0]}_{kw['pair'][1]}"
    if t == "contangle":
        return "contangle_min"
    if t == "quadrature":
        return f"qf_{kw['which'].lower()}_{kw['mode']}"
    if t == "wigner":
        return f"wigner_{kw['mode']}"
    if t == "population":
        return "population_" + "".join(str(x) for x in kw["label"])
    if t == "occupation_marginal":
        return f"pop_{kw['mode']}_n{kw['n']}"
    if t == "mean_occupation":
        return f"nbar_{kw['mode']}"
    return "rwa_min_fidelity"


def parse_scenario_dict(cfg: dict) -> Scenario:
    """Validate a raw config dict and resolve all defaults."""
    if not isinstance(cfg, dict):
        raise ConfigError("scenario config must be a JSON object")
    _reject_unknown(cfg, _TOP_KEYS, "<root>")
    name = cfg.get("name")
    if not name or not isinstance(name, str):
        raise ConfigError("scenario needs a name", path="name")

    space = _parse_space(cfg.get("space", {}))
    params = _parse_params(cfg.get("params", {}))
    recipe = _parse_recipe(cfg.get("initial_state", {}))
    tail_tol = float(cfg.get("state_tail_tol", model.TAIL_TOL))

    parts = cfg.get("hamiltonian", ["effective", "drive"])
    if not isinstance(parts, list) or not parts:
        raise ConfigError("hamiltonian must be a non-empty list of parts", path="hamiltonian")
    bad = sorted(set(parts) - set(HAMILTONIAN_PARTS))
    if bad:
        raise ConfigError(f"unknown hamiltonian parts {bad} (allowed {HAMILTONIAN_PARTS})",
                          path="hamiltonian")
    parts = tuple(parts)
    if "effective" in parts or "oscillatory" in parts:
        for j in range(2):
            if abs(params.delta(j) + params.omega_m) > 1e-9 * max(1.0, params.omega_m):
                raise ConfigError(
                    f"the effective interaction requires detuning -omega_m on both branches; "
                    f"branch {j + 1} has delta = {params.delta(j)} "
                    f"(omega_atom/omega_c are inconsistent with the blue-detuned regime)",
                    path="params.omega_atom",
                )

    dissipation = bool(cfg.get("dissipation", False))
    run = _parse_run(cfg.get("run", {}))

    check_run = run.inner if isinstance(run, SweepRun) else run
    if isinstance(check_run, TimeEvolutionRun):
        rates_on = dissipation and params.dissipative()
        if not rates_on and recipe.mixed() and not check_run.vacuum_approximation:
            raise ConfigError(
                "lossless run with a mixed initial state: the state-vector path "
                "cannot represent it; set run.vacuum_approximation or enable dissipation",
                path="initial_state",
            )
    if isinstance(check_run, RwaValidationRun) and recipe.mixed():
        raise ConfigError("rwa_validation needs a pure initial state", path="initial_state")

    measurements = tuple(
        _parse_measurement(m, i, params) for i, m in enumerate(cfg.get("measurements", []))
    )
    names = [m.name for m in measurements]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate measurement names: {names}", path="measurements")

    output = cfg.get("output", {})
    if not isinstance(output, dict):
        raise ConfigError("output must be an object", path="output")
    _reject_unknown(output, {"dir"}, "output")

    sc = Scenario(
        name=name,
        space=space,
        params=params,
        recipe=recipe,
        hamiltonian_parts=parts,
        dissipation=dissipation,
        run=run,
        measurements=measurements,
        output_dir=output.get("dir"),
        tail_tol=tail_tol,
        resolved={},
    )
    object.__setattr__(sc, "resolved", scenario_to_dict(sc))
    return sc


def parse_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return parse_scenario_dict(cfg)


# ---------------------------------------------------------------------------
# serialization (resolved, defaults filled)


def _prep_to_dict(p: model.StatePrep) -> dict:
    if p.kind == "fock":
        return {"kind": "fock", "n": p.n}
    if p.kind == "squeezed":
        return {"kind": "squeezed", "r": abs(p.xi), "theta": math.atan2(p.xi.imag, p.xi.real)}
    if p.kind == "cat":
        return {"kind": "cat", "alpha": p.alpha.real, "alpha_imag": p.alpha.imag}
    if p.kind == "thermal":
        return {"kind": "thermal", "nbar": p.nbar}
    return {"kind": "ground"}


def _run_to_dict(run) -> dict:
    if isinstance(run, TimeEvolutionRun):
        return {
            "mode": "time_evolution", "t0": run.t0, "t1": run.t1, "samples": run.samples,
            "rtol": run.rtol, "store_states": run.store_states,
            "vacuum_approximation": run.vacuum_approximation,
        }
    if isinstance(run, SteadyStateRun):
        c = run.criteria
        return {
            "mode": "steady_state",
            "criteria": {
                "residual_max": c.residual_max, "observable_tol": c.observable_tol,
                "window": c.window, "max_time": c.max_time, "block": c.block, "rtol": c.rtol,
            },
            "warm_start_truncation": run.warm_start_truncation,
        }
    if isinstance(run, RwaValidationRun):
        return {"mode": "rwa_validation", "t0": run.t0, "t1": run.t1,
                "samples": run.samples, "rtol": run.rtol}

    def thaw(v):
        return [thaw(x) for x in v] if isinstance(v, tuple) else v

    return {
        "mode": "sweep", "parameters": list(run.parameters),
        "values": thaw(run.values), "inner": _run_to_dict(run.inner),
    }


def _measurement_to_dict(m: Measurement) -> dict:
    out: dict[str, Any] = {"type": m.type, "name": m.name}
    if m.mode is not None:
        out["mode"] = m.mode
    if m.pair is not None:
        out["pair"] = list(m.pair)
    if m.reference is not None:
        out["reference"] = _prep_to_dict(m.reference)
    if m.type == "quadrature":
        out["phase"] = m.phase
        out["which"] = m.which
    if m.type == "wigner":
        out["times"] = list(m.times)
        out["x_range"] = list(m.x_range)
        out["p_range"] = list(m.p_range)
        out["resolution"] = m.resolution
    if m.label is not None:
        out["label"] = list(m.label)
    if m.n is not None:
        out["n"] = m.n
    return out


def scenario_to_dict(sc: Scenario) -> dict:
    """Fully-resolved config; parse_scenario_dict of this yields an equal Scenario."""
    p = sc.params
    return {
        "name": sc.name,
        "space": {
            "cavity1": sc.space.parts[2].dim, "mo": sc.space.parts[3].dim,
            "cavity2": sc.space.parts[4].dim, "atom_levels": sc.space.parts[0].dim,
        },
        "params": {
            "omega_m": p.omega_m, "omega_c": list(p.omega_c),
            "omega_atom": [list(row) for row in p.omega_atom],
            "g": list(p.g), "lambda": p.lam,
            "Lambda": None if p.Lambda is None else list(p.Lambda),
            "Omega1": list(p.Omega1), "Omega2": list(p.Omega2),
            "q": p.q, "q_prime": p.q_prime,
            "gamma21": list(p.gamma21), "gamma10": list(p.gamma10),
            "kappa_a": list(p.kappa_a), "kappa_b": p.kappa_b,
            "nbar_a": list(p.nbar_a), "nbar_c": list(p.nbar_c), "nbar_m": p.nbar_m,
            "phi_c1": p.phi_c1, "phi_m": p.phi_m, "phi_c2": p.phi_c2,
        },
        "initial_state": {
            label: _prep_to_dict(prep) for label, prep in zip(SUBSYSTEMS, sc.recipe.preps)
        },
        "state_tail_tol": sc.tail_tol,
        "hamiltonian": list(sc.hamiltonian_parts),
        "dissipation": sc.dissipation,
        "run": _run_to_dict(sc.run),
        "measurements": [_measurement_to_dict(m) for m in sc.measurements],
        "output": {"dir": sc.output_dir},
    }


def apply_override(cfg: dict, dotted: str, value: Any):
    """Set a dotted path like params.Omega1 in a raw config dict."""
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into {dotted!r}")
        node = node.setdefault(k, {})
    if not isinstance(node, dict):
        raise ConfigError(f"cannot set {dotted!r}")
    node[keys[-1]] = value
