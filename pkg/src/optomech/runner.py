"""Scenario execution and file emission."""

from __future__ import annotations

import copy
import json
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import dynamics, hilbert as hs, measures, model
from .errors import ConfigError, OptomechError
from .scenario import (
    Measurement,
    RwaValidationRun,
    Scenario,
    SteadyStateRun,
    SweepRun,
    TimeEvolutionRun,
    apply_override,
    parse_scenario_dict,
    scenario_to_dict,
)

MODE_INDEX = {"cavity1": 2, "mo": 3, "cavity2": 4}


@dataclass
class ResultBundle:
    scenario: Scenario
    times: np.ndarray | None
    series: dict[str, np.ndarray]
    wigner_grids: dict[str, measures.WignerGrid] = field(default_factory=dict)
    table: list[dict] | None = None
    extra_tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def _worker_count(njobs: int) -> int:
    env = os.environ.get("OPTOMECH_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(njobs, cap))


# ---------------------------------------------------------------------------
# measurement plumbing


def _reference_state(prep: model.StatePrep, truncation: int, tail_tol: float) -> hs.QState:
    return model._prep_state(prep, hs.boson(truncation, "mode"), tail_tol)


def _make_observer(m: Measurement, sc: Scenario):
    if m.type == "fidelity":
        idx = MODE_INDEX[m.mode]
        ref = _reference_state(m.reference, sc.space.dims[idx], sc.tail_tol)

        def fn(t, state):
            return measures.fidelity(hs.partial_trace(state, [idx]), ref)

        return fn
    if m.type == "negativity":
        keep = sorted(sc.space.index(p) for p in m.pair)
        part = keep.index(sc.space.index(m.pair[0]))

        def fn(t, state):
            return measures.negativity(hs.partial_trace(state, keep), part)

        return fn
    if m.type == "contangle":

        def fn(t, state):
            reduced = hs.partial_trace(state, [2, 3, 4])
            return measures.residual_contangle(reduced).minimum

        return fn
    if m.type == "quadrature":
        spec = measures.QuadratureSpec(MODE_INDEX[m.mode], m.phase, m.which)

        def fn(t, state):
            return measures.quadrature_variance(state, spec)

        return fn
    if m.type == "population":

        def fn(t, state):
            return measures.population(state, m.label)

        return fn
    if m.type == "occupation_marginal":
        idx = MODE_INDEX[m.mode]

        def fn(t, state):
            return measures.occupation_marginal(state, idx, m.n)

        return fn
    if m.type == "mean_occupation":
        idx = MODE_INDEX[m.mode]

        def fn(t, state):
            reduced = hs.partial_trace(state, [idx])
            n = np.arange(reduced.dim)
            return float(np.real(np.diagonal(reduced.data)) @ n)

        return fn
    return None


def _build_hamiltonian(sc: Scenario):
    p, space = sc.params, sc.space
    parts = sc.hamiltonian_parts
    if "oscillatory" in parts and "effective" in parts:
        raise ConfigError(
            "'oscillatory' already contains the rotating-wave part; drop 'effective'",
            path="hamiltonian",
        )
    static = None

    def add(term):
        nonlocal static
        static = term if static is None else static + term

    if "effective" in parts:
        add(model.build_effective_hamiltonian(p, space))
    if "drive" in parts:
        add(model.build_drive_hamiltonian(p, space))
    if "squeeze_pump_mo" in parts:
        add(model.build_squeeze_pump(p, space, "mo"))
    if "squeeze_pump_c1" in parts:
        add(model.build_squeeze_pump(p, space, "cavity1"))
    if "oscillatory" in parts:
        td = dynamics.build_oscillatory_interaction(p, space)
        base = td.static if static is None else td.static + static
        return dynamics.TimeDependentHamiltonian(base, td.oscillating)
    return static


# ---------------------------------------------------------------------------
# run modes


def run(sc: Scenario) -> ResultBundle:
    """Execute a scenario; deterministic given its config."""
    t_start = time.perf_counter()
    if isinstance(sc.run, SweepRun):
        bundle = _run_sweep(sc)
    elif isinstance(sc.run, SteadyStateRun):
        bundle = _run_steady(sc)
    elif isinstance(sc.run, RwaValidationRun):
        bundle = _run_rwa(sc)
    else:
        bundle = _run_evolution(sc)
    bundle.metadata.setdefault("config", scenario_to_dict(sc))
    bundle.metadata["name"] = sc.name
    bundle.metadata["wall_seconds"] = time.perf_counter() - t_start
    return bundle


def _run_evolution(sc: Scenario) -> ResultBundle:
    run_spec: TimeEvolutionRun = sc.run
    rates_on = sc.rates_active()
    recipe = sc.recipe
    vacuum_error = 0.0
    if not rates_on and recipe.mixed():
        if not run_spec.vacuum_approximation:
            raise ConfigError(
                "lossless run with a mixed initial state needs vacuum_approximation",
                path="run",
            )
        recipe, vacuum_error = recipe.vacuum_approximated()

    state0 = model.assemble_initial_state(recipe, sc.space, sc.tail_tol)
    hamiltonian = _build_hamiltonian(sc)
    grid = dynamics.TimeGrid(run_spec.t0, run_spec.t1, run_spec.samples)

    observers = {}
    for m in sc.measurements:
        fn = _make_observer(m, sc)
        if fn is not None:
            observers[m.name] = fn
    wigner_specs = [m for m in sc.measurements if m.type == "wigner"]
    store = sorted({t for m in wigner_specs for t in m.times})
    store_opt = store if store else run_spec.store_states

    if rates_on:
        dissipators = model.build_dissipators(sc.params, sc.space)
        rtol = run_spec.rtol if run_spec.rtol is not None else 1e-7
        result = dynamics.evolve_density(
            hamiltonian, dissipators, state0.to_density(), grid,
            observers=observers, rtol=rtol, store_states=store_opt,
        )
    else:
        rtol = run_spec.rtol if run_spec.rtol is not None else 1e-8
        result = dynamics.evolve_vector(
            hamiltonian, state0, grid,
            observers=observers, rtol=rtol, store_states=store_opt,
        )

    series = {name: np.real(vals) for name, vals in result.observables.items()}
    grids = _wigner_from_states(wigner_specs, result)
    bundle = ResultBundle(
        scenario=sc,
        times=result.times,
        series=series,
        wigner_grids=grids,
        diagnostics=_diag_dict(result.diagnostics),
        metadata={},
    )
    if vacuum_error:
        bundle.metadata["vacuum_approximation_infidelity_bound"] = vacuum_error
    f2 = series.get("fidelity_cavity2")
    if f2 is not None and len(f2) > 1:
        i2 = int(np.argmax(f2))
        bundle.metadata["t2"] = float(result.times[i2])
        bundle.metadata["fidelity_peak_cavity2"] = float(f2[i2])
    return bundle


def _wigner_from_states(wigner_specs, result) -> dict[str, measures.WignerGrid]:
    grids: dict[str, measures.WignerGrid] = {}
    for m in wigner_specs:
        spec = measures.WignerSpec(m.x_range, m.p_range, m.resolution)
        for t_req in m.times:
            i = int(np.argmin([abs(st - t_req) for st in result.state_times]))
            state = result.states[i]
            reduced = hs.partial_trace(state, [MODE_INDEX[m.mode]])
            grids[f"{m.name}_t{result.state_times[i]:g}"] = measures.wigner(reduced, spec)
    return grids


def _steady_solve(sc: Scenario, rho_guess=None) -> dynamics.SteadyStateResult:
    if not sc.dissipation:
        raise ConfigError("steady_state needs dissipation enabled", path="dissipation")
    hamiltonian = _build_hamiltonian(sc)
    if isinstance(hamiltonian, dynamics.TimeDependentHamiltonian):
        raise ConfigError("steady_state needs a static hamiltonian", path="hamiltonian")
    dissipators = model.build_dissipators(sc.params, sc.space)
    guess = rho_guess if rho_guess is not None else model.assemble_initial_state(
        sc.recipe, sc.space, sc.tail_tol
    )
    observables = {}
    for m in sc.measurements:
        fn = _make_observer(m, sc)
        if fn is not None:
            observables[m.name] = fn
    return dynamics.steady_state(
        hamiltonian, dissipators, guess, sc.run.criteria, observables=observables
    )


def _run_steady(sc: Scenario) -> ResultBundle:
    run_spec = sc.run
    guess = None
    warm_meta = None
    if run_spec.warm_start_truncation:
        cfg = copy.deepcopy(scenario_to_dict(sc))
        wt = int(run_spec.warm_start_truncation)
        for mode in ("cavity1", "mo", "cavity2"):
            cfg["space"][mode] = min(wt, cfg["space"][mode])
        cfg["run"]["warm_start_truncation"] = None
        crit = cfg["run"]["criteria"]
        crit["residual_max"] = max(crit["residual_max"], 1e-6)
        crit["observable_tol"] = max(crit["observable_tol"], 1e-5)
        if crit["window"] is not None:
            crit["window"] = min(crit["window"], 40.0)
        coarse = parse_scenario_dict(cfg)
        if coarse.space.dims != sc.space.dims:
            coarse_result = _steady_solve(coarse)
            guess = hs.pad_density(coarse_result.state, sc.space)
            warm_meta = {
                "truncation": wt,
                "elapsed": coarse_result.elapsed,
                "residual": coarse_result.residual,
            }
    result = _steady_solve(sc, guess)

    finals = {name: float(np.real(vals[-1])) for name, vals in result.observable_trace.items()}
    series = {name: np.array([v]) for name, v in finals.items()}
    grids = {}
    for m in sc.measurements:
        if m.type == "wigner":
            spec = measures.WignerSpec(m.x_range, m.p_range, m.resolution)
            reduced = hs.partial_trace(result.state, [MODE_INDEX[m.mode]])
            grids[f"{m.name}_steady"] = measures.wigner(reduced, spec)

    conv_header = ["t"] + list(result.observable_trace)
    conv_rows = [
        [t] + [np.real(result.observable_trace[name][i]) for name in result.observable_trace]
        for i, t in enumerate(result.trace_times)
    ]
    bundle = ResultBundle(
        scenario=sc,
        times=np.array([result.elapsed]),
        series=series,
        wigner_grids=grids,
        extra_tables={"convergence": (conv_header, conv_rows)},
        diagnostics=_diag_dict(result.diagnostics),
    )
    bundle.metadata["steady_state"] = {
        **finals,
        "residual": result.residual,
        "elapsed": result.elapsed,
        "window_used": result.window_used,
    }
    if warm_meta:
        bundle.metadata["warm_start"] = warm_meta
    return bundle


def _run_rwa(sc: Scenario) -> ResultBundle:
    run_spec: RwaValidationRun = sc.run
    state0 = model.assemble_initial_state(sc.recipe, sc.space, sc.tail_tol)
    grid = dynamics.TimeGrid(run_spec.t0, run_spec.t1, run_spec.samples)
    report = dynamics.validate_effective_hamiltonian(sc.params, state0, grid, rtol=run_spec.rtol)
    bundle = ResultBundle(
        scenario=sc,
        times=report.times,
        series={"rwa_fidelity": report.fidelity},
        diagnostics=_diag_dict(report.diagnostics),
    )
    bundle.metadata["min_fidelity"] = report.min_fidelity
    return bundle


# ---------------------------------------------------------------------------
# sweeps


def _sweep_point_config(sc: Scenario, value) -> dict:
    cfg = copy.deepcopy(scenario_to_dict(sc))
    run_spec: SweepRun = sc.run
    values = value if isinstance(value, (list, tuple)) else (value,)
    if len(values) != len(run_spec.parameters):
        raise ConfigError(
            f"sweep value {value!r} does not match parameters {run_spec.parameters}"
        )

    def thaw(v):
        return [thaw(x) for x in v] if isinstance(v, tuple) else v

    from .scenario import _run_to_dict

    # install the inner run first so sweep parameters may target run.* paths
    cfg["run"] = _run_to_dict(run_spec.inner)
    for path, v in zip(run_spec.parameters, values):
        apply_override(cfg, path, thaw(v))
    return cfg


def _scalar_results(bundle: ResultBundle) -> dict[str, float]:
    """One number per measurement: the final sample (time series), the steady
    value, or the minimum fidelity for validation runs."""
    out = {}
    for name, vals in bundle.series.items():
        if name == "rwa_fidelity":
            out["rwa_min_fidelity"] = float(np.min(np.real(vals)))
        else:
            out[name] = float(np.real(vals[-1]))
    return out


def _run_sweep_point(cfg_json: str) -> dict:
    cfg = json.loads(cfg_json)
    sc = parse_scenario_dict(cfg)
    bundle = run(sc)
    return _scalar_results(bundle)


def _run_sweep(sc: Scenario) -> ResultBundle:
    run_spec: SweepRun = sc.run
    jobs = [
        json.dumps(_sweep_point_config(sc, value), sort_keys=True)
        for value in run_spec.values
    ]
    workers = _worker_count(len(jobs))
    results: list[dict | Exception] = [None] * len(jobs)
    if workers > 1 and len(jobs) > 1:
        # spawn: forked children would inherit the parent's compiled-kernel
        # thread pool in an unusable state
        ctx = multiprocessing.get_context("spawn")
        child_env_threads = os.environ.get("OPTOMECH_THREADS")
        os.environ["OPTOMECH_THREADS"] = "1"
        try:
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                futs = {pool.submit(_run_sweep_point, job): i for i, job in enumerate(jobs)}
                for fut, i in futs.items():
                    try:
                        results[i] = fut.result()
                    except Exception as exc:  # error rows, sweep continues
                        results[i] = exc
        finally:
            if child_env_threads is None:
                os.environ.pop("OPTOMECH_THREADS", None)
            else:
                os.environ["OPTOMECH_THREADS"] = child_env_threads
    else:
        for i, job in enumerate(jobs):
            try:
                results[i] = _run_sweep_point(job)
            except OptomechError as exc:
                results[i] = exc

    def cell(v):
        return json.dumps(v) if isinstance(v, (list, tuple)) else v

    table: list[dict] = []
    for i, value in enumerate(run_spec.values):
        values = value if isinstance(value, (list, tuple)) else (value,)
        base = {"point": i}
        for path, v in zip(run_spec.parameters, values):
            base[path] = cell(list(v) if isinstance(v, tuple) else v)
        res = results[i]
        if isinstance(res, Exception):
            table.append({**base, "measurement": "", "value": math.nan, "error": str(res)})
        else:
            for name, v in res.items():
                table.append({**base, "measurement": name, "value": v, "error": ""})

    return ResultBundle(
        scenario=sc, times=None, series={}, table=table,
        diagnostics={"sweep_points": len(jobs), "workers": workers},
    )


# ---------------------------------------------------------------------------
# emission


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    f = float(v)
    return f"{f:.17e}"


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_csv(path: Path, header: list[str], rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _diag_dict(d: dict) -> dict:
    """JSON-safe copy of a diagnostics dict."""
    out = {}
    for k, v in d.items():
        if hasattr(v, "__dict__") and not isinstance(v, (list, dict)):
            out[k] = {kk: _jsonify(vv) for kk, vv in vars(v).items()}
        else:
            out[k] = _jsonify(v)
    return out


def _jsonify(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, float) and math.isinf(v):
        return None
    if isinstance(v, dict):
        return {k: _jsonify(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonify(x) for x in v]
    return v


def emit(bundle: ResultBundle, outdir: str | Path) -> list[Path]:
    """Write the result artifacts: CSV tables, Wigner maps, metadata JSON."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sc = bundle.scenario
    written: list[Path] = []

    if bundle.table is not None:
        cols = ["point"] + list(sc.run.parameters) + ["measurement", "value", "error"]
        rows = [[row.get(c, "") for c in cols] for row in bundle.table]
        path = outdir / f"{sc.name}_sweep.csv"
        _write_csv(path, cols, rows)
        written.append(path)
    elif bundle.series:
        names = [m.name for m in sc.measurements if m.name in bundle.series]
        names += [n for n in bundle.series if n not in names]
        header = ["t"] + names
        times = bundle.times if bundle.times is not None else [0.0]
        rows = [
            [t] + [np.real(bundle.series[n][i]) for n in names]
            for i, t in enumerate(times)
        ]
        path = outdir / f"{sc.name}_series.csv"
        _write_csv(path, header, rows)
        written.append(path)

    for key, (header, rows) in bundle.extra_tables.items():
        path = outdir / f"{sc.name}_{key}.csv"
        _write_csv(path, header, rows)
        written.append(path)

    for key, grid in bundle.wigner_grids.items():
        path = outdir / f"{key}.csv"
        rows = [
            [x, p, grid.values[ip, ix]]
            for ip, p in enumerate(grid.p)
            for ix, x in enumerate(grid.x)
        ]
        _write_csv(path, ["x", "p", "w"], rows)
        written.append(path)

    meta = {
        "config": bundle.metadata.get("config", scenario_to_dict(sc)),
        "diagnostics": _jsonify(bundle.diagnostics),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    for k, v in bundle.metadata.items():
        if k != "config":
            meta[k] = _jsonify(v)
    path = outdir / "metadata.json"
    _atomic_write(path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# shipped scenario library


def shipped_scenario_names() -> list[str]:
    root = resources.files("optomech") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_shipped(name: str) -> Scenario:
    root = resources.files("optomech") / "scenarios"
    path = root / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"no shipped scenario named {name!r}; have {shipped_scenario_names()}")
    return parse_scenario_dict(json.loads(path.read_text()))
