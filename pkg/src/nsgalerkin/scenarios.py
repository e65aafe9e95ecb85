"""Named scenarios: each one writes its CSV/JSON outputs and a manifest into a fresh directory."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ScenarioConfig
from .decay import check_quadratic_envelope, convolution_decay_constant, verify_envelope_preservation
from .errors import BlowUpError, ContractionFailure
from .ledger import (calibrate_cornwall_constant, choose_r_for_horizon, cornwall_bound, feasibility,
                     find_delta0_star, threshold_mu, write_frontier_csv)
from .params import ScalingParams
from .picard import c_dm, choose_rho, constants_json, kernel_constants, picard_solve, select_rho
from .spectral_core import (DecayEnvelope, ModeField, dual_sobolev_norm, radius_squared, scale_to_norm,
                            sobolev_weight, synthesize_data)
from .stochastic import NoiseModel, run_forced
from .trotter import RunOptions, run, step_count, write_trajectory_csv


@dataclass
class ScenarioResult:
    directory: Path
    summary: dict
    files: list = field(default_factory=list)

    @property
    def passed(self):
        return self.summary.get("passed")


def params_of(cfg: ScenarioConfig) -> ScalingParams:
    return ScalingParams(**asdict(cfg.params))


def data_of(cfg: ScenarioConfig, seed: int) -> ModeField:
    d = cfg.data
    profile = "taylor_green" if d.profile == "taylor_green" else (d.constant, d.order)
    return synthesize_data(profile, seed, dimension=cfg.params.D, truncation=d.truncation,
                           torus_diameter=cfg.params.l, amplitude=d.amplitude)


def options_of(cfg: ScenarioConfig, directory: Path, **overrides) -> RunOptions:
    r = cfg.run
    kw = dict(controlled=r.controlled, project=r.project, record_every=r.record_every,
              max_order=r.max_order, ceiling_factor=r.ceiling_factor,
              checkpoint_every=r.checkpoint_every,
              checkpoint_dir=str(directory / "checkpoints") if r.checkpoint_every else None)
    kw.update(overrides)
    return RunOptions(**kw)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _table(path: Path, header, rows) -> None:
    _write_rows(path, header, [[_fmt(v) for v in row] for row in rows])


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- scenarios ----------------------------------------------------------------

def heat_only(cfg, out: Path, seed: int, threads: int) -> dict:
    params = params_of(cfg)
    data = data_of(cfg, seed)
    traj = run(data, params, cfg.run.T, cfg.run.dt, options_of(cfg, out, nonlinear=False))
    write_trajectory_csv(traj, out / "trajectory.csv")
    # closed form: each mode decays by exp(-nu r^2 4 pi^2 |alpha|^2 t / l^2)
    r2 = radius_squared(data.dimension, data.truncation).astype(float)
    rate = params.nu * params.r ** 2 * 4 * np.pi ** 2 * r2 / params.l ** 2
    e0 = np.sum(np.abs(data.amplitudes) ** 2, axis=0)
    rows, worst = [], 0.0
    for t, rep in zip(traj.times, traj.norm_reports):
        for m, value in sorted(rep.per_order.items()):
            exact = float(np.sqrt(np.sum(e0 * np.exp(-2 * rate * t) * (1 + sobolev_weight(r2, m)))))
            err = abs(value - exact) / exact if exact > 0 else abs(value)
            worst = max(worst, err)
            rows.append([t, m, value, exact, err])
    _table(out / "heat_check.csv", ["time", "order", "numeric", "closed_form", "rel_error"], rows)
    return {"max_rel_error": worst, "passed": worst <= 1e-12}


def _run_or_dump(data, params, T, dt, opts, out: Path, name: str):
    try:
        return run(data, params, T, dt, opts)
    except BlowUpError as err:
        if err.trajectory is not None and len(err.trajectory):
            write_trajectory_csv(err.trajectory, out / f"{name}.partial.csv")
        raise


def nse_unforced(cfg, out: Path, seed: int, threads: int) -> dict:
    params = params_of(cfg)
    data = data_of(cfg, seed)
    traj = _run_or_dump(data, params, cfg.run.T, cfg.run.dt, options_of(cfg, out), out, "trajectory")
    write_trajectory_csv(traj, out / "trajectory.csv")
    rep = verify_envelope_preservation(traj)
    rep.write_csv(out / "envelope.csv")
    return {"final_h2": traj.norm_reports[-1].per_order[2],
            "max_projection_change": traj.max_projection_change,
            "order_preserved": rep.order_ok, "passed": rep.order_ok}


def picard_contraction(cfg, out: Path, seed: int, threads: int) -> dict:
    pc = cfg.picard
    params = params_of(cfg)
    if pc.rho_rule == "fixed_point":
        rho, consts = select_rho(params, pc.C0, pc.Delta, pc.m)
        params = params.replace(rho=rho)
    else:
        consts = kernel_constants(params, pc.Delta)
    cdm = c_dm(params.D, pc.m)
    rule_rho = choose_rho(pc.C0, params.r, consts, cdm).kernel_rule
    (out / "constants.json").write_text(constants_json(consts, cdm))
    data = data_of(cfg, seed)
    if dual_sobolev_norm(data, pc.m) > pc.C0:
        data = scale_to_norm(data, pc.m, pc.C0)
    try:
        _, trace = picard_solve(data, params, pc.Delta, pc.tol, pc.kmax, m=pc.m, n_nodes=pc.n_nodes,
                                C0=pc.C0, constants=asdict(consts))
    except ContractionFailure as err:
        err.trace.write_csv(out / "trace.csv")
        (out / "trace.json").write_text(err.trace.to_json())
        raise
    trace.write_csv(out / "trace.csv")
    (out / "trace.json").write_text(trace.to_json())
    return {"rho": params.rho, "rho_rule_value": rule_rho, "converged": trace.converged,
            "iterations": trace.iterates_kept, "measured_ratio": trace.measured_ratio,
            "passed": trace.converged and trace.measured_ratio <= 0.5}


def feasibility_sweep(cfg, out: Path, seed: int, threads: int) -> dict:
    sw = cfg.sweep
    base = params_of(cfg)
    grid = [(dl, mu, d0) for dl in sw.delta for mu in sw.mu for d0 in sw.Delta0]
    reports = _map(lambda g: feasibility(base.replace(delta=g[0], mu=g[1], Delta0=g[2]),
                                         sw.norm_L2, sw.L_m), grid, threads)
    write_frontier_csv(reports, out / "frontier.csv")
    pairs = [(dl, mu) for dl in sw.delta for mu in sw.mu]
    stars = _map(lambda g: find_delta0_star(base.replace(delta=g[0], mu=g[1]), sw.norm_L2, sw.L_m),
                 pairs, threads)
    _table(out / "delta0_star.csv", ["delta", "mu", "threshold_mu", "mu_above_threshold", "Delta0_star"],
           [[dl, mu, threshold_mu(dl), mu > threshold_mu(dl), s] for (dl, mu), s in zip(pairs, stars)])
    return {"grid_points": len(grid), "feasible_points": sum(r.feasible for r in reports),
            "delta0_star_found": sum(s is not None for s in stars), "pairs": len(pairs)}


def decay_constant(cfg, out: Path, seed: int, threads: int) -> dict:
    D = cfg.params.D
    reports = _map(lambda m: convolution_decay_constant(D, m), cfg.decay.truncations, threads)
    rows, changes = [], []
    for i, rep in enumerate(reports):
        change = None if i == 0 else abs(rep.c - reports[i - 1].c) / reports[i - 1].c
        if change is not None:
            changes.append(change)
        rows.append([rep.truncation, rep.c, " ".join(map(str, rep.argmax)), rep.tail_bound,
                     rep.c_with_tail, change])
    _table(out / "decay_constant.csv",
           ["truncation", "c", "argmax", "tail_bound", "c_with_tail", "relative_change"], rows)
    # envelope map at the first truncation with data in envelope (constant, D + 2)
    first = reports[0]
    env = DecayEnvelope(cfg.data.constant, D + 2)
    field_ = synthesize_data(env, seed, dimension=D, truncation=first.truncation,
                             torus_diameter=cfg.params.l)
    check = check_quadratic_envelope(field_, first.c, env.constant)
    _table(out / "envelope_map.csv", ["truncation", "c", "worst_ratio", "worst_mode", "excluded_modes", "holds"],
           [[first.truncation, first.c, check.worst_ratio, " ".join(map(str, check.worst_mode)),
             check.excluded_modes, check.holds]])
    stable = all(c <= 0.02 for c in changes)
    return {"c": [r.c for r in reports], "relative_changes": changes, "stable_2pct": stable,
            "envelope_map_holds": check.holds, "passed": stable and check.holds}


def horizon_bound(cfg, out: Path, seed: int, threads: int) -> dict:
    params = params_of(cfg)
    data = data_of(cfg, seed)
    order = params.D + 2
    C = dual_sobolev_norm(data, order)
    c = cfg.decay.c or convolution_decay_constant(params.D, data.truncation).c
    r, c_h = choose_r_for_horizon(C, c, cfg.run.T, params.nu, cfg.decay.margin)
    params = params.replace(r=r)
    traj = _run_or_dump(data, params, cfg.run.T, cfg.run.dt, options_of(cfg, out), out, "trajectory")
    write_trajectory_csv(traj, out / "trajectory.csv")
    rows = []
    for t, rep in zip(traj.times, traj.norm_reports):
        bound = c_h * (1 + t)
        rows.append([t, rep.per_order[order], bound, rep.per_order[order] <= bound])
    _table(out / "horizon.csv", ["time", f"h{order}", "bound", "ok"], rows)
    ok = all(row[-1] for row in rows)
    return {"C": C, "c": c, "r": r, "C_horizon": c_h, "passed": ok}


def stochastic_barrier(cfg, out: Path, seed: int, threads: int) -> dict:
    params = params_of(cfg)
    nz = cfg.noise
    opts = options_of(cfg, out, record_every=10 ** 9, fit_decay=False, checkpoint_every=0,
                      checkpoint_dir=None)
    seeds = list(range(seed, seed + nz.seeds))

    def pair(s):
        model = NoiseModel(T=cfg.run.T, n_terms=nz.n_terms, amplitude=nz.amplitude, seed=s)
        return run_forced(data_of(cfg, s), params, cfg.run.T, cfg.run.dt, model, opts)[2]

    reports = _map(pair, seeds, threads)
    _table(out / "pairs.csv",
           ["seed", "forced_high_fraction", "unforced_high_fraction", "forced_order", "unforced_order",
            "fraction_higher", "order_lower"],
           [[s, r.forced_high_fraction, r.unforced_high_fraction, r.forced_order, r.unforced_order,
             r.fraction_higher, r.order_lower] for s, r in zip(seeds, reports)])
    share_f = float(np.mean([r.fraction_higher for r in reports]))
    share_o = float(np.mean([r.order_lower for r in reports]))
    return {"pairs": len(seeds), "share_fraction_higher": share_f, "share_order_lower": share_o,
            "passed": share_f >= 0.8 and share_o >= 0.8}


def cornwall_gap(cfg, out: Path, seed: int, threads: int) -> dict:
    """Calibrate the Gronwall-type constant at dt, then test it on a run refined by ``cornwall.refine``."""
    params = params_of(cfg)
    cw = cfg.cornwall
    a = data_of(cfg, seed)
    bump = data_of(cfg, seed + 1)
    b = a + bump.scaled(cw.perturbation * dual_sobolev_norm(a, 0) / dual_sobolev_norm(bump, 0))
    T, dt = cfg.run.T, cfg.run.dt

    def pair(level):
        h = dt / level
        step_count(T, h)
        opts = options_of(cfg, out, record_every=cfg.run.record_every * level, checkpoint_every=0,
                          checkpoint_dir=None, fit_decay=False)
        return run(a, params, T, h, opts), run(b, params, T, h, opts)

    ta, tb = pair(1)
    C = calibrate_cornwall_constant(ta, tb, cw.p)
    fa, fb = pair(cw.refine)
    res = cornwall_bound(fa, fb, C, cw.p)
    _table(out / "cornwall.csv", ["time", "gap", "bound", "integral", "ok"],
           [[t, g, bd, i, g <= bd * (1 + 1e-12)] for t, g, bd, i in
            zip(res.times, res.gap, res.bound, res.integral)])
    return {"C_calibrated": C, "p": cw.p, "holds_refined": res.holds, "passed": res.holds}


SCENARIO_FUNCS = {f.__name__: f for f in (heat_only, nse_unforced, picard_contraction, feasibility_sweep,
                                          decay_constant, horizon_bound, stochastic_barrier, cornwall_gap)}


# -- artifacts ----------------------------------------------------------------

def versions() -> dict:
    return {"nsgalerkin": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fresh_dir(root: Path, stem: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    base = root / f"{stem}-{stamp}"
    path, k = base, 1
    while path.exists():
        path = Path(f"{base}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def run_scenario(cfg: ScenarioConfig, out_root, *, seed: int | None = None, threads: int = 1,
                 directory=None) -> ScenarioResult:
    """Execute ``cfg.scenario`` into a new timestamped directory under ``out_root``.

    ``directory`` forces an exact (empty or new) directory instead.  Module
    errors propagate after the manifest records the failure.
    """
    if seed is not None:
        cfg.seed = seed
    digest = cfg.digest()
    if directory is None:
        out = _fresh_dir(Path(out_root), f"{cfg.scenario}-{digest[:8]}")
    else:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    manifest = {"scenario": cfg.scenario, "config_hash": digest, "seed": cfg.seed,
                "schema_version": cfg.schema_version, "versions": versions(),
                "created_utc": datetime.now(timezone.utc).isoformat(), "threads": threads}
    try:
        summary = SCENARIO_FUNCS[cfg.scenario](cfg, out, cfg.seed, threads)
        manifest["status"] = "ok"
    except Exception as err:
        manifest["status"] = "error"
        manifest["error"] = f"{type(err).__name__}: {err}"
        _finish(out, manifest, None)
        raise
    _finish(out, manifest, summary)
    files = sorted(p.name for p in out.iterdir() if p.suffix == ".csv")
    return ScenarioResult(out, summary, files)


def _finish(out: Path, manifest: dict, summary) -> None:
    if summary is not None:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_fmt))
    manifest["files"] = {p.name: _sha256(p) for p in sorted(out.iterdir())
                         if p.is_file() and p.suffix in (".csv", ".json") and p.name != "manifest.json"}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
