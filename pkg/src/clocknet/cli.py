"""Command-line entry point: ``clocknet {simulate,analytic,plan,verify,rerun,eavesdrop}``."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata, resources
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import analytic, feedback, planner, protocol, stats
from .model import (SCHEMA_VERSION, InsufficientQubits, InvalidConfig, NetworkConfig, Scheme, canonical_json,
                    config_from_dict, config_to_dict)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    """Bad input that maps to exit code 2."""


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def config_hash(cfg: NetworkConfig) -> str:
    return hashlib.sha256(canonical_json(config_to_dict(cfg)).encode()).hexdigest()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolve_scenario(name: str) -> Path:
    """A path, or the stem of a bundled scenario such as ``fig3``."""
    p = Path(name)
    if p.exists():
        return p
    bundled = resources.files("clocknet") / "scenarios" / f"{name}.json"
    if bundled.is_file():
        return Path(str(bundled))
    raise UsageError(f"scenario file not found: {name}")


def load_config(name: str) -> tuple[Path, NetworkConfig]:
    path = resolve_scenario(name)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return path, config_from_dict(data)
    except InvalidConfig as exc:
        raise UsageError(f"{path}: invalid scenario: {exc}") from exc


def _workers() -> int:
    raw = os.environ.get("CLOCKNET_THREADS", "")
    try:
        cap = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise UsageError(f"CLOCKNET_THREADS must be an integer, got {raw!r}") from None
    return max(1, cap)


def _mean_gamma_lo(cfg: NetworkConfig) -> float:
    return float(np.mean([n.gamma_lo for n in cfg.nodes]))


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# simulate


def _sim_taus(cfg: NetworkConfig, cycles: int, args) -> list[float]:
    taus = stats.octave_taus(cycles, cfg.ramsey_time)
    lo = args.tau_min if args.tau_min is not None else -math.inf
    hi = args.tau_max if args.tau_max is not None else math.inf
    taus = [t for t in taus if lo <= t <= hi]
    if args.tau_points is not None and len(taus) > args.tau_points:
        idx = np.unique(np.round(np.linspace(0, len(taus) - 1, args.tau_points)).astype(int))
        taus = [taus[i] for i in idx]
    if not taus:
        raise UsageError("no averaging time of the form 2^j T lies in the requested range")
    return taus


def simulate(cfg: NetworkConfig, trials: int, seed: int, out: Path, args) -> dict[str, Any]:
    out.mkdir(parents=True, exist_ok=True)
    taus = _sim_taus(cfg, cfg.cycles, args)

    def one(scheme: Scheme):
        res = feedback.run_closed_loop(dataclasses.replace(cfg, scheme=scheme), trials=trials, seed=seed)
        values = stats.trial_mean_adev(res.scheme_output(), cfg.ramsey_time, taus)
        return scheme, res, values

    with ThreadPoolExecutor(max_workers=min(_workers(), len(Scheme))) as pool:
        results = list(pool.map(one, list(Scheme)))
    outputs, summary = [], {}
    for scheme, res, values in results:
        rows = [(scheme.value, t, s) for t, s in zip(taus, values)]
        path = _write(out / f"adev_{scheme.value}.csv", analytic.curves_csv(rows))
        outputs.append(path)
        summary[scheme.value] = {
            "label": scheme.label,
            "sigma_y": [float(v) for v in values],
            "rounding_suspect": res.rounding_suspect,
            "slip_suspect": res.slip_suspect,
            "degenerate": res.degenerate,
        }
        if scheme is Scheme.QUANTUM_COOP and args.transcript:
            msgs = protocol.transcript_from_closed_loop(res, 0, cfg.clock_frequency, cfg.node_ids,
                                                        center=cfg.node_ids[0], encrypted=not args.plaintext)
            outputs.append(_write(out / "transcript.jsonl", protocol.dump_transcript(msgs)))
    return {"taus": taus, "schemes": summary, "outputs": outputs}


# ---------------------------------------------------------------------------
# analytic


def _analytic_taus(args) -> np.ndarray:
    lo = args.tau_min if args.tau_min is not None else 1e-2
    hi = args.tau_max if args.tau_max is not None else 1e5
    n = args.tau_points if args.tau_points is not None else 50
    if not (0 < lo < hi) or n < 2:
        raise UsageError("need 0 < tau-min < tau-max and tau-points >= 2")
    return np.geomspace(lo, hi, n)


def analytic_tables(cfg: NetworkConfig, taus: np.ndarray) -> tuple[list[tuple[str, float, float]], dict]:
    n, k = cfg.total_qubits, cfg.k
    g_lo, g_ind, w0 = _mean_gamma_lo(cfg), cfg.gamma_ind, cfg.clock_frequency
    rows = []
    for scheme in Scheme:
        sig = analytic.adev_scheme(scheme, n, k, g_lo, g_ind, w0, taus)
        rows += [(scheme.value, t, s) for t, s in zip(taus, np.atleast_1d(sig))]
    floor_flag = g_ind == 0
    if not floor_flag:
        bound = analytic.fundamental_bound(n, g_ind, w0, taus)
        rows += [("bound", t, s) for t, s in zip(taus, bound)]

    alloc = planner.plan_allocation(n, k, g_lo, g_ind, cfg.duration)
    t = min(cfg.ramsey_time, cfg.duration)
    budget = analytic.error_budget(n, k, alloc.n0_opt, alloc.n1_opt, t, g_lo, g_ind, cfg.duration)
    table = {
        "n": n, "k": k, "n0": alloc.n0_opt, "n1": alloc.n1_opt, "ramsey_time_s": t, "tau_s": cfg.duration,
        **budget.to_dict(),
        "gamma2_over_gamma1": budget.rounding / budget.projection,
        "x_opt": alloc.x_opt,
        "floor": None if floor_flag else {"gamma_deph": budget.dephasing,
                                          "crossover_tau_s": 1.0 / (g_ind * n)},
    }
    return rows, table


def _budget_csv(table: dict) -> str:
    keys = ["n", "k", "n0", "n1", "ramsey_time_s", "tau_s", "gamma1", "gamma2", "gamma3", "gamma_deph",
            "dominant", "gamma2_over_gamma1", "x_opt"]
    vals = ["" if table["floor"] is None and key == "gamma_deph" else table[key] for key in keys]
    return ",".join(keys) + "\n" + ",".join(repr(v) if isinstance(v, float) else str(v) for v in vals) + "\n"


# ---------------------------------------------------------------------------
# plan


def plan_report(cfg: NetworkConfig) -> dict[str, Any]:
    n, k = cfg.total_qubits, cfg.k
    alloc = planner.plan_allocation(n, k, _mean_gamma_lo(cfg), cfg.gamma_ind, cfg.duration)
    base = cfg.cascade.base if cfg.cascade else 2
    pre = cfg.cascade.prenarrow if cfg.cascade else 0
    cascade = feedback.default_plan(cfg)
    return {
        "schema_version": SCHEMA_VERSION,
        "asymptotic": {"n0_opt": alloc.n0_opt, "n1_opt": alloc.n1_opt, "alpha": alloc.alpha, "x_opt": alloc.x_opt,
                       "t_opt": alloc.t_opt, "n_star": alloc.n_star, "n_step": alloc.n_step,
                       "gamma_eff": alloc.gamma_eff, "d_opt": alloc.d_opt},
        "refined": {"n0": alloc.n0_refined, "t_opt": alloc.t_refined},
        "simulation_cascade": {**cascade.to_dict(), "rule": "scenario" if cfg.cascade and cfg.cascade.n0 else
                               "calibrated", "base_requested": base, "prenarrow_requested": pre},
    }


# ---------------------------------------------------------------------------
# verify


def _suite_circuit() -> list[tuple[str, bool, str]]:
    from .circuit import bell_branches, evolve_phases, ghz_state, run_entangling_protocol, sample_x_parities

    target = ghz_state(6, math.pi / 2)
    worst = min(run_entangling_protocol(3, 2, outcomes=b).fidelity(target) for b in bell_branches(3))
    out = [("ghz_preparation", worst >= 1 - 1e-10, f"min fidelity {worst:.15f}")]
    rng = np.random.default_rng(2)
    shots, worst_z = 10_000, 0.0
    for size in (2, 4, 6):
        for phi in np.linspace(-math.pi, math.pi, 16, endpoint=False):
            st = evolve_phases(ghz_state(size), [phi / size] * size)
            p = (1 + math.cos(phi)) / 2
            freq = float(np.mean(sample_x_parities(st, shots, rng) == 1))
            sd = math.sqrt(max(p * (1 - p), 1e-12) / shots)
            worst_z = max(worst_z, abs(freq - p) / sd if sd > 1e-9 else 0.0)
    out.append(("parity_law", worst_z <= 3.5, f"max |z| {worst_z:.2f}"))
    return out


def _suite_estimator() -> list[tuple[str, bool, str]]:
    from .estimation import exact_level_phases, reconstruct_phase, wrap

    worst = 0.0
    for k in (2, 4):
        for m in (2, 4):
            for phi in np.linspace(-math.pi, math.pi, 1000, endpoint=False):
                rec = reconstruct_phase(list(exact_level_phases(phi, k, m)), k)
                worst = max(worst, abs(float(wrap(rec.estimate - phi))))
    return [("digit_reconstruction", worst < 1e-9, f"max error {worst:.2e} rad")]


def _suite_security() -> list[tuple[str, bool, str]]:
    from scipy.stats import norm

    trials = 1_000_000
    rate = protocol.sabotage_detection_rate(trials, protocol.DEFAULT_LAMBDA, 1000, 10, np.random.default_rng(4))
    p = 2 * norm.sf(protocol.DEFAULT_LAMBDA)
    sd = math.sqrt(p * (1 - p) / trials)
    return [("false_positive_rate", abs(rate - p) <= 3 * sd, f"{rate:.3e} vs {p:.3e} (3 sigma {3 * sd:.1e})")]


SUITES: dict[str, Callable[[], list[tuple[str, bool, str]]]] = {
    "circuit": _suite_circuit, "estimator": _suite_estimator, "security": _suite_security,
}


# ---------------------------------------------------------------------------
# argument handling


def _add_common(p: argparse.ArgumentParser, scenario: bool = True):
    if scenario:
        p.add_argument("--scenario", required=True, help="scenario JSON path or bundled name (fig3, fig3_desk, ...)")
    p.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    p.add_argument("--tau-min", type=float)
    p.add_argument("--tau-max", type=float)
    p.add_argument("--tau-points", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clocknet", description="Entangled clock-network simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="closed-loop Monte Carlo for all five schemes")
    _add_common(s)
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="out")
    s.add_argument("--transcript", action="store_true", help="also write the first trial's message transcript")
    s.add_argument("--plaintext", action="store_true", help="leave feedback unencrypted in the transcript")

    a = sub.add_parser("analytic", help="closed-form curves and error budget")
    _add_common(a)
    a.add_argument("--out", default="out")

    p = sub.add_parser("plan", help="resource allocation")
    _add_common(p)

    v = sub.add_parser("verify", help="built-in self checks")
    v.add_argument("--suite", choices=sorted(SUITES), action="append")
    v.add_argument("--json", action="store_true")

    r = sub.add_parser("rerun", help="repeat a run from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out")
    r.add_argument("--json", action="store_true")

    e = sub.add_parser("eavesdrop", help="adversary view of a transcript")
    e.add_argument("transcript")
    e.add_argument("--intercept", action="append", choices=[k.value for k in protocol.Kind])
    e.add_argument("--json", action="store_true")
    return ap


def _manifest(command: str, path: Path | None, cfg: NetworkConfig, seed: int | None, trials: int | None,
              outputs: Sequence[Path], started: float, args) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "scenario": None if path is None else str(path),
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "seed": seed,
        "trials": trials,
        "tau": {"min": args.tau_min, "max": args.tau_max, "points": args.tau_points},
        "options": {"transcript": bool(getattr(args, "transcript", False)),
                    "plaintext": bool(getattr(args, "plaintext", False))},
        "tool_version": tool_version(),
        "outputs": {p.name: _sha256(p) for p in outputs},
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }


def _emit(args, payload: Any, human: str):
    if getattr(args, "json", False):
        print(json.dumps(payload, sort_keys=True, default=str))
    else:
        print(human)


def _run_simulate(args, cfg: NetworkConfig, path: Path | None) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    seed = cfg.rng_seed if args.seed is None else args.seed
    started = time.perf_counter()
    out = Path(args.out)
    res = simulate(cfg, args.trials, seed, out, args)
    man = _manifest("simulate", path, cfg, seed, args.trials, res["outputs"], started, args)
    _write(out / "manifest.json", json.dumps(man, indent=2, sort_keys=True) + "\n")
    lines = [f"{'scheme':<24}" + "".join(f"{t:>12.4g}" for t in res["taus"])]
    for name, info in res["schemes"].items():
        lines.append(f"({info['label']}) {name:<20}" + "".join(f"{s:>12.3e}" for s in info["sigma_y"]))
    lines.append(f"wrote {len(res['outputs'])} files and manifest.json to {out}")
    _emit(args, {"taus": res["taus"], "schemes": res["schemes"], "manifest": man}, "\n".join(lines))
    return EXIT_OK


def _run_analytic(args, cfg: NetworkConfig, path: Path | None) -> int:
    started = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, table = analytic_tables(cfg, _analytic_taus(args))
    files = [_write(out / "analytic_curves.csv", analytic.curves_csv(rows)),
             _write(out / "error_budget.csv", _budget_csv(table))]
    man = _manifest("analytic", path, cfg, None, None, files, started, args)
    _write(out / "manifest.json", json.dumps(man, indent=2, sort_keys=True) + "\n")
    human = "\n".join(f"{key:>20}: {val}" for key, val in table.items())
    _emit(args, {"budget": table, "manifest": man}, human + f"\nwrote curves and budget to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = args.suite or sorted(SUITES)
    report = {name: SUITES[name]() for name in names}
    ok = all(passed for checks in report.values() for _, passed, _ in checks)
    payload = {"ok": ok, "suites": {n: [{"check": c, "pass": p, "detail": d} for c, p, d in v]
                                   for n, v in report.items()}}
    human = "\n".join(f"[{'PASS' if p else 'FAIL'}] {n}/{c}: {d}" for n, v in report.items() for c, p, d in v)
    _emit(args, payload, human)
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_rerun(args) -> int:
    path = Path(args.manifest)
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    man = json.loads(path.read_text(encoding="utf-8"))
    try:
        cfg = config_from_dict(man["config"])
    except (KeyError, InvalidConfig) as exc:
        raise UsageError(f"{path}: unusable manifest ({exc})") from exc
    ns = argparse.Namespace(json=args.json, out=args.out or str(path.parent), trials=man.get("trials"),
                            seed=man.get("seed"), tau_min=man["tau"]["min"], tau_max=man["tau"]["max"],
                            tau_points=man["tau"]["points"], **man.get("options", {}))
    scenario = Path(man["scenario"]) if man.get("scenario") else None
    if man["command"] == "simulate":
        return _run_simulate(ns, cfg, scenario)
    if man["command"] == "analytic":
        return _run_analytic(ns, cfg, scenario)
    raise UsageError(f"cannot rerun command {man['command']!r}")


def cmd_eavesdrop(args) -> int:
    path = Path(args.transcript)
    if not path.is_file():
        raise UsageError(f"transcript not found: {path}")
    msgs = protocol.load_transcript(path.read_text(encoding="utf-8"))
    encrypted = any(m.encrypted for m in msgs)
    view = protocol.eavesdropper_analysis(msgs, encrypted, args.intercept)
    payload = {"intercepted": sorted(k.value for k in view.intercepted), "encrypted": encrypted,
               "free_running_com": view.free_running_com, "stabilized_com": view.stabilized_com}
    _emit(args, payload, "\n".join(f"{k}: {v}" for k, v in payload.items()))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "rerun":
            return cmd_rerun(args)
        if args.command == "eavesdrop":
            return cmd_eavesdrop(args)
        path, cfg = load_config(args.scenario)
        if args.command == "simulate":
            return _run_simulate(args, cfg, path)
        if args.command == "analytic":
            return _run_analytic(args, cfg, path)
        report = plan_report(cfg)
        _emit(args, report, json.dumps(report, indent=2))
        return EXIT_OK
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    except (planner.AsymptoticInvalid, InsufficientQubits) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        print(json.dumps({"error": "runtime", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
