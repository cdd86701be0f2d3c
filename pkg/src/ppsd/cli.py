"""Command-line entry point: ``ppsd {run,compare,privacy-audit,advise} --config PATH``.

Exit codes: 0 success, 1 runtime failure (divergence, failed audit, solver
error), 2 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis, engine, objective, privacy, topology
from .errors import AdvisoryEmpty, ConfigError, ConstantsIntractable, FitUndefined, PPSDError
from .schedule import default_eta

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "eps": 1e-8,
    "k_max": 5000,
    "seed": 0,
    "algorithm": "ppsd",
    "x0_policy": "zeros",
    "weight_magnitude": 10.0,
    "init_magnitude": 10.0,
}

AUDIT_DEFAULTS = {
    "cases": ["auto"],
    "kappa": 500,
    "tolerance": 1e-9,
    "delta_ladder": [],
    "delta_seed": 0,
    "negative_control": False,
    "attack": False,
}


def load_schema() -> dict:
    return json.loads(resources.files("ppsd").joinpath("config_schema.json").read_text())


def load_config(path: str | Path) -> dict:
    """Read and schema-check a config; a run sidecar is accepted in place of a config."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if isinstance(doc, dict) and "config" in doc and "stop_reason" in doc:
        doc = doc["config"]
    validate_config(doc)
    return doc


def validate_config(doc) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            lines.append(f"{where}: {err.message}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


def _require(cfg: dict, *fields: str) -> None:
    missing = [f for f in fields if f not in cfg]
    if missing:
        raise ConfigError(f"config is missing required field(s): {', '.join(missing)}")


def build_problem(spec: dict) -> objective.ProblemInstance:
    kind = spec["kind"]
    try:
        if kind == "rendezvous":
            if "points" in spec:
                return objective.rendezvous(spec["points"])
            _require(spec, "n")
            return objective.make_rendezvous(
                spec["n"], d=spec.get("d", 1), scale=spec.get("scale", 10.0), seed=spec.get("seed", 0)
            )
        if "Q" in spec or "m" in spec:
            _require(spec, "Q", "m")
            return objective.linear_regression(spec["Q"], spec["m"])
        _require(spec, "n")
        return objective.make_regression(
            spec["n"], d=spec.get("d", 10), p=spec.get("p", 10), noise=spec.get("noise", 0.2), seed=spec.get("seed", 0)
        )
    except ConfigError as exc:
        raise ConfigError(f"problem: {exc}") from None
    except PPSDError as exc:
        raise ConfigError(f"problem: {exc}") from None


def build_graph(spec: dict, n: int) -> topology.Digraph:
    kind = spec["kind"]
    size = spec.get("n", n)
    if size != n:
        raise ConfigError(f"graph has n={size} but the problem has {n} agents")
    try:
        if kind == "ring":
            return topology.ring(size)
        if kind == "testbed":
            if size != 5:
                raise ConfigError("the testbed graph has exactly 5 agents")
            return topology.five_agent_testbed()
        if kind == "random":
            _require(spec, "edge_probability")
            return topology.random_strongly_connected(size, spec["edge_probability"], spec.get("seed", 0))
        _require(spec, "edges")
        g = topology.from_edge_list([tuple(e) for e in spec["edges"]], n=size)
    except ConfigError as exc:
        raise ConfigError(f"graph: {exc}") from None
    except PPSDError as exc:
        raise ConfigError(f"graph: {exc}") from None
    if not topology.is_strongly_connected(g):
        raise ConfigError("graph: the edge list is not strongly connected")
    return g


def resolve(cfg: dict) -> tuple[dict, topology.Digraph, objective.ProblemInstance]:
    """Fill defaults and build the graph and problem; the result is a valid config again."""
    _require(cfg, "problem", "graph", "gamma")
    out = copy.deepcopy(cfg)
    for key, val in DEFAULTS.items():
        out.setdefault(key, val)
    instance = build_problem(out["problem"])
    g = build_graph(out["graph"], instance.n)
    if out["gamma"] == "default":
        out["gamma"] = 1.0 / (2 * instance.n * instance.L)
    if out.get("eta", "default") == "default":
        out["eta"] = default_eta(g)
    return out, g, instance


def _run_options(cfg: dict) -> dict:
    return {
        "gamma": cfg["gamma"],
        "eta": cfg["eta"],
        "k_max": cfg["k_max"],
        "eps": cfg["eps"],
        "seed": cfg["seed"],
        "x0_policy": cfg["x0_policy"],
        "weight_magnitude": cfg["weight_magnitude"],
        "init_magnitude": cfg["init_magnitude"],
    }


def _execute(g, instance, cfg: dict, algorithm: str, **override) -> engine.RunRecord:
    opts = _run_options(cfg)
    keep = algorithm == "ppsd" and override.pop("keep_states", False)
    opts.update(override)
    return engine.run(g, instance, algorithm=algorithm, keep_states=keep, keep_weights=keep, **opts)


def _rate(record: engine.RunRecord) -> dict | None:
    try:
        return analysis.fit_linear_rate(record.residuals).to_dict()
    except FitUndefined:
        return None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def cmd_run(args, cfg: dict, out: Path) -> int:
    cfg, g, instance = resolve(cfg)
    record = _execute(g, instance, cfg, cfg["algorithm"])
    rate = _rate(record)
    engine.atomic_write(out / "run.csv", record.csv_text())
    sidecar = {
        "config": cfg,
        "seed": cfg["seed"],
        "stop_reason": record.stop_reason,
        "iterations": record.iterations,
        "final_residual": float(record.residuals[-1]),
        "rate": rate,
    }
    engine.atomic_write(out / "run.json", _dump(sidecar))
    lam = "n/a" if rate is None else f"{rate['lam']:.6f}"
    _say(args, f"{record.stop_reason} after {record.iterations} iterations; final residual {record.residuals[-1]:.3e}; fitted lambda {lam}")
    return EXIT_RUNTIME if record.stop_reason == "diverged" else EXIT_OK


def cmd_compare(args, cfg: dict, out: Path) -> int:
    cfg, g, instance = resolve(cfg)
    records = {alg: _execute(g, instance, cfg, alg) for alg in ("ppsd", "pushpull")}
    rows = max(r.iterations for r in records.values()) + 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "ppsd_residual", "pushpull_residual"])
    for k in range(rows):
        cells = [k]
        for alg in ("ppsd", "pushpull"):
            res = records[alg].residuals
            cells.append(format(float(res[k]), ".17g") if k < res.size else "")
        w.writerow(cells)
    engine.atomic_write(out / "compare.csv", buf.getvalue())
    gap = float(np.max(np.abs(records["ppsd"].final_state.x - records["pushpull"].final_state.x)))
    summary = {
        alg: {
            "stop_reason": r.stop_reason,
            "iterations": r.iterations,
            "final_residual": float(r.residuals[-1]),
            "rate": _rate(r),
        }
        for alg, r in records.items()
    }
    engine.atomic_write(out / "compare.json", _dump({"config": cfg, "seed": cfg["seed"], "runs": summary, "final_gap": gap}))
    for alg, s in summary.items():
        _say(args, f"{alg}: {s['stop_reason']} after {s['iterations']} iterations; final residual {s['final_residual']:.3e}")
    _say(args, f"max |x_ppsd - x_pushpull| = {gap:.3e}")
    diverged = any(r.stop_reason == "diverged" for r in records.values())
    return EXIT_RUNTIME if diverged else EXIT_OK


def _deltas(audit: dict, d: int) -> list[np.ndarray]:
    rng = np.random.default_rng(audit["delta_seed"])
    samples = []
    if "delta_range" in audit:
        lo, hi = audit["delta_range"]
        samples.append(rng.uniform(lo, hi, size=d))
    for mag in audit["delta_ladder"]:
        samples.append(mag * rng.uniform(0.5, 1.0, size=d))
    if not samples:
        raise ConfigError("audit: give delta_range and/or delta_ladder")
    return samples


def cmd_privacy_audit(args, cfg: dict, out: Path) -> int:
    _require(cfg, "audit")
    cfg, g, instance = resolve(cfg)
    audit = dict(AUDIT_DEFAULTS)
    audit.update(cfg["audit"])
    cfg["audit"] = audit
    _require(audit, "target")
    i = audit["target"]
    if i > g.n:
        raise ConfigError(f"audit: target {i} outside [1, {g.n}]")
    kappa = audit["kappa"]
    tol = audit["tolerance"]
    adversary = frozenset(audit.get("adversary", []))
    report: dict = {"config": cfg, "seed": cfg["seed"], "audits": [], "errors": []}
    failed = False

    need_trajectory = "accomplice" in audit or "eavesdropper_channel" in audit
    base = None
    if need_trajectory:
        base = _execute(g, instance, cfg, "ppsd", k_max=kappa + 1, eps=0.0, keep_states=True)
        if base.stop_reason == "diverged":
            raise PPSDError("the audited run diverged")
        deltas = _deltas(audit, instance.d)

    first_insider = first_eav = None
    if "accomplice" in audit:
        m = audit["accomplice"]
        for case in audit["cases"]:
            for dv in deltas:
                spec = privacy.ShadowSpec.make(i, m, dv, case=case)
                try:
                    v = privacy.verify_indistinguishable(base, spec, adversary, kappa, tol)
                except PPSDError as exc:
                    report["errors"].append({"audit": "insider", "case": case, "type": type(exc).__name__, "message": str(exc)})
                    continue
                report["audits"].append(v.to_dict())
                failed |= not v.passed
                first_insider = first_insider or v
        if audit["negative_control"]:
            spec = privacy.ShadowSpec.make(i, m, deltas[0], case=audit["cases"][0])
            try:
                v = privacy.verify_indistinguishable(base, spec, adversary, kappa, tol, negative_control=True)
                entry = v.to_dict()
                entry["expected"] = "fail"
                report["audits"].append(entry)
                failed |= v.passed
            except PPSDError as exc:
                report["errors"].append({"audit": "negative_control", "type": type(exc).__name__, "message": str(exc)})

    if "eavesdropper_channel" in audit:
        channel = tuple(audit["eavesdropper_channel"])
        for dv in deltas:
            try:
                v = privacy.verify_eavesdropper(base, channel, dv, kappa, tol)
            except PPSDError as exc:
                report["errors"].append({"audit": "eavesdropper", "type": type(exc).__name__, "message": str(exc)})
                continue
            report["audits"].append(v.to_dict())
            failed |= not v.passed
            first_eav = first_eav or v

    if audit["attack"]:
        full = _execute(g, instance, cfg, "ppsd", keep_states=True)
        try:
            view = privacy.record_view(full, adversary)
            res = privacy.inference_attack(view, full, i)
            report["attack"] = res.to_dict()
            failed |= full.stop_reason != "converged"
        except PPSDError as exc:
            report["errors"].append({"audit": "attack", "type": type(exc).__name__, "message": str(exc)})

    if first_insider is not None:
        a, b = first_insider.logs
        engine.atomic_write(out / "attacker_log.csv", a.to_csv(b))
    if first_eav is not None:
        a, b = first_eav.logs
        engine.atomic_write(out / "eavesdropper_log.csv", a.to_csv(b))
    report["verdict"] = "fail" if failed else "pass"
    engine.atomic_write(out / "audit.json", _dump(report))

    for entry in report["audits"]:
        tag = " (negative control)" if entry["negative_control"] else ""
        _say(args, f"{entry['kind']} case {entry['case']}{tag}: {entry['verdict']} (max deviation {entry['max_deviation']:.3e})")
    for err in report["errors"]:
        _say(args, f"{err['audit']}: {err['type']}: {err['message']}")
    if "attack" in report:
        _say(args, f"inference attack on agent {i}: estimate error {report['attack']['error']}")
    _say(args, f"overall: {report['verdict']}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_advise(args, cfg: dict, out: Path) -> int:
    adv = dict(cfg.get("advise", {}))
    if "synthetic" in adv:
        consts = analysis.TheoryConstants.synthetic(**adv["synthetic"])
    else:
        if not {"n", "eta", "L", "mu"} <= adv.keys():
            _require(cfg, "problem", "graph")
            instance = build_problem(cfg["problem"])
            g = build_graph(cfg["graph"], instance.n)
            eta = cfg.get("eta", "default")
            adv.setdefault("n", instance.n)
            adv.setdefault("eta", default_eta(g) if eta == "default" else eta)
            adv.setdefault("L", instance.L)
            adv.setdefault("mu", instance.mu)
        consts = analysis.theoretical_constants(
            adv["n"], adv["eta"], adv["L"], adv["mu"], cap=adv.get("cap", analysis.N_CAP)
        )
    gamma_range = tuple(adv.get("gamma_range", (1e-12, 1.0)))
    try:
        advice = analysis.step_size_advisor(consts, gamma_range)
    except (ConstantsIntractable, AdvisoryEmpty) as exc:
        advice = exc.report
    engine.atomic_write(out / "advise.json", _dump({"config": cfg, "advisor": advice.to_dict()}))
    _say(args, f"N_R={consts.N_R} N_P={consts.N_P} tractable={consts.tractable}")
    if advice.feasible:
        _say(args, f"largest certified gamma {advice.gamma:.6e} (rho {advice.rho:.12f})")
    else:
        _say(args, f"no certified step size: {advice.note}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "privacy-audit": cmd_privacy_audit,
    "advise": cmd_advise,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppsd", description="Privacy-preserving push-pull simulations and audits.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config (or a run sidecar)")
        p.add_argument("--out", default=None, help="output directory (default: $PPSD_OUT_DIR or ./ppsd_out)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out or os.environ.get("PPSD_OUT_DIR") or "ppsd_out")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg["seed"] = args.seed
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PPSDError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
