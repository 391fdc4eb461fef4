"""Command-line driver: ``infopriv {train,certify,sweep,gen-data,oracle-selftest}``.

Runs are configured by a YAML or JSON file::

    data:
      synthetic: {kind: binary_table3, n_train: 80, n_test: 1000, rho: 0.2}
      # or csv: {path: train.csv, schema: {...}, levels: 10, strategy: equal_width}
    risk: {loss: logistic, kernel: count, lam: null, lam_n: null}
    solver: {delta1: 0.005, delta2: 0.005, mu: 100, p_ratio: 0.999}
    z_card: 2
    metric: normalized
    sweep: {param: rho, values: [0.1, 0.5, 0.9]}
    certify: {deltas: [0.05, 0.1], n_samples: 100000}

Exit codes: 0 success, 2 configuration error, 3 solver infeasibility,
4 oracle support overflow.  ``INFOPRIV_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .data import SyntheticSpec, generate, ingest_csv
from .exceptions import (
    BarrierViolation,
    EmptyAfterFiltering,
    InfeasibleCorrelation,
    InfeasibleProjection,
    SchemaError,
    SupportTooLarge,
)
from .kernels import PrivacyMapping
from .oracle import (
    JointModel,
    budget_exact,
    budget_weak,
    compute_c,
    compute_c_prime,
    conditionals,
    estimate_epsilon_hat,
    fano_risk_bound,
    induced_joint,
    bayes_error,
    min_risk_R,
    posterior_ratio_extremes,
    table1_joint,
)
from .risk import RiskConfig, TrainingSet
from .solver import InnerConfig, SolveResult, SolverConfig, predict_H, solve

log = logging.getLogger("infopriv")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SUPPORT = 0, 2, 3, 4
FLOAT_FMT = ".17g"
SWEEP_PARAMS = ("rho", "p_ratio", "m")
SWEEP_COLUMNS = [
    "sweep_param", "sweep_value", "status", "error_H", "error_G", "epsilon",
    "theta_star", "theta", "config_digest", "seed",
]
DEFAULT_CERTIFY = {"deltas": [0.01, 0.05, 0.1], "n_samples": 100000}


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- config


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        cfg = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg


def _pick(section: dict, cls, extra=()):
    known = {f.name for f in fields(cls)} | set(extra)
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return {k: v for k, v in section.items() if k in known and k not in extra}


def solver_config(cfg: dict, seed: int) -> SolverConfig:
    section = dict(cfg.get("solver") or {})
    max_inner = section.pop("max_inner", None)
    kw = _pick(section, SolverConfig)
    kw.pop("inner", None)
    kw["seed"] = seed
    if max_inner is not None:
        kw["inner"] = InnerConfig(max_iter=int(max_inner))
    try:
        return SolverConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def risk_config(cfg: dict) -> RiskConfig:
    try:
        rcfg = RiskConfig(**_pick(dict(cfg.get("risk") or {}), RiskConfig))
        rcfg.loss_spec, rcfg.kernel_spec
        return rcfg
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def synthetic_spec(cfg: dict, seed: int) -> SyntheticSpec | None:
    data = cfg.get("data") or {}
    if "synthetic" not in data:
        return None
    kw = _pick(dict(data["synthetic"] or {}), SyntheticSpec)
    kw["seed"] = seed
    try:
        return SyntheticSpec(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def resolved_config(cfg: dict, seed: int) -> dict:
    out = copy.deepcopy(cfg)
    out["seed"] = seed
    return out


def config_digest(cfg: dict, seed: int) -> str:
    canon = json.dumps(resolved_config(cfg, seed), sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- data


def load_data(cfg: dict, seed: int):
    """``(train, test, joint)``; ``joint`` is ``None`` for CSV sources."""
    spec = synthetic_spec(cfg, seed)
    if spec is not None:
        return generate(spec)
    data = cfg.get("data") or {}
    if "csv" not in data:
        raise ConfigError("data must define 'synthetic' or 'csv'")
    src = data["csv"]
    if "path" not in src or not Path(src["path"]).exists():
        raise ConfigError(f"csv path not found: {src.get('path')!r}")
    levels = int(src.get("levels", 10))
    strategy = src.get("strategy", "equal_width")
    train = ingest_csv(src["path"], src.get("schema", {}), levels, strategy,
                       sidecar=src.get("edges_out"))
    test = None
    if src.get("test_path"):
        test = ingest_csv(src["test_path"], src["schema"], levels, strategy,
                          binning=train.meta["binning"])
    return train, test, None


# ------------------------------------------------------------ artifacts


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), FLOAT_FMT)
    return str(v)


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def result_to_artifact(res: SolveResult, cfg: dict, seed: int, z_card: int) -> dict:
    beta = res.beta if isinstance(res.beta, list) else [res.beta]
    return {
        "format": "infopriv-model/1",
        "config_digest": config_digest(cfg, seed),
        "seed": seed,
        "z_card": z_card,
        "metric": res.metric,
        "risk": {"lam": res.rcfg.lam, "lam_n": res.rcfg.lam_n,
                 "loss": res.rcfg.loss, "kernel": res.rcfg.kernel},
        "theta_star": res.theta_star,
        "theta": res.theta,
        "pair_theta_stars": res.pair_theta_stars,
        "converged": res.converged,
        "Q": res.Q.tables,
        "alpha": res.alpha,
        "beta": beta,
        "trace": res.trace,
        "train": {"xs": res.ts.xs, "hs": res.ts.hs, "gs": res.ts.gs, "x_card": res.ts.x_card},
    }


def artifact_to_result(art: dict) -> SolveResult:
    tr = art["train"]
    ts = TrainingSet(np.array(tr["xs"]), np.array(tr["hs"]), np.array(tr["gs"]), tr["x_card"])
    beta = [np.array(b) for b in art["beta"]]

    def num(v):
        return float(v) if v is not None else float("nan")

    return SolveResult(
        alpha=np.array(art["alpha"]),
        beta=beta[0] if len(beta) == 1 else beta,
        Q=PrivacyMapping(np.array(art["Q"])),
        theta_star=num(art["theta_star"]),
        theta=num(art["theta"]),
        trace=[float(v) for v in art["trace"]],
        converged=bool(art["converged"]),
        ts=ts,
        rcfg=RiskConfig(**art["risk"]),
        pair_theta_stars={int(k): v for k, v in art.get("pair_theta_stars", {}).items()},
        metric=art.get("metric", "normalized"),
    )


# --------------------------------------------------------------- commands


def run_train(cfg: dict, seed: int, mode: str = "expected"):
    train, test, joint = load_data(cfg, seed)
    z_card = int(cfg.get("z_card", 2))
    metric = cfg.get("metric", "normalized")
    res = solve(train, solver_config(cfg, seed), risk_config(cfg), z_card, metric)
    summary = {"n_train": train.n, "s": train.s, "x_card": train.x_card}
    if test is not None:
        pred = predict_H(res, test.xs, mode, seed)
        summary["test_error_H"] = float(np.mean(pred != test.hs))
        summary["mode"] = mode
    return res, joint, summary


def cmd_train(args, cfg) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res, joint, summary = run_train(cfg, args.seed, args.mode)
    z_card = int(cfg.get("z_card", 2))
    write_json(out / "model.json", result_to_artifact(res, cfg, args.seed, z_card))
    if joint is not None:
        write_json(out / "joint.json", joint.to_dict())
    write_rows(out / "trace.csv", ["iteration", "objective", "constraint_slack", "config_digest", "seed"],
               [dict(r, config_digest=config_digest(cfg, args.seed), seed=args.seed)
                for r in res.trace_records()])
    manifest = {
        "config": resolved_config(cfg, args.seed),
        "config_digest": config_digest(cfg, args.seed),
        "seed": args.seed,
        "theta_star": res.theta_star,
        "theta": res.theta,
        "p_ratio": solver_config(cfg, args.seed).p_ratio,
        "converged": res.converged,
        "iterations": len(res.trace) - 1,
        "summary": summary,
        "files": ["model.json", "trace.csv"] + (["joint.json"] if joint is not None else []),
    }
    write_json(out / "manifest.json", manifest)
    print(f"theta*={res.theta_star:.6g} theta={res.theta:.6g} -> {out}")
    return EXIT_OK


def certify_exact(res: SolveResult, joint: JointModel, deltas, loss) -> dict:
    mj = induced_joint(res.Q, joint)
    pzg = mj.p_zg
    report = {
        "source": "joint",
        "error_H": bayes_error(mj.p_zh),
        "error_G": bayes_error(pzg),
        "epsilon_hat": posterior_ratio_extremes(pzg),
        "theta_star": res.theta_star,
        "theta": res.theta,
    }
    cond = conditionals(pzg)
    mary = joint.m > 2
    try:
        c = compute_c_prime(cond) if mary else compute_c(cond)
    except Exception as exc:  # support mismatch: no closed-form certificate
        report["certificate_error"] = str(exc)
        return report
    report["c_prime" if mary else "c"] = c
    if mary:
        rs = [min_risk_R(cond[:, [0, g]]) for g in range(1, joint.m)]
        risk = min(rs)
        report["pair_theta_stars"] = res.pair_theta_stars
        report["pair_min_risk_R"] = dict(zip(range(1, joint.m), rs))
    else:
        risk = min_risk_R(cond)
    report["min_risk_R"] = risk
    report["budget_exact"] = budget_exact(risk, c, mary).record()
    if np.isfinite(res.theta):
        report["budget_weak"] = [budget_weak(res.theta, d, loss, c, mary).record() for d in deltas]
    return report


def certify_samples(res: SolveResult, xs, gs, seed: int) -> dict:
    zs = res.Q.sample(xs, np.random.default_rng(seed))
    return {
        "source": "samples",
        "n_samples": int(len(gs)),
        "epsilon_hat": estimate_epsilon_hat(gs, zs),
        "theta_star": res.theta_star,
        "theta": res.theta,
    }


def run_certify(res: SolveResult, joint, cfg: dict, seed: int, samples=None) -> dict:
    opts = {**DEFAULT_CERTIFY, **(cfg.get("certify") or {})}
    if joint is not None:
        try:
            return certify_exact(res, joint, opts["deltas"], res.rcfg.loss)
        except SupportTooLarge:
            xs, _, gs = joint.sample(int(opts["n_samples"]), np.random.default_rng(seed))
            report = certify_samples(res, xs, gs, seed)
            report["note"] = "message support too large for exact evaluation"
            return report
    if samples is None:
        raise ConfigError("certify needs a joint model or a sample file")
    return certify_samples(res, samples[0], samples[1], seed)


def _read_samples(path):
    import pandas as pd

    frame = pd.read_csv(path)
    xcols = sorted((c for c in frame.columns if c.startswith("x")), key=lambda c: int(c[1:]))
    if not xcols or "g" not in frame.columns:
        raise ConfigError("sample file needs columns x1..xs and g")
    return frame[xcols].to_numpy(dtype=int), frame["g"].to_numpy(dtype=int)


def cmd_certify(args, cfg) -> int:
    model_path = Path(args.model or Path(args.out) / "model.json")
    if not model_path.exists():
        raise ConfigError(f"model artifact not found: {model_path}")
    res = artifact_to_result(json.loads(model_path.read_text()))
    joint = samples = None
    if args.samples:
        samples = _read_samples(args.samples)
    else:
        joint_path = Path(args.joint or model_path.parent / "joint.json")
        if not joint_path.exists():
            raise ConfigError(f"joint model not found: {joint_path}")
        joint = JointModel.from_dict(json.loads(joint_path.read_text()))
        if joint.s != res.Q.s or joint.x_card != res.Q.x_card:
            raise ConfigError("joint model and mapping disagree on sensors or alphabet")
    report = run_certify(res, joint, cfg, args.seed, samples)
    report.update(config_digest=config_digest(cfg, args.seed), seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "certificate.json", report)
    flat = {k: v for k, v in report.items() if not isinstance(v, (dict, list))}
    write_rows(out / "certificate.csv", sorted(flat), [flat])
    print(json.dumps(_jsonable(flat), sort_keys=True))
    return EXIT_OK


def _with_sweep_value(cfg: dict, param: str, value) -> dict:
    point = copy.deepcopy(cfg)
    if param == "p_ratio":
        point.setdefault("solver", {})["p_ratio"] = float(value)
    else:
        syn = point.setdefault("data", {}).setdefault("synthetic", {})
        syn[param] = int(value) if param == "m" else float(value)
    return point


def run_sweep(cfg: dict, seed: int, param: str, values) -> list[dict]:
    rows = []
    for value in values:
        point = _with_sweep_value(cfg, param, value)
        row = {"sweep_param": param, "sweep_value": value,
               "config_digest": config_digest(point, seed), "seed": seed}
        try:
            res, joint, _ = run_train(point, seed)
            rep = run_certify(res, joint, point, seed)
            row.update(status="ok", error_H=rep.get("error_H", float("nan")),
                       error_G=rep.get("error_G", float("nan")), epsilon=rep["epsilon_hat"],
                       theta_star=res.theta_star, theta=res.theta)
        except (BarrierViolation, InfeasibleProjection, InfeasibleCorrelation,
                SupportTooLarge, ValueError) as exc:
            log.warning("sweep point %s=%s failed: %s", param, value, exc)
            row.update(status=f"failed: {type(exc).__name__}")
        rows.append(row)
    return rows


def cmd_sweep(args, cfg) -> int:
    sweep = cfg.get("sweep") or {}
    param = sweep.get("param")
    if param not in SWEEP_PARAMS or not sweep.get("values"):
        raise ConfigError(f"sweep needs param in {SWEEP_PARAMS} and a list of values")
    rows = run_sweep(cfg, args.seed, param, sweep["values"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "sweep.csv", SWEEP_COLUMNS, rows)
    for r in rows:
        print(",".join(_fmt(r.get(c, "")) for c in SWEEP_COLUMNS[:6]))
    return EXIT_OK


def _split_rows(ts: TrainingSet):
    cols = [f"x{t + 1}" for t in range(ts.s)]
    return cols + ["h", "g"], [
        dict(zip(cols + ["h", "g"], list(map(int, x)) + [int(h), int(g)]))
        for x, h, g in zip(ts.xs, ts.hs, ts.gs)
    ]


def cmd_gen_data(args, cfg) -> int:
    spec = synthetic_spec(cfg, args.seed)
    if spec is None:
        raise ConfigError("gen-data needs a data.synthetic section")
    train, test, joint = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("test", test)):
        if part is not None:
            cols, rows = _split_rows(part)
            write_rows(out / f"{name}.csv", cols, rows)
    write_json(out / "joint.json", joint.to_dict())
    write_json(out / "manifest.json", {"spec": spec.to_dict(),
                                       "config_digest": config_digest(cfg, args.seed),
                                       "seed": args.seed})
    print(f"wrote {train.n} train / {0 if test is None else test.n} test rows -> {out}")
    return EXIT_OK


def selftest_checks(seed: int = 0, n_joints: int = 200):
    """Quick oracle consistency checks; yields ``(name, passed)``."""
    rng = np.random.default_rng(seed)
    violations = fano = 0
    for _ in range(n_joints):
        k = int(rng.integers(2, 9))
        pzg = rng.dirichlet(np.ones(2 * k)).reshape(k, 2)
        cond = conditionals(pzg)
        eps = posterior_ratio_extremes(pzg)
        bound = budget_exact(min_risk_R(cond), compute_c(cond)).epsilon
        violations += eps > bound * (1 + 1e-9) + 1e-12
        pg = pzg.sum(axis=0)
        if eps <= -np.sum(pg * np.log(pg)):
            fano += min_risk_R(cond) < fano_risk_bound(eps, pg) - 1e-9
    yield "budget dominates posterior ratio", violations == 0
    yield "risk dominates entropy bound", fano == 0
    for d in (10, 100):
        j = table1_joint(0.2, d)
        ok = abs(bayes_error(j) - 0.2) < 1e-12
        ratio = j[0, 0] / j[0].sum() / j[:, 0].sum()
        ok &= abs(ratio - 1 / (0.2 + 0.6 * d)) < 1e-12
        yield f"two-message example d={d}", bool(ok)
    yield "uniform budget at theta=1/2", budget_exact(0.5, 0.3).epsilon == 0.0


def cmd_selftest(args, cfg) -> int:
    failed = 0
    for name, ok in selftest_checks(args.seed):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        failed += not ok
    return EXIT_OK if failed == 0 else 1


# ----------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infopriv", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out")
        p.add_argument("--mode", choices=("expected", "sampled"), default="expected")
        return p

    common(sub.add_parser("train", help="fit mappings and fusion rule"))
    cert = common(sub.add_parser("certify", help="privacy and error report"), False)
    cert.add_argument("--model", help="model.json (default: <out>/model.json)")
    cert.add_argument("--joint", help="joint.json next to the model by default")
    cert.add_argument("--samples", help="CSV with x1..xs and g for plug-in estimation")
    common(sub.add_parser("sweep", help="train and certify over a parameter grid"))
    common(sub.add_parser("gen-data", help="write a synthetic data set"))
    common(sub.add_parser("oracle-selftest", help="oracle consistency checks"), False)
    return parser


COMMANDS = {
    "train": cmd_train,
    "certify": cmd_certify,
    "sweep": cmd_sweep,
    "gen-data": cmd_gen_data,
    "oracle-selftest": cmd_selftest,
}


def _run(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    return COMMANDS[args.command](args, cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("INFOPRIV_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(int(threads)):
                return _run(args)
        return _run(args)
    except SupportTooLarge as exc:  # a ValueError subclass, so checked first
        print(f"support too large: {exc}", file=sys.stderr)
        return EXIT_SUPPORT
    except (BarrierViolation, InfeasibleProjection) as exc:
        print(f"solver infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
