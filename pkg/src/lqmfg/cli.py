"""Command-line harness: config loading, subcommand dispatch, experiment
persistence. All randomness flows from the single --seed value recorded in
the run manifest; re-running a command with the same config and seed
reproduces every CSV byte for byte."""

import argparse
import csv
import datetime
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__, evalne, mfgloop, oracle
from .errors import AssumptionError, ValidationError
from .learner import LearnerConfig, critic_gtd
from .model import GameSpec, MeanFieldLaw, validate_spec
from .sim import rollout_generic

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


@dataclass
class RunManifest:
    """Everything needed to reproduce a run (plus bookkeeping that isn't)."""

    command: str
    config: dict
    seed: int
    mode: str | None
    out_dir: str
    artifacts: list = field(default_factory=list)
    tool_version: str = __version__
    created: str = ""
    wall_clock: float | None = None

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract here is exit 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_VALIDATION)


def _fmt(x):
    """Shortest round-trip decimal form; keeps CSVs byte-stable."""
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}")
    spec = GameSpec.from_config(cfg)
    return spec, cfg


def _learner_config(cfg, seed_unused=None):
    loop = cfg.get("loop", {})
    fields = {}
    for name in ("T_critic", "S_inner", "eta", "step_primal", "step_dual", "step_power",
                 "rho_theta", "sigma_explore", "lstd_ridge", "safeguard_limit"):
        if name in loop:
            fields[name] = loop[name]
    return LearnerConfig(**fields)


def _loop_config(cfg, seed, mode):
    loop = cfg.get("loop", {})
    return mfgloop.LoopConfig(
        R=int(loop.get("R", 5)),
        learner=_learner_config(cfg),
        F_init=np.asarray(loop["F_init"], dtype=float) if "F_init" in loop else None,
        K_init=np.asarray(loop["K_init"], dtype=float) if "K_init" in loop else None,
        seed=seed,
        mode=mode,
        T_growth=float(loop.get("T_growth", 1.0)),
        damping=float(loop.get("damping", 0.0)),
    )


def _ensure_out(out):
    os.makedirs(out, exist_ok=True)
    return out


def _manifest(args, cfg, command):
    return RunManifest(
        command=command,
        config=cfg,
        seed=args.seed,
        mode=getattr(args, "mode", None),
        out_dir=getattr(args, "out", "") or "",
        created=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )


def cmd_validate(args):
    spec, _ = load_config(args.config)
    report = validate_spec(spec)
    for name, passed in report.checks.items():
        print(f"{name}: {'pass' if passed else 'FAIL'}")
    for w in report.warnings:
        print(f"warning: {w}")
    if report.ok:
        rd = oracle.solve_dare(spec)
        print(f"T_P = {rd.T_P:.4f}")
        print(f"Assumption 1: {'satisfied' if rd.assumption1_ok else 'violated'}")
    print(f"overall: {'pass' if report.ok else 'FAIL'}")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_oracle(args):
    spec, cfg = load_config(args.config)
    report = validate_spec(spec)
    if not report.ok:
        print(f"spec validation failed: {report.failed()}", file=sys.stderr)
        return EXIT_VALIDATION
    rd = oracle.solve_dare(spec)
    mfe = oracle.fixed_point_mf(rd, spec)
    mf = MeanFieldLaw(F=mfe.F_star, nu0=spec.nu0)
    J = oracle.exact_cost(mfe.K_star, mf, spec)
    print(f"P =\n{rd.P}")
    print(f"G_P =\n{rd.G_P}")
    print(f"H_P =\n{rd.H_P}")
    print(f"T_P = {rd.T_P:.6f}  (assumption 1 {'satisfied' if rd.assumption1_ok else 'violated'})")
    print(f"F* =\n{mfe.F_star}")
    print(f"K* =\n{mfe.K_star.K}")
    print(f"K1 + K2 =\n{mfe.K_star.K1 + mfe.K_star.K2}")
    print(f"J(K*, F*) = {J:.6f}")
    print(f"fixed-point residual = {mfe.residual:.3e} in {mfe.iterations} iterations")
    if args.out:
        out = _ensure_out(args.out)
        payload = {
            "P": rd.P.tolist(),
            "G_P": rd.G_P.tolist(),
            "H_P": rd.H_P.tolist(),
            "T_P": rd.T_P,
            "assumption1_ok": rd.assumption1_ok,
            "F_star": mfe.F_star.tolist(),
            "K_star": mfe.K_star.K.tolist(),
            "J_star": J,
            "residual": mfe.residual,
            "iterations": mfe.iterations,
        }
        path = os.path.join(out, "oracle.json")
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        man = _manifest(args, cfg, "oracle")
        man.artifacts = [path]
        man.write(os.path.join(out, "manifest.json"))
    return EXIT_OK


def cmd_train(args):
    spec, cfg = load_config(args.config)
    report = validate_spec(spec)
    if not report.ok:
        print(f"spec validation failed: {report.failed()}", file=sys.stderr)
        return EXIT_VALIDATION
    lcfg = _loop_config(cfg, args.seed, args.mode)
    result = mfgloop.run_algorithm1(spec, lcfg)

    out = _ensure_out(args.out or "run")
    m = spec.m
    f_cols = [f"F{i}{j}" for i in range(m) for j in range(m)]
    rows = []
    for r, F in enumerate(result.F_rounds, start=1):
        err = result.F_errors[r - 1] if result.F_errors is not None else math.nan
        gap = result.cost_gaps[r - 1] if result.cost_gaps is not None else math.nan
        rows.append([r] + [_fmt(v) for v in np.asarray(F).ravel()] + [_fmt(err), _fmt(gap)])
    rounds_csv = os.path.join(out, "rounds.csv")
    _write_csv(rounds_csv, ["r"] + f_cols + ["F_error_if_oracle", "inner_cost_gap"], rows)

    learner_csv = os.path.join(out, "learner.csv")
    lrows = []
    for diag in result.inner_diagnostics:
        for row in diag:
            lrows.append(
                [row.get("r", ""), row["s"], _fmt(row["est_cost"]), _fmt(row["theta_norm"]),
                 _fmt(row["grad_norm"]), row["safeguard"]]
            )
    _write_csv(learner_csv, ["r", "s", "est_cost", "theta_norm", "grad_norm", "safeguard_flag"], lrows)

    report_json = os.path.join(out, "report.json")
    payload = {
        "mode": result.mode,
        "final_F": np.asarray(result.final_F).tolist(),
        "final_K": result.final_K.K.tolist(),
        "F_rounds": [np.asarray(F).tolist() for F in result.F_rounds],
        "F_errors": result.F_errors,
        "cost_gaps": result.cost_gaps,
        "in_contraction_ball": result.in_ball,
    }
    with open(report_json, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    man = _manifest(args, cfg, "train")
    man.artifacts = [rounds_csv, learner_csv, report_json]
    man.wall_clock = result.wall_clock
    man.write(os.path.join(out, "manifest.json"))
    if result.F_errors is not None:
        print(f"final ||F - F*|| = {result.F_errors[-1]:.3e}")
    print(f"wrote {rounds_csv}")
    return EXIT_OK


def _policy_from_args(args, spec, rd):
    if args.report:
        with open(args.report) as fh:
            rep = json.load(fh)
        K = np.asarray(rep["final_K"], dtype=float)
        F = np.asarray(rep["final_F"], dtype=float)
        return evalne.deploy(K, F, spec.nu0)
    mfe = oracle.fixed_point_mf(rd, spec)
    return evalne.deploy(mfe.K_star, mfe.F_star, spec.nu0)


def _gap_rows(rows):
    def key(row):
        return (0 if row.R is None else 1, row.R if row.R is not None else 0, row.N)

    out = []
    for row in sorted(rows, key=key):
        out.append(
            [row.N, "" if row.R is None else row.R, _fmt(row.deployed), _fmt(row.deployed_se),
             _fmt(row.best_response), _fmt(row.best_response_se), _fmt(row.gap)]
        )
    return out


GAP_HEADER = ["N", "R", "deployed", "deployed_se", "bestresp", "bestresp_se", "gap"]


def cmd_eval_ne(args):
    spec, cfg = load_config(args.config)
    rd = oracle.solve_dare(spec)
    dp = _policy_from_args(args, spec, rd)
    ev = cfg.get("eval", {})
    est = evalne.gap_estimate(
        dp, args.N, spec, rd,
        horizon=int(ev.get("horizon", evalne.DEFAULT_HORIZON)),
        reps=int(ev.get("reps", evalne.DEFAULT_REPS)),
        seed=args.seed,
    )
    print(f"N={est.N}: deployed {est.deployed:.6f} (se {est.deployed_se:.2e}), "
          f"best-response {est.best_response:.6f} (se {est.best_response_se:.2e}), gap {est.gap:.3e}")
    if args.out:
        out = _ensure_out(args.out)
        path = os.path.join(out, "ne_gap.csv")
        _write_csv(path, GAP_HEADER, _gap_rows([est]))
        man = _manifest(args, cfg, "eval-ne")
        man.artifacts = [path]
        man.write(os.path.join(out, "manifest.json"))
    return EXIT_OK


def cmd_sweep(args):
    spec, cfg = load_config(args.config)
    rd = oracle.solve_dare(spec)
    dp = _policy_from_args(args, spec, rd)
    ev = cfg.get("eval", {})
    N_list = [int(n) for n in ev.get("N_list", [4, 16, 64, 256])]
    R_list = [None if r is None else int(r) for r in ev.get("R_list", [None])]
    result = evalne.sweep(
        spec, dp, N_list, R_list,
        reps=int(ev.get("reps", evalne.DEFAULT_REPS)),
        seed=args.seed,
        horizon=int(ev.get("horizon", evalne.DEFAULT_HORIZON)),
        rd=rd,
    )
    slope = "omitted" if result.slope_n is None else f"{result.slope_n:.3f}"
    decay = "omitted" if result.decay_r is None else f"{result.decay_r:.3f}"
    print(f"gap-vs-N log-log slope: {slope}; gap-vs-R decay ratio: {decay}")
    if args.out:
        out = _ensure_out(args.out)
        path = os.path.join(out, "sweep.csv")
        _write_csv(path, GAP_HEADER, _gap_rows(result.rows))
        man = _manifest(args, cfg, "sweep")
        man.artifacts = [path]
        man.write(os.path.join(out, "manifest.json"))
    return EXIT_OK


def cmd_critic_bench(args):
    spec, cfg = load_config(args.config)
    rd = oracle.solve_dare(spec)
    mfe = oracle.fixed_point_mf(rd, spec)
    mf = MeanFieldLaw(F=mfe.F_star, nu0=spec.nu0)
    bench = cfg.get("bench", {})
    T_list = [int(t) for t in bench.get("T_list", [5_000, 50_000, 500_000])]
    n_seeds = int(bench.get("seeds", 10))
    K = np.asarray(bench["K"], dtype=float) if "K" in bench else np.zeros((spec.p, 2 * spec.m))
    lcfg = _learner_config(cfg)
    target = oracle.true_theta(K, mf, spec)
    tnorm2 = float(target.theta @ target.theta)
    sigma = spec.sigma if lcfg.sigma_explore is None else lcfg.sigma_explore

    rows = []
    for T in sorted(T_list):
        for s in range(n_seeds):
            seed = int(np.random.SeedSequence((args.seed, 509, T, s)).generate_state(1)[0])
            traj = rollout_generic(K, mf, spec, T, seed=seed, sigma=sigma)
            est = critic_gtd(traj, lcfg)
            err2 = float(np.sum((est.theta - target.theta) ** 2))
            rows.append([T, s, _fmt(err2), _fmt(err2 / tnorm2)])
        med = np.median([float(r[2]) for r in rows if r[0] == T])
        print(f"T={T}: median ||theta_hat - theta||^2 = {med:.5f} (rel_sq {med / tnorm2:.4f})")
    if args.out:
        out = _ensure_out(args.out)
        path = os.path.join(out, "critic_bench.csv")
        _write_csv(path, ["T", "seed", "err_sq", "rel_err_sq"], rows)
        man = _manifest(args, cfg, "critic-bench")
        man.artifacts = [path]
        man.write(os.path.join(out, "manifest.json"))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="lqmfg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, mode_flag=False):
        sp.add_argument("--config", required=True, help="JSON config with the game matrices")
        sp.add_argument("--seed", type=int, default=0, help="master seed")
        sp.add_argument("--out", default="", help="output directory for CSVs and the manifest")
        if mode_flag:
            sp.add_argument("--mode", choices=mfgloop.MODES, default="model-free")

    common(sub.add_parser("validate", help="model checks plus the contraction-assumption report"))
    common(sub.add_parser("oracle", help="equilibrium mean field, gains, and exact cost"))
    common(sub.add_parser("train", help="run the alternating learning loop"), mode_flag=True)

    sp = sub.add_parser("eval-ne", help="epsilon-Nash gap at one population size")
    common(sp)
    sp.add_argument("--N", type=int, default=64, help="population size")
    sp.add_argument("--report", default="", help="train report.json to deploy (default: exact equilibrium)")

    sp = sub.add_parser("sweep", help="gap table over population sizes and round counts")
    common(sp)
    sp.add_argument("--report", default="", help="train report.json to deploy (default: exact equilibrium)")

    common(sub.add_parser("critic-bench", help="critic error against the exact target across budgets"))
    return parser


_HANDLERS = {
    "validate": cmd_validate,
    "oracle": cmd_oracle,
    "train": cmd_train,
    "eval-ne": cmd_eval_ne,
    "sweep": cmd_sweep,
    "critic-bench": cmd_critic_bench,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except (ValidationError, AssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # numerical failures: divergence, non-convergence
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
