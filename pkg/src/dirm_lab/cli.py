"""Command-line entry point.

Subcommands: ``simulate``, ``train``, ``experiment <name>``, ``check-grad``
and ``version``.  Exit status is 0 on success, 1 on usage or configuration
errors and 2 when training hits a non-finite loss.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from . import __version__
from .config import DEFAULTS_PATH, RunConfig, load_config, serialize
from .diffkernel import fd_battery, init_model, save_model
from .errors import DirmLabError, NonFiniteLoss
from .experiments.common import env_seed
from .scm import dump_scm_toml, sample, write_env_csv

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
SEED_ENV = "DIRM_LAB_SEED"
GRAD_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seeds(text: str) -> tuple[int, ...]:
    """``"10"`` means seeds 0..9; ``"3,5,8"`` is an explicit list."""
    try:
        if "," in text:
            return tuple(int(v) for v in text.split(",") if v.strip())
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a count or a comma-separated list, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("seed count must be >= 1")
    return tuple(range(n))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration (see defaults.toml)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seeds", type=_seeds, help="seed count n (0..n-1) or comma-separated list")
    common.add_argument("--threads", type=int, default=1, help="concurrent grid cells")

    parser = _Parser(prog="dirm-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="sample the configured environments to CSV")
    sub.add_parser("train", parents=[common], help="train one model on the configured environments")
    exp = sub.add_parser("experiment", parents=[common], help="run a preset experiment")
    exp.add_argument("name", choices=("fig1", "stability", "coeffs", "theorem1", "features"))
    exp.add_argument("--svg", action="store_true", help="also write SVG line plots")
    exp.add_argument("--lambda", dest="lambdas", type=_floats, help="penalty weight grid, e.g. 0,1,1e4")
    exp.add_argument("--eta", dest="etas", type=_floats, help="affine extrapolation grid (theorem1)")
    group = exp.add_mutually_exclusive_group()
    group.add_argument("--confounded", dest="confounded", action="store_true", default=None)
    group.add_argument("--unconfounded", dest="confounded", action="store_false")
    grad = sub.add_parser("check-grad", parents=[common], help="finite-difference gradient battery")
    grad.add_argument("--cases", type=int, default=100, help="random cases per architecture and link")
    sub.add_parser("version", help="print the package version")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config is not None else load_config(DEFAULTS_PATH)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out=args.out)
    if args.seeds is not None:
        cfg = dataclasses.replace(cfg, seeds=args.seeds, train=dataclasses.replace(cfg.train, seed=args.seeds[0]))
    override = os.environ.get(SEED_ENV)
    if override is not None:
        try:
            cfg = cfg.with_seed(int(override))
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {override!r}") from None
    return cfg


def _environments(cfg: RunConfig, base: Path | None):
    spec = cfg.scm.load(base)
    seed = cfg.seeds[0]
    return spec, [sample(spec, e.intervention, e.n, env_seed(seed, k), env_id=e.id) for k, e in enumerate(cfg.environments)]


def cmd_simulate(cfg: RunConfig, args, out=sys.stdout) -> int:
    base = args.config.parent if args.config else None
    spec, envs = _environments(cfg, base)
    target = Path(cfg.out)
    target.mkdir(parents=True, exist_ok=True)
    (target / "scm.toml").write_text(dump_scm_toml(spec))
    for env in envs:
        path = write_env_csv(env, target / f"{_safe(env.env_id)}.csv")
        print(f"wrote {path} ({env.n} rows)", file=out)
    return EXIT_OK


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.=" else "_" for c in name)


def cmd_train(cfg: RunConfig, args, out=sys.stdout) -> int:
    from .trainer import effective_coefficients, train

    base = args.config.parent if args.config else None
    _, envs = _environments(cfg, base)
    m = cfg.model
    init = init_model(envs[0].x.shape[1], m.hidden, m.link, cfg.train.seed, m.head_bias)
    model, trace = train(init, envs, cfg.objective, cfg.train)
    target = Path(cfg.out)
    target.mkdir(parents=True, exist_ok=True)
    trace.to_csv(target / "trace.csv")
    save_model(model, target / "model.json")
    (target / "config.toml").write_text(serialize(cfg))
    print(f"epochs run: {len(trace)}; final env losses: {[round(float(v), 6) for v in trace.losses[-1]]}", file=out)
    if not m.hidden:
        coef = effective_coefficients(model)
        print("effective coefficients: " + ", ".join(f"{f}={c:.6g}" for f, c in zip(envs[0].feature_names, coef)),
              file=out)
    print(f"wrote {target}", file=out)
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, args, out=sys.stdout) -> int:
    from .experiments import features, synthetic, theorem1

    ex = cfg.experiment
    lambdas = args.lambdas if args.lambdas is not None else ex.lambdas
    etas = args.etas if args.etas is not None else ex.etas
    seeds = cfg.seeds
    threads = args.threads
    name = args.name
    if name == "fig1":
        kw = {} if lambdas is None else {"lambdas": lambdas}
        report = synthetic.run_fig1(ex.scenario, ex.shift_axis, ex.magnitudes, seeds=seeds, threads=threads, **kw)
    elif name == "stability":
        kw = {} if lambdas is None else {"lam": max(lambdas)}
        report = synthetic.run_stability(ex.target, ex.max_shift, seeds=seeds, threads=threads, **kw)
    elif name == "coeffs":
        confounded = ex.confounded if args.confounded is None else args.confounded
        kw = {} if lambdas is None else {"lam": max(lambdas)}
        report = synthetic.run_coeff_tables(confounded, seeds=seeds, threads=threads, **kw)
    elif name == "theorem1":
        kw = {} if etas is None else {"eta_grid": etas}
        report = theorem1.run_theorem1_check(ex.n_envs, trials=ex.trials, seed=seeds[0], **kw)
    else:
        kw = {} if lambdas is None else {"lambda_grid": lambdas}
        report = features.run_feature_stability(ex.n_studies, ex.pairs, top_k=ex.top_k, seeds=seeds,
                                                threads=threads, **kw)
    target = report.write(cfg.out, svg=args.svg)
    print(f"wrote {target} ({len(report.rows)} rows)", file=out)
    if name == "theorem1" and not theorem1.all_ok(report):
        print("affine_sup disagrees with the vertex oracle in at least one trial", file=out)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_check_grad(args, out=sys.stdout) -> int:
    rows = fd_battery(cases=args.cases)
    worst: dict = {}
    for n_hidden, link, _, _, beta_err, phi_err in rows:
        b, p = worst.get((n_hidden, link), (0.0, 0.0))
        worst[(n_hidden, link)] = (max(b, beta_err), max(p, phi_err))
    ok = True
    for (n_hidden, link), (b, p) in sorted(worst.items()):
        ok &= b < GRAD_TOL and p < GRAD_TOL
        print(f"hidden={n_hidden} link={link:<8} max_rel_err beta={b:.3e} phi_penalty={p:.3e}", file=out)
    print("all below 1e-4" if ok else "FAILED: tolerance 1e-4 exceeded", file=out)
    return EXIT_OK if ok else EXIT_NUMERIC


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "version":
            print(__version__, file=out)
            return EXIT_OK
        if args.command == "check-grad":
            return cmd_check_grad(args, out)
        cfg = resolve_config(args)
        handler = {"simulate": cmd_simulate, "train": cmd_train, "experiment": cmd_experiment}[args.command]
        return handler(cfg, args, out)
    except UsageError as exc:
        print(exc, file=err)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"numerical failure: {exc}", file=err)
        return EXIT_NUMERIC
    except DirmLabError as exc:
        print(f"configuration error: {exc}", file=err)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
