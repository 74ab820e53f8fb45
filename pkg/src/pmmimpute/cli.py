"""Command line front end.

    pmmimpute run      --config run.toml [--seed N] [--threads N] [--out DIR]
    pmmimpute impute   --config run.toml [--seed N] [--out DIR]
    pmmimpute simulate --config sim.toml --seed N --out trial.csv
    pmmimpute diagnose draws.csv

Progress goes to stderr; results go to files (``diagnose`` prints to stdout).
"""
from __future__ import annotations

import argparse
import csv
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analyze import fit_mle_em, resolve_methods, run_pipeline
from .config import ConfigError, load_run_config, load_sim_spec
from .data import DataFormatError, load_csv, simulate_trial, write_csv
from .impute import build_replicates
from .params import param_names
from .sampler import SamplerError, diagnostics, run_chain

log = logging.getLogger("pmmimpute")

EXIT_USAGE = 2
EXIT_FAILURE = 1


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "inf" if v == np.inf else repr(v)


def _write_rows(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _progress(it: int, total: int) -> None:
    log.info("iteration %d/%d", it, total)


def _load(args):
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.mcmc.seed = args.seed
    if args.out is not None:
        cfg.out = Path(args.out)
    if not cfg.data.is_file():
        raise FileNotFoundError(f"data file not found: {cfg.data}")
    ds = load_csv(cfg.data, cfg.p, cfg.d)
    prior = cfg.build_prior(ds.p_visits, ds.q)
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg, ds, prior


def _write_draws(path: Path, draws, p: int, d: int) -> None:
    names = param_names(p, d)
    _write_rows(path, ["iteration"] + names,
                ([dr.iteration] + list(dr.params.flat()) for dr in draws))


def _write_diagnostics(path: Path, draws, p: int, d: int) -> None:
    if len(draws) < 10:
        log.warning("fewer than 10 draws; diagnostics skipped")
        return
    summ = diagnostics(draws, param_names(p, d))
    _write_rows(path, ["parameter", "mean", "sd", "lag1", "mcse"],
                ([n, m, s, "NA" if np.isnan(a) else a, e] for n, m, s, a, e in
                 zip(summ.names, summ.mean, summ.sd, summ.lag1, summ.mcse)))


def cmd_run(args) -> int:
    cfg, ds, prior = _load(args)
    log.info("n=%d p=%d d=%d, %s sampler, m=%d", ds.n_subjects, ds.p_visits,
             ds.d_covariates, cfg.mcmc.algorithm, cfg.mcmc.n_draws)
    res = run_pipeline(ds, prior, cfg.mcmc, cfg.methods, level=cfg.level,
                       threads=args.threads, progress=_progress)
    header = ["method", "visit", "estimate", "se", "df", "ci_low", "ci_high", "W", "B", "m"]
    _write_rows(cfg.out / "results.csv", header,
                ([r[k] for k in header] for r in res.rows()))
    if res.mle is not None:
        _write_rows(cfg.out / "mle.csv", ["visit", "estimate", "se"],
                    ([j + 1, e, s] for j, (e, s) in enumerate(zip(res.mle.delta, res.mle.se_delta))))
    if cfg.emit.get("draws"):
        _write_draws(cfg.out / "draws.csv", res.draws, ds.p_visits, ds.d_covariates)
    if cfg.emit.get("diagnostics"):
        _write_diagnostics(cfg.out / "diagnostics.csv", res.draws, ds.p_visits, ds.d_covariates)
    if cfg.emit.get("replicates"):
        _emit_replicates(cfg, ds, res.draws, res.methods)
    log.info("wrote %s", cfg.out / "results.csv")
    return 0


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", label).strip("_")


def _emit_replicates(cfg, ds, draws, methods) -> None:
    from .data import index_patterns

    rep_dir = cfg.out / "replicates"
    rep_dir.mkdir(exist_ok=True)
    width = max(4, len(str(len(draws))))
    for rep in build_replicates(ds, index_patterns(ds), draws, methods, cfg.mcmc.seed):
        name = f"{_slug(rep.method)}_{rep.replicate + 1:0{width}d}.csv"
        write_csv(ds.with_outcomes(rep.outcomes), rep_dir / name)


def cmd_impute(args) -> int:
    cfg, ds, prior = _load(args)
    mle = fit_mle_em(ds) if any(m.tag == "MCR" and m.mcr_flags is None for m in cfg.methods) else None
    methods = resolve_methods(cfg.methods, mle)
    draws = run_chain(ds, prior, cfg.mcmc, progress=_progress)
    _emit_replicates(cfg, ds, draws, methods)
    if cfg.emit.get("draws"):
        _write_draws(cfg.out / "draws.csv", draws, ds.p_visits, ds.d_covariates)
    log.info("wrote %d replicate files to %s", len(draws) * len(methods), cfg.out / "replicates")
    return 0


def cmd_simulate(args) -> int:
    spec, seed = load_sim_spec(args.config)
    seed = args.seed if args.seed is not None else seed
    if seed is None:
        raise ConfigError("simulate needs --seed or a 'seed' entry in the spec")
    out = Path(args.out) if args.out else Path("trial.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = simulate_trial(spec, seed)
    write_csv(ds, out)
    log.info("wrote %d subjects to %s", ds.n_subjects, out)
    return 0


def read_draws(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"draws file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if header and header[0] == "iteration":
        return header[1:], arr[:, 1:]
    return header, arr


def cmd_diagnose(args) -> int:
    names, arr = read_draws(args.draws)
    summ = diagnostics(arr, names)
    width = max(len(n) for n in names)
    print(f"{'parameter':<{width}}  {'mean':>12} {'sd':>12} {'lag1':>8} {'mcse':>12}")
    for n, m, s, a, e in zip(summ.names, summ.mean, summ.sd, summ.lag1, summ.mcse):
        lag = "n/a" if np.isnan(a) else f"{a:8.4f}"
        print(f"{n:<{width}}  {m:12.5g} {s:12.5g} {lag:>8} {e:12.3g}")
    print(f"({summ.n} draws)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmmimpute", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    quiet = argparse.ArgumentParser(add_help=False)
    quiet.add_argument("-q", "--quiet", action="store_true", help="suppress progress lines")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory (overrides config)"):
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for imputation")
        p.add_argument("--out", default=None, help=out_help)

    common(sub.add_parser("run", parents=[quiet], help="sample, impute, analyze and pool"))
    common(sub.add_parser("impute", parents=[quiet], help="sample and write imputed datasets"))
    common(sub.add_parser("simulate", parents=[quiet], help="generate a synthetic trial CSV"),
           "output CSV path")
    diag = sub.add_parser("diagnose", parents=[quiet], help="summarize a draws.csv dump")
    diag.add_argument("draws", help="draws CSV written by 'run' or 'impute'")
    return parser


COMMANDS = {"run": cmd_run, "impute": cmd_impute, "simulate": cmd_simulate,
            "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        print("pmmimpute: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ConfigError, DataFormatError) as exc:
        print(f"pmmimpute: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SamplerError, ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"pmmimpute: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
