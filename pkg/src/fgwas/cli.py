"""Batch command-line interface: simulate, fit, select, refit, sweep, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, read_config
from .inference import (
    EmptySelectionError,
    bic_degree_sweep,
    coefficient_band,
    refit,
    select_snps,
)
from .model import Hyperparameters
from .sampler.chains import SamplerConfig, run_chains
from .simgen import SimDesign, simulate

log = logging.getLogger("fgwas")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 3


def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="directory with phenotypes.csv, genotypes.csv, covariates.csv")
    g.add_argument("--phenotypes", help="long-format CSV subject_id,time,value")
    g.add_argument("--genotypes", help="CSV subject_id,<snp>... with calls 0/1/2/NA")
    g.add_argument("--covariates", help="CSV subject_id,<name>...")
    g.add_argument("--time-range", help="raw time range lo,hi used for standardization")
    g.add_argument("--degree", type=int, default=3, help="Legendre polynomial degree (default 3)")


def _add_sampler_args(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--chains", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=None,
                   help="chains run in parallel (default: FGWAS_THREADS or 1)")
    g.add_argument("--burn-in", type=int, default=500, help="minimum burn-in sweeps")
    g.add_argument("--max-burn-in", type=int, default=20000)
    g.add_argument("--iters", type=int, default=4000, help="sweeps recorded after convergence")
    g.add_argument("--thin", type=int, default=1)
    g.add_argument("--rho-step", type=float, default=0.05)
    g.add_argument("--psrf-threshold", type=float, default=1.1)
    g.add_argument("--check-every", type=int, default=100)
    g.add_argument("--monitor-top", type=int, default=50)
    h = p.add_argument_group("priors")
    h.add_argument("--prior-var", type=float, default=1e4, help="prior variance of m and r_k coefficients")
    h.add_argument("--a", type=float, default=0.01)
    h.add_argument("--b", type=float, default=0.01)
    h.add_argument("--a-star", type=float, default=0.01)
    h.add_argument("--b-star", type=float, default=0.01)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="fgwas", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--p", type=int, default=500)
    p.add_argument("--sigma2", type=float, default=4.0)
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--rho-g", type=float, default=0.1)
    p.add_argument("--maf", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--degree", type=int, default=3)
    subs["simulate"] = p

    p = sub.add_parser("fit", help="run the penalized sampler")
    _add_data_args(p)
    _add_sampler_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--draws", action="store_true", help="also write every recorded draw as JSON lines")
    subs["fit"] = p

    p = sub.add_parser("select", help="credible-interval selection from a fit")
    p.add_argument("--fit", required=True, help="output directory of `fit`")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", help="defaults to the fit directory")
    subs["select"] = p

    p = sub.add_parser("refit", help="unpenalized rerun on the selected SNP blocks")
    _add_data_args(p)
    _add_sampler_args(p)
    p.add_argument("--selection", required=True, help="selection.csv written by `select`")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True)
    subs["refit"] = p

    p = sub.add_parser("sweep", help="BIC over polynomial degrees")
    _add_data_args(p)
    _add_sampler_args(p)
    p.add_argument("--degrees", default="0,1,2,3,4")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True)
    subs["sweep"] = p

    p = sub.add_parser("report", help="effect bands of refit SNPs")
    p.add_argument("--refit", required=True, help="output directory of `refit`")
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--out", help="defaults to the refit directory")
    subs["report"] = p

    for p in subs.values():
        p.add_argument("--config", help="flat key = value file; flags override it")
    return parser, subs


def parse_args(argv=None) -> argparse.Namespace:
    """Parse with precedence flags > config file > built-in defaults."""
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sp = subs[args.command]
        actions = {a.dest: a for a in sp._actions}
        values = read_config(args.config)
        unknown = sorted(set(values) - set(actions) - {"config"})
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys for `{args.command}`: {', '.join(unknown)}")
        defaults = {}
        for key, text in values.items():
            if isinstance(actions[key], argparse._StoreTrueAction):
                defaults[key] = text.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = text
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(
        n_chains=args.chains, burn_in=args.burn_in, post_convergence_iters=args.iters, thin=args.thin,
        seed=args.seed, rho_step=args.rho_step, psrf_threshold=args.psrf_threshold,
        max_burn_in=args.max_burn_in, check_every=args.check_every, monitor_top=args.monitor_top,
        threads=args.threads,
    )


def _hyper(args, v: int) -> Hyperparameters:
    S = args.prior_var * np.eye(v)
    return Hyperparameters(S, S.copy(), a=args.a, b=args.b, a_star=args.a_star, b_star=args.b_star)


def _load(args, order: int):
    tr = None
    if args.time_range:
        lo, hi = (float(x) for x in args.time_range.split(","))
        tr = (lo, hi)
    if args.data:
        meta = io.read_meta(args.data)
        if tr is None and "time_range" in meta:
            tr = tuple(meta["time_range"])
        d = Path(args.data)
        cov = d / "covariates.csv"
        return io.load_dataset(d / "phenotypes.csv", d / "genotypes.csv", cov if cov.exists() else None,
                               basis_order=order, time_range=tr)
    if not (args.phenotypes and args.genotypes):
        raise ValueError("give --data or both --phenotypes and --genotypes")
    return io.load_dataset(args.phenotypes, args.genotypes, args.covariates, basis_order=order, time_range=tr)


def _config_record(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}


def cmd_simulate(args) -> int:
    design = SimDesign(n=args.n, p=args.p, v=args.degree + 1, rho_G=args.rho_g, maf=args.maf,
                       sigma2=args.sigma2, rho=args.rho, seed=args.seed)
    ds = simulate(design)
    io.save_dataset(ds, args.out)
    truth = {ds.genotypes.snp_names[j]: {"additive": None if b is None else list(map(float, b)),
                                         "dominant": None if c is None else list(map(float, c))}
             for j, (b, c) in design.truth.items()}
    io.write_meta(args.out, ds, design=_config_record(args), truth=truth)
    log.info("wrote %d subjects, %d SNPs to %s", ds.n, ds.p, args.out)
    return EXIT_OK


def _write_diagnostics(chains, out: Path, stem: str) -> Path:
    path = io.write_psrf_report(chains.psrf, out / f"{stem}psrf.csv")
    if not chains.converged:
        log.error("chains did not converge; failing scalars: %s (see %s)",
                  ", ".join(chains.psrf.failing()[:10]), path)
    return path


def cmd_fit(args) -> int:
    ds = _load(args, args.degree + 1)
    for w in ds.validate():
        log.warning(w)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chains = run_chains(ds, _hyper(args, ds.v), _sampler_config(args))
    io.save_chains(chains, out / "chains.npz")
    io.write_summary(chains, out / "summary.csv", ds.covariate_names)
    if args.draws:
        io.write_draws_jsonl(chains, out / "draws.jsonl")
    _write_diagnostics(chains, out, "")
    io.write_meta(out, ds, converged=chains.converged, burn_in_iters=chains.burn_in_iters,
                  config=_config_record(args))
    return EXIT_OK if chains.converged else EXIT_NOT_CONVERGED


def cmd_select(args) -> int:
    fit_dir = Path(args.fit)
    chains = io.load_chains(fit_dir / "chains.npz")
    report = select_snps(chains, args.level)
    out = Path(args.out) if args.out else fit_dir
    out.mkdir(parents=True, exist_ok=True)
    io.write_selection(report, out / "selection.csv")
    meta = io.read_meta(fit_dir)
    meta.update(level=args.level, selected=report.selected_set)
    (out / io.META_NAME).write_text(json.dumps(meta, indent=2) + "\n")
    log.info("selected %d SNPs: %s", len(report.selected_set), ", ".join(report.selected_set))
    return EXIT_OK if chains.converged else EXIT_NOT_CONVERGED


def cmd_refit(args) -> int:
    ds = _load(args, args.degree + 1)
    sel = io.read_selection(args.selection)
    if tuple(sel.snp_names) != tuple(ds.genotypes.snp_names):
        raise ValueError("selection SNPs do not match the genotype file")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = refit(ds, sel, _hyper(args, ds.v), _sampler_config(args), level=args.level)
    for w in summary.warnings:
        log.warning(w)
    io.write_refit(summary, out / "refit.csv", ds.genotypes.snp_names, ds.covariate_names)
    io.write_summary(summary.chains, out / "refit_summary.csv", ds.covariate_names)
    _write_diagnostics(summary.chains, out, "refit_")
    io.write_meta(out, ds, converged=summary.converged, level=args.level,
                  blocks=[[ds.genotypes.snp_names[j], k] for j, k in summary.blocks],
                  condition_number=summary.condition_number)
    return EXIT_OK if summary.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args) -> int:
    ds = _load(args, args.degree + 1)
    degrees = [int(x) for x in str(args.degrees).split(",") if x.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = bic_degree_sweep(ds, degrees, lambda v: _hyper(args, v), _sampler_config(args), args.level)
    io.write_bic(result, out / "bic.csv")
    for d, sel in result.selections.items():
        io.write_selection(sel, out / f"selection_degree{d}.csv")
    io.write_meta(out, ds, chosen_degree=result.chosen)
    log.info("chosen degree %d", result.chosen)
    ok = all(r.converged for r in result.refits.values())
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_report(args) -> int:
    src = Path(args.refit)
    meta = io.read_meta(src)
    if "time_range" not in meta:
        raise ValueError(f"{src} has no {io.META_NAME} with the time range")
    lo, hi = meta["time_range"]
    table = io.read_refit(src / "refit.csv")
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    s = np.linspace(-1.0, 1.0, args.points)
    raw = (s + 1.0) * (hi - lo) / 2.0 + lo
    snps = sorted({snp for (block, snp) in table if block in ("additive", "dominant")})
    for snp in snps:
        bands = []
        for kind in ("additive", "dominant"):
            rec = table.get((kind, snp))
            if rec is None:
                zero = np.zeros_like(s)
                bands.append((zero, zero, zero))
            else:
                bands.append(coefficient_band(rec["mean"], np.stack([rec["lo"], rec["hi"]], axis=1), s))
        io.write_band(out / f"band_{snp}.csv", raw, *bands)
    log.info("wrote %d band files to %s", len(snps), out)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select,
    "refit": cmd_refit, "sweep": cmd_sweep, "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as err:
        print(f"fgwas: {err}", file=sys.stderr)
        return EXIT_ERROR
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, EmptySelectionError) as err:
        print(f"fgwas {args.command}: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
