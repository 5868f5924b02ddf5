"""Command line: ``curse-lab envgen|run|theory|report``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import expt, theory
from .envgen import build_causal_model, sample_history
from .seeding import derive_seed

log = logging.getLogger("curse_lab")


def _base_config(args) -> expt.RunConfig:
    if args.config:
        cfg = expt.load_config(args.config, preset_name=args.preset)
    else:
        cfg = expt.preset(args.preset or "desk")
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    return cfg


def cmd_envgen(args) -> int:
    cfg = _base_config(args)
    env_seed = derive_seed(cfg.master_seed, "env")
    causal = build_causal_model(cfg.env, env_seed)
    sample = sample_history(causal, cfg.env, args.n, derive_seed(cfg.master_seed, "envgen-sample"),
                            restriction="free-only" if args.free_only else "any", env_seed=env_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sample.dataset.to_csv(out)
    sidecar = {"env_digest": cfg.env.digest(env_seed), "master_seed": cfg.master_seed,
               "env_seed": env_seed, "sample_seed": sample.sample_seed,
               "f_l": causal.f_l.tolist(), "diagnostics": causal.diagnostics}
    with open(out.with_suffix(out.suffix + ".env.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {sample.dataset.n} records to {out} (employment rate "
          f"{sample.dataset.outcomes.mean():.3f})")
    return 0


def cmd_run(args) -> int:
    cfg = _base_config(args)
    overrides = {}
    for key in ("replications", "bootstraps", "n_train", "n_test", "ipw_draws"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.families:
        overrides["families"] = tuple(f.strip() for f in args.families.split(","))
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.refit_per_rep:
        overrides["refit_per_rep"] = True
    if args.ipw_scheme:
        overrides["ipw_scheme"] = args.ipw_scheme
    cfg = replace(cfg, **overrides)
    result = expt.run_protocol(cfg)
    expt.write_outputs(result, args.out_dir, with_diagnostics=not args.no_diagnostics)
    _print_summary(expt.summarize(result)[0])
    if result.failures:
        print(f"{len(result.failures)} replication(s) failed; see run_manifest.json", file=sys.stderr)
        return 1
    return 0


def cmd_theory(args) -> int:
    report = theory.run_all(seed=args.seed or 0, reps=args.reps, quick=args.quick)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    expt._write_csv(out / "theory_report.csv",
                    ("check", "relation", "computed", "target", "tolerance", "status"), report.rows())
    failed = [c for c in report if not c.passed]
    groups: dict[str, list] = {}
    for c in report:
        groups.setdefault(c.name.split("/")[0], []).append(c.passed)
    for g, flags in groups.items():
        print(f"{g:12s} {sum(flags):4d}/{len(flags):<4d} passed")
    for c in failed:
        print(f"FAIL {c.name}: computed {c.computed:.6g} vs target {c.target:.6g} "
              f"({c.relation}, tol {c.tolerance:.3g})")
    return 1 if failed else 0


def _print_summary(rows) -> None:
    print(f"{'family':12s} {'panel':9s} {'method':22s} {'n':>5s} {'mean%':>9s} {'sd':>8s} {'bias':>8s}")
    for fam, panel, method, n, mean, sd, _se, _q05, _q50, _q95, bias in rows:
        print(f"{fam:12s} {panel:9s} {method:22s} {n:5d} {mean:9.2f} {sd:8.2f} {bias:8.2f}")


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    rows = expt.read_estimates(run_dir / "estimates.csv")
    families = tuple(dict.fromkeys(r.family for r in rows))
    result = expt.RunResult(replace(expt.RunConfig(), families=families, bins=args.bins), rows=rows)
    summary_rows, hist_rows = expt.summarize(result, args.bins)
    expt._write_csv(run_dir / "summary.csv", expt.SUMMARY_HEADER, summary_rows)
    expt._write_csv(run_dir / "histograms.csv", expt.HISTOGRAM_HEADER, hist_rows)
    _print_summary(summary_rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curse-lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI file with [env], [learners.<family>], [run]")
        sp.add_argument("--preset", choices=sorted(expt.PRESETS))
        sp.add_argument("--seed", type=int, help="master seed")

    e = sub.add_parser("envgen", help="sample a historical dataset")
    common(e)
    e.add_argument("--n", type=int, default=1000)
    e.add_argument("--free-only", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_envgen)

    r = sub.add_parser("run", help="run the simulation protocol")
    common(r)
    r.add_argument("--out-dir", required=True)
    r.add_argument("--threads", type=int)
    r.add_argument("--families", help="comma list of lasso-logit,honest-rf,gbm,oracle")
    r.add_argument("--replications", type=int)
    r.add_argument("--bootstraps", type=int)
    r.add_argument("--ipw-draws", type=int)
    r.add_argument("--n-train", type=int)
    r.add_argument("--n-test", type=int)
    r.add_argument("--refit-per-rep", action="store_true")
    r.add_argument("--ipw-scheme", choices=("redraw", "shuffle"))
    r.add_argument("--no-diagnostics", action="store_true")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("theory", help="numerical checks of the closed-form examples")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--reps", type=int, default=100)
    t.add_argument("--quick", action="store_true")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--threads", type=int, help="accepted for symmetry; checks run serially")
    t.set_defaults(func=cmd_theory)

    rep = sub.add_parser("report", help="recompute summaries and histograms from estimates.csv")
    rep.add_argument("--run-dir", required=True)
    rep.add_argument("--bins", type=int, default=20)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
