"""Command-line front end.

Exit status: 0 on success, 2 on configuration or data errors, 3 when the
weight solver did not converge and ``--strict`` is set.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import EstimationConfig
from .dgp import ModelTemplate, monte_carlo, simulate, write_ground_truth
from .errors import ConfigError, MascError, NonConvergenceWarning
from .estimator import EFFECTS, MascResult, estimate
from .inference import placebo_test, resampling_inference
from .panel import load_panel, validate, write_panel
from .robustness import leave_one_out

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3
COMMANDS = ("validate", "estimate", "placebo", "resample", "loo", "simulate", "mc")


def fmt(x) -> str:
    """Six significant digits; infinities and NaN spelled out."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".6g")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="masc", description="Mediation analysis synthetic control.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", "-c", type=Path, help="TOML run configuration")
        s.add_argument("--output", "-o", type=Path, help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--jobs", type=int, help="maximum worker processes")
        s.add_argument("--strict", action="store_true", default=None, help="exit 3 on solver non-convergence")
        if name in ("validate", "estimate", "placebo", "resample", "loo"):
            s.add_argument("--data", type=Path, help="long-format panel CSV")
            s.add_argument("--treated", action="append", help="treated unit (repeatable)")
            s.add_argument("--donors", help="comma-separated donor pool")
            s.add_argument("--exclude", action="append", help="drop a unit from the donor pool (repeatable)")
            s.add_argument("--intervention", type=int, help="first exposed period label")
            s.add_argument("--mediator-mode", help="single-lag(k) or full-path")
            s.add_argument("--v-total", choices=("uniform", "user"))
            s.add_argument("--v-direct", choices=("uniform", "equal-pre-post", "user"))
        if name == "placebo":
            s.add_argument("--pvalue-denominator", choices=("donors", "donors+1"))
        if name == "resample":
            s.add_argument("--n-iter", type=int)
        if name == "simulate":
            s.add_argument("--n-pre", type=int)
        if name == "mc":
            s.add_argument("--grid", help="comma-separated pre-period lengths")
            s.add_argument("--reps", type=int)
    return p


def _config(args) -> EstimationConfig:
    cfg = EstimationConfig.load(args.config) if args.config else EstimationConfig()
    over = {
        "output": args.output,
        "seed": args.seed,
        "jobs": args.jobs,
        "strict": args.strict,
        "data_path": getattr(args, "data", None),
        "treated": tuple(args.treated) if getattr(args, "treated", None) else None,
        "donors": tuple(d for d in args.donors.split(",") if d) if getattr(args, "donors", None) else None,
        "exclude": (*cfg.exclude, *args.exclude) if getattr(args, "exclude", None) else None,
        "intervention": getattr(args, "intervention", None),
        "mediator_mode": getattr(args, "mediator_mode", None),
        "v_total": getattr(args, "v_total", None),
        "v_direct": getattr(args, "v_direct", None),
        "pvalue_denominator": getattr(args, "pvalue_denominator", None),
        "n_iter": getattr(args, "n_iter", None),
    }
    return cfg.replace(**over)


def _load(cfg: EstimationConfig):
    if cfg.data_path is None:
        raise ConfigError("no data path (set [data] path or --data)")
    if not cfg.treated:
        raise ConfigError("no treated unit (set [design] treated or --treated)")
    if cfg.intervention is None:
        raise ConfigError("no intervention period (set [design] intervention or --intervention)")
    try:
        with open(cfg.data_path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {cfg.data_path}: {exc.strerror}") from None
    ds = load_panel(raw, cfg.schema or None)
    report = validate(ds, _ValidationView(cfg, ds))
    for issue in report.warnings:
        print(f"warning: {issue.code}: {issue.message}", file=sys.stderr)
    if not report.ok:
        raise ConfigError(report.format())
    donors = cfg.donor_pool(ds.units, cfg.treated)
    return ds.with_design(cfg.intervention, cfg.treated, donors)


@dataclasses.dataclass
class _ValidationView:
    cfg: EstimationConfig
    ds: object

    def __getattr__(self, name):
        if name == "donors":
            return list(self.cfg.donor_pool(self.ds.units, self.cfg.treated))
        if name == "predictors":
            return list(self.cfg.predictors or ()) + list(self.cfg.mediator_predictors or ())
        return getattr(self.cfg, name)


class _Watch:
    """Collects solver non-convergence while letting other warnings through to stderr."""

    def __enter__(self):
        self._cm = warnings.catch_warnings(record=True)
        self.caught = self._cm.__enter__()
        warnings.simplefilter("always")
        return self

    def __exit__(self, *exc):
        self._cm.__exit__(*exc)
        self.nonconverged = [w for w in self.caught if issubclass(w.category, NonConvergenceWarning)]
        seen = set()
        for w in self.caught:
            msg = f"warning: {w.category.__name__}: {w.message}"
            if msg not in seen:
                seen.add(msg)
                print(msg, file=sys.stderr)
        return False


def _estimate_all(ds, cfg) -> dict[str, MascResult]:
    opts = cfg.options()
    return {u: estimate(ds, u, ds.donors, opts, with_mediator=True) for u in ds.treated}


def _effects_rows(results, extra=None):
    multi = len(results) > 1
    header = (["unit"] if multi else []) + ["period", "total", "direct", "indirect"]
    if extra:
        header += extra["header"]
    rows = []
    for u, res in results.items():
        for k, (t, a, d, i) in enumerate(res.effects.rows()):
            row = ([u] if multi else []) + [t, a, d, i]
            if extra:
                row += extra["values"](u, t)
            rows.append(row)
    return header, rows


def _write_estimate(out: Path, ds, results) -> None:
    header, rows = _effects_rows(results)
    _write_csv(out / "effects.csv", header, rows)
    weights, fit = {}, {}
    multi = len(results) > 1
    series_rows = []
    for u, res in results.items():
        weights[u] = {
            "Y00": {str(k): w.as_dict() for k, w in res.y00.weights_by_period.items()},
            "Y01": {str(k): w.as_dict() for k, w in res.y01.weights_by_period.items()},
        }
        if res.m0 is not None:
            weights[u]["M0"] = {str(k): w.as_dict() for k, w in res.m0.weights_by_period.items()}
        reports = list(res.y00.reports.values()) + list(res.y01.reports.values())
        fit[u] = res.fit_summary()
        fit[u]["solver"] = {
            "converged": all(r.converged for r in reports),
            "max_kkt_residual": max(r.kkt_residual for r in reports),
        }
        for k, t in enumerate(res.periods):
            row = ([u] if multi else []) + [t, float(res.observed[k]), float(res.y00.values[k]), float(res.y01.values[k])]
            if res.m0 is not None:
                row += [float(ds.mediator[ds.unit_index(u), k]), float(res.m0.values[k])]
            series_rows.append(row)
    _write_json(out / "weights.json", weights)
    _write_json(out / "fit.json", fit)
    head = (["unit"] if multi else []) + ["period", "observed", "synthetic_y00", "synthetic_y01"]
    if all(r.m0 is not None for r in results.values()):
        head += ["mediator", "synthetic_m0"]
    _write_csv(out / "series.csv", head, series_rows)


def cmd_validate(cfg) -> int:
    ds = _load(cfg)
    print(f"ok: {ds.n_units} units, {ds.n_periods} periods, {len(ds.treated)} treated, {len(ds.donors)} donors")
    return EXIT_OK


def cmd_estimate(cfg) -> int:
    ds = _load(cfg)
    with _Watch() as w:
        results = _estimate_all(ds, cfg)
    _write_estimate(cfg.output, ds, results)
    return _finish(cfg, w)


def cmd_placebo(cfg) -> int:
    ds = _load(cfg)
    with _Watch() as w:
        results = _estimate_all(ds, cfg)
        tests = {
            u: placebo_test(
                ds,
                u,
                ds.donors,
                cfg.options(),
                cfg.effects,
                pvalue_denominator=cfg.pvalue_denominator,
                baseline=results[u],
                jobs=cfg.jobs,
            )
            for u in ds.treated
        }
    _write_estimate(cfg.output, ds, results)
    effects = list(cfg.effects)
    header, rows = _effects_rows(
        results,
        {"header": [f"p_{e}" for e in effects], "values": lambda u, t: [tests[u].p_per_period[(e, t)] for e in effects]},
    )
    _write_csv(cfg.output / "effects.csv", header, rows)
    stats = []
    for u, test in tests.items():
        for unit, per in test.per_unit_stats.items():
            for e in effects:
                s = per[e]
                role = "treated" if unit == u else "placebo"
                stats.append([u, unit, role, e, float(s["pre_rmspe"]), float(s["post_rmspe"]), float(s["ratio"])])
    _write_csv(
        cfg.output / "placebo_stats.csv",
        ["treated", "unit", "role", "effect", "pre_rmspe", "post_rmspe", "ratio"],
        stats,
    )
    _write_json(
        cfg.output / "pvalues.json",
        {
            u: {
                "denominator": t.denominator,
                "n_placebos": t.n_placebos,
                "failed": list(t.failed),
                "p_overall": dict(t.p_overall),
                "below_resolution": {e: t.below_resolution(e) for e in effects},
            }
            for u, t in tests.items()
        },
    )
    return _finish(cfg, w)


def cmd_resample(cfg) -> int:
    ds = _load(cfg)
    with _Watch() as w:
        results = _estimate_all(ds, cfg)
        rs = resampling_inference(ds, results, cfg.options(), cfg.n_iter, cfg.seed, jobs=cfg.jobs)
    _write_estimate(cfg.output, ds, results)
    rows = []
    for j, t in enumerate(rs.periods):
        rows.append([t, *(float(rs.observed[k, j]) for k in range(3)), *(rs.p_values[(e, t)] for e in EFFECTS)])
    _write_csv(
        cfg.output / "effects.csv",
        ["period", "total", "direct", "indirect", "p_total", "p_direct", "p_indirect"],
        rows,
    )
    draws = [
        [i, e, t, float(rs.draws[i, k, j])]
        for i in range(rs.n_iter)
        for k, e in enumerate(EFFECTS)
        for j, t in enumerate(rs.periods)
    ]
    _write_csv(cfg.output / "resample_draws.csv", ["iteration", "effect", "period", "value"], draws)
    _write_json(cfg.output / "pvalues.json", {"n_iter": rs.n_iter, "seed": rs.seed, "p_overall": dict(rs.p_overall)})
    return _finish(cfg, w)


def cmd_loo(cfg) -> int:
    ds = _load(cfg)
    with _Watch() as w:
        results = _estimate_all(ds, cfg)
        loos = {
            u: leave_one_out(ds, u, ds.donors, cfg.options(), cfg.effects, baseline=results[u], jobs=cfg.jobs)
            for u in ds.treated
        }
    _write_estimate(cfg.output, ds, results)
    summary = []
    for u, loo in loos.items():
        for donor, fx in loo.variants.items():
            if fx is not None:
                _write_csv(
                    cfg.output / "loo" / f"effects_{u}_without_{donor}.csv",
                    ["period", "total", "direct", "indirect"],
                    fx.rows(),
                )
            for e in cfg.effects:
                status = "failed" if fx is None else "ok"
                summary.append([u, donor, e, loo.deviation(donor, e), status])
        for e in cfg.effects:
            summary.append([u, "*", e, loo.max_abs_deviation[e], "max"])
    _write_csv(cfg.output / "loo_summary.csv", ["treated", "excluded", "effect", "max_abs_deviation", "status"], summary)
    return _finish(cfg, w)


def _template(section) -> ModelTemplate:
    names = {f.name for f in dataclasses.fields(ModelTemplate)}
    bad = set(section) - names
    if bad:
        raise ConfigError(f"unknown simulation keys: {sorted(bad)}")
    kw = dict(section)
    if "z_columns" in kw:
        kw["z_columns"] = tuple(kw["z_columns"])
    try:
        return ModelTemplate(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(cfg, args) -> int:
    section = dict(cfg.simulate)
    n_pre = args.n_pre or section.pop("n_pre", 20)
    section.pop("n_pre", None)
    noise_seed = section.pop("noise_seed", cfg.seed)
    if args.seed is not None:
        section["seed"] = args.seed
    template = _template(section)
    ds, truth = simulate(template.build(int(n_pre), seed=int(noise_seed)))
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_panel(ds, cfg.output / "panel.csv")
    write_ground_truth(truth, cfg.output / "ground_truth.csv")
    _write_json(
        cfg.output / "design.json",
        {"intervention": ds.intervention, "treated": list(ds.treated), "donors": list(ds.donors)},
    )
    return EXIT_OK


def cmd_mc(cfg, args) -> int:
    section = dict(cfg.simulate)
    for k in ("n_pre", "noise_seed"):
        section.pop(k, None)
    template = _template(section)
    grid = [int(g) for g in args.grid.split(",")] if args.grid else list(cfg.mc.get("grid", [20, 200]))
    reps = args.reps or int(cfg.mc.get("reps", 500))
    seed = args.seed if args.seed is not None else int(cfg.mc.get("seed", 0))
    with _Watch() as w:
        try:
            table = monte_carlo(template, grid, reps, seed, cfg.options(), jobs=cfg.jobs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    rows = [[c.n_pre, c.effect, c.mean_bias, c.se, c.reps] for c in table.cells]
    _write_csv(cfg.output / "mc_bias.csv", ["n_pre", "effect", "mean_bias", "se", "reps"], rows)
    return _finish(cfg, w)


def _finish(cfg, watch) -> int:
    if cfg.strict and watch.nonconverged:
        print(f"error: {len(watch.nonconverged)} weight problems did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args)
        if args.command == "mc":
            return cmd_mc(cfg, args)
        return {
            "validate": cmd_validate,
            "estimate": cmd_estimate,
            "placebo": cmd_placebo,
            "resample": cmd_resample,
            "loo": cmd_loo,
        }[args.command](cfg)
    except (MascError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
