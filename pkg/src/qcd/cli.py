"""Command-line driver.

    qcd calibrate   --config exp.cfg
    qcd simulate    --config exp.cfg [--seed N] [--workers N] [--out DIR]
    qcd study       --config exp.cfg ...
    qcd verify      --config exp.cfg ...
    qcd list-models

Exit codes: 0 ok, 2 config or budget error, 3 censoring, 4 no survivors.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .asymptotics import (
    CSV_VERSION,
    StudyError,
    StudyReport,
    StudySpec,
    run_study,
    shiryaev_theoretical_moment,
    sr_theoretical_moment,
)
from .config import MODEL_KEYS, ExperimentConfig, load_config
from .detectors import threshold_for
from .errors import CensoringExceeded, ConfigError, InvalidBudget, NoSurvivors, QCDError
from .models import MODELS
from .montecarlo import (
    delay_moments,
    estimate_llr_deviation,
    estimate_pfa,
    estimate_upsilon_partial,
    run_trials,
)
from .priors import check_condition_c, tail_exponent

EXIT_OK, EXIT_CONFIG, EXIT_CENSORED, EXIT_NO_SURVIVORS = 0, 2, 3, 4


def _emit(text: str, out_dir: Path | None, name: str) -> None:
    sys.stdout.write(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / name).write_text(text)


def _csv_text(header: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def cmd_calibrate(cfg: ExperimentConfig, out_dir: Path | None = None) -> int:
    prior = cfg.prior.build()
    schedule = cfg.prior.schedule()
    rows = []
    for alpha in cfg.budget.alphas:
        p = prior if schedule is None else replace(cfg.prior, rho=schedule(alpha)).build()
        for procedure in cfg.detect.procedures:
            try:
                rows.append((alpha, procedure, float(threshold_for(procedure, alpha, p))))
            except InvalidBudget as exc:
                print(f"error: alpha={alpha} procedure={procedure}: {exc}", file=sys.stderr)
                return EXIT_CONFIG
    _emit(_csv_text("qcd-calibrate v1", ("alpha", "procedure", "threshold"), rows), out_dir, "calibrate.csv")
    return EXIT_OK


def _simulate_thresholds(cfg: ExperimentConfig) -> StudyReport:
    """Rows for explicit thresholds or a pinned change point (no alpha calibration)."""
    model, prior = cfg.model.build(), cfg.prior.build()
    I, mu = model.information_rate(), tail_exponent(prior)
    rows = []
    if cfg.budget.thresholds is not None:
        points = [(i, None, p, t) for i, t in enumerate(cfg.budget.thresholds) for p in cfg.detect.procedures]
    else:
        points = [(i, a, p, threshold_for(p, a, prior))
                  for i, a in enumerate(cfg.budget.alphas) for p in cfg.detect.procedures]
    for index, alpha, procedure, threshold in points:
        try:
            batch = run_trials(procedure, model, prior, threshold, cfg.mc.trials, cfg.mc.horizon,
                               cfg.mc.seed, key_path=(index, 0), pinned=cfg.mc.changepoint,
                               workers=cfg.mc.workers)
            delays = delay_moments(batch, cfg.detect.m)
            pfa = estimate_pfa(procedure, model, prior, threshold, cfg.mc.trials, cfg.mc.horizon,
                               cfg.mc.seed, mode=cfg.mc.pfa_mode, key_path=(index, 1),
                               workers=cfg.mc.workers)
        except QCDError as exc:
            raise StudyError(alpha if alpha is not None else math.nan, procedure, exc) from exc
        for m in cfg.detect.m:
            theory = math.nan
            if I > 0 and threshold > 1:
                if procedure == "shiryaev":
                    theory = (shiryaev_theoretical_moment(alpha, I, mu, m) if alpha is not None
                              else (math.log(threshold) / (I + mu)) ** m)
                else:
                    theory = sr_theoretical_moment(threshold, I, m)
            est = delays[m]
            rows.append({
                "alpha": "" if alpha is None else alpha, "procedure": procedure, "m": m,
                "threshold": float(threshold), "pfa_hat": pfa.value, "pfa_se": pfa.stderr,
                "delay_hat": est.value, "delay_se": est.stderr, "theory": theory,
                "ratio": est.value / theory if theory == theory else math.nan,
                "seed": cfg.mc.seed, "trials": cfg.mc.trials, "censored": est.censored + pfa.censored,
            })
    return StudyReport(rows)


def _study_spec(cfg: ExperimentConfig) -> StudySpec:
    return StudySpec(
        model=cfg.model.build(), prior=cfg.prior.build(), alphas=cfg.budget.alphas,
        procedures=cfg.detect.procedures, m_list=cfg.detect.m, r=cfg.verify.r,
        trials=cfg.mc.trials, seed=cfg.mc.seed, horizon=cfg.mc.horizon,
        schedule=cfg.prior.schedule(), workers=cfg.mc.workers,
    )


def _run_report(cfg: ExperimentConfig, simulate: bool) -> StudyReport:
    if simulate and (cfg.budget.thresholds is not None or cfg.mc.changepoint is not None
                     or cfg.mc.pfa_mode != "survival"):
        return _simulate_thresholds(cfg)
    return run_study(_study_spec(cfg))


def _guarded(fn):
    def wrapper(cfg, out_dir=None):
        try:
            return fn(cfg, out_dir)
        except StudyError as exc:
            print(f"error: {exc}", file=sys.stderr)
            if isinstance(exc.cause, CensoringExceeded):
                return EXIT_CENSORED
            if isinstance(exc.cause, NoSurvivors):
                return EXIT_NO_SURVIVORS
            return EXIT_CONFIG
        except CensoringExceeded as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CENSORED
        except NoSurvivors as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NO_SURVIVORS
        except (InvalidBudget, ConfigError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_guarded
def cmd_simulate(cfg: ExperimentConfig, out_dir: Path | None = None) -> int:
    report = _run_report(cfg, simulate=True)
    if "csv" in cfg.output.formats:
        _emit(report.to_csv(), out_dir, "simulate.csv")
    return EXIT_OK


@_guarded
def cmd_study(cfg: ExperimentConfig, out_dir: Path | None = None) -> int:
    if len(cfg.budget.alphas) < 2:
        raise ConfigError("[budget] alphas: a study needs at least 2 grid points")
    report = run_study(_study_spec(cfg))
    if "csv" in cfg.output.formats:
        _emit(report.to_csv(), out_dir, "study.csv")
    if out_dir is not None and "dat" in cfg.output.formats:
        out_dir.mkdir(parents=True, exist_ok=True)
        for procedure in cfg.detect.procedures:
            for m in cfg.detect.m:
                lines = [f"# {CSV_VERSION} series: {procedure} m={m}", "# abs_log_alpha delay"]
                lines += [f"{x!r} {y!r}" for x, y in report.series(procedure, m)]
                (out_dir / f"series_{procedure}_m{m}.dat").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out_dir: Path | None = None) -> int:
    """Condition checks; diagnostics are reported, never fatal."""
    v = cfg.verify
    lines = [f"# qcd-verify v1 seed={cfg.mc.seed}"]
    try:
        model, prior = cfg.model.build(), cfg.prior.build()
        c = check_condition_c(prior, v.r)
        extra = "" if c.log_moment_sum is None else f" log_moment_sum={c.log_moment_sum!r}"
        lines.append(f"condition-C {'satisfied' if c.satisfied else 'VIOLATED'}: mu={c.mu!r} r={v.r!r}{extra}")
        I = model.information_rate()
        lines.append(f"information-rate I={I!r}")
        if I > 0:
            probs = []
            for j, n in enumerate(v.n_grid):
                est = estimate_llr_deviation(model, 0, n, v.eps, v.trials, cfg.mc.seed,
                                             key_path=(j, 2), workers=cfg.mc.workers)
                probs.append(est.value)
                lines.append(f"llr-deviation k=0 n={n} eps={v.eps!r}: p={est.value!r} se={est.stderr!r}")
            decreasing = all(b < a for a, b in zip(probs, probs[1:]))
            lines.append(f"llr-deviation {'decreasing' if decreasing else 'NOT decreasing'} over n grid")
            for j, k in enumerate(v.k_grid):
                rep = estimate_upsilon_partial(model, k, v.r, v.eps, v.n_max, v.trials, cfg.mc.seed,
                                               fraction=v.fraction, key_path=(j, 3), workers=cfg.mc.workers)
                sums = " ".join(f"{g}:{s:.6g}" for g, s in zip(rep.grid, rep.partial_sums))
                flag = "summable-looking" if rep.tail_flag else "NOT stabilized"
                lines.append(f"upsilon k={k} r={v.r!r} eps={v.eps!r}: {flag}; partial sums {sums}")
        else:
            lines.append("llr diagnostics skipped: zero information rate")
    except QCDError as exc:
        lines.append(f"diagnostic error: {exc}")
    _emit("\n".join(lines) + "\n", out_dir, "verify.txt")
    return EXIT_OK


def cmd_list_models() -> int:
    for name in MODELS:
        print(f"{name}: {', '.join(MODEL_KEYS[name])}")
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "study": cmd_study,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qcd", description="Bayesian quickest changepoint detection experiments")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=[*COMMANDS, "list-models"])
    ap.add_argument("--config", type=Path, help="experiment config file (required except for list-models)")
    ap.add_argument("--seed", type=int, help="master seed, unsigned 64-bit (overrides [mc] seed)")
    ap.add_argument("--workers", type=int, help="cap on parallel tasks (overrides [mc] workers)")
    ap.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "list-models":
        return cmd_list_models()
    if args.config is None:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_CONFIG
        cfg.mc.seed = args.seed
    if args.workers is not None:
        if args.workers < 1:
            print("error: --workers must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        cfg.mc.workers = args.workers
    out_dir = args.out if args.out is not None else Path(cfg.output.dir)
    return COMMANDS[args.command](cfg, out_dir)


if __name__ == "__main__":
    sys.exit(main())
