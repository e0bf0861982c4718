"""First-order delay predictions and studies that set them against simulation."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detectors import check_procedure, threshold_for
from .errors import DegenerateFit, QCDError
from .models import ScenarioModel
from .montecarlo import delay_moments, estimate_pfa, run_trials
from .priors import Prior, tail_exponent

CSV_VERSION = "qcd-study v1"
BASE_COLUMNS = (
    "alpha", "procedure", "m", "threshold", "pfa_hat", "pfa_se",
    "delay_hat", "delay_se", "theory", "ratio", "seed", "trials", "censored",
)


def shiryaev_theoretical_moment(alpha: float, I: float, mu: float, m: float) -> float:
    """(|log alpha| / (I + mu))^m."""
    if not 0 < alpha < 1 or not I > 0 or mu < 0 or not m > 0:
        raise ValueError("need 0 < alpha < 1, I > 0, mu >= 0, m > 0")
    return (abs(math.log(alpha)) / (I + mu)) ** m


def sr_theoretical_moment(B: float, I: float, m: float) -> float:
    """(log B / I)^m."""
    if not B > 1 or not I > 0 or not m > 0:
        raise ValueError("need B > 1, I > 0, m > 0")
    return (math.log(B) / I) ** m


def efficiency_ratio(I: float, mu: float, m: float = 1) -> float:
    """[I / (I + mu)]^m: first-order Shiryaev-to-SR delay ratio at equal |log alpha|."""
    if not I > 0 or mu < 0:
        raise ValueError("need I > 0 and mu >= 0")
    return (I / (I + mu)) ** m


@dataclass(frozen=True)
class RhoSchedule:
    """rho(alpha) = c / |log alpha|^p, with 0 < p <= 1."""

    c: float = 1.0
    p: float = 1.0

    def __post_init__(self) -> None:
        if not self.c > 0 or not 0 < self.p <= 1:
            raise ValueError("schedule needs c > 0 and 0 < p <= 1")

    def __call__(self, alpha: float) -> float:
        rho = self.c / abs(math.log(alpha)) ** self.p
        if not 0 < rho < 1:
            raise ValueError(f"schedule gives rho={rho} outside (0, 1) at alpha={alpha}")
        return rho


@dataclass
class StudySpec:
    model: ScenarioModel
    prior: Prior
    alphas: Sequence[float]
    procedures: Sequence[str] = ("shiryaev",)
    m_list: Sequence[float] = (1,)
    r: float = 1.0
    trials: int = 10_000
    seed: int = 0
    horizon: int | None = None
    schedule: RhoSchedule | None = None
    pfa_trials: int | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        self.alphas = [float(a) for a in self.alphas]
        self.procedures = [check_procedure(p) for p in self.procedures]
        if not self.alphas or any(b >= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise ValueError("alpha grid must be nonempty and strictly decreasing")
        if not self.m_list:
            raise ValueError("m_list must be nonempty")
        if not self.procedures:
            raise ValueError("at least one procedure is required")

    def prior_at(self, alpha: float) -> Prior:
        if self.schedule is None:
            return self.prior
        return Prior.geometric(self.schedule(alpha), q=self.prior.q)


@dataclass
class StudyReport:
    rows: list[dict]
    columns: list[str] = field(default_factory=lambda: list(BASE_COLUMNS))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {CSV_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(row.get(c, "")) for c in self.columns])
        return buf.getvalue()

    def series(self, procedure: str, m: float = 1) -> list[tuple[float, float]]:
        """(|log alpha|, delay) pairs for external plotting."""
        return [
            (abs(math.log(r["alpha"])), r["delay_hat"])
            for r in self.rows
            if r["procedure"] == procedure and r["m"] == m
        ]

    def column(self, name: str, procedure: str | None = None, m: float | None = None) -> list:
        return [
            r[name] for r in self.rows
            if (procedure is None or r["procedure"] == procedure) and (m is None or r["m"] == m)
        ]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class StudyError(QCDError):
    """A study grid point failed; wraps the underlying error with its location."""

    def __init__(self, alpha: float, procedure: str, cause: Exception):
        super().__init__(f"alpha={alpha} procedure={procedure}: {cause}")
        self.alpha = alpha
        self.procedure = procedure
        self.cause = cause


def _study_point(spec: StudySpec, index: int, alpha: float) -> list[dict]:
    prior = spec.prior_at(alpha)
    I = spec.model.information_rate()
    mu = tail_exponent(prior)
    pfa_trials = spec.pfa_trials or spec.trials
    rows = []
    for procedure in spec.procedures:
        try:
            threshold = threshold_for(procedure, alpha, prior)
            # paths are shared across procedures at a grid point (common random numbers)
            batch = run_trials(procedure, spec.model, prior, threshold, spec.trials, spec.horizon,
                               spec.seed, key_path=(index, 0))
            delays = delay_moments(batch, spec.m_list)
            pfa = estimate_pfa(procedure, spec.model, prior, threshold, pfa_trials, spec.horizon,
                               spec.seed, key_path=(index, 1))
        except QCDError as exc:
            raise StudyError(alpha, procedure, exc) from exc
        for m in spec.m_list:
            if procedure == "shiryaev":
                theory = shiryaev_theoretical_moment(alpha, I, 0.0 if spec.schedule else mu, m)
            else:
                theory = sr_theoretical_moment(threshold, I, m)
            est = delays[m]
            row = {
                "alpha": alpha, "procedure": procedure, "m": m, "threshold": float(threshold),
                "pfa_hat": pfa.value, "pfa_se": pfa.stderr,
                "delay_hat": est.value, "delay_se": est.stderr,
                "theory": theory, "ratio": est.value / theory,
                "seed": spec.seed, "trials": spec.trials, "censored": est.censored + pfa.censored,
            }
            if spec.schedule is not None:
                row["rho_alpha"] = prior.rho
                row["mu_alpha"] = mu
            rows.append(row)
    return rows


def run_study(spec: StudySpec) -> StudyReport:
    """Calibrate, simulate and compare with first-order theory at every alpha.

    Rows come out in grid order, procedures and moments nested inside, no
    matter how many workers run the grid points.
    """
    points = list(enumerate(spec.alphas))
    if spec.workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            chunks = list(pool.map(lambda p: _study_point(spec, *p), points))
    else:
        chunks = [_study_point(spec, *p) for p in points]
    rows = [r for chunk in chunks for r in chunk]
    columns = list(BASE_COLUMNS)
    if spec.schedule is not None:
        columns += ["rho_alpha", "mu_alpha"]
    if "shiryaev" in spec.procedures and "shiryaev-roberts" in spec.procedures:
        _add_comparison(rows, spec)
        columns += ["sr_over_shiryaev", "efficiency_theory"]
    return StudyReport(rows, columns)


def _add_comparison(rows: list[dict], spec: StudySpec) -> None:
    I = spec.model.information_rate()
    lookup = {(r["alpha"], r["procedure"], r["m"]): r for r in rows}
    for r in rows:
        shir = lookup[(r["alpha"], "shiryaev", r["m"])]
        sr = lookup[(r["alpha"], "shiryaev-roberts", r["m"])]
        r["sr_over_shiryaev"] = sr["delay_hat"] / shir["delay_hat"]
        r["efficiency_theory"] = efficiency_ratio(I, tail_exponent(spec.prior_at(r["alpha"])), r["m"])


@dataclass(frozen=True)
class ExponentProbe:
    slope: float
    slope_se: float
    intercept: float
    B: list[float]
    pfa: list[float]
    pfa_se: list[float]


def probe_pfa_exponent(
    model: ScenarioModel,
    prior: Prior,
    B_grid: Sequence[float],
    trials: int,
    seed: int = 0,
    *,
    horizon: int | None = None,
    procedure: str = "shiryaev-roberts",
    workers: int = 1,
) -> ExponentProbe:
    """Fit log PFA = a + slope * log B by weighted least squares (report only)."""
    B = np.asarray(sorted(B_grid), dtype=np.float64)
    if len(B) < 3 or B[-1] / B[0] < 100:
        raise ValueError("B grid needs at least 3 points spanning 2 decades")
    ests = [
        estimate_pfa(procedure, model, prior, float(b), trials, horizon, seed,
                     key_path=(i,), workers=workers)
        for i, b in enumerate(B)
    ]
    p = np.array([e.value for e in ests])
    se = np.array([e.stderr for e in ests])
    if np.any(p <= 0):
        raise DegenerateFit(f"zero PFA estimate in grid {B.tolist()}")
    x, y = np.log(B), np.log(p)
    sy = se / p
    X = np.column_stack([np.ones_like(x), x])
    if np.all(sy > 0):
        W = 1.0 / sy**2
        cov = np.linalg.inv(X.T @ (X * W[:, None]))
        beta = cov @ (X.T @ (W * y))
        slope_se = float(math.sqrt(cov[1, 1]))
    else:
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        slope_se = 0.0
    return ExponentProbe(float(beta[1]), slope_se, float(beta[0]), B.tolist(), p.tolist(), se.tolist())
