"""Shiryaev and Shiryaev-Roberts statistics, stopping rules and thresholds.

Both statistics are carried as logarithms.  With ``S(n) = P(nu >= n)`` the
Shiryaev statistic obeys the one-step recursion

    Lambda_n = (S(n-1) Lambda_{n-1} + pi_{n-1}) L_n / S(n),   Lambda_0 = q / (1 - q),

and the SR statistic ``R_n = (1 + R_{n-1}) L_n`` with ``R_0 = 0``.  Each step is a
two-term log-sum-exp, so post-change growth of the likelihood ratio never
overflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Literal

import numpy as np
from scipy.special import expit

from .errors import InvalidBudget
from .priors import Prior, log_pmf, log_survival, mean_changepoint

Procedure = Literal["shiryaev", "shiryaev-roberts"]
PROCEDURES: tuple[str, ...] = ("shiryaev", "shiryaev-roberts")


def check_procedure(procedure: str) -> str:
    if procedure == "sr":
        return "shiryaev-roberts"
    if procedure not in PROCEDURES:
        raise ValueError(f"unknown procedure {procedure!r}; choose from {PROCEDURES}")
    return procedure


def initial_log_stat(procedure: str, prior: Prior | None = None) -> float:
    if check_procedure(procedure) == "shiryaev-roberts":
        return -math.inf
    if prior is None:
        raise ValueError("the Shiryaev statistic needs a prior")
    return math.log(prior.q / (1.0 - prior.q)) if prior.q > 0 else -math.inf


# Relative slack on the inclusive comparison, so statistics that hit the threshold
# exactly in real arithmetic are not lost to log-domain rounding.
CROSSING_TOL = 1e-12


def crossed(log_stat, log_threshold: float):
    return np.asarray(log_stat) >= log_threshold - CROSSING_TOL


def shiryaev_log_step(log_stat, n: int, z, prior: Prior):
    """log Lambda_n from log Lambda_{n-1} and the LLR increment z (arrays welcome)."""
    prev = log_survival(prior, n - 1) + np.asarray(log_stat, dtype=np.float64)
    return np.logaddexp(prev, log_pmf(prior, n - 1)) + z - log_survival(prior, n)


def sr_log_step(log_stat, z):
    """log R_n from log R_{n-1} and the LLR increment z."""
    return np.logaddexp(0.0, log_stat) + z


@dataclass(frozen=True)
class DetectorState:
    procedure: Procedure
    threshold: float
    n: int = 0
    log_stat: float = -math.inf
    stopped: bool = False

    @classmethod
    def start(cls, procedure: str, threshold: float, prior: Prior | None = None) -> "DetectorState":
        procedure = check_procedure(procedure)
        if not threshold > 0:
            raise ValueError(f"threshold must be positive, got {threshold}")
        return cls(procedure, float(threshold), 0, initial_log_stat(procedure, prior), False)

    @property
    def statistic(self) -> float:
        return math.exp(self.log_stat)

    def _advance(self, log_stat: float) -> "DetectorState":
        n = self.n + 1
        stopped = self.stopped or bool(crossed(log_stat, math.log(self.threshold)))
        return replace(self, n=n, log_stat=float(log_stat), stopped=stopped)


def shiryaev_update(state: DetectorState, log_L: float, prior: Prior) -> DetectorState:
    if state.procedure != "shiryaev":
        raise ValueError("shiryaev_update needs a Shiryaev detector state")
    return state._advance(shiryaev_log_step(state.log_stat, state.n + 1, log_L, prior))


def sr_update(state: DetectorState, log_L: float) -> DetectorState:
    if state.procedure != "shiryaev-roberts":
        raise ValueError("sr_update needs a Shiryaev-Roberts detector state")
    return state._advance(sr_log_step(state.log_stat, log_L))


def posterior(log_lam) -> float:
    """g = Lambda / (1 + Lambda) from log Lambda, i.e. the logistic function."""
    out = expit(np.asarray(log_lam, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def shiryaev_threshold(alpha: float, prior: Prior) -> float:
    """A = (1 - alpha) / alpha, which keeps PFA(T_A) <= alpha."""
    if not 0.0 < alpha < 1.0 - prior.q:
        raise InvalidBudget(f"need 0 < alpha < 1 - q = {1.0 - prior.q}, got alpha={alpha}")
    A = (1.0 - alpha) / alpha
    if A <= prior.q / (1.0 - prior.q):
        raise InvalidBudget(f"threshold A={A} does not exceed q/(1-q)")
    return A


def sr_threshold(alpha: float, prior: Prior) -> float:
    """B = nu_bar / alpha, which keeps PFA of the SR rule <= alpha."""
    if not 0.0 < alpha < 1.0:
        raise InvalidBudget(f"need 0 < alpha < 1, got alpha={alpha}")
    nu_bar = mean_changepoint(prior)
    if not nu_bar > 0 or not math.isfinite(nu_bar):
        raise InvalidBudget(f"SR calibration needs 0 < nu_bar < inf, got {nu_bar}")
    return nu_bar / alpha


def threshold_for(procedure: str, alpha: float, prior: Prior) -> float:
    if check_procedure(procedure) == "shiryaev":
        return shiryaev_threshold(alpha, prior)
    return sr_threshold(alpha, prior)


def run_detector(
    procedure: str,
    prior: Prior,
    log_L: Iterable[float],
    threshold: float,
    horizon: int,
) -> int | None:
    """First n in [1, horizon] with statistic >= threshold; None if censored."""
    procedure = check_procedure(procedure)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if procedure == "shiryaev" and threshold <= prior.q / (1.0 - prior.q):
        raise InvalidBudget(f"threshold {threshold} must exceed q/(1-q)")
    state = DetectorState.start(procedure, threshold, prior)
    for z in log_L:
        if state.n >= horizon:
            break
        if procedure == "shiryaev":
            state = shiryaev_update(state, z, prior)
        else:
            state = sr_update(state, z)
        if state.stopped:
            return state.n
    return None
