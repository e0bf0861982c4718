"""Monte Carlo estimation of false-alarm probability, delay moments and LLR diagnostics.

Trials are simulated in blocks, all trials of a block advancing in lockstep and
dropping out as they stop.  Every random number comes from the counter-based
streams in :mod:`qcd.streams`, indexed by trial number, so results do not
depend on block size or on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .detectors import check_procedure, crossed, initial_log_stat, shiryaev_log_step, sr_log_step
from .errors import CensoringExceeded, NoSurvivors
from .models import ScenarioModel, select
from .priors import Prior, changepoints_from_uniform, survival
from .streams import CHANGEPOINT, derive_key, normal, uniform

BLOCK = 8192
MAX_CENSORED = 0.01
# A censored P_inf trial whose survival bound is below this cannot move a PFA estimate.
PFA_NEGLIGIBLE = 1e-12
# Longest default P_inf run when the prior tail is slow to become negligible.
MAX_PFA_HORIZON = 100_000
NEVER = np.iinfo(np.int64).max


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    trials: int
    censored: int = 0

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.trials if self.trials else 0.0


@dataclass(frozen=True)
class TrialResult:
    nu: int
    T: int | None
    false_alarm: bool
    delay: int | None

    @property
    def censored(self) -> bool:
        return self.T is None


@dataclass
class TrialBatch:
    """Per-trial outcomes as arrays; ``T`` is 0 where the detector never stopped.

    A run that ends without stopping is censored, except in the naive PFA mode,
    where stopping after the change point need not be observed.
    """

    nu: np.ndarray
    T: np.ndarray
    censored: np.ndarray

    def __len__(self) -> int:
        return len(self.nu)

    @property
    def false_alarm(self) -> np.ndarray:
        return (self.T > 0) & (self.T <= self.nu)

    @property
    def survived(self) -> np.ndarray:
        return ~self.censored & (self.T > self.nu)

    @property
    def delay(self) -> np.ndarray:
        return self.T - np.maximum(self.nu, 0)

    def __getitem__(self, i: int) -> TrialResult:
        if self.censored[i]:
            return TrialResult(int(self.nu[i]), None, False, None)
        fa = bool(self.false_alarm[i])
        return TrialResult(int(self.nu[i]), int(self.T[i]), fa, None if fa else int(self.delay[i]))


def default_horizon(threshold: float, info_rate: float) -> int:
    """ceil(20 log(threshold) / I) + 100."""
    if not info_rate > 0:
        raise ValueError("a zero information rate needs an explicit horizon")
    return int(math.ceil(20.0 * max(math.log(threshold), 0.0) / info_rate)) + 100


def _resolve_horizon(horizon: int | None, threshold: float, model: ScenarioModel) -> int:
    if horizon is None:
        return default_horizon(threshold, model.information_rate())
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return int(horizon)


def pfa_horizon(threshold: float, model: ScenarioModel, prior: Prior) -> int:
    """Default P_inf horizon: the delay horizon, stretched until P(nu >= n) is negligible.

    Past that point a still-running trial cannot change the survival estimator.
    """
    base = default_horizon(threshold, model.information_rate())
    if prior.kind == "geometric":
        need = math.log(PFA_NEGLIGIBLE / (1.0 - prior.q)) / math.log1p(-prior.rho)
        tail_end = int(math.ceil(need)) if math.isfinite(need) else MAX_PFA_HORIZON
    else:
        tail_end = prior.K + 1
    return max(base, min(tail_end, MAX_PFA_HORIZON))


def _blocks(trials: int, block: int = BLOCK) -> list[tuple[int, int]]:
    return [(s, min(s + block, trials)) for s in range(0, trials, block)]


def _map_blocks(fn: Callable[[int, int], object], trials: int, workers: int) -> list:
    blocks = _blocks(trials)
    if workers <= 1 or len(blocks) == 1:
        return [fn(a, b) for a, b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), blocks))


def _changepoints(prior: Prior, key: int, ids: np.ndarray, pinned: int | None, never: bool) -> np.ndarray:
    if never:
        return np.full(len(ids), NEVER, dtype=np.int64)
    if pinned is not None:
        return np.full(len(ids), int(pinned), dtype=np.int64)
    return changepoints_from_uniform(prior, uniform(key, ids, 0, CHANGEPOINT))


def _simulate_block(
    procedure: str,
    model: ScenarioModel,
    prior: Prior,
    log_threshold: float,
    key: int,
    ids: np.ndarray,
    nu: np.ndarray,
    limit: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Run detectors on the trials ``ids`` until they stop or reach ``limit``.

    Returns (T, censored); T is 0 for trials that never crossed.
    """
    b = len(ids)
    T = np.zeros(b, dtype=np.int64)
    active = np.flatnonzero(limit > 0)
    state = select(model.start(b), limit > 0)
    log_stat = np.full(len(active), initial_log_stat(procedure, prior))
    t = 0
    while len(active):
        t += 1
        noise = normal(key, ids[active], t)
        x = model.draw(state, t, t > nu[active], noise)
        z = model.increment(state, t, x)
        model.push(state, t, x)
        if procedure == "shiryaev":
            log_stat = shiryaev_log_step(log_stat, t, z, prior)
        else:
            log_stat = sr_log_step(log_stat, z)
        hit = crossed(log_stat, log_threshold)
        T[active[hit]] = t
        keep = ~hit & (limit[active] > t)
        if not keep.all():
            active, log_stat = active[keep], log_stat[keep]
            state = select(state, keep)
    return T, T == 0


def run_trials(
    procedure: str,
    model: ScenarioModel,
    prior: Prior,
    threshold: float,
    trials: int,
    horizon: int | None = None,
    seed: int = 0,
    *,
    key_path: Sequence[int] = (),
    pinned: int | None = None,
    never: bool = False,
    naive: bool = False,
    workers: int = 1,
) -> TrialBatch:
    """Simulate ``trials`` independent detector runs.

    The change point is drawn from the prior, pinned to ``pinned``, or never
    happens (``never=True``, the P_inf regime).  A run ends at the stopping time
    or after ``horizon`` post-change steps (absolute steps under P_inf).  With
    ``naive=True`` a run ends as soon as it is past the change point, which is
    all that is needed to decide whether a false alarm occurred.
    """
    procedure = check_procedure(procedure)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    horizon = _resolve_horizon(horizon, threshold, model)
    key = derive_key(seed, *key_path)
    log_threshold = math.log(threshold)

    def block(a: int, b: int):
        ids = np.arange(a, b, dtype=np.int64)
        nu = _changepoints(prior, key, ids, pinned, never)
        if never:
            limit = np.full(len(ids), horizon, dtype=np.int64)
        elif naive:
            limit = np.maximum(nu, 0)
        else:
            limit = np.maximum(nu, 0) + horizon
        T, censored = _simulate_block(procedure, model, prior, log_threshold, key, ids, nu, limit)
        if naive:
            censored = np.zeros(len(ids), dtype=bool)
        return nu, T, censored

    parts = _map_blocks(block, trials, workers)
    return TrialBatch(*(np.concatenate([p[i] for p in parts]) for i in range(3)))


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(values)), se


def estimate_pfa(
    procedure: str,
    model: ScenarioModel,
    prior: Prior,
    threshold: float,
    trials: int,
    horizon: int | None = None,
    seed: int = 0,
    *,
    mode: str = "survival",
    key_path: Sequence[int] = (),
    workers: int = 1,
) -> MCEstimate:
    """Weighted probability of false alarm P(T <= nu).

    ``mode="survival"`` simulates pre-change data only and averages
    P(nu >= T); a trial still running at the horizon contributes
    P(nu >= horizon) as an upper bound.  Without an explicit horizon the run
    length comes from :func:`pfa_horizon`.  ``mode="naive"`` draws nu, runs the
    changed path and averages the indicator of T <= nu.
    """
    if mode == "naive":
        batch = run_trials(procedure, model, prior, threshold, trials, horizon, seed,
                           key_path=key_path, naive=True, workers=workers)
        v, se = _mean_se(batch.false_alarm.astype(np.float64))
        return MCEstimate(v, se, trials, 0)
    if mode != "survival":
        raise ValueError(f"unknown PFA estimator mode {mode!r}")
    horizon = pfa_horizon(threshold, model, prior) if horizon is None else _resolve_horizon(horizon, threshold, model)
    batch = run_trials(procedure, model, prior, threshold, trials, horizon, seed,
                       key_path=key_path, never=True, workers=workers)
    tail = survival(prior, horizon)
    values = np.where(batch.censored, tail, survival(prior, batch.T))
    v, se = _mean_se(values)
    censored = int(batch.censored.sum()) if tail > PFA_NEGLIGIBLE else 0
    _check_censoring(censored, trials, "PFA")
    return MCEstimate(v, se, trials, censored)


def _check_censoring(censored: int, trials: int, what: str) -> None:
    if censored > MAX_CENSORED * trials:
        raise CensoringExceeded(
            f"{what}: {censored}/{trials} trials censored at the horizon (limit {MAX_CENSORED:.0%})"
        )


def delay_moments(batch: TrialBatch, m_list: Sequence[float]) -> dict[float, MCEstimate]:
    """Self-normalized estimates of E[(T - nu)^m | T > nu] from simulated trials."""
    censored = int(batch.censored.sum())
    _check_censoring(censored, len(batch), "delay")
    surv = batch.survived
    if not surv.any():
        raise NoSurvivors(f"all {len(batch)} trials raised a false alarm")
    d = batch.delay[surv].astype(np.float64)
    out = {}
    for m in m_list:
        if m < 1:
            raise ValueError(f"moment order must be >= 1, got {m}")
        v, se = _mean_se(d**m)
        out[m] = MCEstimate(v, se, len(batch), censored)
    return out


def estimate_delay_moments(
    procedure: str,
    model: ScenarioModel,
    prior: Prior,
    threshold: float,
    m_list: Sequence[float],
    trials: int,
    horizon: int | None = None,
    seed: int = 0,
    *,
    key_path: Sequence[int] = (),
    workers: int = 1,
) -> dict[float, MCEstimate]:
    batch = run_trials(procedure, model, prior, threshold, trials, horizon, seed,
                       key_path=key_path, workers=workers)
    return delay_moments(batch, m_list)


def estimate_conditional_delay(
    procedure: str,
    model: ScenarioModel,
    prior: Prior,
    threshold: float,
    k: int,
    m: float,
    trials: int,
    horizon: int | None = None,
    seed: int = 0,
    *,
    key_path: Sequence[int] = (),
    workers: int = 1,
) -> MCEstimate:
    """E_k[(T - k)^m | T > k] with the change point pinned at k."""
    if k < 0:
        raise ValueError("k must be >= 0")
    batch = run_trials(procedure, model, prior, threshold, trials, horizon, seed,
                       key_path=key_path, pinned=k, workers=workers)
    return delay_moments(batch, [m])[m]


def estimate_sr_mean(
    model: ScenarioModel,
    n: int,
    trials: int,
    seed: int = 0,
    *,
    key_path: Sequence[int] = (),
    workers: int = 1,
) -> MCEstimate:
    """Monte Carlo mean of the SR statistic R_n under the pre-change law."""
    key = derive_key(seed, *key_path)

    def block(a: int, b: int):
        ids = np.arange(a, b, dtype=np.int64)
        z_iter = _llr_steps(model, NEVER, n, key, ids)
        log_r = np.full(len(ids), -math.inf)
        for z in z_iter:
            log_r = sr_log_step(log_r, z)
        return np.exp(log_r)

    v, se = _mean_se(np.concatenate(_map_blocks(block, trials, workers)))
    return MCEstimate(v, se, trials, 0)


# ---------------------------------------------------------------------------
# LLR diagnostics


def _llr_steps(model: ScenarioModel, k: int, steps: int, key: int, ids: np.ndarray) -> Iterator[np.ndarray]:
    """Yield Z_1..Z_steps for a batch of paths with change point k."""
    state = model.start(len(ids))
    for t in range(1, steps + 1):
        x = model.draw(state, t, np.full(len(ids), t > k), normal(key, ids, t))
        z = model.increment(state, t, x)
        model.push(state, t, x)
        yield z


def llr_walks(model: ScenarioModel, k: int, n: int, trials: int, seed: int = 0, *,
              key_path: Sequence[int] = (), workers: int = 1) -> np.ndarray:
    """Matrix (trials, n) of lambda^k_{k+j}, j = 1..n, under P_k."""
    key = derive_key(seed, *key_path)

    def block(a: int, b: int):
        ids = np.arange(a, b, dtype=np.int64)
        Z = np.empty((len(ids), n))
        for t, z in enumerate(_llr_steps(model, k, k + n, key, ids), start=1):
            if t > k:
                Z[:, t - k - 1] = z
        return np.cumsum(Z, axis=1)

    return np.concatenate(_map_blocks(block, trials, workers))


def estimate_llr_deviation(
    model: ScenarioModel,
    k: int,
    n: int,
    eps: float,
    trials: int,
    seed: int = 0,
    *,
    key_path: Sequence[int] = (),
    workers: int = 1,
) -> MCEstimate:
    """P_k(|lambda^k_{k+n} / n - I| > eps)."""
    if n < 1 or not eps > 0:
        raise ValueError("need n >= 1 and eps > 0")
    lam = llr_walks(model, k, n, trials, seed, key_path=key_path, workers=workers)[:, -1]
    hits = (np.abs(lam / n - model.information_rate()) > eps).astype(np.float64)
    v, se = _mean_se(hits)
    return MCEstimate(v, se, trials, 0)


@dataclass(frozen=True)
class UpsilonReport:
    grid: list[int]
    partial_sums: list[float]
    tail_flag: bool
    fraction: float
    r: float
    eps: float
    k: int


def upsilon_grid(n_max: int) -> list[int]:
    grid, g = [], 2
    while g <= n_max:
        grid.append(g)
        g *= 2
    if grid[-1] != n_max:
        grid.append(n_max)
    return grid


def estimate_upsilon_partial(
    model: ScenarioModel,
    k: int,
    r: float,
    eps: float,
    n_max: int,
    trials: int,
    seed: int = 0,
    *,
    fraction: float = 0.25,
    key_path: Sequence[int] = (),
    workers: int = 1,
) -> UpsilonReport:
    """Partial sums of sum_n n^(r-1) P_k(lambda^k_{k+n} / n < I - eps) on a doubling grid.

    ``tail_flag`` is set when the last grid increment is at most ``fraction``
    of the running sum (a divergent harmonic-type tail gives 1/2).
    """
    if r < 1 or n_max < 2 or not eps > 0:
        raise ValueError("need r >= 1, n_max >= 2, eps > 0")
    lam = llr_walks(model, k, n_max, trials, seed, key_path=key_path, workers=workers)
    n = np.arange(1, n_max + 1, dtype=np.float64)
    p_hat = np.mean(lam / n < model.information_rate() - eps, axis=0)
    cum = np.cumsum(n ** (r - 1) * p_hat)
    grid = upsilon_grid(n_max)
    sums = [float(cum[g - 1]) for g in grid]
    last = sums[-1] - (sums[-2] if len(sums) > 1 else 0.0)
    flag = sums[-1] == 0.0 or last <= fraction * sums[-1]
    return UpsilonReport(grid, sums, bool(flag), fraction, r, eps, k)
