"""Scenario models: observation samplers and log-likelihood-ratio increments.

Each model describes the pre-change and post-change conditional laws of
``X_t`` given ``X_1..X_{t-1}``.  Models are immutable; simulation state (lagged
observations, running moments) lives in a plain dict of per-trial arrays so a
batch of trials can be advanced in lockstep and compacted with a boolean mask.

The stepping protocol, for ``t = 1, 2, ...``::

    x = model.draw(state, t, post, noise)   # post: bool array, t > nu
    z = model.increment(state, t, x)        # Z_t = log p0(x|past) / pinf(x|past)
    model.push(state, t, x)
"""

from __future__ import annotations

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar, Sequence

import numpy as np

from .errors import InvalidIndex, InvalidModel
from .streams import Stream, normal

State = dict


class ScenarioModel(ABC):
    variant: ClassVar[str]

    @abstractmethod
    def information_rate(self) -> float:
        """Almost-sure limit of lambda^k_{k+n} / n under the post-change law."""

    @abstractmethod
    def start(self, batch: int) -> State: ...

    @abstractmethod
    def draw(self, state: State, t: int, post: np.ndarray, noise: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def increment(self, state: State, t: int, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def push(self, state: State, t: int, x: np.ndarray) -> None: ...

    @abstractmethod
    def _direct_increment(self, history: np.ndarray, i: int) -> float: ...

    def params(self) -> dict:
        """Constructor parameters, as used in experiment configs."""
        return {}


def select(state: State, mask: np.ndarray) -> State:
    """Keep only the trials where ``mask`` is true."""
    return {k: v[mask] for k, v in state.items()}


@dataclass(frozen=True)
class IIDGaussianMean(ScenarioModel):
    """iid N(0, sigma^2) before the change, N(theta, sigma^2) after."""

    theta: float = 1.0
    sigma: float = 1.0
    variant: ClassVar[str] = "iid-gaussian-mean"

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise InvalidModel(f"sigma must be positive, got {self.sigma}")
        if self.theta == 0:
            raise InvalidModel("theta = 0 gives identical pre/post laws")

    def information_rate(self) -> float:
        return self.theta**2 / (2.0 * self.sigma**2)

    def start(self, batch: int) -> State:
        return {}

    def draw(self, state, t, post, noise):
        return self.sigma * noise + np.where(post, self.theta, 0.0)

    def increment(self, state, t, x):
        return (self.theta * x - 0.5 * self.theta**2) / self.sigma**2

    def push(self, state, t, x) -> None:
        pass

    def _direct_increment(self, history, i):
        x = history[i - 1]
        return (self.theta * x - 0.5 * self.theta**2) / self.sigma**2

    def params(self):
        return {"theta": self.theta, "sigma": self.sigma}


@dataclass(frozen=True)
class ARSignal(ScenarioModel):
    """Deterministic signal appearing in AR(p) Gaussian noise.

    The likelihood ratio works on the whitened residual
    ``Xr_n = X_n - sum_{i <= min(p, n-1)} beta_i X_{n-i}``, which is
    ``N(0, sigma^2)`` before the change and ``N(Sr_n, sigma^2)`` after it, with
    ``Sr_n`` the signal put through the same filter.  Samples are drawn from
    exactly those conditional laws; lags before time 1 are zero.
    """

    beta: tuple[float, ...] = (0.5,)
    sigma: float = 1.0
    signal: float | tuple[float, ...] = 1.0
    variant: ClassVar[str] = "ar-signal"
    _sr: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        object.__setattr__(self, "beta", beta)
        if len(beta) == 0:
            raise InvalidModel("ar-signal needs at least one AR coefficient")
        if math.isclose(sum(beta), 1.0, rel_tol=0, abs_tol=1e-12):
            raise InvalidModel("sum of AR coefficients must differ from 1")
        if self.sigma <= 0:
            raise InvalidModel(f"sigma must be positive, got {self.sigma}")
        if not np.isscalar(self.signal):
            table = tuple(float(v) for v in self.signal)
            if not table:
                raise InvalidModel("empty signal table")
            object.__setattr__(self, "signal", table)
            S = np.asarray(table)
            sr = S.copy()
            for i, b in enumerate(beta, start=1):
                sr[i:] -= b * S[:-i] if i < len(S) else 0.0
            object.__setattr__(self, "_sr", sr)
        elif self.signal == 0:
            raise InvalidModel("signal must be nonzero")

    @property
    def p(self) -> int:
        return len(self.beta)

    def filtered_signal(self, n: int) -> float:
        """Sr_n for n >= 1, using the truncated filter for n <= p."""
        if self._sr is None:
            return self.signal * (1.0 - sum(self.beta[: min(self.p, n - 1)]))
        if n > len(self._sr):
            raise InvalidIndex(f"signal table has {len(self._sr)} entries, asked for n={n}")
        return float(self._sr[n - 1])

    def information_rate(self) -> float:
        if self._sr is None:
            return self.signal**2 * (1.0 - sum(self.beta)) ** 2 / (2.0 * self.sigma**2)
        # asymptotic energy estimated from the steady-state part of the table
        tail = self._sr[self.p :] if len(self._sr) > self.p else self._sr
        return float(np.mean(tail**2)) / (2.0 * self.sigma**2)

    def start(self, batch):
        return {"lags": np.zeros((batch, self.p))}

    def _predict(self, lags):
        return lags @ np.asarray(self.beta)

    def draw(self, state, t, post, noise):
        return self._predict(state["lags"]) + self.sigma * noise + np.where(post, self.filtered_signal(t), 0.0)

    def increment(self, state, t, x):
        resid = x - self._predict(state["lags"])
        sr = self.filtered_signal(t)
        return (sr * resid - 0.5 * sr**2) / self.sigma**2

    def push(self, state, t, x):
        lags = state["lags"]
        state["lags"] = np.concatenate([np.asarray(x).reshape(-1, 1), lags[:, :-1]], axis=1)

    def residual(self, history: np.ndarray, i: int) -> float:
        lags = [history[i - 1 - j] for j in range(1, min(self.p, i - 1) + 1)]
        return float(history[i - 1] - sum(b * v for b, v in zip(self.beta, lags)))

    def _direct_increment(self, history, i):
        sr = self.filtered_signal(i)
        return (sr * self.residual(history, i) - 0.5 * sr**2) / self.sigma**2

    def params(self):
        return {"beta": list(self.beta), "sigma": self.sigma, "signal": self.signal}


@dataclass(frozen=True)
class VarianceInvariant(ScenarioModel):
    """Change of variance sigma_inf -> sigma_0 with an unknown common mean.

    The likelihood ratio uses only the shift-invariant statistics of the data,
    so ``theta`` affects the sampler but never the detector.  The increment is
    ``(q^2 - 1) / (2 sigma_0^2) * V_t - log q`` for ``t >= 2`` (zero at t = 1),
    with ``q = sigma_0 / sigma_inf`` and ``V_t`` the growth of the running sum
    of squared deviations from the mean.
    """

    sigma_inf: float = 1.0
    sigma_0: float = 2.0
    theta: float = 0.0
    variant: ClassVar[str] = "variance-invariant"

    def __post_init__(self) -> None:
        if self.sigma_inf <= 0 or self.sigma_0 <= 0:
            raise InvalidModel("variances must be positive")
        if self.sigma_0 == self.sigma_inf:
            raise InvalidModel("sigma_0 must differ from sigma_inf")

    @property
    def ratio(self) -> float:
        return self.sigma_0 / self.sigma_inf

    def information_rate(self) -> float:
        q = self.ratio
        return (q * q - 1.0) / 2.0 - math.log(q)

    def _z(self, V):
        q = self.ratio
        return (q * q - 1.0) / (2.0 * self.sigma_0**2) * V - math.log(q)

    def start(self, batch):
        # Welford accumulators on data shifted by X_1
        return {"shift": np.zeros(batch), "mean": np.zeros(batch), "m2": np.zeros(batch)}

    def draw(self, state, t, post, noise):
        return self.theta + np.where(post, self.sigma_0, self.sigma_inf) * noise

    def _welford(self, state, t, x):
        y = x - state["shift"] if t > 1 else np.zeros_like(x)
        delta = y - state["mean"]
        mean = state["mean"] + delta / t
        return y, mean, state["m2"] + delta * (y - mean)

    def increment(self, state, t, x):
        x = np.asarray(x, dtype=np.float64)
        if t == 1:
            return np.zeros_like(x)
        _, _, m2 = self._welford(state, t, x)
        return self._z(m2 - state["m2"])

    def push(self, state, t, x):
        x = np.asarray(x, dtype=np.float64)
        if t == 1:
            state["shift"] = x.copy()
        _, state["mean"], state["m2"] = self._welford(state, t, x)

    def _direct_increment(self, history, i):
        if i == 1:
            return 0.0
        h = np.asarray(history[:i], dtype=np.float64)
        ss_i = float(np.sum((h - h.mean()) ** 2))
        ss_prev = float(np.sum((h[:-1] - h[:-1].mean()) ** 2))
        return float(self._z(ss_i - ss_prev))

    def params(self):
        return {"sigma_inf": self.sigma_inf, "sigma_0": self.sigma_0, "theta": self.theta}


@dataclass(frozen=True)
class AR1Correlation(ScenarioModel):
    """AR(1) with unit innovations whose coefficient switches beta_0 -> beta_1."""

    beta_0: float = 0.5
    beta_1: float = 0.0
    variant: ClassVar[str] = "ar1-correlation"

    def __post_init__(self) -> None:
        for name, b in (("beta_0", self.beta_0), ("beta_1", self.beta_1)):
            if not -1.0 < b < 1.0:
                raise InvalidModel(f"{name} must lie in (-1, 1) for stability, got {b}")
        if self.beta_0 == self.beta_1:
            raise InvalidModel("beta_0 must differ from beta_1")

    def information_rate(self) -> float:
        return (self.beta_1 - self.beta_0) ** 2 / (2.0 * (1.0 - self.beta_1**2))

    def start(self, batch):
        return {"prev": np.zeros(batch)}

    def draw(self, state, t, post, noise):
        return np.where(post, self.beta_1, self.beta_0) * state["prev"] + noise

    def _g(self, y, x):
        return 0.5 * ((y - self.beta_0 * x) ** 2 - (y - self.beta_1 * x) ** 2)

    def increment(self, state, t, x):
        return self._g(x, state["prev"])

    def push(self, state, t, x):
        state["prev"] = np.asarray(x, dtype=np.float64).copy()

    def _direct_increment(self, history, i):
        prev = history[i - 2] if i >= 2 else 0.0
        return float(self._g(history[i - 1], prev))

    def params(self):
        return {"beta_0": self.beta_0, "beta_1": self.beta_1}


@dataclass(frozen=True)
class ConstantLLR(ScenarioModel):
    """Degenerate test stream: every increment equals ``value`` before and after the change.

    ``value = 0`` gives the likelihood ratio L = 1 identically.
    """

    value: float = 0.0
    variant: ClassVar[str] = "constant"

    def __post_init__(self) -> None:
        if self.value < 0:
            raise InvalidModel("constant stream needs a nonnegative increment")

    def information_rate(self) -> float:
        return self.value

    def start(self, batch):
        return {}

    def draw(self, state, t, post, noise):
        return np.zeros_like(noise)

    def increment(self, state, t, x):
        return np.full(np.shape(x), self.value)

    def push(self, state, t, x):
        pass

    def _direct_increment(self, history, i):
        return self.value

    def params(self):
        return {"value": self.value}


MODELS: dict[str, type[ScenarioModel]] = {
    cls.variant: cls
    for cls in (IIDGaussianMean, ARSignal, VarianceInvariant, AR1Correlation, ConstantLLR)
}


def make_model(variant: str, **params) -> ScenarioModel:
    try:
        cls = MODELS[variant]
    except KeyError:
        raise InvalidModel(f"unknown model variant {variant!r}; choose from {sorted(MODELS)}") from None
    if cls is ARSignal and "beta" in params:
        params["beta"] = tuple(np.atleast_1d(params["beta"]))
    return cls(**params)


def load_signal_csv(path: str | Path) -> tuple[float, ...]:
    """Read a one-column CSV of signal values S_1, S_2, ... (header optional)."""
    values = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                values.append(float(row[0]))
            except ValueError:
                if values:
                    raise
    return tuple(values)


# ---------------------------------------------------------------------------
# Paths


@dataclass(frozen=True)
class PathRecord:
    observations: np.ndarray
    changepoint: int
    model: str

    def __len__(self) -> int:
        return len(self.observations)


def simulate_observations(
    model: ScenarioModel, nu: np.ndarray, N: int, key: int, trials: np.ndarray
) -> np.ndarray:
    """Observation matrix (len(trials), N) for change points ``nu`` (-1 allowed)."""
    nu = np.asarray(nu)
    trials = np.asarray(trials)
    noise = normal(key, trials[:, None], np.arange(1, N + 1)[None, :])
    state = model.start(len(trials))
    X = np.empty((len(trials), N))
    for t in range(1, N + 1):
        x = model.draw(state, t, t > nu, noise[:, t - 1])
        model.push(state, t, x)
        X[:, t - 1] = x
    return X


def generate_path(model: ScenarioModel, nu: int, N: int, stream: Stream) -> PathRecord:
    if N < 1:
        raise ValueError("N must be >= 1")
    if nu < -1:
        raise ValueError("nu must be >= -1")
    X = simulate_observations(model, np.array([nu]), N, stream.key, np.array([stream.trial]))
    return PathRecord(X[0], int(nu), model.variant)


def increments(model: ScenarioModel, X: np.ndarray) -> np.ndarray:
    """Online LLR increments Z_1..Z_N for one path (1-d) or a batch (2-d, rows = paths)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    state = model.start(X2.shape[0])
    Z = np.empty_like(X2)
    for t in range(1, X2.shape[1] + 1):
        x = X2[:, t - 1]
        Z[:, t - 1] = model.increment(state, t, x)
        model.push(state, t, x)
    return Z[0] if single else Z


def llr_increment(model: ScenarioModel, history: Sequence[float], i: int) -> float:
    """Z_i computed directly from the prefix X_1..X_i (1-based i)."""
    h = np.asarray(history, dtype=np.float64)
    if not 1 <= i <= len(h):
        raise InvalidIndex(f"index {i} outside history of length {len(h)}")
    return float(model._direct_increment(h, i))


def llr_path(model: ScenarioModel, path: PathRecord | np.ndarray, k: int) -> np.ndarray:
    """Partial sums lambda^k_{k+n} for n = 1..N-k."""
    X = path.observations if isinstance(path, PathRecord) else np.asarray(path)
    if not 0 <= k < len(X):
        raise InvalidIndex(f"k={k} must satisfy 0 <= k < {len(X)}")
    return np.cumsum(increments(model, X)[k:])


def information_rate(model: ScenarioModel) -> float:
    return model.information_rate()
