"""Change-point priors.

Two families are supported:

* ``geometric``: zero-modified geometric, ``P(nu < 0) = q`` and
  ``P(nu = k) = (1 - q) rho (1 - rho)**k`` for ``k >= 0``.
* ``polynomial``: heavy-tailed, ``P(nu = k)`` proportional to ``(k + 1)**-(1 + s)``
  on ``0 <= k <= K`` and renormalized to total mass ``1 - q``.

The event ``{nu < 0}`` is represented by the sentinel ``-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import DegeneratePrior, InvalidModel
from .streams import CHANGEPOINT, Stream

PriorKind = Literal["geometric", "polynomial"]

DEFAULT_SUPPORT = 10_000


@dataclass(frozen=True)
class Prior:
    kind: PriorKind
    q: float = 0.0
    rho: float | None = None
    s: float | None = None
    K: int | None = None
    _pmf: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)
    _tail: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.q < 1.0:
            raise InvalidModel(f"q must lie in [0, 1), got {self.q}")
        if self.kind == "geometric":
            if self.rho is None or not 0.0 < self.rho < 1.0:
                raise InvalidModel(f"geometric prior needs 0 < rho < 1, got {self.rho}")
        elif self.kind == "polynomial":
            if self.s is None or not self.s > 0:
                raise InvalidModel(f"polynomial prior needs s > 0, got {self.s}")
            K = DEFAULT_SUPPORT if self.K is None else int(self.K)
            if K < 1:
                raise InvalidModel(f"polynomial prior needs K >= 1, got {K}")
            object.__setattr__(self, "K", K)
            w = np.arange(1, K + 2, dtype=np.float64) ** -(1.0 + self.s)
            pmf = (1.0 - self.q) * w / w.sum()
            # tail[n] = P(nu >= n) for n = 0..K+1, summed from the right for accuracy
            tail = np.concatenate([np.cumsum(pmf[::-1])[::-1], [0.0]])
            pmf.setflags(write=False)
            tail.setflags(write=False)
            object.__setattr__(self, "_pmf", pmf)
            object.__setattr__(self, "_tail", tail)
        else:
            raise InvalidModel(f"unknown prior kind {self.kind!r}")

    @classmethod
    def geometric(cls, rho: float, q: float = 0.0) -> "Prior":
        return cls("geometric", q=q, rho=rho)

    @classmethod
    def polynomial(cls, s: float, K: int = DEFAULT_SUPPORT, q: float = 0.0) -> "Prior":
        return cls("polynomial", q=q, s=s, K=K)

    @property
    def support_max(self) -> float:
        """Largest k with positive mass (inf for geometric)."""
        return math.inf if self.kind == "geometric" else self.K


def pmf(prior: Prior, k):
    """P(nu = k) for k >= 0; zero outside the polynomial support."""
    k_arr = np.asarray(k)
    if np.any(k_arr < 0):
        raise ValueError("pmf is defined for k >= 0")
    if prior.kind == "geometric":
        out = (1.0 - prior.q) * prior.rho * (1.0 - prior.rho) ** k_arr.astype(np.float64)
    else:
        idx = np.minimum(k_arr, prior.K + 1).astype(np.int64)
        table = np.append(prior._pmf, 0.0)
        out = table[idx]
    return float(out) if np.ndim(out) == 0 else out


def survival(prior: Prior, n):
    """P(nu >= n) for n >= 0."""
    n_arr = np.asarray(n)
    if np.any(n_arr < 0):
        raise ValueError("survival is defined for n >= 0")
    if prior.kind == "geometric":
        out = (1.0 - prior.q) * (1.0 - prior.rho) ** n_arr.astype(np.float64)
    else:
        out = prior._tail[np.minimum(n_arr, prior.K + 1).astype(np.int64)]
    return float(out) if np.ndim(out) == 0 else out


def log_survival(prior: Prior, n: int) -> float:
    """log P(nu >= n), raising DegeneratePrior when the survival is exactly zero.

    Used wherever the survival divides the Shiryaev statistic.
    """
    if prior.kind == "geometric":
        return math.log1p(-prior.q) + n * math.log1p(-prior.rho)
    S = survival(prior, n)
    if S <= 0.0:
        raise DegeneratePrior(
            f"P(nu >= {n}) = 0: polynomial prior support K={prior.K} exhausted"
        )
    return math.log(S)


def log_pmf(prior: Prior, k: int) -> float:
    if prior.kind == "geometric":
        return math.log1p(-prior.q) + math.log(prior.rho) + k * math.log1p(-prior.rho)
    p = pmf(prior, k)
    return math.log(p) if p > 0 else -math.inf


def tail_exponent(prior: Prior) -> float:
    """Exponential decay rate mu of the survival function (0 for heavy tails)."""
    if prior.kind == "geometric":
        return -math.log1p(-prior.rho)
    return 0.0


@dataclass(frozen=True)
class ConditionCReport:
    mu: float
    log_moment_sum: float | None
    satisfied: bool
    r: float


def log_moment_sum(prior: Prior, r: float) -> float:
    """Sum of pi_k |log pi_k|**r over the support."""
    if prior.kind == "geometric":
        # truncate where the remaining mass is below double precision
        n = int(math.ceil(745.0 / -math.log1p(-prior.rho))) + 1
        p = pmf(prior, np.arange(n))
    else:
        p = prior._pmf
    p = p[p > 0]
    return float(np.sum(p * np.abs(np.log(p)) ** r))


def check_condition_c(prior: Prior, r: float = 1.0) -> ConditionCReport:
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    mu = tail_exponent(prior)
    if mu > 0:
        # exponential tails satisfy the log-moment bound automatically
        return ConditionCReport(mu=mu, log_moment_sum=None, satisfied=True, r=r)
    total = log_moment_sum(prior, r)
    return ConditionCReport(mu=mu, log_moment_sum=total, satisfied=math.isfinite(total), r=r)


def mean_changepoint(prior: Prior) -> float:
    """nu_bar = sum_{j >= 1} j pi_j."""
    if prior.kind == "geometric":
        return (1.0 - prior.q) * (1.0 - prior.rho) / prior.rho
    j = np.arange(prior.K + 1, dtype=np.float64)
    return float(np.sum(j * prior._pmf))


def changepoints_from_uniform(prior: Prior, u) -> np.ndarray:
    """Inverse-CDF map from Uniform(0, 1) draws to change points (-1 for nu < 0)."""
    u = np.asarray(u, dtype=np.float64)
    out = np.full(u.shape, -1, dtype=np.int64)
    pos = u >= prior.q
    v = (u[pos] - prior.q) / (1.0 - prior.q)
    if prior.kind == "geometric":
        k = np.floor(np.log1p(-v) / math.log1p(-prior.rho))
        out[pos] = k.astype(np.int64)
    else:
        cdf = np.cumsum(prior._pmf) / (1.0 - prior.q)
        out[pos] = np.minimum(np.searchsorted(cdf, v, side="right"), prior.K)
    return out


def sample_changepoint(prior: Prior, stream: Stream | np.random.Generator, size=None):
    """Draw nu from the prior.

    ``stream`` is either a :class:`~qcd.streams.Stream` (the draw uses its
    change-point lane) or a numpy ``Generator``.  Returns an int, or an array
    when ``size`` is given.
    """
    if isinstance(stream, Stream):
        if size is not None:
            raise ValueError("a Stream yields one change point; use changepoints_from_uniform")
        u = stream.uniform(0, lane=CHANGEPOINT)
    else:
        u = stream.random(size)
    out = changepoints_from_uniform(prior, u)
    return int(out) if size is None else out
