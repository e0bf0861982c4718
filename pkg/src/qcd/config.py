"""Experiment configuration files.

INI syntax as read by :mod:`configparser` (``=`` only, ``#`` comments)::

    # comment
    [section]
    key = value          # values are scalars or comma-separated lists

Sections and keys (defaults in parentheses)::

    [model]     variant (required); theta (1), sigma (1), beta (0.5), signal (1),
                signal_csv, sigma_inf (1), sigma_0 (2), beta_0 (0.5), beta_1 (0), value (0)
    [prior]     kind (required); q (0), rho (0.1), s (1), K (10000),
                schedule_c, schedule_p (rho(alpha) = c / |log alpha|^p when given)
    [detect]    procedures (shiryaev), m (1)
    [budget]    alphas (0.01), thresholds (explicit thresholds replace the alpha grid)
    [mc]        trials (10000), horizon (auto), seed (0), workers (1),
                changepoint (drawn from the prior unless set), pfa_mode (survival)
    [verify]    r (2), eps (0.1), n_grid (100, 200, 400), k_grid (0, 10),
                n_max (1000), trials (10000), fraction (0.25)
    [output]    dir (out), formats (csv, dat)

Only the keys that apply to the chosen model variant and prior kind are read.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, InvalidModel
from .models import ScenarioModel, load_signal_csv, make_model
from .priors import Prior
from .asymptotics import RhoSchedule
from .detectors import PROCEDURES, check_procedure

MODEL_KEYS = {
    "iid-gaussian-mean": ("theta", "sigma"),
    "ar-signal": ("beta", "sigma", "signal", "signal_csv"),
    "variance-invariant": ("sigma_inf", "sigma_0", "theta"),
    "ar1-correlation": ("beta_0", "beta_1"),
    "constant": ("value",),
}
MODEL_DEFAULTS = {
    "theta": 1.0, "sigma": 1.0, "beta": (0.5,), "signal": 1.0, "signal_csv": None,
    "sigma_inf": 1.0, "sigma_0": 2.0, "beta_0": 0.5, "beta_1": 0.0, "value": 0.0,
}


@dataclass
class ModelBlock:
    variant: str
    params: dict = field(default_factory=dict)

    def build(self) -> ScenarioModel:
        params = dict(self.params)
        if self.variant == "variance-invariant":
            params.setdefault("theta", 0.0)
        csv_path = params.pop("signal_csv", None)
        if csv_path:
            params["signal"] = load_signal_csv(csv_path)
        return make_model(self.variant, **params)


@dataclass
class PriorBlock:
    kind: str
    q: float = 0.0
    rho: float = 0.1
    s: float = 1.0
    K: int = 10_000
    schedule_c: float | None = None
    schedule_p: float | None = None

    def build(self) -> Prior:
        if self.kind == "geometric":
            return Prior.geometric(self.rho, q=self.q)
        return Prior.polynomial(self.s, K=self.K, q=self.q)

    def schedule(self) -> RhoSchedule | None:
        if self.schedule_c is None and self.schedule_p is None:
            return None
        return RhoSchedule(self.schedule_c or 1.0, self.schedule_p or 1.0)


@dataclass
class DetectBlock:
    procedures: tuple[str, ...] = ("shiryaev",)
    m: tuple[float, ...] = (1,)


@dataclass
class BudgetBlock:
    alphas: tuple[float, ...] = (0.01,)
    thresholds: tuple[float, ...] | None = None


@dataclass
class MCBlock:
    trials: int = 10_000
    horizon: int | None = None
    seed: int = 0
    workers: int = 1
    changepoint: int | None = None
    pfa_mode: str = "survival"


@dataclass
class VerifyBlock:
    r: float = 2.0
    eps: float = 0.1
    n_grid: tuple[int, ...] = (100, 200, 400)
    k_grid: tuple[int, ...] = (0, 10)
    n_max: int = 1000
    trials: int = 10_000
    fraction: float = 0.25


@dataclass
class OutputBlock:
    dir: str = "out"
    formats: tuple[str, ...] = ("csv", "dat")


@dataclass
class ExperimentConfig:
    model: ModelBlock
    prior: PriorBlock
    detect: DetectBlock = field(default_factory=DetectBlock)
    budget: BudgetBlock = field(default_factory=BudgetBlock)
    mc: MCBlock = field(default_factory=MCBlock)
    verify: VerifyBlock = field(default_factory=VerifyBlock)
    output: OutputBlock = field(default_factory=OutputBlock)


# ---------------------------------------------------------------------------
# parsing

_BLOCKS = {
    "detect": DetectBlock, "budget": BudgetBlock, "mc": MCBlock,
    "verify": VerifyBlock, "output": OutputBlock,
}
_SECTIONS = ("model", "prior", *_BLOCKS)


def _read_items(text: str) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",),
        interpolation=None, default_section="\0",
    )
    cp.optionxform = str  # keys are case-sensitive (K)
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"line {exc.lineno}: key outside of any section") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"line {lineno}: expected 'key = value', got {line}") from None
    sections = {}
    for name in cp.sections():
        if name.lower() not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        sections[name.lower()] = dict(cp[name])
    return sections


class _Fields:
    """Typed accessors over one section that name the section and key on failure."""

    def __init__(self, name: str, items: dict[str, str]):
        self.name = name
        self.items = items
        self.used: set[str] = set()

    def _fail(self, key: str, msg: str) -> ConfigError:
        return ConfigError(f"[{self.name}] {key}: {msg}")

    def has(self, key: str) -> bool:
        return self.items.get(key, "") != ""

    def raw(self, key: str) -> str:
        self.used.add(key)
        return self.items[key]

    def get(self, key: str, conv, default):
        if not self.has(key):
            self.used.add(key)
            return default
        try:
            return conv(self.raw(key))
        except (ValueError, TypeError) as exc:
            raise self._fail(key, str(exc)) from None

    def get_list(self, key: str, conv, default):
        if not self.has(key):
            self.used.add(key)
            return default
        parts = [p.strip() for p in self.raw(key).split(",") if p.strip()]
        try:
            return tuple(conv(p) for p in parts)
        except (ValueError, TypeError) as exc:
            raise self._fail(key, str(exc)) from None

    def check(self, key: str, ok: bool, msg: str) -> None:
        if not ok:
            raise self._fail(key, msg)

    def finish(self) -> None:
        extra = sorted(set(self.items) - self.used)
        if extra:
            raise self._fail(extra[0], "unknown key")


def _int(s: str) -> int:
    try:
        return int(s, 0)
    except ValueError:
        v = float(s)
        if not v.is_integer():
            raise ValueError(f"expected an integer, got {s!r}") from None
        return int(v)


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {s!r}")
    return v


def _number(s: str) -> float:
    v = _float(s)
    return int(v) if v.is_integer() else v


def parse_config(text: str, base_dir: str | Path | None = None) -> ExperimentConfig:
    sections = _read_items(text)
    for required in ("model", "prior"):
        if required not in sections:
            raise ConfigError(f"missing required section [{required}]")

    f = _Fields("model", sections["model"])
    f.check("variant", f.has("variant"), "required")
    variant = f.raw("variant")
    f.check("variant", variant in MODEL_KEYS, f"unknown variant; choose from {sorted(MODEL_KEYS)}")
    params = {}
    for key in MODEL_KEYS[variant]:
        if key == "beta":
            params[key] = f.get_list(key, _float, MODEL_DEFAULTS[key])
        elif key == "signal_csv":
            if f.has(key):
                path = Path(f.raw(key))
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                params[key] = str(path)
        elif key == "signal" and f.has(key) and "," in f.items[key]:
            params[key] = f.get_list(key, _float, None)
        elif f.has(key):
            params[key] = f.get(key, _float, None)
    f.check("signal", not ("signal" in params and "signal_csv" in params), "give signal or signal_csv, not both")
    f.finish()
    model = ModelBlock(variant, params)
    try:
        model.build()
    except (InvalidModel, OSError, ValueError) as exc:
        raise ConfigError(f"[model] {exc}") from None

    f = _Fields("prior", sections["prior"])
    f.check("kind", f.has("kind"), "required")
    kind = f.raw("kind")
    f.check("kind", kind in ("geometric", "polynomial"), "kind must be geometric or polynomial")
    prior = PriorBlock(kind=kind, q=f.get("q", _float, 0.0))
    if kind == "geometric":
        prior.rho = f.get("rho", _float, 0.1)
        prior.schedule_c = f.get("schedule_c", _float, None)
        prior.schedule_p = f.get("schedule_p", _float, None)
    else:
        prior.s = f.get("s", _float, 1.0)
        prior.K = f.get("K", _int, 10_000)
    f.finish()
    try:
        prior.build()
        prior.schedule()
    except (InvalidModel, ValueError) as exc:
        raise ConfigError(f"[prior] {exc}") from None

    blocks = {}
    for name, cls in _BLOCKS.items():
        f = _Fields(name, sections.get(name, {}))
        blocks[name] = _parse_block(f, cls)
        f.finish()
    return ExperimentConfig(model=model, prior=prior, **blocks)


def _parse_block(f: _Fields, cls):
    d = cls()
    if cls is DetectBlock:
        d.procedures = f.get_list("procedures", str, d.procedures)
        for p in d.procedures:
            f.check("procedures", p in PROCEDURES or p == "sr", f"unknown procedure {p!r}")
        d.procedures = tuple(check_procedure(p) for p in d.procedures)
        d.m = f.get_list("m", _number, d.m)
        f.check("m", bool(d.m) and all(m >= 1 for m in d.m), "moment orders must be >= 1")
    elif cls is BudgetBlock:
        d.alphas = f.get_list("alphas", _float, d.alphas)
        f.check("alphas", bool(d.alphas) and all(0 < a < 1 for a in d.alphas), "alphas must lie in (0, 1)")
        d.thresholds = f.get_list("thresholds", _float, None)
        if d.thresholds is not None:
            f.check("thresholds", all(t > 0 for t in d.thresholds), "thresholds must be positive")
    elif cls is MCBlock:
        d.trials = f.get("trials", _int, d.trials)
        f.check("trials", d.trials >= 1, "must be >= 1")
        d.horizon = f.get("horizon", _int, None)
        f.check("horizon", d.horizon is None or d.horizon >= 1, "must be >= 1")
        d.seed = f.get("seed", _int, 0)
        f.check("seed", 0 <= d.seed < 2**64, "must be an unsigned 64-bit integer")
        d.workers = f.get("workers", _int, 1)
        f.check("workers", d.workers >= 1, "must be >= 1")
        d.changepoint = f.get("changepoint", _int, None)
        f.check("changepoint", d.changepoint is None or d.changepoint >= 0, "must be >= 0")
        d.pfa_mode = f.get("pfa_mode", str, d.pfa_mode)
        f.check("pfa_mode", d.pfa_mode in ("survival", "naive"), "must be survival or naive")
    elif cls is VerifyBlock:
        d.r = f.get("r", _float, d.r)
        f.check("r", d.r >= 1, "must be >= 1")
        d.eps = f.get("eps", _float, d.eps)
        f.check("eps", d.eps > 0, "must be positive")
        d.n_grid = f.get_list("n_grid", _int, d.n_grid)
        f.check("n_grid", bool(d.n_grid) and all(n >= 1 for n in d.n_grid), "entries must be >= 1")
        d.k_grid = f.get_list("k_grid", _int, d.k_grid)
        f.check("k_grid", bool(d.k_grid) and all(k >= 0 for k in d.k_grid), "entries must be >= 0")
        d.n_max = f.get("n_max", _int, d.n_max)
        f.check("n_max", d.n_max >= 2, "must be >= 2")
        d.trials = f.get("trials", _int, d.trials)
        f.check("trials", d.trials >= 1, "must be >= 1")
        d.fraction = f.get("fraction", _float, d.fraction)
        f.check("fraction", 0 < d.fraction < 1, "must lie in (0, 1)")
    elif cls is OutputBlock:
        d.dir = f.get("dir", str, d.dir)
        d.formats = f.get_list("formats", str, d.formats)
        f.check("formats", set(d.formats) <= {"csv", "dat"}, "formats are csv and dat")
    return d


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)


# ---------------------------------------------------------------------------
# serialization


def _val(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_val(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize so that ``parse_config(dump_config(c)) == c``."""
    lines = ["[model]", f"variant = {cfg.model.variant}"]
    for k, v in cfg.model.params.items():
        if v is not None:
            lines.append(f"{k} = {_val(v)}")
    p = cfg.prior
    lines += ["", "[prior]", f"kind = {p.kind}", f"q = {_val(p.q)}"]
    if p.kind == "geometric":
        lines.append(f"rho = {_val(p.rho)}")
        if p.schedule_c is not None:
            lines.append(f"schedule_c = {_val(p.schedule_c)}")
        if p.schedule_p is not None:
            lines.append(f"schedule_p = {_val(p.schedule_p)}")
    else:
        lines += [f"s = {_val(p.s)}", f"K = {p.K}"]
    for name in _BLOCKS:
        block = getattr(cfg, name)
        lines += ["", f"[{name}]"]
        for fl in fields(block):
            v = getattr(block, fl.name)
            if v is not None:
                lines.append(f"{fl.name} = {_val(v)}")
    return "\n".join(lines) + "\n"
