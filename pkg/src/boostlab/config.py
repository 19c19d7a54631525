"""Experiment configuration: typed sections, named presets, INI round-trip.

Values are stored as JSON inside an INI file, one ``[section]`` per module::

    [bilevel]
    N = 5
    eta_theta = 0.0001
    mode = "boost"
"""

from __future__ import annotations

import configparser
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

from .bilevel import MODES, BilevelConfig, TrainingError
from .env import EnvConfig, EnvError, GUESS, NEGOTIATION, default_guess_world, default_negotiation_world
from .losses import LossConfig, LossError
from .model import ALGOS
from .synth import SynthConfig, SynthError


class ConfigError(ValueError):
    """Raised with the offending dotted key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class EnvSection:
    kind: str = GUESS
    world_seed: int = 0
    n_items: int = 64
    n_attr: int = 8
    n_categories: int = 8
    flip: float = 0.2
    h_max: int = 20
    walk_away_rounds: int = 3

    def build(self):
        if self.kind == GUESS:
            return default_guess_world(self.world_seed, self.n_items, self.n_attr, self.n_categories,
                                       self.h_max, self.flip)
        return default_negotiation_world(self.h_max, self.walk_away_rounds)


@dataclass(frozen=True)
class DataSection:
    n_trajectories: int = 4000
    noise_range: tuple = (0.1, 0.7)
    train_task_frac: float = 0.6
    val_split: float = 0.3
    low_data_fraction: float = 0.025
    regime: str = "low"


@dataclass(frozen=True)
class SynthSection:
    corrupt_base: float = 0.2
    corrupt_growth: float = 0.05
    agent_noise: float = 0.0
    corrupt_by_distance: bool = False
    synth_per_real: int = 1

    def build(self, rng_seed: int) -> SynthConfig:
        return SynthConfig(self.corrupt_base, self.corrupt_growth, self.agent_noise, rng_seed,
                           self.corrupt_by_distance)


@dataclass(frozen=True)
class ModelSection:
    d: int = 32
    n_layers: int = 1
    encoder: str = "gru"
    bc_epochs: int = 150
    bc_lr: float = 0.01
    bc_optimizer: str = "adam"


@dataclass(frozen=True)
class EvalSection:
    n_runs: int = 64
    beta: float = 1.0
    decode: str = "greedy"


@dataclass(frozen=True)
class DiagSection:
    kl_sigma: float = 1.0
    delta: float = 0.05
    c: float = math.e
    C1: float = 1.0
    knn_k: int = 10
    shift_quantile: float = 0.5
    n_shift_rollouts: int = 64


@dataclass(frozen=True)
class MatrixSection:
    methods: tuple = MODES
    regimes: tuple = ("high", "low")
    algos: tuple = ("mc",)
    seeds: tuple = (0,)


SECTIONS = {
    "env": EnvSection,
    "data": DataSection,
    "synth": SynthSection,
    "model": ModelSection,
    "loss": LossConfig,
    "bilevel": BilevelConfig,
    "eval": EvalSection,
    "diag": DiagSection,
    "matrix": MatrixSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    preset: str = ""
    env: EnvSection = field(default_factory=EnvSection)
    data: DataSection = field(default_factory=DataSection)
    synth: SynthSection = field(default_factory=SynthSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossConfig = field(default_factory=LossConfig)
    bilevel: BilevelConfig = field(default_factory=BilevelConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    diag: DiagSection = field(default_factory=DiagSection)
    matrix: MatrixSection = field(default_factory=MatrixSection)

    def with_values(self, **sections) -> "ExperimentConfig":
        """``cfg.with_values(bilevel={"N": 2})`` replaces individual keys."""
        out = self
        for name, values in sections.items():
            if name in ("seed", "preset"):
                out = replace(out, **{name: values})
                continue
            try:
                out = replace(out, **{name: replace(getattr(out, name), **values)})
            except TypeError as exc:
                raise ConfigError(name, str(exc)) from None
            except (TrainingError, LossError, SynthError, EnvError, ValueError) as exc:
                raise ConfigError(name, str(exc)) from None
        return out


# ---------------------------------------------------------------- presets

def _table_row(kind: str, algo: str, alpha: float, grad_accum: int, k: int) -> ExperimentConfig:
    env = EnvSection() if kind == GUESS else EnvSection(kind=NEGOTIATION, h_max=10)
    data = DataSection(low_data_fraction=0.025 if kind == GUESS else 0.1)
    return ExperimentConfig(
        env=env,
        data=data,
        loss=LossConfig(algo=algo, cql_weight=10.0),
        bilevel=BilevelConfig(N=5, K_psi=k, K_theta=k, K_phi=1, eta_psi=1e-4, eta_theta=1e-4, alpha=alpha,
                              batch_size=8, grad_accum=grad_accum),
    )


def _desk(base: ExperimentConfig) -> ExperimentConfig:
    """Short-budget variant that learns within minutes on one CPU core."""
    return base.with_values(
        env={"n_items": 32, "n_attr": 6} if base.env.kind == GUESS else {},
        bilevel={"N": 2, "K_psi": 500, "K_theta": 500, "K_phi": 20, "eta_psi": 3e-3, "eta_theta": 3e-3,
                 "eta_phi": 3e-4, "grad_accum": 2, "optimizer": "adam"},
    )


PRESETS = {
    "tq-mc": _table_row(GUESS, "mc", 0.0, 16, 20),
    "tq-ilql": _table_row(GUESS, "ilql", 1.0, 16, 20),
    "car-ilql": _table_row(NEGOTIATION, "ilql", 1.0, 2, 32),
    "car-mc": _table_row(NEGOTIATION, "mc", 10.0, 2, 32),
}
for _name in list(PRESETS):
    PRESETS[f"{_name}-desk"] = _desk(PRESETS[_name])
PRESETS["tq-distance-desk"] = PRESETS["tq-ilql-desk"].with_values(synth={"corrupt_by_distance": True})


def preset(name: str, seed: int = 0) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], seed=int(seed), preset=name)


# ---------------------------------------------------------------- INI

def _encode(value) -> str:
    if isinstance(value, tuple):
        value = list(value)
    return json.dumps(value)


def to_ini(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {"seed": _encode(cfg.seed), "preset": _encode(cfg.preset)}
    for name in SECTIONS:
        section = getattr(cfg, name)
        parser[name] = {f.name: _encode(getattr(section, f.name)) for f in fields(section)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _coerce(cls, key: str, raw: str, default):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        raise ConfigError(key, f"value {raw!r} is not valid JSON") from None
    if isinstance(default, tuple) and isinstance(value, list):
        value = tuple(value)
    elif isinstance(default, bool) and not isinstance(value, bool):
        raise ConfigError(key, "expected true or false")
    elif isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float) and value.is_integer():
        value = int(value)
    elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    return value


def from_ini(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse INI text on top of ``base`` (a named ``preset`` key selects the base)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    run = parser["run"] if parser.has_section("run") else {}
    if base is None:
        name = json.loads(run["preset"]) if "preset" in run else ""
        base = preset(name) if name else ExperimentConfig()
    cfg = base
    if "seed" in run:
        cfg = replace(cfg, seed=int(_coerce(None, "run.seed", run["seed"], 0)))
    if "preset" in run:
        cfg = replace(cfg, preset=json.loads(run["preset"]))
    for sect in parser.sections():
        if sect == "run":
            continue
        if sect not in SECTIONS:
            raise ConfigError(sect, "unknown section")
        current = getattr(cfg, sect)
        known = {f.name: getattr(current, f.name) for f in fields(current)}
        values = {}
        for key, raw in parser[sect].items():
            dotted = f"{sect}.{key}"
            if key not in known:
                raise ConfigError(dotted, "unknown key")
            values[key] = _coerce(SECTIONS[sect], dotted, raw, known[key])
        try:
            cfg = replace(cfg, **{sect: replace(current, **values)})
        except (TrainingError, LossError, SynthError, EnvError, ValueError, TypeError) as exc:
            bad = next((k for k in values if k in str(exc)), None)
            raise ConfigError(f"{sect}.{bad}" if bad else sect, str(exc)) from None
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check cross-module preconditions before any work starts."""
    def need(ok: bool, key: str, msg: str):
        if not ok:
            raise ConfigError(key, msg)

    need(cfg.env.kind in (GUESS, NEGOTIATION), "env.kind", f"must be '{GUESS}' or '{NEGOTIATION}'")
    try:
        EnvConfig(cfg.env.h_max)
    except EnvError as exc:
        raise ConfigError("env.h_max", str(exc)) from None
    need(cfg.data.n_trajectories >= 1, "data.n_trajectories", "must be >= 1")
    lo, hi = cfg.data.noise_range
    need(0.0 <= lo <= hi <= 1.0, "data.noise_range", "need 0 <= lo <= hi <= 1")
    need(0.0 < cfg.data.train_task_frac < 1.0, "data.train_task_frac", "must lie in (0, 1)")
    need(0.0 < cfg.data.val_split < 1.0, "data.val_split", "must lie in (0, 1)")
    need(0.0 < cfg.data.low_data_fraction <= 1.0, "data.low_data_fraction", "must lie in (0, 1]")
    need(cfg.data.regime in ("high", "low"), "data.regime", "must be 'high' or 'low'")
    need(cfg.synth.synth_per_real >= 0, "synth.synth_per_real", "must be >= 0")
    need(cfg.model.d >= 1, "model.d", "must be >= 1")
    need(cfg.model.n_layers >= 1, "model.n_layers", "must be >= 1")
    need(cfg.model.encoder == "gru", "model.encoder", "only 'gru' is available")
    need(cfg.model.bc_optimizer in ("adam", "gd"), "model.bc_optimizer", "must be 'adam' or 'gd'")
    need(cfg.loss.algo in ALGOS, "loss.algo", f"must be one of {ALGOS}")
    need(cfg.eval.n_runs >= 1, "eval.n_runs", "must be >= 1")
    need(cfg.eval.decode in ("greedy", "sample"), "eval.decode", "must be 'greedy' or 'sample'")
    need(cfg.diag.kl_sigma > 0, "diag.kl_sigma", "must be > 0")
    need(0.0 < cfg.diag.delta < 1.0, "diag.delta", "must lie in (0, 1)")
    need(1.0 < cfg.diag.c <= math.e, "diag.c", "must lie in (1, e]")
    need(cfg.diag.C1 > 0, "diag.C1", "must be > 0")
    need(cfg.diag.knn_k >= 1, "diag.knn_k", "must be >= 1")
    need(0.0 < cfg.diag.shift_quantile < 1.0, "diag.shift_quantile", "must lie in (0, 1)")
    need(all(m in MODES for m in cfg.matrix.methods), "matrix.methods", f"entries must be in {MODES}")
    need(all(r in ("high", "low") for r in cfg.matrix.regimes), "matrix.regimes", "entries must be 'high' or 'low'")
    need(all(a in ALGOS for a in cfg.matrix.algos), "matrix.algos", f"entries must be in {ALGOS}")
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
