"""Pipeline configuration: one JSON document, defaults merged, unknown keys rejected."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .attack import PoisonConfig, TriggerConfig
from .audio import StftParams
from .detect import DetectionConfig, ScoreWeights
from .nn.training import TrainConfig


class ConfigError(ValueError):
    pass


def _dc_defaults(cls, drop=()) -> dict:
    d = asdict(cls())
    for k in drop:
        d.pop(k)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# Training is sized for the desk-scale corpus: five folds of ~3k oversampled
# pairs at 12 epochs train in about 10 minutes on one CPU core, inside the
# end-to-end time budget.
PIPELINE_TRAIN = {"epochs": 12, "patience": 4}


def default_config() -> dict:
    train = _dc_defaults(TrainConfig, drop=("seed",))
    train.update(PIPELINE_TRAIN)
    return {
        "seed": 0,
        "out": "run",
        "workers": 1,
        "corpus": {"source": None, "n_accounts": 200, "synth_seed": 7,
                   "duration_seconds": 3.0},
        "partition": {"p_pbsm": 0.05, "p_tdpa": 0.05, "p_attacker": 0.05},
        "stft": _dc_defaults(StftParams),
        "trigger": _dc_defaults(TriggerConfig),
        "poison": _dc_defaults(PoisonConfig),
        "detection": _dc_defaults(DetectionConfig),
        "weights": _dc_defaults(ScoreWeights),
        "train": train,
        "eval": {"test_fraction": 0.3},
    }


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where} must be an object")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    """``a.b=value``; the value is read as JSON, falling back to a plain string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def _nest(keys, value) -> dict:
    d = value
    for k in reversed(keys):
        d = {k: d}
    return d


def _build(cls, section: dict, **extra):
    names = {f.name for f in fields(cls)}
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items() if k in names}
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


@dataclass(frozen=True)
class PipelineConfig:
    raw: dict

    @classmethod
    def load(cls, path=None, overrides=(), **top) -> "PipelineConfig":
        """Defaults, then the JSON file at `path`, then dotted overrides, then `top` keys."""
        cfg = default_config()
        if path is not None:
            try:
                user = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
            if not isinstance(user, dict):
                raise ConfigError(f"{path}: top level must be an object")
            cfg = _merge(cfg, user)
        for item in overrides:
            keys, value = parse_override(item)
            cfg = _merge(cfg, _nest(keys, value))
        cfg = _merge(cfg, {k: v for k, v in top.items() if v is not None})
        out = cls(cfg)
        out.validate()
        return out

    def validate(self) -> None:
        r = self.raw
        if not isinstance(r["seed"], int) or r["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(r["workers"], int) or r["workers"] < 1:
            raise ConfigError("workers must be a positive integer")
        if not 0.0 < r["eval"]["test_fraction"] < 1.0:
            raise ConfigError("eval.test_fraction must lie in (0, 1)")
        c = r["corpus"]
        if c["source"] is None and (not isinstance(c["n_accounts"], int) or c["n_accounts"] < 20):
            raise ConfigError("corpus.n_accounts must be an integer >= 20")
        p = r["partition"]
        if any(not 0.0 <= v < 1.0 for v in p.values()) or sum(p.values()) >= 1.0:
            raise ConfigError("partition fractions must lie in [0, 1) and sum below 1")
        # constructing every section runs its own checks
        self.stft, self.trigger, self.poison, self.detection, self.weights, self.train

    def section(self, name: str) -> dict:
        return copy.deepcopy(self.raw[name])

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def stft(self) -> StftParams:
        return _build(StftParams, self.raw["stft"])

    @property
    def trigger(self) -> TriggerConfig:
        return _build(TriggerConfig, self.raw["trigger"])

    @property
    def poison(self) -> PoisonConfig:
        return _build(PoisonConfig, self.raw["poison"])

    @property
    def detection(self) -> DetectionConfig:
        return _build(DetectionConfig, self.raw["detection"])

    @property
    def weights(self) -> ScoreWeights:
        return _build(ScoreWeights, self.raw["weights"])

    @property
    def train(self) -> TrainConfig:
        return _build(TrainConfig, self.raw["train"], seed=self.seed)

    def to_json(self) -> dict:
        return copy.deepcopy(self.raw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.raw, indent=2, sort_keys=True) + "\n")
