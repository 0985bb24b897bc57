"""Flat ``section.key = value`` run configuration.

Every key has a default taken from the owning module's config dataclass.
Lines starting with ``#`` are comments. Unknown keys and unparsable values
are rejected with ``file:line`` diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .corruption import MaskConfig, NoiseConfig
from .model import TERMS, LossWeights, ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class IngestSection:
    gap_seconds: float = 86400.0
    drop_bad_rows: bool = False
    seed: int = 0


@dataclass
class CorruptSection:
    mask_ratio: float = 0.3
    noise: float = 0.0
    point: bool = True
    block: bool = True
    entire: bool = True


@dataclass
class EvalSection:
    knn_k: int = 20
    impute_mode: str = "expected"


_TRAIN_SCALARS = tuple(f.name for f in fields(TrainConfig) if f.name != "weights")


@dataclass
class RunConfig:
    ingest: IngestSection = field(default_factory=IngestSection)
    corrupt: CorruptSection = field(default_factory=CorruptSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def sections(self) -> dict:
        return {"ingest": self.ingest, "corrupt": self.corrupt, "model": self.model,
                "train": self.train, "eval": self.eval}

    def items(self) -> list[tuple[str, object]]:
        """All resolved keys in document order."""
        out = []
        for name, obj in self.sections().items():
            for f in fields(obj):
                if name == "train" and f.name == "weights":
                    for t in TERMS:
                        out.append((f"train.weights.{t}", getattr(self.train.weights, t)))
                else:
                    out.append((f"{name}.{f.name}", getattr(obj, f.name)))
        return out

    def render(self) -> str:
        return "".join(f"{k} = {_show(v)}\n" for k, v in self.items())

    def set(self, key: str, text: str) -> None:
        parts = key.split(".")
        secs = self.sections()
        if parts[0] not in secs:
            raise KeyError(key)
        if len(parts) == 3 and parts[:2] == ["train", "weights"] and parts[2] in TERMS:
            target, attr = self.train.weights, parts[2]
        elif len(parts) == 2 and parts[1] in {f.name for f in fields(secs[parts[0]])} \
                and key != "train.weights":
            target, attr = secs[parts[0]], parts[1]
        else:
            raise KeyError(key)
        setattr(target, attr, _coerce(getattr(target, attr), text))

    def mask_config(self, seed: int) -> MaskConfig:
        c = self.corrupt
        return MaskConfig(c.mask_ratio, seed, c.point, c.block, c.entire)

    def noise_config(self, seed: int) -> NoiseConfig:
        return NoiseConfig(self.corrupt.noise, seed)

    def validate(self) -> None:
        """Re-run the dataclass checks after string assignment."""
        MaskConfig(self.corrupt.mask_ratio)
        NoiseConfig(self.corrupt.noise)
        TrainConfig(**{k: getattr(self.train, k) for k in _TRAIN_SCALARS},
                     weights=LossWeights(**{t: getattr(self.train.weights, t) for t in TERMS}))
        if self.eval.impute_mode not in ("expected", "sample"):
            raise ValueError("eval.impute_mode must be 'expected' or 'sample'")
        if self.eval.knn_k < 1:
            raise ValueError("eval.knn_k must be >= 1")
        if self.model.d < 1:
            raise ValueError("model.d must be >= 1")
        if len(self.model.leaks) != 5 or not all(0.0 < g <= 1.0 for g in self.model.leaks):
            raise ValueError("model.leaks must be five values in (0,1]")


def _show(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_show(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def _coerce(default, text: str):
    t = text.strip()
    if isinstance(default, bool):
        if t.lower() in ("true", "yes", "1", "on"):
            return True
        if t.lower() in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {t!r}")
    if isinstance(default, int):
        return int(t)
    if isinstance(default, float):
        return float(t)
    if isinstance(default, (tuple, list)):
        return tuple(float(x) for x in t.split(",") if x.strip())
    if default is None:
        return None if t.lower() == "none" else float(t)
    return t


def parse_config(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            cfg.set(key, value)
        except KeyError:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}") from None
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: {key}: {e}") from None
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{p}: cannot read: {e.strerror}") from None
    return parse_config(text, str(p))
