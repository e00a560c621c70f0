"""Flat ``key=value`` configuration files.

Keys are dotted: ``world.*`` (scene world), ``train.*`` (training),
``metrics.*`` (evaluation), ``dataset.*`` (``n_scenes``), ``missingness.*``
(``rho``, ``mode``) and ``experiment.*`` (grid).  Lists are comma separated,
``#`` starts a comment, blank lines are ignored.  Unknown keys are errors.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from pudet.errors import ConfigurationError
from pudet.experiment import ExperimentSpec, MetricSpec
from pudet.scenegen import MissingnessSpec, WorldConfig
from pudet.trainer import TrainConfig


@dataclass(frozen=True)
class DatasetConfig:
    n_scenes: int = 1000


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricSpec = field(default_factory=MetricSpec)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    missingness: MissingnessSpec = field(default_factory=MissingnessSpec)
    experiment: dict = field(default_factory=dict)

    def experiment_spec(self) -> ExperimentSpec:
        return ExperimentSpec(world=self.world, train=self.train, metrics=self.metrics, **self.experiment)


_SECTIONS = {
    "world": WorldConfig,
    "train": TrainConfig,
    "metrics": MetricSpec,
    "dataset": DatasetConfig,
    "missingness": MissingnessSpec,
}
_EXPERIMENT_KEYS = ("rho_grid", "settings", "seeds", "n_train", "n_test", "hand_tuned_priors")


def _coerce(raw: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if origin is typing.Union or (origin is not None and type(None) in args):
            if raw.lower() in ("none", ""):
                return None
            inner = next(a for a in args if a is not type(None))
            return _coerce(raw, inner, key)
        if origin is tuple:
            item = args[0] if args else str
            return tuple(_coerce(p.strip(), item, key) for p in raw.split(",") if p.strip())
        if hint is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        return raw
    except (ValueError, StopIteration) as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc


def parse_lines(lines) -> dict[str, str]:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_config(values: dict[str, str]) -> RunConfig:
    grouped: dict[str, dict] = {name: {} for name in [*_SECTIONS, "experiment"]}
    for key, raw in values.items():
        section, _, name = key.partition(".")
        if section == "experiment":
            if name not in _EXPERIMENT_KEYS:
                raise ConfigurationError(f"unknown key {key}")
            hint = typing.get_type_hints(ExperimentSpec)[name]
            grouped[section][name] = _coerce(raw, hint, key)
            continue
        cls = _SECTIONS.get(section)
        if cls is None or name not in {f.name for f in fields(cls)}:
            raise ConfigurationError(f"unknown key {key}")
        grouped[section][name] = _coerce(raw, typing.get_type_hints(cls)[name], key)
    world = grouped["world"]
    # a bare feature_dim change resizes the default means
    if "feature_dim" in world:
        d = world["feature_dim"]
        world.setdefault("mu_pos", WorldConfig().mu_pos[:1] * d)
        world.setdefault("mu_neg", WorldConfig().mu_neg[:1] * d)
    try:
        return RunConfig(
            world=WorldConfig(**world),
            train=TrainConfig(**grouped["train"]),
            metrics=MetricSpec(**grouped["metrics"]),
            dataset=DatasetConfig(**grouped["dataset"]),
            missingness=MissingnessSpec(**grouped["missingness"]),
            experiment=grouped["experiment"],
        )
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        values = parse_lines(text.splitlines())
    values.update(overrides or {})
    return build_config(values)


def dump_config(cfg: RunConfig) -> str:
    """Render a config back to ``key=value`` lines (round-trips through load)."""
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name}={_render(getattr(obj, f.name))}")
    for key, value in sorted(cfg.experiment.items()):
        lines.append(f"experiment.{key}={_render(value)}")
    return "\n".join(lines) + "\n"


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)  # shortest round-tripping form
    return str(v)
