"""Synthetic detection scenes, anchor proposals and label-missingness protocols.

A proposal's features are drawn around ``mu_neg + (mu_pos - mu_neg) * iou``
where ``iou`` is its best overlap with *any* true object, so an object whose
annotation was discarded still looks like an object.  Only the proposal's
role (labeled-positive or other) depends on which labels survived.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from pudet.errors import ConfigurationError, InvalidInputError

TEST_SEED_OFFSET = 10**6
TEST_ID_OFFSET = 10**6

# stream tags mixed into per-scene seeds
_SCENE_STREAM = 1
_FEATURE_STREAM = 2


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidInputError(f"degenerate box {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class ObjectInstance:
    box: Box
    labeled: bool = True


@dataclass(frozen=True)
class Scene:
    id: int
    extent: tuple[float, float]
    objects: tuple[ObjectInstance, ...] = ()

    def boxes(self, labeled_only: bool = False) -> np.ndarray:
        rows = [o.box.as_array() for o in self.objects if o.labeled or not labeled_only]
        return np.array(rows).reshape(-1, 4)

    @property
    def labeled_flags(self) -> np.ndarray:
        return np.array([o.labeled for o in self.objects], dtype=bool)


@dataclass(frozen=True)
class Proposal:
    box: Box
    features: np.ndarray
    max_iou_true: float
    max_iou_labeled: float
    role: str


@dataclass(frozen=True)
class ProposalSet:
    """Column-oriented proposals of one scene.

    ``features`` is ``None`` until :func:`featurize_and_assign` fills it.
    """

    scene_id: int
    boxes: np.ndarray
    features: np.ndarray | None = None
    max_iou_true: np.ndarray | None = None
    max_iou_labeled: np.ndarray | None = None
    labeled_positive: np.ndarray | None = None

    def __len__(self):
        return len(self.boxes)

    def __getitem__(self, i) -> Proposal:
        return Proposal(
            Box(*self.boxes[i]),
            self.features[i],
            float(self.max_iou_true[i]),
            float(self.max_iou_labeled[i]),
            "labeled-positive" if self.labeled_positive[i] else "other",
        )


@dataclass(frozen=True)
class MissingnessSpec:
    rho: float = 0.0
    mode: str = "per-annotation"

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigurationError(f"rho {self.rho} outside [0, 1]")
        if self.mode not in ("per-annotation", "per-image"):
            raise ConfigurationError(f"unknown missingness mode {self.mode!r}")


def _default_mu_pos():
    return (1.0,) * 8


def _default_mu_neg():
    # symmetric about the origin so the untrained bias sits between the classes
    return (-1.0,) * 8


@dataclass(frozen=True)
class WorldConfig:
    feature_dim: int = 8
    mu_pos: tuple[float, ...] = field(default_factory=_default_mu_pos)
    mu_neg: tuple[float, ...] = field(default_factory=_default_mu_neg)
    feature_noise: float = 0.5
    objects_min: int = 1
    objects_max: int = 6
    size_min: float = 12.0
    size_max: float = 32.0
    extent_width: float = 100.0
    extent_height: float = 100.0
    grid_rows: int = 8
    grid_cols: int = 8
    anchor_sizes: tuple[float, ...] = (16.0, 28.0)
    positive_iou: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mu_pos", tuple(float(v) for v in self.mu_pos))
        object.__setattr__(self, "mu_neg", tuple(float(v) for v in self.mu_neg))
        object.__setattr__(self, "anchor_sizes", tuple(float(v) for v in self.anchor_sizes))
        if self.feature_dim < 1:
            raise ConfigurationError("feature_dim must be positive")
        if len(self.mu_pos) != self.feature_dim or len(self.mu_neg) != self.feature_dim:
            raise ConfigurationError("mu_pos and mu_neg must have feature_dim entries")
        if self.mu_pos == self.mu_neg:
            raise ConfigurationError("mu_pos and mu_neg must differ")
        if not self.feature_noise > 0:
            raise ConfigurationError("feature_noise must be positive")
        if not 0 <= self.objects_min <= self.objects_max:
            raise ConfigurationError("need 0 <= objects_min <= objects_max")
        if not 0 < self.size_min <= self.size_max:
            raise ConfigurationError("need 0 < size_min <= size_max")
        if self.extent_width <= 0 or self.extent_height <= 0:
            raise ConfigurationError("extent must be positive")
        if self.grid_rows < 1 or self.grid_cols < 1 or not self.anchor_sizes:
            raise ConfigurationError("anchor grid must be non-empty")
        if any(s <= 0 for s in self.anchor_sizes):
            raise ConfigurationError("anchor sizes must be positive")
        if not 0 < self.positive_iou < 1:
            raise ConfigurationError("positive_iou must lie in (0, 1)")

    @property
    def extent(self) -> tuple[float, float]:
        return (self.extent_width, self.extent_height)


# -- geometry -----------------------------------------------------------------


def iou(a: Box, b: Box) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between box arrays of shape (n, 4) and (m, 4)."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


# -- scenes -------------------------------------------------------------------


def scene_rng(seed: int, scene_id: int, stream: int = _SCENE_STREAM) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(scene_id), stream])


def generate_scene(config: WorldConfig, rng, scene_id: int = 0) -> Scene:
    width, height = config.extent
    if config.objects_max > 0 and (config.size_min > width or config.size_min > height):
        raise ConfigurationError("objects cannot fit inside the scene extent")
    n = int(rng.integers(config.objects_min, config.objects_max + 1))
    objects = []
    for _ in range(n):
        w = rng.uniform(config.size_min, min(config.size_max, width))
        h = rng.uniform(config.size_min, min(config.size_max, height))
        x0 = rng.uniform(0.0, width - w)
        y0 = rng.uniform(0.0, height - h)
        objects.append(ObjectInstance(Box(x0, y0, x0 + w, y0 + h), True))
    return Scene(scene_id, (width, height), tuple(objects))


def generate_scenes(config: WorldConfig, n: int, seed: int | None = None, id_offset: int = 0) -> list[Scene]:
    """``n`` scenes, each from its own stream keyed on (seed, scene id)."""
    seed = config.seed if seed is None else seed
    return [generate_scene(config, scene_rng(seed, i), i) for i in range(id_offset, id_offset + n)]


def generate_test_split(config: WorldConfig, n: int) -> list[Scene]:
    return generate_scenes(config, n, seed=config.seed + TEST_SEED_OFFSET, id_offset=TEST_ID_OFFSET)


def discard_labels(scenes, spec: MissingnessSpec, rng) -> list[Scene]:
    """Drop each annotation independently with probability ``rho``; boxes stay."""
    if spec.mode != "per-annotation":
        raise ConfigurationError("discard_labels implements the per-annotation protocol")
    out = []
    for scene in scenes:
        keep = rng.random(len(scene.objects)) >= spec.rho
        objects = tuple(replace(o, labeled=o.labeled and bool(k)) for o, k in zip(scene.objects, keep))
        out.append(replace(scene, objects=objects))
    return out


def make_full_pn_subset(scenes, rho: float, rng) -> list[Scene]:
    """Keep ``ceil((1 - rho) * n)`` whole scenes, fully labeled, in original order."""
    MissingnessSpec(rho, "per-image")
    n_keep = math.ceil((1.0 - rho) * len(scenes) - 1e-9)
    if n_keep <= 0:
        raise ConfigurationError("full-PN subset would be empty")
    idx = np.sort(rng.choice(len(scenes), size=n_keep, replace=False))
    return [replace(scenes[i], objects=tuple(replace(o, labeled=True) for o in scenes[i].objects)) for i in idx]


def apply_missingness(scenes, spec: MissingnessSpec, rng) -> list[Scene]:
    if spec.mode == "per-annotation":
        return discard_labels(scenes, spec, rng)
    return make_full_pn_subset(scenes, spec.rho, rng)


# -- proposals ----------------------------------------------------------------


def anchor_boxes(config: WorldConfig) -> np.ndarray:
    """Tiled anchors in (row, col, scale) order, clipped to the extent."""
    width, height = config.extent
    cy = (np.arange(config.grid_rows) + 0.5) * height / config.grid_rows
    cx = (np.arange(config.grid_cols) + 0.5) * width / config.grid_cols
    sizes = np.asarray(config.anchor_sizes)
    yy, xx, ss = np.meshgrid(cy, cx, sizes, indexing="ij")
    yy, xx, half = yy.ravel(), xx.ravel(), ss.ravel() / 2.0
    boxes = np.stack([xx - half, yy - half, xx + half, yy + half], axis=1)
    boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0.0, width)
    boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0.0, height)
    keep = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    return boxes[keep]


def propose_anchors(scene: Scene, config: WorldConfig) -> ProposalSet:
    return ProposalSet(scene.id, anchor_boxes(config))


def featurize_and_assign(proposals: ProposalSet, scene: Scene, config: WorldConfig, rng) -> ProposalSet:
    boxes = proposals.boxes
    n = len(boxes)
    if scene.objects:
        overlaps = iou_matrix(boxes, scene.boxes())
        max_true = overlaps.max(axis=1)
        flags = scene.labeled_flags
        max_labeled = overlaps[:, flags].max(axis=1) if flags.any() else np.zeros(n)
    else:
        max_true = np.zeros(n)
        max_labeled = np.zeros(n)
    mu_p, mu_n = np.asarray(config.mu_pos), np.asarray(config.mu_neg)
    means = mu_n + max_true[:, None] * (mu_p - mu_n)
    features = means + config.feature_noise * rng.standard_normal((n, config.feature_dim))
    return replace(
        proposals,
        features=features,
        max_iou_true=max_true,
        max_iou_labeled=max_labeled,
        labeled_positive=max_labeled >= config.positive_iou,
    )


def build_proposals(scene: Scene, config: WorldConfig) -> ProposalSet:
    """Anchors plus features drawn from the scene's own feature stream.

    Features depend only on geometry, so every label view of a scene gets the
    same feature vectors.
    """
    rng = scene_rng(config.seed, scene.id, _FEATURE_STREAM)
    return featurize_and_assign(propose_anchors(scene, config), scene, config, rng)


# -- dataset files ------------------------------------------------------------

DATASET_MAGIC = "pudet-dataset v1"


@dataclass
class Dataset:
    world: WorldConfig
    scenes: list[Scene]
    missingness: MissingnessSpec | None = None

    @property
    def n_objects(self) -> int:
        return sum(len(s.objects) for s in self.scenes)

    @property
    def n_labeled(self) -> int:
        return sum(o.labeled for s in self.scenes for o in s.objects)


def _num(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


def _encode(value) -> str:
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_encode(v)}" for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    if isinstance(value, str):
        return json.dumps(value)
    if value is None:
        return "null"
    return _num(value)


def scene_to_line(scene: Scene) -> str:
    objects = [[o.box.x_min, o.box.y_min, o.box.x_max, o.box.y_max, o.labeled] for o in scene.objects]
    return _encode({"id": scene.id, "extent": list(scene.extent), "objects": objects})


def scene_from_record(rec) -> Scene:
    objects = tuple(ObjectInstance(Box(*map(float, o[:4])), bool(o[4])) for o in rec["objects"])
    return Scene(int(rec["id"]), tuple(float(v) for v in rec["extent"]), objects)


def world_from_dict(d) -> WorldConfig:
    known = {f.name for f in fields(WorldConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown world keys {sorted(unknown)}")
    return WorldConfig(**d)


def save_dataset(dataset: Dataset, path) -> None:
    header = {
        "format": DATASET_MAGIC,
        "world": asdict(dataset.world),
        "missingness": None if dataset.missingness is None else asdict(dataset.missingness),
    }
    lines = [_encode(header)] + [scene_to_line(s) for s in dataset.scenes]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise InvalidInputError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
        if header.get("format") != DATASET_MAGIC:
            raise InvalidInputError(f"{path}: missing dataset header")
        world = world_from_dict(header["world"])
        miss = header.get("missingness")
        spec = None if miss is None else MissingnessSpec(**miss)
        scenes = [scene_from_record(json.loads(line)) for line in lines[1:] if line.strip()]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"{path}: malformed dataset ({exc})") from exc
    return Dataset(world, scenes, spec)
