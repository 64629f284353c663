"""Segmentation label map encoding.

Raw 150-class ADE20K label maps are clustered to six coarse classes, the
dynamic class is dropped, and the remaining five are written into a weighted
one-hot tensor.  The same clustered map yields the per-level binary masks
used for label-level pooling in the seg branch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLUSTER_NAMES = ("vegetation", "sky", "ground", "buildings", "other", "dynamic")
VEGETATION, SKY, GROUND, BUILDINGS, OTHER, DYNAMIC = range(6)
NUM_KEPT = 5
DEFAULT_WEIGHTS = (0.5, 1.0, 1.0, 2.0, 2.0)
MASK_LEVELS = (3, 4, 5)

ADE20K_NAMES = (
    "wall", "building", "sky", "floor", "tree", "ceiling", "road", "bed", "windowpane", "grass",
    "cabinet", "sidewalk", "person", "earth", "door", "table", "mountain", "plant", "curtain", "chair",
    "car", "water", "painting", "sofa", "shelf", "house", "sea", "mirror", "rug", "field",
    "armchair", "seat", "fence", "desk", "rock", "wardrobe", "lamp", "bathtub", "railing", "cushion",
    "base", "box", "column", "signboard", "chest of drawers", "counter", "sand", "sink", "skyscraper", "fireplace",
    "refrigerator", "grandstand", "path", "stairs", "runway", "case", "pool table", "pillow", "screen door", "stairway",
    "river", "bridge", "bookcase", "blind", "coffee table", "toilet", "flower", "book", "hill", "bench",
    "countertop", "stove", "palm", "kitchen island", "computer", "swivel chair", "boat", "bar", "arcade machine", "hovel",
    "bus", "towel", "light", "truck", "tower", "chandelier", "awning", "streetlight", "booth", "television receiver",
    "airplane", "dirt track", "apparel", "pole", "land", "bannister", "escalator", "ottoman", "bottle", "buffet",
    "poster", "stage", "van", "ship", "fountain", "conveyer belt", "canopy", "washer", "plaything", "swimming pool",
    "stool", "barrel", "basket", "waterfall", "tent", "bag", "minibike", "cradle", "oven", "ball",
    "food", "step", "tank", "trade name", "microwave", "pot", "animal", "bicycle", "lake", "dishwasher",
    "screen", "blanket", "sculpture", "hood", "sconce", "vase", "traffic light", "tray", "ashcan", "fan",
    "pier", "crt screen", "plate", "monitor", "bulletin board", "shower", "radiator", "glass", "clock", "flag",
)  # fmt: skip

_DEFAULT_GROUPS = {
    VEGETATION: ("tree", "grass", "plant", "flower", "palm"),
    SKY: ("sky",),
    GROUND: ("floor", "road", "sidewalk", "earth", "field", "sand", "path", "runway", "dirt track", "land", "rug"),
    BUILDINGS: (
        "wall", "building", "house", "skyscraper", "tower", "hovel", "windowpane", "door",
        "column", "ceiling", "bridge", "fence", "railing", "awning", "booth", "grandstand",
    ),
    DYNAMIC: (
        "person", "car", "boat", "bus", "truck", "airplane", "van", "ship", "minibike",
        "animal", "bicycle",
    ),
}  # fmt: skip


class LabelError(ValueError):
    pass


@dataclass
class ClusterTable:
    """Total map from raw class ids to clustered ids 0..5."""

    mapping: np.ndarray
    names: tuple[str, ...] = CLUSTER_NAMES
    raw_names: tuple[str, ...] = field(default=ADE20K_NAMES)

    def __post_init__(self):
        self.mapping = np.asarray(self.mapping, dtype=np.uint8)
        if len(self.names) != 6:
            raise LabelError("cluster table must define exactly 6 clustered ids")
        if self.mapping.max(initial=0) > 5:
            raise LabelError("clustered ids must lie in 0..5")

    @property
    def num_raw(self) -> int:
        return len(self.mapping)

    @classmethod
    def default(cls) -> "ClusterTable":
        mapping = np.full(len(ADE20K_NAMES), OTHER, dtype=np.uint8)
        index = {n: i for i, n in enumerate(ADE20K_NAMES)}
        for cid, names in _DEFAULT_GROUPS.items():
            for n in names:
                mapping[index[n]] = cid
        return cls(mapping)

    def to_json(self) -> dict:
        return {
            "clusters": list(self.names),
            "raw_names": list(self.raw_names),
            "mapping": [int(v) for v in self.mapping],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ClusterTable":
        mapping = doc["mapping"]
        if isinstance(mapping, dict):
            n = len(doc.get("raw_names", ADE20K_NAMES))
            arr = np.full(n, 255, dtype=np.int64)
            for k, v in mapping.items():
                arr[int(k)] = v
            if (arr == 255).any():
                raise LabelError("cluster table is not total")
            mapping = arr
        return cls(
            np.asarray(mapping),
            tuple(doc.get("clusters", CLUSTER_NAMES)),
            tuple(doc.get("raw_names", ADE20K_NAMES)),
        )

    @classmethod
    def load(cls, path) -> "ClusterTable":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def cluster(raw: np.ndarray, table: ClusterTable | None = None) -> np.ndarray:
    table = table or ClusterTable.default()
    raw = np.asarray(raw)
    if raw.size and (raw.min() < 0 or raw.max() >= table.num_raw):
        raise LabelError(f"raw class ids must lie in [0, {table.num_raw})")
    return table.mapping[raw.astype(np.intp)]


def check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (NUM_KEPT,):
        raise LabelError(f"need {NUM_KEPT} class weights, got shape {w.shape}")
    if (w <= 0).any():
        raise LabelError("class weights must be positive")
    return w


def encode(lm: np.ndarray, weights=DEFAULT_WEIGHTS) -> np.ndarray:
    """Weighted one-hot encoding, C x H x W (or N x C x H x W for a batch).

    Pixels of the dynamic class get an all-zero vector.
    """
    w = check_weights(weights)
    lm = np.asarray(lm)
    if lm.size and lm.max() > DYNAMIC:
        raise LabelError("label map values must be clustered ids 0..5")
    table = np.zeros((DYNAMIC + 1, NUM_KEPT))
    table[np.arange(NUM_KEPT), np.arange(NUM_KEPT)] = w
    onehot = table[lm.astype(np.intp)]  # (..., H, W, C)
    return np.moveaxis(onehot, -1, -3)


def decode(enc: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode`: argmax of the nonzero channel, dynamic where all-zero."""
    enc = np.asarray(enc)
    lm = enc.argmax(axis=-3).astype(np.uint8)
    lm[~(enc != 0).any(axis=-3)] = DYNAMIC
    return lm


def downsample(lm: np.ndarray, level: int) -> np.ndarray:
    """Nearest-neighbour downsampling by 2**level, sampling each block's centre pixel."""
    s = 1 << level
    h, w = lm.shape[-2:]
    if h % s or w % s:
        raise LabelError(f"{h}x{w} label map is not divisible by {s}")
    return lm[..., s // 2 :: s, s // 2 :: s]


def build_masks(lm: np.ndarray, levels=MASK_LEVELS) -> dict[int, np.ndarray]:
    """Binary masks per level: level -> (..., C, H/2^i, W/2^i) float array."""
    lm = np.asarray(lm)
    h, w = lm.shape[-2:]
    if h % 32 or w % 32:
        raise LabelError(f"label map dims must be divisible by 32, got {h}x{w}")
    out = {}
    for i in levels:
        small = downsample(lm, i)
        out[i] = np.stack([(small == j) for j in range(NUM_KEPT)], axis=-3).astype(np.float64)
    return out
