"""Synthetic places with complementary RGB / segmentation informativeness.

Every place owns a structural code (a strip layout of sky, facade and ground
plus a few rectangles and parked vehicles, rendered to a label canvas wider than the image) and an
appearance code (per-class colour offsets and a texture field).  A view is an
integer horizontal crop of the canvas, so label maps stay exact.  RGB is the
class colour plus appearance.

Queries can be tagged with a regime:

* ``A`` - the query's appearance code is redrawn (a season change): structure
  still identifies the place, colour statistics do not.
* ``B`` - the query's label map is corrupted (occlusion by fake dynamic
  regions and wrong labels) while its RGB stays clean.
* ``N`` - neutral.

All randomness comes from :class:`svpr.rng.Rng`, seeded per place, so output
is identical across platforms for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensorio
from .retrieval import TRAIN_TOLERANCE, Pose, is_positive
from .rng import Rng, derive_seed
from .slme import BUILDINGS, DYNAMIC, GROUND, OTHER, SKY, VEGETATION

BASE_COLORS = np.array([
    [0.10, 0.60, 0.10],  # vegetation
    [0.60, 0.80, 1.00],  # sky
    [0.40, 0.40, 0.40],  # ground
    [0.85, 0.50, 0.25],  # buildings
    [0.30, 0.15, 0.70],  # other
    [0.90, 0.10, 0.10],  # dynamic
])
PLACE_SPACING_M = 100.0
POS_JITTER_M = 3.0
HEADING_JITTER_DEG = 8.0
REGIME_A_SCALE = 1.0
OFFSET_SD = 0.06
TEXTURE_SD = 0.04


@dataclass
class SynthConfig:
    n_places: int = 40
    n_val_places: int = 0
    views_per_place: int = 2
    queries_per_place: int = 1
    height: int = 128
    width: int = 96
    struct_noise: float = 0.0
    appearance_noise: float = 0.0
    regime_a_fraction: float = 0.0
    regime_b_fraction: float = 0.0
    max_shift: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.height % 32 or self.width % 32:
            raise ValueError("image size must be divisible by 32")
        if self.struct_noise < 0 or self.appearance_noise < 0:
            raise ValueError("noise levels must be nonnegative")
        if min(self.regime_a_fraction, self.regime_b_fraction) < 0:
            raise ValueError("regime fractions must be nonnegative")
        if self.regime_a_fraction + self.regime_b_fraction > 1.0 + 1e-12:
            raise ValueError("regime fractions sum above 1")
        if self.n_places < 1 or self.views_per_place < 1 or self.queries_per_place < 1:
            raise ValueError("need at least one place, view and query")

    @classmethod
    def from_json(cls, doc: dict) -> "SynthConfig":
        return cls(**doc)


@dataclass
class Place:
    index: int
    strips: list  # (x0, x1, skyline, horizon, facade class)
    rects: list  # (class, y0, y1, x0, x1)
    offsets: np.ndarray  # (6, 3) colour offsets
    texture: np.ndarray  # (3, H, canvas W)
    anchor: tuple[float, float, float]


@dataclass
class Dataset:
    config: SynthConfig
    entries: list[dict]
    rgb: dict[int, np.ndarray] = field(default_factory=dict)
    labels: dict[int, np.ndarray] = field(default_factory=dict)
    encoded: dict[int, np.ndarray] = field(default_factory=dict)  # optional SLME cache

    def ids(self, role: str, split: str = "train") -> list[int]:
        return [e["id"] for e in self.entries if e["role"] == role and e["split"] == split]

    def entry(self, i: int) -> dict:
        return self._by_id[i]

    @property
    def _by_id(self) -> dict:
        cache = getattr(self, "_cache", None)
        if cache is None or len(cache) != len(self.entries):
            cache = {e["id"]: e for e in self.entries}
            self._cache = cache
        return cache

    def pose(self, i: int) -> Pose:
        return Pose.from_json(self.entry(i)["pose"])

    def positives(self, qid: int, split: str | None = None, tol=TRAIN_TOLERANCE) -> list[int]:
        split = split or self.entry(qid)["split"]
        pq = self.pose(qid)
        return [d for d in self.ids("database", split) if is_positive(pq, self.pose(d), tol)]

    def rgb_batch(self, ids) -> np.ndarray:
        return np.stack([self.rgb[i] for i in ids]).astype(np.float64)

    def label_batch(self, ids) -> np.ndarray:
        return np.stack([self.labels[i] for i in ids])


# --- structure -----------------------------------------------------------


def _make_structure(rng: Rng, h: int, wc: int):
    strips = []
    x = 0
    wmin, wmax = max(4, wc // 10), max(8, wc // 4)
    while x < wc:
        width = rng.integers(wmin, wmax + 1)
        x1 = min(wc, x + width)
        skyline = rng.integers(int(0.08 * h), int(0.45 * h) + 1)
        horizon = rng.integers(max(skyline + 4, int(0.55 * h)), int(0.85 * h) + 1)
        u = rng.random()
        facade = BUILDINGS if u < 0.5 else (VEGETATION if u < 0.8 else OTHER)
        strips.append((x, x1, skyline, horizon, facade))
        x = x1
    rects = []
    for _ in range(rng.integers(2, 6)):
        cls = (VEGETATION, OTHER, BUILDINGS, GROUND)[rng.integers(0, 4)]
        rh = rng.integers(max(2, h // 16), max(3, h // 4) + 1)
        rw = rng.integers(max(2, wc // 16), max(3, wc // 5) + 1)
        y0 = rng.integers(int(0.2 * h), h - rh + 1)
        x0 = rng.integers(0, wc - rw + 1)
        rects.append((cls, y0, y0 + rh, x0, x0 + rw))
    for _ in range(rng.integers(0, 3)):  # parked vehicles
        rh = rng.integers(max(2, h // 16), max(3, h // 8) + 1)
        rw = rng.integers(max(2, wc // 12), max(3, wc // 6) + 1)
        y0 = rng.integers(int(0.6 * h), h - rh + 1)
        x0 = rng.integers(0, wc - rw + 1)
        rects.append((DYNAMIC, y0, y0 + rh, x0, x0 + rw))
    return strips, rects


def render_labels(place: Place, h: int, wc: int) -> np.ndarray:
    lm = np.empty((h, wc), dtype=np.uint8)
    rows = np.arange(h)[:, None]
    for x0, x1, sky, hor, facade in place.strips:
        col = np.where(rows < sky, SKY, np.where(rows < hor, facade, GROUND))
        lm[:, x0:x1] = col
    for cls, y0, y1, x0, x1 in place.rects:
        lm[y0:y1, x0:x1] = cls
    return lm


def render_rgb(lm: np.ndarray, offsets: np.ndarray, texture: np.ndarray) -> np.ndarray:
    colors = np.clip(BASE_COLORS + offsets, 0.0, 1.0)
    return np.moveaxis(colors[lm], -1, 0) + texture


def _appearance(rng: Rng, h: int, wc: int, scale: float):
    offsets = rng.normal(0.0, OFFSET_SD * scale, size=(6, 3))
    offsets[DYNAMIC] = 0.0
    texture = rng.normal(0.0, TEXTURE_SD * scale, size=(3, h, wc))
    return offsets, texture


def _add_dynamic(rng: Rng, lm: np.ndarray, count: int, frac: float):
    """Paint ``count`` random rectangles with the dynamic id; returns their boxes."""
    h, w = lm.shape
    boxes = []
    for _ in range(count):
        rh = max(2, int(h * frac * (0.5 + rng.random())))
        rw = max(2, int(w * frac * (0.5 + rng.random())))
        y0 = rng.integers(h // 3, max(h // 3 + 1, h - rh + 1))
        x0 = rng.integers(0, w - rw + 1)
        lm[y0 : y0 + rh, x0 : x0 + rw] = DYNAMIC
        boxes.append((y0, y0 + rh, x0, x0 + rw))
    return boxes


def _corrupt_labels(rng: Rng, lm: np.ndarray, flip_prob: float, block: int) -> np.ndarray:
    """Replace whole blocks with random kept classes with probability ``flip_prob``."""
    out = lm.copy()
    h, w = lm.shape
    for y in range(0, h, block):
        for x in range(0, w, block):
            if rng.random() < flip_prob:
                out[y : y + block, x : x + block] = rng.integers(0, 5)
    return out


# --- generation ----------------------------------------------------------


def _place(cfg: SynthConfig, index: int) -> Place:
    rng = Rng(derive_seed(cfg.seed, 1, index))
    wc = cfg.width + 2 * cfg.max_shift
    strips, rects = _make_structure(rng, cfg.height, wc)
    offsets, texture = _appearance(rng, cfg.height, wc, 1.0)
    side = int(np.ceil(np.sqrt(cfg.n_places + cfg.n_val_places)))
    anchor = (
        PLACE_SPACING_M * (index % side),
        PLACE_SPACING_M * (index // side),
        float(rng.uniform(0.0, 360.0)),
    )
    return Place(index, strips, rects, offsets, texture, anchor)


def _regimes(cfg: SynthConfig, n: int, rng: Rng) -> list[str]:
    n_a = int(round(cfg.regime_a_fraction * n))
    n_b = min(n - n_a, int(round(cfg.regime_b_fraction * n)))
    tags = ["A"] * n_a + ["B"] * n_b + ["N"] * (n - n_a - n_b)
    return [tags[i] for i in rng.permutation(n)]


def _view_pose(rng: Rng, anchor) -> tuple[dict, int]:
    e, n, hd = anchor
    dh = rng.uniform(-HEADING_JITTER_DEG, HEADING_JITTER_DEG)
    pose = {
        "easting": e + rng.uniform(-POS_JITTER_M, POS_JITTER_M),
        "northing": n + rng.uniform(-POS_JITTER_M, POS_JITTER_M),
        "heading": float((hd + dh) % 360.0),
    }
    return pose, dh


def generate(cfg: SynthConfig) -> Dataset:
    """Build the dataset in memory; ids are assigned in place order."""
    n_total = cfg.n_places + cfg.n_val_places
    tag_rng = Rng(derive_seed(cfg.seed, 2))
    tags = {
        "train": _regimes(cfg, cfg.n_places * cfg.queries_per_place, tag_rng),
        "val": _regimes(cfg, cfg.n_val_places * cfg.queries_per_place, tag_rng),
    }
    h, w, s = cfg.height, cfg.width, cfg.max_shift
    wc = w + 2 * s
    ds = Dataset(cfg, [])
    next_id = 0
    counters = {"train": 0, "val": 0}
    for index in range(n_total):
        place = _place(cfg, index)
        split = "train" if index < cfg.n_places else "val"
        canvas = render_labels(place, h, wc)
        rng = Rng(derive_seed(cfg.seed, 3, index))
        roles = ["query"] * cfg.queries_per_place + ["database"] * cfg.views_per_place
        for role in roles:
            pose, dh = _view_pose(rng, place.anchor)
            shift = int(np.clip(round(dh / HEADING_JITTER_DEG * s), -s, s))
            x0 = s + shift
            regime = "N"
            if role == "query":
                regime = tags[split][counters[split]]
                counters[split] += 1
            cond = {
                "season": float(rng.random()),
                "light": float(rng.random()),
                "viewpoint": abs(shift) / max(1, s),
            }
            lm_true = canvas[:, x0 : x0 + w]
            offsets, texture = place.offsets, place.texture[:, :, x0 : x0 + w]
            # regime draws use their own stream so tagging a query never shifts other views
            regime_rng = Rng(derive_seed(cfg.seed, 4, next_id))
            if regime == "A":
                offsets, texture_full = _appearance(regime_rng, h, wc, REGIME_A_SCALE)
                texture = texture_full[:, :, x0 : x0 + w]
            rgb = render_rgb(lm_true, offsets, texture)
            amp = cfg.appearance_noise
            if amp > 0:
                gain = 1.0 + amp * cond["light"] * rng.normal(0.0, 0.3)
                tint = amp * cond["season"] * rng.normal(0.0, 0.1, size=(3, 1, 1))
                rgb = gain * rgb + tint + rng.normal(0.0, 0.05 * amp, size=rgb.shape)
            lm = lm_true
            if cfg.struct_noise > 0:
                lm = _corrupt_labels(rng, lm, cfg.struct_noise, 8)
            if regime == "B":
                lm = _corrupt_labels(regime_rng, lm, 0.35, 8)
                _add_dynamic(regime_rng, lm, 3, 0.25)
            entry = {
                "id": next_id,
                "place": index,
                "role": role,
                "split": split,
                "regime": regime,
                "condition": cond,
                "pose": pose,
                "rgb": f"rgb/{next_id}.svpt",
                "seg": f"seg/{next_id}.svpt",
            }
            ds.entries.append(entry)
            ds.rgb[next_id] = rgb.astype(np.float32)
            ds.labels[next_id] = lm.astype(np.uint8)
            next_id += 1
    return ds


def inject_regimes(cfg: SynthConfig, a: float, b: float) -> Dataset:
    """Generate with regime fractions ``a`` (appearance shift) and ``b`` (label corruption)."""
    doc = asdict(cfg)
    doc.update(regime_a_fraction=a, regime_b_fraction=b)
    return generate(SynthConfig(**doc))


# --- persistence ---------------------------------------------------------


def write_dataset(ds: Dataset, root) -> Path:
    root = Path(root)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    (root / "seg").mkdir(parents=True, exist_ok=True)
    for e in ds.entries:
        tensorio.write_tensor(ds.rgb[e["id"]], root / e["rgb"])
        tensorio.write_tensor(ds.labels[e["id"]], root / e["seg"])
    doc = {"version": 1, "config": asdict(ds.config), "entries": ds.entries}
    tensorio.write_manifest(doc, root / "manifest.json")
    return root


def load_dataset(root) -> Dataset:
    root = Path(root)
    doc = tensorio.read_manifest(root / "manifest.json")
    cfg = SynthConfig.from_json(doc["config"])
    ds = Dataset(cfg, doc["entries"])
    for e in ds.entries:
        ds.rgb[e["id"]] = tensorio.read_tensor(root / e["rgb"])
        ds.labels[e["id"]] = tensorio.read_tensor(root / e["seg"])
    return ds


def config_json(cfg: SynthConfig) -> str:
    return json.dumps(asdict(cfg), indent=1, sort_keys=True)
