"""Two-stage training pipeline: branch training, offline partition, weighted distillation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import tensorio
from .losses import GROUPS, classify_group, kd_loss, scheme_from_json, triplet_loss
from .models import SEG_VARIANTS, STUDENT_VARIANTS, LabelAwareRgb, RgbBranch, SegBranch
from .net import RGB_PLAN, SEG_PLAN
from .partition import SamplePair, build_report, compute_ranks, partition_gpd
from .retrieval import EVAL_TOLERANCE, TRAIN_TOLERANCE, Pose, RecallReport, is_positive, recall_at_n, squared_distances
from .rng import Rng, derive_seed
from .slme import DEFAULT_WEIGHTS, build_masks, encode
from .synthdata import Dataset

log = logging.getLogger(__name__)

SELECTORS = ("None", "All", "D1", "D2", "D3", "D4", "S1", "S2", "R1", "R2", "GP-D")
MINING = ("random", "semi-hard")
NEG_POOL = 100


class TrainingError(RuntimeError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    stage1_epochs: int = 10
    stage2_epochs: int = 10
    seg_phase1_fraction: float = 0.5
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-4
    weight_decay: float = 1e-4
    margin: float = 0.1
    batch_size: int = 1
    n_t: int = 10
    n_m: int = 20
    scheme: dict = field(default_factory=lambda: {"name": "phi", "n_t": 10, "n_m": 20})
    selector: str = "GP-D"
    seg_variant: str = "B-WS"
    student_variant: str = "ours"
    share_label_map: bool = True
    mining: str = "random"
    rgb_plan: tuple = RGB_PLAN
    seg_plan: tuple = SEG_PLAN
    class_weights: tuple = DEFAULT_WEIGHTS
    eval_ns: tuple = (1, 5, 10)
    select_best: bool = False
    zero_init_transform: bool = True

    def __post_init__(self):
        self.rgb_plan = tuple(self.rgb_plan)
        self.seg_plan = tuple(self.seg_plan)
        self.class_weights = tuple(self.class_weights)
        self.eval_ns = tuple(self.eval_ns)
        if min(self.lr_stage1, self.lr_stage2) <= 0:
            raise ValueError("learning rates must be positive")
        if self.weight_decay < 0 or self.margin <= 0 or self.batch_size < 1:
            raise ValueError("invalid weight decay, margin or batch size")
        if self.selector not in SELECTORS:
            raise ValueError(f"unknown selector {self.selector!r}")
        if self.seg_variant not in SEG_VARIANTS:
            raise ValueError(f"unknown seg variant {self.seg_variant!r}")
        if self.student_variant not in STUDENT_VARIANTS:
            raise ValueError(f"unknown student variant {self.student_variant!r}")
        if self.mining not in MINING:
            raise ValueError(f"unknown mining policy {self.mining!r}")
        if not 0.0 < self.seg_phase1_fraction <= 1.0:
            raise ValueError("seg phase-1 fraction must lie in (0, 1]")
        scheme_from_json(self.scheme)

    @property
    def weight_scheme(self):
        return scheme_from_json(self.scheme)

    def to_json(self) -> dict:
        doc = asdict(self)
        for k in ("rgb_plan", "seg_plan", "class_weights", "eval_ns"):
            doc[k] = list(doc[k])
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def hash(self) -> str:
        return tensorio.config_hash(self.to_json())


# --- optimisation --------------------------------------------------------


def cosine_lr(lr0: float, t: int, total: int) -> float:
    if total <= 0:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * min(t, total) / total))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def optimizer_step(state: OptimizerState, params: dict, grads: dict, lr: float,
                   weight_decay: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """AdamW update in place for every parameter that has a gradient."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * mhat / (np.sqrt(vhat) + eps)


# --- data plumbing -------------------------------------------------------


def training_pairs(ds: Dataset, split: str = "train") -> list[tuple[int, int]]:
    pairs = []
    for q in ds.ids("query", split):
        for p in ds.positives(q, split, TRAIN_TOLERANCE):
            pairs.append((q, p))
    return pairs


def _geo_far(pq: Pose, pr: Pose, radius: float = 25.0) -> bool:
    return math.hypot(pq.easting - pr.easting, pq.northing - pr.northing) > radius


class Miner:
    """Picks (positive, negative) for a query.

    ``random`` draws the negative uniformly from database images farther than
    25 m; ``semi-hard`` takes the closest one in feature space among a pool of
    100 database images refreshed each epoch.
    """

    def __init__(self, ds: Dataset, policy: str, split: str = "train"):
        if policy not in MINING:
            raise ValueError(f"unknown mining policy {policy!r}")
        self.ds = ds
        self.policy = policy
        self.db = ds.ids("database", split)
        self._negs: dict[int, list[int]] = {}
        self.pool: list[int] = []
        self.features: dict[int, np.ndarray] = {}

    def negatives(self, q: int) -> list[int]:
        if q not in self._negs:
            pq = self.ds.pose(q)
            self._negs[q] = [d for d in self.db if _geo_far(pq, self.ds.pose(d))]
        return self._negs[q]

    def refresh(self, rng: Rng, describe) -> None:
        if self.policy != "semi-hard":
            return
        k = min(NEG_POOL, len(self.db))
        self.pool = sorted(self.db[i] for i in rng.choice(len(self.db), k, replace=False))
        self.features = describe(self.pool)

    def mine(self, q: int, positives: list[int], rng: Rng, q_feature=None) -> tuple[int, int]:
        if not positives:
            raise TrainingError(f"query {q} has no positives")
        p = positives[rng.integers(0, len(positives))] if len(positives) > 1 else positives[0]
        negs = self.negatives(q)
        if not negs:
            raise TrainingError(f"query {q} has no negatives")
        if self.policy == "random" or q_feature is None:
            return p, negs[rng.integers(0, len(negs))]
        allowed = set(negs)
        cands = [n for n in self.pool if n in allowed]
        if not cands:
            return p, negs[rng.integers(0, len(negs))]
        feats = np.stack([self.features[n] for n in cands])
        d = squared_distances(q_feature, feats)[0]
        order = np.lexsort((np.array(cands), d))
        return p, cands[order[0]]


def mine_triplet(query: int, ds: Dataset, policy: str, rng: Rng, miner: Miner | None = None,
                 q_feature=None) -> tuple[int, int]:
    miner = miner or Miner(ds, policy, ds.entry(query)["split"])
    return miner.mine(query, ds.positives(query), rng, q_feature)


class SegInputs:
    """Encoded seg tensors and masks for batches of image ids.

    Uses the dataset's precomputed encodings (written by the ``encode``
    command) when present; otherwise label maps are encoded on demand.
    """

    def __init__(self, ds: Dataset, weights=DEFAULT_WEIGHTS):
        self.ds = ds
        self.weights = weights

    def batch(self, ids):
        lms = self.ds.label_batch(ids)
        if self.ds.encoded:
            enc = np.stack([self.ds.encoded[i] for i in ids]).astype(np.float64)
        else:
            enc = encode(lms, self.weights)
        return enc, build_masks(lms)


def describe(model, params, ds: Dataset, ids, seg_inputs: SegInputs | None = None,
             chunk: int = 32) -> np.ndarray:
    """Frozen forward pass for a list of image ids; returns (len(ids), D)."""
    out = []
    for s in range(0, len(ids), chunk):
        part = list(ids[s : s + chunk])
        if isinstance(model, SegBranch):
            enc, masks = seg_inputs.batch(part)
            v, _ = model.forward(params, enc, masks)
        else:
            v, _ = model.forward(params, ds.rgb_batch(part))
        out.append(v.value)
    return np.concatenate(out) if out else np.zeros((0, 0))


# --- stage I -------------------------------------------------------------


@dataclass
class EpochLog:
    stage: str
    phase: int
    epoch: int
    triplet: float
    kd: float
    lr: float


def _run_epochs(ds, cfg: RunConfig, params, trainable, epochs, lr0, loss_fn, feature_fn, stream,
                logs: list, stage: str, phase: int, val_fn=None):
    """Generic epoch loop shared by all stages.

    ``loss_fn(tape_params, batch)`` returns (loss, triplet_value, kd_value);
    ``feature_fn(ids)`` describes images with the current parameters (used for
    semi-hard mining).
    """
    pairs = training_pairs(ds)
    if not pairs:
        raise TrainingError("no training pairs")
    miner = Miner(ds, cfg.mining)
    positives = {}
    for q, p in pairs:
        positives.setdefault(q, []).append(p)
    steps_per_epoch = -(-len(pairs) // cfg.batch_size)
    total = steps_per_epoch * epochs
    opt = OptimizerState()
    best = (-1.0, None)
    t = 0
    for epoch in range(epochs):
        rng = Rng(derive_seed(cfg.seed, stream, phase, epoch))
        order = rng.permutation(len(pairs))
        miner.refresh(rng, lambda ids: dict(zip(ids, feature_fn(ids))))
        qfeat = {}
        if cfg.mining == "semi-hard":
            qs = sorted(positives)
            qfeat = dict(zip(qs, feature_fn(qs)))
        sums = np.zeros(2)
        for s in range(0, len(pairs), cfg.batch_size):
            batch = []
            for k in order[s : s + cfg.batch_size]:
                q, p = pairs[k]
                _, n = miner.mine(q, [p], rng, qfeat.get(q))
                batch.append((q, p, n))
            tape = ad.Tape()
            tp = {k: (tape.leaf(v, k) if k in trainable else v) for k, v in params.items()}
            loss, trip, kd = loss_fn(tp, batch)
            if not np.isfinite(loss.value):
                raise TrainingError(f"non-finite loss at {stage} epoch {epoch}")
            grads = tape.backward(loss)
            lr = cosine_lr(lr0, t, total)
            optimizer_step(opt, params, grads, lr, cfg.weight_decay)
            t += 1
            sums += (trip * len(batch), kd * len(batch))
        mean = sums / len(pairs)
        logs.append(EpochLog(stage, phase, epoch, float(mean[0]), float(mean[1]), cosine_lr(lr0, t, total)))
        log.info("%s phase %d epoch %d: triplet %.4f kd %.4f", stage, phase, epoch, mean[0], mean[1])
        if val_fn is not None and cfg.select_best:
            r5 = val_fn(params)
            if r5 > best[0]:
                best = (r5, {k: v.copy() for k, v in params.items()})
    if best[1] is not None:
        params.update(best[1])
    return params


def _triplet_split(v, b: int):
    return v[:b], v[b : 2 * b], v[2 * b :]


def _flatten(batch):
    qs = [q for q, _, _ in batch]
    ps = [p for _, p, _ in batch]
    ns = [n for _, _, n in batch]
    return qs + ps + ns


def train_stage1(branch: str, ds: Dataset, cfg: RunConfig, logs: list | None = None) -> tensorio.Checkpoint:
    logs = [] if logs is None else logs
    seg_inputs = SegInputs(ds, cfg.class_weights)
    if branch == "rgb":
        model = RgbBranch(cfg.rgb_plan)
        params = model.init(derive_seed(cfg.seed, 10))

        def loss_fn(tp, batch):
            v, _ = model.forward(tp, ds.rgb_batch(_flatten(batch)))
            loss = triplet_loss(*_triplet_split(v, len(batch)), cfg.margin)
            return loss, float(loss.value), 0.0

        feats = lambda ids: describe(model, params, ds, ids)
        val = _val_fn(model, ds, cfg, seg_inputs)
        _run_epochs(ds, cfg, params, set(params), cfg.stage1_epochs, cfg.lr_stage1, loss_fn, feats,
                    11, logs, "stage1-rgb", 1, val)
        meta = {"branch": "rgb", "plan": list(cfg.rgb_plan)}
    elif branch == "seg":
        model = SegBranch(cfg.seg_variant, cfg.seg_plan)
        params = model.init(derive_seed(cfg.seed, 20))
        stack_names = set(model.stack.shapes())
        if model.variant == "B":
            e1, e2 = cfg.stage1_epochs, 0
        else:
            e1 = max(1, int(round(cfg.stage1_epochs * cfg.seg_phase1_fraction)))
            e2 = cfg.stage1_epochs - e1
        for phase, epochs in ((1, e1), (2, e2)):
            if epochs == 0:
                continue

            def loss_fn(tp, batch, phase=phase):
                enc, masks = seg_inputs.batch(_flatten(batch))
                v, _ = model.forward(tp, enc, masks, phase=phase)
                loss = triplet_loss(*_triplet_split(v, len(batch)), cfg.margin)
                return loss, float(loss.value), 0.0

            def feats(ids, phase=phase):
                out = []
                for s in range(0, len(ids), 32):
                    enc, masks = seg_inputs.batch(ids[s : s + 32])
                    out.append(model.forward(params, enc, masks, phase=phase)[0].value)
                return np.concatenate(out)

            trainable = stack_names if phase == 1 else set(params)
            val = _val_fn(model, ds, cfg, seg_inputs) if phase == 2 or model.variant == "B" else None
            _run_epochs(ds, cfg, params, trainable, epochs, cfg.lr_stage1, loss_fn, feats,
                        21, logs, "stage1-seg", phase, val)
        meta = {"branch": "seg", "variant": model.variant, "plan": list(cfg.seg_plan),
                "layout": [list(p) for p in model.layout()]}
    else:
        raise ValueError(f"unknown branch {branch!r}")
    params = tensorio.as_f32_exact(params)
    return tensorio.Checkpoint(f"{branch}-branch", 1, cfg.seed, cfg.hash(), params, meta)


def _val_fn(model, ds, cfg, seg_inputs):
    if not ds.ids("query", "val"):
        return None

    def fn(params):
        return evaluate(model, params, ds, cfg, seg_inputs).recall.get(5, 0.0)

    return fn


# --- models from checkpoints ---------------------------------------------


def seg_model_from(ckpt: tensorio.Checkpoint) -> SegBranch:
    if ckpt.meta.get("branch") != "seg":
        raise tensorio.FormatError("not a seg-branch checkpoint")
    return SegBranch(ckpt.meta["variant"], tuple(ckpt.meta["plan"]))


def rgb_model_from(ckpt: tensorio.Checkpoint) -> RgbBranch:
    if ckpt.meta.get("branch") != "rgb":
        raise tensorio.FormatError("not an rgb-branch checkpoint")
    return RgbBranch(tuple(ckpt.meta["plan"]))


def student_model_from(ckpt: tensorio.Checkpoint) -> LabelAwareRgb:
    m = ckpt.meta
    return LabelAwareRgb(tuple(tuple(p) for p in m["teacher_layout"]), m["variant"], tuple(m["plan"]),
                         share_label_map=m.get("share_label_map", True))


# --- partition -----------------------------------------------------------


def run_partition(ckpt_seg: tensorio.Checkpoint, ckpt_rgb: tensorio.Checkpoint, ds: Dataset,
                  cfg: RunConfig, ranks: list[tuple[int, int]] | None = None):
    """Rank every training pair under both frozen branches and apply GP-D.

    Returns (pairs, report, ranks); pass ``ranks`` back in to skip retrieval.
    """
    if ckpt_seg.stage != 1 or ckpt_rgb.stage != 1:
        raise tensorio.StageMismatchError("partition needs two stage-1 checkpoints")
    pairs = training_pairs(ds)
    if ranks is None:
        seg_model = seg_model_from(ckpt_seg)
        rgb_model = rgb_model_from(ckpt_rgb)
        seg_inputs = SegInputs(ds, cfg.class_weights)
        qs, db = ds.ids("query"), ds.ids("database")
        sq = describe(seg_model, ckpt_seg.params, ds, qs, seg_inputs)
        sd = describe(seg_model, ckpt_seg.params, ds, db, seg_inputs)
        rq = describe(rgb_model, ckpt_rgb.params, ds, qs)
        rd = describe(rgb_model, ckpt_rgb.params, ds, db)
        xs = compute_ranks(sq, qs, sd, db, pairs)
        ys = compute_ranks(rq, qs, rd, db, pairs)
        ranks = list(zip(xs, ys))
    samples = [SamplePair(q, p, x, y) for (q, p), (x, y) in zip(pairs, ranks)]
    scheme = cfg.weight_scheme
    parted = partition_gpd(samples, cfg.n_t, scheme)
    report = build_report(parted, "GP-D", cfg.n_t, cfg.n_m)
    return parted, report, ranks


def selector_weights(pairs: list[SamplePair], selector: str, n_t: int) -> dict[tuple[int, int], float]:
    """Per-pair distillation weight under a group selector."""
    out = {}
    for s in pairs:
        if selector == "None":
            w = 0.0
        elif selector == "All":
            w = 1.0
        elif selector == "GP-D":
            w = s.weight
        elif selector in GROUPS:
            w = float(classify_group(s.x, s.y, n_t) == selector)
        elif selector in ("S1", "S2"):
            w = float((s.x <= n_t) == (selector == "S1"))
        elif selector in ("R1", "R2"):
            w = float((s.y <= n_t) == (selector == "R1"))
        else:
            raise ValueError(f"unknown selector {selector!r}")
        out[(s.query_id, s.positive_id)] = w
    return out


# --- stage II ------------------------------------------------------------


def train_stage2(ckpt_seg: tensorio.Checkpoint, pairs: list[SamplePair], ds: Dataset, cfg: RunConfig,
                 logs: list | None = None) -> tensorio.Checkpoint:
    """Train the label-aware student against the frozen seg teacher."""
    logs = [] if logs is None else logs
    if ckpt_seg.stage != 1:
        raise tensorio.StageMismatchError("teacher must be a stage-1 seg checkpoint")
    teacher = seg_model_from(ckpt_seg)
    teacher_params = ckpt_seg.params
    layout = tuple(tuple(p) for p in teacher.layout())
    student = LabelAwareRgb(layout, cfg.student_variant, cfg.rgb_plan, share_label_map=cfg.share_label_map)
    params = student.init(derive_seed(cfg.seed, 30))
    if cfg.zero_init_transform:
        for k in student.transform_shapes():
            params[k] = np.zeros_like(params[k])
    weights = selector_weights(pairs, cfg.selector, cfg.n_t)
    missing = [pq for pq in training_pairs(ds) if pq not in weights]
    if missing:
        raise TrainingError(f"no partition weight for pairs {missing[:3]}")

    seg_inputs = SegInputs(ds, cfg.class_weights)
    all_ids = ds.ids("query") + ds.ids("database")
    g_teacher = dict(zip(all_ids, describe(teacher, teacher_params, ds, all_ids, seg_inputs)))

    def loss_fn(tp, batch):
        b = len(batch)
        ids = _flatten(batch)
        g, _ = student.forward(tp, ds.rgb_batch(ids))
        trip = triplet_loss(*_triplet_split(g, b), cfg.margin)
        w = np.array([weights[(q, p)] for q, p, _ in batch] * 3)
        if not w.any():
            return trip, float(trip.value), 0.0
        t_out = student.transform(tp, g)
        target = np.stack([g_teacher[i] for i in ids])
        kd = ad.mul(kd_loss(target, t_out, w), 1.0 / b)
        return ad.add(trip, kd), float(trip.value), float(kd.value)

    feats = lambda ids: describe(student, params, ds, ids)
    val = _val_fn(student, ds, cfg, None)
    _run_epochs(ds, cfg, params, set(params), cfg.stage2_epochs, cfg.lr_stage2, loss_fn, feats,
                31, logs, "stage2", 1, val)
    params = tensorio.as_f32_exact(params)
    meta = {"variant": cfg.student_variant, "plan": list(cfg.rgb_plan), "selector": cfg.selector,
            "teacher_layout": [list(p) for p in layout], "share_label_map": cfg.share_label_map}
    return tensorio.Checkpoint("label-aware-rgb", 2, cfg.seed, cfg.hash(), params, meta)


# --- evaluation ----------------------------------------------------------


def evaluate(model, params, ds: Dataset, cfg: RunConfig, seg_inputs: SegInputs | None = None,
             split: str = "val", tol=EVAL_TOLERANCE) -> RecallReport:
    seg_inputs = seg_inputs or SegInputs(ds, cfg.class_weights)
    qs, db = ds.ids("query", split), ds.ids("database", split)
    qd = describe(model, params, ds, qs, seg_inputs)
    dd = describe(model, params, ds, db, seg_inputs)
    poses = {i: ds.pose(i) for i in qs + db}
    return recall_at_n(qd, qs, dd, db, lambda a, b: is_positive(poses[a], poses[b], tol), cfg.eval_ns)


def metrics_csv(logs: list[EpochLog]) -> str:
    lines = ["stage,phase,epoch,triplet,kd,lr"]
    for r in logs:
        lines.append(f"{r.stage},{r.phase},{r.epoch},{r.triplet!r},{r.kd!r},{r.lr!r}")
    return "\n".join(lines) + "\n"
