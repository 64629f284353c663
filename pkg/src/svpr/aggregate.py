"""Global descriptors built from feature pyramids.

All functions operate on batches: feature maps are (N, C, H, W), vectors are
(N, D).  Inputs may be tape variables or plain arrays; see :mod:`svpr.autodiff`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .net import Mlp
from .slme import NUM_KEPT

KINDS = ("basic_rgb", "basic_seg", "enhanced_seg", "label_aware_rgb", "transformed_rgb")
MC_LEVELS = (3, 4, 5)


@dataclass
class Descriptor:
    """A batch of finished descriptors with part layout metadata."""

    values: np.ndarray
    layout: list[tuple[str, int, int]]
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        total = sum(n for _, _, n in self.layout)
        if total != self.values.shape[-1]:
            raise ValueError(f"layout covers {total} dims, values have {self.values.shape[-1]}")

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    def part(self, name: str) -> np.ndarray:
        for n, off, length in self.layout:
            if n == name:
                return self.values[..., off : off + length]
        raise KeyError(name)


def make_layout(parts: Sequence[tuple[str, int]]) -> list[tuple[str, int, int]]:
    out, off = [], 0
    for name, n in parts:
        out.append((name, off, n))
        off += n
    return out


def label_part_names(c: int = NUM_KEPT) -> list[str]:
    return [f"label_{j}" for j in range(1, c + 1)]


def gmp_l2(feat):
    return ad.l2_normalize(ad.global_max(feat))


def mc(pyramid):
    """Multi-level concatenation over stages 3-5 of a five-level pyramid."""
    if len(pyramid) != 5:
        raise ValueError("mc needs a five-level pyramid")
    return ad.l2_normalize(ad.concat([gmp_l2(pyramid[i - 1]) for i in MC_LEVELS]))


def lmc(pyramid, masks: dict[int, np.ndarray], j: int):
    """Label-level MC for label index ``j`` (0-based).

    ``masks[i]`` has shape (N, C, H_i, W_i) and must match stage ``i``.
    """
    masked = list(pyramid)
    for i in MC_LEVELS:
        feat = pyramid[i - 1]
        fv = feat.value if isinstance(feat, ad.Var) else np.asarray(feat)
        m = np.asarray(masks[i])[:, j : j + 1]
        if m.shape[0] != fv.shape[0] or m.shape[2:] != fv.shape[2:]:
            raise ValueError(f"mask level {i} shape {m.shape} does not match features {fv.shape}")
        masked[i - 1] = ad.mul(feat, m)
    return mc(masked)


def label_weights(head: Mlp, params, label_feats: Sequence, mode: str = "softmax"):
    """Per-label weights from the shared head: (N, C).

    ``mode`` is ``softmax`` (standard), ``softplus`` (positive, unnormalised)
    or ``ones`` (unweighted label features).
    """
    if mode == "ones":
        n = label_feats[0].value.shape[0] if isinstance(label_feats[0], ad.Var) else len(label_feats[0])
        return ad.const(np.ones((n, len(label_feats))))
    scores = ad.concat([head.forward(params, l) for l in label_feats], axis=-1)
    if mode == "softmax":
        return ad.softmax(scores)
    if mode == "softplus":
        return ad.softplus(scores)
    raise ValueError(f"unknown weight mode {mode!r}")


def weighted_labels(label_feats: Sequence, weights) -> list:
    return [ad.mul(l, ad.getitem(weights, (slice(None), slice(j, j + 1))))
            for j, l in enumerate(label_feats)]


def enhanced_seg(x, label_feats: Sequence, weights, include_basic: bool = True):
    """L2Norm(concat(x, w_1 l_1, ..., w_C l_C)); drop ``x`` for the labels-only variant."""
    parts = weighted_labels(label_feats, weights)
    if include_basic:
        parts = [x] + parts
    return ad.l2_normalize(ad.concat(parts))


def rgb_label_heads(heads: Sequence[Mlp], params, x) -> list:
    return [h.forward(params, x) for h in heads]


def label_aware_rgb(x, label_feats: Sequence):
    return ad.l2_normalize(ad.concat([x, *label_feats]))


def transform_t(g, layout, basic_map: Mlp | None, label_maps: Sequence[Mlp], params):
    """Map label-aware RGB parts into the seg descriptor space.

    Each part of ``g`` is re-normalised and sent through its map: the basic
    part through ``basic_map``, label part ``j`` through ``label_maps[j]``
    (pass the same Mlp C times for a shared map).  A ``None`` basic map drops
    the basic part, matching a labels-only teacher.
    """
    if not layout:
        raise ValueError("transform needs the descriptor layout")
    out = []
    label_idx = 0
    for name, off, n in layout:
        part = ad.l2_normalize(ad.getitem(g, (slice(None), slice(off, off + n))))
        if name == "basic":
            if basic_map is not None:
                out.append(basic_map.forward(params, part))
        else:
            out.append(label_maps[label_idx].forward(params, part))
            label_idx += 1
    return ad.concat(out)
