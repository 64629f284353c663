"""Branch models: stage-1 rgb/seg branches and the stage-2 label-aware student."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aggregate as agg
from . import autodiff as ad
from .net import RGB_PLAN, SEG_PLAN, Mlp, StageStack, init_params
from .slme import NUM_KEPT

SEG_VARIANTS = ("B", "B-L", "B-WP", "WS", "B-WS")
STUDENT_VARIANTS = ("ours", "ours-G")
HEAD_HIDDEN = 32


@dataclass(frozen=True)
class RgbBranch:
    plan: tuple[int, ...] = RGB_PLAN

    @property
    def stack(self) -> StageStack:
        return StageStack("rgb", 3, self.plan)

    @property
    def dim(self) -> int:
        return self.stack.mc_dim

    def shapes(self):
        return self.stack.shapes()

    def init(self, seed: int):
        return init_params(self.shapes(), seed)

    def forward(self, params, rgb):
        x = agg.mc(self.stack.forward(params, rgb))
        return x, agg.make_layout([("basic", self.dim)])

    kind = "basic_rgb"


@dataclass(frozen=True)
class SegBranch:
    variant: str = "B-WS"
    plan: tuple[int, ...] = SEG_PLAN
    num_labels: int = NUM_KEPT

    def __post_init__(self):
        if self.variant not in SEG_VARIANTS:
            raise ValueError(f"unknown seg variant {self.variant!r}")

    @property
    def stack(self) -> StageStack:
        return StageStack("seg", self.num_labels, self.plan)

    @property
    def head(self) -> Mlp:
        return Mlp("seg.head", (self.stack.mc_dim, HEAD_HIDDEN, 1))

    @property
    def dim_basic(self) -> int:
        return self.stack.mc_dim

    @property
    def uses_labels(self) -> bool:
        return self.variant != "B"

    @property
    def uses_head(self) -> bool:
        return self.variant in ("B-WP", "WS", "B-WS")

    @property
    def kind(self) -> str:
        return "basic_seg" if self.variant == "B" else "enhanced_seg"

    def layout(self):
        d = self.dim_basic
        parts = []
        if self.variant != "WS":
            parts.append(("basic", d))
        if self.uses_labels:
            parts += [(n, d) for n in agg.label_part_names(self.num_labels)]
        return agg.make_layout(parts)

    def shapes(self):
        s = self.stack.shapes()
        if self.uses_head:
            s.update(self.head.shapes())
        return s

    def init(self, seed: int):
        return init_params(self.shapes(), seed)

    def basic(self, params, enc):
        return agg.mc(self.stack.forward(params, enc))

    def forward(self, params, enc, masks, phase: int = 2):
        """Descriptor for the current phase.

        Phase 1 supervises only the basic feature; phase 2 returns the
        variant's full descriptor.
        """
        pyr = self.stack.forward(params, enc)
        x = agg.mc(pyr)
        if phase == 1 or self.variant == "B":
            return x, agg.make_layout([("basic", self.dim_basic)])
        labels = [agg.lmc(pyr, masks, j) for j in range(self.num_labels)]
        mode = {"B-L": "ones", "B-WP": "softplus"}.get(self.variant, "softmax")
        w = agg.label_weights(self.head, params, labels, mode)
        g = agg.enhanced_seg(x, labels, w, include_basic=self.variant != "WS")
        return g, self.layout()


@dataclass(frozen=True)
class LabelAwareRgb:
    """Stage-2 student plus the transformation into the teacher's space.

    ``teacher_layout`` fixes the output layout of the transform; a teacher
    without a basic part gets no basic map.
    """

    teacher_layout: tuple = ()
    variant: str = "ours"
    plan: tuple[int, ...] = RGB_PLAN
    num_labels: int = NUM_KEPT
    share_label_map: bool = True

    def __post_init__(self):
        if self.variant not in STUDENT_VARIANTS:
            raise ValueError(f"unknown student variant {self.variant!r}")

    @property
    def stack(self) -> StageStack:
        return StageStack("rgb", 3, self.plan)

    @property
    def dim_basic(self) -> int:
        return self.stack.mc_dim

    @property
    def teacher_dim(self) -> int:
        return sum(n for _, _, n in self.teacher_layout)

    @property
    def teacher_part_dim(self) -> int:
        return self.teacher_layout[0][2]

    @property
    def teacher_has_basic(self) -> bool:
        return any(name == "basic" for name, _, _ in self.teacher_layout)

    @property
    def heads(self) -> list[Mlp]:
        d = self.dim_basic
        return [Mlp(f"rgb.label{j}", (d, d)) for j in range(1, self.num_labels + 1)]

    @property
    def basic_map(self) -> Mlp | None:
        if not self.teacher_has_basic:
            return None
        return Mlp("T.basic", (self.dim_basic, self.teacher_part_dim))

    @property
    def label_maps(self) -> list[Mlp]:
        d, ds = self.dim_basic, self.teacher_part_dim
        n_label_parts = sum(1 for name, _, _ in self.teacher_layout if name != "basic")
        if self.share_label_map:
            return [Mlp("T.label", (d, ds))] * n_label_parts
        return [Mlp(f"T.label{j}", (d, ds)) for j in range(1, n_label_parts + 1)]

    @property
    def global_map(self) -> Mlp:
        return Mlp("T.global", (self.dim_basic, self.teacher_dim))

    @property
    def kind(self) -> str:
        return "label_aware_rgb" if self.variant == "ours" else "basic_rgb"

    def layout(self):
        d = self.dim_basic
        if self.variant == "ours-G":
            return agg.make_layout([("basic", d)])
        return agg.make_layout([("basic", d)] + [(n, d) for n in agg.label_part_names(self.num_labels)])

    def student_shapes(self):
        s = self.stack.shapes()
        if self.variant == "ours":
            for h in self.heads:
                s.update(h.shapes())
        return s

    def transform_shapes(self):
        if self.variant == "ours-G":
            return self.global_map.shapes()
        s = {}
        if self.basic_map is not None:
            s.update(self.basic_map.shapes())
        for m in self.label_maps:
            s.update(m.shapes())
        return s

    def shapes(self):
        return {**self.student_shapes(), **self.transform_shapes()}

    def init(self, seed: int):
        return init_params(self.shapes(), seed)

    def forward(self, params, rgb):
        x = agg.mc(self.stack.forward(params, rgb))
        if self.variant == "ours-G":
            return x, self.layout()
        labels = agg.rgb_label_heads(self.heads, params, x)
        return agg.label_aware_rgb(x, labels), self.layout()

    def transform(self, params, g):
        if self.variant == "ours-G":
            return self.global_map.forward(params, ad.l2_normalize(g))
        return agg.transform_t(g, self.layout(), self.basic_map, self.label_maps, params)


def descriptor_values(v) -> np.ndarray:
    return v.value if isinstance(v, ad.Var) else np.asarray(v)
