"""Tiny multi-stage backbone and MLP heads.

Each backbone stage is ``avgpool2 -> pointwise affine -> ReLU``, so stage ``i``
halves the spatial size and the pyramid F1..F5 has strides 2..32.  Parameters
are plain ``dict[str, np.ndarray]`` keyed ``"<branch>.<stage|head>.<w|b>"``;
forward functions accept either arrays (frozen) or tape :class:`Var` objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .rng import Rng, derive_seed

RGB_PLAN = (8, 16, 32, 64, 128)
SEG_PLAN = (8, 16, 32, 64, 64)


@dataclass(frozen=True)
class StageStack:
    prefix: str
    in_channels: int
    plan: tuple[int, ...] = RGB_PLAN

    def __post_init__(self):
        if len(self.plan) != 5:
            raise ValueError("a stage stack has exactly 5 stages")

    @property
    def channels(self) -> tuple[int, ...]:
        return (self.in_channels, *self.plan)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        ch = self.channels
        out = {}
        for i in range(1, 6):
            out[f"{self.prefix}.stage{i}.w"] = (ch[i], ch[i - 1])
            out[f"{self.prefix}.stage{i}.b"] = (ch[i],)
        return out

    @property
    def mc_dim(self) -> int:
        return sum(self.plan[2:])

    def forward(self, params, x) -> list:
        """Return the five stage outputs for a batch ``x`` of shape (N, C0, H, W)."""
        xv = x.value if isinstance(x, ad.Var) else np.asarray(x)
        if xv.ndim != 4 or xv.shape[1] != self.in_channels:
            raise ValueError(f"expected (N, {self.in_channels}, H, W) input, got {xv.shape}")
        if xv.shape[2] % 32 or xv.shape[3] % 32:
            raise ValueError(f"spatial dims must be divisible by 32, got {xv.shape[2:]}")
        feats = []
        h = x
        for i in range(1, 6):
            h = ad.avgpool2(h)
            h = ad.pointwise(h, params[f"{self.prefix}.stage{i}.w"], params[f"{self.prefix}.stage{i}.b"])
            h = ad.relu(h)
            feats.append(h)
        return feats


@dataclass(frozen=True)
class Mlp:
    prefix: str
    sizes: tuple[int, ...]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for k in range(len(self.sizes) - 1):
            out[f"{self.prefix}.fc{k}.w"] = (self.sizes[k + 1], self.sizes[k])
            out[f"{self.prefix}.fc{k}.b"] = (self.sizes[k + 1],)
        return out

    def forward(self, params, v):
        vv = v.value if isinstance(v, ad.Var) else np.asarray(v)
        if vv.shape[-1] != self.sizes[0]:
            raise ValueError(f"{self.prefix}: expected input dim {self.sizes[0]}, got {vv.shape[-1]}")
        h = v
        n = len(self.sizes) - 1
        for k in range(n):
            h = ad.linear(h, params[f"{self.prefix}.fc{k}.w"], params[f"{self.prefix}.fc{k}.b"])
            if k < n - 1:
                h = ad.relu(h)
        return h


def glorot_bound(shape: tuple[int, ...]) -> float:
    fan_out, fan_in = shape
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(shapes: dict[str, tuple[int, ...]], seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases.

    Each tensor draws from its own stream keyed by its name, so adding a new
    component to a model does not perturb the initial values of the others.
    """
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        a = glorot_bound(shape)
        key = int.from_bytes(name.encode(), "little") % (1 << 63)
        rng = Rng(derive_seed(seed, key))
        params[name] = rng.uniform(-a, a, size=shape)
    return params


def identity_init(mlp: Mlp) -> dict[str, np.ndarray]:
    """Identity weights for square single-layer MLPs (used by tests and warm starts)."""
    if len(mlp.sizes) != 2 or mlp.sizes[0] != mlp.sizes[1]:
        raise ValueError("identity init needs a single square layer")
    d = mlp.sizes[0]
    return {f"{mlp.prefix}.fc0.w": np.eye(d), f"{mlp.prefix}.fc0.b": np.zeros(d)}
