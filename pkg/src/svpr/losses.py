"""Triplet loss, sample weighting schemes and the distillation objective."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

D1, D2, D3, D4 = "D1", "D2", "D3", "D4"
GROUPS = (D1, D2, D3, D4)
DEFAULT_MARGIN = 0.1


def triplet_loss(xq, xp, xn, margin: float = DEFAULT_MARGIN):
    """Mean over rows of max(d(q, p) - d(q, n) + m, 0)."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    shapes = {v.value.shape if isinstance(v, ad.Var) else tuple(v.shape) for v in (xq, xp, xn)}
    if len(shapes) != 1:
        raise ValueError(f"triplet inputs differ in shape: {shapes}")
    shape = shapes.pop()
    rows = 1 if len(shape) == 1 else shape[0]
    per = ad.hinge(ad.l2_distance(xq, xp) - ad.l2_distance(xq, xn) + margin)
    return ad.mul(ad.sum_all(per), 1.0 / rows)


def classify_group(x: int, y: int, n_t: int) -> str:
    """Group of a (query, positive) pair from its seg rank ``x`` and rgb rank ``y``."""
    if x > n_t:
        return D4
    if y > n_t:
        return D1
    return D2 if x <= y else D3


# --- weighting schemes ---------------------------------------------------


@dataclass(frozen=True)
class Phi:
    """Log-damped weighting: constants 4, 5, 4 for D1, D2, D3; D4 is zero."""

    n_t: int = 10
    n_m: int = 20

    def weight(self, x: int, y: int) -> float:
        g = classify_group(x, y, self.n_t)
        if g == D4:
            return 0.0
        denom = self._damp(x)
        if g == D1:
            v = 1.0 + (min(self.n_m, y) - x) / (4.0 * denom)
        elif g == D2:
            v = 1.0 + (y - x) / (5.0 * denom)
        else:
            v = 1.0 + (y - x) / (4.0 * denom)
        return max(v, 0.0)

    def _damp(self, x: int) -> float:
        return math.log(1.0 + x)


@dataclass(frozen=True)
class PhiPrototype(Phi):
    """Same piecewise form with ``x`` in place of ``ln(1 + x)``."""

    def _damp(self, x: int) -> float:
        return float(x)


@dataclass(frozen=True)
class PhiDegenerateGPS:
    """Single-branch (seg only) weighting: 1 + 1 / (4 ln(1 + x)) for x <= N_t, else 0."""

    n_t: int = 10

    def weight(self, x: int, y: int | None = None) -> float:
        if x > self.n_t:
            return 0.0
        return 1.0 + 1.0 / (4.0 * math.log(1.0 + x))


@dataclass(frozen=True)
class Constants:
    """One constant weight per group D1..D4."""

    c1: float = 8.0
    c2: float = 4.0
    c3: float = 1.0
    c4: float = 0.0
    n_t: int = 10

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3, self.c4) < 0:
            raise ValueError("weights must be nonnegative")

    def weight(self, x: int, y: int) -> float:
        g = classify_group(x, y, self.n_t)
        return {D1: self.c1, D2: self.c2, D3: self.c3, D4: self.c4}[g]


@dataclass(frozen=True)
class ConstantsGPS:
    """Constants for the seg-only split: S1 = {x <= N_t}, S2 = {x > N_t}."""

    s1: float = 1.0
    s2: float = 0.0
    n_t: int = 10

    def __post_init__(self):
        if min(self.s1, self.s2) < 0:
            raise ValueError("weights must be nonnegative")

    def weight(self, x: int, y: int | None = None) -> float:
        return self.s1 if x <= self.n_t else self.s2


SCHEMES = {
    "phi": Phi,
    "phi_prototype": PhiPrototype,
    "phi_gps": PhiDegenerateGPS,
    "constants": Constants,
    "constants_gps": ConstantsGPS,
}


def phi(x: int, y: int, scheme=None) -> float:
    if x < 1 or y < 1:
        raise ValueError("ranks start at 1")
    return (scheme or Phi()).weight(x, y)


def scheme_to_json(scheme) -> dict:
    name = next(k for k, v in SCHEMES.items() if type(scheme) is v)
    return {"name": name, **asdict(scheme)}


def scheme_from_json(doc: dict):
    doc = dict(doc)
    cls = SCHEMES[doc.pop("name")]
    return cls(**doc)


# --- distillation --------------------------------------------------------


def kd_loss(g_seg, t_rgb, weight):
    """weight * ||g_seg - t_rgb||^2, summed over rows.

    ``weight`` is a scalar or a per-row array; ``g_seg`` is the frozen teacher
    descriptor and ``t_rgb`` the transformed student descriptor.
    """
    gs = g_seg.value if isinstance(g_seg, ad.Var) else g_seg
    tr = t_rgb.value if isinstance(t_rgb, ad.Var) else t_rgb
    if gs.shape != tr.shape:
        raise ValueError(f"kd length mismatch: {gs.shape} vs {tr.shape}")
    diff = ad.sub(g_seg, t_rgb)
    if gs.ndim == 1:
        return ad.mul(ad.sum_squares(diff), float(weight))
    w = np.broadcast_to(np.asarray(weight, dtype=float), gs.shape[:1])[:, None]
    return ad.sum_squares(ad.mul(diff, np.sqrt(w)))


def total_loss(xq, xp, xn, kd_terms, margin: float = DEFAULT_MARGIN):
    """Triplet loss on the student descriptors plus the sum of the kd terms."""
    loss = triplet_loss(xq, xp, xn, margin)
    for term in kd_terms:
        loss = ad.add(loss, term)
    return loss
