"""Directional ablations on the synthetic regime dataset.

``selector_ablation`` trains both stage-1 branches once, partitions once and
then trains one stage-2 student per group selector, reporting validation
recall.  ``seg_variant_ablation`` trains one seg branch per variant.  Both are
run over several seeds and summarised by the median.
"""

from __future__ import annotations

import statistics
from dataclasses import asdict, replace

from .synthdata import SynthConfig, generate
from .trainer import (
    RunConfig,
    evaluate,
    run_partition,
    seg_model_from,
    student_model_from,
    train_stage1,
    train_stage2,
)

# Regime dataset used by the acceptance experiments: 200 training and 200
# validation places at 64x64, a third of the queries appearance-shifted and a
# third with corrupted label maps.
REGIME_DATA = SynthConfig(n_places=200, n_val_places=200, height=64, width=64, appearance_noise=0.5,
                          regime_a_fraction=0.3, regime_b_fraction=0.3)
REGIME_RUN = RunConfig(stage1_epochs=10, stage2_epochs=10, batch_size=8, lr_stage2=1e-3, mining="semi-hard")


def selector_ablation(seed: int, selectors, data: SynthConfig = REGIME_DATA, run: RunConfig = REGIME_RUN,
                      n: int = 1) -> dict:
    """Validation recall@n of the stage-2 student for each selector, plus partition counts."""
    ds = generate(replace(data, seed=seed))
    cfg = replace(run, seed=seed)
    seg, rgb = train_stage1("seg", ds, cfg), train_stage1("rgb", ds, cfg)
    pairs, report, _ = run_partition(seg, rgb, ds, cfg)
    out = {"counts": report.counts, "recall": {}}
    for sel in selectors:
        c = RunConfig.from_json({**cfg.to_json(), "selector": sel})
        ckpt = train_stage2(seg, pairs, ds, c)
        out["recall"][sel] = evaluate(student_model_from(ckpt), ckpt.params, ds, c).recall[n]
    return out


def seg_variant_ablation(seed: int, variants, data: SynthConfig = REGIME_DATA, run: RunConfig = REGIME_RUN,
                         n: int = 5) -> dict[str, float]:
    """Validation recall@n of the stage-1 seg branch for each variant."""
    ds = generate(replace(data, seed=seed))
    out = {}
    for v in variants:
        cfg = RunConfig.from_json({**asdict(replace(run, seed=seed)), "seg_variant": v})
        ckpt = train_stage1("seg", ds, cfg)
        out[v] = evaluate(seg_model_from(ckpt), ckpt.params, ds, cfg).recall[n]
    return out


def medians(per_seed: list[dict[str, float]]) -> dict[str, float]:
    keys = per_seed[0].keys()
    return {k: statistics.median(r[k] for r in per_seed) for k in keys}
