import numpy as np
import pytest

from svpr.retrieval import EVAL_TOLERANCE, TRAIN_TOLERANCE, is_positive
from svpr.slme import DYNAMIC, NUM_KEPT
from svpr.synthdata import SynthConfig, generate, inject_regimes, load_dataset, write_dataset

SMALL = dict(n_places=6, n_val_places=4, height=32, width=32)


def views_of(ds, place):
    return [e for e in ds.entries if e["place"] == place]


def test_deterministic_per_seed():
    a, b = generate(SynthConfig(**SMALL, seed=3)), generate(SynthConfig(**SMALL, seed=3))
    assert a.entries == b.entries
    assert all(np.array_equal(a.rgb[i], b.rgb[i]) for i in a.rgb)
    c = generate(SynthConfig(**SMALL, seed=4))
    assert not np.array_equal(a.rgb[0], c.rgb[0])


def test_counts_splits_and_ids():
    ds = generate(SynthConfig(**SMALL, views_per_place=3))
    assert [e["id"] for e in ds.entries] == list(range(len(ds.entries)))
    assert len(ds.ids("query", "train")) == 6 and len(ds.ids("database", "train")) == 18
    assert len(ds.ids("query", "val")) == 4 and len(ds.ids("database", "val")) == 12
    assert ds.rgb[0].shape == (3, 32, 32) and ds.labels[0].shape == (32, 32)
    assert ds.labels[0].max() <= NUM_KEPT


def test_noise_free_views_are_crops_of_one_canvas():
    # with no noise and no regimes, label maps of a place differ only by a horizontal shift
    ds = generate(SynthConfig(**SMALL, max_shift=4))
    for place in range(10):
        maps = [ds.labels[e["id"]] for e in views_of(ds, place)]
        ref = maps[0]
        for m in maps[1:]:
            assert any(
                np.array_equal(ref[:, max(0, d) : 32 + min(0, d)], m[:, max(0, -d) : 32 + min(0, -d)])
                for d in range(-8, 9)
            )


def test_positives_follow_training_rule():
    ds = generate(SynthConfig(**SMALL))
    for q in ds.ids("query"):
        pos = ds.positives(q)
        assert pos
        assert all(ds.entry(d)["place"] == ds.entry(q)["place"] for d in pos)
        assert all(is_positive(ds.pose(q), ds.pose(d), TRAIN_TOLERANCE) for d in pos)
        evals = ds.positives(q, tol=EVAL_TOLERANCE)
        assert set(pos) <= set(evals)


def test_regime_fractions_and_effects():
    base = generate(SynthConfig(**SMALL, seed=1))
    ds = inject_regimes(SynthConfig(**SMALL, seed=1), 0.5, 0.5)
    tags = [ds.entry(q)["regime"] for q in ds.ids("query")]
    assert tags.count("A") == 3 and tags.count("B") == 3
    for q in ds.ids("query"):
        r = ds.entry(q)["regime"]
        same_labels = np.array_equal(ds.labels[q], base.labels[q])
        if r == "A":
            assert same_labels and not np.allclose(ds.rgb[q], base.rgb[q])
        elif r == "B":
            assert not same_labels and np.array_equal(ds.rgb[q], base.rgb[q])
    db = ds.ids("database")
    assert all(np.array_equal(ds.labels[i], base.labels[i]) for i in db)


def test_regime_b_adds_dynamic_regions():
    ds = generate(SynthConfig(**SMALL, regime_b_fraction=1.0))
    assert all((ds.labels[q] == DYNAMIC).any() for q in ds.ids("query"))


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(height=30)
    with pytest.raises(ValueError):
        SynthConfig(regime_a_fraction=0.7, regime_b_fraction=0.5)
    with pytest.raises(ValueError):
        SynthConfig(appearance_noise=-1)


def test_write_load_round_trip(tmp_path):
    ds = generate(SynthConfig(**SMALL, appearance_noise=0.5, struct_noise=0.1))
    write_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.entries == ds.entries and back.config == ds.config
    assert all(np.array_equal(back.rgb[i], ds.rgb[i]) for i in ds.rgb)
    assert all(np.array_equal(back.labels[i], ds.labels[i]) for i in ds.labels)
