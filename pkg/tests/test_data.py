"""Windowing, normalization, splits, the synthetic generator, file formats."""

import numpy as np
import pytest

from metareplay.data import (DataError, Dataset, DomainId, DomainRecipe,
                             SplitPlan, SynthSpec, Window, apply_norm,
                             compute_norm_stats, dataset_from_windows,
                             default_synth_spec, exclude_small_domains,
                             make_split, normalize, pool_split,
                             read_csv_dataset, read_dataset,
                             stratified_shot_split, synth_generate,
                             windowize, write_csv_dataset, write_dataset)


def small_synth(seed=3, spc=12, n_domains=3):
    return synth_generate(default_synth_spec(n_domains=n_domains,
                                             samples_per_class=spc), seed)


# ---------------------------------------------------------------------------
# windowing

def test_windowize_count_and_content():
    series = np.arange(2 * 700, dtype=np.float32).reshape(2, 700)
    ws = windowize(series, window=256, overlap=128)
    # step 128: (700 - 256) // 128 + 1
    assert len(ws) == 4
    np.testing.assert_array_equal(ws[0].values, series[:, :256])
    np.testing.assert_array_equal(ws[1].values, series[:, 128:384])
    np.testing.assert_array_equal(ws[3].values, series[:, 384:640])


def test_windowize_no_overlap():
    series = np.zeros((3, 512), dtype=np.float32)
    assert len(windowize(series, window=256, overlap=0)) == 2


def test_windowize_short_series_raises():
    with pytest.raises(DataError, match="shorter than window"):
        windowize(np.zeros((3, 100), dtype=np.float32), window=256)


def test_windowize_bad_overlap_raises():
    with pytest.raises(DataError):
        windowize(np.zeros((3, 600), dtype=np.float32), window=256, overlap=256)


def test_dataset_from_windows_maps_missing_label_to_minus_one():
    w = [Window(values=np.zeros((3, 8), dtype=np.float32), label=None,
                domain=DomainId(0, "a")),
         Window(values=np.ones((3, 8), dtype=np.float32), label=1,
                domain=DomainId(0, "a"))]
    ds = dataset_from_windows(w, ("a",), n_classes=2)
    assert ds.labels.tolist() == [-1, 1]
    assert ds.labels.dtype == np.int16


# ---------------------------------------------------------------------------
# normalization

def test_norm_maps_channel_extremes_to_unit_interval():
    rng = np.random.default_rng(0)
    vals = rng.uniform(-5, 9, size=(20, 3, 16)).astype(np.float32)
    ds = Dataset(vals, np.zeros(20, dtype=np.int16), np.zeros(20, dtype=np.uint16),
                 ("d0",), 1)
    out = normalize(ds)
    for c in range(3):
        ch = out.values[:, c, :]
        assert ch.min() == pytest.approx(-1.0, abs=1e-6)
        assert ch.max() == pytest.approx(1.0, abs=1e-6)


def test_norm_constant_channel_goes_to_zero():
    vals = np.ones((5, 3, 8), dtype=np.float32)
    vals[:, 1, :] = 7.0                      # constant channel
    vals[0, 0, 0] = -1.0
    vals[0, 2, 3] = 2.0
    ds = Dataset(vals, np.zeros(5, dtype=np.int16), np.zeros(5, dtype=np.uint16),
                 ("d0",), 1)
    out = normalize(ds)
    np.testing.assert_array_equal(out.values[:, 1, :], 0.0)


def test_norm_is_idempotent():
    ds = small_synth()
    once = normalize(ds)
    twice = normalize(once)
    np.testing.assert_allclose(once.values, twice.values, atol=1e-6)


def test_apply_norm_clips_out_of_pool_values():
    pool = np.zeros((4, 3, 8), dtype=np.float32)
    pool[0, :, 0] = 1.0
    pool[0, :, 1] = -1.0
    stats = compute_norm_stats(pool)
    wild = Dataset(np.full((2, 3, 8), 50.0, dtype=np.float32),
                   np.zeros(2, dtype=np.int16), np.zeros(2, dtype=np.uint16),
                   ("d0",), 1)
    out = apply_norm(wild, stats)
    assert out.values.max() <= 1.0
    assert out.values.min() >= -1.0


def test_norm_rejects_nan():
    bad = np.zeros((2, 3, 4), dtype=np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(DataError):
        compute_norm_stats(bad)


def test_exclude_small_domains_reindexes_densely():
    vals = np.zeros((21, 3, 8), dtype=np.float32)
    domains = np.array([0] * 10 + [1] * 3 + [2] * 8, dtype=np.uint16)
    ds = Dataset(vals, np.zeros(21, dtype=np.int16), domains,
                 ("a", "b", "c"), 1)
    out = exclude_small_domains(ds, min_count=5)
    assert out.n_windows == 18
    assert out.n_domains == 2
    assert out.domain_tags == ("a", "c")
    assert set(np.unique(out.domains)) == {0, 1}


def test_exclude_small_domains_all_dropped_raises():
    ds = small_synth(spc=2)
    with pytest.raises(DataError):
        exclude_small_domains(ds, min_count=10**6)


# ---------------------------------------------------------------------------
# splits

def test_pool_split_sizes_floor_arithmetic():
    rng = np.random.default_rng(5)
    train, val, rest = pool_split(np.arange(1000), rng)
    assert (len(train), len(val), len(rest)) == (630, 70, 300)
    combined = np.sort(np.concatenate([train, val, rest]))
    np.testing.assert_array_equal(combined, np.arange(1000))


def test_pool_split_tiny_pool():
    rng = np.random.default_rng(5)
    train, val, rest = pool_split(np.arange(10), rng)
    assert (len(train), len(val), len(rest)) == (6, 1, 3)


def test_make_split_partitions_domains_correctly():
    ds = small_synth()
    plan = make_split(ds, target=1, k=3, seed=17)
    plan.validate_against(ds)
    assert not np.any(ds.domains[plan.pretrain_train] == 1)
    assert not np.any(ds.domains[plan.pretrain_val] == 1)
    for name in ("finetune_shots", "target_val", "target_test"):
        assert np.all(ds.domains[getattr(plan, name)] == 1)
    # k shots for each class present in the target domain
    labs = ds.labels[plan.finetune_shots]
    for c in range(ds.n_classes):
        assert (labs == c).sum() == 3
    assert abs(len(plan.target_val) - len(plan.target_test)) <= 1


def test_make_split_is_bit_exact_reproducible():
    ds = small_synth()
    a = make_split(ds, target=2, k=2, seed=99)
    b = make_split(ds, target=2, k=2, seed=99)
    for name, idx in a.index_sets().items():
        np.testing.assert_array_equal(idx, getattr(b, name))
    c = make_split(ds, target=2, k=2, seed=100)
    assert any(not np.array_equal(getattr(a, n), getattr(c, n))
               for n in a.index_sets())


def test_make_split_too_few_shots_raises():
    ds = small_synth(spc=4)
    with pytest.raises(DataError, match="class"):
        make_split(ds, target=0, k=5, seed=0)   # only 4 windows per class
    with pytest.raises(DataError, match="val/test"):
        make_split(ds, target=0, k=4, seed=0)   # shots eat the whole domain


def test_split_plan_rejects_overlap():
    ds = small_synth()
    plan = make_split(ds, target=0, k=2, seed=1)
    with pytest.raises(DataError, match="overlap"):
        SplitPlan(pretrain_train=plan.pretrain_train,
                  pretrain_val=plan.pretrain_val,
                  finetune_shots=plan.finetune_shots,
                  target_val=plan.target_val,
                  target_test=np.concatenate([plan.target_test,
                                              plan.finetune_shots[:1]]),
                  target_domain=plan.target_domain, seed=1)


def test_split_plan_validate_catches_domain_leak():
    ds = small_synth()
    plan = make_split(ds, target=0, k=2, seed=1)
    target_win = plan.finetune_shots[0]
    leaked = SplitPlan(pretrain_train=np.concatenate([plan.pretrain_train,
                                                      [target_win]]),
                       pretrain_val=plan.pretrain_val,
                       finetune_shots=plan.finetune_shots[1:],
                       target_val=plan.target_val,
                       target_test=plan.target_test,
                       target_domain=plan.target_domain, seed=1)
    with pytest.raises(DataError, match="held-out"):
        leaked.validate_against(ds)


def test_split_plan_json_round_trip(tmp_path):
    ds = small_synth()
    plan = make_split(ds, target=1, k=2, seed=42)
    p = tmp_path / "split.json"
    plan.save_json(p)
    back = SplitPlan.load_json(p)
    for name, idx in plan.index_sets().items():
        np.testing.assert_array_equal(idx, getattr(back, name))
    assert back.target_domain == plan.target_domain
    assert back.seed == plan.seed


def test_stratified_shot_split_needs_labels():
    vals = np.zeros((10, 3, 8), dtype=np.float32)
    ds = Dataset(vals, np.full(10, -1, dtype=np.int16),
                 np.zeros(10, dtype=np.uint16), ("d0",), 2)
    with pytest.raises(DataError, match="no labeled"):
        stratified_shot_split(ds, np.arange(10), 1,
                              np.random.default_rng(0), "pool")


# ---------------------------------------------------------------------------
# synthetic generator

def test_synth_labels_balanced():
    ds = small_synth(spc=9)
    for d in range(ds.n_domains):
        counts = np.bincount(ds.labels[ds.domains == d], minlength=ds.n_classes)
        np.testing.assert_array_equal(counts, 9)


def test_synth_identity_recipes_share_windows():
    ident = DomainRecipe()           # rotation 0, gain 1, sigma 0, phase 0
    spec = SynthSpec(domains=(ident, ident), n_classes=3, samples_per_class=5,
                     timesteps=64)
    ds = synth_generate(spec, seed=11)
    a = ds.values[ds.domains == 0]
    b = ds.values[ds.domains == 1]
    np.testing.assert_array_equal(a, b)


def test_synth_rotation_preserves_per_timestep_norms():
    base = DomainRecipe()
    rot = DomainRecipe(rotation_deg=57.0, rotation_axis=1)
    spec = SynthSpec(domains=(base, rot), n_classes=2, samples_per_class=4,
                     timesteps=64)
    ds = synth_generate(spec, seed=5)
    n0 = np.linalg.norm(ds.values[ds.domains == 0], axis=1)
    n1 = np.linalg.norm(ds.values[ds.domains == 1], axis=1)
    np.testing.assert_allclose(n0, n1, atol=1e-4)


def test_synth_gain_scales_norms():
    base = DomainRecipe()
    gained = DomainRecipe(gain=1.7)
    spec = SynthSpec(domains=(base, gained), n_classes=2, samples_per_class=3,
                     timesteps=64)
    ds = synth_generate(spec, seed=5)
    n0 = np.linalg.norm(ds.values[ds.domains == 0], axis=1)
    n1 = np.linalg.norm(ds.values[ds.domains == 1], axis=1)
    np.testing.assert_allclose(n1, 1.7 * n0, rtol=1e-4)


def test_synth_deterministic_per_seed():
    spec = default_synth_spec(samples_per_class=4)
    a = synth_generate(spec, seed=8)
    b = synth_generate(spec, seed=8)
    np.testing.assert_array_equal(a.values, b.values)
    c = synth_generate(spec, seed=9)
    assert not np.array_equal(a.values, c.values)


def test_synth_recipe_validation():
    with pytest.raises(DataError):
        DomainRecipe(rotation_axis=3)
    with pytest.raises(DataError):
        DomainRecipe(gain=0.0)
    with pytest.raises(DataError):
        DomainRecipe(noise_sigma=-0.1)


# ---------------------------------------------------------------------------
# dataset invariants

def test_dataset_rejects_label_out_of_range():
    vals = np.zeros((3, 3, 8), dtype=np.float32)
    labels = np.array([0, 1, 5], dtype=np.int16)
    with pytest.raises(DataError):
        Dataset(vals, labels, np.zeros(3, dtype=np.uint16), ("d0",), 2)


def test_dataset_rejects_length_mismatch():
    vals = np.zeros((3, 3, 8), dtype=np.float32)
    with pytest.raises(DataError):
        Dataset(vals, np.zeros(2, dtype=np.int16),
                np.zeros(3, dtype=np.uint16), ("d0",), 1)


def test_dataset_domain_indices_and_counts():
    ds = small_synth(spc=6)
    idx = ds.domain_indices(1)
    assert np.all(ds.domains[idx] == 1)
    assert len(idx) == 6 * ds.n_classes


# ---------------------------------------------------------------------------
# on-disk formats

def test_binary_dataset_round_trip_bit_exact(tmp_path):
    ds = small_synth(spc=5)
    p = tmp_path / "ds.bin"
    write_dataset(ds, p)
    back = read_dataset(p)
    assert back.values.tobytes() == ds.values.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.domains, ds.domains)
    assert back.n_classes == ds.n_classes
    assert back.n_domains == ds.n_domains


def test_binary_dataset_write_read_write_identical_bytes(tmp_path):
    ds = small_synth(spc=4)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    write_dataset(ds, p1)
    write_dataset(read_dataset(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_binary_dataset_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(DataError, match="magic"):
        read_dataset(p)


def test_binary_dataset_truncated(tmp_path):
    ds = small_synth(spc=3)
    p = tmp_path / "ds.bin"
    write_dataset(ds, p)
    blob = p.read_bytes()
    p.write_bytes(blob[:-7])
    with pytest.raises(DataError, match="bytes"):
        read_dataset(p)


def test_binary_dataset_trailing_garbage(tmp_path):
    ds = small_synth(spc=3)
    p = tmp_path / "ds.bin"
    write_dataset(ds, p)
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(DataError, match="bytes"):
        read_dataset(p)


def test_csv_round_trip_exact(tmp_path):
    ds = small_synth(spc=2)
    p = tmp_path / "ds.csv"
    write_csv_dataset(ds, p)
    back = read_csv_dataset(p)
    np.testing.assert_array_equal(back.values, ds.values)
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.domains, ds.domains)


def test_csv_header_validated(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("foo,bar,c0t0\n0,1,0.5\n")
    with pytest.raises(DataError, match="header"):
        read_csv_dataset(p)


def test_csv_column_order_validated(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("domain,label,c0t1,c0t0\n0,1,0.5,0.5\n")
    with pytest.raises(DataError):
        read_csv_dataset(p)
