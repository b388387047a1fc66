import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hatdfed.data import (Dataset, SizingError, build_round_dataset, dirichlet_partition, dirichlet_ratios,
                          draw_round_pool, gen_synthetic_dataset, largest_remainder, load_dataset,
                          managed_devices, sample_device_connectivity, save_dataset, split_subsets)
from hatdfed.learner import evaluate_accuracy, init_params, local_train


def test_generation_is_deterministic():
    a = gen_synthetic_dataset(4, 8, 200, np.random.default_rng(1))
    b = gen_synthetic_dataset(4, 8, 200, np.random.default_rng(1))
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)


def test_single_class_labels():
    ds = gen_synthetic_dataset(1, 2, 10, np.random.default_rng(0))
    assert len(ds) == 10 and np.all(ds.labels == 0)


def test_pooled_task_is_learnable():
    rng = np.random.default_rng(2)
    ds = gen_synthetic_dataset(4, 8, 500, rng)
    params = init_params(8, 0, 4, rng)
    out = local_train(params, ds.features, ds.labels, lr=0.1, epochs=5, batch=20, rng=rng).params_out
    assert evaluate_accuracy(out, ds.features, ds.labels) > 0.9


def test_partition_ratios_sum_to_one_and_disjoint():
    ds = gen_synthetic_dataset(10, 4, 500, np.random.default_rng(0))
    part = dirichlet_partition(ds, 0.3, 5, 800, np.random.default_rng(1))
    for r in part.per_server_ratios:
        assert r.sum() == pytest.approx(1.0, abs=1e-12)
    flat = np.concatenate(part.per_server_indices)
    assert len(flat) == 4000 and len(np.unique(flat)) == 4000


def test_large_concentration_is_near_uniform():
    rng = np.random.default_rng(3)
    mean = np.mean([dirichlet_ratios(1e6, 4, rng) for _ in range(100)], axis=0)
    assert np.all(np.abs(mean - 0.25) <= 0.02)


def test_dirichlet_marginal_matches_beta():
    # each coordinate of Dir(lam * 1_L) is Beta(lam, (L-1) lam)
    rng = np.random.default_rng(4)
    lam, L = 0.7, 5
    draws = np.array([dirichlet_ratios(lam, L, rng)[0] for _ in range(4000)])
    assert stats.kstest(draws, stats.beta(lam, (L - 1) * lam).cdf).pvalue > 1e-3


def test_single_server_partition():
    ds = gen_synthetic_dataset(3, 2, 50, np.random.default_rng(0))
    part = dirichlet_partition(ds, 0.5, 1, 120, np.random.default_rng(0))
    assert len(part.per_server_indices[0]) == 120


def test_partition_too_large_names_deficit():
    ds = gen_synthetic_dataset(2, 2, 10, np.random.default_rng(0))
    with pytest.raises(SizingError, match="deficit 10"):
        dirichlet_partition(ds, 0.5, 3, 10, np.random.default_rng(0))


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12), st.integers(0, 500))
@settings(max_examples=200, deadline=None)
def test_largest_remainder_sums_to_total(raw, total):
    r = np.asarray(raw) + 1e-9
    r = r / r.sum()
    counts = largest_remainder(r, total)
    assert counts.sum() == total
    assert np.all(np.abs(counts - r * total) < 1.0 + 1e-9)


def test_connectivity_extremes():
    managed = managed_devices(3, 30)
    rng = np.random.default_rng(0)
    full = sample_device_connectivity(1.0, managed, rng)
    assert np.all(full.sum(axis=1) == 30)
    assert sample_device_connectivity(0.0, managed, rng).sum() == 0
    # devices outside a server's managed set are never connected to it
    assert full[0, 30:].sum() == 0


def test_connectivity_mean():
    managed = managed_devices(1, 30)
    rng = np.random.default_rng(5)
    counts = [sample_device_connectivity(0.5, managed, rng).sum() for _ in range(10_000)]
    assert 14.7 <= np.mean(counts) <= 15.3
    # the count distribution is Binomial(30, 0.5)
    observed = np.bincount(counts, minlength=31)
    expected = stats.binom(30, 0.5).pmf(np.arange(31)) * len(counts)
    keep = expected >= 5
    obs, exp = observed[keep], expected[keep]
    assert stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue > 1e-3


def test_connectivity_rejects_bad_rho():
    with pytest.raises(ValueError):
        sample_device_connectivity(1.5, managed_devices(1, 3), np.random.default_rng(0))


def _round_setup(n_connected):
    rng = np.random.default_rng(0)
    pool = draw_round_pool(np.arange(800), 60, rng)
    subsets = split_subsets(pool, 30, rng)
    conn = np.zeros((1, 30), dtype=np.int8)
    conn[0, :n_connected] = 1
    return pool, subsets, conn, rng


def test_round_dataset_sizes():
    pool, subsets, conn, rng = _round_setup(0)
    idx, size = build_round_dataset(0, conn, subsets, rng)
    assert size == 0 and len(idx) == 0
    pool, subsets, conn, rng = _round_setup(30)
    idx, size = build_round_dataset(0, conn, subsets, rng)
    assert size == 60 and sorted(idx) == sorted(pool)
    pool, subsets, conn, rng = _round_setup(15)
    idx, size = build_round_dataset(0, conn, subsets, rng)
    assert size == 30 and len(np.unique(idx)) == 30 and set(idx) <= set(pool)


def test_dataset_round_trip(tmp_path):
    ds = gen_synthetic_dataset(3, 4, 5, np.random.default_rng(0))
    save_dataset(ds, tmp_path / "d.txt")
    back = load_dataset(tmp_path / "d.txt")
    assert back.n_classes == 3
    assert np.array_equal(back.features, ds.features) and np.array_equal(back.labels, ds.labels)


def test_dataset_validates_shapes():
    with pytest.raises(ValueError):
        Dataset(features=np.zeros((3, 2)), labels=np.zeros(2, dtype=int), n_classes=1)
