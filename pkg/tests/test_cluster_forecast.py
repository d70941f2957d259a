"""Clustering (k-means, two-stage) and forecasting (matrix factorization)."""

import numpy as np
import pytest

from potsmine import (
    LocfModel,
    MeanImputerModel,
    TmfModel,
    TrainConfig,
    TwoStageKMeansModel,
    cluster,
    fit as fit_model,
    forecast,
    generate_synthetic,
    impute,
    inject_mcar,
    kmeans_fit,
    tmf_fit,
    tmf_forecast,
)
from potsmine.errors import InvalidInputError


# ---------------------------------------------------------------------------
# k-means

def two_groups(n_per=10, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 0.05, size=(n_per, 2))
    b = rng.normal(10.0, 0.05, size=(n_per, 2))
    return np.vstack([a, b])


def test_kmeans_separates_tight_groups():
    points = two_groups()
    for seed in range(4):
        centroids, labels = kmeans_fit(points, 2, seed=seed)
        assert len(set(labels[:10])) == 1
        assert len(set(labels[10:])) == 1
        assert labels[0] != labels[10]
        # nearest-centroid oracle
        dists = ((points[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        assert np.array_equal(labels, dists.argmin(axis=1))


def test_kmeans_k1_is_mean():
    rng = np.random.default_rng(3)
    points = rng.normal(size=(12, 4))
    centroids, labels = kmeans_fit(points, 1, seed=0)
    assert np.abs(centroids[0] - points.mean(axis=0)).max() < 1e-12
    assert np.array_equal(labels, np.zeros(12, dtype=labels.dtype))


def test_kmeans_k_equals_n_zero_inertia():
    rng = np.random.default_rng(4)
    points = rng.normal(size=(6, 3))
    centroids, labels = kmeans_fit(points, 6, seed=1)
    inertia = ((points - centroids[labels]) ** 2).sum()
    assert inertia == 0.0
    assert sorted(labels.tolist()) == list(range(6))


def test_kmeans_inertia_non_increasing():
    rng = np.random.default_rng(6)
    points = rng.normal(size=(40, 5))
    for seed in range(3):
        history = []
        kmeans_fit(points, 4, seed=seed, history=history)
        assert len(history) >= 1
        for before, after in zip(history, history[1:]):
            assert after <= before + 1e-12


def test_kmeans_deterministic_and_validates():
    points = two_groups()
    a = kmeans_fit(points, 3, seed=9)
    b = kmeans_fit(points, 3, seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    with pytest.raises(InvalidInputError):
        kmeans_fit(points[:2], 3, seed=0)


# ---------------------------------------------------------------------------
# two-stage clustering

def clustered_view(seed=0):
    ds = generate_synthetic(24, 8, 2, 3, missing_rate=0.1, seed=seed)
    return ds, inject_mcar(ds, 0.1, seed=seed + 1)


def test_cluster_training_set_consistency():
    ds, view = clustered_view()
    model = TwoStageKMeansModel(inner=LocfModel(n_features=2), k=3)
    fit_model(model, view, view, TrainConfig(seed=7))
    labels = cluster(model, view.corrupted)
    # recompute the assignment from scratch through the same pipeline
    flat = impute(model.inner_model, view.corrupted).reshape(24, -1)
    std = (flat - model.feat_mean) / model.feat_std
    dists = ((std[:, None, :] - model.centroids[None]) ** 2).sum(axis=2)
    assert np.array_equal(labels, dists.argmin(axis=1))


def test_cluster_duplicates_get_same_label():
    ds, view = clustered_view(seed=3)
    model = TwoStageKMeansModel(inner=MeanImputerModel(n_features=2), k=2)
    fit_model(model, view, view, TrainConfig(seed=1))
    base = view.corrupted
    doubled = type(base)(list(base.samples) + list(base.samples))
    labels = cluster(model, doubled)
    assert np.array_equal(labels[:24], labels[24:])


def test_cluster_requires_enough_samples():
    ds = generate_synthetic(2, 6, 2, 2, missing_rate=0.0, seed=0)
    model = TwoStageKMeansModel(inner=LocfModel(n_features=2), k=5)
    with pytest.raises(InvalidInputError):
        fit_model(model, ds, ds, TrainConfig(seed=0))


def test_two_stage_rejects_non_imputer_inner():
    with pytest.raises(InvalidInputError):
        TwoStageKMeansModel(inner="locf", k=2)


# ---------------------------------------------------------------------------
# temporal matrix factorization

def rank_one_series(n=6, t=30, coeff=0.9, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.normal(1.0, 0.3, size=(n, 1))
    f = np.empty((t, 1))
    f[0] = 1.0
    for i in range(1, t):
        f[i] = coeff * f[i - 1]
    return w @ f.T, w, f


def test_tmf_recovers_noiseless_rank_one():
    y, _, _ = rank_one_series()
    mask = np.ones_like(y)
    model = tmf_fit(y, mask, rank=1, ar_order=1, lam_w=1e-8, lam_f=1e-8,
                    lam_a=1e-8, iters=60, seed=0)
    recon = model.reconstruct()[:, :, 0]
    rmse = np.sqrt(((recon - y) ** 2).mean())
    assert rmse < 1e-6


def test_tmf_held_out_cells_recovered():
    y, _, _ = rank_one_series(n=8, t=40, seed=2)
    rng = np.random.default_rng(5)
    mask = np.ones_like(y)
    hidden = rng.random(y.shape) < 0.3
    # keep every row and column observable
    hidden[:, 0] = False
    hidden[0, :] = False
    mask[hidden] = 0.0
    model = tmf_fit(y, mask, rank=1, ar_order=1, lam_w=1e-8, lam_f=1e-8,
                    lam_a=1e-8, iters=80, seed=1)
    recon = model.reconstruct()[:, :, 0]
    rmse = np.sqrt(((recon[hidden] - y[hidden]) ** 2).mean())
    assert rmse < 1e-3


def test_tmf_objective_monotone():
    rng = np.random.default_rng(11)
    y = rng.normal(size=(7, 25))
    mask = (rng.random(y.shape) < 0.8).astype(float)
    mask[:, 0] = 1.0
    mask[0, :] = 1.0
    model = tmf_fit(y, mask, rank=3, ar_order=2, iters=25, seed=4)
    history = model.objective_history[0]
    assert len(history) == 25
    for before, after in zip(history, history[1:]):
        assert after <= before * (1 + 1e-9) + 1e-12


def test_tmf_rejects_empty_rows_and_columns():
    y = np.ones((3, 5))
    mask = np.ones((3, 5))
    mask[1, :] = 0.0
    with pytest.raises(InvalidInputError, match="row 1"):
        tmf_fit(y, mask, rank=1)
    mask = np.ones((3, 5))
    mask[:, 2] = 0.0
    with pytest.raises(InvalidInputError, match="column 2"):
        tmf_fit(y, mask, rank=1)


def fabricate_rank_one_model(coeff=0.9, w_value=2.0):
    model = TmfModel(n_steps=4, n_features=1, rank=1, ar_order=1)
    model.n_series = 1
    model.w_list = [np.array([[w_value]])]
    # factor sequence ending at f_T = 1
    model.f_list = [np.array([[coeff ** 3], [coeff ** 2], [coeff], [1.0]])]
    model.a_list = [np.array([[coeff]])]
    return model


def test_tmf_forecast_one_step_arithmetic():
    model = fabricate_rank_one_model()
    out = tmf_forecast(model, horizon=1)
    assert out.shape == (1, 1, 1)
    assert abs(out[0, 0, 0] - 1.8) < 1e-15


def test_tmf_forecast_rejects_zero_horizon():
    model = fabricate_rank_one_model()
    with pytest.raises(InvalidInputError):
        tmf_forecast(model, horizon=0)


def test_tmf_forecast_zero_coefficients_give_zero():
    model = fabricate_rank_one_model()
    model.a_list = [np.zeros((1, 1))]
    out = tmf_forecast(model, horizon=4)
    assert np.array_equal(out, np.zeros((1, 4, 1)))


def test_tmf_forecast_linear_in_w():
    y, _, _ = rank_one_series(n=5, t=20, seed=7)
    mask = np.ones_like(y)
    model = tmf_fit(y, mask, rank=2, ar_order=2, iters=10, seed=2)
    base = tmf_forecast(model, horizon=3)
    # power-of-two scale keeps every float product exact
    model.w_list = [2.0 * model.w_list[0]]
    doubled = tmf_forecast(model, horizon=3)
    assert np.array_equal(doubled, 2.0 * base)
    model.w_list = [1.5 * model.w_list[0]]
    scaled = tmf_forecast(model, horizon=3)
    assert np.allclose(scaled, 3.0 * base, rtol=1e-13, atol=0.0)


def test_tmf_task_forecast_finite_and_shaped():
    ds = generate_synthetic(5, 12, 2, 2, missing_rate=0.2, seed=9)
    view = inject_mcar(ds, 0.1, seed=10)
    model = TmfModel(n_steps=12, n_features=2, rank=2, iters=8)
    fit_model(model, view, view, TrainConfig(seed=3))
    out = forecast(model, view.corrupted, horizon=4)
    assert out.shape == (5, 4, 2)
    assert np.isfinite(out).all()
