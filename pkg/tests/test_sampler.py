import math

import numpy as np
import pandas as pd
import pytest
from scipy.integrate import cumulative_trapezoid
from scipy.stats import chisquare, kstest, norm

from errores import DatasetInvalido, EstadoNoSoportado, ParametroInvalido
from sampler import (HomodyneDataset, chunk_rng, combine_independent,
                     resolve_workers, sample_single, sample_twin)
from states import StateModel, noise_variance, quadrature_pdf_noisy, twin_joint_pdf

SEED = 20240517


def _cdf_from_pdf(state, phi, eta):
    grid = np.linspace(-25.0, 25.0, 200_001)
    cdf = cumulative_trapezoid(quadrature_pdf_noisy(state, phi, grid, eta), grid, initial=0.0)
    return lambda x: np.interp(x, grid, cdf / cdf[-1])


def test_same_seed_same_data():
    state = StateModel.even_cat_with_mean(5.0)
    first = sample_single(state, 0.8, 5000, SEED, chunk_size=1000)
    second = sample_single(state, 0.8, 5000, SEED, chunk_size=1000)
    pd.testing.assert_frame_equal(first.frame, second.frame)


def test_worker_count_does_not_change_data():
    state = StateModel.squeezed_with_mean(5.0, 3.0)
    serial = sample_single(state, 0.6, 7000, SEED, chunk_size=1024, workers=1)
    threaded = sample_single(state, 0.6, 7000, SEED, chunk_size=1024, workers=4)
    pd.testing.assert_frame_equal(serial.frame, threaded.frame)


def test_env_workers(monkeypatch):
    monkeypatch.setenv("TOMONC_WORKERS", "3")
    assert resolve_workers() == 3
    assert resolve_workers(1) == 1
    monkeypatch.setenv("TOMONC_WORKERS", "muchos")
    assert resolve_workers() >= 1


def test_chunk_streams_are_distinct():
    a = chunk_rng(7, 0).standard_normal(4)
    b = chunk_rng(7, 1).standard_normal(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, chunk_rng(7, 0).standard_normal(4))


def test_different_seeds_differ():
    state = StateModel.coherent(1.0)
    first = sample_single(state, 1.0, 100, 1)
    second = sample_single(state, 1.0, 100, 2)
    assert not np.array_equal(first.column("x"), second.column("x"))


def test_phases_uniform_in_half_turn():
    data = sample_single(StateModel.coherent(1.0), 1.0, 20_000, SEED)
    phi = data.column("phi")
    assert phi.min() >= 0.0 and phi.max() < math.pi
    assert kstest(phi, "uniform", args=(0.0, math.pi)).pvalue > 1e-4


def test_coherent_pinned_phase_moments():
    alpha, eta, count = 1.0 + 0.5j, 0.8, 200_000
    data = sample_single(StateModel.coherent(alpha), eta, count, SEED, phase=0.0)
    x = data.column("x")
    var = 0.25 + noise_variance(eta)
    assert np.all(data.column("phi") == 0.0)
    assert abs(x.mean() - alpha.real) < 4 * math.sqrt(var / count)
    assert kstest(x, norm(loc=alpha.real, scale=math.sqrt(var)).cdf).pvalue > 1e-4


@pytest.mark.parametrize("phi", [0.0, math.pi / 2])
def test_even_cat_matches_density(phi):
    state = StateModel.even_cat_with_mean(5.0)
    data = sample_single(state, 0.8, 30_000, SEED, phase=phi)
    assert kstest(data.column("x"), _cdf_from_pdf(state, phi, 0.8)).pvalue > 1e-4


@pytest.mark.parametrize("squeezing", ["phase", "amplitude"])
def test_squeezed_matches_density(squeezing):
    state = StateModel.squeezed_with_mean(5.0, 3.0, squeezing)
    data = sample_single(state, 1.0, 30_000, SEED, phase=0.9)
    assert kstest(data.column("x"), _cdf_from_pdf(state, 0.9, 1.0)).pvalue > 1e-4


def test_twin_marginal_and_correlation():
    lam, eta, count = math.sqrt(0.5), 0.8, 200_000
    data = sample_twin(lam, eta, count, SEED)
    x1, x2 = data.column("x1"), data.column("x2")
    var = 0.75 + noise_variance(eta)
    # varianza muestral: error relativo ≈ √(2/N)
    assert x1.var() == pytest.approx(var, rel=4 * math.sqrt(2.0 / count) * 1.5)
    assert x2.var() == pytest.approx(var, rel=4 * math.sqrt(2.0 / count) * 1.5)
    # ⟨x₁x₂⟩ = λ⟨cos(φ₁+φ₂)⟩ = −λ(2/π)² con φᵢ uniformes en [0, π)
    expected = -lam * (2.0 / math.pi) ** 2
    assert abs(np.mean(x1 * x2) - expected) < 4 * var / math.sqrt(count)


def _phase_averaged_bin_probs(lam, eta, edges, sub=20):
    # φ₁+φ₂ con φᵢ uniformes en [0, π): densidad triangular en [0, 2π)
    nodes, weights = np.polynomial.legendre.leggauss(48)
    half = 0.5 * math.pi * (nodes + 1.0)
    sums = np.concatenate([half, half + math.pi])
    w_sums = (0.5 * math.pi * np.concatenate([weights, weights])
              * np.concatenate([half, math.pi - half]) / math.pi ** 2)
    bins = edges.size - 1
    step = (edges[1] - edges[0]) / sub
    centers = edges[0] + step * (np.arange(bins * sub) + 0.5)
    x1, x2 = np.meshgrid(centers, centers, indexing="ij")
    density = np.zeros_like(x1)
    for phase_sum, weight in zip(sums, w_sums):
        density += weight * twin_joint_pdf(lam, eta, x1, x2, phase_sum, 0.0)
    return density.reshape(bins, sub, bins, sub).sum(axis=(1, 3)) * step * step


def test_twin_histogram_matches_phase_averaged_density():
    lam, eta, count = math.sqrt(0.5), 0.8, 200_000
    data = sample_twin(lam, eta, count, SEED)
    edges = np.linspace(-4.5, 4.5, 13)
    observed, _, _ = np.histogram2d(data.column("x1"), data.column("x2"), bins=[edges, edges])
    probs = _phase_averaged_bin_probs(lam, eta, edges)
    assert probs.sum() == pytest.approx(1.0, abs=1e-4)
    used = count * probs >= 5
    expected = probs[used] * observed[used].sum() / probs[used].sum()
    assert chisquare(observed[used], expected).pvalue > 1e-3


def test_twin_pinned_phases_sum_difference():
    lam, count = math.sqrt(0.5), 100_000
    data = sample_twin(lam, 1.0, count, SEED, phase_policy=(0.0, 0.0))
    u = data.column("x1") + data.column("x2")
    v = data.column("x1") - data.column("x2")
    assert u.var() == pytest.approx((1 + lam) ** 2, rel=0.03)
    assert v.var() == pytest.approx((1 - lam) ** 2, rel=0.03)


def test_twin_rejects_bad_policy():
    with pytest.raises(ParametroInvalido):
        sample_twin(0.5, 1.0, 10, SEED, phase_policy="locked")
    with pytest.raises(ParametroInvalido):
        sample_twin(0.5, 1.0, 10, SEED, phase_policy=(0.0, 4.0))


def test_input_validation():
    state = StateModel.coherent(1.0)
    with pytest.raises(ParametroInvalido):
        sample_single(state, 0.8, 0, SEED)
    with pytest.raises(ParametroInvalido):
        sample_single(state, 1.5, 10, SEED)
    with pytest.raises(ParametroInvalido):
        sample_single(state, 0.8, 10, -1)
    with pytest.raises(ParametroInvalido):
        sample_single(state, 0.8, 10, SEED, phase=math.pi)
    with pytest.raises(EstadoNoSoportado):
        sample_single(StateModel.twin_beam(0.5), 0.8, 10, SEED)
    with pytest.raises(ParametroInvalido):
        sample_twin(1.0, 0.8, 10, SEED)


def test_save_load_round_trip(tmp_path):
    data = sample_twin(0.6, 0.7, 3000, SEED, chunk_size=512)
    path = data.save(tmp_path / "twin.bin")
    loaded = HomodyneDataset.load(path)
    pd.testing.assert_frame_equal(loaded.frame, data.frame)
    assert loaded.header() == data.header()


def test_load_truncated_file(tmp_path):
    data = sample_single(StateModel.coherent(1.0), 1.0, 100, SEED)
    path = data.save(tmp_path / "single.bin")
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(DatasetInvalido):
        HomodyneDataset.load(path)


def test_csv_export_is_exact(tmp_path):
    data = sample_single(StateModel.coherent(1.0), 0.9, 500, SEED)
    path = data.to_csv(tmp_path / "single.csv")
    frame = pd.read_csv(path, float_precision="round_trip")
    np.testing.assert_array_equal(frame["x"].to_numpy(), data.column("x"))


def test_dataset_validation():
    frame = pd.DataFrame({"x": [0.1, 0.2], "phi": [0.0, 3.5]})
    with pytest.raises(DatasetInvalido):
        HomodyneDataset(1, frame, 0.8, SEED, "bad")
    with pytest.raises(DatasetInvalido):
        HomodyneDataset(1, pd.DataFrame({"x": [0.1]}), 0.8, SEED, "bad")
    with pytest.raises(DatasetInvalido):
        HomodyneDataset(1, pd.DataFrame({"x": [], "phi": []}), 0.8, SEED, "empty")


def test_combine_independent():
    first = sample_single(StateModel.coherent(1.0), 0.9, 400, 1)
    second = sample_single(StateModel.coherent(0.5), 0.9, 400, 2)
    both = combine_independent(first, second)
    assert both.mode_count == 2
    np.testing.assert_array_equal(both.column("x2"), second.column("x"))
    with pytest.raises(DatasetInvalido):
        combine_independent(first, sample_single(StateModel.coherent(1.0), 0.8, 400, 3))
