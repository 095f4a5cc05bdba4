import math

import numpy as np
import pytest
from scipy.integrate import simpson
from scipy.stats import poisson

from errores import CorteInsuficiente, EstadoNoSoportado, ParametroInvalido
from states import (MASS_TOLERANCE, PhotonDist, StateKind, StateModel,
                    bernoulli_convolve, fock_amplitudes, noise_variance, photon_dist,
                    quadrature_pdf, quadrature_pdf_noisy, theoretical_B,
                    theoretical_B_curve, theoretical_C, twin_beam_moments,
                    twin_joint_pdf, twin_joint_photon_dist,
                    twin_sum_difference_variances)

CAT = StateModel.even_cat_with_mean(5.0)
PHASE_SQ = StateModel.squeezed_with_mean(5.0, 3.0, "phase")
AMPL_SQ = StateModel.squeezed_with_mean(5.0, 3.0, "amplitude")


def test_noise_variance():
    assert noise_variance(1.0) == 0.0
    assert noise_variance(0.8) == pytest.approx(0.0625)
    with pytest.raises(ParametroInvalido):
        noise_variance(0.0)
    with pytest.raises(ParametroInvalido):
        noise_variance(1.2)


def test_coherent_is_poisson():
    dist = photon_dist(StateModel.coherent(1.0))
    n = np.arange(dist.cutoff + 1)
    np.testing.assert_allclose(dist.probs, poisson.pmf(n, 1.0), rtol=1e-14, atol=0)
    assert dist.deficit <= MASS_TOLERANCE


def test_coherent_amplitudes_match_poisson():
    state = StateModel.coherent(1.2 - 0.4j)
    probs = np.abs(fock_amplitudes(state)) ** 2
    n = np.arange(probs.size)
    np.testing.assert_allclose(probs, poisson.pmf(n, abs(state.alpha) ** 2), atol=1e-15)


def test_even_cat_mean_and_parity():
    assert CAT.alpha.real ** 2 * math.tanh(CAT.alpha.real ** 2) == pytest.approx(5.0, rel=1e-12)
    dist = photon_dist(CAT)
    assert np.all(dist.probs[1::2] == 0.0)
    assert dist.mean() == pytest.approx(5.0, rel=1e-10)
    assert CAT.mean_photons() == pytest.approx(5.0, rel=1e-12)


@pytest.mark.parametrize("state", [PHASE_SQ, AMPL_SQ])
def test_squeezed_mean_photons(state):
    assert abs(state.alpha) ** 2 == pytest.approx(2.0)
    assert math.sinh(state.r) ** 2 == pytest.approx(3.0)
    assert photon_dist(state).mean() == pytest.approx(5.0, rel=1e-10)


def test_squeezing_sign_convention():
    assert PHASE_SQ.r > 0
    assert AMPL_SQ.r < 0
    with pytest.raises(ParametroInvalido):
        StateModel.squeezed_with_mean(5.0, 3.0, "sideways")
    with pytest.raises(ParametroInvalido):
        StateModel.squeezed_with_mean(2.0, 3.0)


def test_squeezed_vacuum_has_only_even_photons():
    dist = photon_dist(StateModel.squeezed(0.0, 0.7))
    assert np.max(dist.probs[1::2]) < 1e-30


@pytest.mark.parametrize("state", [StateModel.coherent(1.0 + 0.5j), CAT, PHASE_SQ, AMPL_SQ])
@pytest.mark.parametrize("phi", [0.0, 0.7, 1.9])
def test_quadrature_pdf_normalized(state, phi):
    x = np.linspace(-20.0, 20.0, 40_001)
    total = simpson(quadrature_pdf(state, phi, x), x=x)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_quadrature_pdf_moments_coherent():
    alpha = 1.0 + 0.5j
    state = StateModel.coherent(alpha)
    phi = 0.4
    mean = (alpha * np.exp(-1j * phi)).real
    x = np.linspace(-20.0, 20.0, 40_001)
    first = simpson(x * quadrature_pdf(state, phi, x), x=x)
    second = simpson((x - mean) ** 2 * quadrature_pdf_noisy(state, phi, x, 0.8), x=x)
    assert first == pytest.approx(mean, abs=1e-10)
    assert second == pytest.approx(0.25 + noise_variance(0.8), abs=1e-10)


def _fock_second_moment(state, phi):
    # x_φ² = (a²e^(−2iφ) + a†²e^(2iφ) + 2n + 1)/4
    c = fock_amplitudes(state)
    n = np.arange(c.size)
    number = np.sum(n * np.abs(c) ** 2)
    a2 = np.sum(np.conj(c[:-2]) * c[2:] * np.sqrt(n[1:-1] * n[2:]))
    return (2.0 * np.real(a2 * np.exp(-2j * phi)) + 2.0 * number + 1.0) / 4.0


@pytest.mark.parametrize("state", [StateModel.coherent(1.0 + 0.5j), CAT, PHASE_SQ, AMPL_SQ],
                         ids=["coherent", "cat", "phase", "amplitude"])
@pytest.mark.parametrize("phi", [0.0, 0.7, math.pi / 2, 2.3])
def test_quadrature_second_moment_matches_fock(state, phi):
    x = np.linspace(-20.0, 20.0, 40_001)
    second = simpson(x * x * quadrature_pdf(state, phi, x), x=x)
    assert second == pytest.approx(_fock_second_moment(state, phi), rel=1e-8)


def test_quadrature_pdf_noisy_reduces_to_ideal():
    x = np.linspace(-6, 6, 41)
    np.testing.assert_array_equal(quadrature_pdf_noisy(CAT, 1.1, x, 1.0),
                                  quadrature_pdf(CAT, 1.1, x))


def test_quadrature_pdf_rejects_twin_beam():
    with pytest.raises(EstadoNoSoportado):
        quadrature_pdf(StateModel.twin_beam(0.5), 0.0, 0.0)


def test_bernoulli_convolve_coherent_is_poisson():
    dist = photon_dist(StateModel.coherent(2.0))
    thinned = bernoulli_convolve(dist, 0.7)
    n = np.arange(thinned.cutoff + 1)
    np.testing.assert_allclose(thinned.probs, poisson.pmf(n, 0.7 * 4.0), atol=1e-14)
    assert bernoulli_convolve(dist, 1.0) is dist


def test_bernoulli_convolve_keeps_mass_and_scales_mean():
    thinned = bernoulli_convolve(photon_dist(CAT), 0.4)
    assert math.fsum(thinned.probs) == pytest.approx(1.0, abs=1e-12)
    assert thinned.mean() == pytest.approx(0.4 * 5.0, rel=1e-10)


def test_bernoulli_convolve_refuses_truncated_input():
    with pytest.raises(CorteInsuficiente):
        bernoulli_convolve(PhotonDist(np.array([0.5, 0.3])), 0.8)


def test_theoretical_B_coherent_is_zero():
    state = StateModel.coherent(1.5)
    for eta in (1.0, 0.8, 0.4):
        curve = theoretical_B_curve(state, eta, 15)
        assert np.max(np.abs(curve)) < 1e-15


def test_even_cat_odd_B():
    p = photon_dist(CAT).probs
    for n in (1, 3, 5, 7):
        expected = -(n + 1) * p[n + 1] ** 2
        assert theoretical_B(CAT, 1.0, n) == pytest.approx(expected, rel=1e-15)


def test_theoretical_B_curve_agrees_pointwise():
    curve = theoretical_B_curve(PHASE_SQ, 0.4, 12)
    assert curve.shape == (11,)
    for n in range(11):
        assert curve[n] == pytest.approx(theoretical_B(PHASE_SQ, 0.4, n), rel=1e-13, abs=1e-18)
    # con η = 0.4 sigue habiendo B_η(0) < 0 para el comprimido en fase
    assert curve[0] < 0


@pytest.mark.parametrize("state,etas", [
    (CAT, (1.0, 0.8, 0.4)),
    (PHASE_SQ, (1.0, 0.8, 0.4)),
    (AMPL_SQ, (1.0,)),
], ids=["cat", "phase", "amplitude"])
def test_loss_keeps_negative_B(state, etas):
    for eta in etas:
        assert theoretical_B_curve(state, eta, 20).min() < 0


def test_phase_squeezed_B0_is_negative_down_to_low_efficiency():
    for eta in (1.0, 0.8, 0.6, 0.4):
        assert theoretical_B(PHASE_SQ, eta, 0) < 0


def test_theoretical_C():
    lam = math.sqrt(0.5)
    assert theoretical_C(lam, 1.0) == pytest.approx(-2.0, rel=1e-14)
    assert theoretical_C(lam, 0.8) == pytest.approx(-1.28, rel=1e-14)
    assert theoretical_C(0.0, 0.8) == 0.0
    with pytest.raises(ParametroInvalido):
        theoretical_C(1.0, 1.0)


def test_twin_beam_moments_reproduce_C():
    for eta in (1.0, 0.8, 0.3):
        m = twin_beam_moments(math.sqrt(0.5), eta)
        c = (m["n1^2"] + m["n2^2"] - 2 * m["n1n2"]) - (m["n1"] - m["n2"]) ** 2 - (m["n1"] + m["n2"])
        assert c == pytest.approx(theoretical_C(math.sqrt(0.5), eta), rel=1e-12)
    assert twin_beam_moments(math.sqrt(0.5), 1.0)["n1"] == pytest.approx(1.0)


def test_twin_joint_photon_dist_is_thermal():
    state = StateModel.twin_beam(math.sqrt(0.5))
    dist = twin_joint_photon_dist(state)
    assert dist.mean() == pytest.approx(1.0, rel=1e-10)
    assert dist.probs[0] == pytest.approx(0.5)
    with pytest.raises(EstadoNoSoportado):
        photon_dist(state)
    with pytest.raises(EstadoNoSoportado):
        twin_joint_photon_dist(CAT)


def test_twin_joint_pdf_normalized_and_marginal_variance():
    lam, eta = math.sqrt(0.5), 0.8
    grid = np.linspace(-8, 8, 641)
    step = grid[1] - grid[0]
    x1, x2 = np.meshgrid(grid, grid, indexing="ij")
    density = twin_joint_pdf(lam, eta, x1, x2, 0.3, 0.9)
    assert density.sum() * step * step == pytest.approx(1.0, abs=1e-6)
    var_x1 = (x1 ** 2 * density).sum() * step * step
    # marginal térmica: (2n̄+1)/4 más el ruido de eficiencia
    assert var_x1 == pytest.approx(0.75 + noise_variance(eta), rel=1e-5)


def test_sum_difference_variances():
    var_u, var_v = twin_sum_difference_variances(math.sqrt(0.5), 1.0, 0.0)
    lam = math.sqrt(0.5)
    assert var_u == pytest.approx(0.5 * (1 + lam) ** 2 / 0.5)
    assert var_v == pytest.approx(0.5 * (1 - lam) ** 2 / 0.5)


def test_gain_constructor():
    state = StateModel.twin_beam_from_gain(2.0)
    assert abs(state.lam) ** 2 == pytest.approx(0.5)
    assert state.gain() == pytest.approx(2.0)
    with pytest.raises(EstadoNoSoportado):
        CAT.gain()


def test_invalid_states():
    with pytest.raises(ParametroInvalido):
        StateModel.twin_beam(1.0)
    with pytest.raises(ParametroInvalido):
        StateModel.even_cat_with_mean(-1.0)


def test_state_dict_round_trip():
    for state in (CAT, PHASE_SQ, AMPL_SQ, StateModel.coherent(0.3 - 1j),
                  StateModel.twin_beam(0.4 + 0.2j)):
        again = StateModel.from_dict(state.to_dict())
        assert again == state
        assert again.kind is StateKind(state.kind.value)


def test_explicit_cutoff_too_small():
    with pytest.raises(CorteInsuficiente):
        photon_dist(StateModel.even_cat(3.0, fock_cutoff=10))
