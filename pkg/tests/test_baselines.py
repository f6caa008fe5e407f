import math

import mpmath
import numpy as np
import pytest
from scipy.special import erfc, erfcinv

from otdrnet.baselines import (
    GLRTDetector,
    bound_delta,
    bound_pd,
    bound_table,
    calibrate_glrt_threshold,
    candidate_templates,
    empirical_threshold,
    glrt_detect,
    glrt_statistics,
    matched_filter_pd,
    matched_filter_pd_mc,
    optimum_bound_pd,
    snr_db_at_unit_delta,
    write_bound_csv,
)
from otdrnet.dataset import WindowScaler
from otdrnet.exceptions import CalibrationError, DegenerateTemplateError, DomainError
from otdrnet.simulation import WINDOW_LEN, PulseTemplate, SimConfig, build_pulse_template

mpmath.mp.dps = 40


@pytest.fixture(scope="module")
def template():
    return build_pulse_template(SimConfig())


def test_erfc_matches_high_precision():
    for x in np.linspace(-6, 6, 241):
        want = float(mpmath.erfc(mpmath.mpf(float(x))))
        assert abs(erfc(x) - want) <= 1e-12 * abs(want)


def test_erfcinv_matches_high_precision():
    for y in np.concatenate([np.logspace(-15, -1, 29), np.linspace(0.1, 1.9, 37)]):
        root = mpmath.findroot(lambda t: mpmath.erfc(t) - mpmath.mpf(float(y)), float(erfcinv(y)))
        assert abs(erfcinv(y) - float(root)) <= 1e-12 * max(abs(float(root)), 1e-300) + 1e-15


def test_unit_delta_gives_half():
    for p_fa in (0.01, 0.05, 0.1, 0.3):
        snr = snr_db_at_unit_delta(p_fa)
        pt = optimum_bound_pd(snr, p_fa)
        assert pt.delta == pytest.approx(1.0, abs=1e-12)
        assert pt.p_d == pytest.approx(0.5, abs=1e-12)


def test_bound_identities():
    snr = np.linspace(-10, 30, 81)
    for p_fa in (0.01, 0.05, 0.1, 0.5):
        snr_lin = 10 ** (snr / 10)
        delta = bound_delta(snr, p_fa)
        # the threshold delta reproduces the false-alarm rate exactly
        np.testing.assert_allclose(0.5 * erfc(delta * np.sqrt(2 * snr_lin)), p_fa, rtol=1e-13)
        # closed form equals the shifted complementary error function
        np.testing.assert_allclose(bound_pd(snr, p_fa),
                                   0.5 * erfc(erfcinv(2 * p_fa) - np.sqrt(2 * snr_lin)),
                                   rtol=1e-12, atol=1e-300)


def test_bound_monotone_and_limits():
    snr = np.linspace(-10, 40, 501)
    for p_fa in (0.01, 0.1, 0.5):
        assert np.all(np.diff(bound_pd(snr, p_fa)) >= 0)
    grid = np.array([0.001, 0.01, 0.05, 0.1, 0.3, 0.5])
    for s in (0.0, 5.0, 10.0):
        assert np.all(np.diff(bound_pd(s, grid)) >= 0)
    hi = optimum_bound_pd(40.0, 0.1)
    assert hi.delta < 0.01 and hi.p_d == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("p_fa", [0.0, -0.1, 0.6, 1.0])
def test_bound_domain(p_fa):
    with pytest.raises(DomainError):
        optimum_bound_pd(10.0, p_fa)


def test_bound_rejects_infinite_snr():
    with pytest.raises(DomainError):
        optimum_bound_pd(math.inf, 0.1)


def test_matched_filter_mc_agrees_with_analytic(template):
    snr = np.array([-10.0, -5.0, 0.0])
    mc, se = matched_filter_pd_mc(snr, 0.1, template, n_trials=40000, seed=1)
    an = matched_filter_pd(snr, 0.1, template.extent_samples)
    assert np.all(np.abs(mc - an) <= 3 * se + 0.004)


def _place(template, start, amp=1.0, length=WINDOW_LEN):
    w = np.zeros(length)
    w[start:start + template.extent_samples] = amp * template.samples
    return w


def test_glrt_noise_free_exact(template):
    for start in (0, 5, 16):
        x = _place(template, start, amp=3.7)
        res = glrt_detect(x, template, tau=1.0)
        assert res.detected
        assert res.amplitude_hat == pytest.approx(3.7, abs=1e-9)
        assert abs(res.position_idx_hat - (start + template.peak_offset)) < 0.25
        assert res.statistic >= 0


def test_glrt_brute_force_likelihood():
    tpl = PulseTemplate(np.array([0.5, 1.0, 0.4]), 1)
    rng = np.random.default_rng(0)
    amps = np.linspace(0, 6, 6001)
    for _ in range(50):
        x = _place(tpl, int(rng.integers(0, 6)), amp=rng.uniform(0.5, 3), length=8)
        x += 0.4 * rng.standard_normal(8)
        S, peaks = candidate_templates(tpl, 8)
        # grid of (placement, amplitude >= 0); the ML variance is RSS / N for each pair
        rss = ((x[None, None, :] - amps[None, :, None] * S[:, None, :]) ** 2).sum(axis=2)
        loglik = -4.0 * np.log(rss / 8)
        j = np.unravel_index(np.argmax(loglik), loglik.shape)[0]
        _, pos, _ = glrt_statistics(x[None, :], tpl)
        if np.sum(S[j] * x) > 0:
            assert abs(pos[0] - peaks[j]) <= 0.5


def test_glrt_scale_invariant(template):
    rng = np.random.default_rng(2)
    X = rng.standard_normal((200, WINDOW_LEN)) + _place(template, 8)
    a, pa, _ = glrt_statistics(X, template)
    b, pb, _ = glrt_statistics(1e-4 * X, template)
    np.testing.assert_allclose(a, b, rtol=1e-9)
    np.testing.assert_allclose(pa, pb, rtol=1e-12)


def test_glrt_calibration_holds_on_fresh_noise(template):
    tau = calibrate_glrt_threshold(0.1, template, 20000, seed=0)
    fresh = np.random.default_rng(99).standard_normal((10000, WINDOW_LEN)) * 3.0
    rate = np.mean(glrt_statistics(fresh, template)[0] >= tau)
    assert abs(rate - 0.1) <= 0.02


def test_glrt_threshold_median(template):
    rng = np.random.default_rng(0)
    null = glrt_statistics(rng.standard_normal((4000, WINDOW_LEN)), template)[0]
    assert calibrate_glrt_threshold(0.5, template, 4000, seed=0) == pytest.approx(np.median(null))


def test_threshold_standard_error_shrinks(template):
    small = [calibrate_glrt_threshold(0.1, template, 1000, seed=s) for s in range(16)]
    large = [calibrate_glrt_threshold(0.1, template, 16000, seed=100 + s) for s in range(16)]
    ratio = np.std(small) / np.std(large)
    assert 2.0 < ratio < 8.0  # 1/sqrt(n) predicts 4


def test_calibration_errors(template):
    with pytest.raises(CalibrationError):
        calibrate_glrt_threshold(0.1, template, 999)
    with pytest.raises(CalibrationError):
        empirical_threshold(np.zeros(5), 0.1)


def test_degenerate_template():
    with pytest.raises(DegenerateTemplateError):
        glrt_statistics(np.zeros((1, 8)), PulseTemplate(np.zeros(3), 1))


def test_glrt_not_above_matched_filter(template):
    tau = calibrate_glrt_threshold(0.1, template, 20000, seed=0)
    rng = np.random.default_rng(5)
    n = 4000
    snr_db = np.array([-8.0, -4.0, 0.0, 4.0])
    mf, mf_se = matched_filter_pd_mc(snr_db, 0.1, template, n_trials=n, seed=6)
    k = template.extent_samples
    for i, snr in enumerate(snr_db):
        sigma = math.sqrt(template.energy / (k * 10 ** (snr / 10)))
        starts = rng.integers(0, WINDOW_LEN - k + 1, n)
        X = np.stack([_place(template, s) for s in starts]) + sigma * rng.standard_normal((n, WINDOW_LEN))
        pd = np.mean(glrt_statistics(X, template)[0] >= tau)
        se = math.sqrt((pd * (1 - pd) + mf[i] * (1 - mf[i])) / n)
        assert pd <= mf[i] + 2 * se


def test_detector_with_scaler_matches_linear(template):
    cfg = SimConfig()
    sc = WindowScaler.from_config(cfg, kind="asinh")
    rng = np.random.default_rng(3)
    lin = 0.01 * rng.standard_normal((50, WINDOW_LEN)) + _place(template, 10, 0.05)
    det = GLRTDetector(template, n_monte_carlo=2000, scaler=sc).fit()
    plain = GLRTDetector(template, n_monte_carlo=2000).fit()
    np.testing.assert_allclose(det.decision_function(sc.transform(lin)), plain.decision_function(lin),
                               rtol=1e-6)
    assert det.threshold_ == plain.threshold_
    assert set(det.predict(sc.transform(lin))) <= {0, 1}


def test_bound_csv(template, tmp_path):
    rows = bound_table([0.0, 10.0], 0.1, template, n_trials=2000)
    path = tmp_path / "b.csv"
    write_bound_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("snr_db,p_fa,delta,p_d,")
    assert len(lines) == 3
    assert rows[1]["p_d_matched_filter_mc"] >= rows[1]["p_d"]
