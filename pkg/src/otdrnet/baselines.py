"""Classical comparators for the CNN detector.

* :func:`optimum_bound_pd` evaluates the closed-form optimum unipolar
  detector bound, ``P_d = erfc(2 (delta - 1) sqrt(snr / 2)) / 2`` with
  ``delta = erfcinv(2 p_fa) / sqrt(2 snr)``, exactly in that form.
* :func:`matched_filter_pd_mc` is an independent Monte Carlo estimate of the
  known-position matched filter on the simulator's own pulse and SNR
  convention.
* :class:`GLRTDetector` is an R1MSDE-style rank-1 matched-subspace detector:
  the event is a pulse of known shape and duration with unknown position,
  amplitude and noise variance, all estimated by maximum likelihood.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcinv
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import CalibrationError, DegenerateTemplateError, DomainError, ShapeError
from .simulation import WINDOW_LEN, PulseTemplate
from .validation import check_windows

GLRT_NAME = "R1MSDE-style GLRT"
# Relative floor on the residual variance, so a noise-free fit stays finite.
_RESIDUAL_FLOOR = 1e-12


@dataclass(frozen=True)
class BoundPoint:
    snr_db: float
    p_fa: float
    delta: float
    p_d: float


def _check_pfa(p_fa):
    p_fa = np.asarray(p_fa, dtype=float)
    if np.any(~(p_fa > 0)) or np.any(p_fa > 0.5):
        raise DomainError(f"p_fa must lie in (0, 0.5], got {p_fa}")
    return p_fa


def bound_delta(snr_db, p_fa):
    """Detection threshold ``erfcinv(2 p_fa) / sqrt(2 snr_lin)``."""
    p_fa = _check_pfa(p_fa)
    snr_lin = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
    return erfcinv(2.0 * p_fa) / np.sqrt(2.0 * snr_lin)


def bound_pd(snr_db, p_fa):
    """Vectorized optimum-detector ``P_d``."""
    snr_lin = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
    delta = bound_delta(snr_db, p_fa)
    return 0.5 * erfc(2.0 * (delta - 1.0) * np.sqrt(0.5 * snr_lin))


def optimum_bound_pd(snr_db: float, p_fa: float) -> BoundPoint:
    if not math.isfinite(snr_db):
        raise DomainError("snr_db must be finite")
    delta = float(bound_delta(snr_db, p_fa))
    return BoundPoint(float(snr_db), float(p_fa), delta, float(bound_pd(snr_db, p_fa)))


def snr_db_at_unit_delta(p_fa: float) -> float:
    """SNR at which ``delta == 1`` (where the bound gives ``P_d = 1/2``)."""
    return float(10.0 * np.log10(erfcinv(2.0 * _check_pfa(p_fa)) ** 2 / 2.0))


def matched_filter_pd(snr_db, p_fa, extent_samples):
    """Closed form of the known-position matched filter under the simulator's
    SNR convention: detection index ``sqrt(K * snr_lin)``."""
    p_fa = _check_pfa(p_fa)
    d = np.sqrt(extent_samples * 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0))
    return 0.5 * erfc(erfcinv(2.0 * p_fa) - d / math.sqrt(2.0))


def matched_filter_pd_mc(snr_db, p_fa, template: PulseTemplate, n_trials=20000, seed=0):
    """Monte Carlo ``P_d`` of the known-position, known-noise matched filter.

    Each trial draws the noise-calibrated event (unit amplitude) plus white
    noise over the template support and thresholds ``s.x / (sigma |s|)``
    at the empirical ``1 - p_fa`` quantile of the same statistic under
    noise alone.  Returns ``(p_d, standard_error)`` arrays.
    """
    p_fa = float(_check_pfa(p_fa))
    snr_db = np.atleast_1d(np.asarray(snr_db, dtype=float))
    s = template.samples
    norm = math.sqrt(template.energy)
    rng = np.random.default_rng(seed)
    null = rng.standard_normal((n_trials, s.size)) @ s / norm
    eta = np.quantile(null, 1.0 - p_fa)
    pd = np.empty(snr_db.size)
    for i, snr in enumerate(snr_db):
        sigma = math.sqrt(template.energy / (s.size * 10.0 ** (snr / 10.0)))
        x = s + sigma * rng.standard_normal((n_trials, s.size))
        pd[i] = np.mean(x @ s / (sigma * norm) >= eta)
    return pd, np.sqrt(pd * (1.0 - pd) / n_trials)


def candidate_templates(template: PulseTemplate, window_len: int = WINDOW_LEN):
    """All placements of ``template`` overlapping a window, clipped at the edges.

    Returns ``(S, peak_idx)``: ``S[j]`` is the window-length signal of
    placement ``j`` (template start ``j - K + 1``) and ``peak_idx[j]`` the
    index of its peak relative to the window.
    """
    s = np.asarray(template.samples, dtype=float)
    k = s.size
    if k > window_len:
        raise ShapeError(f"template extent {k} exceeds window length {window_len}")
    if not np.any(s != 0):
        raise DegenerateTemplateError("template has zero energy")
    starts = np.arange(-(k - 1), window_len)
    S = np.zeros((starts.size, window_len))
    for j, st in enumerate(starts):
        lo, hi = max(st, 0), min(st + k, window_len)
        S[j, lo:hi] = s[lo - st:hi - st]
    keep = np.any(S != 0, axis=1)
    return S[keep], (starts + template.peak_offset)[keep].astype(float)


def glrt_statistics(X, template: PulseTemplate, noise_var=None):
    """Vectorized rank-1 matched-subspace GLRT over windows ``X``.

    For each placement ``s_p`` the statistic is
    ``(s_p.x)^2 / (s_p.s_p * var)`` (zero when ``s_p.x <= 0``, as reflective
    events are positive), where ``var`` is either the known ``noise_var`` or
    the ML residual variance ``|x - a s_p|^2 / N`` for the ML amplitude
    ``a = s_p.x / s_p.s_p``.  Returns ``(statistic, position_idx_hat,
    amplitude_hat)``: the maximum over placements, its peak index refined by
    three-point parabolic interpolation, and the fitted amplitude.
    """
    X = np.asarray(X, dtype=float)
    X = check_windows(X, X.shape[-1])
    n, length = X.shape
    S, peaks = candidate_templates(template, length)
    c = X @ S.T
    ss = np.sum(S * S, axis=1)
    if noise_var is None:
        xx = np.sum(X * X, axis=1, keepdims=True)
        var = np.maximum(xx - c * c / ss, _RESIDUAL_FLOOR * xx) / length
        var = np.where(var > 0, var, 1.0)
    else:
        var = float(noise_var)
    t = np.where(c > 0, c * c / (ss * var), 0.0)
    best = np.argmax(t, axis=1)
    rows = np.arange(n)
    stat = t[rows, best]
    offset = np.zeros(n)
    inner = (best > 0) & (best < t.shape[1] - 1)
    if np.any(inner):
        b = best[inner]
        r = rows[inner]
        tm, t0, tp = t[r, b - 1], t[r, b], t[r, b + 1]
        curv = tm - 2.0 * t0 + tp
        with np.errstate(divide="ignore", invalid="ignore"):
            off = np.where(curv < 0, 0.5 * (tm - tp) / curv, 0.0)
        offset[inner] = np.clip(off, -0.5, 0.5)
    pos = np.clip(peaks[best] + offset, 0.0, length - 1.0)
    amp = c[rows, best] / ss[best]
    return stat, pos, amp


@dataclass(frozen=True)
class GlrtResult:
    detected: bool
    statistic: float
    position_idx_hat: float
    amplitude_hat: float


def glrt_detect(values, template: PulseTemplate, tau: float, noise_var=None) -> GlrtResult:
    """Single-window GLRT decision."""
    x = np.asarray(values, dtype=float)
    stat, pos, amp = glrt_statistics(x[None, :], template, noise_var)
    return GlrtResult(bool(stat[0] >= tau), float(stat[0]), float(pos[0]), float(amp[0]))


def empirical_threshold(null_scores, p_fa):
    """``1 - p_fa`` quantile of scores observed without an event.

    When ties at the quantile would push the false-alarm rate above
    ``p_fa``, the threshold moves just above the tied value.
    """
    null_scores = np.asarray(null_scores, dtype=float)
    if not 0 < p_fa < 1:
        raise DomainError("p_fa must be in (0, 1)")
    if null_scores.size == 0 or null_scores.size * p_fa < 1:
        raise CalibrationError(
            f"{null_scores.size} null samples cannot resolve p_fa={p_fa}")
    tau = float(np.quantile(null_scores, 1.0 - p_fa))
    if np.mean(null_scores >= tau) > p_fa + 1.0 / null_scores.size:
        tau = float(np.nextafter(tau, np.inf))
    return tau


def calibrate_glrt_threshold(p_fa_target, template: PulseTemplate, n_monte_carlo=20000, seed=0,
                             window_len=WINDOW_LEN):
    """GLRT threshold for ``p_fa_target`` from pure-noise windows.

    The statistic is scale invariant with estimated noise variance, so unit
    variance noise suffices.
    """
    if n_monte_carlo < 1000:
        raise CalibrationError("n_monte_carlo must be >= 1000")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n_monte_carlo, window_len))
    stat, _, _ = glrt_statistics(noise, template)
    return empirical_threshold(stat, p_fa_target)


class GLRTDetector(ClassifierMixin, BaseEstimator):
    """Estimator form of the GLRT; ``fit`` calibrates the threshold on noise.

    When ``scaler`` is given, inputs are normalized windows and are mapped
    back to linear power before scoring.
    """

    def __init__(self, template=None, p_fa=0.1, n_monte_carlo=20000, random_state=0, scaler=None):
        self.template = template
        self.p_fa = p_fa
        self.n_monte_carlo = n_monte_carlo
        self.random_state = random_state
        self.scaler = scaler

    def _linear(self, X):
        X = check_windows(X)
        return self.scaler.inverse_transform(X) if self.scaler is not None else X

    name = GLRT_NAME

    def fit(self, X=None, y=None):
        if self.template is None:
            raise DegenerateTemplateError("GLRTDetector needs a pulse template")
        self.threshold_ = calibrate_glrt_threshold(self.p_fa, self.template, self.n_monte_carlo,
                                                   self.random_state)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = WINDOW_LEN
        return self

    def decision_function(self, X):
        return glrt_statistics(self._linear(X), self.template)[0]

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        return (self.decision_function(X) >= self.threshold_).astype(np.int64)

    def predict_position(self, X):
        return glrt_statistics(self._linear(X), self.template)[1]

    def score_windows(self, X):
        stat, pos, _ = glrt_statistics(self._linear(X), self.template)
        return stat, pos, None


def bound_table(snr_db, p_fa, template: PulseTemplate, n_trials=20000, seed=0):
    """Rows of the closed-form bound next to the matched-filter oracle."""
    snr_db = np.atleast_1d(np.asarray(snr_db, dtype=float))
    mc, se = matched_filter_pd_mc(snr_db, p_fa, template, n_trials, seed)
    mf = matched_filter_pd(snr_db, p_fa, template.extent_samples)
    rows = []
    for i, snr in enumerate(snr_db):
        pt = optimum_bound_pd(float(snr), p_fa)
        rows.append({"snr_db": pt.snr_db, "p_fa": pt.p_fa, "delta": pt.delta, "p_d": pt.p_d,
                     "p_d_matched_filter_mc": float(mc[i]), "p_d_matched_filter_mc_se": float(se[i]),
                     "p_d_matched_filter_analytic": float(mf[i])})
    return rows


def write_bound_csv(path, rows):
    cols = ["snr_db", "p_fa", "delta", "p_d", "p_d_matched_filter_mc", "p_d_matched_filter_mc_se",
            "p_d_matched_filter_analytic"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in cols])
