"""Synthetic OTDR traces with a single reflective event.

A rectangular probe pulse is shaped by a low-pass Bessel filter, reflected
by a point reflector and detected on a flat zero baseline (no Rayleigh
backscatter) with additive white Gaussian receiver noise.  The noise level
is calibrated from the requested SNR, defined as the event energy divided by
the noise energy over the event region::

    snr_db = 10 * log10(sum(A**2 * template**2) / (K * sigma**2))

where ``K`` is the number of samples spanned by the pulse template.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal

from .exceptions import ConfigError, PlacementError

SPEED_OF_LIGHT = 299_792_458.0
WINDOW_LEN = 35
# Reflectance at which the detected peak amplitude is 1.0 (a 95 % reflector).
REFERENCE_REFLECTANCE_DB = 10.0 * math.log10(0.95)
# Template samples below this fraction of the peak are dropped.
TEMPLATE_FLOOR = 0.01
_OVERSAMPLE = 64


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the trace generator.

    ``bessel_bandwidth_hz=None`` resolves to ``0.6 / pulse_width_s``; pass
    ``math.inf`` to bypass the filter entirely.
    """

    pulse_width_s: float = 100e-9
    bessel_bandwidth_hz: float | None = None
    bessel_order: int = 4
    sample_spacing_m: float = 1.0
    trace_len_samples: int = 1000
    group_index: float = 1.468
    snr_db_range: tuple[float, float] = (0.0, 30.0)
    reflectance_db_range: tuple[float, float] = (-45.0, -5.0)
    rng_seed: int = 0

    def __post_init__(self):
        if self.bessel_bandwidth_hz is None:
            object.__setattr__(self, "bessel_bandwidth_hz", 0.6 / self.pulse_width_s
                               if self.pulse_width_s > 0 else float("nan"))
        object.__setattr__(self, "snr_db_range", tuple(float(v) for v in self.snr_db_range))
        object.__setattr__(self, "reflectance_db_range",
                           tuple(float(v) for v in self.reflectance_db_range))
        self.validate()

    def validate(self):
        if not self.pulse_width_s > 0:
            raise ConfigError(f"pulse_width_s must be > 0, got {self.pulse_width_s}")
        if not self.bessel_bandwidth_hz > 0:
            raise ConfigError("bessel_bandwidth_hz must be > 0")
        if self.bessel_order < 1:
            raise ConfigError("bessel_order must be >= 1")
        if not (self.sample_spacing_m > 0 and self.group_index > 0):
            raise ConfigError("sample_spacing_m and group_index must be > 0")
        for name in ("snr_db_range", "reflectance_db_range"):
            lo, hi = getattr(self, name)
            if len(getattr(self, name)) != 2 or not (math.isfinite(lo) and math.isfinite(hi)):
                raise ConfigError(f"{name} must be two finite numbers")
            if lo > hi:
                raise ConfigError(f"{name}: low {lo} exceeds high {hi}")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must be a 64-bit unsigned integer")

    @property
    def sample_interval_s(self) -> float:
        """Two-way time per sample: 2 * n * dz / c."""
        return 2.0 * self.group_index * self.sample_spacing_m / SPEED_OF_LIGHT

    @property
    def peak_amplitude_max(self) -> float:
        return reflectance_to_amplitude(self.reflectance_db_range[1])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_db_range"] = list(self.snr_db_range)
        d["reflectance_db_range"] = list(self.reflectance_db_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown SimConfig fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        return cls.from_dict(load_config_file(path, section="sim"))


def load_config_file(path, section=None) -> dict:
    """Read a TOML or JSON config file.

    With ``section``, a sectioned file yields that table (empty if absent)
    and a flat file is returned whole.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib

            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    except Exception as exc:  # noqa: BLE001 - parser-specific exception types
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a table or object")
    if section is not None:
        if isinstance(data.get(section), dict):
            return dict(data[section])
        if any(isinstance(v, dict) for v in data.values()):
            return {}
    return dict(data)


def reflectance_to_amplitude(reflectance_db):
    """Detected peak amplitude for a reflectance, with 95 % reflection -> 1.0."""
    return 10.0 ** ((np.asarray(reflectance_db, dtype=float) - REFERENCE_REFLECTANCE_DB) / 10.0)


@dataclass(frozen=True)
class PulseTemplate:
    """Noise-free detected pulse shape with unit peak."""

    samples: np.ndarray
    peak_offset: int

    @property
    def extent_samples(self) -> int:
        return int(self.samples.size)

    @property
    def energy(self) -> float:
        return float(np.sum(self.samples**2))


def fwhm_samples(samples) -> float:
    """Full width at half maximum in samples, using linear interpolation."""
    y = np.asarray(samples, dtype=float)
    k = int(np.argmax(y))
    half = 0.5 * y[k]
    left = k
    while left > 0 and y[left - 1] >= half:
        left -= 1
    right = k
    while right < y.size - 1 and y[right + 1] >= half:
        right += 1
    lo = left - (y[left] - half) / (y[left] - y[left - 1]) if left > 0 else float(left)
    hi = right + (y[right] - half) / (y[right] - y[right + 1]) if right < y.size - 1 else float(right)
    return float(hi - lo)


def build_pulse_template(cfg: SimConfig) -> PulseTemplate:
    """Sampled, peak-normalized shape of the filtered probe pulse.

    The rectangle is filtered on a grid 64x finer than the trace sampling,
    then resampled with the continuous peak on a sample.  The filter output
    is the optical power envelope seen by the square-law photodiode.
    """
    return _build_template(cfg.pulse_width_s, cfg.bessel_bandwidth_hz, cfg.bessel_order,
                           cfg.sample_interval_s, cfg.trace_len_samples)


@lru_cache(maxsize=32)
def _build_template(pulse_width_s, bandwidth_hz, order, dt, trace_len) -> PulseTemplate:
    if math.isinf(bandwidth_hz):
        n = math.ceil(pulse_width_s / dt)
        samples = np.ones(n)
        peak = n // 2
    else:
        fs = _OVERSAMPLE / dt
        if bandwidth_hz >= fs / 2:
            raise ConfigError("bessel_bandwidth_hz too high for the simulation grid")
        b, a = signal.bessel(order, bandwidth_hz, btype="low", norm="mag", fs=fs)
        n_pulse = max(1, int(round(pulse_width_s * fs)))
        n_tail = int(math.ceil(20.0 * fs / bandwidth_hz)) + n_pulse
        rect = np.zeros(_OVERSAMPLE + n_pulse + n_tail)
        rect[_OVERSAMPLE:_OVERSAMPLE + n_pulse] = 1.0
        y = signal.lfilter(b, a, rect)
        k = int(np.argmax(y))
        y = y / y[k]
        coarse = y[k % _OVERSAMPLE::_OVERSAMPLE]
        peak = k // _OVERSAMPLE
        above = np.flatnonzero(coarse >= TEMPLATE_FLOOR)
        first, last = above[0], above[-1]
        samples = coarse[first:last + 1].copy()
        peak -= first
    if samples.size > trace_len:
        raise ConfigError(
            f"pulse extent {samples.size} samples exceeds trace length {trace_len}")
    samples.setflags(write=False)
    return PulseTemplate(samples=samples, peak_offset=int(peak))


@dataclass(frozen=True)
class Trace:
    """One simulated trace plus ground truth.

    ``event_start`` is the first sample of the template; the event region is
    ``[event_start, event_start + extent_samples)``.
    """

    samples: np.ndarray
    event_position_m: float
    event_position_idx: float
    reflectance_db: float
    snr_db: float
    seed: int
    event_start: int = 0
    extent_samples: int = 0
    amplitude: float = 0.0
    noise_std: float = 0.0
    trace_id: int = field(default=0, compare=False)

    @property
    def event_stop(self) -> int:
        return self.event_start + self.extent_samples

    def noise_free(self, template: PulseTemplate) -> np.ndarray:
        clean = np.zeros_like(self.samples)
        clean[self.event_start:self.event_stop] = self.amplitude * template.samples
        return clean


def noise_std_for_snr(amplitude: float, template: PulseTemplate, snr_db: float) -> float:
    """Noise standard deviation that realises ``snr_db`` for this event."""
    if snr_db == math.inf:
        return 0.0
    snr_lin = 10.0 ** (snr_db / 10.0)
    energy = amplitude**2 * template.energy
    return math.sqrt(energy / (template.extent_samples * snr_lin))


def simulate_trace(cfg: SimConfig, snr_db: float, reflectance_db: float, position_m: float,
                   seed: int, trace_id: int = 0) -> Trace:
    """Simulate one trace; ``snr_db=math.inf`` gives a noise-free trace.

    The template is placed on the sample grid so that its peak lands on the
    sample nearest ``position_m``; the recorded position is that sample.
    """
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ConfigError(f"snr_db must be finite or +inf, got {snr_db}")
    template = build_pulse_template(cfg)
    start = int(round(position_m / cfg.sample_spacing_m - template.peak_offset))
    if start < 0 or start + template.extent_samples > cfg.trace_len_samples:
        raise PlacementError(
            f"event at {position_m} m does not fit in a {cfg.trace_len_samples}-sample trace")
    amplitude = float(reflectance_to_amplitude(reflectance_db))
    sigma = noise_std_for_snr(amplitude, template, snr_db)
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal(cfg.trace_len_samples) * sigma
    samples[start:start + template.extent_samples] += amplitude * template.samples
    samples.setflags(write=False)
    idx = float(start + template.peak_offset)
    return Trace(samples=samples, event_position_m=idx * cfg.sample_spacing_m,
                 event_position_idx=idx, reflectance_db=float(reflectance_db),
                 snr_db=float(snr_db), seed=int(seed), event_start=start,
                 extent_samples=template.extent_samples, amplitude=amplitude,
                 noise_std=sigma, trace_id=trace_id)


def placement_range(cfg: SimConfig) -> tuple[int, int]:
    """Inclusive range of template starts for which every overlapping
    ``WINDOW_LEN`` window lies inside the trace."""
    k = build_pulse_template(cfg).extent_samples
    lo = WINDOW_LEN - 1
    hi = cfg.trace_len_samples - k - WINDOW_LEN + 1
    if hi < lo:
        raise ConfigError(
            f"trace_len_samples={cfg.trace_len_samples} too short for windows around a "
            f"{k}-sample event")
    return lo, hi


def trace_seed(rng_seed: int, index: int) -> int:
    """64-bit noise seed of trace ``index``."""
    hi, lo = np.random.SeedSequence([rng_seed, index, 0]).generate_state(2, np.uint32)
    return (int(hi) << 32) | int(lo)


def simulate_one(cfg: SimConfig, index: int) -> Trace:
    """Trace ``index`` of the batch defined by ``cfg.rng_seed``.

    Independent of every other index, so batches may be split across workers.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, index, 1]))
    lo, hi = placement_range(cfg)
    template = build_pulse_template(cfg)
    snr_db = rng.uniform(*cfg.snr_db_range)
    reflectance_db = rng.uniform(*cfg.reflectance_db_range)
    start = int(rng.integers(lo, hi + 1))
    position_m = (start + template.peak_offset) * cfg.sample_spacing_m
    return simulate_trace(cfg, snr_db, reflectance_db, position_m,
                          trace_seed(cfg.rng_seed, index), trace_id=index)


def simulate_batch(cfg: SimConfig, n_traces: int) -> list[Trace]:
    """``n_traces`` traces with uniform SNR, reflectance and placement."""
    if n_traces < 1:
        raise ConfigError("n_traces must be >= 1")
    return [simulate_one(cfg, i) for i in range(n_traces)]
