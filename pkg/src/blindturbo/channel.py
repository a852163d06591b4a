"""Channel models: AWGN, frame-constant phase rotation and a TU6 tapped delay
line with Rayleigh fading taps.

Each model returns the distorted signal together with a
:class:`ChannelRealization` holding the per-(row, symbol) frequency response
used by the perfect-CSI receiver.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_random_state, check_variance
from .ofdm import frequency_response


def snr_to_sigma2(snr_db):
    """Noise variance for unit-energy symbols."""
    snr_db = float(snr_db)
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    return 10.0 ** (-snr_db / 10.0)


@dataclass
class ChannelRealization:
    H: np.ndarray  # full grid (fft_size, n_ofdm), or broadcastable to it
    meta: dict = field(default_factory=dict)


def complex_noise(shape, rng):
    """Unit-variance circularly symmetric complex Gaussian samples."""
    rng = check_random_state(rng)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def apply_awgn(samples, sigma2, rng=None):
    sigma2 = check_variance(sigma2)
    samples = np.asarray(samples, dtype=np.complex128)
    if sigma2 == 0:
        return samples.copy()
    return samples + np.sqrt(sigma2) * complex_noise(samples.shape, rng)


def apply_block_phase(signal, phase="random", rng=None, fmt=None):
    """Rotate every sample by ``exp(1j * phase)``.

    ``phase="random"`` draws it uniformly from [0, 2pi). The realization's
    ``H`` is a full grid when ``signal`` is 2-D or ``fmt`` is given, else a
    scalar.
    """
    if isinstance(phase, str):
        if phase != "random":
            raise ValueError(f"phase must be a number or 'random', got {phase!r}")
        phase = check_random_state(rng).uniform(0.0, 2 * np.pi)
    phase = float(phase)
    signal = np.asarray(signal, dtype=np.complex128)
    rot = np.exp(1j * phase)
    if signal.ndim == 2:
        H = np.full(signal.shape, rot)
    elif fmt is not None:
        H = np.full((fmt.fft_size, fmt.n_ofdm), rot)
    else:
        H = np.asarray(rot)
    return signal * rot, ChannelRealization(H, {"model": "block-phase", "phase": phase})


@dataclass(frozen=True)
class Tu6Profile:
    """COST 207 typical-urban 6-tap power delay profile."""

    tap_delays: tuple = (0.0, 0.2e-6, 0.5e-6, 1.6e-6, 2.3e-6, 5.0e-6)
    tap_powers_db: tuple = (-3.0, 0.0, -2.0, -6.0, -8.0, -10.0)
    doppler_hz: float = 10.0
    num_oscillators: int = 32

    def __post_init__(self):
        if len(self.tap_delays) != len(self.tap_powers_db):
            raise ValueError("tap_delays and tap_powers_db differ in length")
        if min(self.tap_delays) < 0:
            raise ValueError("tap delays must be non-negative")
        if self.doppler_hz < 0:
            raise ValueError("doppler_hz must be non-negative")

    @property
    def tap_powers(self):
        p = 10.0 ** (np.asarray(self.tap_powers_db) / 10.0)
        return p / p.sum()

    def delays_in_samples(self, sample_rate):
        return np.rint(np.asarray(self.tap_delays) * sample_rate).astype(np.int64)


class SumOfSinusoidsFading:
    """Independent Rayleigh taps with a Jakes spectrum, one sum-of-sinusoids
    generator per tap (random arrival angles and phases)."""

    def __init__(self, powers, doppler_hz, num_oscillators=32, rng=None):
        rng = check_random_state(rng)
        self.powers = np.asarray(powers, dtype=np.float64)
        self.doppler_hz = float(doppler_hz)
        n_taps, n_osc = self.powers.size, num_oscillators
        theta = rng.uniform(-np.pi, np.pi, size=(n_taps, 1))
        k = np.arange(1, n_osc + 1)
        alpha = (2 * np.pi * k - np.pi + theta) / n_osc
        self.freqs = self.doppler_hz * np.cos(alpha)  # (n_taps, n_osc)
        self.phases = rng.uniform(-np.pi, np.pi, size=(n_taps, n_osc))
        self.scale = np.sqrt(self.powers / n_osc)

    def gains(self, t):
        """Tap gains at times ``t`` (seconds): ``(n_taps, len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        arg = 2 * np.pi * self.freqs[:, :, None] * t + self.phases[:, :, None]
        return self.scale[:, None] * np.exp(1j * arg).sum(axis=1)


# coarse grid for tap evolution; linear interpolation error is ~1e-7 at 10 Hz
_TAP_GRID_STEP = 64


def apply_tu6(
    samples, profile=Tu6Profile(), fmt=None, rng=None, sample_rate=None,
    fading=None, start_time=0.0,
):
    """Time-varying tapped delay line, noise not included.

    ``y[t] = sum_i h_i(t) x[t - d_i]`` with delays rounded to whole samples.
    The realization holds the frequency response of the taps frozen at each
    OFDM symbol's DFT-window midpoint (needs ``fmt``). Pass the same
    ``fading`` with increasing ``start_time`` to chain consecutive frames.
    """
    x = np.asarray(samples, dtype=np.complex128)
    if sample_rate is None:
        if fmt is None:
            raise ValueError("either fmt or sample_rate is required")
        sample_rate = fmt.sample_rate
    delays = profile.delays_in_samples(sample_rate)
    if fading is None:
        fading = SumOfSinusoidsFading(
            profile.tap_powers, profile.doppler_hz, profile.num_oscillators, rng
        )
    n = x.size
    grid = np.arange(0, n + _TAP_GRID_STEP, _TAP_GRID_STEP)
    coarse = fading.gains(start_time + grid / sample_rate)
    t = np.arange(n)
    y = np.zeros(n, dtype=np.complex128)
    for i, d in enumerate(delays):
        h = np.interp(t, grid, coarse[i].real) + 1j * np.interp(t, grid, coarse[i].imag)
        y[d:] += h[d:] * x[: n - d]
    meta = {
        "model": "tu6",
        "delays_samples": delays.tolist(),
        "doppler_hz": profile.doppler_hz,
    }
    H = None
    if fmt is not None:
        if delays.max() > fmt.n_cp:
            meta["warning"] = "tap delay exceeds cyclic prefix; ISI present"
            warnings.warn(meta["warning"], RuntimeWarning, stacklevel=2)
        taps_mid = fading.gains(start_time + fmt.symbol_midpoints() / sample_rate)  # (taps, n_ofdm)
        H = np.stack(
            [frequency_response(taps_mid[:, j], delays, fmt) for j in range(fmt.n_ofdm)],
            axis=1,
        )
    return y, ChannelRealization(H, meta)
