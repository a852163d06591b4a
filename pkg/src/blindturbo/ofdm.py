"""OFDM framing: subcarrier placement, unitary IDFT/DFT with cyclic prefix,
and active/null tone extraction.

Full grids have ``fft_size`` rows in centred order. Row ``k`` carries the
frequency offset ``k - (fft_size // 2 + 1)`` subcarriers from DC, which is the
ordering the active index formula is written in.
"""

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._validation import check_complex, check_positive_int


@dataclass(frozen=True)
class OfdmFormat:
    """Frame geometry.

    ``n_symbols`` counts data-carrying OFDM symbols (columns of the PSK grid);
    the transmitted frame has ``n_symbols + 1`` symbols because of the
    differential reference column.
    """

    fft_size: int = 2048
    n_cp: int = 504
    n_symbols: int = 19
    subcarrier_spacing: float = 1e3

    def __post_init__(self):
        check_positive_int(self.fft_size, "fft_size", minimum=8)
        if self.fft_size % 8:
            raise ValueError(f"fft_size must be divisible by 8, got {self.fft_size}")
        check_positive_int(self.n_cp, "n_cp", minimum=0)
        if self.n_cp >= self.fft_size:
            raise ValueError("n_cp must be smaller than fft_size")
        check_positive_int(self.n_symbols, "n_symbols")

    @classmethod
    def mode1(cls):
        return cls(2048, 504, 19)

    @classmethod
    def toy(cls):
        return cls(256, 64, 19)

    @cached_property
    def active_indices(self):
        return active_indices(self)

    @cached_property
    def null_indices(self):
        mask = np.ones(self.fft_size, dtype=bool)
        mask[self.active_indices] = False
        return np.flatnonzero(mask)

    @property
    def dc_row(self):
        return self.fft_size // 2 + 1

    @property
    def n_active(self):
        return self.active_indices.size

    @property
    def n_null(self):
        return self.fft_size - self.n_active

    @property
    def n_ofdm(self):
        """OFDM symbols per transmitted frame, reference column included."""
        return self.n_symbols + 1

    @property
    def symbol_len(self):
        return self.fft_size + self.n_cp

    @property
    def frame_len(self):
        return self.n_ofdm * self.symbol_len

    @property
    def sample_rate(self):
        return self.fft_size * self.subcarrier_spacing

    def bits_per_frame(self, bits_per_symbol=2):
        return self.n_symbols * self.n_active * bits_per_symbol

    def symbol_midpoints(self):
        """Sample index at the centre of each DFT window."""
        n = np.arange(self.n_ofdm)
        return n * self.symbol_len + self.n_cp + self.fft_size / 2


def active_indices(fmt):
    """Active rows: ``[M/8 + 1, M/2] U [M/2 + 2, 7M/8 + 1]``; DC and the two
    guard bands are null."""
    M = fmt.fft_size
    lo = np.arange(M // 8 + 1, M // 2 + 1)
    hi = np.arange(M // 2 + 2, 7 * M // 8 + 2)
    return np.concatenate([lo, hi])


def _fft_shift(fmt):
    # roll amount taking centred rows to numpy FFT bin order
    return -fmt.dc_row


def place_subcarriers(X, fmt):
    X = check_complex(X, "X", ndim=2)
    if X.shape[0] != fmt.n_active:
        raise ValueError(f"X must have {fmt.n_active} rows, got {X.shape[0]}")
    full = np.zeros((fmt.fft_size, X.shape[1]), dtype=np.complex128)
    full[fmt.active_indices] = X
    return full


def extract_active(grid, fmt):
    return np.asarray(grid)[fmt.active_indices]


def extract_null(grid, fmt):
    """All null-tone values of the frame, flattened."""
    return np.asarray(grid)[fmt.null_indices].reshape(-1)


def ofdm_modulate(grid, fmt):
    """Unitary IDFT per column, cyclic prefix prepended, columns concatenated."""
    grid = check_complex(grid, "grid", ndim=2)
    if grid.shape[0] != fmt.fft_size:
        raise ValueError(f"grid must have {fmt.fft_size} rows, got {grid.shape[0]}")
    bins = np.roll(grid, _fft_shift(fmt), axis=0)
    x = np.fft.ifft(bins, axis=0, norm="ortho")
    x = np.concatenate([x[fmt.fft_size - fmt.n_cp :], x], axis=0)
    return x.T.reshape(-1)


def ofdm_demodulate(samples, fmt):
    """Drop each symbol's cyclic prefix and apply the unitary DFT."""
    samples = np.asarray(samples, dtype=np.complex128)
    if samples.ndim != 1 or samples.size % fmt.symbol_len:
        raise ValueError(
            f"sample count {samples.size} is not a whole number of {fmt.symbol_len}-sample symbols"
        )
    y = samples.reshape(-1, fmt.symbol_len)[:, fmt.n_cp :].T
    bins = np.fft.fft(y, axis=0, norm="ortho")
    return np.roll(bins, -_fft_shift(fmt), axis=0)


def frequency_response(taps, delays, fmt):
    """Per-row response of a static tapped delay line (delays in samples)."""
    taps = np.asarray(taps, dtype=np.complex128)
    delays = np.asarray(delays)
    f = np.arange(fmt.fft_size) - fmt.dc_row  # frequency offset of each row
    phase = np.exp(-2j * np.pi * np.outer(f, delays) / fmt.fft_size)
    return phase @ taps


FRAME_MAGIC = b"DOFM"
_HEADER = struct.Struct("<4sIII")


def write_frame(path, data, fmt):
    """Dump a complex array as little-endian float64 (re, im) pairs, row-major,
    after a 16-byte header: magic, fft_size, n_symbols, n_cp."""
    data = np.ascontiguousarray(data, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FRAME_MAGIC, fmt.fft_size, fmt.n_symbols, fmt.n_cp))
        fh.write(data.tobytes(order="C"))


def read_frame(path):
    """Inverse of :func:`write_frame`. Returns ``(array, fmt)``; the array is a
    full grid when its size matches one, else the time-domain frame."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, fft_size, n_symbols, n_cp = _HEADER.unpack_from(raw)
    if magic != FRAME_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    fmt = OfdmFormat(fft_size, n_cp, n_symbols)
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).astype(np.complex128)
    if data.size == fmt.fft_size * fmt.n_ofdm:
        data = data.reshape(fmt.fft_size, fmt.n_ofdm)
    elif data.size != fmt.frame_len:
        raise ValueError(f"{path}: payload of {data.size} values matches neither layout")
    return data, fmt
