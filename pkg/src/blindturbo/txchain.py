"""Transmit chain: convolutional encoder, bit interleaver, Gray PSK mapper and
differential encoder.

Grids are laid out as ``(subcarrier, ofdm_symbol)``. The differential encoder
prepends the all-ones reference column, so an ``M x N`` symbol grid becomes an
``M x (N + 1)`` DE-PSK grid.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import check_bits, check_positive_int


@dataclass(frozen=True)
class ConvCodeSpec:
    """Feed-forward convolutional code with zero-tail termination.

    Generators are octal-style integers read MSB first, MSB being the tap on
    the current input bit. The default is the rate 1/2, K=7 (133, 171) code.
    """

    constraint_length: int = 7
    generators: tuple = (0o133, 0o171)

    def __post_init__(self):
        check_positive_int(self.constraint_length, "constraint_length")
        if not self.generators:
            raise ValueError("at least one generator is required")
        for g in self.generators:
            if not 0 < g < (1 << self.constraint_length):
                raise ValueError(
                    f"generator {g:o} does not fit in {self.constraint_length} bits"
                )

    @property
    def memory(self):
        return self.constraint_length - 1

    @property
    def n_outputs(self):
        return len(self.generators)

    @property
    def rate(self):
        return 1.0 / self.n_outputs

    @cached_property
    def taps(self):
        """``(n_outputs, constraint_length)`` tap matrix, column k = delay k."""
        K = self.constraint_length
        return np.array(
            [[(g >> (K - 1 - k)) & 1 for k in range(K)] for g in self.generators],
            dtype=np.uint8,
        )

    def coded_length(self, n_info):
        return self.n_outputs * (n_info + self.memory)

    def info_length(self, n_coded):
        if n_coded % self.n_outputs:
            raise ValueError(
                f"codeword length {n_coded} is not a multiple of {self.n_outputs}"
            )
        n = n_coded // self.n_outputs - self.memory
        if n < 1:
            raise ValueError(f"codeword length {n_coded} leaves no room for data")
        return n


def conv_encode(info_bits, code=ConvCodeSpec()):
    """Encode ``info_bits`` and flush the register with ``memory`` zero bits.

    The output interleaves the generator outputs per input bit, so its length
    is ``n_outputs * (len(info_bits) + memory)``.
    """
    u = check_bits(info_bits, "info_bits")
    if u.size == 0:
        raise ValueError("empty message")
    u = np.concatenate([u, np.zeros(code.memory, dtype=np.uint8)])
    out = np.empty((u.size, code.n_outputs), dtype=np.uint8)
    for j, taps in enumerate(code.taps):
        out[:, j] = np.convolve(u, taps)[: u.size] & 1
    return out.reshape(-1)


@dataclass(frozen=True)
class InterleaverPerm:
    """Bit permutation; interleaving reads ``out[i] = in[perm[i]]``."""

    perm: np.ndarray
    seed: int = None

    @property
    def length(self):
        return self.perm.size

    @cached_property
    def inverse(self):
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv


def make_interleaver(seed, length):
    """Uniform random permutation of ``range(length)`` from a seeded PCG64."""
    check_positive_int(length, "length")
    perm = np.random.default_rng(seed).permutation(length)
    return InterleaverPerm(perm=perm, seed=seed)


def _check_perm_len(x, perm):
    x = np.asarray(x)
    if x.shape[0] != perm.length:
        raise ValueError(
            f"length mismatch: got {x.shape[0]} entries for a permutation of {perm.length}"
        )
    return x


def interleave(bits, perm):
    """Permute along the first axis (works for hard bits and soft messages)."""
    return _check_perm_len(bits, perm)[perm.perm]


def deinterleave(bits, perm):
    return _check_perm_len(bits, perm)[perm.inverse]


@dataclass(frozen=True)
class PskMapSpec:
    """Gray-labelled Q-PSK: symbol index i sits at ``exp(2j*pi*i/Q)`` and
    carries label ``i ^ (i >> 1)``.

    For Q=4 this gives 00 -> 1, 01 -> j, 11 -> -1, 10 -> -j.
    """

    Q: int = 4
    bits_per_symbol: int = field(init=False)

    def __post_init__(self):
        check_positive_int(self.Q, "Q", minimum=2)
        b = int(self.Q).bit_length() - 1
        if 1 << b != self.Q:
            raise ValueError(f"Q must be a power of two, got {self.Q}")
        object.__setattr__(self, "bits_per_symbol", b)

    @cached_property
    def constellation(self):
        return np.exp(2j * np.pi * np.arange(self.Q) / self.Q)

    @cached_property
    def labels(self):
        """``(Q, bits_per_symbol)`` bit labels of each symbol index, MSB first."""
        gray = np.arange(self.Q) ^ (np.arange(self.Q) >> 1)
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return ((gray[:, None] >> shifts) & 1).astype(np.uint8)

    @cached_property
    def index_of_label(self):
        """Inverse of :attr:`labels`: integer label value -> symbol index."""
        gray = np.arange(self.Q) ^ (np.arange(self.Q) >> 1)
        inv = np.empty(self.Q, dtype=np.int64)
        inv[gray] = np.arange(self.Q)
        return inv


QPSK = PskMapSpec(4)


def psk_indices(bits, psk=QPSK):
    """Map bit groups to constellation indices 0..Q-1."""
    b = check_bits(bits)
    if b.size % psk.bits_per_symbol:
        raise ValueError(
            f"bit count {b.size} is not a multiple of {psk.bits_per_symbol}"
        )
    groups = b.reshape(-1, psk.bits_per_symbol).astype(np.int64)
    weights = 1 << np.arange(psk.bits_per_symbol - 1, -1, -1)
    return psk.index_of_label[groups @ weights]


def map_psk(bits, psk=QPSK):
    return psk.constellation[psk_indices(bits, psk)]


def nearest_index(symbols, Q):
    """Index of the nearest Q-PSK point for each complex sample."""
    k = np.rint(np.angle(symbols) * Q / (2 * np.pi)).astype(np.int64)
    return k % Q


def demap_hard(symbols, psk=QPSK):
    return psk.labels[nearest_index(symbols, psk.Q)].reshape(-1)


def diff_encode(A, Q=4):
    """Differentially encode each row of ``A`` along the symbol axis.

    Works on constellation indices so the output is exactly on the PSK grid.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.complex128))
    if A.size and not np.allclose(np.abs(A), 1.0, atol=1e-9):
        raise ValueError("A must contain unit-modulus PSK symbols")
    k = nearest_index(A, Q)
    x_idx = np.concatenate(
        [np.zeros((k.shape[0], 1), dtype=np.int64), np.cumsum(k, axis=1) % Q], axis=1
    )
    return np.exp(2j * np.pi * x_idx / Q)


def diff_decode(X):
    """Noiseless inverse of :func:`diff_encode`: ``X[:, n] * conj(X[:, n-1])``."""
    X = np.atleast_2d(X)
    return X[:, 1:] * np.conj(X[:, :-1])


def bits_to_grid(bits, n_rows, psk=QPSK):
    """Map interleaved bits to an ``n_rows x n_cols`` symbol grid, filling each
    OFDM symbol (column) before moving to the next."""
    A = map_psk(bits, psk)
    if A.size % n_rows:
        raise ValueError(f"{A.size} symbols do not fill whole columns of {n_rows}")
    return sequence_to_grid(A, n_rows)


def grid_to_sequence(grid):
    """Inverse of the reshape in :func:`bits_to_grid` (column-major flatten)."""
    grid = np.asarray(grid)
    return np.swapaxes(grid, 0, 1).reshape(-1, *grid.shape[2:])


def sequence_to_grid(seq, n_rows):
    """Inverse of :func:`grid_to_sequence`; trailing axes are kept."""
    seq = np.asarray(seq)
    return np.swapaxes(seq.reshape(-1, n_rows, *seq.shape[1:]), 0, 1)
