"""scikit-learn style wrappers around the transmit chain and the turbo receiver.

``Transmitter.transform`` turns information bits into time-domain frames.
``TurboReceiver.fit`` estimates the channel from received frames (or takes the
true channel in perfect-CSI mode) and ``predict`` runs the turbo loop.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import check_bits, check_complex
from .blindrx import TurboConfig, estimate_channel, turbo_demod_decode
from .ofdm import OfdmFormat, extract_active, extract_null, ofdm_demodulate, ofdm_modulate, place_subcarriers
from .txchain import (
    QPSK,
    ConvCodeSpec,
    PskMapSpec,
    bits_to_grid,
    conv_encode,
    diff_encode,
    interleave,
    make_interleaver,
)


def codeword_length(fmt, frame_depth=1, psk=QPSK):
    return frame_depth * fmt.bits_per_frame(psk.bits_per_symbol)


class Transmitter(TransformerMixin, BaseEstimator):
    """Info bits -> coded, interleaved, DE-PSK mapped OFDM frames.

    One codeword spans ``frame_depth`` frames.
    """

    def __init__(self, fmt=None, frame_depth=1, interleaver_seed=0, code=None, Q=4):
        self.fmt = fmt
        self.frame_depth = frame_depth
        self.interleaver_seed = interleaver_seed
        self.code = code
        self.Q = Q

    def _setup(self):
        self.fmt_ = self.fmt if self.fmt is not None else OfdmFormat.toy()
        self.code_ = self.code if self.code is not None else ConvCodeSpec()
        self.psk_ = QPSK if self.Q == 4 else PskMapSpec(self.Q)
        K = codeword_length(self.fmt_, self.frame_depth, self.psk_)
        self.n_info_ = self.code_.info_length(K)
        self.perm_ = make_interleaver(self.interleaver_seed, K)

    def fit(self, X=None, y=None):
        self._setup()
        return self

    def symbol_grids(self, info_bits):
        """DE-PSK grids ``(M_a, N_s + 1)`` of each frame."""
        if not hasattr(self, "perm_"):
            self._setup()
        u = check_bits(info_bits, "info_bits")
        if u.size != self.n_info_:
            raise ValueError(f"expected {self.n_info_} info bits, got {u.size}")
        d = interleave(conv_encode(u, self.code_), self.perm_)
        A = bits_to_grid(d, self.fmt_.n_active, self.psk_)
        n = self.fmt_.n_symbols
        return [diff_encode(A[:, f * n : (f + 1) * n], self.psk_.Q) for f in range(self.frame_depth)]

    def transform(self, info_bits):
        """Time-domain frames, one per row: ``(frame_depth, frame_len)``."""
        grids = self.symbol_grids(info_bits)
        return np.stack([ofdm_modulate(place_subcarriers(X, self.fmt_), self.fmt_) for X in grids])


class TurboReceiver(BaseEstimator):
    """Turbo DE-PSK receiver for one codeword spread over ``frame_depth`` frames.

    ``mode="blind"`` estimates noise variance, per-block gain and the phase
    sub-trellis posterior from the received frames alone. ``mode="perfect-csi"``
    uses the channel realizations and noise variance passed to :meth:`fit`.

    Inputs are time-domain frames ``(frame_depth, frame_len)`` as produced by
    :class:`Transmitter` (after the channel), or already demodulated full
    grids ``(frame_depth, fft_size, n_symbols + 1)``.
    """

    def __init__(
        self, mode="blind", L=32, M=64, N=10, n_iter=3, fmt=None,
        frame_depth=1, interleaver_seed=0, code=None,
    ):
        self.mode = mode
        self.L = L
        self.M = M
        self.N = N
        self.n_iter = n_iter
        self.fmt = fmt
        self.frame_depth = frame_depth
        self.interleaver_seed = interleaver_seed
        self.code = code

    def _grids(self, X):
        fmt = self.fmt_
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None]
        if X.ndim == 2 and X.shape[1] == fmt.frame_len:
            X = [ofdm_demodulate(x, fmt) for x in X]
        elif X.ndim == 2 and X.shape == (fmt.fft_size, fmt.n_ofdm):
            X = [X]
        X = [check_complex(x, "grid", shape=(fmt.fft_size, fmt.n_ofdm)) for x in X]
        if len(X) != self.frame_depth:
            raise ValueError(f"expected {self.frame_depth} frames, got {len(X)}")
        return X

    def fit(self, X, y=None, realizations=None, noise_var=None):
        self.fmt_ = self.fmt if self.fmt is not None else OfdmFormat.toy()
        self.code_ = self.code if self.code is not None else ConvCodeSpec()
        self.config_ = TurboConfig(self.mode, self.L, self.M, self.N, self.n_iter)
        self.config_.validate(self.fmt_)
        self.perm_ = make_interleaver(
            self.interleaver_seed, codeword_length(self.fmt_, self.frame_depth)
        )
        grids = self._grids(X)
        if self.mode == "perfect-csi":
            if realizations is None:
                raise ValueError("perfect-csi mode requires realizations")
            if len(realizations) != len(grids):
                raise ValueError("one realization per frame is required")
        self.realizations_ = realizations
        self.noise_var_ = noise_var
        self.estimates_ = [
            estimate_channel(extract_active(Y, self.fmt_), extract_null(Y, self.fmt_), self.M, self.N)
            for Y in grids
        ]
        return self

    def _check_fitted(self):
        if not hasattr(self, "config_"):
            raise NotFittedError("call fit() before decoding")

    def decode(self, X):
        """Full :class:`~blindturbo.blindrx.TurboResult` with per-iteration bits."""
        self._check_fitted()
        return turbo_demod_decode(
            self._grids(X), self.fmt_, self.config_, self.perm_, self.code_,
            realizations=self.realizations_, noise_var=self.noise_var_,
            estimates=self.estimates_ if self.mode == "blind" else None,
        )

    def predict(self, X):
        """Hard info-bit decisions after the last iteration."""
        return self.decode(X).bits[-1]

    def predict_proba(self, X):
        """``P(bit = 1)`` for each info bit after the last iteration."""
        return np.exp(self.decode(X).info_log_post[:, 1])
