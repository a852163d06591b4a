"""Blind turbo demodulation of differentially encoded OFDM."""

from .blindrx import (
    ChannelEstimates,
    PhaseQuantization,
    TurboConfig,
    TurboResult,
    blind_demod_2d,
    build_decomposed_trellis,
    estimate_gain,
    estimate_noise_variance,
    phase_posterior_2d,
    subtrellis_evidence,
    turbo_demod_decode,
)
from .channel import (
    ChannelRealization,
    Tu6Profile,
    apply_awgn,
    apply_block_phase,
    apply_tu6,
    snr_to_sigma2,
)
from .estimators import Transmitter, TurboReceiver
from .ofdm import OfdmFormat, ofdm_demodulate, ofdm_modulate
from .trellis import (
    Trellis,
    TrellisStarvation,
    bit_to_symbol,
    coherent_depsk_demod,
    conv_siso_decode,
    extrinsic_divide,
    log_bcjr,
    symbol_to_bit,
)
from .txchain import (
    QPSK,
    ConvCodeSpec,
    PskMapSpec,
    conv_encode,
    deinterleave,
    diff_encode,
    interleave,
    make_interleaver,
    map_psk,
)

__version__ = "0.1.0"
