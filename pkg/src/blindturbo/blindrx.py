"""Blind channel estimation, phase-decomposed trellis demodulation and the
turbo demodulation/decoding loop.

The unknown channel phase is quantized to ``L`` hypotheses ``2*pi*l/L``.
Because a DE-PSK input rotates the phase by a multiple of ``2*pi/Q``, the
``L``-state trellis splits into ``L/Q`` disconnected ``Q``-state sub-trellises.
Sub-trellis ``tau`` predicts ``G * exp(2j*pi*tau/L) * exp(2j*pi*p/Q)`` in its
state ``p``, so each one runs as a coherent DE-PSK trellis with a rotated
reference and an unknown start state. A 2D block of ``M`` subcarriers by
``N + 1`` symbols shares one ``tau``; the rows' evidences multiply.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_complex, check_log_probs, check_positive_int
from .ofdm import extract_active, extract_null
from .trellis import (
    Trellis,
    coherent_depsk_demod,
    conv_siso_decode,
    depsk_branch_metrics,
    depsk_trellis,
    extrinsic_divide,
    hard_bits,
    log_bcjr,
    logsumexp,
    normalize_log,
    symbol_to_bit,
    bit_to_symbol,
    uniform_log,
)
from .txchain import QPSK, ConvCodeSpec, deinterleave, grid_to_sequence, interleave, sequence_to_grid

logger = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class PhaseQuantization:
    L: int = 32
    Q: int = 4

    def __post_init__(self):
        check_positive_int(self.L, "L")
        check_positive_int(self.Q, "Q", minimum=2)
        if self.L % self.Q:
            raise ValueError(f"L={self.L} is not a multiple of Q={self.Q}")

    @property
    def n_subtrellis(self):
        return self.L // self.Q

    @property
    def hypotheses(self):
        return 2 * np.pi * np.arange(self.L) / self.L

    def tau_rotation(self):
        """Reference rotation of each sub-trellis: ``exp(2j*pi*tau/L)``."""
        return np.exp(2j * np.pi * np.arange(self.n_subtrellis) / self.L)


def build_decomposed_trellis(pq):
    """The flat ``L``-state phase trellis and its sub-trellis partition.

    Input ``q`` moves state ``l`` to ``(l + q*L/Q) mod L``; the partition lists,
    for each ``tau``, the states ``tau + p*L/Q``.
    """
    step = pq.L // pq.Q
    l = np.arange(pq.L)
    trellis = Trellis((l[:, None] + step * np.arange(pq.Q)[None, :]) % pq.L)
    partition = [tau + step * np.arange(pq.Q) for tau in range(step)]
    return trellis, partition


@dataclass
class ChannelEstimates:
    gain: np.ndarray  # (n_freq_blocks, n_time_blocks) amplitudes
    sigma2: float
    row_blocks: list = field(default_factory=list)
    col_blocks: list = field(default_factory=list)


def estimate_noise_variance(null_tones):
    """Mean power of the received null tones."""
    y = np.asarray(null_tones).reshape(-1)
    if y.size == 0:
        raise ValueError("no null tones to estimate the noise variance from")
    return float(np.mean(np.abs(y) ** 2))


def estimate_gain(Y_block, sigma2_hat):
    """Amplitude estimate ``sqrt(max(mean|Y|^2 - sigma2_hat, 0))``."""
    Y_block = np.asarray(Y_block)
    if Y_block.size == 0:
        raise ValueError("empty block")
    power = np.mean(np.abs(Y_block) ** 2) - sigma2_hat
    return float(np.sqrt(max(power, 0.0)))


def block_layout(n, size):
    """Disjoint runs of ``size`` over ``range(n)``; the last run may be short."""
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def time_layout(n_symbols, N):
    """Column spans ``(c0, c1)`` of the time blocks: each block observes
    columns ``c0..c1`` inclusive and demodulates data symbols ``c0+1..c1``.
    Consecutive blocks share one column."""
    return [(s, min(s + N, n_symbols)) for s in range(0, n_symbols, N)]


def estimate_channel(Y_active, null_tones, M, N):
    """Per-frame noise variance and per-block gains over the ``M x (N+1)`` tiling."""
    sigma2 = estimate_noise_variance(null_tones)
    rows = block_layout(Y_active.shape[0], M)
    cols = time_layout(Y_active.shape[1] - 1, N)
    gain = np.array(
        [[estimate_gain(Y_active[r0:r1, c0 : c1 + 1], sigma2) for c0, c1 in cols] for r0, r1 in rows]
    )
    return ChannelEstimates(gain, sigma2, rows, cols)


def _subtrellis_batch(Y, gain, sigma2, log_prior, pq):
    """Evidence and conditional symbol posteriors of every sub-trellis.

    ``Y`` is ``(R, N+1)``, ``gain`` ``(R,)``, ``log_prior`` ``(R, N, Q)``.
    Returns ``log p(Y_r | tau)`` as ``(R, T)`` and ``log p(A_n | Y_r, tau)`` as
    ``(R, T, N, Q)``, both up to tau-independent constants.
    """
    Q, L = pq.Q, pq.L
    sigma2 = max(float(sigma2), SIGMA2_FLOOR)
    ref = gain[:, None] * pq.tau_rotation()[None, :]  # (R, T)
    R, T = ref.shape
    N = Y.shape[1] - 1
    Yb = np.broadcast_to(Y[:, None, 1:], (R, T, N))
    refb = np.broadcast_to(ref[:, :, None], (R, T, N))
    prior = np.broadcast_to(log_prior[:, None], (R, T, N, Q))
    gamma = depsk_branch_metrics(Yb, refb, sigma2, prior, Q)
    pts = np.exp(2j * np.pi * np.arange(Q) / Q)
    a0 = -np.abs(Y[:, None, :1] - ref[:, :, None] * pts) ** 2 / sigma2  # p(Y_0 | state)
    trellis = depsk_trellis(Q)
    res = log_bcjr(trellis, gamma, a0, np.full(Q, -math.log(L)))
    return res.log_evidence, res.label_log_post[..., 0, :]


def _prior_or_uniform(log_prior, shape, Q):
    if log_prior is None:
        return uniform_log(shape, Q)
    log_prior = check_log_probs(log_prior, Q, "log_prior")
    if log_prior.shape[:-1] != tuple(shape):
        raise ValueError(f"log_prior must have shape {(*shape, Q)}, got {log_prior.shape}")
    return log_prior


def subtrellis_evidence(Y_row, tau, gain, sigma2, log_prior=None, pq=PhaseQuantization()):
    """Single-row sub-trellis pass.

    Returns ``(log_evidence, log p(A_n | Y, tau))``; the evidence is
    ``log p(Y | tau)`` with the Gaussian normalizing constants dropped.
    """
    Y_row = check_complex(Y_row, "Y_row", ndim=1)
    if not 0 <= tau < pq.n_subtrellis:
        raise ValueError(f"tau must lie in [0, {pq.n_subtrellis}), got {tau}")
    N = Y_row.size - 1
    prior = _prior_or_uniform(log_prior, (N,), pq.Q)
    ev, cond = _subtrellis_batch(Y_row[None], np.array([float(gain)]), sigma2, prior[None], pq)
    return float(ev[0, tau]), cond[0, tau]


def phase_posterior_2d(Y_block, gain, sigma2, log_prior=None, pq=PhaseQuantization()):
    """``log p(tau | Y_1..Y_M)`` under a uniform prior on ``tau``."""
    return blind_demod_2d(Y_block, gain, sigma2, log_prior, pq)[1]


def blind_demod_2d(Y_block, gain, sigma2, log_prior=None, pq=PhaseQuantization()):
    """Blind symbol demodulation of one ``M x (N+1)`` block.

    Returns ``(log p(A_mn | block), log p(tau | block))`` with shapes
    ``(M, N, Q)`` and ``(L/Q,)``.
    """
    Y_block = check_complex(Y_block, "Y_block", ndim=2)
    M, N = Y_block.shape[0], Y_block.shape[1] - 1
    if N < 1:
        raise ValueError("a block needs at least two columns")
    prior = _prior_or_uniform(log_prior, (M, N), pq.Q)
    ev, cond = _subtrellis_batch(Y_block, np.full(M, float(gain)), sigma2, prior, pq)
    log_tau = normalize_log(ev.sum(axis=0))
    post = logsumexp(log_tau[None, :, None, None] + cond, axis=1)
    return normalize_log(post), log_tau


def blind_demod_frame(Y_active, estimates, log_prior, pq):
    """Demodulate every block of a frame with frozen estimates.

    ``Y_active`` is ``(M_a, N_s + 1)`` and ``log_prior`` ``(M_a, N_s, Q)``.
    Returns the symbol posteriors and per-block tau posteriors
    ``(n_freq_blocks, n_time_blocks, L/Q)``.
    """
    rows, cols = estimates.row_blocks, estimates.col_blocks
    starts = np.array([r0 for r0, _ in rows])
    sizes = np.array([r1 - r0 for r0, r1 in rows])
    out = np.empty(log_prior.shape)
    log_tau = np.empty((len(rows), len(cols), pq.n_subtrellis))
    for j, (c0, c1) in enumerate(cols):
        gains = np.repeat(estimates.gain[:, j], sizes)
        ev, cond = _subtrellis_batch(
            Y_active[:, c0 : c1 + 1], gains, estimates.sigma2, log_prior[:, c0:c1], pq
        )
        lt = normalize_log(np.add.reduceat(ev, starts, axis=0))
        log_tau[:, j] = lt
        lt_rows = np.repeat(lt, sizes, axis=0)
        post = logsumexp(lt_rows[:, :, None, None] + cond, axis=1)
        out[:, c0:c1] = normalize_log(post)
    return out, log_tau


def coherent_demod_frame(Y_active, H_active, sigma2, log_prior, N, Q=4):
    """Perfect-CSI demodulation over the same time tiling as the blind path.

    The first block starts from the known reference state; later blocks
    weight their start state by the likelihood of the shared column.
    """
    out = np.empty(log_prior.shape)
    sigma2 = max(float(sigma2), SIGMA2_FLOOR)
    for c0, c1 in time_layout(Y_active.shape[1] - 1, N):
        out[:, c0:c1] = coherent_depsk_demod(
            Y_active[:, c0 : c1 + 1],
            H_active[:, c0 : c1 + 1],
            sigma2,
            log_prior[:, c0:c1],
            known_start=c0 == 0,
            Q=Q,
        )
    return out


@dataclass(frozen=True)
class TurboConfig:
    mode: str = "blind"
    L: int = 32
    M: int = 64
    N: int = 10
    iterations: int = 3

    def __post_init__(self):
        if self.mode not in ("blind", "perfect-csi"):
            raise ValueError(f"mode must be 'blind' or 'perfect-csi', got {self.mode!r}")
        check_positive_int(self.M, "M")
        check_positive_int(self.N, "N")
        check_positive_int(self.iterations, "iterations", minimum=0)

    def validate(self, fmt, Q=4):
        if self.N > fmt.n_symbols:
            raise ValueError(
                f"N + 1 = {self.N + 1} exceeds the {fmt.n_ofdm} symbols of the frame"
            )
        if self.M > fmt.n_active:
            raise ValueError(f"M = {self.M} exceeds the {fmt.n_active} active subcarriers")
        if self.mode == "blind":
            PhaseQuantization(self.L, Q)


@dataclass
class TurboResult:
    bits: list  # hard info-bit decisions after each iteration 0..T
    info_log_post: np.ndarray  # final decoder output
    estimates: list  # per-frame ChannelEstimates (blind mode)
    diagnostics: list  # per-block records


def _tau_entropy(log_tau):
    p = np.exp(log_tau)
    return float(-(p * log_tau).sum())


def turbo_demod_decode(
    Y_frames, fmt, config, perm, code=ConvCodeSpec(), psk=QPSK,
    realizations=None, noise_var=None, estimates=None,
):
    """Iterative demodulation and decoding of one codeword spread over
    ``len(Y_frames)`` received full grids.

    Channel estimates are computed once and frozen; the blind tau posteriors
    are recomputed every iteration from the current priors. In
    ``perfect-csi`` mode ``realizations`` supplies each frame's ``H`` and
    ``noise_var`` the true noise variance (estimated from the null tones when
    omitted). Precomputed blind ``estimates`` (one per frame) may be passed.
    """
    config.validate(fmt, psk.Q)
    Y_frames = [check_complex(Y, "Y", shape=(fmt.fft_size, fmt.n_ofdm)) for Y in Y_frames]
    D = len(Y_frames)
    b = psk.bits_per_symbol
    per_frame = fmt.n_symbols * fmt.n_active
    K = D * per_frame * b
    if perm.length != K:
        raise ValueError(f"interleaver length {perm.length} != codeword length {K}")
    Q = psk.Q
    Y_act = [extract_active(Y, fmt) for Y in Y_frames]

    H_act, sigma2 = [], []
    if config.mode == "blind":
        pq = PhaseQuantization(config.L, Q)
        if estimates is None:
            estimates = [
                estimate_channel(Ya, extract_null(Y, fmt), config.M, config.N)
                for Y, Ya in zip(Y_frames, Y_act)
            ]
        elif len(estimates) != D:
            raise ValueError("one set of channel estimates per frame is required")
    else:
        estimates = []
        if realizations is None:
            raise ValueError("perfect-csi mode requires channel realizations")
        for Y, real in zip(Y_frames, realizations):
            H = np.broadcast_to(real.H, (fmt.fft_size, fmt.n_ofdm))
            H_act.append(extract_active(H, fmt))
            s2 = noise_var if noise_var is not None else estimate_noise_variance(extract_null(Y, fmt))
            sigma2.append(s2)

    prior_d = uniform_log((K,), 2)
    bits, diagnostics = [], []
    info_post = None
    for it in range(config.iterations + 1):
        sym_prior = bit_to_symbol(prior_d, psk)
        sym_post = np.empty_like(sym_prior)
        for f in range(D):
            sl = slice(f * per_frame, (f + 1) * per_frame)
            prior_grid = sequence_to_grid(sym_prior[sl], fmt.n_active)
            if config.mode == "blind":
                post, log_tau = blind_demod_frame(Y_act[f], estimates[f], prior_grid, pq)
                est = estimates[f]
                for i, (r0, _) in enumerate(est.row_blocks):
                    for j, (c0, _) in enumerate(est.col_blocks):
                        diagnostics.append(
                            {
                                "iteration": it, "frame": f, "row": r0, "col": c0,
                                "tau_map": int(np.argmax(log_tau[i, j])),
                                "tau_entropy": _tau_entropy(log_tau[i, j]),
                                "gain": float(est.gain[i, j]), "sigma2": est.sigma2,
                            }
                        )
            else:
                post = coherent_demod_frame(Y_act[f], H_act[f], sigma2[f], prior_grid, config.N, Q)
            sym_post[sl] = grid_to_sequence(post)
        ext_d = extrinsic_divide(symbol_to_bit(sym_post, psk), prior_d)
        ext_c = deinterleave(ext_d, perm)
        info_post, coded_post = conv_siso_decode(ext_c, code)
        bits.append(hard_bits(info_post))
        prior_d = interleave(extrinsic_divide(coded_post, ext_c), perm)
        logger.debug("iteration %d done", it)
    return TurboResult(bits, info_post, estimates, diagnostics)


def format_diagnostics(records):
    """Render diagnostic records as ``key=value`` lines."""
    lines = []
    for r in records:
        prefix = "snr={snr_db:g} run={run} ".format(**r) if "run" in r else ""
        lines.append(
            prefix + "iter={iteration} frame={frame} row={row} col={col} tau={tau_map} "
            "H_tau={tau_entropy:.4f} gain={gain:.6f} sigma2={sigma2:.6g}".format(**r)
        )
    return "\n".join(lines)
