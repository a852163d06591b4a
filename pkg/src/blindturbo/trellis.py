"""Log-domain BCJR engine and the kernels of the turbo loop.

Everything is carried as natural-log probabilities. Messages are arrays whose
last axis enumerates the alphabet (2 for bits, Q for PSK symbols). Exact
log-sum-exp is used throughout; there is no max-log approximation.

The constant ``1 / (pi * sigma2)`` of the Gaussian likelihood is dropped from
every branch metric. It cancels in the per-stage normalization, so metric
values differ from the textbook density by a constant.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from ._validation import check_complex, check_log_probs, check_variance
from .txchain import QPSK, ConvCodeSpec

LOG_FLOOR = -745.0


class TrellisStarvation(ValueError):
    """Raised when a trellis stage has no path with non-zero probability."""


def normalize_log(x, axis=-1):
    """Normalize log-probabilities along ``axis`` and clamp at :data:`LOG_FLOOR`."""
    x = np.asarray(x, dtype=np.float64)
    out = x - logsumexp(x, axis=axis, keepdims=True)
    return np.maximum(out, LOG_FLOOR)


def uniform_log(shape, card):
    return np.full((*shape, card), -math.log(card))


@dataclass(frozen=True)
class Trellis:
    """Time-invariant trellis; edge ``e = s * n_inputs + i`` leaves state ``s``
    on input ``i`` and enters ``next_state[s, i]``."""

    next_state: np.ndarray
    outputs: np.ndarray = None

    def __post_init__(self):
        ns = np.ascontiguousarray(self.next_state, dtype=np.int64)
        S = ns.shape[0]
        if ns.ndim != 2 or ns.min() < 0 or ns.max() >= S:
            raise ValueError("next_state must be an (S, I) table of states")
        object.__setattr__(self, "next_state", ns)

    @property
    def num_states(self):
        return self.next_state.shape[0]

    @property
    def num_inputs(self):
        return self.next_state.shape[1]

    @property
    def num_edges(self):
        return self.next_state.size

    @property
    def edge_src(self):
        return np.repeat(np.arange(self.num_states), self.num_inputs)

    @property
    def edge_input(self):
        return np.tile(np.arange(self.num_inputs), self.num_states)

    @property
    def edge_dst(self):
        return self.next_state.reshape(-1)

    @property
    def in_idx(self):
        """Edge indices grouped by destination state (see :attr:`in_ptr`)."""
        return np.argsort(self.edge_dst, kind="stable")

    @property
    def in_ptr(self):
        counts = np.bincount(self.edge_dst, minlength=self.num_states)
        return np.concatenate([[0], np.cumsum(counts)])


@lru_cache(maxsize=None)
def depsk_trellis(Q=4):
    """Q-state DE-PSK trellis: input q moves state p to ``(p + q) mod Q``."""
    s = np.arange(Q)
    return Trellis((s[:, None] + s[None, :]) % Q)


@lru_cache(maxsize=None)
def conv_trellis(code=ConvCodeSpec()):
    """Trellis of a feed-forward code; the state holds the previous ``memory``
    inputs with the most recent one as MSB."""
    m = code.memory
    S = 1 << m
    states = np.arange(S)
    # register column k = input delayed by k; column 0 is the new input
    reg_old = (states[:, None] >> np.arange(m - 1, -1, -1)) & 1 if m else np.zeros((S, 0), int)
    next_state = np.empty((S, 2), dtype=np.int64)
    outputs = np.empty((S, 2, code.n_outputs), dtype=np.uint8)
    for u in (0, 1):
        reg = np.concatenate([np.full((S, 1), u), reg_old], axis=1)
        outputs[:, u, :] = (reg @ code.taps.T.astype(np.int64)) & 1
        next_state[:, u] = (u << (m - 1)) | (states >> 1) if m else 0
    return Trellis(next_state, outputs)


def logsumexp(x, axis=-1, keepdims=False):
    """Plain numpy log-sum-exp that tolerates all-``-inf`` slices."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


@numba.njit(cache=True)
def _lse_range(values, lo, hi):
    m = -np.inf
    for k in range(lo, hi):
        v = values[k]
        if v > m:
            m = v
    if m == -np.inf:
        return m
    acc = 0.0
    for k in range(lo, hi):
        acc += math.exp(values[k] - m)
    return m + math.log(acc)


@numba.njit(cache=True)
def _forward_backward_log(
    log_gamma, src, dst, in_ptr, in_idx, log_alpha0, log_beta_end,
    labels, n_vals, want_states, floor,
):
    B, T, E = log_gamma.shape
    S = log_alpha0.shape[1]
    n_sets = labels.shape[0]
    edge_post = np.empty((B, T, E))
    label_post = np.empty((B, T, n_sets, n_vals))
    state_post = np.empty((B, T + 1, S) if want_states else (0, 0, 0))
    evidence = np.empty(B)
    alpha = np.empty((T + 1, S))
    beta = np.empty((T + 1, S))
    tmp = np.empty(E)
    acc = np.empty((n_sets, n_vals))
    for b in range(B):
        c = -np.inf
        for s in range(S):
            c = max(c, log_alpha0[b, s])
        if not c > -np.inf:
            raise ValueError("trellis starvation")
        for s in range(S):
            alpha[0, s] = log_alpha0[b, s] - c
        logz = c
        for t in range(T):
            g = log_gamma[b, t]
            c = -np.inf
            for s in range(S):
                lo, hi = in_ptr[s], in_ptr[s + 1]
                for k in range(lo, hi):
                    e = in_idx[k]
                    tmp[k] = alpha[t, src[e]] + g[e]
                v = _lse_range(tmp, lo, hi)
                alpha[t + 1, s] = v
                c = max(c, v)
            if not c > -np.inf:
                raise ValueError("trellis starvation")
            for s in range(S):
                alpha[t + 1, s] -= c
            logz += c
        c = -np.inf
        for s in range(S):
            c = max(c, log_beta_end[b, s])
        if not c > -np.inf:
            raise ValueError("trellis starvation")
        for s in range(S):
            beta[T, s] = log_beta_end[b, s] - c
            tmp[s] = alpha[T, s] + beta[T, s]
        tot = _lse_range(tmp, 0, S)
        if not tot > -np.inf:
            raise ValueError("trellis starvation")
        evidence[b] = logz + tot + c
        # edges are ordered by source state, n_out per state
        n_out = E // S
        for t in range(T - 1, -1, -1):
            g = log_gamma[b, t]
            c = -np.inf
            for s in range(S):
                lo = s * n_out
                for k in range(lo, lo + n_out):
                    tmp[k] = beta[t + 1, dst[k]] + g[k]
                v = _lse_range(tmp, lo, lo + n_out)
                beta[t, s] = v
                c = max(c, v)
            for s in range(S):
                beta[t, s] -= c
        for t in range(T):
            g = log_gamma[b, t]
            row = edge_post[b, t]
            for e in range(E):
                row[e] = alpha[t, src[e]] + g[e] + beta[t + 1, dst[e]]
            c = _lse_range(row, 0, E)
            acc[:, :] = 0.0
            for e in range(E):
                v = row[e] - c
                p = math.exp(v)
                row[e] = max(v, floor)
                for j in range(n_sets):
                    acc[j, labels[j, e]] += p
            for j in range(n_sets):
                for v in range(n_vals):
                    label_post[b, t, j, v] = max(math.log(acc[j, v]), floor) if acc[j, v] > 0 else floor
        if want_states:
            for t in range(T + 1):
                row = state_post[b, t]
                for s in range(S):
                    row[s] = alpha[t, s] + beta[t, s]
                c = _lse_range(row, 0, S)
                for s in range(S):
                    row[s] = max(row[s] - c, floor)
    return edge_post, label_post, state_post, evidence


@numba.njit(cache=True)
def _forward_backward_scaled(
    log_gamma, src, dst, log_alpha0, log_beta_end,
    labels, n_vals, want_edges, want_states, floor,
):
    """Same recursion with per-stage scaled linear arithmetic.

    Each stage's metrics are exponentiated after subtracting their maximum and
    alpha/beta are renormalized to unit sum; the log scale factors are kept for
    the evidence. Items whose messages underflow are flagged in ``ok`` and
    must be redone by the log-domain kernel.
    """
    B, T, E = log_gamma.shape
    S = log_alpha0.shape[1]
    n_sets = labels.shape[0]
    edge_post = np.empty((B, T, E) if want_edges else (0, 0, 0))
    label_post = np.empty((B, T, n_sets, n_vals))
    state_post = np.empty((B, T + 1, S) if want_states else (0, 0, 0))
    evidence = np.empty(B)
    ok = np.ones(B, dtype=np.bool_)
    glin = np.empty((T, E))
    gshift = np.empty(T)
    alpha = np.empty((T + 1, S))
    beta = np.empty((T + 1, S))
    row = np.empty(E)
    acc = np.empty((n_sets, n_vals))
    for b in range(B):
        for t in range(T):
            m = -np.inf
            for e in range(E):
                m = max(m, log_gamma[b, t, e])
            if not m > -np.inf:
                raise ValueError("trellis starvation")
            gshift[t] = m
            for e in range(E):
                glin[t, e] = math.exp(log_gamma[b, t, e] - m)
        m = -np.inf
        for s in range(S):
            m = max(m, log_alpha0[b, s])
        if not m > -np.inf:
            raise ValueError("trellis starvation")
        c = 0.0
        for s in range(S):
            alpha[0, s] = math.exp(log_alpha0[b, s] - m)
            c += alpha[0, s]
        for s in range(S):
            alpha[0, s] /= c
        logz = m + math.log(c)
        for t in range(T):
            for s in range(S):
                alpha[t + 1, s] = 0.0
            for e in range(E):
                alpha[t + 1, dst[e]] += alpha[t, src[e]] * glin[t, e]
            c = 0.0
            for s in range(S):
                c += alpha[t + 1, s]
            if not c > 0.0:
                ok[b] = False
                break
            for s in range(S):
                alpha[t + 1, s] /= c
            logz += gshift[t] + math.log(c)
        if not ok[b]:
            continue
        m = -np.inf
        for s in range(S):
            m = max(m, log_beta_end[b, s])
        if not m > -np.inf:
            raise ValueError("trellis starvation")
        c = 0.0
        tot = 0.0
        for s in range(S):
            beta[T, s] = math.exp(log_beta_end[b, s] - m)
            c += beta[T, s]
            tot += alpha[T, s] * beta[T, s]
        if not tot > 0.0:
            ok[b] = False
            continue
        evidence[b] = logz + m + math.log(tot)
        for s in range(S):
            beta[T, s] /= c
        for t in range(T - 1, -1, -1):
            for s in range(S):
                beta[t, s] = 0.0
            for e in range(E):
                beta[t, src[e]] += beta[t + 1, dst[e]] * glin[t, e]
            c = 0.0
            for s in range(S):
                c += beta[t, s]
            if not c > 0.0:
                ok[b] = False
                break
            for s in range(S):
                beta[t, s] /= c
        if not ok[b]:
            continue
        for t in range(T):
            z = 0.0
            for e in range(E):
                row[e] = alpha[t, src[e]] * glin[t, e] * beta[t + 1, dst[e]]
                z += row[e]
            if not z > 0.0:
                ok[b] = False
                break
            acc[:, :] = 0.0
            for e in range(E):
                p = row[e] / z
                for j in range(n_sets):
                    acc[j, labels[j, e]] += p
                if want_edges:
                    edge_post[b, t, e] = max(math.log(p), floor) if p > 0.0 else floor
            for j in range(n_sets):
                for v in range(n_vals):
                    a = acc[j, v]
                    label_post[b, t, j, v] = max(math.log(a), floor) if a > 0.0 else floor
        if not ok[b] or not want_states:
            continue
        for t in range(T + 1):
            z = 0.0
            for s in range(S):
                z += alpha[t, s] * beta[t, s]
            if not z > 0.0:
                ok[b] = False
                break
            for s in range(S):
                p = alpha[t, s] * beta[t, s] / z
                state_post[b, t, s] = max(math.log(p), floor) if p > 0.0 else floor
    return edge_post, label_post, state_post, evidence, ok


@dataclass
class BcjrResult:
    label_log_post: np.ndarray  # (..., T, n_label_sets, n_vals)
    log_evidence: np.ndarray  # (...,) log of the total path weight
    edge_log_post: np.ndarray = None  # (..., T, E), normalized per stage
    state_log_post: np.ndarray = None  # (..., T + 1, S)


def log_bcjr(
    trellis, log_gamma, log_alpha0, log_beta_end, labels=None, edges=False, states=False
):
    """Forward-backward recursion on ``trellis``.

    ``log_gamma`` has shape ``(..., T, E)`` with edges ordered as in
    :class:`Trellis`. ``log_alpha0`` and ``log_beta_end`` are ``(..., S)`` and
    need not be normalized; ``log_evidence`` is the log of
    ``sum_paths alpha0(s_0) * prod(gamma) * beta_end(s_T)``.

    ``labels`` is an optional ``(n_sets, E)`` integer array; for each set the
    per-stage edge posteriors are summed per label value into
    ``label_log_post``. By default the input label is used. Edge and state
    posteriors are returned on request.
    """
    log_gamma = np.asarray(log_gamma, dtype=np.float64)
    S, E = trellis.num_states, trellis.num_edges
    if log_gamma.ndim < 2 or log_gamma.shape[-1] != E:
        raise ValueError(f"log_gamma must have shape (..., T, {E}), got {log_gamma.shape}")
    if np.isnan(log_gamma).any() or np.isposinf(log_gamma).any():
        raise ValueError("branch metrics must not be NaN or +inf")
    if labels is None:
        labels = trellis.edge_input[None, :]
    labels = np.ascontiguousarray(np.atleast_2d(labels), dtype=np.int64)
    n_vals = int(labels.max()) + 1
    batch = log_gamma.shape[:-2]
    T = log_gamma.shape[-2]
    g = np.ascontiguousarray(log_gamma.reshape(-1, T, E))
    a0 = np.broadcast_to(np.asarray(log_alpha0, dtype=np.float64), (*batch, S))
    a0 = np.ascontiguousarray(a0.reshape(-1, S))
    bT = np.broadcast_to(np.asarray(log_beta_end, dtype=np.float64), (*batch, S))
    bT = np.ascontiguousarray(bT.reshape(-1, S))
    src, dst = trellis.edge_src, trellis.edge_dst
    try:
        ep, lp, sp, ev, ok = _forward_backward_scaled(
            g, src, dst, a0, bT, labels, n_vals, bool(edges), bool(states), LOG_FLOOR
        )
        bad = np.flatnonzero(~ok)
        if bad.size:
            ep2, lp2, sp2, ev2 = _forward_backward_log(
                np.ascontiguousarray(g[bad]), src, dst, trellis.in_ptr, trellis.in_idx,
                np.ascontiguousarray(a0[bad]), np.ascontiguousarray(bT[bad]),
                labels, n_vals, bool(states), LOG_FLOOR,
            )
            lp[bad], ev[bad] = lp2, ev2
            if edges:
                ep[bad] = ep2
            if states:
                sp[bad] = sp2
    except ValueError as exc:
        raise TrellisStarvation(str(exc)) from None
    return BcjrResult(
        lp.reshape(*batch, T, *lp.shape[2:]),
        ev.reshape(batch),
        ep.reshape(*batch, T, E) if edges else None,
        sp.reshape(*batch, T + 1, S) if states else None,
    )


def marginalize_inputs(trellis, edge_log_post):
    """Sum edge posteriors sharing an input label: ``(..., E) -> (..., I)``."""
    S, I = trellis.num_states, trellis.num_inputs
    x = edge_log_post.reshape(*edge_log_post.shape[:-1], S, I)
    return normalize_log(logsumexp(x, axis=-2))


def depsk_branch_metrics(Y, ref, sigma2, log_prior, Q=4):
    """Edge metrics of the Q-state DE-PSK trellis.

    ``Y`` and ``ref`` are ``(..., T)`` observations and per-stage channel
    coefficients; state p predicts ``ref * exp(2j*pi*p/Q)``. ``log_prior`` is
    ``(..., T, Q)``. Returns ``(..., T, Q*Q)``.
    """
    trellis = depsk_trellis(Q)
    pts = np.exp(2j * np.pi * np.arange(Q) / Q)
    loglik = -np.abs(Y[..., None] - ref[..., None] * pts) ** 2 / sigma2
    return loglik[..., trellis.edge_dst] + log_prior[..., trellis.edge_input]


def coherent_depsk_demod(Y, H, sigma2, log_prior=None, known_start=True, Q=4):
    """MAP DE-PSK symbol demodulation with known channel.

    ``Y`` and ``H`` are ``(..., N + 1)``, column 0 being the differential
    reference. With ``known_start`` the trellis starts in state 0; otherwise
    the start state is weighted by the likelihood of ``Y[..., 0]``. The end
    state is uniform. Returns normalized ``log p(A_n | Y)`` of shape
    ``(..., N, Q)``.
    """
    Y = check_complex(Y, "Y")
    H = check_complex(H, "H")
    if Y.shape != H.shape or Y.shape[-1] < 2:
        raise ValueError(f"Y and H must share a shape (..., N+1>=2), got {Y.shape}, {H.shape}")
    sigma2 = check_variance(sigma2, strict=True)
    N = Y.shape[-1] - 1
    if log_prior is None:
        log_prior = uniform_log((*Y.shape[:-1], N), Q)
    log_prior = check_log_probs(log_prior, Q, "log_prior")
    trellis = depsk_trellis(Q)
    gamma = depsk_branch_metrics(Y[..., 1:], H[..., 1:], sigma2, log_prior, Q)
    if known_start:
        a0 = np.full(Q, -np.inf)
        a0[0] = 0.0
    else:
        pts = np.exp(2j * np.pi * np.arange(Q) / Q)
        a0 = -np.abs(Y[..., :1] - H[..., :1] * pts) ** 2 / sigma2
    res = log_bcjr(trellis, gamma, a0, np.zeros(Q))
    return res.label_log_post[..., 0, :]


def conv_siso_decode(log_lik, code=ConvCodeSpec()):
    """SISO decoding of a zero-tail terminated convolutional codeword.

    ``log_lik`` is ``(K, 2)``: per coded bit, log-likelihoods of 0 and 1.
    Returns ``(info_log_post, coded_log_post)`` with shapes
    ``(K / n - memory, 2)`` and ``(K, 2)``.
    """
    log_lik = check_log_probs(log_lik, 2, "log_lik")
    if log_lik.ndim != 2:
        raise ValueError("log_lik must be (K, 2)")
    K = log_lik.shape[0]
    n_info = code.info_length(K)
    n = code.n_outputs
    T = K // n
    trellis = conv_trellis(code)
    S = trellis.num_states
    out = trellis.outputs.reshape(-1, n)  # (E, n)
    lik = log_lik.reshape(T, n, 2)
    gamma = np.zeros((T, trellis.num_edges))
    for j in range(n):
        gamma += lik[:, j, :][:, out[:, j]]
    start = np.full(S, -np.inf)
    start[0] = 0.0
    labels = np.concatenate([trellis.edge_input[None, :], out.T.astype(np.int64)])
    res = log_bcjr(trellis, gamma, start, start, labels=labels)
    info = res.label_log_post[:n_info, 0, :]
    coded = res.label_log_post[:, 1:, :].reshape(K, 2)
    return info, coded


def symbol_to_bit(log_p_sym, psk=QPSK):
    """Bit marginals of symbol messages: ``(n, Q) -> (n * b, 2)``."""
    log_p_sym = check_log_probs(log_p_sym, psk.Q, "log_p_sym")
    b = psk.bits_per_symbol
    out = np.empty((*log_p_sym.shape[:-1], b, 2))
    for k in range(b):
        for v in (0, 1):
            out[..., k, v] = logsumexp(log_p_sym[..., psk.labels[:, k] == v], axis=-1)
    return normalize_log(out.reshape(*log_p_sym.shape[:-2], -1, 2))


def bit_to_symbol(log_p_bit, psk=QPSK):
    """Symbol priors from independent bit messages: ``(n * b, 2) -> (n, Q)``."""
    log_p_bit = check_log_probs(log_p_bit, 2, "log_p_bit")
    b = psk.bits_per_symbol
    if log_p_bit.shape[-2] % b:
        raise ValueError(f"bit message length is not a multiple of {b}")
    x = log_p_bit.reshape(*log_p_bit.shape[:-2], -1, b, 2)
    out = np.zeros((*x.shape[:-2], psk.Q))
    for k in range(b):
        out += x[..., k, :][..., psk.labels[:, k]]
    return normalize_log(out)


def extrinsic_divide(log_joint, log_prior):
    """Remove ``log_prior`` from ``log_joint`` and renormalize."""
    log_joint = np.asarray(log_joint, dtype=np.float64)
    log_prior = np.asarray(log_prior, dtype=np.float64)
    if log_joint.shape != log_prior.shape:
        raise ValueError(f"shape mismatch: {log_joint.shape} vs {log_prior.shape}")
    return normalize_log(log_joint - log_prior)


def hard_bits(log_p_bit):
    return (log_p_bit[..., 1] > log_p_bit[..., 0]).astype(np.uint8)
