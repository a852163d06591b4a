"""Exhaustive-enumeration references for the trellis and blind receiver tests.

Everything here walks explicit paths in plain Python; nothing is shared with
the forward-backward kernels under test.
"""

import itertools

import numpy as np
from scipy.special import logsumexp


def enumerate_paths(next_state, log_gamma, log_alpha0, log_beta_end):
    """All (start state, input sequence) paths with their log weights.

    Returns the list of ``(states, inputs, log_weight)``.
    """
    S, I = next_state.shape
    T = log_gamma.shape[0]
    paths = []
    for s0 in range(S):
        if log_alpha0[s0] == -np.inf:
            continue
        for inputs in itertools.product(range(I), repeat=T):
            states = [s0]
            w = log_alpha0[s0]
            for t, i in enumerate(inputs):
                w += log_gamma[t, states[-1] * I + i]
                states.append(int(next_state[states[-1], i]))
            w += log_beta_end[states[-1]]
            paths.append((states, inputs, w))
    return paths


def path_posteriors(next_state, log_gamma, log_alpha0, log_beta_end):
    """Edge, input and state log posteriors plus log evidence by enumeration."""
    S, I = next_state.shape
    T = log_gamma.shape[0]
    paths = enumerate_paths(next_state, log_gamma, log_alpha0, log_beta_end)
    weights = np.array([w for _, _, w in paths])
    ev = logsumexp(weights)
    edge = np.full((T, S * I), -np.inf)
    state = np.full((T + 1, S), -np.inf)
    for (states, inputs, w) in paths:
        for t, i in enumerate(inputs):
            e = states[t] * I + i
            edge[t, e] = np.logaddexp(edge[t, e], w)
        for t, s in enumerate(states):
            state[t, s] = np.logaddexp(state[t, s], w)
    edge -= ev
    state -= ev
    inp = logsumexp(edge.reshape(T, S, I), axis=1)
    return edge, inp, state, ev


def encode_bits(u, generators=(0b1011011, 0b1111001), K=7):
    reg = [0] * K
    out = []
    for b in list(u) + [0] * (K - 1):
        reg = [b] + reg[:-1]
        for g in generators:
            out.append(sum(((g >> (K - 1 - k)) & 1) * reg[k] for k in range(K)) % 2)
    return out


def conv_posteriors(log_lik, n_info):
    """Info and coded bit log posteriors over all 2**n_info messages."""
    msgs = list(itertools.product((0, 1), repeat=n_info))
    code = np.array([encode_bits(m) for m in msgs])
    w = log_lik[np.arange(code.shape[1]), code].sum(axis=1)
    ev = logsumexp(w)
    msgs = np.array(msgs)
    info = np.stack([[logsumexp(w[msgs[:, k] == v]) for v in (0, 1)] for k in range(n_info)])
    coded = np.stack(
        [[logsumexp(w[code[:, k] == v]) if np.any(code[:, k] == v) else -np.inf for v in (0, 1)]
         for k in range(code.shape[1])]
    )
    return info - ev, coded - ev


def depsk_posteriors(Y, refs, sigma2, log_prior, x0_weights, Q=4):
    """``log p(A_n | Y)`` and ``log p(Y)`` for a DE-PSK row by summing over
    every start phase index and symbol sequence.

    ``refs[n]`` is the channel coefficient of column n and ``x0_weights`` the
    log weight of each start index (its channel term is included by the
    caller when the reference is unknown).
    """
    N = len(Y) - 1
    pts = np.exp(2j * np.pi * np.arange(Q) / Q)
    post = np.full((N, Q), -np.inf)
    total = -np.inf
    for x0 in range(Q):
        if x0_weights[x0] == -np.inf:
            continue
        for seq in itertools.product(range(Q), repeat=N):
            w = x0_weights[x0]
            x = x0
            for n, a in enumerate(seq):
                x = (x + a) % Q
                w += -abs(Y[n + 1] - refs[n + 1] * pts[x]) ** 2 / sigma2 + log_prior[n, a]
            total = np.logaddexp(total, w)
            for n, a in enumerate(seq):
                post[n, a] = np.logaddexp(post[n, a], w)
    return post - total, total


def flat_phase_posteriors(Y_block, gain, sigma2, log_prior, L, Q=4):
    """Blind symbol posteriors on the flat L-state phase trellis.

    Each row runs over all L start phases ``2*pi*l/L``; rows are coupled only
    through the shared residual class ``l mod (L/Q)``, which is enumerated
    explicitly. Returns ``(log p(A_mn | block), log p(tau | block))``.
    """
    M, cols = Y_block.shape
    N = cols - 1
    T = L // Q
    phases = np.exp(2j * np.pi * np.arange(L) / L)
    row_ev = np.zeros((M, T))
    row_post = np.zeros((M, T, N, Q))
    for m in range(M):
        for tau in range(T):
            w0 = np.full(Q, -np.inf)
            # start phase l = tau + p*T corresponds to DE-PSK index p with
            # reference rotated by exp(2j*pi*tau/L)
            for p in range(Q):
                l = tau + p * T
                w0[p] = -abs(Y_block[m, 0] - gain * phases[l]) ** 2 / sigma2 - np.log(L)
            refs = np.full(cols, gain * phases[tau])
            post, ev = depsk_posteriors(Y_block[m], refs, sigma2, log_prior[m], w0, Q)
            row_ev[m, tau] = ev
            row_post[m, tau] = post
    log_tau = row_ev.sum(axis=0)
    log_tau -= logsumexp(log_tau)
    mix = logsumexp(log_tau[None, :, None, None] + row_post, axis=1)
    mix -= logsumexp(mix, axis=-1, keepdims=True)
    return mix, log_tau


def flat_trellis_posteriors(Y_row, gain, sigma2, log_prior, L, Q=4):
    """Single-row blind posteriors via path enumeration on the L-state trellis
    itself (no sub-trellis split): state l emits ``gain*exp(2j*pi*l/L)``."""
    N = len(Y_row) - 1
    step = L // Q
    phases = gain * np.exp(2j * np.pi * np.arange(L) / L)
    next_state = (np.arange(L)[:, None] + step * np.arange(Q)[None, :]) % L
    gamma = np.empty((N, L * Q))
    for n in range(N):
        for l in range(L):
            for q in range(Q):
                dst = next_state[l, q]
                gamma[n, l * Q + q] = -abs(Y_row[n + 1] - phases[dst]) ** 2 / sigma2 + log_prior[n, q]
    a0 = -np.abs(Y_row[0] - phases) ** 2 / sigma2
    _, inp, _, _ = path_posteriors(next_state, gamma, a0, np.full(L, -np.log(L)))
    return inp
