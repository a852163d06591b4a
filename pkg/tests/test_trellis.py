import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import conv_posteriors, depsk_posteriors, encode_bits, path_posteriors

from blindturbo.trellis import (
    LOG_FLOOR,
    Trellis,
    TrellisStarvation,
    _forward_backward_log,
    bit_to_symbol,
    coherent_depsk_demod,
    conv_siso_decode,
    conv_trellis,
    depsk_branch_metrics,
    depsk_trellis,
    extrinsic_divide,
    hard_bits,
    log_bcjr,
    logsumexp,
    marginalize_inputs,
    normalize_log,
    symbol_to_bit,
    uniform_log,
)
from blindturbo.txchain import QPSK, conv_encode

TOL = 1e-9


def rand_metrics(rng, T, E, scale=3.0):
    return rng.normal(scale=scale, size=(T, E))


def test_conv_trellis_matches_encoder():
    tr = conv_trellis()
    assert tr.num_states == 64 and tr.num_inputs == 2
    rng = np.random.default_rng(0)
    u = rng.integers(0, 2, 30)
    s, out = 0, []
    for b in list(u) + [0] * 6:
        out.extend(tr.outputs[s, b])
        s = tr.next_state[s, b]
    assert s == 0
    np.testing.assert_array_equal(out, conv_encode(u))


def test_trellis_edges_every_state_full_in_out():
    for tr in (depsk_trellis(4), conv_trellis()):
        counts = np.bincount(tr.edge_dst, minlength=tr.num_states)
        assert np.all(counts == tr.num_inputs)
    with pytest.raises(ValueError):
        Trellis(np.array([[0, 3]]))


@pytest.mark.parametrize("T", [1, 2, 4, 6])
def test_bcjr_depsk_matches_enumeration(T):
    rng = np.random.default_rng(T)
    tr = depsk_trellis(4)
    g = rand_metrics(rng, T, tr.num_edges)
    a0, bT = rng.normal(size=4), rng.normal(size=4)
    res = log_bcjr(tr, g, a0, bT, edges=True, states=True)
    edge, inp, state, ev = path_posteriors(tr.next_state, g, a0, bT)
    np.testing.assert_allclose(res.edge_log_post, edge, atol=TOL)
    np.testing.assert_allclose(res.label_log_post[:, 0], inp, atol=TOL)
    np.testing.assert_allclose(res.state_log_post, state, atol=TOL)
    assert res.log_evidence == pytest.approx(ev, abs=TOL)


def test_bcjr_batch_and_custom_labels():
    rng = np.random.default_rng(11)
    tr = depsk_trellis(4)
    g = rand_metrics(rng, 3, 16).reshape(1, 3, 16).repeat(2, axis=0)
    g[1] *= 0.5
    labels = np.stack([tr.edge_input, tr.edge_dst])
    res = log_bcjr(tr, g, np.zeros(4), np.zeros(4), labels=labels)
    for b in range(2):
        _, inp, state, _ = path_posteriors(tr.next_state, g[b], np.zeros(4), np.zeros(4))
        np.testing.assert_allclose(res.label_log_post[b, :, 0], inp, atol=TOL)
        # label = destination state gives the state posterior at t+1
        np.testing.assert_allclose(res.label_log_post[b, :, 1], state[1:], atol=TOL)


def test_bcjr_log_fallback_on_extreme_metrics():
    """Metrics spanning thousands of nats underflow the scaled kernel and
    must take the exact log-domain route."""
    rng = np.random.default_rng(3)
    tr = depsk_trellis(4)
    g = rng.normal(scale=800.0, size=(5, 16))
    a0 = np.array([0.0, -2000.0, -1e4, -np.inf])
    bT = np.zeros(4)
    res = log_bcjr(tr, g, a0, bT, edges=True)
    edge, inp, _, ev = path_posteriors(tr.next_state, g, a0, bT)
    np.testing.assert_allclose(np.maximum(res.edge_log_post, LOG_FLOOR), np.maximum(edge, LOG_FLOOR), atol=TOL, rtol=1e-12)
    assert res.log_evidence == pytest.approx(ev, rel=1e-12)


def test_log_kernel_matches_enumeration_directly():
    rng = np.random.default_rng(4)
    tr = depsk_trellis(4)
    g = rand_metrics(rng, 4, 16)
    a0, bT = rng.normal(size=4), rng.normal(size=4)
    ep, lp, sp, ev = _forward_backward_log(
        g[None], tr.edge_src, tr.edge_dst, tr.in_ptr, tr.in_idx, a0[None], bT[None],
        tr.edge_input[None], 4, True, LOG_FLOOR,
    )
    edge, inp, state, ev_ref = path_posteriors(tr.next_state, g, a0, bT)
    np.testing.assert_allclose(ep[0], edge, atol=TOL)
    np.testing.assert_allclose(sp[0], state, atol=TOL)
    assert ev[0] == pytest.approx(ev_ref, abs=TOL)


def test_one_state_trellis_returns_priors():
    tr = Trellis(np.zeros((1, 3), dtype=int))
    prior = normalize_log(np.random.default_rng(5).normal(size=(4, 3)))
    res = log_bcjr(tr, prior, np.zeros(1), np.zeros(1))
    np.testing.assert_allclose(res.label_log_post[:, 0], prior, atol=TOL)


def test_uniform_metrics_give_uniform_edges():
    tr = depsk_trellis(4)
    res = log_bcjr(tr, np.zeros((5, 16)), np.zeros(4), np.zeros(4), edges=True)
    np.testing.assert_allclose(res.edge_log_post, -np.log(16), atol=TOL)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 8), st.floats(-50, 50))
def test_stage_normalization_and_shift_invariance(seed, T, shift):
    rng = np.random.default_rng(seed)
    tr = depsk_trellis(4)
    g = rand_metrics(rng, T, 16, scale=5.0)
    a0 = rng.normal(size=4)
    r1 = log_bcjr(tr, g, a0, np.zeros(4), edges=True)
    np.testing.assert_allclose(logsumexp(r1.edge_log_post, axis=-1), 0.0, atol=TOL)
    g2 = g.copy()
    g2[rng.integers(0, T)] += shift
    r2 = log_bcjr(tr, g2, a0, np.zeros(4), edges=True)
    np.testing.assert_allclose(r2.edge_log_post, r1.edge_log_post, atol=1e-9)


def test_starvation_and_bad_metrics():
    tr = depsk_trellis(4)
    with pytest.raises(TrellisStarvation, match="starvation"):
        log_bcjr(tr, np.full((3, 16), -np.inf), np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError):
        log_bcjr(tr, np.full((3, 16), np.nan), np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError):
        log_bcjr(tr, np.zeros((3, 15)), np.zeros(4), np.zeros(4))


# coherent DE-PSK demodulator

def _row(rng, N, sigma2=0.5):
    A = rng.integers(0, 4, N)
    X = np.exp(2j * np.pi * np.concatenate([[0], np.cumsum(A)]) / 4)
    H = rng.normal(size=N + 1) + 1j * rng.normal(size=N + 1)
    noise = np.sqrt(sigma2 / 2) * (rng.normal(size=N + 1) + 1j * rng.normal(size=N + 1))
    return A, H, H * X + noise


@pytest.mark.parametrize("N", [1, 3, 5])
@pytest.mark.parametrize("known_start", [True, False])
def test_coherent_demod_matches_enumeration(N, known_start):
    rng = np.random.default_rng(N + 10 * known_start)
    _, H, Y = _row(rng, N)
    prior = normalize_log(rng.normal(size=(N, 4)))
    got = coherent_depsk_demod(Y, H, 0.5, prior, known_start=known_start)
    pts = np.exp(2j * np.pi * np.arange(4) / 4)
    if known_start:
        w0 = np.array([0.0, -np.inf, -np.inf, -np.inf])
    else:
        w0 = -np.abs(Y[0] - H[0] * pts) ** 2 / 0.5
    ref, _ = depsk_posteriors(Y, H, 0.5, prior, w0)
    np.testing.assert_allclose(got, ref, atol=TOL)


def test_coherent_demod_noiseless_recovers_symbols():
    rng = np.random.default_rng(7)
    A, H, _ = _row(rng, 12)
    X = np.exp(2j * np.pi * np.concatenate([[0], np.cumsum(A)]) / 4)
    post = coherent_depsk_demod(H * X, H, 1e-3)
    np.testing.assert_array_equal(post.argmax(-1), A)


def test_coherent_demod_rotation_consistent():
    rng = np.random.default_rng(8)
    _, H, Y = _row(rng, 6)
    prior = normalize_log(rng.normal(size=(6, 4)))
    rot = np.exp(1j * 0.77)
    for ks in (True, False):
        np.testing.assert_allclose(
            coherent_depsk_demod(rot * Y, rot * H, 0.5, prior, known_start=ks),
            coherent_depsk_demod(Y, H, 0.5, prior, known_start=ks),
            atol=TOL,
        )


def test_informative_prior_sharpens_posterior():
    rng = np.random.default_rng(9)
    for _ in range(20):
        A, H, Y = _row(rng, 5, sigma2=1.0)
        weak = coherent_depsk_demod(Y, H, 1.0)
        good = np.full((5, 4), np.log(0.1 / 3))
        good[np.arange(5), A] = np.log(0.9)
        strong = coherent_depsk_demod(Y, H, 1.0, good)
        # KL(truth || posterior) = -log p(true A)
        assert np.all(strong[np.arange(5), A] >= weak[np.arange(5), A] - 1e-12)


def test_coherent_demod_errors():
    with pytest.raises(ValueError):
        coherent_depsk_demod(np.ones(4), np.ones(4), 0.0)
    with pytest.raises(ValueError):
        coherent_depsk_demod(np.ones(4), np.ones(3), 1.0)


def test_branch_metric_formula():
    Y = np.array([0.3 + 0.1j])
    ref = np.array([1.0 + 0.0j])
    prior = np.log(np.array([[0.1, 0.2, 0.3, 0.4]]))
    g = depsk_branch_metrics(Y, ref, 0.5, prior)
    tr = depsk_trellis(4)
    for e in range(16):
        x = np.exp(2j * np.pi * tr.edge_dst[e] / 4)
        expect = -abs(Y[0] - x) ** 2 / 0.5 + prior[0, tr.edge_input[e]]
        assert g[0, e] == pytest.approx(expect, abs=1e-14)


# outer code SISO

@pytest.mark.parametrize("seed", range(4))
def test_conv_siso_matches_codeword_enumeration(seed):
    rng = np.random.default_rng(seed)
    n_info = 10
    K = 2 * (n_info + 6)
    lik = rng.normal(scale=1.5, size=(K, 2))
    info, coded = conv_siso_decode(lik)
    ref_info, ref_coded = conv_posteriors(lik, n_info)
    np.testing.assert_allclose(info, ref_info, atol=TOL)
    np.testing.assert_allclose(np.maximum(coded, LOG_FLOOR), np.maximum(ref_coded, LOG_FLOOR), atol=TOL)


def test_oracle_encoder_agrees():
    u = [1, 0, 1, 1, 0, 0, 1]
    np.testing.assert_array_equal(encode_bits(u), conv_encode(u))


def test_conv_siso_hard_codeword():
    rng = np.random.default_rng(12)
    u = rng.integers(0, 2, 200)
    c = conv_encode(u)
    lik = np.where(np.stack([c == 0, c == 1], axis=1), 0.0, -40.0)
    info, coded = conv_siso_decode(lik)
    np.testing.assert_array_equal(hard_bits(info), u)
    assert np.all(np.exp(info[np.arange(200), u]) > 1 - 1e-9)


def test_conv_siso_uniform():
    info, coded = conv_siso_decode(np.zeros((2 * 20, 2)))
    np.testing.assert_allclose(info, np.log(0.5), atol=TOL)


def test_conv_siso_identity_code_passthrough():
    from blindturbo.txchain import ConvCodeSpec

    code = ConvCodeSpec(constraint_length=1, generators=(1,))
    lik = normalize_log(np.random.default_rng(1).normal(size=(9, 2)))
    info, coded = conv_siso_decode(lik, code)
    np.testing.assert_allclose(info, lik, atol=TOL)
    np.testing.assert_allclose(coded, lik, atol=TOL)


def test_conv_siso_odd_length():
    with pytest.raises(ValueError):
        conv_siso_decode(np.zeros((31, 2)))


# soft mapping and extrinsic bookkeeping

def test_bit_to_symbol_example():
    bits = np.log(np.array([[0.8, 0.2], [0.6, 0.4]]))
    sym = np.exp(bit_to_symbol(bits))
    # constellation order is (1, j, -1, -j) = labels (00, 01, 11, 10)
    np.testing.assert_allclose(sym[0], [0.48, 0.32, 0.08, 0.12], atol=1e-12)


def test_bit_to_symbol_point_mass_and_uniform():
    certain = np.log(np.array([[1.0, 1e-300], [1.0, 1e-300]]))
    assert np.argmax(bit_to_symbol(certain)[0]) == 0
    np.testing.assert_allclose(bit_to_symbol(uniform_log((4,), 2)), np.log(0.25), atol=TOL)


def test_symbol_to_bit_examples():
    delta = np.full((1, 4), LOG_FLOOR)
    delta[0, 1] = 0.0  # exp(j*pi/2)
    bits = np.exp(symbol_to_bit(delta))
    np.testing.assert_allclose(bits, [[1, 0], [0, 1]], atol=1e-12)
    np.testing.assert_allclose(symbol_to_bit(uniform_log((3,), 4)), np.log(0.5), atol=TOL)
    back = bit_to_symbol(symbol_to_bit(delta))
    assert np.argmax(back[0]) == 1 and np.exp(back[0, 1]) > 1 - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32))
def test_symbol_bit_marginals_match_table(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(4), size=5)
    bits = np.exp(symbol_to_bit(np.log(p))).reshape(5, 2, 2)
    lab = QPSK.labels
    for k in range(2):
        np.testing.assert_allclose(bits[:, k, 1], p[:, lab[:, k] == 1].sum(-1), atol=1e-12)


def test_extrinsic_divide():
    rng = np.random.default_rng(13)
    joint = normalize_log(rng.normal(size=(6, 4)))
    prior = normalize_log(rng.normal(size=(6, 4)))
    np.testing.assert_allclose(extrinsic_divide(joint, uniform_log((6,), 4)), joint, atol=TOL)
    np.testing.assert_allclose(extrinsic_divide(joint, joint), np.log(0.25), atol=TOL)
    ext = extrinsic_divide(joint, prior)
    np.testing.assert_allclose(normalize_log(ext + prior), joint, atol=TOL)
    with pytest.raises(ValueError):
        extrinsic_divide(joint, prior[:3])


def test_floor_prevents_nan():
    joint = np.array([[0.0, -np.inf]])
    out = extrinsic_divide(normalize_log(joint), normalize_log(joint))
    assert np.all(np.isfinite(out))


def test_marginalize_inputs():
    tr = depsk_trellis(4)
    rng = np.random.default_rng(14)
    g = rand_metrics(rng, 3, 16)
    res = log_bcjr(tr, g, np.zeros(4), np.zeros(4), edges=True)
    np.testing.assert_allclose(marginalize_inputs(tr, res.edge_log_post), res.label_log_post[:, 0], atol=TOL)
