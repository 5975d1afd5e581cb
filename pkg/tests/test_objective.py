"""Contrastive loss against closed forms and a double-loop oracle; optimizer
rules against hand recurrences and a scalar reference implementation."""

import math

import numpy as np
import pytest

from voxalign import tensor as tz
from voxalign.objective import (
    ADAMW_ONLY,
    AdamState,
    HybridConfig,
    HybridOptimizer,
    MuonState,
    adamw_step,
    muon_step,
    sigmoid_pair_loss,
    sigmoid_pair_loss_from_sims,
)
from voxalign.tensor import ContractError, Tape, Tensor


@pytest.fixture(autouse=True)
def float64_mode():
    tz.set_default_dtype(np.float64)
    yield


def unit_rows(r, b, d):
    x = r.standard_normal((b, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def loss_oracle(img, txt, log_temp, bias):
    """Double-loop scalar re-derivation of the pairwise sigmoid loss."""
    b = img.shape[0]
    total = 0.0
    for i in range(b):
        for j in range(b):
            sim = sum(img[i, k] * txt[j, k] for k in range(img.shape[1]))
            z = 1.0 if i == j else -1.0
            logit = z * (math.exp(log_temp) * sim + bias)
            total += -math.log(1.0 / (1.0 + math.exp(-logit)))
    return total / b


# ---------------------------------------------------------------------------
# loss values
# ---------------------------------------------------------------------------

def test_loss_single_perfect_pair_closed_form():
    v = np.zeros((1, 4))
    v[0, 0] = 1.0
    loss = sigmoid_pair_loss(Tensor(v), Tensor(v.copy()), tz.param(np.zeros(())),
                             tz.param(np.zeros(())))
    assert loss.item() == pytest.approx(-math.log(1 / (1 + math.exp(-1))), abs=1e-12)
    assert loss.item() == pytest.approx(0.31326, abs=1e-5)


def test_loss_orthogonal_pair_is_log_two():
    img = np.array([[1.0, 0.0]])
    txt = np.array([[0.0, 1.0]])
    loss = sigmoid_pair_loss(Tensor(img), Tensor(txt), tz.param(np.zeros(())),
                             tz.param(np.zeros(())))
    assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_loss_matches_double_loop_oracle():
    r = np.random.default_rng(0)
    img = unit_rows(r, 4, 6)
    txt = unit_rows(r, 4, 6)
    lt, pb = 0.3, -1.5
    got = sigmoid_pair_loss(Tensor(img), Tensor(txt), tz.param(np.full((), lt)),
                            tz.param(np.full((), pb))).item()
    assert got == pytest.approx(loss_oracle(img, txt, lt, pb), abs=1e-12)


def test_loss_gradient_passes_grad_check():
    r = np.random.default_rng(1)
    img = tz.param(unit_rows(r, 4, 5))
    txt = tz.param(unit_rows(r, 4, 5))
    lt = tz.param(np.zeros(()))
    pb = tz.param(np.full((), -2.0))

    def f():
        return sigmoid_pair_loss(img, txt, lt, pb)

    assert tz.grad_check(f, [img, txt, lt, pb], h=1e-6) < 1e-4


def test_loss_permutation_invariance():
    r = np.random.default_rng(2)
    img = unit_rows(r, 6, 8)
    txt = unit_rows(r, 6, 8)
    lt = tz.param(np.full((), 0.7))
    pb = tz.param(np.full((), -0.5))
    base = sigmoid_pair_loss(Tensor(img), Tensor(txt), lt, pb).item()
    for seed in range(5):
        perm = np.random.default_rng(seed).permutation(6)
        permuted = sigmoid_pair_loss(Tensor(img[perm]), Tensor(txt[perm]), lt, pb).item()
        assert permuted == pytest.approx(base, abs=1e-12)


def test_loss_monotone_in_positive_similarity():
    r = np.random.default_rng(3)
    sims = np.clip(r.standard_normal((5, 5)) * 0.3, -0.99, 0.99)
    lt = tz.param(np.zeros(()))
    pb = tz.param(np.zeros(()))
    base = sigmoid_pair_loss_from_sims(Tensor(sims), lt, pb).item()
    for i in range(5):
        bumped = sims.copy()
        bumped[i, i] += 1e-3
        up = sigmoid_pair_loss_from_sims(Tensor(bumped), lt, pb).item()
        assert up < base


def test_loss_empty_batch_rejected():
    with pytest.raises(ContractError):
        sigmoid_pair_loss(Tensor(np.zeros((0, 3))), Tensor(np.zeros((0, 3))),
                          tz.param(np.zeros(())), tz.param(np.zeros(())))


def test_loss_finite_for_extreme_scalars():
    r = np.random.default_rng(4)
    img = unit_rows(r, 3, 4)
    txt = unit_rows(r, 3, 4)
    loss = sigmoid_pair_loss(Tensor(img), Tensor(txt), tz.param(np.full((), 8.0)),
                             tz.param(np.full((), -40.0)))
    assert np.isfinite(loss.item())


# ---------------------------------------------------------------------------
# momentum-only rule
# ---------------------------------------------------------------------------

def test_muon_beta_zero_is_bitwise_sgd():
    r = np.random.default_rng(5)
    w0 = r.standard_normal((3, 4))
    g = r.standard_normal((3, 4))
    p = tz.param(w0.copy())
    muon_step(p, g, MuonState(momentum=np.zeros_like(w0)), lr=0.05, weight_decay=0.0,
              momentum=0.0)
    sgd = w0 - 0.05 * g
    assert np.array_equal(p.data, sgd)


def test_muon_zero_grad_decays_momentum_only():
    w0 = np.ones((2, 2))
    p = tz.param(w0.copy())
    state = MuonState(momentum=np.full((2, 2), 0.8))
    for step in range(1, 6):
        muon_step(p, np.zeros((2, 2)), state, lr=0.0, weight_decay=0.0, momentum=0.5)
        assert np.allclose(state.momentum, 0.8 * 0.5 ** step)
    assert np.array_equal(p.data, w0)


def test_muon_two_step_hand_recurrence():
    eta, lam, beta = 0.1, 0.01, 0.9
    w = np.full((2, 2), 2.0)
    g = np.ones((2, 2))
    # hand recurrence
    u1 = beta * 0.0 + (1 - beta) * 1.0
    w1 = (1 - eta * lam) * 2.0 - eta * u1
    u2 = beta * u1 + (1 - beta) * 1.0
    w2 = (1 - eta * lam) * w1 - eta * u2
    p = tz.param(w.copy())
    state = MuonState(momentum=np.zeros((2, 2)))
    muon_step(p, g, state, eta, lam, beta)
    assert np.max(np.abs(p.data - w1)) < 1e-12
    muon_step(p, g, state, eta, lam, beta)
    assert np.max(np.abs(p.data - w2)) < 1e-12


def test_muon_hundred_random_steps_match_recurrence():
    r = np.random.default_rng(6)
    eta, lam, beta = 3e-3, 1e-4, 0.95
    w_ref = r.standard_normal((4, 5))
    u_ref = np.zeros((4, 5))
    p = tz.param(w_ref.copy())
    state = MuonState(momentum=np.zeros((4, 5)))
    for _ in range(100):
        g = r.standard_normal((4, 5))
        u_ref = beta * u_ref + (1 - beta) * g
        w_ref = (1 - eta * lam) * w_ref - eta * u_ref
        muon_step(p, g, state, eta, lam, beta)
    assert np.max(np.abs(p.data - w_ref)) < 1e-12


# ---------------------------------------------------------------------------
# adamw rule
# ---------------------------------------------------------------------------

def test_adamw_first_step_magnitude_is_lr():
    p = tz.param(np.zeros(3))
    adamw_step(p, np.ones(3), AdamState(m=np.zeros(3), v=np.zeros(3)), lr=0.01,
               weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8)
    # bias-corrected m_hat = v_hat = 1 on step one, so |update| = lr/(1+eps)
    assert np.max(np.abs(p.data + 0.01 / (1.0 + 1e-8))) < 1e-15


def test_adamw_zero_grad_zero_decay_is_identity():
    w0 = np.array([1.0, -2.0])
    p = tz.param(w0.copy())
    st = AdamState(m=np.zeros(2), v=np.zeros(2))
    for _ in range(10):
        adamw_step(p, np.zeros(2), st, lr=0.1, weight_decay=0.0, beta1=0.9,
                   beta2=0.999, eps=1e-8)
    assert np.array_equal(p.data, w0)


def test_adamw_matches_scalar_reference_100_steps():
    r = np.random.default_rng(7)
    lr, wd, b1, b2, eps = 2e-3, 1e-2, 0.9, 0.999, 1e-8
    w_ref = float(r.standard_normal())
    m_ref, v_ref = 0.0, 0.0
    p = tz.param(np.full((), w_ref))
    st = AdamState(m=np.zeros(()), v=np.zeros(()))
    for t in range(1, 101):
        g = float(r.standard_normal())
        m_ref = b1 * m_ref + (1 - b1) * g
        v_ref = b2 * v_ref + (1 - b2) * g * g
        m_hat = m_ref / (1 - b1 ** t)
        v_hat = v_ref / (1 - b2 ** t)
        w_ref = w_ref - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * w_ref)
        adamw_step(p, np.full((), g), st, lr, wd, b1, b2, eps)
    assert abs(p.data - w_ref) < 1e-10


# ---------------------------------------------------------------------------
# hybrid routing
# ---------------------------------------------------------------------------

def test_hybrid_routes_matrix_to_muon_and_bias_to_adamw():
    r = np.random.default_rng(8)
    mat = tz.param(r.standard_normal((3, 3)))
    bias = tz.param(r.standard_normal(3))
    opt = HybridOptimizer({"w": mat, "b": bias},
                          HybridConfig(lr=0.1, weight_decay=0.0, muon_momentum=0.9))
    assert opt.routing() == {"w": "muon", "b": "adamw"}

    g_mat = r.standard_normal((3, 3))
    g_bias = r.standard_normal(3)
    w_expect = mat.data.copy()
    u = np.zeros((3, 3))
    b_expect = bias.data.copy()
    m = v = np.zeros(3)
    for t in range(1, 4):
        mat.grad = g_mat.copy()
        bias.grad = g_bias.copy()
        opt.step()
        u = 0.9 * u + 0.1 * g_mat
        w_expect = w_expect - 0.1 * u
        m = 0.9 * m + 0.1 * g_bias
        v = 0.999 * v + 0.001 * g_bias ** 2
        b_expect = b_expect - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        opt.zero_grad()
    assert np.max(np.abs(mat.data - w_expect)) < 1e-12
    assert np.max(np.abs(bias.data - b_expect)) < 1e-12


def test_hybrid_zero_lr_changes_nothing():
    r = np.random.default_rng(9)
    params = {"w": tz.param(r.standard_normal((2, 2))), "s": tz.param(np.full((), 1.5))}
    snap = {k: p.data.copy() for k, p in params.items()}
    opt = HybridOptimizer(params, HybridConfig(lr=0.0))
    for p in params.values():
        p.grad = np.ones_like(p.data)
    opt.step()
    for k, p in params.items():
        assert np.array_equal(p.data, snap[k])


def test_hybrid_routing_is_partition():
    r = np.random.default_rng(10)
    params = {
        "mat": tz.param(r.standard_normal((4, 2))),
        "deep": tz.param(r.standard_normal((2, 2, 2))),
        "vec": tz.param(r.standard_normal(4)),
        "scalar": tz.param(np.zeros(())),
    }
    routing = HybridOptimizer(params).routing()
    assert routing == {"mat": "muon", "deep": "muon", "vec": "adamw", "scalar": "adamw"}
    # every parameter appears exactly once
    assert sorted(routing.keys()) == sorted(params.keys())
    # in adamw_only mode everything routes to adamw
    routing_all = HybridOptimizer(params, HybridConfig(mode=ADAMW_ONLY)).routing()
    assert set(routing_all.values()) == {"adamw"}


def test_hybrid_missing_gradient_names_parameter():
    params = {"present": tz.param(np.zeros((2, 2))), "absent": tz.param(np.zeros(2))}
    opt = HybridOptimizer(params)
    params["present"].grad = np.zeros((2, 2))
    with pytest.raises(ContractError, match="absent"):
        opt.step()


def test_default_hyperparams_match_training_settings():
    cfg = HybridConfig()
    assert cfg.lr == 1e-3
    assert cfg.weight_decay == 1e-4


def test_loss_backward_then_step_runs_end_to_end():
    r = np.random.default_rng(11)
    img = tz.param(unit_rows(r, 3, 4))
    txt = tz.param(unit_rows(r, 3, 4))
    lt = tz.param(np.zeros(()))
    pb = tz.param(np.full((), -2.0))
    params = {"img": img, "txt": txt, "lt": lt, "pb": pb}
    opt = HybridOptimizer(params, HybridConfig(lr=1e-2))
    with Tape() as tape:
        loss = sigmoid_pair_loss(img, txt, lt, pb)
        tape.backward(loss)
    before = loss.item()
    opt.step()
    opt.zero_grad()
    after = sigmoid_pair_loss(img, txt, lt, pb).item()
    assert after < before
