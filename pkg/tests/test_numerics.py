import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simreal.numerics import (
    GRL,
    SGD,
    Activation,
    Adam,
    Dense,
    Network,
    NonFiniteError,
    StaleTapeError,
    backward,
    forward,
    gradient_check,
    load_checkpoint,
    make_optimizer,
    make_rng,
    save_checkpoint,
    step,
)


def half_sq(out):
    return 0.5 * float(np.sum(out**2)), out


def test_grl_forward_is_identity():
    y, _ = forward(Network([GRL(5.0)]), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(y, [[1.0, 2.0, 3.0]])


def test_identity_dense():
    x = np.array([[0.3, -1.2, 4.0]])
    y, _ = forward(Network([Dense(np.eye(3), np.zeros(3))]), x)
    np.testing.assert_array_equal(y, x)


def test_scalar_dense():
    y, _ = forward(Network([Dense([[2.0]], [1.0])]), [3.0])
    assert y.tolist() == [[7.0]]


def test_shape_mismatch():
    with pytest.raises(ValueError):
        forward(Network([Dense(np.ones((2, 3)), np.zeros(2))]), np.ones((1, 4)))
    with pytest.raises(ValueError):
        Network([Dense(np.ones((2, 3)), np.zeros(2)), Dense(np.ones((1, 3)), np.zeros(1))])


@pytest.mark.parametrize("lam,expect", [(1.0, -1.0), (0.0, 0.0), (2.5, -2.5)])
def test_grl_backward(lam, expect):
    net = Network([GRL(lam)])
    g = np.array([[1.0, -2.0, 0.5]])
    _, tape = forward(net, np.zeros((1, 3)))
    gin, pg = backward(net, tape, g)
    np.testing.assert_array_equal(gin, expect * g)
    assert pg == []


def test_grl_rejects_negative():
    with pytest.raises(ValueError):
        GRL(-0.1)


def test_two_layer_tanh_matches_finite_differences():
    rng = make_rng(3)
    net = Network.mlp([5, 7, 3], "tanh", rng)
    x = rng.normal(size=(4, 5))
    assert gradient_check(net, half_sq, x, 1e-5) < 1e-6


def test_linear_quadratic_check_is_tight():
    rng = make_rng(4)
    net = Network([Dense.init(6, 2, rng)])
    x = rng.normal(size=(3, 6))
    assert gradient_check(net, half_sq, x, 1e-5) < 1e-9


def test_zero_parameter_network():
    assert gradient_check(Network([Activation("tanh"), GRL(0.5)]), half_sq, np.ones((1, 2))) == 0.0


def test_gradient_check_rejects_bad_eps_and_nonfinite_loss():
    net = Network([Dense.init(2, 1, make_rng(0))])
    with pytest.raises(ValueError):
        gradient_check(net, half_sq, np.ones((1, 2)), eps=0.0)
    with pytest.raises(ValueError):
        gradient_check(net, half_sq, np.ones((1, 2)), eps=1e-2)
    with pytest.raises(NonFiniteError):
        gradient_check(net, lambda out: (math.inf, out), np.ones((1, 2)))


def test_grl_against_negated_scaled_objective():
    # network A . GRL(0.5) . B; B's gradients must descend -0.5 * L
    rng = make_rng(5)
    B = Network.mlp([4, 6], "tanh", rng, final_activation="tanh")
    A = Network.mlp([6, 3, 1], "tanh", rng)
    lam = 0.5
    full = Network(B.layers + [GRL(lam)] + A.layers)
    x = rng.normal(size=(3, 4))
    out, tape = forward(full, x)
    _, grads = backward(full, tape, half_sq(out)[1])
    upstream = grads[: len(B.params())]

    def scaled_loss():
        return -lam * half_sq(forward(full, x)[0])[0]

    worst = 0.0
    eps = 1e-5
    for p, g in zip(B.params(), upstream):
        flat, gf = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            o = flat[i]
            flat[i] = o + eps
            up = scaled_loss()
            flat[i] = o - eps
            down = scaled_loss()
            flat[i] = o
            num = (up - down) / (2 * eps)
            worst = max(worst, abs(gf[i] - num) / max(abs(gf[i]), abs(num), 1e-12))
    assert worst < 1e-6


def _split_grads(lam, seed):
    rng = make_rng(seed)
    B = Network.mlp([3, 5, 4], "tanh", rng)
    A = Network.mlp([4, 4, 2], "relu", rng, final_activation="sigmoid")
    x = rng.normal(size=(5, 3))
    with_grl = Network(B.layers + [GRL(lam)] + A.layers)
    plain = Network(B.layers + A.layers)
    out1, t1 = forward(with_grl, x)
    out2, t2 = forward(plain, x)
    np.testing.assert_array_equal(out1, out2)
    _, g1 = backward(with_grl, t1, half_sq(out1)[1])
    _, g2 = backward(plain, t2, half_sq(out2)[1])
    nb = len(B.params())
    return g1[:nb], g2[:nb], g1[nb:], g2[nb:]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), lam=st.sampled_from([0.0, 0.25, 0.5, 1.0, 2.0, 4.0]))
def test_grl_equivalence_exact(seed, lam):
    # power-of-two strengths commute exactly with every float multiply
    b_grl, b_plain, a_grl, a_plain = _split_grads(lam, seed)
    for g1, g2 in zip(a_grl, a_plain):
        np.testing.assert_array_equal(g1, g2)
    for g1, g2 in zip(b_grl, b_plain):
        np.testing.assert_array_equal(g1, -lam * g2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), lam=st.floats(0.0, 10.0))
def test_grl_equivalence_any_strength(seed, lam):
    b_grl, b_plain, a_grl, a_plain = _split_grads(lam, seed)
    for g1, g2 in zip(a_grl, a_plain):
        np.testing.assert_array_equal(g1, g2)
    for g1, g2 in zip(b_grl, b_plain):
        np.testing.assert_allclose(g1, -lam * g2, rtol=1e-12, atol=1e-15 * (1 + np.abs(g2).max()))


def test_gradient_check_over_random_draws():
    # draw stream 2024 hits a coordinate with |grad| ~ 8e-9, below what central
    # differences resolve at eps=1e-5; see test_near_zero_gradient_limit
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(100):
        depth = int(rng.integers(1, 4))
        sizes = [int(s) for s in rng.integers(1, 6, size=depth + 1)]
        act = ["tanh", "sigmoid"][i % 2]
        grl = float(rng.uniform(0, 2)) if i % 4 == 0 else None
        net = Network.mlp(sizes, act, make_rng(i), grl=grl)
        x = rng.normal(size=(int(rng.integers(1, 4)), sizes[0]))
        worst = max(worst, gradient_check(net, half_sq, x, 1e-5))
    assert worst < 1e-5


def test_near_zero_gradient_limit():
    rng = make_rng(79)
    net = Network.mlp([4, 4, 5, 3], "sigmoid", rng)
    x = np.random.default_rng(0).normal(size=(2, 4))
    out, tape = forward(net, x)
    _, grads = backward(net, tape, out)
    # absolute agreement still holds where relative error is ill-conditioned
    for p, g in zip(net.params(), grads):
        flat = p.reshape(-1)
        for i in range(flat.size):
            o = flat[i]
            flat[i] = o + 1e-5
            up = half_sq(net(x))[0]
            flat[i] = o - 1e-5
            down = half_sq(net(x))[0]
            flat[i] = o
            assert abs((up - down) / 2e-5 - g.reshape(-1)[i]) < 1e-9


def test_relu_gradient_away_from_kink():
    net = Network([Dense([[1.0, -2.0], [0.5, 1.0]], [0.1, -0.2]), Activation("relu"), Dense([[1.5, -1.0]], [0.0])])
    x = np.array([[1.0, 0.3], [-0.4, 2.0]])
    assert gradient_check(net, half_sq, x, 1e-6) < 1e-8


def test_init_deterministic_and_bounded():
    a = Network.mlp([10, 20, 1], "tanh", make_rng(9))
    b = Network.mlp([10, 20, 1], "tanh", make_rng(9))
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    W = a.layers[0].W
    assert np.abs(W).max() <= math.sqrt(6 / 30)
    assert np.all(a.layers[0].b == 0)
    assert a.parameter_count() == 10 * 20 + 20 + 20 + 1


def test_make_rng_is_pcg64():
    assert isinstance(make_rng(1).bit_generator, np.random.PCG64)
    assert make_rng(2**64 - 1).integers(0, 2**62) == make_rng(-1).integers(0, 2**62)


def test_stale_tape():
    net = Network.mlp([2, 2], None, make_rng(0))
    _, tape = forward(net, np.ones((1, 2)))
    _, grads = backward(net, tape, np.ones((1, 2)))
    SGD(0.1).step(net.params(), grads)
    net.touch()
    with pytest.raises(StaleTapeError):
        backward(net, tape, np.ones((1, 2)))
    other = net.copy()
    _, t2 = forward(net, np.ones((1, 2)))
    with pytest.raises(StaleTapeError):
        backward(other, t2, np.ones((1, 2)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_forward():
    net = Network([Dense([[1e308]], [0.0]), Dense([[10.0]], [0.0])])
    with pytest.raises(NonFiniteError):
        forward(net, [[10.0]])


def test_sgd_step():
    theta = np.array([1.0])
    step(SGD(lr=0.1), [theta], [np.array([2.0])])
    assert theta[0] == pytest.approx(0.8)


def test_sgd_momentum_accumulates():
    theta = np.array([0.0])
    opt = SGD(lr=1.0, momentum=0.5)
    opt.step([theta], [np.array([1.0])])
    opt.step([theta], [np.array([1.0])])
    assert theta[0] == pytest.approx(-2.5)


@pytest.mark.parametrize("g", [3.0, -0.002, 1e4])
def test_adam_first_step_is_signed_lr(g):
    theta = np.array([0.5])
    Adam(lr=0.01).step([theta], [np.array([g])])
    assert theta[0] - 0.5 == pytest.approx(-0.01 * math.copysign(1, g), rel=1e-5)


def test_zero_gradient_leaves_params():
    for opt in (SGD(0.1, 0.9), Adam(0.1)):
        theta = np.array([1.5, -2.0])
        opt.step([theta], [np.zeros(2)])
        np.testing.assert_array_equal(theta, [1.5, -2.0])


def test_optimizer_shape_mismatch():
    with pytest.raises(ValueError):
        SGD().step([np.zeros(2)], [np.zeros(3)])
    with pytest.raises(ValueError):
        Adam().step([np.zeros(2)], [])


def test_make_optimizer():
    assert isinstance(make_optimizer({"kind": "sgd", "lr": 0.5}), SGD)
    opt = make_optimizer({"kind": "adam", "lr": 0.5, "beta1": 0.8})
    assert isinstance(opt, Adam) and opt.beta1 == 0.8
    with pytest.raises(ValueError):
        make_optimizer({"kind": "rmsprop"})


def test_checkpoint_round_trip(tmp_path):
    rng = make_rng(8)
    nets = {"a": Network.mlp([3, 4, 1], "tanh", rng, final_activation="sigmoid"),
            "b": Network.mlp([4, 2], "relu", rng, grl=0.3)}
    path = tmp_path / "ck.json"
    save_checkpoint(path, nets, {"note": 1})
    back, meta = load_checkpoint(path)
    assert meta == {"note": 1}
    x = rng.normal(size=(2, 3))
    np.testing.assert_array_equal(back["a"](x), nets["a"](x))
    assert isinstance(back["b"].layers[0], GRL) and back["b"].layers[0].lam == 0.3
    first = path.read_bytes()
    save_checkpoint(path, back, meta)
    assert path.read_bytes() == first


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other", "version": 1}')
    with pytest.raises(ValueError):
        load_checkpoint(p)
