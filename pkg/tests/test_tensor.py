import numpy as np
import pytest

from rotreg import tensor as T


def gradcheck(build, arrays, rel_tol=1e-6, h=1e-6, seed=0):
    """Compare reverse-mode gradients of sum(w * build(inputs)) with central
    finite differences, for a fixed random weighting w."""
    rng = np.random.default_rng(seed)
    leaves = [T.Tensor(a) for a in arrays]
    out = build(leaves)
    w = rng.normal(size=out.data.shape)
    out.backward(w)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def loss(values):
        fresh = [T.Tensor(v) for v in values]
        return float(np.sum(w * build(fresh).data))

    for i, a in enumerate(arrays):
        numeric = np.zeros_like(a)
        flat = numeric.reshape(-1)
        for j in range(a.size):
            bumped = [v.copy() for v in arrays]
            bumped[i].reshape(-1)[j] += h
            hi = loss(bumped)
            bumped[i].reshape(-1)[j] -= 2.0 * h
            lo = loss(bumped)
            flat[j] = (hi - lo) / (2.0 * h)
        denom = max(np.linalg.norm(numeric), 1e-12)
        rel = np.linalg.norm(analytic[i] - numeric) / denom
        assert rel < rel_tol, f"input {i}: relative gradient error {rel:.3g}"


def test_linear_identity_weights():
    x = np.arange(6.0).reshape(2, 3)
    out = T.linear_forward(T.Tensor(x), T.Tensor(np.eye(3)), T.Tensor(np.zeros(3)))
    assert np.array_equal(out.data, x)


def test_linear_bias_broadcast():
    b = np.array([1.0, -2.0])
    out = T.linear_forward(T.Tensor(np.zeros((4, 3))), T.Tensor(np.zeros((3, 2))), T.Tensor(b))
    assert np.array_equal(out.data, np.tile(b, (4, 1)))


def test_linear_gradcheck():
    rng = np.random.default_rng(1)
    arrays = [rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)]
    gradcheck(lambda t: T.linear_forward(*t), arrays, rel_tol=1e-6)


def test_linear_shape_mismatch():
    with pytest.raises(ValueError):
        T.linear_forward(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 2))), T.Tensor(np.zeros(2)))
    with pytest.raises(ValueError):
        T.linear_forward(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((3, 2))), T.Tensor(np.zeros(3)))


def test_relu_forward_and_grad():
    out = T.relu(T.Tensor([[-1.0, 2.0], [0.5, -3.0]]))
    assert np.array_equal(out.data, [[0.0, 2.0], [0.5, 0.0]])
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 4))
    x += np.sign(x) * 0.1  # keep away from the kink
    gradcheck(lambda t: T.relu(t[0]), [x], rel_tol=1e-6)


def test_reshape_gradcheck():
    rng = np.random.default_rng(3)
    gradcheck(lambda t: T.reshape(t[0], (6, 2)), [rng.normal(size=(3, 4))], rel_tol=1e-9)


def test_subtract_and_concat():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 3, 4))
    assert np.array_equal(T.subtract(T.Tensor(a), T.Tensor(b)).data, a - b)
    assert np.array_equal(
        T.concat_channels(T.Tensor(a), T.Tensor(b)).data, np.concatenate([a, b], axis=-1)
    )
    gradcheck(lambda t: T.subtract(t[0], t[1]), [a, b], rel_tol=1e-9)
    gradcheck(lambda t: T.concat_channels(t[0], t[1]), [a, b], rel_tol=1e-9)


def test_expand_neighbors():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 4))
    out = T.expand_neighbors(T.Tensor(x), 5)
    assert out.data.shape == (2, 3, 5, 4)
    for j in range(5):
        assert np.array_equal(out.data[:, :, j, :], x)
    gradcheck(lambda t: T.expand_neighbors(t[0], 5), [x], rel_tol=1e-9)


def test_gather_points():
    x = np.arange(24.0).reshape(2, 4, 3)
    idx = np.array([[[1, 0], [2, 2], [3, 1], [0, 0]], [[0, 3], [1, 1], [2, 0], [3, 2]]])
    out = T.gather_points(T.Tensor(x), idx)
    assert out.data.shape == (2, 4, 2, 3)
    assert np.array_equal(out.data[0, 0, 0], x[0, 1])
    assert np.array_equal(out.data[1, 0, 1], x[1, 3])
    rng = np.random.default_rng(6)
    gradcheck(lambda t: T.gather_points(t[0], idx), [rng.normal(size=(2, 4, 3))], rel_tol=1e-9)


def test_edge_features_matches_op_chain():
    # fused build must agree with the composition it replaces; gradients can
    # differ only by summation order
    rng = np.random.default_rng(12)
    x = rng.normal(size=(2, 5, 4))
    idx = rng.integers(0, 5, size=(2, 5, 3))
    xf = T.Tensor(x.copy())
    fused = T.edge_features(xf, idx)

    xa = T.Tensor(x.copy())
    center = T.expand_neighbors(xa, 3)
    chain = T.concat_channels(center, T.subtract(T.gather_points(xa, idx), center))
    assert np.array_equal(fused.data, chain.data)

    seed_grad = rng.normal(size=fused.data.shape)
    fused.backward(seed_grad.copy())
    chain.backward(seed_grad.copy())
    np.testing.assert_allclose(xf.grad, xa.grad, rtol=1e-12, atol=1e-13)


def test_edge_features_gradcheck():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(2, 5, 4))
    idx = rng.integers(0, 5, size=(2, 5, 3))
    gradcheck(lambda t: T.edge_features(t[0], idx), [x], rel_tol=1e-9)


def test_max_pool_single_point():
    x = np.arange(6.0).reshape(2, 1, 3)
    out = T.max_pool_points(T.Tensor(x))
    assert np.array_equal(out.data, x[:, 0, :])


def test_max_pool_known_maxima():
    x = np.array([[[1.0, 5.0], [3.0, 2.0], [2.0, 4.0]]])
    out = T.max_pool_points(T.Tensor(x))
    assert np.array_equal(out.data, [[3.0, 5.0]])


def test_max_pool_permutation_invariant():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 16, 8))
    base = T.max_pool_points(T.Tensor(x)).data
    for _ in range(10):
        perm = rng.permutation(16)
        assert np.array_equal(T.max_pool_points(T.Tensor(x[:, perm, :])).data, base)


def test_max_pool_tie_routes_to_lowest_index():
    x = np.zeros((1, 4, 1))
    x[0, 1, 0] = 2.0
    x[0, 3, 0] = 2.0
    xt = T.Tensor(x)
    out = T.max_pool_points(xt)
    out.backward(np.ones_like(out.data))
    expected = np.zeros((1, 4, 1))
    expected[0, 1, 0] = 1.0
    assert np.array_equal(xt.grad, expected)


def test_max_pool_ignores_non_argmax_perturbation():
    x = np.array([[[1.0], [5.0], [2.0]]])
    base = T.max_pool_points(T.Tensor(x)).data.copy()
    x2 = x.copy()
    x2[0, 0, 0] += 0.5
    assert np.array_equal(T.max_pool_points(T.Tensor(x2)).data, base)


def test_max_pool_gradcheck():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 6, 3)) * 3.0  # generic values, no near-ties
    gradcheck(lambda t: T.max_pool_points(t[0]), [x], rel_tol=1e-6)


def test_batchnorm_train_normalizes():
    rng = np.random.default_rng(9)
    x = rng.normal(loc=3.0, scale=2.0, size=(8, 16, 4))
    s = T.init_batchnorm(4)
    out = T.batchnorm_forward(T.Tensor(x), s)
    mean = out.data.mean(axis=(0, 1))
    var = out.data.var(axis=(0, 1))
    assert np.all(np.abs(mean) < 1e-6)
    assert np.all(np.abs(var - 1.0) < 1e-4)


def test_batchnorm_eval_matches_train_given_same_stats():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(6, 5, 3))
    s_train = T.init_batchnorm(3)
    out_train = T.batchnorm_forward(T.Tensor(x), s_train)
    s_eval = T.init_batchnorm(3)
    s_eval.running_mean = x.mean(axis=(0, 1))
    s_eval.running_var = x.var(axis=(0, 1))
    s_eval.mode = "eval"
    out_eval = T.batchnorm_forward(T.Tensor(x), s_eval)
    assert np.max(np.abs(out_train.data - out_eval.data)) < 1e-6


def test_batchnorm_constant_channel_gives_beta():
    x = np.full((4, 2), 7.0)
    s = T.init_batchnorm(2)
    s.beta.data[:] = [1.5, -0.5]
    out = T.batchnorm_forward(T.Tensor(x), s)
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data, np.tile([1.5, -0.5], (4, 1)), atol=1e-12)


def test_batchnorm_rejects_single_row_training():
    s = T.init_batchnorm(3)
    with pytest.raises(ValueError):
        T.batchnorm_forward(T.Tensor(np.zeros((1, 3))), s)


def test_batchnorm_updates_running_stats():
    rng = np.random.default_rng(11)
    x = rng.normal(loc=2.0, size=(16, 3))
    s = T.init_batchnorm(3)
    T.batchnorm_forward(T.Tensor(x), s)
    expected_mean = 0.1 * x.mean(axis=0)
    expected_var = 0.9 * 1.0 + 0.1 * x.var(axis=0)
    np.testing.assert_allclose(s.running_mean, expected_mean, atol=1e-12)
    np.testing.assert_allclose(s.running_var, expected_var, atol=1e-12)


def test_batchnorm_gradcheck_train_mode():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(4, 5, 3))
    gamma = rng.normal(size=3)
    beta = rng.normal(size=3)

    def build(t):
        s = T.init_batchnorm(3)
        s.gamma, s.beta = t[1], t[2]
        return T.batchnorm_forward(t[0], s)

    gradcheck(build, [x, gamma, beta], rel_tol=1e-5)


def test_batchnorm_gradcheck_eval_mode():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(4, 3))
    gamma = rng.normal(size=3)
    beta = rng.normal(size=3)
    running_mean = rng.normal(size=3)
    running_var = rng.uniform(0.5, 2.0, size=3)

    def build(t):
        s = T.init_batchnorm(3)
        s.gamma, s.beta = t[1], t[2]
        s.running_mean, s.running_var = running_mean, running_var
        s.mode = "eval"
        return T.batchnorm_forward(t[0], s)

    gradcheck(build, [x, gamma, beta], rel_tol=1e-6)


def test_shared_mlp_weight_sharing():
    rng = np.random.default_rng(14)
    w = T.Tensor(rng.normal(size=(3, 4)))
    b = T.Tensor(rng.normal(size=4))
    x = rng.normal(size=(1, 5, 3))
    x[0, 2] = x[0, 0]  # duplicated point
    out = T.shared_mlp_forward(T.Tensor(x), [(w, b, None)])
    assert np.array_equal(out.data[0, 2], out.data[0, 0])


def test_shared_mlp_permutation_equivariance():
    rng = np.random.default_rng(15)
    w = T.Tensor(rng.normal(size=(3, 4)))
    b = T.Tensor(rng.normal(size=4))
    x = rng.normal(size=(2, 6, 3))
    base = T.shared_mlp_forward(T.Tensor(x), [(w, b, None)]).data
    perm = rng.permutation(6)
    permuted = T.shared_mlp_forward(T.Tensor(x[:, perm, :]), [(w, b, None)]).data
    assert np.array_equal(permuted, base[:, perm, :])


def test_shared_mlp_batchnorm_identity_config():
    rng = np.random.default_rng(16)
    w = T.Tensor(rng.normal(size=(3, 4)))
    b = T.Tensor(rng.normal(size=4))
    x = rng.normal(size=(2, 6, 3))
    s = T.init_batchnorm(4)
    s.mode = "eval"
    s.eps = 0.0
    with_bn = T.shared_mlp_forward(T.Tensor(x), [(w, b, s)]).data
    plain = T.shared_mlp_forward(T.Tensor(x), [(w, b, None)]).data
    np.testing.assert_allclose(with_bn, plain, atol=1e-12)


def test_adam_zero_gradient_keeps_params():
    p = T.Tensor(np.array([1.0, -2.0, 3.0]))
    state = T.init_adam([p])
    T.adam_step([p], [np.zeros(3)], state)
    assert np.array_equal(p.data, [1.0, -2.0, 3.0])
    assert state.step == 1
    T.adam_step([p], [None], state)
    assert np.array_equal(p.data, [1.0, -2.0, 3.0])
    assert state.step == 2


def test_adam_first_step_magnitude():
    for g in [1.0, -4.0, 0.25]:
        p = T.Tensor(np.array([0.0]))
        state = T.init_adam([p], lr=0.008)
        T.adam_step([p], [np.array([g])], state)
        assert abs(abs(p.data[0]) - 0.008) < 1e-6
        assert np.sign(p.data[0]) == -np.sign(g)


def test_adam_elementwise_rule():
    rng = np.random.default_rng(17)
    p = T.Tensor(np.array([0.7, 0.7]))
    state = T.init_adam([p])
    for _ in range(10):
        g = rng.normal()
        T.adam_step([p], [np.array([g, g])], state)
    assert p.data[0] == p.data[1]


def test_adam_shape_mismatch():
    p = T.Tensor(np.zeros(3))
    state = T.init_adam([p])
    with pytest.raises(ValueError):
        T.adam_step([p], [np.zeros(4)], state)


def test_adam_trajectory_deterministic():
    def run():
        rng = np.random.default_rng(18)
        p = T.Tensor(rng.normal(size=(4, 3)))
        state = T.init_adam([p], lr=0.01)
        for _ in range(25):
            T.adam_step([p], [rng.normal(size=(4, 3))], state)
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_backward_keeps_leaf_grads():
    x = T.Tensor(np.array([[1.0, -2.0], [3.0, 4.0]]))
    w = T.Tensor(np.eye(2))
    b = T.Tensor(np.zeros(2))
    out = T.relu(T.linear_forward(x, w, b))
    out.backward(np.ones((2, 2)))
    assert x.grad is not None and w.grad is not None and b.grad is not None
    assert np.array_equal(x.grad, [[1.0, 0.0], [1.0, 1.0]])
