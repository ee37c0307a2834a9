import numpy as np
import pytest

from figcap import tensor as T
from figcap.tensor import ContractError, DimensionError, GraphStateError, Tensor

from oracles import finite_difference_grad, max_rel_err


def rand_t(rng, *shape, requires_grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


def check_grads(inputs, forward, tol=1e-4):
    """Compare autodiff gradients of sum(forward(*inputs)) against central differences."""
    for x in inputs:
        x.zero_grad()
    loss = T.sum_all(forward())
    T.backward(loss)
    for x in inputs:
        def fd_value():
            with T.no_grad():
                return float(T.sum_all(forward()).data)

        numeric = finite_difference_grad(fd_value, x.data)
        assert x.grad is not None
        assert max_rel_err(x.grad, numeric) < tol


# --- matmul ---------------------------------------------------------------


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(a, b).data, b.data)


def test_matmul_hand_value():
    out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a, b = rand_t(rng, 3, 4), rand_t(rng, 4, 2)
    check_grads([a, b], lambda: T.matmul(a, b))


# --- elementwise ----------------------------------------------------------


def test_sigmoid_at_zero():
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5


def test_relu_clamps_negatives():
    assert T.relu(Tensor([-3.2])).data[0] == 0.0


def test_tanh_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rand_t(rng, 7)
    check_grads([x], lambda: T.tanh(x))


def test_elementwise_dispatch():
    a = Tensor([1.0, -2.0])
    b = Tensor([3.0, 4.0])
    assert T.elementwise("add", a, b).data.tolist() == [4.0, 2.0]
    assert T.elementwise("mul", a, b).data.tolist() == [3.0, -8.0]
    assert T.elementwise("relu", a).data.tolist() == [1.0, 0.0]
    with pytest.raises(ContractError):
        T.elementwise("add", a)
    with pytest.raises(ContractError):
        T.elementwise("pow", a)


def test_binary_ops_reject_mismatched_shapes():
    with pytest.raises(DimensionError):
        T.mul(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))
    with pytest.raises(DimensionError):
        T.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_add_bias_along_last_axis():
    rng = np.random.default_rng(2)
    a, b = rand_t(rng, 4, 3), rand_t(rng, 3)
    out = T.add(a, b)
    assert np.allclose(out.data, a.data + b.data)
    check_grads([a, b], lambda: T.add(a, b))


# --- softmax --------------------------------------------------------------


def test_softmax_uniform_on_constant_input():
    out = T.softmax(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3] * 3, atol=1e-12)


def test_softmax_stable_under_large_inputs():
    out = T.softmax(Tensor([1000.0, 0.0]))
    assert np.all(np.isfinite(out.data))
    assert out.data[0] > 0.999 and out.data[1] < 1e-300 or out.data[1] >= 0


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((5, 9)) * 50)
    p = T.softmax(x).data
    assert np.all(p >= 0) and np.all(p <= 1)
    assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-9


def test_softmax_jvp_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rand_t(rng, 3, 6)
    w = Tensor(rng.standard_normal((3, 6)))  # weights make the JVP non-trivial
    check_grads([x], lambda: T.mul(T.softmax(x), w))


# --- layer_norm -----------------------------------------------------------


def test_layer_norm_constant_row_collapses_to_bias():
    out = T.layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    assert np.allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_statistics():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((6, 32)) * 3 + 1)
    out = T.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    assert np.abs(out.mean(axis=1)).max() < 1e-6
    assert np.abs(out.var(axis=1) - 1.0).max() < 1e-4


def test_layer_norm_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    x, g, b = rand_t(rng, 4, 8), rand_t(rng, 8), rand_t(rng, 8)
    w = Tensor(rng.standard_normal((4, 8)))
    check_grads([x, g, b], lambda: T.mul(T.layer_norm(x, g, b), w))


def test_layer_norm_rejects_bad_eps_and_shapes():
    x = Tensor(np.zeros((2, 4)))
    with pytest.raises(ContractError):
        T.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=0.0)
    with pytest.raises(DimensionError):
        T.layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(4)))


# --- backward -------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.backward(T.sum_all(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = Tensor([1.0, -2.0], requires_grad=True)
    T.backward(T.sum_all(T.mul(x, x)))
    assert x.grad.tolist() == [2.0, -4.0]


def test_backward_rejects_non_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(T.mul(x, x))


def test_backward_rejects_detached_loss():
    with pytest.raises(ContractError):
        T.backward(Tensor(1.0, requires_grad=True))


def test_second_backward_on_same_graph_fails():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = T.sum_all(T.mul(x, x))
    T.backward(loss)
    with pytest.raises(GraphStateError):
        T.backward(loss)


def test_diamond_graph_visits_node_once():
    x = Tensor([0.3, -0.7], requires_grad=True)
    s = T.sigmoid(x)
    T.backward(T.sum_all(T.add(s, s)))
    expected = 2.0 * s.data * (1.0 - s.data)
    assert np.allclose(x.grad, expected, rtol=0, atol=1e-15)


def test_gradient_accumulation_matches_single_path():
    rng = np.random.default_rng(7)
    x = rand_t(rng, 5)
    T.backward(T.sum_all(T.add(x, x)))
    two_path = x.grad.copy()
    y = Tensor(x.data.copy(), requires_grad=True)
    T.backward(T.sum_all(T.scale(y, 2.0)))
    assert np.array_equal(two_path, y.grad)


def test_nodes_only_reference_earlier_nodes():
    x = Tensor([1.0], requires_grad=True)
    a = T.tanh(x)
    b = T.sigmoid(a)
    c = T.add(a, b)
    assert a.node.seq < b.node.seq < c.node.seq


def test_no_grad_suppresses_graph():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = T.tanh(x)
    assert y.node is None and not y.requires_grad


# --- structural ops -------------------------------------------------------


def test_concat_and_slice_round_trip():
    rng = np.random.default_rng(8)
    a, b = rand_t(rng, 2, 3), rand_t(rng, 2, 5)
    cat = T.concat([a, b], axis=1)
    assert cat.shape == (2, 8)
    assert np.array_equal(T.slice_last(cat, 3, 5).data, b.data)
    check_grads([a, b], lambda: T.concat([a, b], axis=1))


def test_transpose_reshape_mean_rows_grads():
    rng = np.random.default_rng(9)
    x = rand_t(rng, 3, 4)
    w = Tensor(rng.standard_normal((4, 3)))
    check_grads([x], lambda: T.mul(T.transpose(x), w))
    check_grads([x], lambda: T.reshape(x, (2, 6)))
    check_grads([x], lambda: T.mean_rows(x))


def test_embedding_lookup_and_scatter_grad():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    out = T.embedding(table, [1, 1, 3])
    assert np.array_equal(out.data, table.data[[1, 1, 3]])
    T.backward(T.sum_all(out))
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    assert np.array_equal(table.grad, expected)
    with pytest.raises(ContractError):
        T.embedding(table, [4])


def test_masked_cross_entropy_matches_hand_value():
    # Uniform scores give exactly log(vocab) per unmasked position.
    scores = Tensor(np.zeros((3, 7)), requires_grad=True)
    loss = T.masked_cross_entropy(scores, [0, 3, 6], [1, 1, 0])
    assert abs(loss.item() - np.log(7)) < 1e-12
    with pytest.raises(ContractError):
        T.masked_cross_entropy(scores, [0, 3, 6], [0, 0, 0])


def test_masked_positions_contribute_zero():
    rng = np.random.default_rng(10)
    z = rng.standard_normal((4, 5))
    full = Tensor(z, requires_grad=True)
    sub = Tensor(z[:2], requires_grad=True)
    masked = T.masked_cross_entropy(full, [1, 2, 0, 0], [1, 1, 0, 0])
    unmasked = T.masked_cross_entropy(sub, [1, 2], [1, 1])
    assert abs(masked.item() - unmasked.item()) < 1e-15
    T.backward(masked)
    assert np.array_equal(full.grad[2:], np.zeros((2, 5)))


# --- invariants across every primitive -------------------------------------


def _trial_specs(rng):
    """One randomly-shaped instance of every differentiable primitive."""
    m, k, n = rng.integers(1, 5, size=3)
    d = int(rng.integers(2, 7))
    rows = int(rng.integers(1, 5))
    specs = []

    a, b = rand_t(rng, m, k), rand_t(rng, k, n)
    specs.append(("matmul", [a, b], lambda a=a, b=b: T.matmul(a, b)))

    x, y = rand_t(rng, rows, d), rand_t(rng, rows, d)
    specs.append(("add", [x, y], lambda x=x, y=y: T.add(x, y)))
    specs.append(("mul", [x, y], lambda x=x, y=y: T.mul(x, y)))

    bias = rand_t(rng, d)
    specs.append(("add_bias", [x, bias], lambda x=x, bias=bias: T.add(x, bias)))

    # Keep relu inputs away from the kink at zero.
    r = Tensor(rng.standard_normal((rows, d)) + np.sign(rng.standard_normal((rows, d))) * 0.1,
               requires_grad=True)
    specs.append(("relu", [r], lambda r=r: T.relu(r)))
    specs.append(("sigmoid", [x], lambda x=x: T.sigmoid(x)))
    specs.append(("tanh", [x], lambda x=x: T.tanh(x)))

    w = Tensor(rng.standard_normal((rows, d)))
    specs.append(("softmax", [x], lambda x=x, w=w: T.mul(T.softmax(x), w)))

    g, be = rand_t(rng, d), rand_t(rng, d)
    specs.append(("layer_norm", [x, g, be],
                  lambda x=x, g=g, be=be, w=w: T.mul(T.layer_norm(x, g, be), w)))

    tab = rand_t(rng, 6, d)
    ids = rng.integers(0, 6, size=rows).tolist()
    specs.append(("embedding", [tab], lambda tab=tab, ids=ids: T.embedding(tab, ids)))

    specs.append(("concat", [x, y], lambda x=x, y=y: T.concat([x, y], axis=0)))
    if d >= 2:
        specs.append(("slice_last", [x], lambda x=x, d=d: T.slice_last(x, 1, d - 1)))
    specs.append(("transpose", [x], lambda x=x: T.transpose(x)))
    specs.append(("reshape", [x], lambda x=x, rows=rows, d=d: T.reshape(x, (d * rows,))))
    specs.append(("mean_rows", [x], lambda x=x: T.mean_rows(x)))
    specs.append(("scale", [x], lambda x=x: T.scale(x, 1.7)))

    z = rand_t(rng, rows, d)
    targets = rng.integers(0, d, size=rows).tolist()
    mask = rng.integers(0, 2, size=rows).tolist()
    if sum(mask) == 0:
        mask[0] = 1
    specs.append(("masked_cross_entropy", [z],
                  lambda z=z, targets=targets, mask=mask:
                  T.masked_cross_entropy(z, targets, mask)))
    return specs


def test_every_primitive_passes_100_gradient_trials():
    rng = np.random.default_rng(1234)
    worst = {}
    for _ in range(100):
        for name, inputs, forward in _trial_specs(rng):
            for xt in inputs:
                xt.zero_grad()
            loss = T.sum_all(forward())
            T.backward(loss)
            for xt in inputs:
                def fd_value(forward=forward):
                    with T.no_grad():
                        return float(T.sum_all(forward()).data)

                numeric = finite_difference_grad(fd_value, xt.data)
                err = max_rel_err(xt.grad, numeric)
                worst[name] = max(worst.get(name, 0.0), err)
    assert max(worst.values()) < 1e-4, worst


def test_forward_primitives_stay_finite_on_extreme_inputs():
    big = Tensor(np.array([[1e3, -1e3, 0.0, 742.0]]))
    for out in (T.sigmoid(big), T.tanh(big), T.relu(big), T.softmax(big)):
        assert np.all(np.isfinite(out.data))
    ln = T.layer_norm(big, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.all(np.isfinite(ln.data))


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        x = rand_t(rng, 4, 4)
        w = rand_t(rng, 4, 4)
        loss = T.sum_all(T.sigmoid(T.matmul(x, w)))
        T.backward(loss)
        return loss.item(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1 == l2
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)
