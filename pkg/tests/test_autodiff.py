"""Tape/backward correctness against central finite differences."""

import numpy as np
import pytest

from semicon import autodiff as ad
from semicon.errors import NumericError, ShapeError


def _fd_gradient(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar numpy function."""
    x = x.astype(np.float64).copy()
    g = np.zeros_like(x)
    for j in range(x.size):
        orig = x.flat[j]
        x.flat[j] = orig + step
        fp = f(x)
        x.flat[j] = orig - step
        fm = f(x)
        x.flat[j] = orig
        g.flat[j] = (fp - fm) / (2 * step)
    return g


# ---------------------------------------------------------------------------
# trivial forward examples
# ---------------------------------------------------------------------------

def test_matmul_identity():
    tape = ad.Tape()
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(tape.const(np.eye(2)), tape.const(x))
    assert np.array_equal(out.data, x)


def test_relu_definition():
    tape = ad.Tape()
    out = ad.relu(tape.const([[-1.0, 0.0, 2.0]]))
    assert np.array_equal(out.data, [[0.0, 0.0, 2.0]])


def test_l2_normalize_hand_case():
    tape = ad.Tape()
    out = ad.l2_normalize_rows(tape.const([[3.0, 4.0]]))
    assert np.allclose(out.data, [[0.6, 0.8]], atol=1e-15)


def test_l2_normalize_zero_row_passthrough():
    tape = ad.Tape()
    out = ad.l2_normalize_rows(tape.const([[0.0, 0.0], [1.0, 0.0]]))
    assert np.array_equal(out.data, [[0.0, 0.0], [1.0, 0.0]])


def test_l2_normalize_unit_norm_property():
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.normal(size=(5, 4)) + 0.1
        tape = ad.Tape()
        out = ad.l2_normalize_rows(tape.const(x))
        norms = np.linalg.norm(out.data, axis=1)
        assert np.all(np.abs(norms - 1.0) < 1e-12)


def test_shape_mismatch_names_primitive():
    tape = ad.Tape()
    a = tape.const(np.ones((2, 3)))
    b = tape.const(np.ones((4, 5)))
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(a, b)
    with pytest.raises(ShapeError, match="add"):
        ad.add(tape.const(np.ones((2, 3))), tape.const(np.ones((3, 2))))
    with pytest.raises(ShapeError, match="row_sum"):
        ad.row_sum(tape.const(np.ones(3)))
    with pytest.raises(ShapeError, match="gather"):
        ad.gather(tape.const(np.ones(3)), np.array([5]))
    with pytest.raises(ShapeError, match="reshape"):
        ad.reshape(tape.const(np.ones(3)), (2, 2))


# ---------------------------------------------------------------------------
# trivial backward examples
# ---------------------------------------------------------------------------

def test_backward_sum_is_ones():
    tape = ad.Tape()
    x = tape.param(np.arange(6.0).reshape(2, 3))
    grads = ad.backward(ad.total_sum(x))
    assert np.array_equal(grads[x.idx], np.ones((2, 3)))


def test_backward_dot_self():
    tape = ad.Tape()
    x = tape.param(np.array([[1.0, 2.0]]))
    root = ad.total_sum(ad.mul(x, x))
    grads = ad.backward(root)
    assert np.allclose(grads[x.idx], [[2.0, 4.0]])


def test_backward_rejects_non_scalar_root():
    tape = ad.Tape()
    x = tape.param(np.ones((2, 2)))
    with pytest.raises(ShapeError, match="scalar"):
        ad.backward(ad.relu(x))


def test_tape_replay_deterministic():
    def run():
        rng = np.random.default_rng(42)
        tape = ad.Tape()
        x = tape.param(rng.normal(size=(4, 3)))
        w = tape.param(rng.normal(size=(3, 2)))
        root = ad.mean(ad.relu(ad.matmul(x, w)))
        grads = ad.backward(root)
        return root.data.copy(), grads[w.idx].copy()

    v1, g1 = run()
    v2, g2 = run()
    assert np.array_equal(v1, v2)
    assert np.array_equal(g1, g2)


# ---------------------------------------------------------------------------
# per-primitive gradient property tests (central finite differences)
# ---------------------------------------------------------------------------

def _case_matmul(rng):
    n, k, m = rng.integers(1, 5, size=3)
    return [rng.normal(size=(n, k)), rng.normal(size=(k, m))], ad.matmul


def _case_add(rng):
    n, m = rng.integers(1, 5, size=2)
    shape_b = [(n, m), (n, 1), (1, m), ()][rng.integers(0, 4)]
    return [rng.normal(size=(n, m)), rng.normal(size=shape_b)], ad.add


def _case_mul(rng):
    n, m = rng.integers(1, 5, size=2)
    shape_b = [(n, m), (n, 1), (1, m)][rng.integers(0, 3)]
    return [rng.normal(size=(n, m)), rng.normal(size=shape_b)], ad.mul


def _case_scale(rng):
    c = float(rng.normal())
    return [rng.normal(size=(3, 2))], lambda a: ad.scale(a, c)


def _case_exp(rng):
    return [rng.normal(size=(2, 3))], ad.exp


def _case_log(rng):
    return [rng.uniform(0.5, 3.0, size=(2, 3))], ad.log


def _case_relu(rng):
    x = rng.normal(size=(3, 4))
    x += np.sign(x) * 1e-2  # keep away from the kink
    return [x], ad.relu


def _case_row_sum(rng):
    return [rng.normal(size=(3, 4))], ad.row_sum


def _case_row_max(rng):
    return [rng.normal(size=(3, 4))], ad.row_max


def _case_l2_normalize(rng):
    x = rng.normal(size=(3, 4))
    x[np.linalg.norm(x, axis=1) < 0.3] += 1.0
    return [x], ad.l2_normalize_rows


def _case_gram(rng):
    return [rng.normal(size=(4, 3))], ad.gram


def _case_gather(rng):
    x = rng.normal(size=(3, 4))
    idx = rng.integers(0, x.size, size=(2, 5))
    return [x], lambda a: ad.gather(a, idx)


def _case_reshape(rng):
    return [rng.normal(size=(3, 4))], lambda a: ad.reshape(a, (2, 6))


def _case_mean(rng):
    return [rng.normal(size=(3, 4))], ad.mean


def _case_total_sum(rng):
    return [rng.normal(size=(3, 4))], ad.total_sum


PRIMITIVE_CASES = {
    "matmul": _case_matmul,
    "add": _case_add,
    "mul": _case_mul,
    "scale": _case_scale,
    "exp": _case_exp,
    "log": _case_log,
    "relu": _case_relu,
    "row_sum": _case_row_sum,
    "row_max": _case_row_max,
    "l2_normalize_rows": _case_l2_normalize,
    "gram": _case_gram,
    "gather": _case_gather,
    "reshape": _case_reshape,
    "mean": _case_mean,
    "total_sum": _case_total_sum,
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(100):
        inputs, op = PRIMITIVE_CASES[name](rng)
        # random linear functional of the output makes the root scalar
        tape = ad.Tape()
        pvars = [tape.param(x) for x in inputs]
        out = op(*pvars)
        w = rng.normal(size=out.data.shape)
        root = ad.total_sum(ad.mul(out, tape.const(w)))
        grads = ad.backward(root)

        for k, x in enumerate(inputs):
            def f(xk, k=k):
                t = ad.Tape()
                vs = [t.const(v) if i != k else t.const(xk)
                      for i, v in enumerate(inputs)]
                return float(ad.total_sum(ad.mul(op(*vs), t.const(w))).data)

            g_fd = _fd_gradient(f, np.asarray(x, dtype=np.float64))
            g_ad = grads.get(pvars[k].idx, np.zeros(np.shape(x)))
            denom = np.maximum(1.0, np.abs(g_fd))
            assert np.max(np.abs(g_ad - g_fd) / denom) < 1e-6, name


# ---------------------------------------------------------------------------
# SGD
# ---------------------------------------------------------------------------

def test_sgd_zero_gradient_is_noop():
    p = [np.array([1.0])]
    ad.sgd_step(p, [np.array([0.0])], ad.SgdConfig(0.1))
    assert np.array_equal(p[0], [1.0])


def test_sgd_single_step():
    p = [np.array([1.0])]
    ad.sgd_step(p, [np.array([1.0])], ad.SgdConfig(0.1))
    assert np.allclose(p[0], [0.9])


def test_sgd_hand_case():
    p = [np.array([2.0, -2.0])]
    ad.sgd_step(p, [np.array([10.0, -10.0])], ad.SgdConfig(0.1))
    assert np.allclose(p[0], [1.0, -1.0])


def test_sgd_mutates_in_place_and_validates():
    p = np.zeros(3)
    out = ad.sgd_step([p], [np.ones(3)], ad.SgdConfig(0.5))
    assert out[0] is p
    with pytest.raises(ShapeError):
        ad.sgd_step([np.zeros(3)], [np.zeros(4)], ad.SgdConfig(0.1))
    with pytest.raises(ShapeError):
        ad.sgd_step([np.zeros(3)], [], ad.SgdConfig(0.1))


def test_sgd_config_rejects_bad_lr():
    with pytest.raises(ValueError):
        ad.SgdConfig(0.0)
    with pytest.raises(ValueError):
        ad.SgdConfig(-1.0)


# ---------------------------------------------------------------------------
# finite_diff_check itself
# ---------------------------------------------------------------------------

def test_finite_diff_check_quadratic():
    def f(pvars):
        return ad.total_sum(ad.mul(pvars[0], pvars[0]))

    err = ad.finite_diff_check(f, [np.array([[3.0]])], step=1e-5)
    assert err < 1e-8


def test_finite_diff_check_constant():
    def f(pvars):
        return ad.total_sum(ad.scale(pvars[0], 0.0))

    err = ad.finite_diff_check(f, [np.array([[1.0, 2.0]])], step=1e-5)
    assert err == 0.0


def test_finite_diff_check_rejects_non_finite():
    def f(pvars):
        return ad.total_sum(ad.log(pvars[0]))

    with np.errstate(invalid="ignore"), pytest.raises(NumericError):
        ad.finite_diff_check(f, [np.array([[-1.0]])])


def test_finite_diff_check_composite():
    rng = np.random.default_rng(3)

    def f(pvars):
        h = ad.relu(ad.matmul(pvars[0], pvars[1]))
        z = ad.l2_normalize_rows(ad.matmul(h, pvars[2]))
        return ad.mean(ad.gram(z))

    params = [rng.normal(size=(3, 4)), rng.normal(size=(4, 5)),
              rng.normal(size=(5, 2))]
    assert ad.finite_diff_check(f, params) < 1e-6
