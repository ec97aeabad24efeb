"""Reverse-mode tape: per-op finite-difference checks and tape semantics."""
import math

import numpy as np
import pytest

from hypanom import autodiff as ad
from hypanom.errors import AutodiffError, DimensionError


def fd_scalar(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


def check_grads(build, params, h=1e-5, tol_abs=1e-5, tol_rel=1e-3):
    """Compare tape gradients of build(params)->scalar against central differences."""

    def run_value(vals):
        tape = ad.Tape()
        nodes = [tape.param(v) for v in vals]
        return float(build(tape, nodes).value)

    tape = ad.Tape()
    nodes = [tape.param(v) for v in params]
    loss = build(tape, nodes)
    grads = tape.backward(loss)
    fd = ad.finite_difference(lambda vals: run_value(vals), params, h=h)
    for node, ref in zip(nodes, fd):
        got = grads[node.index]
        err = np.abs(got - ref)
        bound = np.maximum(tol_abs, tol_rel * np.abs(got))
        assert np.all(err <= bound), f"grad mismatch: {got} vs {ref}"


class TestScalarDerivatives:
    def test_cosh_at_zero(self):
        tape = ad.Tape()
        x = tape.param(0.0)
        tape.backward(ad.cosh(x))
        assert x.grad == pytest.approx(0.0, abs=1e-15)

    def test_asinh_at_zero(self):
        tape = ad.Tape()
        x = tape.param(0.0)
        tape.backward(ad.asinh(x))
        assert x.grad == pytest.approx(1.0, abs=1e-15)

    def test_three_primitive_chain_vs_hand_composite(self):
        # f(x) = exp(sinh(cosh x));  f'(x) = f(x) * cosh(cosh x) * sinh(x)
        x0 = 0.8
        tape = ad.Tape()
        x = tape.param(x0)
        f = ad.exp(ad.sinh(ad.cosh(x)))
        tape.backward(f)
        expected = float(f.value) * math.cosh(math.cosh(x0)) * math.sinh(x0)
        assert x.grad == pytest.approx(expected, abs=1e-10)


class TestTapeSemantics:
    def test_lorentz_quadratic_gradient(self):
        # loss = <w, w>_L; d/dw = 2 * (-w0, w_vec)
        w0 = np.array([0.3, 1.2, -0.7])
        tape = ad.Tape()
        w = tape.param(w0)
        tape.backward(ad.lorentz_inner(w, w))
        expected = 2.0 * np.array([-w0[0], w0[1], w0[2]])
        np.testing.assert_allclose(w.grad, expected, atol=1e-12)

    def test_constant_loss_zero_grads(self):
        tape = ad.Tape()
        w = tape.param(np.array([1.0, 2.0]))
        loss = tape.constant(3.5)
        grads = tape.backward(loss)
        np.testing.assert_array_equal(grads[w.index], np.zeros(2))

    def test_non_scalar_loss_rejected(self):
        tape = ad.Tape()
        w = tape.param(np.array([1.0, 2.0]))
        with pytest.raises(AutodiffError):
            tape.backward(ad.square(w))

    def test_repeated_backward_rejected(self):
        tape = ad.Tape()
        w = tape.param(np.array([1.0, 2.0]))
        loss = ad.sum_(ad.square(w))
        tape.backward(loss)
        with pytest.raises(AutodiffError):
            tape.backward(loss)
        tape.reset_gradients()
        tape.backward(loss)  # allowed again after reset

    def test_fanout_accumulates(self):
        # y = x*x + 3x visits x twice
        tape = ad.Tape()
        x = tape.param(2.0)
        loss = ad.add(ad.mul(x, x), ad.scale(x, 3.0))
        tape.backward(loss)
        assert x.grad == pytest.approx(2 * 2.0 + 3.0)

    def test_cross_tape_rejected(self):
        t1, t2 = ad.Tape(), ad.Tape()
        a = t1.param(1.0)
        b = t2.param(2.0)
        with pytest.raises(AutodiffError):
            ad.add(a, b)

    def test_shape_mismatch_rejected(self):
        tape = ad.Tape()
        a = tape.param(np.ones(3))
        b = tape.param(np.ones((2, 2)))
        with pytest.raises(DimensionError):
            ad.dot(a, b)


# one entry per differentiable primitive: (name, builder, sampler)
def _samplers(rng):
    def vec(lo=-2.0, hi=2.0, n=5):
        return rng.uniform(lo, hi, size=n)

    return {
        "add": (lambda t, p: ad.sum_(ad.add(p[0], p[1])), [vec(), vec()]),
        "sub": (lambda t, p: ad.sum_(ad.sub(p[0], p[1])), [vec(), vec()]),
        "mul": (lambda t, p: ad.sum_(ad.mul(p[0], p[1])), [vec(), vec()]),
        "div": (lambda t, p: ad.sum_(ad.div(p[0], p[1])), [vec(), vec(1.0, 2.0)]),
        "neg": (lambda t, p: ad.sum_(ad.neg(p[0])), [vec()]),
        "square": (lambda t, p: ad.sum_(ad.square(p[0])), [vec()]),
        "exp": (lambda t, p: ad.sum_(ad.exp(p[0])), [vec()]),
        "log": (lambda t, p: ad.sum_(ad.log(p[0])), [vec(0.2, 3.0)]),
        "sqrt": (lambda t, p: ad.sum_(ad.sqrt(p[0])), [vec(0.2, 3.0)]),
        "cosh": (lambda t, p: ad.sum_(ad.cosh(p[0])), [vec()]),
        "sinh": (lambda t, p: ad.sum_(ad.sinh(p[0])), [vec()]),
        "asinh": (lambda t, p: ad.sum_(ad.asinh(p[0])), [vec(-4.0, 4.0)]),
        "sinhc": (lambda t, p: ad.sum_(ad.sinhc(p[0])), [vec(-3.0, 3.0)]),
        "abs_sqrt": (lambda t, p: ad.sum_(ad.abs_sqrt(p[0])), [vec(0.05, 3.0) * rng.choice([-1, 1], 5)]),
        "sigmoid": (lambda t, p: ad.sum_(ad.sigmoid(p[0])), [vec(-6.0, 6.0)]),
        "softplus": (lambda t, p: ad.sum_(ad.softplus(p[0])), [vec(-6.0, 6.0)]),
        "dot": (lambda t, p: ad.dot(p[0], p[1]), [vec(), vec()]),
        "matvec": (lambda t, p: ad.sum_(ad.matvec(p[0], p[1])), [rng.uniform(-1, 1, (3, 5)), vec()]),
        "matmul": (lambda t, p: ad.sum_(ad.matmul(p[0], p[1])), [rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (4, 2))]),
        "concat": (lambda t, p: ad.sum_(ad.square(ad.concat([p[0], p[1]], axis=-1))), [vec(), vec(n=3)]),
        "take_cols": (lambda t, p: ad.sum_(ad.square(ad.take_cols(p[0], 1, 4))), [vec()]),
        "scale_rows": (
            lambda t, p: ad.sum_(ad.scale_rows(p[0], p[1])),
            [rng.uniform(-1, 1, (4, 3)), rng.uniform(0.2, 1.0, 4)],
        ),
        "lorentz_inner": (lambda t, p: ad.sum_(ad.lorentz_inner(p[0], p[1])), [vec(), vec()]),
        "mean": (lambda t, p: ad.mean(ad.square(p[0])), [vec()]),
        "sum_axis": (lambda t, p: ad.sum_(ad.square(ad.sum_(p[0], axis=0))), [rng.uniform(-1, 1, (3, 4))]),
    }


def test_every_primitive_matches_finite_differences():
    rng = np.random.default_rng(42)
    per_op = 50
    for rep in range(per_op):
        for name, (build, params) in _samplers(rng).items():
            check_grads(build, params)


class TestRecordDispatch:
    def test_record_by_name(self):
        tape = ad.Tape()
        x = tape.param(np.array([0.5, -1.0]))
        node = ad.record("cosh", x)
        np.testing.assert_allclose(node.value, np.cosh([0.5, -1.0]))
        tape.backward(ad.record("sum", node))
        np.testing.assert_allclose(x.grad, np.sinh([0.5, -1.0]))

    def test_unknown_kind(self):
        tape = ad.Tape()
        with pytest.raises(AutodiffError):
            ad.record("frobnicate", tape.param(1.0))


class TestCompositeGeometryGrads:
    def test_expmap_origin_grads(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(4, 3))

        def build(t, p):
            c = ad.exp(p[1])  # p[1] is log_c
            z = ad.expmap_origin(p[0], c)
            return ad.sum_(ad.square(z))

        check_grads(build, [v, np.array(0.3)])

    def test_hyperplane_logit_grads_vs_fd(self):
        # gradient wrt w, z, log_c at a random configuration; 1e-5 relative
        rng = np.random.default_rng(1)
        w = np.concatenate([[0.2], rng.normal(size=3)])
        zspace = rng.normal(size=(5, 3))

        def build(t, p):
            c = ad.exp(p[2])
            z = ad.expmap_origin(p[1], c)
            return ad.sum_(ad.hyperplane_logit(z, p[0], c))

        check_grads(build, [w, zspace, np.array(-0.2)], tol_abs=1e-5, tol_rel=1e-5)

    def test_centroid_grads(self):
        rng = np.random.default_rng(2)
        v1 = rng.normal(size=(3, 4))
        v2 = rng.normal(size=(3, 4))

        def build(t, p):
            c = ad.exp(p[2])
            z1 = ad.expmap_origin(p[0], c)
            z2 = ad.expmap_origin(p[1], c)
            w1 = ad.poincare_norm(z1, c)
            w2 = ad.poincare_norm(z2, c)
            fused = ad.lorentzian_centroid([z1, z2], [w1, w2], c)
            return ad.sum_(ad.square(fused))

        check_grads(build, [v1, v2, np.array(0.1)])

    def test_bce_with_logits_grads(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=8)
        labels = np.array([1, 0, 1, 1, 0, 0, 1, 0])

        def build(t, p):
            return ad.bce_with_logits(p[0], labels)

        check_grads(build, [logits])

    def test_bce_single_class_contributes_zero(self):
        tape = ad.Tape()
        logits = tape.param(np.array([0.0, 0.0, 0.0]))
        loss = ad.bce_with_logits(logits, np.array([0, 0, 0]))
        assert float(loss.value) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_full_toy_loss_gradient(self):
        # 2-level, 4-dim toy batch: gradient wrt (W_l, w, log_c) within 1e-4 relative
        rng = np.random.default_rng(4)
        feats = {0: rng.normal(size=(8, 4)), 1: rng.normal(size=(8, 4))}
        labels = (rng.uniform(size=8) < 0.5).astype(int)
        W0 = rng.uniform(-0.5, 0.5, size=(3, 4))
        W1 = rng.uniform(-0.5, 0.5, size=(3, 4))
        wvec = np.concatenate([[0.0], rng.normal(size=3)])

        def build(t, p):
            c = ad.exp(p[3])
            zs, ws = [], []
            for lvl, Wn in ((0, p[0]), (1, p[1])):
                lifted = ad.expmap_origin(t.constant(feats[lvl]), c)
                proj = ad.hyperbolic_linear(lifted, Wn, c)
                zs.append(proj)
                ws.append(ad.poincare_norm(proj, c))
            fused = ad.lorentzian_centroid(zs, ws, c)
            logits = ad.hyperplane_logit(fused, p[2], c)
            return ad.bce_with_logits(logits, labels)

        check_grads(build, [W0, W1, wvec, np.array(0.0)], tol_abs=1e-8, tol_rel=1e-4)
