import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egmn.distribution import EgmParams, log_pdf, mean
from egmn.objective import (
    LOG_DENSITY_FLOOR,
    AdagradState,
    LossWeights,
    adagrad_step,
    combined_loss,
    entropy_loss,
    mle_loss,
    reg_loss,
)

from conftest import random_params


# plain-math re-implementations, valid for any positive weights (not only the simplex)
# and for complex arguments, so they can be differentiated by the complex-step rule
def _nll(rate, means, variances, w, t):
    p = w[0] * rate * cmath.exp(-rate * t) if t >= 0 else 0.0
    for m, v, wk in zip(means, variances, w[1:]):
        p += wk * cmath.exp(-((t - m) ** 2) / (2 * v)) / cmath.sqrt(2 * math.pi * v)
    return -cmath.log(p)


def _abs_err(rate, means, variances, w, t):
    d = t - (w[0] / rate + sum(wk * m for wk, m in zip(w[1:], means)))
    return d if d.real >= 0 else -d  # |d| away from the kink, analytic in each piece


def _flat(p):
    return [float(p.rate), *map(float, p.means), *map(float, p.variances), *map(float, p.weights)]


def _unflat(v, k):
    return v[0], v[1:1 + k], v[1 + k:1 + 2 * k], v[1 + 2 * k:]


def _fd(fn, p, t, h=1e-6):
    """Central finite differences; good to about 1e-9 absolute."""
    k = p.n_gaussians
    base = _flat(p)
    out = []
    for i in range(len(base)):
        up, dn = list(base), list(base)
        step = h * max(1.0, abs(base[i]))
        up[i] += step
        dn[i] -= step
        out.append((fn(*_unflat(up, k), t) - fn(*_unflat(dn, k), t)).real / (2 * step))
    return np.array(out)


def _cs(fn, p, t, h=1e-30):
    """Complex-step derivative: Im f(x + ih) / h, free of subtractive cancellation."""
    k = p.n_gaussians
    base = _flat(p)
    out = []
    for i in range(len(base)):
        z = [complex(v) for v in base]
        z[i] += 1j * h
        out.append(fn(*_unflat(z, k), t).imag / h)
    return np.array(out)


def _grad_flat(g):
    return np.concatenate([np.atleast_1d(g.rate), g.means, g.variances, g.weights])


def _close(a, n, tol):
    return np.abs(a - n) <= tol * np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)


class TestMle:
    def test_unit_exponential(self):
        loss, _ = mle_loss(EgmParams.exponential(1.0), 0.0)
        assert loss == 0.0

    def test_rate_two(self):
        loss, _ = mle_loss(EgmParams.exponential(2.0), 0.0)
        assert loss == pytest.approx(-math.log(2), abs=1e-15)

    def test_equals_negative_log_pdf(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = random_params(rng, k_max=6)
            t = rng.uniform(0, 150)
            assert mle_loss(p, t)[0] == pytest.approx(-log_pdf(p, t), rel=1e-14, abs=1e-14)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        checked = 0
        for _ in range(40):
            p = random_params(rng, k_max=4, var=(1.0, 400.0))
            t = float(rng.uniform(0.1, 60))
            if -log_pdf(p, t) > 30:  # keep the oracle away from float underflow
                continue
            _, g = mle_loss(p, t)
            a = _grad_flat(g)
            assert np.all(_close(a, _cs(_nll, p, t), 1e-6))
            assert np.all(np.abs(a - _fd(_nll, p, t)) <= 1e-6 * np.maximum(np.abs(a), 1e-3))
            checked += 1
        assert checked >= 20

    def test_underflow_guard(self):
        p = EgmParams(1.0, [5.0], [1e-4], [0.0, 1.0])
        loss, g = mle_loss(p, 100.0)
        assert loss == -LOG_DENSITY_FLOOR
        assert np.all(_grad_flat(g) == 0)
        _, _, terms = combined_loss(p, 100.0, LossWeights(0, 0))
        assert terms["underflow"] == 1

    @given(st.integers(0, 2**32 - 1), st.floats(0, 500))
    @settings(max_examples=100)
    def test_finite_everywhere(self, seed, t):
        p = random_params(np.random.default_rng(seed), k_max=6)
        loss, g = mle_loss(p, t)
        assert np.isfinite(loss) and np.all(np.isfinite(_grad_flat(g)))


class TestEntropy:
    def test_uniform(self):
        loss, _ = entropy_loss(np.full(4, 0.25))
        assert loss == pytest.approx(-math.log(4), abs=1e-15)

    def test_one_hot(self):
        loss, g = entropy_loss([0.0, 1.0, 0.0])
        assert loss == 0.0 and np.all(np.isfinite(g))

    def test_half(self):
        assert entropy_loss([0.5, 0.5])[0] == pytest.approx(-math.log(2), abs=1e-15)

    def test_gradient(self):
        w = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(entropy_loss(w)[1], 1 + np.log(w), rtol=1e-15)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    def test_bounds_and_unique_minimum(self, seed, k):
        w = np.random.default_rng(seed).dirichlet(np.ones(k + 1))
        loss, _ = entropy_loss(w)
        lo = -math.log(k + 1)
        assert lo - 1e-12 <= loss <= 1e-15
        if np.max(np.abs(w - 1 / (k + 1))) > 1e-6:
            assert loss > lo


class TestReg:
    P6 = EgmParams(0.5, [10.0], [1.0], [0.5, 0.5])

    def test_examples(self):
        assert reg_loss(self.P6, 6.0)[0] == 0.0
        assert reg_loss(self.P6, 10.0)[0] == 4.0

    def test_subgradient_at_kink(self):
        _, g = reg_loss(self.P6, 6.0)
        assert np.all(_grad_flat(g) == 0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            p = random_params(rng, k_max=5)
            t = float(rng.uniform(0, 150))
            if abs(t - mean(p)) < 1e-3:
                continue
            _, g = reg_loss(p, t)
            a = _grad_flat(g)
            assert np.all(_close(a, _cs(_abs_err, p, t), 1e-6))
            assert np.all(np.abs(a - _fd(_abs_err, p, t)) <= 1e-6 * np.maximum(np.abs(a), 1e-3))

    def test_rate_term(self):
        p = EgmParams(2.0, [], [], [1.0])
        _, g = reg_loss(p, 0.0)  # mean 0.5 > t, d|t-m|/dlam = -w0/lam^2
        assert g.rate == pytest.approx(-0.25)


class TestCombined:
    def _batch(self, seed=3, n=16, k=3):
        rng = np.random.default_rng(seed)
        ps = [random_params(rng, k=k) for _ in range(n)]
        p = EgmParams(
            np.array([q.rate for q in ps]), np.stack([q.means for q in ps]),
            np.stack([q.variances for q in ps]), np.stack([q.weights for q in ps]),
        )
        return p, rng.uniform(0, 100, n)

    def test_defaults(self):
        lw = LossWeights()
        assert (lw.alpha, lw.beta, lw.mle) == (0.1, 1.0, 1.0)

    def test_mle_only(self):
        p, t = self._batch()
        loss, g, _ = combined_loss(p, t, LossWeights(0.0, 0.0))
        l_mle, g_mle = mle_loss(p, t)
        assert loss == np.mean(l_mle)
        np.testing.assert_array_equal(g.means, g_mle.means / len(t))

    def test_weighted_sum(self):
        p, t = self._batch()
        lw = LossWeights(0.37, 2.5)
        loss, g, terms = combined_loss(p, t, lw)
        by_hand = np.mean(mle_loss(p, t)[0]) + 0.37 * np.mean(entropy_loss(p.weights)[0]) + 2.5 * np.mean(reg_loss(p, t)[0])
        assert abs(loss - by_hand) <= 1e-12
        gw = (mle_loss(p, t)[1].weights + 0.37 * entropy_loss(p.weights)[1] + 2.5 * reg_loss(p, t)[1].weights) / len(t)
        np.testing.assert_allclose(g.weights, gw, rtol=1e-12, atol=1e-15)
        assert terms["loss"] == loss

    def test_drop_mle(self):
        p, t = self._batch()
        loss, _, _ = combined_loss(p, t, LossWeights(0.1, 1.0, mle=0.0))
        assert loss == pytest.approx(0.1 * np.mean(entropy_loss(p.weights)[0]) + np.mean(reg_loss(p, t)[0]), rel=1e-14)

    @pytest.mark.parametrize("kw", [dict(alpha=-1.0), dict(beta=np.nan), dict(mle=np.inf)])
    def test_invalid_weights(self, kw):
        with pytest.raises(ValueError):
            LossWeights(**kw)


class TestAdagrad:
    def test_first_step_self_normalised(self):
        w = {"a": np.array([1.0, 1.0])}
        st_ = AdagradState.for_weights(w)
        adagrad_step(w, {"a": np.array([3.0, -0.002])}, st_, 0.1)
        np.testing.assert_allclose(w["a"], [0.9, 1.1], rtol=1e-5)

    def test_zero_gradient(self):
        w = {"a": np.array([1.0, 2.0])}
        st_ = AdagradState.for_weights(w)
        adagrad_step(w, {"a": np.zeros(2)}, st_, 0.1)
        np.testing.assert_array_equal(w["a"], [1.0, 2.0])
        np.testing.assert_array_equal(st_.accum["a"], 0.0)

    def test_two_steps(self):
        w = {"a": np.zeros(3)}
        st_ = AdagradState.for_weights(w)
        adagrad_step(w, {"a": np.full(3, 3.0)}, st_, 0.1)
        before = w["a"].copy()
        adagrad_step(w, {"a": np.full(3, 4.0)}, st_, 0.1)
        np.testing.assert_allclose(before - w["a"], 0.1 * 4 / (5 + 1e-8), rtol=1e-14)
        assert np.all(np.abs((before - w["a"]) - 0.08) < 1e-9)

    def test_accumulator_monotone_and_deterministic(self):
        rng = np.random.default_rng(0)
        grads = [rng.normal(size=4) for _ in range(10)]
        runs = []
        for _ in range(2):
            w = {"a": np.ones(4)}
            st_ = AdagradState.for_weights(w)
            prev = st_.accum["a"].copy()
            for g in grads:
                adagrad_step(w, {"a": g}, st_, 0.05)
                assert np.all(st_.accum["a"] >= prev)
                prev = st_.accum["a"].copy()
            runs.append(w["a"].tobytes())
        assert runs[0] == runs[1]

    def test_mismatch(self):
        w = {"a": np.zeros(3)}
        st_ = AdagradState.for_weights(w)
        with pytest.raises(ValueError):
            adagrad_step(w, {"a": np.zeros(2)}, st_, 0.1)
        with pytest.raises(ValueError):
            adagrad_step(w, {"b": np.zeros(3)}, st_, 0.1)
        with pytest.raises(ValueError):
            adagrad_step(w, {"a": np.zeros(3)}, st_, 0.0)
