import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from goyld.errors import ConfigurationError, DomainError
from goyld.noise import (
    CoefficientFamily,
    CovarianceQ,
    JumpLog,
    MarkSpace,
    PiecewiseConstantIntensity,
    audit_hypotheses,
    eval_jump_coefficient,
    eval_sigma,
    growth_load,
    lipschitz_load,
    sample_jump_times,
    sample_wiener_increment,
    sample_wiener_increments,
)
from goyld.rng import JUMPS, WIENER, stream


def family(kind, N=16, s=0.7, seed=0):
    rng = np.random.default_rng(seed)
    q = CovarianceQ(rng.uniform(0.1, 1.0, N))
    marks = MarkSpace(["a", "b", "c"], [0.5, 1.0, 2.0])
    c = 0.3 * (rng.normal(size=(3, N)) + 1j * rng.normal(size=(3, N)))
    return CoefficientFamily(kind, np.full(N, s), c, q, marks)


class TestTypes:
    def test_covariance(self):
        with pytest.raises(ConfigurationError):
            CovarianceQ([0.0, 0.0])
        with pytest.raises(ConfigurationError):
            CovarianceQ([1.0, -1.0])
        q = CovarianceQ([1.0, 0.0])
        assert q.cm_norm_sq([2.0, 0.0]) == 4.0
        assert q.cm_norm_sq([0.0, 1e-3]) == np.inf

    def test_marks(self):
        with pytest.raises(ConfigurationError):
            MarkSpace(["a"], [0.0])
        with pytest.raises(ConfigurationError):
            MarkSpace(["a", "a"], [1.0, 1.0])
        m = MarkSpace(["a", "b"], [1.0, 3.0])
        assert m.total_mass == 4.0 and m.index("b") == 1 and m.index(0) == 0
        with pytest.raises(DomainError):
            m.index("zz")

    def test_family_shapes(self):
        q = CovarianceQ(np.ones(4))
        m = MarkSpace(["a"], [1.0])
        with pytest.raises(ConfigurationError):
            CoefficientFamily("additive", np.ones(3), np.ones((1, 4)), q, m)
        with pytest.raises(ConfigurationError):
            CoefficientFamily("additive", np.ones(4), np.ones((2, 4)), q, m)
        with pytest.raises(ConfigurationError):
            CoefficientFamily("cubic", np.ones(4), np.ones((1, 4)), q, m)


class TestCoefficients:
    def test_additive_constant(self, rng):
        f = family("additive")
        u = rng.normal(size=16) + 0j
        np.testing.assert_array_equal(eval_sigma(0.0, u, f), f.sigma_scale)
        np.testing.assert_array_equal(eval_jump_coefficient(u, "b", f), f.jump_amplitudes[1])

    @pytest.mark.parametrize("kind", ["diagonal_multiplicative", "saturated_multiplicative"])
    def test_multiplicative_vanish_at_zero(self, kind):
        f = family(kind)
        z = np.zeros(16, complex)
        assert not np.any(eval_sigma(0.0, z, f))
        assert not np.any(eval_jump_coefficient(z, "a", f))

    def test_unknown_mark(self):
        with pytest.raises(DomainError):
            eval_jump_coefficient(np.zeros(16), "nope", family("additive"))

    @pytest.mark.parametrize("kind", ["additive", "diagonal_multiplicative", "saturated_multiplicative"])
    def test_audit_passes(self, kind):
        a = audit_hypotheses(family(kind), samples=1000, seed=4)
        assert a.passed and a.K_hat <= a.K and a.L_hat <= a.L

    def test_additive_lipschitz_zero(self):
        a = audit_hypotheses(family("additive"), samples=200, seed=1)
        assert a.L_hat == 0.0

    def test_diagonal_growth_closed_form(self):
        # sigma only: K_hat approaches 2 s^2 max q from below on large states
        N, s = 8, 0.7
        q = CovarianceQ(np.linspace(0.2, 1.0, N))
        m = MarkSpace(["a"], [1.0])
        f = CoefficientFamily("diagonal_multiplicative", np.full(N, s), np.zeros((1, N)), q, m)
        a = audit_hypotheses(f, samples=1000, seed=0)
        bound = 2 * s ** 2 * q.q.max()
        assert a.K_hat <= bound * (1 + 1e-12)
        assert a.K == pytest.approx(bound)

    @given(st.integers(0, 2 ** 31))
    def test_saturated_lipschitz(self, seed):
        f = family("saturated_multiplicative", N=6, seed=seed % 7)
        rng = np.random.default_rng(seed)
        u = rng.normal(size=(50, 6)) + 1j * rng.normal(size=(50, 6))
        v = rng.normal(size=(50, 6)) + 1j * rng.normal(size=(50, 6))
        assert np.all(lipschitz_load(u, v, f) <= f.L * np.sum(np.abs(u - v) ** 2, axis=1) * (1 + 1e-12))
        assert np.all(growth_load(u, f) <= f.K * (1 + np.sum(np.abs(u) ** 2, axis=1)) * (1 + 1e-12))

    def test_marks_mismatch(self):
        with pytest.raises(ConfigurationError):
            audit_hypotheses(family("additive"), MarkSpace(["x"], [1.0]))


class TestWiener:
    def test_zero_q_gives_zero(self):
        dw = sample_wiener_increment(0.1, np.zeros(3), stream(0))
        assert not np.any(dw)

    def test_bad_dt(self):
        with pytest.raises(DomainError):
            sample_wiener_increment(0.0, CovarianceQ([1.0]), stream(0))

    def test_second_moment(self):
        q = CovarianceQ([1.0, 0.25, 0.04])
        dt = 0.01
        dW = sample_wiener_increments(dt, q, 100_000, stream(5, 0, WIENER))
        m = np.abs(dW) ** 2 / dt
        se = m.std(axis=0, ddof=1) / np.sqrt(m.shape[0])
        assert np.all(np.abs(m.mean(axis=0) - 2 * q.q) <= 3 * se)
        assert np.all(np.abs(dW.real.mean(axis=0)) <= 3 * np.sqrt(q.q * dt / m.shape[0]))

    def test_independent_steps(self):
        q = CovarianceQ([1.0])
        dW = sample_wiener_increments(1.0, q, 20_000, stream(6))[:, 0].real
        r = np.corrcoef(dW[:-1], dW[1:])[0, 1]
        assert abs(r) <= 3 / np.sqrt(dW.size)

    def test_determinism(self):
        q = CovarianceQ(np.ones(4))
        a = sample_wiener_increments(0.1, q, 10, stream(9, 3))
        b = sample_wiener_increments(0.1, q, 10, stream(9, 3))
        assert np.array_equal(a, b)


class TestJumps:
    def test_phi_zero(self):
        m = MarkSpace(["a"], [2.0])
        f = PiecewiseConstantIntensity([0, 1], [[0.0]])
        assert len(sample_jump_times(1.0, m, 1.0, f, stream(0))) == 0

    def test_poisson_moments(self):
        m = MarkSpace(["a"], [2.0])
        n = np.array([len(sample_jump_times(1.0, m, 1.0, rng=stream(1, i, JUMPS))) for i in range(100_000)])
        assert abs(n.mean() - 2) <= 3 * np.sqrt(2 / n.size)
        assert abs(n.var(ddof=1) - 2) <= 3 * np.sqrt((2 + 2 * 4) / n.size)

    def test_mark_fractions(self):
        m = MarkSpace(["a", "b"], [1.0, 3.0])
        log = sample_jump_times(500.0, m, 1.0, rng=stream(2))
        frac = np.mean(log.marks == 1)
        assert abs(frac - 0.75) <= 3 * np.sqrt(0.75 * 0.25 / len(log))

    def test_thinning_windows(self):
        m = MarkSpace(["a"], [1.0])
        phi = PiecewiseConstantIntensity([0.0, 0.5, 1.0], [[3.0], [0.5]])
        logs = [sample_jump_times(1.0, m, 2.0, phi, stream(3, i)) for i in range(5000)]
        first = np.array([np.sum(l.times < 0.5) for l in logs])
        second = np.array([np.sum(l.times >= 0.5) for l in logs])
        for counts, mean in ((first, 3.0), (second, 0.5)):
            assert abs(counts.mean() - mean) <= 3 * np.sqrt(mean / counts.size)
            assert abs(counts.var(ddof=1) - mean) <= 3 * np.sqrt((mean + 2 * mean ** 2) / counts.size)

    def test_times_sorted_in_range(self):
        m = MarkSpace(["a", "b"], [1.0, 1.0])
        log = sample_jump_times(3.0, m, 10.0, rng=stream(4))
        assert np.all(np.diff(log.times) > 0) and log.times.min() >= 0 and log.times.max() <= 3.0

    def test_validation(self):
        m = MarkSpace(["a"], [1.0])
        with pytest.raises(DomainError):
            PiecewiseConstantIntensity([0, 1], [[-1.0]])
        with pytest.raises(DomainError):
            sample_jump_times(1.0, m, 0.0, rng=stream(0))
        with pytest.raises(DomainError):
            sample_jump_times(1.0, m, 1.0, lambda t: np.ones((len(t), 1)), stream(0))
        with pytest.raises(DomainError):
            PiecewiseConstantIntensity([0, 1], [[np.inf]])

    def test_determinism_and_csv(self, tmp_path):
        m = MarkSpace(["a", "b"], [1.0, 2.0])
        a = sample_jump_times(2.0, m, 3.0, rng=stream(8, 1, JUMPS))
        b = sample_jump_times(2.0, m, 3.0, rng=stream(8, 1, JUMPS))
        assert np.array_equal(a.times, b.times) and np.array_equal(a.marks, b.marks)
        a.to_csv(tmp_path / "j.csv", m)
        lines = (tmp_path / "j.csv").read_text().splitlines()
        assert lines[0] == "t,mark" and len(lines) == len(a) + 1

    def test_compensated_mean_zero(self):
        # eps * (sum of jumps) - eps * T * sum c lambda, additive c
        m = MarkSpace(["a", "b"], [1.0, 0.5])
        c = np.array([0.4, -1.1])
        eps, T = 0.1, 1.0
        vals = []
        for i in range(10_000):
            log = sample_jump_times(T, m, 1 / eps, rng=stream(10, i, JUMPS))
            vals.append(eps * c[log.marks].sum() - T * np.sum(c * m.weights))
        vals = np.array(vals)
        assert abs(vals.mean()) <= 3 * vals.std(ddof=1) / np.sqrt(vals.size)

    def test_empty_log(self):
        assert len(JumpLog([], [])) == 0
