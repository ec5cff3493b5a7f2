import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from simulmma import kernels
from simulmma.alignment import (
    P_MAX,
    P_MIN,
    AlignmentSizeError,
    brute_force_alignment,
    clamp_probabilities,
    empirical_alignment,
    expected_alignment_parallel,
    expected_alignment_recurrent,
    monotonic_alignment,
    parallel_alignment,
    sample_hard_alignment,
    sample_hard_alignments,
)
from simulmma.numerics import Tensor, backward, finite_difference_gradient, mul, relative_error, tsum

EPS = 1e-9


def random_probs(rng, max_t, max_s, max_cells=None):
    while True:
        T, S = int(rng.integers(1, max_t + 1)), int(rng.integers(1, max_s + 1))
        if max_cells is None or T * S <= max_cells:
            return rng.uniform(0.01, 0.99, size=(T, S))


def divisor_typo_recurrence(p):
    """Row recurrence with ``p[i, j]`` in the divisor instead of ``p[i, j-1]``."""
    T, S = p.shape
    alpha = np.zeros((T, S))
    prev = np.zeros(S)
    prev[0] = 1.0
    for i in range(T):
        for j in range(S):
            if j == 0:
                alpha[i, j] = p[i, j] * prev[j]
            else:
                alpha[i, j] = p[i, j] * ((1 - p[i, j - 1]) * alpha[i, j - 1] / p[i, j] + prev[j])
        prev = alpha[i]
    return alpha


prob_matrices = st.integers(1, 4).flatmap(
    lambda T: st.integers(1, 4).flatmap(
        lambda S: arrays(np.float64, (T, S), elements=st.floats(0.01, 0.99))))


class TestRecurrent:
    def test_always_write_collapses_to_first_position(self):
        out = expected_alignment_recurrent(np.full((4, 5), 1.0 - EPS))
        np.testing.assert_allclose(out.alpha[:, 0], 1.0, atol=1e-5)
        np.testing.assert_allclose(out.alpha[:, 1:], 0.0, atol=1e-5)

    def test_two_cell_example(self):
        out = expected_alignment_recurrent([[0.5, 0.5]])
        np.testing.assert_allclose(out.alpha, [[0.5, 0.25]], atol=1e-15)
        np.testing.assert_allclose(out.residual, [0.25], atol=1e-15)

    def test_uniform_2x2_matches_enumeration(self):
        p = np.full((2, 2), 0.5)
        np.testing.assert_allclose(expected_alignment_recurrent(p).alpha, brute_force_alignment(p).alpha,
                                   atol=1e-12)

    def test_first_row_closed_form(self, rng):
        p = rng.uniform(0.05, 0.95, size=(3, 6))
        alpha = expected_alignment_recurrent(p).alpha
        expect = p[0] * np.concatenate([[1.0], np.cumprod(1 - p[0])[:-1]])
        np.testing.assert_allclose(alpha[0], expect, atol=1e-15)

    def test_inputs_are_clamped(self):
        out = expected_alignment_recurrent([[0.0, 1.0]])
        assert np.all(np.isfinite(out.alpha))
        np.testing.assert_allclose(clamp_probabilities([0.0, 1.0]), [P_MIN, P_MAX])


class TestParallel:
    def test_matches_recurrent_on_100_instances(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            p = random_probs(rng, 12, 12)
            worst = max(worst, np.abs(expected_alignment_parallel(p).alpha - expected_alignment_recurrent(p).alpha).max())
        assert worst < 1e-8

    def test_always_write(self):
        out = expected_alignment_parallel(np.full((3, 4), 1.0 - EPS))
        np.testing.assert_allclose(out.alpha[:, 0], 1.0, atol=1e-5)

    def test_two_cell_example(self):
        np.testing.assert_allclose(expected_alignment_parallel([[0.5, 0.5]]).alpha, [[0.5, 0.25]], atol=1e-15)

    def test_long_high_probability_runs_stay_finite(self):
        p = np.full((12, 40), P_MAX)
        p[:, ::7] = P_MIN
        out = expected_alignment_parallel(p)
        assert np.all(np.isfinite(out.alpha))
        np.testing.assert_allclose(out.alpha, expected_alignment_recurrent(p).alpha, atol=1e-8)

    def test_gradient_of_total_mass(self):
        rng = np.random.default_rng(3)
        p0 = rng.uniform(0.05, 0.95, size=(3, 4))
        leaf = Tensor(p0, requires_grad=True)
        backward(tsum(parallel_alignment(leaf)))
        numeric = finite_difference_gradient(lambda x: float(parallel_alignment(Tensor(x)).data.sum()), p0, 1e-6)
        assert relative_error(leaf.grad, numeric) < 1e-4


class TestBruteForce:
    def test_single_certain_cell(self):
        np.testing.assert_allclose(brute_force_alignment([[1.0 - EPS]]).alpha, [[1.0]], atol=1.0 - P_MAX)

    def test_two_cell_example(self):
        out = brute_force_alignment([[0.5, 0.5]])
        assert out.alpha.tolist() == [[0.5, 0.25]]
        assert out.residual.tolist() == [0.25]

    def test_total_probability(self):
        out = brute_force_alignment(np.full((2, 2), 0.5))
        np.testing.assert_allclose(out.alpha.sum(axis=1) + out.residual, 1.0, atol=1e-15)

    def test_size_limit(self):
        with pytest.raises(AlignmentSizeError):
            brute_force_alignment(np.full((4, 5), 0.5))

    def test_recurrent_agrees_on_100_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            p = random_probs(rng, 12, 12, max_cells=12)
            a, b = expected_alignment_recurrent(p), brute_force_alignment(p)
            assert np.abs(a.alpha - b.alpha).max() < 1e-10
            assert np.abs(a.residual - b.residual).max() < 1e-10

    def test_printed_divisor_disagrees_with_enumeration(self):
        """Dividing by p[i, j] breaks agreement with the enumerated process; p[i, j-1] restores it."""
        p = np.array([[0.3, 0.6, 0.8], [0.2, 0.9, 0.4]])
        truth = brute_force_alignment(p).alpha
        assert np.abs(divisor_typo_recurrence(p) - truth).max() > 1e-2
        assert np.abs(expected_alignment_recurrent(p).alpha - truth).max() < 1e-12


class TestConservation:
    @given(prob_matrices)
    @settings(max_examples=80, deadline=None)
    def test_rows_conserve_mass(self, p):
        for out in (expected_alignment_recurrent(p), expected_alignment_parallel(p)):
            assert np.all(out.alpha >= 0.0)
            np.testing.assert_allclose(out.alpha.sum(axis=1) + out.residual, 1.0, atol=1e-9)


class TestSampling:
    def test_always_write(self):
        path = sample_hard_alignment(np.full((5, 4), 1.0 - EPS), rng_seed=0)
        assert path.t.tolist() == [1] * 5

    def test_always_read_forces_last_position(self):
        path = sample_hard_alignment(np.full((5, 4), EPS), rng_seed=0)
        assert path.t.tolist() == [4] * 5
        assert path.forced.all()

    @given(prob_matrices, st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_paths_are_monotone(self, p, seed):
        t = sample_hard_alignment(p, seed).t
        assert np.all(np.diff(t) >= 0)
        assert t.min() >= 1 and t.max() <= p.shape[1]

    def test_monte_carlo_matches_enumeration(self):
        p = np.full((2, 3), 0.5)
        freq = empirical_alignment(p, 200_000, rng_seed=0)
        assert np.abs(freq - brute_force_alignment(p).alpha).max() < 0.01

    def test_seeded(self):
        p = np.full((3, 3), 0.5)
        a, b = sample_hard_alignments(p, 50, 5), sample_hard_alignments(p, 50, 5)
        np.testing.assert_array_equal(a[0], b[0])


class TestFusedAlignment:
    def test_forward_matches_parallel(self, rng):
        p = rng.uniform(0.02, 0.98, size=(2, 3, 5, 7))
        out = monotonic_alignment(Tensor(p)).data
        for idx in np.ndindex(2, 3):
            np.testing.assert_allclose(out[idx], expected_alignment_parallel(p[idx]).alpha, atol=1e-12)

    def test_right_padding_does_not_change_real_positions(self, rng):
        p = rng.uniform(0.05, 0.95, size=(4, 6))
        mask = np.array([1, 1, 1, 1, 0, 0], dtype=float)
        out = monotonic_alignment(Tensor(p[None]), mask[None]).data[0]
        np.testing.assert_allclose(out[:, 4:], 0.0)
        np.testing.assert_allclose(out[:, :4], expected_alignment_recurrent(p[:, :4]).alpha, atol=1e-12)

    def test_adjoint_matches_finite_differences(self, rng):
        p0 = rng.uniform(0.05, 0.95, size=(2, 4, 5))
        mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=float)
        w = rng.normal(size=p0.shape)
        leaf = Tensor(p0, requires_grad=True)
        backward(tsum(mul(monotonic_alignment(leaf, mask), w)))
        numeric = finite_difference_gradient(
            lambda x: float((monotonic_alignment(Tensor(x), mask).data * w).sum()), p0, 1e-6)
        assert relative_error(leaf.grad, numeric) < 1e-6


class TestBackends:
    def test_alignment_forward_identical(self, backend, rng):
        impl, ref = kernels.get_backend(backend), kernels.get_backend("python")
        p = rng.uniform(1e-6, 1 - 1e-6, size=(3, 6, 9))
        mask = np.ones((3, 9))
        mask[1, 5:] = 0.0
        a1, r1 = impl.alignment_forward(p, mask)
        a2, r2 = ref.alignment_forward(p, mask)
        np.testing.assert_allclose(a1, a2, rtol=0, atol=1e-15)
        np.testing.assert_allclose(r1, r2, rtol=0, atol=1e-15)

    def test_alignment_backward_identical(self, backend, rng):
        impl, ref = kernels.get_backend(backend), kernels.get_backend("python")
        p = rng.uniform(0.01, 0.99, size=(2, 5, 4))
        mask = np.ones((2, 4))
        g = rng.normal(size=p.shape)
        _, r = ref.alignment_forward(p, mask)
        np.testing.assert_allclose(impl.alignment_backward(p, mask, r, g), ref.alignment_backward(p, mask, r, g),
                                   rtol=1e-13, atol=1e-15)

    def test_sample_paths_identical(self, backend, rng):
        impl, ref = kernels.get_backend(backend), kernels.get_backend("python")
        p = rng.uniform(0.1, 0.9, size=(4, 5))
        u = rng.random((100, 4, 5))
        t1, f1 = impl.sample_paths(p, u)
        t2, f2 = ref.sample_paths(p, u)
        np.testing.assert_array_equal(t1, t2)
        np.testing.assert_array_equal(np.asarray(f1, dtype=bool), np.asarray(f2, dtype=bool))

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            kernels.get_backend("gpu")
