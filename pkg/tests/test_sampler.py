import numpy as np
import pytest
from scipy import stats

from colonylearn.sampler import (
    RT,
    SD,
    SeededRng,
    resample_per_iteration,
    sample_opposite_rt,
    sample_opposite_sd,
    sample_opposite_sd_many,
)
from colonylearn.taxonomy import builtin_prior, load_prior

TWO_CLASS = load_prior("classes: 2\na: 0\nb: 1\n")


class TestSeededRng:
    def test_same_seed_same_stream(self):
        a = SeededRng(42)
        b = SeededRng(42)
        assert [a.randint_below(10) for _ in range(100)] == [
            b.randint_below(10) for _ in range(100)
        ]

    def test_different_seeds_differ(self):
        a = [SeededRng(1).randint_below(1000) for _ in range(20)]
        b = [SeededRng(2).randint_below(1000) for _ in range(20)]
        assert a != b

    def test_bulk_equals_scalar_stream(self):
        # the vectorized path must consume the word stream identically
        for n in (1, 2, 6, 7, 100):
            scalar_rng = SeededRng(5)
            bulk_rng = SeededRng(5)
            scalar = [scalar_rng.randint_below(n) for _ in range(5000)]
            bulk = bulk_rng.randint_below_many(n, 5000)
            np.testing.assert_array_equal(scalar, bulk)
            # and the streams stay aligned afterwards
            assert scalar_rng.randint_below(n) == bulk_rng.randint_below(n)

    def test_bulk_interleaved_with_scalar(self):
        ref = SeededRng(9)
        mix = SeededRng(9)
        expected = [ref.randint_below(6) for _ in range(30)]
        got = [mix.randint_below(6) for _ in range(10)]
        got += list(mix.randint_below_many(6, 15))
        got += [mix.randint_below(6) for _ in range(5)]
        assert got == expected

    def test_bulk_across_buffer_refill(self):
        a, b = SeededRng(3), SeededRng(3)
        big = 70_000  # larger than one word block
        np.testing.assert_array_equal(
            a.randint_below_many(5, big), b.randint_below_many(5, big)
        )

    def test_spawn_independent(self):
        root = SeededRng(7)
        child = root.spawn(1)
        other = root.spawn(2)
        assert [child.randint_below(100) for _ in range(10)] != [
            other.randint_below(100) for _ in range(10)
        ]
        # spawning does not perturb the parent stream
        fresh = SeededRng(7)
        assert root.randint_below(100) == fresh.randint_below(100)

    def test_bad_bound(self):
        with pytest.raises(ValueError):
            SeededRng(0).randint_below(0)

    def test_float_draws_deterministic(self):
        np.testing.assert_array_equal(SeededRng(4).random(8), SeededRng(4).random(8))
        np.testing.assert_array_equal(
            SeededRng(4).permutation(10), SeededRng(4).permutation(10)
        )


class TestSdSampling:
    def test_never_in_own_colony(self):
        prior = builtin_prior("cifar10")
        rng = SeededRng(0)
        for _ in range(2000):
            y = rng.randint_below(10)
            drawn = sample_opposite_sd(prior, y, rng)
            assert drawn.mode == SD
            assert prior.colony_index_of(drawn.value) != prior.colony_index_of(y)

    def test_singleton_pool_forced(self):
        rng = SeededRng(1)
        for _ in range(20):
            assert sample_opposite_sd(TWO_CLASS, 0, rng).value == 1

    def test_uniform_over_pool_chi_square(self):
        # Monte-Carlo oracle: 1e6 draws for a fixed label match the uniform
        # law over the 7 non-shoe classes
        prior = builtin_prior("fashion-mnist")
        rng = SeededRng(123)
        draws = sample_opposite_sd_many(prior, 7, rng, 1_000_000)  # sneaker
        pool = prior.opposite_pool_array(7)
        assert pool.size == 7
        counts = np.bincount(draws, minlength=10)[pool]
        assert counts.sum() == 1_000_000
        _, p_value = stats.chisquare(counts)
        assert p_value > 0.01

    def test_bulk_matches_scalar_draws(self):
        prior = builtin_prior("cifar10")
        a, b = SeededRng(6), SeededRng(6)
        bulk = sample_opposite_sd_many(prior, 3, a, 500)
        scalar = [sample_opposite_sd(prior, 3, b).value for _ in range(500)]
        np.testing.assert_array_equal(bulk, scalar)


class TestRtSampling:
    def test_never_equal_true_label(self):
        rng = SeededRng(2)
        for _ in range(2000):
            y = rng.randint_below(10)
            drawn = sample_opposite_rt(10, y, rng)
            assert drawn.mode == RT
            assert drawn.value != y
            assert 0 <= drawn.value < 10

    def test_two_class_forced(self):
        rng = SeededRng(3)
        assert sample_opposite_rt(2, 1, rng).value == 0

    def test_uniform_over_others(self):
        rng = SeededRng(77)
        vals = [sample_opposite_rt(100, 0, rng).value for _ in range(1_000_000)]
        freq = np.bincount(vals, minlength=100)[1:] / 1_000_000
        assert np.abs(freq - 1 / 99).max() < 0.002

    def test_rejects_tiny_class_count(self):
        with pytest.raises(ValueError):
            sample_opposite_rt(1, 0, SeededRng(0))


class TestResamplePerIteration:
    def test_order_aligned_modes(self):
        prior = builtin_prior("cifar10")
        rng = SeededRng(5)
        batch = [3, 3, 9]  # cat, cat, truck
        out = resample_per_iteration(batch, prior, rng, SD)
        assert len(out) == 3
        assert out[0].value in (0, 1, 8, 9)
        assert out[1].value in (0, 1, 8, 9)
        assert out[2].value in (2, 3, 4, 5, 6, 7)

    def test_deterministic_repeat(self):
        prior = builtin_prior("fashion-mnist")
        batch = list(np.random.default_rng(0).integers(0, 10, size=64))
        first = [o.value for o in resample_per_iteration(batch, prior, SeededRng(9), SD)]
        second = [o.value for o in resample_per_iteration(batch, prior, SeededRng(9), SD)]
        assert first == second

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            resample_per_iteration([], builtin_prior("cifar10"), SeededRng(0), SD)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            resample_per_iteration([0], builtin_prior("cifar10"), SeededRng(0), "XX")

    def test_rt_mode_uses_class_count(self):
        prior = load_prior("classes: 3\na: 0\nb: 1,2\n")
        rng = SeededRng(4)
        out = resample_per_iteration([1] * 50, prior, rng, RT)
        values = {o.value for o in out}
        assert 1 not in values
        assert values <= {0, 2}
