"""Tests for the path engine.

Covers grid construction, seeded sampling, bridge refinement,
antithetic pairing and ensemble indexing.
"""

import math

import numpy as np
import pytest
from scipy import stats

from loctime.errors import UsageError
from loctime.models import SeedSpec
from loctime.path_engine import (
    antithetic,
    ensemble_path,
    make_grid,
    refine,
    sample_path,
    subsample,
    truncate,
)


@pytest.fixture
def seed():
    return SeedSpec(master_seed=1)


@pytest.fixture
def path(seed):
    return sample_path(seed, 0, make_grid(1.0, 256))


class TestMakeGrid:
    def test_step_and_horizon(self):
        grid = make_grid(1.0, 4)
        assert grid.step == 0.25
        assert grid.horizon == 1.0

    def test_rejects_non_positive_horizon(self):
        with pytest.raises(UsageError):
            make_grid(0.0, 4)

    def test_rejects_single_step(self):
        with pytest.raises(UsageError):
            make_grid(1.0, 1)


class TestSamplePath:
    def test_deterministic(self, seed):
        grid = make_grid(1.0, 4)
        a = sample_path(seed, 0, grid)
        b = sample_path(seed, 0, grid)
        assert np.array_equal(a.values, b.values)

    def test_starts_at_zero(self, path):
        assert path.values[0] == 0.0
        assert path.values.shape == (257,)

    def test_indices_give_different_paths(self, seed):
        grid = make_grid(1.0, 16)
        assert not np.array_equal(sample_path(seed, 0, grid).values, sample_path(seed, 1, grid).values)

    def test_values_are_read_only(self, path):
        with pytest.raises(ValueError):
            path.values[1] = 0.0

    def test_rejects_negative_index(self, seed):
        with pytest.raises(UsageError):
            sample_path(seed, -1, make_grid(1.0, 4))

    def test_endpoint_moments(self, seed):
        grid = make_grid(1.0, 2)
        ends = np.array([sample_path(seed, i, grid).values[-1] for i in range(4000)])
        assert abs(ends.mean()) <= 4.0 / math.sqrt(ends.size)
        assert ends.var(ddof=1) == pytest.approx(1.0, abs=0.1)

    def test_standardized_increments_look_gaussian(self, seed):
        grid = make_grid(1.0, 100_000)
        z = sample_path(seed, 3, grid).increments() / math.sqrt(grid.step)
        result = stats.kstest(z, "norm")
        assert result.statistic <= 2.0 / math.sqrt(z.size)


class TestRefine:
    def test_keeps_coarse_values(self, path):
        fine = refine(path, 4)
        assert np.array_equal(fine.values[::4], path.values)

    def test_subsample_restores_original(self, path):
        assert np.array_equal(subsample(refine(path, 2), 2).values, path.values)

    def test_size(self, path):
        fine = refine(path, 2)
        assert fine.n_steps == 2 * path.n_steps
        assert fine.grid.step == path.grid.step / 2
        assert fine.refine_level == 1

    def test_deterministic(self, path):
        assert np.array_equal(refine(path, 2).values, refine(path, 2).values)

    def test_two_levels_extend_one(self, path):
        once = refine(path, 2)
        twice = refine(path, 4)
        assert np.array_equal(twice.values[::2], once.values)

    @pytest.mark.parametrize("factor", [1, 3, 6, 0])
    def test_rejects_non_power_of_two(self, path, factor):
        with pytest.raises(UsageError):
            refine(path, factor)

    def test_bridge_increment_variance(self, seed):
        coarse = sample_path(seed, 5, make_grid(1.0, 50_000))
        fine = refine(coarse, 4)
        increments = fine.increments()
        assert increments.var() == pytest.approx(fine.grid.step, rel=0.03)

    def test_commutes_with_antithetic(self, path):
        a = refine(antithetic(path), 2)
        b = antithetic(refine(path, 2))
        assert np.array_equal(a.values, b.values)


class TestAntithetic:
    def test_involution(self, path):
        assert np.array_equal(antithetic(antithetic(path)).values, path.values)

    def test_negates_and_flags(self, path):
        flipped = antithetic(path)
        assert np.array_equal(flipped.values, -path.values)
        assert flipped.antithetic is True
        assert flipped.path_index == path.path_index

    def test_zero_path_fixed(self, path):
        zero = path.model_copy(update={"values": np.zeros(path.n_steps + 1)})
        assert np.array_equal(antithetic(zero).values, zero.values)


class TestSubsampleAndTruncate:
    def test_subsample_rejects_non_divisor(self, path):
        with pytest.raises(UsageError):
            subsample(path, 3)

    def test_truncate_keeps_prefix(self, path):
        short = truncate(path, 100)
        assert short.n_steps == 100
        assert np.array_equal(short.values, path.values[:101])

    def test_truncate_rejects_too_long(self, path):
        with pytest.raises(UsageError):
            truncate(path, 300)


class TestEnsemblePath:
    def test_paired_odd_index_is_negation(self, seed):
        grid = make_grid(1.0, 32)
        even = ensemble_path(seed, 4, grid, paired=True)
        odd = ensemble_path(seed, 5, grid, paired=True)
        assert np.array_equal(odd.values, -even.values)
        assert odd.path_index == 5
        assert odd.antithetic is True

    def test_unpaired_matches_sample_path(self, seed):
        grid = make_grid(1.0, 32)
        assert np.array_equal(ensemble_path(seed, 5, grid, paired=False).values, sample_path(seed, 5, grid).values)
