import numpy as np
import pytest

from mvem.errors import DomainError
from mvem.noise import (
    DOMAIN_INCREMENTS,
    NoiseTableau,
    auxiliary_normals,
    coarsen,
    generate_tableau,
    initial_normals,
    load_tableau,
    normals_for_range,
    save_tableau,
)
from mvem.sde_core import TimeGrid


class TestDeterminismAndAddressing:
    def test_same_inputs_give_identical_tableaux(self):
        grid = TimeGrid(1.0, 16)
        a = generate_tableau(1234, 7, 20, 2, grid)
        b = generate_tableau(1234, 7, 20, 2, grid)
        assert np.array_equal(a.increments, b.increments)

    def test_distinct_keys_give_distinct_streams(self):
        grid = TimeGrid(1.0, 8)
        base = generate_tableau(1, 0, 4, 1, grid)
        assert not np.array_equal(base.increments, generate_tableau(2, 0, 4, 1, grid).increments)
        assert not np.array_equal(base.increments, generate_tableau(1, 1, 4, 1, grid).increments)

    def test_subrange_regeneration_matches_full_table(self):
        # any (particle, step) block can be regenerated independently from
        # its word address and must agree bit for bit
        grid = TimeGrid(2.0, 12)
        n, q = 9, 3
        tab = generate_tableau(77, 3, n, q, grid)
        scale = np.sqrt(grid.mesh)
        for (i, j) in [(0, 0), (4, 11), (8, 5), (3, 1)]:
            start = (i * grid.steps + j) * q
            z = normals_for_range(77, 3, DOMAIN_INCREMENTS, start, q)
            assert np.array_equal(z * scale, tab.increments[i, j])

    def test_particle_rows_are_independent_of_table_width(self):
        grid = TimeGrid(1.0, 6)
        small = generate_tableau(5, 0, 3, 1, grid)
        large = generate_tableau(5, 0, 10, 1, grid)
        assert np.array_equal(small.increments, large.increments[:3])

    def test_initial_draws_do_not_depend_on_grid(self):
        a = initial_normals(9, 2, 50, 1)
        b = initial_normals(9, 2, 50, 1)
        assert np.array_equal(a, b)
        # widening the particle range keeps the leading draws
        wide = initial_normals(9, 2, 80, 1)
        assert np.array_equal(a, wide[:50])

    def test_domains_are_disjoint(self):
        grid = TimeGrid(1.0, 64)
        inc = generate_tableau(11, 0, 100, 1, grid).increments.ravel()
        init = initial_normals(11, 0, 100, 1).ravel()
        aux = auxiliary_normals(11, 0, 100, 64).ravel()
        assert not np.array_equal(inc[: init.size], init)
        corr = np.corrcoef(inc[: aux.size], aux)[0, 1]
        assert abs(corr) < 0.05


class TestDistributionalContracts:
    def test_pooled_mean_within_clt_bound(self):
        # 2e5 pooled increments at mesh 2^-10: |mean| <= 4 sqrt(h / count)
        grid = TimeGrid(1.0, 1024)
        tab = generate_tableau(2024, 0, 200, 1, grid)
        pooled = tab.increments.ravel()
        count = pooled.size
        assert count >= 2 * 10**5
        assert abs(pooled.mean()) <= 4.0 * np.sqrt(grid.mesh / count)

    def test_pooled_variance_matches_mesh(self):
        grid = TimeGrid(1.0, 256)
        tab = generate_tableau(55, 0, 400, 1, grid)
        var = tab.increments.var()
        assert var == pytest.approx(grid.mesh, rel=0.05)

    def test_distinct_replications_uncorrelated(self):
        grid = TimeGrid(1.0, 100)
        a = generate_tableau(31, 0, 1000, 1, grid).increments.ravel()
        b = generate_tableau(31, 1, 1000, 1, grid).increments.ravel()
        assert a.size == 10**5
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 0.01


class TestCoarsen:
    def test_identity_when_grids_match(self):
        grid = TimeGrid(1.0, 8)
        tab = generate_tableau(3, 0, 5, 1, grid)
        out = coarsen(tab, grid)
        assert np.array_equal(out, tab.increments)

    def test_pairwise_sum_example(self):
        fine = TimeGrid(1.0, 4)
        inc = np.array([0.1, -0.2, 0.3, 0.05]).reshape(1, 4, 1)
        tab = NoiseTableau(0, 0, 1, 1, fine, inc)
        out = coarsen(tab, TimeGrid(1.0, 2))
        assert out[0, :, 0] == pytest.approx([-0.1, 0.35], abs=1e-15)

    def test_blockwise_sums_are_exact(self):
        grid = TimeGrid(1.0, 32)
        tab = generate_tableau(8, 0, 6, 2, grid)
        coarse = coarsen(tab, TimeGrid(1.0, 8))
        blocks = tab.increments.reshape(6, 8, 4, 2)
        assert np.array_equal(coarse, blocks.sum(axis=2))

    def test_telescoping(self):
        grid = TimeGrid(1.0, 64)
        tab = generate_tableau(8, 1, 10, 1, grid)
        coarse = coarsen(tab, TimeGrid(1.0, 4))
        for i in range(10):
            assert coarse[i].sum() == pytest.approx(tab.increments[i].sum(), rel=1e-12, abs=1e-14)

    def test_coarse_variance(self):
        # >= 1e5 coarse increments keep empirical variance within 5% of the
        # coarse mesh
        grid = TimeGrid(1.0, 64)
        tab = generate_tableau(99, 0, 6400, 1, grid)
        coarse = coarsen(tab, TimeGrid(1.0, 16))
        pooled = coarse.ravel()
        assert pooled.size >= 10**5
        assert pooled.var() == pytest.approx(1.0 / 16.0, rel=0.05)

    def test_non_divisible_rejected(self):
        tab = generate_tableau(1, 0, 2, 1, TimeGrid(1.0, 10))
        with pytest.raises(DomainError):
            coarsen(tab, TimeGrid(1.0, 3))
        with pytest.raises(DomainError):
            coarsen(tab, TimeGrid(2.0, 5))


class TestValidationAndIO:
    def test_zero_sizes_rejected(self):
        grid = TimeGrid(1.0, 4)
        with pytest.raises(DomainError):
            generate_tableau(1, 0, 0, 1, grid)
        with pytest.raises(DomainError):
            generate_tableau(1, 0, 4, 0, grid)
        with pytest.raises(DomainError):
            TimeGrid(1.0, 0)

    def test_increments_read_only(self):
        tab = generate_tableau(1, 0, 2, 1, TimeGrid(1.0, 4))
        with pytest.raises(ValueError):
            tab.increments[0, 0, 0] = 1.0

    def test_binary_round_trip(self, tmp_path):
        tab = generate_tableau(123456789, 42, 7, 3, TimeGrid(2.5, 6))
        path = tmp_path / "tableau.bin"
        save_tableau(path, tab)
        back = load_tableau(path)
        assert back.seed == tab.seed
        assert back.replication == tab.replication
        assert back.n_particles == tab.n_particles
        assert back.noise_dim == tab.noise_dim
        assert back.grid == tab.grid
        assert np.array_equal(back.increments, tab.increments)

    def test_truncated_file_rejected(self, tmp_path):
        tab = generate_tableau(1, 0, 2, 1, TimeGrid(1.0, 4))
        path = tmp_path / "tableau.bin"
        save_tableau(path, tab)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(DomainError):
            load_tableau(path)
