import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvem.errors import DomainError
from mvem.measures import DiscreteMeasure, wasserstein_1d
from mvem.reference_models import build_model
from mvem.sde_core import (
    CoefficientModel,
    EmpiricalMeasureView,
    RegularityCard,
    TimeGrid,
    evaluate_diffusion,
    evaluate_drift,
    left_node,
    particle_mean,
)


class TestTimeGrid:
    def test_mesh_times_steps_recovers_horizon(self):
        for horizon, steps in [(1.0, 10), (0.7, 13), (3.14159, 997)]:
            g = TimeGrid(horizon, steps)
            assert g.mesh * steps == pytest.approx(horizon, rel=1e-15)

    def test_nodes_increasing_with_exact_endpoints(self):
        g = TimeGrid(2.5, 17)
        nodes = g.nodes
        assert nodes[0] == 0.0
        assert nodes[-1] == 2.5
        assert np.all(np.diff(nodes) > 0)

    def test_invalid_grids(self):
        with pytest.raises(DomainError):
            TimeGrid(0.0, 4)
        with pytest.raises(DomainError):
            TimeGrid(-1.0, 4)
        with pytest.raises(DomainError):
            TimeGrid(1.0, 0)

    def test_refine_and_subdivides(self):
        g = TimeGrid(1.0, 8)
        assert g.refine(4).steps == 32
        assert g.subdivides(TimeGrid(1.0, 32))
        assert not g.subdivides(TimeGrid(1.0, 12))
        assert not g.subdivides(TimeGrid(2.0, 32))


class TestLeftNode:
    def test_interior_point(self):
        assert left_node(0.35, TimeGrid(1.0, 10)) == pytest.approx(0.3, abs=1e-12)

    def test_node_maps_to_previous_node(self):
        # left-open convention: a node belongs to the interval ending there
        assert left_node(0.30, TimeGrid(1.0, 10)) == pytest.approx(0.2, abs=1e-12)

    def test_zero_maps_to_zero(self):
        assert left_node(0.0, TimeGrid(7.0, 5)) == 0.0

    def test_out_of_range(self):
        g = TimeGrid(1.0, 4)
        with pytest.raises(DomainError):
            left_node(-0.1, g)
        with pytest.raises(DomainError):
            left_node(1.1, g)

    def test_every_exact_node_snaps_down(self):
        g = TimeGrid(1.0, 13)
        for j in range(1, 14):
            assert left_node(g.node(j), g) == g.node(j - 1)

    @given(
        horizon=st.floats(0.1, 10.0, allow_nan=False),
        steps=st.integers(1, 500),
        frac=st.floats(1e-9, 1.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_projection_properties(self, horizon, steps, frac):
        g = TimeGrid(horizon, steps)
        t = frac * horizon
        k = left_node(t, g)
        assert 0.0 <= k < t or (k == 0.0 and t <= g.mesh * (1 + 1e-9))
        assert k >= t - g.mesh * (1 + 1e-9)

    def test_nondecreasing(self):
        g = TimeGrid(1.0, 7)
        ts = np.linspace(1e-9, 1.0, 400)
        ks = [left_node(float(t), g) for t in ts]
        assert all(b >= a for a, b in zip(ks, ks[1:]))


class TestEmpiricalMeasureView:
    def test_cached_moments_match_recomputation(self):
        rng = np.random.default_rng(0)
        view = EmpiricalMeasureView(rng.normal(size=(100, 3)))
        assert view.moments_consistent(rtol=1e-12)
        assert view.weight == pytest.approx(1.0 / 100)

    def test_mean_and_second_moment_values(self):
        view = EmpiricalMeasureView(np.array([[0.0], [1.0], [2.0]]))
        assert view.mean[0] == pytest.approx(1.0)
        assert view.second_moment == pytest.approx(5.0 / 3.0)

    def test_batched_rows_match_single(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(4, 50, 2))
        batched = EmpiricalMeasureView(pts)
        for b in range(4):
            single = EmpiricalMeasureView(pts[b])
            assert np.array_equal(batched.mean[b], single.mean)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            EmpiricalMeasureView(np.empty((0, 1)))


def test_particle_mean_bitwise_stable_across_batching():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(8, 333, 3))
    got = particle_mean(pts)
    rows = np.stack([particle_mean(pts[b].copy()) for b in range(8)])
    assert np.array_equal(got, rows)


def _point_view(x):
    return EmpiricalMeasureView(np.atleast_2d(np.asarray(x, dtype=float)).T)


class TestCoefficientEvaluation:
    def test_linear_interaction_drift_value(self):
        bundle = build_model("ou-linear", a=-1.0, b_mean=0.5)
        view = _point_view([1.0])  # mean(mu) = 1
        out = evaluate_drift(bundle.model, 0.0, np.array([2.0]), view)
        assert out == pytest.approx([-1.5])

    def test_zero_drift(self):
        model = CoefficientModel(
            dim=2,
            noise_dim=2,
            drift=lambda t, x, v: np.zeros_like(x),
            diffusion=lambda t, x, v: np.zeros(x.shape + (2,)),
            card=RegularityCard(),
        )
        view = EmpiricalMeasureView(np.zeros((3, 2)))
        out = evaluate_drift(model, 0.3, np.array([5.0, -1.0]), view)
        assert np.array_equal(out, np.zeros(2))

    def test_attractive_fixed_point(self):
        bundle = build_model("ou-attract")
        view = _point_view([3.0])
        out = evaluate_drift(bundle.model, 0.0, np.array([3.0]), view)
        assert out == pytest.approx([0.0], abs=0.0)

    def test_dimension_mismatch(self):
        bundle = build_model("ou-linear")
        view = _point_view([1.0])
        with pytest.raises(DomainError):
            evaluate_drift(bundle.model, 0.0, np.array([1.0, 2.0]), view)

    def test_diffusion_shape(self):
        bundle = build_model("ou-linear", sigma0=2.0)
        view = _point_view([0.0])
        out = evaluate_diffusion(bundle.model, 0.0, np.array([1.0]), view)
        assert out.shape == (1, 1)
        assert out[0, 0] == 2.0

    def test_determinism(self):
        bundle = build_model("holder-drift")
        view = _point_view([0.3, 0.9, -2.0])
        x = np.array([[0.5], [1.5]])
        a = evaluate_drift(bundle.model, 0.1, x, view)
        b = evaluate_drift(bundle.model, 0.1, x, view)
        assert np.array_equal(a, b)


class TestDeclaredLipschitzBound:
    """Randomised probes of |b(t,x,mu) - b(t,y,nu)| <= L (|x-y| + W1(mu,nu))
    for the built-in models that declare a joint Lipschitz constant."""

    @pytest.mark.parametrize("model_id", ["ou-linear", "ou-attract"])
    def test_builtin_models(self, model_id):
        bundle = build_model(model_id)
        card = bundle.model.card
        assert card.lipschitz_in_state_and_measure
        lip = card.lipschitz_constant
        rng = np.random.default_rng(42)
        for _ in range(100):
            m = int(rng.integers(1, 8))
            pts_a = rng.normal(scale=2.0, size=(m, 1))
            pts_b = rng.normal(scale=2.0, size=(m, 1))
            va, vb = EmpiricalMeasureView(pts_a), EmpiricalMeasureView(pts_b)
            x, y = rng.normal(scale=3.0, size=2)
            t = float(rng.uniform(0, 1))
            bx = evaluate_drift(bundle.model, t, np.array([x]), va)[0]
            by = evaluate_drift(bundle.model, t, np.array([y]), vb)[0]
            w1 = wasserstein_1d(
                DiscreteMeasure.uniform(pts_a), DiscreteMeasure.uniform(pts_b), p=1
            )
            assert abs(bx - by) <= lip * (abs(x - y) + w1) + 1e-12


def test_regularity_card_validation():
    with pytest.raises(DomainError):
        RegularityCard(holder_exponent=0.0)
    with pytest.raises(DomainError):
        RegularityCard(holder_exponent=1.5)
