import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from oracles import dense_scan_root_count, min_pole_gap
from quantum_star import spectrum as sp
from quantum_star.errors import PoleCollision, SinGuard, StarGraphError


@pytest.fixture(scope="module")
def default_basis():
    return sp.build_basis(sp.StarGraph.default(), 8 * np.pi)


def test_single_arm_roots_are_half_integer_multiples():
    k = sp.solve_secular(sp.StarGraph((1.0,)), 5.0)
    np.testing.assert_allclose(k, [np.pi / 2, 3 * np.pi / 2], rtol=0, atol=1e-12)


def test_two_arm_first_root():
    k = sp.solve_secular(sp.StarGraph((1.0, 2.0)), 1.2)
    np.testing.assert_allclose(k, [np.pi / 3], rtol=0, atol=1e-12)


def test_root_count_matches_dense_scan_on_default_graph():
    graph = sp.StarGraph.default()
    k = sp.solve_secular(graph, 25.13)
    assert k.size == dense_scan_root_count(graph.arm_lengths, 25.13)


def test_one_root_between_consecutive_poles(default_basis):
    values, _ = sp.poles(default_basis.graph, default_basis.k_max)
    lo = np.concatenate(([0.0], values[:-1]))
    inside = (default_basis.k[:, None] > lo[None, :]) & (default_basis.k[:, None] < values[None, :])
    per_bracket = inside.sum(axis=0)
    assert np.all(per_bracket[: default_basis.size] == 1)


def test_roots_strictly_increasing_and_residuals_at_floor(default_basis):
    assert np.all(np.diff(default_basis.k) > 0)
    tol = sp.residual_tolerance(default_basis.graph, default_basis.k)
    assert np.all(default_basis.secular_residuals() < tol)


def test_weyl_window(default_basis):
    weyl = default_basis.k_max * default_basis.graph.total_length / np.pi
    assert abs(default_basis.size - weyl) <= default_basis.graph.arm_count


def test_pole_collision_is_rejected():
    # poles of arms 1 and 2 coincide at every multiple of pi
    with pytest.raises(PoleCollision):
        sp.solve_secular(sp.StarGraph((1.0, 2.0)), 4.0)


def test_sin_guard():
    with pytest.raises(SinGuard):
        sp.normalization(sp.StarGraph((1.0, 2.0)), np.pi)


def test_invalid_graph():
    with pytest.raises(StarGraphError):
        sp.StarGraph((1.0, -2.0))
    with pytest.raises(StarGraphError):
        sp.StarGraph(())


def test_normalization_single_arm():
    assert sp.normalization(sp.StarGraph((1.0,)), np.pi / 2) == pytest.approx(np.sqrt(2), rel=1e-14)


def test_normalization_two_arms_matches_quadrature():
    graph = sp.StarGraph((1.0, 2.0))
    B = sp.normalization(graph, np.pi / 3)
    assert B == pytest.approx(sp.normalization_by_quadrature(graph, np.pi / 3), rel=1e-10)


def test_normalization_matches_quadrature_on_default_graph(default_basis):
    for n in [0, 1, 57, 300, 611, default_basis.size - 1]:
        oracle = sp.normalization_by_quadrature(default_basis.graph, default_basis.k[n])
        assert default_basis.B[n] == pytest.approx(oracle, rel=1e-10)


def test_outer_ends_vanish(default_basis):
    for j, L in enumerate(default_basis.graph.arm_lengths):
        values = default_basis.arm_values(j, [L])
        assert np.max(np.abs(values)) < 1e-12


def test_vertex_continuity(default_basis):
    at_vertex = np.stack([default_basis.arm_values(j, [0.0])[:, 0] for j in range(3)])
    assert np.max(np.abs(at_vertex - at_vertex[0])) < 1e-12


def test_kirchhoff_derivative_sum(default_basis):
    parts = np.stack([default_basis.arm_derivatives(j, [0.0])[:, 0] for j in range(3)])
    total = parts.sum(axis=0)
    # near-coincident poles make individual outgoing derivatives huge
    scale = np.abs(parts).max(axis=0)
    assert np.all(np.abs(total) < 1e-8 * scale)


def test_eigenfunction_eval_matches_vectorized(default_basis):
    x = np.linspace(0, default_basis.graph.arm_lengths[1], 7)
    np.testing.assert_allclose(
        sp.eigenfunction_eval(default_basis, 12, 1, x), default_basis.arm_values(1, x, [12])[0]
    )
    with pytest.raises(ValueError):
        sp.eigenfunction_eval(default_basis, 0, 0, 41.0)


def test_orthonormality_single_arm_first_ten_modes():
    basis = sp.build_basis(sp.StarGraph((1.0,)), 10 * np.pi)
    assert sp.orthonormality_check(basis, modes=np.arange(10)) < 1e-10


def test_orthonormality_default_graph_first_200(default_basis):
    assert sp.orthonormality_check(default_basis, modes=np.arange(200)) < 1e-8


def test_single_mode_diagonal(default_basis):
    gram = sp.gram_matrix(default_basis, modes=[42])
    assert abs(gram[0, 0] - 1.0) < 1e-10


def test_orthonormality_needs_resolution(default_basis):
    with pytest.raises(ValueError):
        sp.orthonormality_check(default_basis, points_per_wavelength=4, modes=[0, 1])


def test_basis_is_immutable_and_deterministic(default_basis):
    with pytest.raises(ValueError):
        default_basis.k[0] = 1.0
    again = sp.build_basis(sp.StarGraph.default(), 8 * np.pi)
    assert again.k.tobytes() == default_basis.k.tobytes()
    assert again.B.tobytes() == default_basis.B.tobytes()


@settings(max_examples=25, deadline=None)
@given(
    lengths=st.lists(st.floats(min_value=0.5, max_value=6.0), min_size=1, max_size=4),
    k_max=st.floats(min_value=0.5, max_value=30.0),
)
def test_root_completeness_random_graphs(lengths, k_max):
    graph = sp.StarGraph(tuple(lengths))
    # keeps the dense scan affordable
    assume(min_pole_gap(graph.arm_lengths, k_max) > 2e-4)
    try:
        k = sp.solve_secular(graph, k_max)
    except PoleCollision:
        return
    assert k.size == dense_scan_root_count(graph.arm_lengths, k_max)
    assert np.all(np.abs(sp.secular(graph, k)) < sp.residual_tolerance(graph, k))
