import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgeo_regime.embedding import OperatorSet, gell_mann_basis, make_random_operators
from qgeo_regime.errors import DegenerateGapError, IllConditionedLoopError
from qgeo_regime.geometry import (
    Mesh,
    berry_path,
    berry_plaquette,
    berry_pt,
    chern_integral,
    curvature_gap_bound_check,
    log_pseudo_det,
    loop_phase,
    metric_fd,
    metric_pt,
    metric_pt_path,
    monopole_states,
    participation_ratio,
    pseudo_det,
    spectral_gap_dimension,
    sphere_mesh,
)

SX, SY, SZ = gell_mann_basis(2)


@pytest.fixture(scope="module")
def bloch():
    """H(x) = const - x.sigma: the spin-1/2 monopole."""
    return OperatorSet(np.array([SX, SY, SZ]), "pauli")


@pytest.fixture(scope="module")
def stationary():
    D = np.diag([0.0, 1.0, 2.0]).astype(complex)
    return OperatorSet(np.array([D, D, D]), "pauli")


def unit_points(count, p, seed):
    X = np.random.default_rng(seed).standard_normal((count, p))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


class TestMetric:
    def test_stationary_state_zero(self, stationary):
        x = np.array([0.1, -0.05, 0.02])
        np.testing.assert_allclose(metric_fd(stationary, x).g, 0, atol=1e-12)
        np.testing.assert_allclose(metric_pt(stationary, x).g, 0, atol=1e-15)

    def test_two_level_bloch_pullback(self):
        ops = OperatorSet(np.array([SZ, SX]), "pauli")  # ground state of -(x1 sz + x2 sx)
        for theta in (0.3, 1.1, 2.5):
            x = np.array([np.cos(theta), np.sin(theta)])
            t = np.array([-np.sin(theta), np.cos(theta)])
            for g in (metric_fd(ops, x).g, metric_pt(ops, x).g):
                assert t @ g @ t == pytest.approx(0.25, abs=1e-9)
                assert x @ g @ x == pytest.approx(0.0, abs=1e-9)

    def test_fd_matches_pt(self, ops8):
        X = unit_points(100, 8, 42)
        a = np.array([metric_fd(ops8, x).g for x in X]).ravel()
        b = np.array([metric_pt(ops8, x).g for x in X]).ravel()
        assert np.sqrt(np.mean((a - b) ** 2)) <= 1e-9
        assert np.corrcoef(a, b)[0, 1] >= 0.999999

    def test_symmetric_psd(self, ops8):
        for x in unit_points(20, 8, 1):
            for m in (metric_fd(ops8, x), metric_pt(ops8, x)):
                np.testing.assert_allclose(m.g, m.g.T, atol=1e-10)
                assert np.linalg.eigvalsh(m.g)[0] >= -1e-8
                np.testing.assert_array_equal(m.qfi, 4 * m.g)

    def test_path_matches_pointwise(self, ops8):
        X = unit_points(5, 8, 3)
        G, gap = metric_pt_path(ops8, X)
        for k in range(5):
            np.testing.assert_allclose(G[k], metric_pt(ops8, X[k]).g, atol=1e-14)
        assert np.all(gap > 0)

    def test_degenerate_raises(self):
        ops = OperatorSet(np.array([np.eye(2, dtype=complex)]), "pauli")
        with pytest.raises(DegenerateGapError):
            metric_pt(ops, [0.0])
        with pytest.raises(DegenerateGapError):
            metric_fd(ops, [0.0])


class TestPlaquette:
    def test_constant_field_zero(self, stationary):
        assert berry_plaquette(stationary, np.zeros(3), a=0, b=1).value == 0.0

    def test_gauge_invariance(self, rng):
        psi = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        base = loop_phase(psi)
        for _ in range(20):
            phases = np.exp(1j * rng.uniform(0, 2 * np.pi, 4))
            assert abs(loop_phase(psi * phases[:, None]) - base) < 1e-12

    def test_antisymmetry(self, ops8):
        x = unit_points(1, 8, 5)[0]
        assert berry_plaquette(ops8, x, a=2, b=5).value == -berry_plaquette(ops8, x, a=5, b=2).value

    def test_matches_sum_over_states(self, ops8):
        for x in unit_points(10, 8, 7):
            F = berry_plaquette(ops8, x).value
            ref = berry_pt(ops8, x, 0, 1)
            assert F == pytest.approx(ref, rel=1e-3, abs=1e-4)

    def test_two_level_analytic(self, bloch):
        for x in (np.array([0.3, 0.2, 0.9]), np.array([-0.5, 0.4, -0.2])):
            r = np.linalg.norm(x)
            F = berry_plaquette(bloch, x, a=0, b=1).value
            assert F == pytest.approx(-x[2] / (2 * r**3), rel=1e-4)

    def test_epsilon_stability(self, ops8):
        for x in unit_points(10, 8, 11):
            vals = [berry_plaquette(ops8, x, eps=e).value for e in (1e-4, 1e-5, 1e-6)]
            ref = vals[1]
            assert all(abs(v - ref) <= 0.05 * abs(ref) for v in vals)

    def test_ill_conditioned_loop(self):
        with pytest.raises(IllConditionedLoopError):
            loop_phase(np.array([[1, 0], [0, 1], [1, 0], [0, 1]], dtype=complex))

    def test_path_flags_instead_of_raising(self):
        ops = OperatorSet(np.array([np.eye(2, dtype=complex), SZ]), "pauli")
        F, gap, ok = berry_path(ops, np.array([[0.0, 0.0], [0.0, 0.5]]))
        assert not ok[0] and np.isnan(F[0])
        assert ok[1]

    def test_path_matches_single(self, ops8):
        X = unit_points(6, 8, 13)
        F, _, ok = berry_path(ops8, X, a=3, b=1)
        assert ok.all()
        for k in range(6):
            # batched and single solves may differ in the last bits of the overlaps
            assert F[k] == pytest.approx(berry_plaquette(ops8, X[k], a=3, b=1).value, rel=1e-8)


class TestChern:
    def test_mesh_closed(self):
        mesh = sphere_mesh(10, 12)
        assert mesh.closed
        open_mesh = Mesh(mesh.vertices, mesh.faces[:-3])
        assert not open_mesh.closed

    def test_monopole_operator_field(self, bloch):
        res = chern_integral(bloch, sphere_mesh(40, 40))
        assert abs(res.value + 1) <= 0.01
        assert res.nearest_integer == -1 and not res.open_mesh_warning

    def test_monopole_state_callable(self):
        res = chern_integral(monopole_states, sphere_mesh(40, 40))
        assert abs(res.value + 1) <= 0.01

    def test_orientation_flip_exact(self, bloch):
        mesh = sphere_mesh(40, 40)
        assert chern_integral(bloch, mesh.reversed()).value == -chern_integral(bloch, mesh).value

    def test_trivial_bundle(self):
        res = chern_integral(lambda v: np.tile([1.0, 0.0], (len(v), 1)), sphere_mesh(20, 20))
        assert res.value == 0.0

    def test_sphere_not_enclosing_monopole(self, bloch):
        res = chern_integral(bloch, sphere_mesh(30, 30, radius=0.5, center=[2.0, 0.0, 0.0]))
        assert abs(res.value) <= 0.01

    def test_open_mesh_flag(self, bloch):
        mesh = sphere_mesh(20, 20)
        res = chern_integral(bloch, Mesh(mesh.vertices, mesh.faces[:20]))
        assert res.open_mesh_warning


class TestBound:
    def test_stationary(self, stationary):
        ok, lhs, rhs = curvature_gap_bound_check(stationary, np.zeros(3))
        assert ok and lhs == 0.0 and rhs > 0

    def test_two_level_closed_form(self, bloch):
        x = np.array([0.4, -0.3, 0.6])
        r = np.linalg.norm(x)
        ok, lhs, rhs = curvature_gap_bound_check(bloch, x, a=0, b=1)
        assert lhs == pytest.approx(abs(x[2]) / (2 * r**3), rel=1e-4)
        # ||sigma_a - x_a I|| = 1 + |x_a|, gap = 2r
        assert rhs == pytest.approx(2 * (1 + abs(x[0])) * (1 + abs(x[1])) / (2 * r) ** 2, rel=1e-12)
        assert ok

    def test_random_points(self, ops8):
        assert all(curvature_gap_bound_check(ops8, x).satisfied for x in unit_points(100, 8, 17))


class TestMetricSpectra:
    def test_pseudo_det_examples(self):
        assert pseudo_det(np.eye(3)) == (1.0, 3)
        assert pseudo_det(np.diag([2.0, 0.0])) == (2.0, 1)
        empty = pseudo_det(np.zeros((3, 3)))
        assert empty == (1.0, 0) and empty.flagged

    def test_pseudo_det_low_rank_oracle(self, rng):
        L = rng.standard_normal((6, 3))
        g = L @ L.T
        lam = np.linalg.eigvalsh(g)
        value, rank = pseudo_det(g)
        assert rank == 3
        assert value == pytest.approx(np.prod(lam[-3:]), rel=1e-10)
        assert log_pseudo_det(g)[0] == pytest.approx(np.log(value), rel=1e-10)

    def test_participation_ratio(self):
        assert participation_ratio(np.eye(4)).value == pytest.approx(4.0)
        assert participation_ratio(np.diag([3.0, 0, 0])).value == pytest.approx(1.0)
        assert participation_ratio(np.diag([1, 1, 1e-4])).value == pytest.approx(2.0001**2 / 2.00000001, rel=1e-12)
        assert participation_ratio(np.zeros((2, 2))).flagged

    def test_spectral_gap_dimension(self):
        assert spectral_gap_dimension(np.diag([10, 9, 0.1, 0.09])).value == 2
        assert spectral_gap_dimension(np.diag(2.0 ** -np.arange(1, 6))).value == 1
        assert spectral_gap_dimension(np.diag([1.0, 0, 0])).flagged

    def test_planted_two_factor(self, rng):
        L = rng.standard_normal((8, 2)) * 3
        N = rng.standard_normal((8, 8)) * 0.05
        g = L @ L.T + N @ N.T
        assert spectral_gap_dimension(g).value == 2


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_metric_identity_property(seed):
    ops = make_random_operators(4, 3, seed=seed)
    x = np.random.default_rng(seed).standard_normal(3)
    gpt = metric_pt(ops, x)
    w = np.linalg.eigvalsh(0.5 * sum((A - xk * np.eye(4)) @ (A - xk * np.eye(4)) for A, xk in zip(ops.operators, x)))
    if w[1] - w[0] < 1e-2:
        return  # near-degenerate: finite differences lose precision
    gfd = metric_fd(ops, x)
    np.testing.assert_allclose(gfd.g, gpt.g, atol=1e-6 * max(1.0, np.abs(gpt.g).max()))
