import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import symbol_by_sum
from phononflux import (InteractionMatrix, ModelError, TorusGrid, build_elastic_lattice, check_conditions,
                        critical_set, dispersion, load_model, symbol, symbol_gradient)
from phononflux.errors import ConditionError, GridMismatchError, SingularBranchError
from phononflux.grid import real_part, to_fourier, to_real
from phononflux.lattice import block_diagonal, dispersion_rows, read_model


# ---------------------------------------------------------------- grid

def test_grid_nodes_and_negation():
    g = TorusGrid(2, 8)
    assert g.theta.shape == (8, 8, 2) and g.size == 64
    assert g.theta.min() >= 0 and g.theta.max() < 2 * np.pi
    f = np.cos(g.theta[..., 0]) + np.sin(g.theta[..., 1])
    neg = g.negate(f)
    assert np.allclose(neg, np.cos(-g.theta[..., 0]) + np.sin(-g.theta[..., 1]))


@pytest.mark.parametrize("N", [0, 3, -2])
def test_grid_rejects_odd_or_small(N):
    with pytest.raises(ValueError):
        TorusGrid(1, N)


def test_fourier_round_trip_and_convention():
    g = TorusGrid(1, 16)
    f = np.zeros(16)
    f[g.index(3)] = 1.0
    fh = to_fourier(f, g)
    assert np.allclose(fh, np.exp(3j * g.theta[..., 0]))
    assert np.allclose(real_part(to_real(fh, g)), f)


def test_real_part_rejects_imaginary_residue():
    from phononflux import NumericalError

    with pytest.raises(NumericalError):
        real_part(np.array([1.0 + 1e-3j]))


# ---------------------------------------------------------------- interaction matrices

def test_elastic_support_d1():
    V = build_elastic_lattice(1, 1.0)
    assert set(V.support) == {(0,), (1,), (-1,)}
    assert V[(0,)][0, 0] == 3.0 and V[(1,)][0, 0] == -1.0 and V[(-1,)][0, 0] == -1.0
    assert V.support_radius == 1


def test_elastic_support_d2_massless():
    V = build_elastic_lattice(2, 0.0)
    assert V[(0, 0)][0, 0] == 4.0
    assert all(V[z][0, 0] == -1.0 for z in [(1, 0), (-1, 0), (0, 1), (0, -1)])
    assert len(V.support) == 5


def test_asymmetric_model_rejected():
    V = InteractionMatrix(1, 1, {(0,): 2.0, (1,): -1.0, (-1,): -0.5})
    assert V.symmetry_defect() == pytest.approx(0.5)
    with pytest.raises(ModelError):
        V.validate()
    with pytest.raises(ModelError):
        symbol(V, 0.3)


def test_duplicate_entries_rejected():
    with pytest.raises(ModelError):
        InteractionMatrix(1, 1, [((0,), 2.0), ((0,), 1.0)])


def test_model_json_round_trip(tmp_path):
    V = build_elastic_lattice(2, 0.5)
    p = tmp_path / "model.json"
    p.write_text(json.dumps(V.to_json()))
    W = read_model(p)
    assert set(W.support) == set(V.support)
    assert all(np.array_equal(W[z], V[z]) for z in V.support)
    E = load_model({"type": "elastic", "d": 2, "m": 0.5})
    assert all(np.array_equal(E[z], V[z]) for z in V.support)


# ---------------------------------------------------------------- symbols

@pytest.mark.parametrize("d,m,theta,expected", [
    (1, 1.0, [np.pi], 5.0),
    (1, 1.0, [0.0], 1.0),
    (2, 0.0, [np.pi, np.pi], 8.0),
])
def test_symbol_values(d, m, theta, expected):
    V = build_elastic_lattice(d, m)
    assert symbol(V, np.array(theta))[0, 0].real == pytest.approx(expected, abs=1e-12)


def test_symbol_block_diagonal_chains():
    A = build_elastic_lattice(1, 1.0)
    B = build_elastic_lattice(1, 2.0)
    V = block_diagonal(A, B)
    th = 0.7
    S = symbol(V, th)
    assert np.allclose(S, np.diag([3 - 2 * np.cos(th), 6 - 2 * np.cos(th)]), atol=1e-12)


def _random_symmetric_model(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n))
    V0 = X @ X.T + n * np.eye(n) * 3
    V1 = rng.normal(size=(n, n)) * 0.3
    return InteractionMatrix(1, n, {(0,): V0, (1,): V1, (-1,): V1.T})


@given(st.integers(0, 10_000), st.integers(1, 3), st.floats(0, 2 * np.pi))
def test_symbol_matches_explicit_sum_and_is_hermitian(seed, n, th):
    V = _random_symmetric_model(seed, n)
    S = symbol(V, th)
    assert np.allclose(S, symbol_by_sum(V, th), atol=1e-12)
    assert np.allclose(S, S.conj().T, atol=1e-12)
    assert np.allclose(symbol(V, -th), np.conj(S), atol=1e-12)


@given(st.integers(0, 10_000), st.floats(0.1, 6.0))
def test_symbol_gradient_matches_finite_difference(seed, th):
    V = _random_symmetric_model(seed, 2)
    h = 1e-6
    fd = (symbol_by_sum(V, th + h) - symbol_by_sum(V, th - h)) / (2 * h)
    assert np.allclose(symbol_gradient(V, th)[0], fd, atol=1e-7)


# ---------------------------------------------------------------- dispersion

def test_elastic_dispersion_and_velocity(chain):
    V, D = chain
    th = D.grid.theta[..., 0]
    assert np.allclose(D.omega[..., 0], np.sqrt(3 - 2 * np.cos(th)), atol=1e-12)
    assert np.allclose(D.velocity[..., 0, 0], np.sin(th) / np.sqrt(3 - 2 * np.cos(th)), atol=1e-12)
    i = D.grid.node_index(np.pi / 2)
    assert D.omega[i][0] == pytest.approx(np.sqrt(3))
    assert D.velocity[i][0, 0] == pytest.approx(1 / np.sqrt(3))


def test_dispersion_invariants_coupled_model():
    V = _random_symmetric_model(7, 3)
    D = dispersion(V, TorusGrid(1, 32))
    Om = D.funm(D.omega)
    assert np.allclose(Om @ Om, D.vhat, atol=1e-9 * (1 + np.abs(D.vhat).max()))
    P = D.projections
    eye = np.eye(3)
    assert np.allclose(D.funm(np.ones_like(D.omega)), eye, atol=1e-9)
    assert np.allclose(P @ P, P, atol=1e-9)
    assert np.all(np.diff(D.omega, axis=-1) >= -1e-12)


def test_velocity_matches_finite_differences_coupled():
    V = _random_symmetric_model(11, 2)
    D = dispersion(V, TorusGrid(1, 256))
    h = D.grid.spacing
    fd = (np.roll(D.omega, -1, axis=0) - np.roll(D.omega, 1, axis=0)) / (2 * h)
    mask = critical_set(D)
    gaps = np.abs(np.diff(D.omega, axis=-1)).min(axis=-1) > 0.05
    ok = ~mask & gaps
    assert np.allclose(D.velocity[ok][..., 0], fd[ok], atol=5 * h**2 * 10)


def test_degenerate_pair_forms_single_cluster():
    A = build_elastic_lattice(1, 1.0)
    D = dispersion(block_diagonal(A, A), TorusGrid(1, 16))
    assert np.all(D.same_cluster)
    for node in [(0,), (3,), (8,)]:
        projs = D.cluster_projections(node)
        assert len(projs) == 1 and np.allclose(projs[0], np.eye(2))


def test_relabeling_support_gives_same_dispersion():
    V = _random_symmetric_model(3, 2)
    items = list(V.support.items())
    W = InteractionMatrix(1, 2, dict(reversed(items)))
    g = TorusGrid(1, 16)
    assert np.array_equal(dispersion(V, g).omega, dispersion(W, g).omega)


def test_negative_symbol_raises_condition_error():
    V = InteractionMatrix(1, 1, {(0,): 1.0, (1,): -1.0, (-1,): -1.0})
    with pytest.raises(ConditionError):
        dispersion(V, TorusGrid(1, 8))


def test_singular_branch_velocity_raises():
    D = dispersion(build_elastic_lattice(1, 0.0), TorusGrid(1, 8))
    with pytest.raises(SingularBranchError):
        D.velocity_checked()


def test_grid_mismatch_detected(chain):
    _, D = chain
    with pytest.raises(GridMismatchError):
        D.grid.check_same(TorusGrid(1, 32))


# ---------------------------------------------------------------- conditions and critical set

def test_elastic_conditions_pass(chain):
    V, D = chain
    rep = check_conditions(V, D)
    assert rep.ok
    assert [rep[k].status for k in ("E1", "E2", "E3", "E4")] == ["pass"] * 4
    assert rep["E5"].status == "not-applicable"
    mask = critical_set(D)
    assert mask.mean() == pytest.approx(2 / D.grid.N)


def test_critical_set_n16():
    D = dispersion(build_elastic_lattice(1, 1.0), TorusGrid(1, 16))
    assert sorted(np.flatnonzero(critical_set(D))) == [0, 8]


def test_pi_half_is_not_critical():
    D = dispersion(build_elastic_lattice(1, 1.0), TorusGrid(1, 64))
    i = D.grid.node_index(np.pi / 2)
    assert not critical_set(D)[i]
    # analytic second derivative of sqrt(3 - 2 cos) at pi/2
    assert D.hessian_det[i][0] == pytest.approx(-1 / 3**1.5, rel=2e-3)


def test_square_lattice_mask_contains_axis_lines(square):
    _, D = square
    mask = critical_set(D)
    th2 = D.grid.theta[..., 1]
    lines = np.isclose(np.sin(th2), 0.0, atol=1e-12)
    assert np.all(mask[lines])


def test_massless_chain_flags_e6():
    growth = []
    for N in (64, 128, 256):
        D = dispersion(build_elastic_lattice(1, 0.0), TorusGrid(1, N))
        rep = check_conditions(build_elastic_lattice(1, 0.0), D)
        assert rep["E6"].status == "fail"
        assert rep["E6"].witness["excluded_fraction"] == pytest.approx(1 / N)
        growth.append(rep["E6"].witness["mean_inverse_norm"])
    # oracle: grid average of 1 / (2 - 2 cos theta) over nonzero nodes grows like N^2 / 12
    for N, val in zip((64, 128, 256), growth):
        th = 2 * np.pi * np.arange(1, N) / N
        assert val == pytest.approx(np.mean(1 / (2 - 2 * np.cos(th))), rel=1e-10)
    assert growth[0] < growth[1] < growth[2]


def test_two_identical_chains_pass_e5():
    A = build_elastic_lattice(1, 1.0)
    V = block_diagonal(A, A)
    rep = check_conditions(V, dispersion(V, TorusGrid(1, 32)))
    assert rep["E5"].status == "pass"


def test_constant_frequency_difference_fails_e5():
    # branch omega_2 = omega_1 + const is impossible for trigonometric symbols unless both are flat
    V = InteractionMatrix(1, 2, {(0,): np.diag([1.0, 4.0])})
    rep = check_conditions(V, dispersion(V, TorusGrid(1, 16)))
    assert rep["E5"].status == "fail"
    assert rep["E4"].status == "fail"


def test_dispersion_rows_shape():
    D = dispersion(build_elastic_lattice(1, 1.0), TorusGrid(1, 64))
    rows = list(dispersion_rows(D))
    assert len(rows) == 64 and len(rows[0]) == 5
