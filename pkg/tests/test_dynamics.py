"""
test_dynamics.py - DB and MPNN steppers, weight initialization and rollouts,
including ballistic versus diffusive spreading on a path.
"""

import numpy as np
import pytest

from core.core_dynamics import (
    DBWeights,
    FeatureState,
    MPNNWeights,
    StepperSpec,
    db1s_step,
    dropout_mask,
    evolve,
    init_weights,
    lindb_step,
    mpnn_linear_step,
    mpnn_sigma_step,
    point_initial_state,
    spreading_initial_state,
    wave_crossing_steps,
)
from core.core_errors import (
    ConfigError,
    DimensionMismatchError,
    InvalidGraphError,
    InvalidSizeError,
    NumericOverflowError,
)
from core.core_graph import make_grid, make_path, make_random_connected
from core.core_metrics import front_arrival, front_slope


def _scalar_weights(w_ne, w_en, b_n=0.0, b_e=0.0):
    return DBWeights(
        W_ne=np.array([[w_ne]]),
        W_en=np.array([[w_en]]),
        W_beta_n=np.array([[b_n]]),
        W_beta_e=np.array([[b_e]]),
    )


def _random_state(g, d_n, d_e, rng):
    return FeatureState(rng.normal(size=(g.num_nodes, d_n)), rng.normal(size=(g.num_directed_edges, d_e)))


def test_single_edge_lindb_hand_traced():
    g = make_path(2)
    w = _scalar_weights(1.0, 1.0)
    s = FeatureState(np.array([[1.0], [0.0]]), np.zeros((2, 1)))
    out = lindb_step(g, w, s)
    assert np.array_equal(out.node_features, [[1.0], [0.0]])
    # edge (0,1) sees x_0 - x_1 = 1, edge (1,0) sees -1
    assert np.array_equal(out.edge_features, [[1.0], [-1.0]])
    out2 = lindb_step(g, w, out)
    assert np.array_equal(out2.node_features, [[2.0], [-1.0]])


def test_lindb_matches_dense_dirac_update_on_canonical_edges():
    rng = np.random.default_rng(11)
    g = make_random_connected(9, rng)
    b = 0.7
    x = rng.normal(size=(g.num_nodes, 1))
    e_canonical = rng.normal(size=(g.num_edges, 1))
    # directed edge 2k is the canonical orientation, 2k+1 its reverse
    e = np.repeat(e_canonical, 2, axis=0)
    e[1::2] *= -1.0
    out = lindb_step(g, _scalar_weights(b, b), FeatureState(x, e))

    inc = g.incidence_matrix.toarray()
    n, m = g.num_nodes, g.num_edges
    operator = np.zeros((n + m, n + m))
    operator[:n, n:] = inc
    operator[n:, :n] = inc.T
    expected = np.vstack([x, e_canonical]) + b * (operator @ np.vstack([x, e_canonical]))
    assert np.allclose(out.node_features, expected[:n], atol=1e-12)
    assert np.allclose(out.edge_features[0::2], expected[n:], atol=1e-12)
    assert np.allclose(out.edge_features[1::2], -expected[n:], atol=1e-12)


def test_lindb_keeps_edge_features_antisymmetric():
    rng = np.random.default_rng(12)
    g = make_grid(3, 4)
    w = init_weights(3, 2, 0.3, False, rng)
    e = np.repeat(rng.normal(size=(g.num_edges, 2)), 2, axis=0)
    e[1::2] *= -1.0
    state = FeatureState(rng.normal(size=(g.num_nodes, 3)), e)
    for _ in range(20):
        state = lindb_step(g, w, state)
        assert np.allclose(state.edge_features[0::2], -state.edge_features[1::2], atol=1e-12)


def test_mpnn_linear_hand_traced_on_path():
    g = make_path(3)
    one = np.array([[1.0]])
    w = MPNNWeights(W_n=one, W_e=one, beta_n=np.zeros((1, 1)))
    out = mpnn_linear_step(g, w, FeatureState(np.array([[1.0], [0.0], [0.0]]), np.zeros((4, 1))))
    assert np.array_equal(out.node_features, [[2.0], [-1.0], [0.0]])
    assert np.array_equal(out.edge_features, [[1.0], [-1.0], [0.0], [0.0]])


def test_mpnn_sigma_edge_nonlinearity_hand_traced_on_path():
    g = make_path(3)
    one = np.array([[1.0]])
    w = MPNNWeights(W_n=one, W_e=one, beta_n=np.zeros((1, 1)))
    x = np.array([[1.0], [0.0], [0.0]])
    out = mpnn_sigma_step(g, w, FeatureState(x, np.zeros((4, 1))), edge_nonlinearity=True)
    assert np.array_equal(out.edge_features, [[1.0], [0.0], [0.0], [0.0]])
    assert np.array_equal(out.node_features, [[1.0], [0.0], [0.0]])


def test_zero_weights_are_identity():
    rng = np.random.default_rng(0)
    g = make_random_connected(7, rng)
    s = _random_state(g, 3, 2, rng)
    w = DBWeights(np.zeros((3, 2)), np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((2, 2)))
    out = lindb_step(g, w, s)
    assert np.array_equal(out.node_features, s.node_features)
    assert np.array_equal(out.edge_features, s.edge_features)


def test_lindb_is_linear():
    rng = np.random.default_rng(1)
    g = make_grid(3, 4)
    w = init_weights(3, 2, 0.3, False, rng)
    a, b = _random_state(g, 3, 2, rng), _random_state(g, 3, 2, rng)
    combined = FeatureState(a.node_features + 2 * b.node_features, a.edge_features + 2 * b.edge_features)
    lhs = lindb_step(g, w, combined)
    ra, rb = lindb_step(g, w, a), lindb_step(g, w, b)
    assert np.allclose(lhs.node_features, ra.node_features + 2 * rb.node_features, atol=1e-12)
    assert np.allclose(lhs.edge_features, ra.edge_features + 2 * rb.edge_features, atol=1e-12)


def test_lindb_shape_errors():
    g = make_path(3)
    w = init_weights(2, 2, 0.1, True, np.random.default_rng(0))
    with pytest.raises(DimensionMismatchError):
        lindb_step(g, w, FeatureState.zeros(g, 3, 2))
    with pytest.raises(DimensionMismatchError):
        lindb_step(g, w, FeatureState(np.zeros((3, 2)), np.zeros((3, 2))))


def test_db1s_identity_nonlinearity_matches_lindb():
    rng = np.random.default_rng(2)
    g = make_path(5)
    w = init_weights(2, 2, 0.2, True, rng)
    s = _random_state(g, 2, 2, rng)
    a = db1s_step(g, w, s, 0.0, False, None, "identity")
    b = lindb_step(g, w, s)
    assert np.array_equal(a.node_features, b.node_features)


def test_db1s_eval_mode_ignores_dropout():
    rng = np.random.default_rng(3)
    g = make_path(5)
    w = init_weights(2, 2, 0.2, True, rng)
    s = _random_state(g, 2, 2, rng)
    a = db1s_step(g, w, s, 0.5, False, None)
    b = db1s_step(g, w, s, 0.0, False, None)
    assert np.array_equal(a.node_features, b.node_features)


def test_db1s_dropout_is_seeded():
    g = make_path(6)
    w = init_weights(3, 3, 0.2, True, np.random.default_rng(4))
    s = _random_state(g, 3, 3, np.random.default_rng(5))
    a = db1s_step(g, w, s, 0.3, True, np.random.default_rng(9))
    b = db1s_step(g, w, s, 0.3, True, np.random.default_rng(9))
    assert np.array_equal(a.node_features, b.node_features)
    assert np.array_equal(a.edge_features, b.edge_features)


def test_db1s_dropout_needs_rng():
    g = make_path(3)
    w = init_weights(1, 1, 0.1, True, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        db1s_step(g, w, FeatureState.zeros(g, 1, 1), 0.5, True, None)


def test_dropout_mask_scaling():
    mask = dropout_mask(np.random.default_rng(0), (2000,), 0.25)
    assert set(np.unique(mask)) <= {0.0, 1.0 / 0.75}
    assert abs(mask.mean() - 1.0) < 0.1


@pytest.mark.parametrize("rate", [-0.1, 1.0])
def test_invalid_dropout_rate(rate):
    with pytest.raises(ConfigError):
        StepperSpec("db1s", dropout_rate=rate)


def test_mpnn_from_db_weights():
    w = init_weights(2, 3, 0.1, False, np.random.default_rng(0))
    m = MPNNWeights.from_db(w)
    assert m.W_n is w.W_ne and m.W_e is w.W_en and m.beta_n is w.W_beta_n


def test_mpnn_linear_is_diffusion_for_oscillatory_scalar_weights():
    g = make_path(4)
    a = 0.3
    w = MPNNWeights.from_db(_scalar_weights(-a, a))
    x = np.array([[0.0], [1.0], [0.0], [0.0]])
    out = mpnn_linear_step(g, w, FeatureState(x, np.zeros((6, 1))))
    lap = g.laplacian_matrix.toarray()
    assert np.allclose(out.node_features, x - a * a * (lap @ x), atol=1e-14)


def test_mpnn_sigma_is_nonnegative():
    rng = np.random.default_rng(6)
    g = make_random_connected(8, rng)
    w = MPNNWeights.from_db(init_weights(3, 3, 0.5, False, rng))
    out = mpnn_sigma_step(g, w, _random_state(g, 3, 3, rng), edge_nonlinearity=True)
    assert np.all(out.node_features >= 0)
    assert np.all(out.edge_features >= 0)


def test_oscillatory_init_constraints():
    w = init_weights(4, 3, 0.1, True, np.random.default_rng(7))
    assert w.is_oscillatory()
    assert np.array_equal(w.W_ne, -w.W_en.T)
    assert np.allclose(np.diag(w.W_beta_n), 0.0)
    assert not init_weights(4, 3, 0.1, False, np.random.default_rng(7)).is_oscillatory()


def test_init_weights_spread_sets_sample_std():
    rng = np.random.default_rng(13)
    draws = np.concatenate(
        [init_weights(4, 4, 0.1, False, rng).W_en.ravel() for _ in range(100)]
    )
    assert draws.size >= 1000
    assert 0.05 <= draws.std() <= 0.2
    assert abs(draws.std() - 0.1) < 0.01


def test_init_weights_rejects_bad_arguments():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        init_weights(2, 2, 0.0, True, rng)
    with pytest.raises(InvalidSizeError):
        init_weights(0, 2, 0.1, True, rng)


def test_spreading_initial_state_fills_first_column():
    g = make_grid(5, 20)
    s = spreading_initial_state(g, 4, 4, np.random.default_rng(0))
    active = np.flatnonzero(np.any(s.node_features != 0, axis=1))
    assert list(active) == [0, 20, 40, 60, 80]
    assert not np.any(s.edge_features)


def test_spreading_initial_state_needs_layout():
    g = make_random_connected(6, np.random.default_rng(0))
    with pytest.raises(InvalidGraphError):
        spreading_initial_state(g, 1, 1, np.random.default_rng(0))


def test_evolve_records_diagnostics():
    rng = np.random.default_rng(8)
    g = make_grid(3, 5)
    w = init_weights(2, 2, 0.1, True, rng)
    s0 = spreading_initial_state(g, 2, 2, rng)
    traj = evolve(g, "lindb", w, s0, 10)
    assert traj.num_steps == 10
    assert traj.activations.shape == (11, 15)
    assert len(traj.states) == 11
    assert np.array_equal(traj.states[0].node_features, s0.node_features)
    frame = traj.activation_frame()
    assert list(frame.columns) == ["step", "node_id", "activation"]
    assert len(frame) == 11 * 15


def test_evolve_does_not_mutate_initial_state():
    rng = np.random.default_rng(9)
    g = make_path(6)
    w = init_weights(2, 2, 0.3, False, rng)
    s0 = point_initial_state(g, 2, 2, rng)
    before = s0.node_features.copy()
    evolve(g, "db1s", w, s0, 5)
    assert np.array_equal(s0.node_features, before)


def test_evolve_zero_state_is_degenerate():
    g = make_path(4)
    w = init_weights(1, 1, 0.1, True, np.random.default_rng(0))
    traj = evolve(g, "lindb", w, FeatureState.zeros(g, 1, 1), 3)
    assert traj.degenerate.all()
    assert np.array_equal(traj.dirichlet, np.zeros(4))


def test_evolve_overflow_reports_step():
    g = make_path(3)
    w = _scalar_weights(0.0, 0.0, b_n=1e200)
    s0 = FeatureState(np.ones((3, 1)), np.zeros((4, 1)))
    with pytest.raises(NumericOverflowError) as info:
        evolve(g, "lindb", w, s0, 5)
    assert info.value.step == 2


def test_evolve_rejects_zero_steps():
    g = make_path(3)
    w = _scalar_weights(0.0, 0.0)
    with pytest.raises(InvalidSizeError):
        evolve(g, "lindb", w, FeatureState.zeros(g, 1, 1), 0)


def test_stepper_labels():
    assert StepperSpec("db1s", nonlinearity="relu").label == "db1s_relu"
    assert StepperSpec("mpnn_sigma", edge_nonlinearity=True).label == "mpnn_sigma_edge"
    assert StepperSpec("lindb").label == "lindb"
    with pytest.raises(ConfigError):
        StepperSpec("gat")


def test_wave_crossing_steps():
    w = _scalar_weights(-0.5, 0.5)
    assert wave_crossing_steps(w, 45.0, 40000) == 90
    assert wave_crossing_steps(w, 45.0, 50) == 50
    assert wave_crossing_steps(_scalar_weights(0.0, 0.0), 45.0, 50) == 50


def _db_front_slope(seed):
    rng = np.random.default_rng(seed)
    g = make_path(40)
    w = init_weights(1, 1, 0.01, True, rng)
    s0 = point_initial_state(g, 1, 1, rng)
    steps = wave_crossing_steps(w, 45.0, 40000)
    traj = evolve(g, "lindb", w, s0, steps, record_states=False)
    return front_slope(front_arrival(traj, 0.01))


def _mpnn_front_slope(seed):
    # x <- x - a^2 L x; a^2 < 0.5 keeps the update stable and positive
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.2, 0.3)
    g = make_path(60)
    w = MPNNWeights.from_db(_scalar_weights(-a, a))
    s0 = point_initial_state(g, 1, 1, rng)
    traj = evolve(g, "mpnn_linear", w, s0, 3000, record_states=False)
    return front_slope(front_arrival(traj, 0.01))


def test_ballistic_db_versus_diffusive_mpnn():
    db_slopes = [_db_front_slope(seed) for seed in range(10)]
    mpnn_slopes = [_mpnn_front_slope(seed) for seed in range(10)]
    assert sum(0.8 <= slope <= 1.3 for slope in db_slopes) >= 8
    # diffusive arrival steps grow like index squared
    assert all(np.isfinite(slope) and slope >= 1.6 for slope in mpnn_slopes)
