import math

import numpy as np
import pytest
from conftest import entity_graph, full_view, random_view

from graphmend.errors import CheckpointError, TrainingError
from graphmend.gnn import (
    BCE_EPS, ModelConfig, TrainConfig, backward, bce_loss, encode, init_model, load_checkpoint,
    pool, save_checkpoint, score, sigmoid, train,
)
from graphmend.graph import ENTITY, FACT, SYNONYM, GraphIndex, Node
from graphmend.sampler import SubgraphView

SMALL = ModelConfig(input_dim=8, hidden_dim=6, classifier_dim=4, seed=3)


def _zero_model(cfg):
    m = init_model(cfg)
    for v in m.params.values():
        v[...] = 0.0
    return m


def test_default_parameter_count():
    m = init_model(ModelConfig())
    # 64*256 + 256 + 2*3*256*256 + (512*64 + 64) + (64 + 1)
    assert m.parameter_count() == 16384 + 256 + 393216 + 32832 + 65 == 442753


def test_init_is_deterministic_and_finite():
    a, b = init_model(SMALL), init_model(SMALL)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
        assert np.all(np.isfinite(a.params[k]))
        bound = 1 / math.sqrt(SMALL.fan_in(k))
        assert np.all(np.abs(a.params[k]) <= bound)


def test_isolated_node_zero_parameters():
    g = GraphIndex(8)
    g.add_node(Node("a", ENTITY, "a", np.arange(8.0)))
    view = SubgraphView(g, "a", ("a",), ())
    h = encode(_zero_model(SMALL), view)
    np.testing.assert_array_equal(h["a"], np.zeros(6))


def test_identity_configuration_passes_nonnegative_features():
    cfg = ModelConfig(input_dim=4, hidden_dim=4, classifier_dim=2)
    m = _zero_model(cfg)
    m.params["W_x"][...] = np.eye(4)
    m.params["W_rel"][:, 2] = np.eye(4)  # SelfLoop slot in both layers
    g = entity_graph([("a", "b", FACT, 1.0), ("b", "c", SYNONYM, 1.0)], d=4)
    for n in g.nodes.values():
        n.feature = np.abs(n.feature)
    h = encode(m, full_view(g, "a"))
    for n, vec in h.items():
        np.testing.assert_allclose(vec, g.nodes[n].feature, rtol=0, atol=1e-15)


def test_three_node_path_hand_oracle():
    cfg = ModelConfig(input_dim=2, hidden_dim=2, classifier_dim=2)
    m = _zero_model(cfg)
    m.params["W_x"][...] = np.eye(2)
    m.params["node_emb"][0] = [0.5, -0.5]
    m.params["W_rel"][0, 0] = np.eye(2)
    m.params["W_rel"][0, 2] = [[0, 1], [1, 0]]
    m.params["W_rel"][1, 0] = [[1, -1], [0, 1]]
    m.params["W_rel"][1, 2] = 0.5 * np.eye(2)
    g = entity_graph([("A", "B", FACT, 1.0), ("B", "C", FACT, 1.0)], d=2)
    for name, x in (("A", [1, 0]), ("B", [0, 1]), ("C", [1, 1])):
        g.nodes[name].feature = np.array(x, dtype=float)
    h = encode(m, full_view(g, "A"))
    # worked by hand: H0 = X + e; H1 = relu(A H0 + H0 P); H2 = relu(A H1 W + H1 / 2)
    expected = {"A": [3.5, 0.0], "B": [2.75, 3.25], "C": [4.0, 0.0]}
    for n, vec in expected.items():
        np.testing.assert_allclose(h[n], vec, atol=1e-12)


def test_pool():
    v = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(pool([v]), np.concatenate([v, v]))
    np.testing.assert_array_equal(pool([np.zeros(3), np.ones(3)]), [0.5, 0.5, 0.5, 1, 1, 1])
    rng = np.random.default_rng(0)
    hs = rng.normal(size=(7, 5))
    np.testing.assert_allclose(pool(hs), pool(hs[rng.permutation(7)]), rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        pool([])


def test_sigmoid_and_score():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(math.log(3)) == pytest.approx(0.75, abs=1e-15)
    grid = [sigmoid(a) for a in np.linspace(-30, 30, 601)]
    assert all(x < y for x, y in zip(grid, grid[1:]))
    assert sigmoid(-1000.0) == 0.0 and sigmoid(1000.0) == 1.0
    m = _zero_model(SMALL)
    view = random_view(np.random.default_rng(0), 5, 6)
    assert score(m, view) == (0.0, 0.5)


def test_bce_values():
    assert bce_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert bce_loss(0.9, 1) == pytest.approx(0.105361, abs=1e-6)
    assert bce_loss(1e-300, 0) == pytest.approx(0.0, abs=1e-6)
    assert bce_loss(0.0, 1) == pytest.approx(-math.log(BCE_EPS))
    assert bce_loss(0.3, 0) >= 0


def _finite_difference_check(model, view, y, rng, n_params, step=1e-5):
    grads, _, _ = backward(model, view, y)
    worst = 0.0
    names = list(model.params)
    for _ in range(n_params):
        name = names[int(rng.integers(len(names)))]
        p = model.params[name]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        orig = p[idx]
        p[idx] = orig + step
        up = bce_loss(score(model, view)[1], y)
        p[idx] = orig - step
        down = bce_loss(score(model, view)[1], y)
        p[idx] = orig
        numeric = (up - down) / (2 * step)
        analytic = grads[name][idx]
        err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-7)
        worst = max(worst, err)
    return worst


def test_gradient_matches_finite_differences_on_four_nodes():
    rng = np.random.default_rng(11)
    view = random_view(rng, 4, 5)
    m = init_model(SMALL)
    for y in (0, 1):
        assert _finite_difference_check(m, view, y, rng, 60) < 1e-4


def test_saturated_loss_has_zero_gradient():
    m = init_model(SMALL)
    m.params["b_out"][0] = -200.0
    view = random_view(np.random.default_rng(2), 5, 6)
    grads, loss, _ = backward(m, view, 0)
    assert loss == pytest.approx(-math.log(1 - BCE_EPS))
    assert all(np.all(g == 0) for g in grads.values())


def test_duplicated_view_doubles_gradient():
    m = init_model(SMALL)
    view = random_view(np.random.default_rng(4), 6, 8)
    single, _, _ = backward(m, view, 1)
    acc = {k: np.zeros_like(v) for k, v in m.params.items()}
    for _ in range(2):
        g, _, _ = backward(m, view, 1)
        for k in acc:
            acc[k] += g[k]
    for k in acc:
        np.testing.assert_array_equal(acc[k], 2 * single[k])


def test_permutation_invariance_is_bitwise():
    rng = np.random.default_rng(5)
    m = init_model(SMALL)
    for _ in range(20):
        view = random_view(rng, int(rng.integers(3, 9)), 12)
        shuffled = SubgraphView(
            view.graph, view.root,
            tuple(view.nodes[i] for i in rng.permutation(len(view.nodes))),
            tuple(view.edges[i] for i in rng.permutation(len(view.edges))),
        )
        assert score(m, view) == score(m, shuffled)


def test_dimension_mismatch():
    m = init_model(ModelConfig(input_dim=5, hidden_dim=4, classifier_dim=2))
    with pytest.raises(ValueError, match="dim"):
        score(m, random_view(np.random.default_rng(0), 4, 4))


def _labeled_views(n, seed=0):
    rng = np.random.default_rng(seed)
    views = []
    for i in range(n):
        v = random_view(rng, int(rng.integers(4, 8)), 10, synonym_share=0.6 * (i % 2))
        views.append(v.with_label(i % 2))
    return views


def test_training_is_deterministic_and_learns():
    views = _labeled_views(16)
    cfg = TrainConfig(epochs=15, learning_rate=1e-2, batch_size=4, seed=1)
    r1 = train(init_model(SMALL), [views] * 15, cfg)
    r2 = train(init_model(SMALL), [views] * 15, cfg)
    assert r1.losses == r2.losses
    assert r1.losses[-1] < r1.losses[0]


def test_zero_learning_rate_keeps_parameters():
    views = _labeled_views(8)
    m = init_model(SMALL)
    before = m.copy()
    result = train(m, [views] * 3, TrainConfig(learning_rate=0.0, batch_size=3))
    for k in m.params:
        np.testing.assert_array_equal(m.params[k], before.params[k])
    # same views every epoch; only the shuffled summation order differs
    assert result.losses == pytest.approx([result.losses[0]] * 3, rel=1e-12)


def test_empty_epoch_is_an_error():
    with pytest.raises(TrainingError):
        train(init_model(SMALL), [[]], TrainConfig())


def test_checkpoint_round_trip(tmp_path):
    m = init_model(SMALL)
    path = tmp_path / "m.npz"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.config == m.config
    for k in m.params:
        np.testing.assert_array_equal(back.params[k], m.params[k])
    view = random_view(np.random.default_rng(0), 6, 8)
    assert score(back, view) == score(m, view)


def test_checkpoint_of_seeded_init_matches_reinit(tmp_path):
    path = tmp_path / "seven.npz"
    save_checkpoint(init_model(ModelConfig(input_dim=8, hidden_dim=6, classifier_dim=4, seed=7)), path)
    again = init_model(ModelConfig(input_dim=8, hidden_dim=6, classifier_dim=4, seed=7))
    loaded = load_checkpoint(path)
    for k in again.params:
        np.testing.assert_array_equal(loaded.params[k], again.params[k])


def test_checkpoint_wrong_dimension(tmp_path):
    path = tmp_path / "m.npz"
    save_checkpoint(init_model(SMALL), path)
    with pytest.raises(CheckpointError, match="mismatch"):
        load_checkpoint(path, expected_input_dim=64)


def test_checkpoint_garbage(tmp_path):
    path = tmp_path / "junk.npz"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
