import math

import numpy as np
import pytest

from purex.errors import ConfigError
from purex.numkernel import Parameter, RngState
from purex.selector import (ACTION_POSITIVE, ACTION_UNLABELED, EPSILON, GREEDY,
                            QNetParams, ReplayBuffer, Transition, act, build_state,
                            episode_reward, finalize_transitions, init_qnet,
                            q_forward_tape, q_update, q_values, select_bag,
                            state_vector)


def const_qnet(state_dim, q0, q1, hidden=2):
    """QNet that outputs the same two Q-values for every state."""
    return QNetParams(
        w1=Parameter(np.zeros((hidden, state_dim)), "q_w1"),
        b1=Parameter(np.zeros(hidden), "q_b1"),
        w2=Parameter(np.zeros((2, hidden)), "q_w2"),
        b2=Parameter(np.array([q0, q1], dtype=np.float64), "q_b2"),
    )


def first_coord_qnet(state_dim):
    """Positive iff the sentence embedding's first coordinate is positive."""
    w1 = np.zeros((1, state_dim))
    w1[0, 0] = 0.5
    return QNetParams(
        w1=Parameter(w1, "q_w1"),
        b1=Parameter(np.zeros(1), "q_b1"),
        w2=Parameter(np.array([[1.0], [-1.0]]), "q_w2"),
        b2=Parameter(np.zeros(2), "q_b2"),
    )


# ---------------------------------------------------------------------------
# state construction


def test_build_state_no_selection_gives_zero_mean():
    x = np.array([1.0, 2.0])
    st = build_state(x, 1, [])
    assert np.array_equal(st.x_pos, [0.0, 0.0])


def test_build_state_single_selection():
    s = np.array([0.5, -0.5])
    st = build_state(np.zeros(2), 1, [s])
    assert np.array_equal(st.x_pos, s)


def test_build_state_mean_of_two():
    s1, s2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    st = build_state(np.zeros(2), 1, [s1, s2])
    assert np.array_equal(st.x_pos, [0.5, 0.5])


def test_state_vector_with_and_without_relation():
    rel = Parameter(np.arange(6, dtype=np.float64).reshape(2, 3), "rel_emb")
    st = build_state(np.ones(4), 1, [])
    full = state_vector(st, rel)
    assert full.shape == (4 + 3 + 4,)
    assert np.array_equal(full[4:7], [3.0, 4.0, 5.0])
    assert state_vector(st, None).shape == (8,)  # Baseline-SR width


# ---------------------------------------------------------------------------
# actions


def test_act_greedy_prefers_higher_q():
    assert act(np.array([0.9, 0.1]), GREEDY) == ACTION_POSITIVE
    assert act(np.array([0.1, 0.9]), GREEDY) == ACTION_UNLABELED


def test_act_tie_goes_unlabeled():
    assert act(np.array([0.4, 0.4]), GREEDY) == ACTION_UNLABELED


def test_act_epsilon_one_is_uniform():
    rng = RngState(6)
    q = np.array([5.0, -5.0])
    n = 10000
    pos = sum(act(q, EPSILON, rng, epsilon=1.0) == ACTION_POSITIVE for _ in range(n))
    assert abs(pos / n - 0.5) < 0.02


def test_act_unknown_mode():
    with pytest.raises(ConfigError):
        act(np.array([0.0, 1.0]), "softmax")


# ---------------------------------------------------------------------------
# bag selection


def bag_embs(rows):
    return [np.asarray(r, dtype=np.float64) for r in rows]


def test_select_bag_always_positive_stub():
    embs = bag_embs([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    qnet = const_qnet(state_dim=4, q0=1.0, q1=0.0)
    res = select_bag(embs, 0, qnet, None)
    assert res.positive == [0, 1, 2]
    assert res.unlabeled == []


def test_select_bag_always_unlabeled_stub():
    embs = bag_embs([[1.0, 0.0], [0.0, 1.0]])
    qnet = const_qnet(state_dim=4, q0=0.0, q1=1.0)
    res = select_bag(embs, 0, qnet, None)
    assert res.positive == []
    assert res.unlabeled == [0, 1]


def test_select_bag_partitions_and_is_deterministic():
    gen = np.random.default_rng(0)
    embs = bag_embs(gen.normal(size=(6, 3)))
    qnet = init_qnet(state_dim=6, hidden=4, rng=RngState(1), dtype=np.float64)
    a = select_bag(embs, 0, qnet, None)
    b = select_bag(embs, 0, qnet, None)
    assert a.positive == b.positive and a.unlabeled == b.unlabeled
    assert sorted(a.positive + a.unlabeled) == list(range(6))
    assert not set(a.positive) & set(a.unlabeled)


def test_select_bag_oracle_q_recovers_planted_positives():
    # planted positives have +1 in the first embedding coordinate, noise -1
    truth = [True, False, True, True, False]
    embs = bag_embs([[1.0 if t else -1.0, 0.3] for t in truth])
    qnet = first_coord_qnet(state_dim=4)
    res = select_bag(embs, 0, qnet, None)
    assert res.positive == [i for i, t in enumerate(truth) if t]


def test_select_bag_visit_order_argument():
    embs = bag_embs([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    qnet = first_coord_qnet(state_dim=4)
    res = select_bag(embs, 0, qnet, None, order=[2, 0, 1])
    assert res.positive == [0, 2]  # indices reported in stored bag order


def test_select_bag_records_transitions_with_running_mean():
    embs = bag_embs([[1.0, 0.0], [1.0, 2.0], [-1.0, 4.0]])
    qnet = first_coord_qnet(state_dim=4)
    res = select_bag(embs, 0, qnet, None, record=True)
    ts = res.transitions
    assert len(ts) == 3
    assert np.array_equal(ts[0].state.x_pos, [0.0, 0.0])
    assert np.array_equal(ts[1].state.x_pos, [1.0, 0.0])
    assert np.array_equal(ts[2].state.x_pos, [1.0, 1.0])  # mean of first two


# ---------------------------------------------------------------------------
# reward


def test_episode_reward_uniform_over_53():
    W = Parameter(np.zeros((53, 4)), "W")
    b = Parameter(np.zeros(53), "b")
    r = episode_reward([np.ones(4)], 7, W, b)
    assert math.isclose(r, 1.0 / 53.0, rel_tol=0, abs_tol=1e-12)


def test_episode_reward_large_margin_approaches_one():
    W = Parameter(np.zeros((5, 2)), "W")
    b = Parameter(np.array([0.0, 200.0, 0.0, 0.0, 0.0]), "b")
    assert episode_reward([], 1, W, b) > 1.0 - 1e-12


def test_episode_reward_hand_case():
    # empty B+ scores the zero embedding: o+ = b = [1, 0, 0], r = 0
    W = Parameter(np.zeros((3, 2)), "W")
    b = Parameter(np.array([1.0, 0.0, 0.0]), "b")
    r = episode_reward([], 0, W, b)
    assert math.isclose(r, math.e / (math.e + 2.0), rel_tol=1e-12)


def test_episode_reward_uses_mean_of_positive_bag():
    W = Parameter(np.array([[1.0, 0.0], [0.0, 1.0]]), "W")
    b = Parameter(np.zeros(2), "b")
    embs = [np.array([2.0, 0.0]), np.array([0.0, 2.0])]
    r = episode_reward(embs, 0, W, b)
    assert math.isclose(r, 0.5)  # mean embedding scores equally


def test_q_target_collapse_over_random_episodes():
    """gamma=1 and zero immediate reward: every stored target equals the
    episode reward exactly."""
    rng = RngState(3)
    qnet = init_qnet(state_dim=6, hidden=4, rng=RngState(4), dtype=np.float64)
    W = Parameter(rng.generator.normal(size=(4, 3)), "W")
    b = Parameter(np.zeros(4), "b")
    for ep in range(100):
        n = int(rng.generator.integers(1, 7))
        embs = bag_embs(rng.generator.normal(size=(n, 3)))
        rel = int(rng.generator.integers(0, 4))
        res = select_bag(embs, rel, qnet, None, EPSILON, rng, epsilon=0.5, record=True)
        reward = episode_reward([embs[i] for i in res.positive], rel, W, b)
        finalize_transitions(res.transitions, reward)
        assert all(t.target_value == reward for t in res.transitions)


# ---------------------------------------------------------------------------
# replay buffer and q_update


def make_transition(gen, dim=2, target=0.5):
    st = build_state(gen.normal(size=dim), 0, [])
    return Transition(state=st, action=int(gen.integers(2)), target_value=target)


def test_replay_buffer_capacity_fifo():
    buf = ReplayBuffer(capacity=5)
    gen = np.random.default_rng(0)
    ts = [make_transition(gen, target=float(i)) for i in range(8)]
    buf.extend(ts)
    assert len(buf) == 5
    assert [t.target_value for t in buf.items] == [3.0, 4.0, 5.0, 6.0, 7.0]


def test_replay_sample_without_replacement():
    buf = ReplayBuffer(capacity=10)
    gen = np.random.default_rng(1)
    buf.extend([make_transition(gen, target=float(i)) for i in range(10)])
    batch = buf.sample(10, RngState(2))
    assert sorted(t.target_value for t in batch) == [float(i) for i in range(10)]


def test_q_update_skips_underfilled_buffer():
    buf = ReplayBuffer(capacity=10)
    qnet = init_qnet(4, 3, RngState(0), dtype=np.float64)
    assert q_update(buf, 5, 0.01, qnet, None, RngState(1)) is None


def test_q_update_zero_loss_leaves_values_unchanged():
    qnet = init_qnet(4, 3, RngState(5), dtype=np.float64)
    gen = np.random.default_rng(6)
    st = build_state(gen.normal(size=2), 0, [])
    q_now = q_values(st, qnet, None)
    buf = ReplayBuffer(10)
    buf.extend([Transition(state=st, action=0, target_value=float(q_now[0]))])
    before = {id(p): p.value.copy() for p in qnet.all()}
    loss = q_update(buf, 1, 0.01, qnet, None, RngState(7))
    assert loss == 0.0
    for p in qnet.all():
        assert np.array_equal(p.value, before[id(p)])


def test_q_update_single_transition_loss_is_squared_error():
    qnet = init_qnet(4, 3, RngState(8), dtype=np.float64)
    gen = np.random.default_rng(9)
    st = build_state(gen.normal(size=2), 0, [])
    q_now = float(q_values(st, qnet, None)[1])
    target = q_now + 0.3
    buf = ReplayBuffer(10)
    buf.extend([Transition(state=st, action=1, target_value=target)])
    loss = q_update(buf, 1, 0.001, qnet, None, RngState(10))
    assert math.isclose(loss, 0.3 ** 2, rel_tol=1e-9)


def test_q_update_converges_on_fixed_buffer():
    gen = np.random.default_rng(11)
    qnet = init_qnet(4, 8, RngState(12), dtype=np.float64)
    buf = ReplayBuffer(64)
    for _ in range(40):
        st = build_state(gen.normal(size=2), 0, [])
        buf.extend([Transition(state=st, action=int(gen.integers(2)),
                               target_value=float(gen.normal()))])
    rng = RngState(13)
    losses = [q_update(buf, 32, 0.01, qnet, None, rng) for _ in range(100)]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_q_update_tunes_relation_embedding():
    rel = Parameter(np.full((3, 2), 0.1), "rel_emb")
    qnet = init_qnet(6, 4, RngState(14), dtype=np.float64)
    gen = np.random.default_rng(15)
    buf = ReplayBuffer(16)
    for _ in range(8):
        st = build_state(gen.normal(size=2), 1, [])
        buf.extend([Transition(state=st, action=0, target_value=1.0)])
    before = rel.value.copy()
    q_update(buf, 8, 0.01, qnet, rel, RngState(16))
    assert not np.array_equal(rel.value[1], before[1])  # queried row moved
    assert np.array_equal(rel.value[2], before[2])      # untouched row intact


def test_q_forward_tape_matches_detached_path():
    qnet = init_qnet(6, 4, RngState(17), dtype=np.float64)
    rel = Parameter(np.random.default_rng(18).normal(size=(3, 2)), "rel_emb")
    gen = np.random.default_rng(19)
    states = [build_state(gen.normal(size=2), int(gen.integers(3)),
                          [gen.normal(size=2)]) for _ in range(5)]
    q_tape = q_forward_tape(states, qnet, rel).data
    q_np = np.stack([q_values(s, qnet, rel) for s in states])
    assert np.allclose(q_tape, q_np, atol=1e-12)
