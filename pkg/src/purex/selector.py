"""Q-learning sentence selector.

A single agent serves all relation types. For one bag and one query
relation it visits the sentences in order and labels each positive or
unlabeled; the state is [x_q, r_e, x_pos] where x_pos is the running
mean of the embeddings already selected positive. The episode reward is
the probability the extractor's positive head assigns to the query
relation on the selected positive bag, and with zero immediate reward
and discount 1 it becomes the Q target of every transition in the
episode. The agent trains from a replay buffer of past transitions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .errors import ConfigError
from .numkernel import Parameter, RngState, Tensor

# Q-vector slots: index 0 scores the "positive" action, index 1 "unlabeled".
ACTION_POSITIVE = 0
ACTION_UNLABELED = 1
ACTION_NAMES = {ACTION_POSITIVE: "positive", ACTION_UNLABELED: "unlabeled"}

GREEDY = "greedy"
EPSILON = "epsilon"


@dataclass
class QNetParams:
    """Two-layer Q-network: tanh hidden layer, linear output of size 2."""

    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter

    def all(self):
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def state_dim(self) -> int:
        return self.w1.value.shape[1]


def init_qnet(state_dim: int, hidden: int, rng: RngState, dtype=np.float32) -> QNetParams:
    gen = rng.generator
    s1 = np.sqrt(6.0 / (state_dim + hidden))
    s2 = np.sqrt(6.0 / (hidden + 2))
    return QNetParams(
        w1=Parameter(gen.uniform(-s1, s1, size=(hidden, state_dim)).astype(dtype), "q_w1"),
        b1=Parameter(np.zeros(hidden, dtype=dtype), "q_b1"),
        w2=Parameter(gen.uniform(-s2, s2, size=(2, hidden)).astype(dtype), "q_w2"),
        b2=Parameter(np.zeros(2, dtype=dtype), "q_b2"),
    )


@dataclass
class StateRep:
    """Selector state: current sentence, query relation, selected-so-far mean.

    The relation embedding is looked up from the live table whenever the
    state is evaluated, so replayed transitions see the current r_e.
    """

    x_q: np.ndarray
    relation_id: int
    x_pos: np.ndarray


@dataclass
class Transition:
    state: StateRep
    action: int
    target_value: float = 0.0


@dataclass
class SelectionResult:
    """Per-relation split of a bag: indices of B+ and Bu partition the bag."""

    positive: list[int]
    unlabeled: list[int]
    transitions: list[Transition] = field(default_factory=list)


class ReplayBuffer:
    """Bounded FIFO of transitions with seeded minibatch sampling."""

    def __init__(self, capacity: int = 10000):
        if capacity < 1:
            raise ConfigError(f"replay capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.items: deque[Transition] = deque(maxlen=capacity)

    def extend(self, transitions) -> None:
        self.items.extend(transitions)

    def sample(self, n: int, rng: RngState) -> list[Transition]:
        # without replacement within a minibatch
        idx = rng.generator.choice(len(self.items), size=n, replace=False)
        return [self.items[i] for i in idx]

    def __len__(self) -> int:
        return len(self.items)


def build_state(x_q: np.ndarray, relation_id: int, selected_embeddings) -> StateRep:
    """State for one decision; x_pos is the mean of selections so far."""
    selected = list(selected_embeddings)
    if selected:
        x_pos = np.mean(selected, axis=0, dtype=x_q.dtype)
    else:
        x_pos = np.zeros_like(x_q)
    return StateRep(x_q=x_q, relation_id=relation_id, x_pos=x_pos)


def state_vector(state: StateRep, rel_emb: Parameter | None) -> np.ndarray:
    parts = [state.x_q]
    if rel_emb is not None:
        parts.append(rel_emb.value[state.relation_id])
    parts.append(state.x_pos)
    return np.concatenate(parts)


def q_values(state: StateRep, qnet: QNetParams, rel_emb: Parameter | None) -> np.ndarray:
    """Detached Q(s, .) forward used for action selection."""
    s = state_vector(state, rel_emb)
    h = np.tanh(qnet.w1.value @ s + qnet.b1.value)
    return qnet.w2.value @ h + qnet.b2.value


def act(q: np.ndarray, mode: str, rng: RngState | None = None,
        epsilon: float = 0.0) -> int:
    """Greedy action over the two Q-values; exact ties go to unlabeled."""
    if mode == EPSILON:
        if rng is None:
            raise ConfigError("epsilon-greedy action needs an RngState")
        if rng.generator.random() < epsilon:
            return int(rng.generator.integers(2))
    elif mode != GREEDY:
        raise ConfigError(f"unknown action mode {mode!r}")
    return ACTION_POSITIVE if q[ACTION_POSITIVE] > q[ACTION_UNLABELED] else ACTION_UNLABELED


def select_bag(bag_embeddings, relation_id: int, qnet: QNetParams,
               rel_emb: Parameter | None, mode: str = GREEDY,
               rng: RngState | None = None, epsilon: float = 0.0,
               record: bool = False, order=None) -> SelectionResult:
    """Split a bag into (B+, Bu) for one query relation.

    Sentences are visited in stored bag order (or in `order` when the
    order-sensitivity flag supplies one); each positive decision updates
    x_pos for the following states. With `record`, transitions are
    collected for replay (targets filled in by the episode reward).
    """
    positive, unlabeled, transitions = [], [], []
    selected = []
    seq = order if order is not None else range(len(bag_embeddings))
    for i in seq:
        x_q = bag_embeddings[i]
        state = build_state(x_q, relation_id, selected)
        action = act(q_values(state, qnet, rel_emb), mode, rng, epsilon)
        if action == ACTION_POSITIVE:
            positive.append(i)
            selected.append(x_q)
        else:
            unlabeled.append(i)
        if record:
            transitions.append(Transition(state=state, action=action))
    positive.sort()
    unlabeled.sort()
    return SelectionResult(positive=positive, unlabeled=unlabeled, transitions=transitions)


def episode_reward(positive_embeddings, relation_id: int, W: Parameter,
                   b: Parameter) -> float:
    """R(r, B) = P(r | B+) from the shared positive-head scores.

    An empty positive bag is scored on the zero bag embedding, i.e. on
    the bias alone.
    """
    embs = list(positive_embeddings)
    if embs:
        emb = np.mean(embs, axis=0)
        scores = W.value @ emb + b.value
    else:
        scores = b.value.copy()
    return float(np.exp(nk.log_softmax_np(scores))[relation_id])


def finalize_transitions(transitions, reward: float) -> None:
    """Collapsed Q target: zero immediate reward and discount 1 make the
    episode reward the target of every transition in the episode."""
    for t in transitions:
        t.target_value = float(reward)


def q_forward_tape(states, qnet: QNetParams,
                   rel_emb: Parameter | None) -> Tensor:
    """Tape forward of a state minibatch, returning the [B, 2] Q matrix."""
    x_q = nk.tensor(np.stack([s.x_q for s in states]))
    x_pos = nk.tensor(np.stack([s.x_pos for s in states]))
    parts = [x_q]
    if rel_emb is not None:
        parts.append(nk.lookup(rel_emb, [s.relation_id for s in states]))
    parts.append(x_pos)
    h = nk.tanh_act(nk.linear_rows(nk.hconcat(parts), qnet.w1, qnet.b1))
    return nk.linear_rows(h, qnet.w2, qnet.b2)


def q_update(buffer: ReplayBuffer, minibatch_size: int, lr: float,
             qnet: QNetParams, rel_emb: Parameter | None,
             rng: RngState) -> float | None:
    """One replay step on the selector parameters only.

    Returns the minibatch MSE, or None (skip) while the buffer holds
    fewer than `minibatch_size` transitions.
    """
    if len(buffer) < minibatch_size:
        return None
    batch = buffer.sample(minibatch_size, rng)
    actions = [t.action for t in batch]
    targets = [t.target_value for t in batch]
    q = q_forward_tape([t.state for t in batch], qnet, rel_emb)
    loss = nk.picked_mse(q, actions, targets)
    nk.backward(loss)
    for p in qnet.all():
        nk.adam_step(p, lr)
    if rel_emb is not None:
        nk.adam_step(rel_emb, lr)
    return loss.item()
