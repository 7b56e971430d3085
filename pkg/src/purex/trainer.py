"""Training loops, model assembly, run configuration, and checkpoints.

The joint loop interleaves, per batch of bags: one epsilon-greedy
selection episode per bag (rewarded by the live positive head), one
replay update of the selector per episode, then greedy re-splits and a
single Adam step of the extractor + encoder on the combined loss.
Ablations only remove loss terms or state components; the code paths
are shared.

Checkpoints are a versioned binary container: a canonical-JSON header
(config, vocabulary, rng state, counters) followed by length-prefixed
named tensor blocks, little-endian. A save/load round trip reproduces
bit-identical subsequent training in 64-bit mode.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .corpus import Bag, PAD_ID, Vocabulary, load_embeddings
from .encoder import EncoderConfig, EncoderParams, encode_sentence
from .errors import ConfigError, DataError, NumericError
from .extractor import ExtractorParams, loss_pos, predict, score_bag, total_loss
from .numkernel import Parameter, RngState
from .selector import (ACTION_NAMES, ACTION_POSITIVE, EPSILON, GREEDY, QNetParams,
                       ReplayBuffer, SelectionResult, StateRep, Transition, act,
                       build_state, episode_reward, finalize_transitions, init_qnet,
                       q_update, q_values, select_bag)

CHECKPOINT_MAGIC = b"PUREXCKP"
CHECKPOINT_VERSION = 1

ABLATION_PU = "PU"
ABLATION_PU_COMB = "PU-COMB"
ABLATION_PU_COMB_UNL = "PU-COMB-UNL"
ABLATION_AVE = "Baseline-AVE"
ABLATION_SR = "Baseline-SR"


@dataclass(frozen=True)
class AblationSpec:
    use_selector: bool
    relation_in_state: bool
    use_unl_loss: bool
    use_bag_loss: bool
    allocate_unl_head: bool


ABLATIONS = {
    ABLATION_PU: AblationSpec(True, True, True, True, True),
    ABLATION_PU_COMB: AblationSpec(True, True, True, False, True),
    ABLATION_PU_COMB_UNL: AblationSpec(True, True, False, False, True),
    ABLATION_SR: AblationSpec(True, False, True, True, True),
    ABLATION_AVE: AblationSpec(False, False, False, False, False),
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    warm_start_epochs: int = 1
    batch_size: int = 50
    lr: float = 0.001
    alpha: float = 0.7
    beta: float = 0.1
    dropout: float = 0.5
    seed: int = 0
    ablation: str = ABLATION_PU
    encoder: EncoderConfig = EncoderConfig()
    precision: int = 32
    val_fraction: float = 0.1
    d_rel: int | None = None
    q_hidden: int = 128
    replay_capacity: int = 10000
    replay_minibatch: int = 32
    epsilon_start: float = 0.5
    epsilon_end: float = 0.05
    shuffle_bag_order: bool = False
    exclude_na_runner_up: bool = False

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of "
                              f"{', '.join(sorted(ABLATIONS))}")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.epochs < 0 or self.warm_start_epochs < 0 or self.batch_size < 1:
            raise ConfigError("bad epoch/batch settings")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")

    def enc(self) -> EncoderConfig:
        """Encoder config with the training dropout rate applied."""
        return dataclasses.replace(self.encoder, dropout_rate=self.dropout)

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        enc_obj = obj.pop("encoder", {})
        unknown = set(obj) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config key(s): {', '.join(sorted(unknown))}")
        enc_unknown = set(enc_obj) - {f.name for f in dataclasses.fields(EncoderConfig)}
        if enc_unknown:
            raise ConfigError(f"unknown encoder config key(s): {', '.join(sorted(enc_unknown))}")
        return cls(encoder=EncoderConfig(**enc_obj), **obj)


@dataclass
class Model:
    """All named parameters plus the pieces of configuration they imply."""

    config: TrainConfig
    vocab: Vocabulary
    relations: list[str]
    encoder: EncoderParams
    extractor: ExtractorParams
    rel_emb: Parameter | None
    qnet: QNetParams | None

    @property
    def enc_config(self) -> EncoderConfig:
        return self.config.enc()

    @property
    def ablation(self) -> AblationSpec:
        return ABLATIONS[self.config.ablation]

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def parameters(self) -> dict[str, Parameter]:
        emb = self.encoder.embeddings
        out = {"word_emb": emb.word, "pos_emb_head": emb.pos_head,
               "pos_emb_tail": emb.pos_tail, "conv_filters": self.encoder.filters,
               "W": self.extractor.W, "b": self.extractor.b}
        if self.extractor.W_unl is not None:
            out["W_unl"] = self.extractor.W_unl
            out["b_unl"] = self.extractor.b_unl
        if self.rel_emb is not None:
            out["rel_emb"] = self.rel_emb
        if self.qnet is not None:
            out.update({"q_w1": self.qnet.w1, "q_b1": self.qnet.b1,
                        "q_w2": self.qnet.w2, "q_b2": self.qnet.b2})
        return out


def build_model(config: TrainConfig, vocab: Vocabulary, relations: list[str],
                embeddings_path=None) -> Model:
    abl = ABLATIONS[config.ablation]
    enc_cfg = config.enc()
    dtype = config.dtype
    rng = RngState(config.seed).split("init")
    gen = rng.generator
    table = load_embeddings(embeddings_path, vocab, enc_cfg.d_word, enc_cfg.d_pos,
                            enc_cfg.pos_clip, rng, dtype)
    fan_in = enc_cfg.window * enc_cfg.d
    limit = math.sqrt(6.0 / (fan_in + enc_cfg.n_filters))
    filters = Parameter(
        gen.uniform(-limit, limit, size=(enc_cfg.n_filters, fan_in)).astype(dtype),
        "conv_filters")
    n_rel = len(relations)
    enc_dim = enc_cfg.enc_dim
    extractor = ExtractorParams(
        W=Parameter(np.zeros((n_rel, enc_dim), dtype=dtype), "W"),
        b=Parameter(np.zeros(n_rel, dtype=dtype), "b"),
    )
    if abl.allocate_unl_head:
        extractor.W_unl = Parameter(np.zeros((n_rel, enc_dim), dtype=dtype), "W_unl")
        extractor.b_unl = Parameter(np.zeros(n_rel, dtype=dtype), "b_unl")
    rel_emb = None
    qnet = None
    if abl.use_selector:
        d_rel = config.d_rel if config.d_rel is not None else enc_dim
        state_dim = 2 * enc_dim
        if abl.relation_in_state:
            rel_emb = Parameter(
                gen.uniform(-0.25, 0.25, size=(n_rel, d_rel)).astype(dtype), "rel_emb")
            state_dim += d_rel
        qnet = init_qnet(state_dim, config.q_hidden, rng, dtype)
    return Model(config=config, vocab=vocab, relations=relations,
                 encoder=EncoderParams(embeddings=table, filters=filters),
                 extractor=extractor, rel_emb=rel_emb, qnet=qnet)


# ---------------------------------------------------------------------------
# Training state and loops


@dataclass
class TrainState:
    rng: RngState
    buffer: ReplayBuffer
    epoch: int = 0
    global_episode: int = 0
    phase: str = "init"  # init -> joint -> final
    val_indices: list[int] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float | None = None
    best_values: dict[str, np.ndarray] | None = None


def init_train_state(config: TrainConfig, n_bags: int) -> TrainState:
    rng = RngState(config.seed)
    n_val = int(config.val_fraction * n_bags)
    if n_val > 0:
        val = sorted(rng.generator.choice(n_bags, size=n_val, replace=False).tolist())
    else:
        val = []
    return TrainState(rng=rng, buffer=ReplayBuffer(config.replay_capacity),
                      val_indices=val)


def _eval_embeddings(model: Model, bag: Bag):
    cfg = model.enc_config
    return [encode_sentence(inst, model.encoder, cfg, training=False).data
            for inst in bag.instances]


def _all_positive(bag: Bag) -> SelectionResult:
    return SelectionResult(positive=list(range(len(bag.instances))), unlabeled=[])


def _greedy_split(model: Model, embs, relation_id: int) -> SelectionResult:
    if model.qnet is None:
        return SelectionResult(positive=list(range(len(embs))), unlabeled=[])
    return select_bag(embs, relation_id, model.qnet, model.rel_emb, GREEDY)


def _epsilon_at(config: TrainConfig, episode: int, planned: int) -> float:
    # linear anneal over the first half of training, then flat
    span = max(1.0, planned / 2.0)
    if episode >= span:
        return config.epsilon_end
    return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * (episode / span)


def _extractor_step(model: Model, abl: AblationSpec) -> None:
    lr = model.config.lr
    emb = model.encoder.embeddings
    emb.word.grad[PAD_ID] = 0.0  # PAD word embedding stays fixed at zero
    step_list = [emb.word, emb.pos_head, emb.pos_tail, model.encoder.filters,
                 model.extractor.W, model.extractor.b]
    if model.extractor.W_unl is not None and (abl.use_unl_loss or abl.use_bag_loss):
        step_list += [model.extractor.W_unl, model.extractor.b_unl]
    for p in step_list:
        nk.adam_step(p, lr)


def _batch_loss(model: Model, bags, batch, splits, training: bool,
                rng: RngState | None):
    cfg = model.enc_config
    abl = model.ablation
    scored, labels = [], []
    for bi, split in zip(batch, splits):
        bag = bags[bi]
        tracked = [encode_sentence(inst, model.encoder, cfg, training, rng)
                   for inst in bag.instances]
        scored.append(score_bag(tracked, split, model.extractor, model.config.alpha))
        labels.append(bag.distant_label)
    return total_loss(scored, labels, model.config.beta,
                      use_unl=abl.use_unl_loss, use_bag=abl.use_bag_loss,
                      exclude_na_runner_up=model.config.exclude_na_runner_up)


def _validation_loss(model: Model, bags, val_indices) -> float | None:
    if not val_indices:
        return None
    total = 0.0
    for lo in range(0, len(val_indices), model.config.batch_size):
        batch = val_indices[lo:lo + model.config.batch_size]
        splits = []
        for bi in batch:
            if model.ablation.use_selector:
                embs = _eval_embeddings(model, bags[bi])
                splits.append(_greedy_split(model, embs, bags[bi].distant_label))
            else:
                splits.append(_all_positive(bags[bi]))
        terms, _ = _batch_loss(model, bags, batch, splits, training=False, rng=None)
        total += terms.total
    return total / len(val_indices)


def warm_start(model: Model, bags, state: TrainState, log: list | None = None) -> None:
    """Train encoder + positive head with every sentence treated as positive."""
    config = model.config
    if state.phase != "init":
        raise ConfigError(f"warm start must run before joint training (phase {state.phase!r})")
    train_idx = [i for i in range(len(bags)) if i not in set(state.val_indices)]
    for w in range(config.warm_start_epochs):
        order = np.array(train_idx, dtype=np.int64)
        state.rng.generator.shuffle(order)
        epoch_pos = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            splits = [_all_positive(bags[bi]) for bi in batch]
            scored, labels = [], []
            cfg = model.enc_config
            for bi, split in zip(batch, splits):
                tracked = [encode_sentence(inst, model.encoder, cfg, True, state.rng)
                           for inst in bags[bi].instances]
                scored.append(score_bag(tracked, split, model.extractor, config.alpha))
                labels.append(bags[bi].distant_label)
            node = loss_pos(scored, labels)
            if not math.isfinite(node.item()):
                raise NumericError("warm start: non-finite loss")
            epoch_pos += node.item()
            nk.backward(node)
            emb = model.encoder.embeddings
            emb.word.grad[PAD_ID] = 0.0
            for p in [emb.word, emb.pos_head, emb.pos_tail, model.encoder.filters,
                      model.extractor.W, model.extractor.b]:
                nk.adam_step(p, config.lr)
        if log is not None:
            log.append({"phase": "warm", "epoch": w + 1,
                        "l_pos": epoch_pos / max(1, len(train_idx))})
    state.phase = "joint"


def joint_train(model: Model, bags, state: TrainState, *, stop_after: int | None = None,
                log: list | None = None) -> None:
    """Joint selector/extractor training up to config.epochs.

    `stop_after` halts at an epoch boundary for checkpoint-resume; the
    best-validation parameter snapshot is only restored when the full
    epoch budget completes.
    """
    config = model.config
    abl = model.ablation
    if state.phase == "init":
        raise ConfigError("joint_train: run warm_start first (it also handles 0 epochs)")
    if state.phase == "final":
        return
    rng = state.rng
    val_set = set(state.val_indices)
    train_idx = [i for i in range(len(bags)) if i not in val_set]
    planned_episodes = max(1, len(train_idx) * config.epochs)
    target = config.epochs if stop_after is None else min(stop_after, config.epochs)

    while state.epoch < target:
        order = np.array(train_idx, dtype=np.int64)
        rng.generator.shuffle(order)
        rewards, q_losses = [], []
        sums = {"l_pos": 0.0, "l_unl": 0.0, "l_bag": 0.0, "total": 0.0}
        last_eps = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            eval_embs = {}
            if abl.use_selector:
                for bi in batch:
                    bag = bags[bi]
                    embs = _eval_embeddings(model, bag)
                    eval_embs[bi] = embs
                    eps = _epsilon_at(config, state.global_episode, planned_episodes)
                    last_eps = eps
                    visit = None
                    if config.shuffle_bag_order:
                        visit = rng.generator.permutation(len(embs)).tolist()
                    res = select_bag(embs, bag.distant_label, model.qnet, model.rel_emb,
                                     EPSILON, rng, eps, record=True, order=visit)
                    reward = episode_reward([embs[i] for i in res.positive],
                                            bag.distant_label,
                                            model.extractor.W, model.extractor.b)
                    finalize_transitions(res.transitions, reward)
                    state.buffer.extend(res.transitions)
                    state.global_episode += 1
                    rewards.append(reward)
                    ql = q_update(state.buffer, config.replay_minibatch, config.lr,
                                  model.qnet, model.rel_emb, rng)
                    if ql is not None:
                        q_losses.append(ql)
            splits = []
            for bi in batch:
                if abl.use_selector:
                    splits.append(_greedy_split(model, eval_embs[bi], bags[bi].distant_label))
                else:
                    splits.append(_all_positive(bags[bi]))
            terms, node = _batch_loss(model, bags, batch, splits, training=True, rng=rng)
            if not math.isfinite(terms.total):
                raise NumericError(f"joint training diverged: total loss {terms.total}")
            for k in sums:
                sums[k] += getattr(terms, k)
            nk.backward(node)
            _extractor_step(model, abl)

        state.epoch += 1
        val = _validation_loss(model, bags, state.val_indices)
        n = max(1, len(train_idx))
        entry = {
            "phase": "joint", "epoch": state.epoch,
            "l_pos": sums["l_pos"] / n, "l_unl": sums["l_unl"] / n,
            "l_bag": sums["l_bag"] / n, "total": sums["total"] / n,
            "mean_reward": float(np.mean(rewards)) if rewards else None,
            "mean_q_loss": float(np.mean(q_losses)) if q_losses else None,
            "epsilon": last_eps if abl.use_selector else None,
            "val_loss": val,
        }
        if log is not None:
            log.append(entry)
        if val is not None and (state.best_val is None or val < state.best_val):
            state.best_val = val
            state.best_epoch = state.epoch
            state.best_values = {name: p.value.copy()
                                 for name, p in model.parameters().items()}

    if state.epoch >= config.epochs:
        if state.best_values is not None:
            for name, p in model.parameters().items():
                p.value[...] = state.best_values[name]
        state.phase = "final"


def train_model(bags, vocab: Vocabulary, relations: list[str], config: TrainConfig,
                embeddings_path=None, log: list | None = None):
    """Fresh end-to-end training run; returns (model, state)."""
    model = build_model(config, vocab, relations, embeddings_path)
    state = init_train_state(config, len(bags))
    warm_start(model, bags, state, log)
    joint_train(model, bags, state, log=log)
    return model, state


# ---------------------------------------------------------------------------
# Prediction wiring


def predict_bag(model: Model, bag: Bag, embs=None):
    """Per-relation scores + argmax for one bag under the model's ablation."""
    if embs is None:
        embs = _eval_embeddings(model, bag)
    if model.qnet is None:
        split = (list(range(len(embs))), [])
        select_fn = lambda r: split
    elif model.rel_emb is None:
        # relation-blind state: the split is identical for every query
        res = _greedy_split(model, embs, 0)
        select_fn = lambda r: (res.positive, res.unlabeled)
    else:
        def select_fn(r):
            res = _greedy_split(model, embs, r)
            return res.positive, res.unlabeled
    return predict(embs, select_fn, model.extractor, model.config.alpha)


def select_decisions(model: Model, bag: Bag, relation_id: int):
    """Greedy per-sentence decisions with their Q-values (for the dump)."""
    if model.qnet is None:
        return [{"sentence_index": i, "action": "positive", "q_values": None}
                for i in range(len(bag.instances))]
    embs = _eval_embeddings(model, bag)
    selected = []
    out = []
    for i, x_q in enumerate(embs):
        st = build_state(x_q, relation_id, selected)
        q = q_values(st, model.qnet, model.rel_emb)
        action = act(q, GREEDY)
        if action == ACTION_POSITIVE:
            selected.append(x_q)
        out.append({"sentence_index": i, "action": ACTION_NAMES[action],
                    "q_values": [float(q[0]), float(q[1])]})
    return out


# ---------------------------------------------------------------------------
# Checkpoints

_DTYPE_TAGS = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.int64): 3}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def _pack_block(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    tag = _DTYPE_TAGS.get(arr.dtype)
    if tag is None:
        raise ConfigError(f"checkpoint cannot store dtype {arr.dtype}")
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    head = struct.pack("<H", len(name.encode())) + name.encode()
    head += struct.pack("<BB", tag, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    head += struct.pack("<Q", len(payload))
    return head + payload


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise DataError("truncated checkpoint file")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_block(r: "_Reader"):
    (name_len,) = r.unpack("<H")
    name = r.take(name_len).decode("utf-8")
    tag, ndim = r.unpack("<BB")
    shape = r.unpack(f"<{ndim}Q") if ndim else ()
    (nbytes,) = r.unpack("<Q")
    dtype = _TAG_DTYPES.get(tag)
    if dtype is None:
        raise DataError(f"checkpoint block {name!r} has unknown dtype tag {tag}")
    arr = np.frombuffer(r.take(nbytes), dtype=dtype.newbyteorder("<")).astype(dtype)
    return name, arr.reshape(shape)


def save_checkpoint(path, model: Model, state: TrainState) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_json(),
        "relations": model.relations,
        "vocab": model.vocab.tokens,
        "rng": state.rng.get_state(),
        "epoch": state.epoch,
        "global_episode": state.global_episode,
        "phase": state.phase,
        "val_indices": state.val_indices,
        "best_epoch": state.best_epoch,
        "best_val": state.best_val,
        "steps": {name: p.step_count for name, p in model.parameters().items()},
        "buffer_size": len(state.buffer),
        "buffer_capacity": state.buffer.capacity,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blocks = []
    for name, p in sorted(model.parameters().items()):
        blocks.append((f"param/{name}/value", p.value))
        blocks.append((f"param/{name}/adam_m", p.adam_m))
        blocks.append((f"param/{name}/adam_v", p.adam_v))
    if state.best_values is not None:
        for name, arr in sorted(state.best_values.items()):
            blocks.append((f"best/{name}", arr))
    if len(state.buffer):
        items = list(state.buffer.items)
        blocks.append(("buffer/x_q", np.stack([t.state.x_q for t in items])))
        blocks.append(("buffer/x_pos", np.stack([t.state.x_pos for t in items])))
        blocks.append(("buffer/relation", np.array([t.state.relation_id for t in items],
                                                   dtype=np.int64)))
        blocks.append(("buffer/action", np.array([t.action for t in items], dtype=np.int64)))
        blocks.append(("buffer/target", np.array([t.target_value for t in items],
                                                 dtype=np.float64)))
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<Q", len(header_bytes))
    out += header_bytes
    out += struct.pack("<I", len(blocks))
    for name, arr in blocks:
        out += _pack_block(name, arr)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_checkpoint(path):
    """Load a checkpoint; returns (model, state)."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(buf)
    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"checkpoint version {version} unsupported; this build "
                          f"reads version {CHECKPOINT_VERSION}")
    (hlen,) = r.unpack("<Q")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt checkpoint header: {e}") from e
    (n_blocks,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_blocks):
        name, arr = _read_block(r)
        tensors[name] = arr

    config = TrainConfig.from_json(header["config"])
    vocab = Vocabulary(header["vocab"])
    model = build_model(config, vocab, header["relations"])
    for name, p in model.parameters().items():
        for part, slot in (("value", "value"), ("adam_m", "adam_m"), ("adam_v", "adam_v")):
            key = f"param/{name}/{part}"
            if key not in tensors:
                raise DataError(f"checkpoint missing tensor {key}")
            arr = tensors[key]
            if arr.shape != getattr(p, slot).shape:
                raise DataError(f"checkpoint tensor {key} has shape {arr.shape}, "
                                f"expected {getattr(p, slot).shape}")
            getattr(p, slot)[...] = arr
        p.step_count = int(header["steps"][name])

    buffer = ReplayBuffer(int(header["buffer_capacity"]))
    if int(header["buffer_size"]):
        x_q = tensors["buffer/x_q"]
        x_pos = tensors["buffer/x_pos"]
        rels = tensors["buffer/relation"]
        acts = tensors["buffer/action"]
        targets = tensors["buffer/target"]
        dtype = config.dtype
        for i in range(x_q.shape[0]):
            st = StateRep(x_q=x_q[i].astype(dtype), relation_id=int(rels[i]),
                          x_pos=x_pos[i].astype(dtype))
            buffer.extend([Transition(state=st, action=int(acts[i]),
                                      target_value=float(targets[i]))])
    state = TrainState(
        rng=RngState.from_state(header["rng"]),
        buffer=buffer,
        epoch=int(header["epoch"]),
        global_episode=int(header["global_episode"]),
        phase=header["phase"],
        val_indices=[int(i) for i in header["val_indices"]],
        best_epoch=int(header["best_epoch"]),
        best_val=header["best_val"],
    )
    best = {name.split("/", 1)[1]: arr for name, arr in tensors.items()
            if name.startswith("best/")}
    state.best_values = best or None
    return model, state
