"""Sentence encoders: CNN and PCNN over word + position embeddings.

A sentence becomes an [n, d] input matrix (word embedding concatenated
with two position embeddings per token), is convolved with K filters,
pooled (globally or piecewise around the entity positions), and passed
through tanh. Dropout applies to the resulting sentence embedding in
training mode only.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import numkernel as nk
from .corpus import EmbeddingTable, PAD_ID, SentenceInstance, relative_positions
from .errors import ConfigError, DataError

CNN = "CNN"
PCNN = "PCNN"


@dataclass(frozen=True)
class EncoderConfig:
    d_word: int = 50
    d_pos: int = 5
    n_filters: int = 230
    window: int = 3
    variant: str = PCNN
    max_len: int = 100
    pos_clip: int = 30
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.variant not in (CNN, PCNN):
            raise ConfigError(f"unknown encoder variant {self.variant!r}")
        if min(self.d_word, self.d_pos, self.n_filters, self.window,
               self.max_len, self.pos_clip) < 1:
            raise ConfigError("encoder dimensions must be positive")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def d(self) -> int:
        return self.d_word + 2 * self.d_pos

    @property
    def enc_dim(self) -> int:
        return self.n_filters if self.variant == CNN else 3 * self.n_filters


@dataclass
class EncoderParams:
    embeddings: EmbeddingTable
    filters: nk.Parameter  # [K, window * d]


def embed_input(instance: SentenceInstance, table: EmbeddingTable,
                config: EncoderConfig) -> nk.Tensor:
    """Input matrix for one sentence: [n, d_word + 2*d_pos] rows.

    Sentences are truncated to max_len and right-padded with PAD up to
    the window size; PAD rows have a zero word part but real position
    embeddings.
    """
    ids = list(instance.tokens[:config.max_len])
    if instance.head_pos >= len(ids) or instance.tail_pos >= len(ids):
        raise DataError(f"entity span beyond truncated sentence (line {instance.line_no})")
    while len(ids) < config.window:
        ids.append(PAD_ID)
    dh, dt = relative_positions(instance, config.pos_clip, length=len(ids))
    return nk.hconcat([
        nk.lookup(table.word, ids),
        nk.lookup(table.pos_head, dh),
        nk.lookup(table.pos_tail, dt),
    ])


def _conv_coord(token_pos: int, m: int) -> int:
    # entity token position mapped into convolution-output coordinates
    return min(max(token_pos, 0), m - 1)


def encode_sentence(instance: SentenceInstance, params: EncoderParams,
                    config: EncoderConfig, training: bool = False,
                    rng: nk.RngState | None = None) -> nk.Tensor:
    """Sentence embedding x_q: length K for CNN, 3K for PCNN."""
    inp = embed_input(instance, params.embeddings, config)
    conv = nk.conv1d(inp, params.filters)
    if config.variant == CNN:
        pooled = nk.max_pool(conv)
    else:
        m = conv.data.shape[1]
        p1, p2 = sorted((instance.head_pos, instance.tail_pos))
        pooled = nk.piecewise_max_pool(conv, _conv_coord(p1, m), _conv_coord(p2, m))
    x = nk.tanh_act(pooled)
    if training and config.dropout_rate > 0.0:
        if rng is None:
            raise ConfigError("training-mode encoding needs an RngState for dropout")
        x = nk.dropout(x, config.dropout_rate, rng, training=True)
    return x


def encode_bag(bag, params: EncoderParams, config: EncoderConfig,
               training: bool = False, rng: nk.RngState | None = None):
    return [encode_sentence(inst, params, config, training, rng) for inst in bag.instances]
