import numpy as np
import pytest

from purex.corpus import EmbeddingTable, SentenceInstance, pos_table_rows
from purex.encoder import EncoderConfig, EncoderParams
from purex.numkernel import Parameter, RngState


def make_table(n_vocab, d_word, d_pos, pos_clip, rng, dtype=np.float64):
    gen = rng.generator
    word = gen.uniform(-0.5, 0.5, size=(n_vocab, d_word)).astype(dtype)
    word[0] = 0.0  # PAD row
    rows = pos_table_rows(pos_clip)
    return EmbeddingTable(
        word=Parameter(word, "word_emb"),
        pos_head=Parameter(gen.uniform(-0.5, 0.5, size=(rows, d_pos)).astype(dtype), "pos_emb_head"),
        pos_tail=Parameter(gen.uniform(-0.5, 0.5, size=(rows, d_pos)).astype(dtype), "pos_emb_tail"),
        pos_clip=pos_clip,
    )


def make_encoder(seed=0, n_vocab=12, d_word=4, d_pos=2, n_filters=3, window=3,
                 variant="PCNN", pos_clip=6, max_len=20, dropout_rate=0.0,
                 dtype=np.float64):
    rng = RngState(seed)
    config = EncoderConfig(d_word=d_word, d_pos=d_pos, n_filters=n_filters,
                           window=window, variant=variant, max_len=max_len,
                           pos_clip=pos_clip, dropout_rate=dropout_rate)
    table = make_table(n_vocab, d_word, d_pos, pos_clip, rng, dtype)
    filters = Parameter(
        rng.generator.uniform(-0.5, 0.5, size=(n_filters, window * config.d)).astype(dtype),
        "conv_filters")
    return config, EncoderParams(embeddings=table, filters=filters)


def make_instance(tokens, head_pos=0, tail_pos=1, relation_id=1, line_no=0):
    return SentenceInstance(tokens=list(tokens), head_pos=head_pos, tail_pos=tail_pos,
                            relation_id=relation_id, head=f"h{line_no}",
                            tail=f"t{line_no}", line_no=line_no)


@pytest.fixture
def rng():
    return RngState(1234)
