"""Corpus ingestion, vocabulary/embedding management, bag construction,
and synthetic noisy-corpus generation.

Corpus files are UTF-8 JSON-lines; each record carries `head`, `tail`,
`relation`, `tokens` (strings), `head_pos`, `tail_pos`. The relation
inventory is a JSON array of names whose index 0 must be "NA". The
synthetic generator writes a sidecar JSON-lines file (parallel to the
corpus) with a hidden `is_true_positive` flag per sentence; training
never reads it.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .numkernel import Parameter, RngState

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"
NA_RELATION = "NA"

CORPUS_FORMAT = "jsonl-v1"


@dataclass
class SentenceInstance:
    """One tokenized sentence with its entity spans and distant label."""

    tokens: list[int]
    head_pos: int
    tail_pos: int
    relation_id: int
    head: str = ""
    tail: str = ""
    line_no: int = -1


@dataclass
class Bag:
    """All sentences for one (entity pair, distant label) triple."""

    key: tuple[str, str]
    distant_label: int
    instances: list[SentenceInstance]


class Vocabulary:
    """Token/id table with reserved PAD and UNK entries."""

    def __init__(self, tokens: list[str]):
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ConfigError("vocabulary must start with PAD and UNK")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")

    @classmethod
    def build(cls, token_iter, min_count: int = 1) -> "Vocabulary":
        counts = Counter()
        order = []
        for tok in token_iter:
            if tok not in counts:
                order.append(tok)
            counts[tok] += 1
        kept = [t for t in order if counts[t] >= min_count and t not in (PAD_TOKEN, UNK_TOKEN)]
        return cls([PAD_TOKEN, UNK_TOKEN] + kept)

    def encode(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class EmbeddingTable:
    """Word embeddings plus the two position-embedding tables."""

    word: Parameter
    pos_head: Parameter
    pos_tail: Parameter
    pos_clip: int

    @property
    def d_word(self) -> int:
        return self.word.value.shape[1]

    @property
    def d_pos(self) -> int:
        return self.pos_head.value.shape[1]


@dataclass
class CorpusReport:
    total_lines: int = 0
    loaded: int = 0
    skipped: int = 0
    reasons: Counter = field(default_factory=Counter)

    def note_skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] += 1


def load_relations(path) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            names = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read relation inventory {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"relation inventory {path} is not valid JSON: {e}") from e
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise DataError(f"relation inventory {path} must be a JSON array of names")
    if not names or names[0] != NA_RELATION:
        raise DataError(f"relation inventory {path}: index 0 must be {NA_RELATION!r}")
    if len(set(names)) != len(names):
        raise DataError(f"relation inventory {path} contains duplicates")
    return names


def _parse_record(obj: dict, relations: dict[str, int], strict: bool):
    """Validate one corpus record; returns (fields, None) or (None, reason)."""
    for key in ("head", "tail", "relation", "tokens", "head_pos", "tail_pos"):
        if key not in obj:
            return None, f"missing field {key}"
    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
        return None, "bad tokens"
    hp, tp = obj["head_pos"], obj["tail_pos"]
    if not isinstance(hp, int) or not isinstance(tp, int):
        return None, "bad span type"
    if not (0 <= hp < len(tokens)) or not (0 <= tp < len(tokens)) or hp == tp:
        return None, "span out of range"
    if tokens[hp] != obj["head"] or tokens[tp] != obj["tail"]:
        return None, "entity token not found"
    rel = obj["relation"]
    if rel not in relations:
        if strict:
            raise DataError(f"relation {rel!r} not in inventory")
        return None, "unknown relation"
    return (obj["head"], obj["tail"], rel, tokens, hp, tp), None


def load_corpus(path, relations: list[str], format_id: str = CORPUS_FORMAT,
                vocab: Vocabulary | None = None, strict: bool = False,
                max_len: int | None = None):
    """Load a JSON-lines corpus.

    Returns (instances, vocab, report). When no vocabulary is given one
    is built from the corpus in first-occurrence order; with a persisted
    vocabulary, unknown tokens map to UNK. Malformed lines are counted
    and skipped. When `max_len` is given, sentences whose entity spans
    fall beyond the truncation point are skipped.
    """
    if format_id != CORPUS_FORMAT:
        raise ConfigError(f"unsupported corpus format {format_id!r}, expected {CORPUS_FORMAT!r}")
    rel_index = {name: i for i, name in enumerate(relations)}
    report = CorpusReport()
    records = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh):
                if not line.strip():
                    continue
                report.total_lines += 1
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    report.note_skip("bad json")
                    continue
                parsed, reason = _parse_record(obj, rel_index, strict)
                if parsed is None:
                    report.note_skip(reason)
                    continue
                head, tail, rel, tokens, hp, tp = parsed
                if max_len is not None and (hp >= max_len or tp >= max_len):
                    report.note_skip("entity beyond max_len")
                    continue
                records.append((head, tail, rel, tokens, hp, tp, line_no))
    except OSError as e:
        raise DataError(f"cannot read corpus {path}: {e}") from e

    if vocab is None:
        vocab = Vocabulary.build(tok for _, _, _, tokens, _, _, _ in records for tok in tokens)
    instances = []
    for head, tail, rel, tokens, hp, tp, line_no in records:
        instances.append(SentenceInstance(
            tokens=[vocab.encode(t) for t in tokens],
            head_pos=hp, tail_pos=tp,
            relation_id=rel_index[rel],
            head=head, tail=tail, line_no=line_no,
        ))
        report.loaded += 1
    return instances, vocab, report


def build_bags(instances) -> list[Bag]:
    """Group instances by (head, tail, distant label), first-occurrence order."""
    groups: dict[tuple, Bag] = {}
    for inst in instances:
        key = (inst.head, inst.tail, inst.relation_id)
        bag = groups.get(key)
        if bag is None:
            groups[key] = Bag(key=(inst.head, inst.tail), distant_label=inst.relation_id,
                              instances=[inst])
        else:
            bag.instances.append(inst)
    return list(groups.values())


def relative_positions(instance: SentenceInstance, pos_clip: int,
                       length: int | None = None):
    """Clipped relative distances to head/tail, shifted to [0, 2*pos_clip].

    `length` extends the sequence (PAD positions are still looked up).
    """
    n = length if length is not None else len(instance.tokens)
    idx = np.arange(n)
    dh = np.clip(idx - instance.head_pos, -pos_clip, pos_clip) + pos_clip
    dt = np.clip(idx - instance.tail_pos, -pos_clip, pos_clip) + pos_clip
    return dh.astype(np.int64), dt.astype(np.int64)


def pos_table_rows(pos_clip: int) -> int:
    # clipped range [0, 2*clip] plus one spare out-of-range bucket
    return 2 * pos_clip + 2


def load_embeddings(path, vocab: Vocabulary, d_word: int, d_pos: int,
                    pos_clip: int, rng: RngState, dtype=np.float32) -> EmbeddingTable:
    """Build the embedding tables, taking word vectors from a text file.

    File lines are `word v1 ... v_d` (space separated). Vocabulary words
    missing from the file are initialized uniform in [-0.25, 0.25]; the
    PAD row is fixed at zero. Position tables are always random.
    """
    file_vectors: dict[str, np.ndarray] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for raw in fh:
                    parts = raw.rstrip("\n").split(" ")
                    if len(parts) < 2:
                        continue
                    word, vals = parts[0], parts[1:]
                    if len(vals) != d_word:
                        raise ConfigError(
                            f"embedding file dimension {len(vals)} != configured d_word {d_word}")
                    if word in vocab.index:
                        file_vectors[word] = np.asarray([float(v) for v in vals], dtype=dtype)
        except OSError as e:
            raise DataError(f"cannot read embeddings {path}: {e}") from e

    V = len(vocab)
    word = rng.generator.uniform(-0.25, 0.25, size=(V, d_word)).astype(dtype)
    for w, vec in file_vectors.items():
        word[vocab.index[w]] = vec
    word[PAD_ID] = 0.0  # fixed-at-zero convention wins over any file row
    rows = pos_table_rows(pos_clip)
    pos_head = rng.generator.uniform(-0.25, 0.25, size=(rows, d_pos)).astype(dtype)
    pos_tail = rng.generator.uniform(-0.25, 0.25, size=(rows, d_pos)).astype(dtype)
    return EmbeddingTable(
        word=Parameter(word, "word_emb"),
        pos_head=Parameter(pos_head, "pos_emb_head"),
        pos_tail=Parameter(pos_tail, "pos_emb_tail"),
        pos_clip=pos_clip,
    )


# ---------------------------------------------------------------------------
# Synthetic corpus generation

HEAD_SLOT = "{head}"
TAIL_SLOT = "{tail}"
FILLER_SLOT = "{filler}"


CUE_SLOT = "{cue}"  # resolved to a random relation's cue token (hard NA noise)


@dataclass
class SyntheticSpec:
    """Recipe for a noisy distant-supervision corpus with hidden truth.

    `noise_rate` is the probability that a sentence in a non-NA bag does
    not express the bag's distant label. Noise sentences come from NA
    templates or, for multi-label entity pairs, from the pair's other
    relation's templates. A `hard_na_share` of NA draws carry a random
    relation's cue token far from both entities: they poison bag
    averaging but are rejectable from the token positions.
    """

    n_relations: int = 5
    n_entity_pairs: int = 200
    bag_size_range: tuple[int, int] = (3, 8)
    noise_rate: float = 0.3
    vocab_size: int = 100
    seed: int = 0
    na_fraction: float = 0.25
    multi_label_every: int = 4  # every k-th non-NA pair carries two relations
    co_label_noise_share: float = 0.5
    hard_na_share: float = 0.5
    templates: dict[str, list[list[str]]] | None = None

    def __post_init__(self):
        if not (0.0 <= self.noise_rate < 1.0):
            raise ConfigError(f"noise_rate must be in [0, 1), got {self.noise_rate}")
        if not (0.0 <= self.na_fraction < 1.0):
            raise ConfigError(f"na_fraction must be in [0, 1), got {self.na_fraction}")
        for name in ("co_label_noise_share", "hard_na_share"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        lo, hi = self.bag_size_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad bag_size_range {self.bag_size_range}")
        if self.n_relations < 1 or self.n_entity_pairs < 1 or self.vocab_size < 1:
            raise ConfigError("n_relations, n_entity_pairs and vocab_size must be positive")
        if self.multi_label_every < 0:
            raise ConfigError("multi_label_every must be >= 0 (0 disables multi-label pairs)")

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec field(s): {', '.join(sorted(unknown))}")
        if "bag_size_range" in obj:
            obj = dict(obj, bag_size_range=tuple(obj["bag_size_range"]))
        return cls(**obj)


def shared_cue(a: int, b: int) -> str:
    lo, hi = sorted((a, b))
    return f"shr_{lo}_{hi}"


def default_templates(n_relations: int) -> dict[str, list[list[str]]]:
    """Cue-word templates.

    Relation templates put the cue between the two entities; NA
    templates are cue-free ("easy") or carry a stray cue well outside
    the entity span ("hard", keyed "NA-hard"). Each relation also draws
    cue tokens shared with its cyclic neighbours, so a single sentence
    can be genuinely ambiguous between two relations.
    """
    templates = {
        NA_RELATION: [
            [HEAD_SLOT, FILLER_SLOT, FILLER_SLOT, TAIL_SLOT],
            [FILLER_SLOT, TAIL_SLOT, FILLER_SLOT, HEAD_SLOT, FILLER_SLOT],
            [FILLER_SLOT, HEAD_SLOT, FILLER_SLOT, FILLER_SLOT, TAIL_SLOT, FILLER_SLOT],
        ],
        "NA-hard": [
            [HEAD_SLOT, FILLER_SLOT, TAIL_SLOT, FILLER_SLOT, FILLER_SLOT, CUE_SLOT],
            [CUE_SLOT, FILLER_SLOT, FILLER_SLOT, HEAD_SLOT, FILLER_SLOT, TAIL_SLOT],
            [FILLER_SLOT, TAIL_SLOT, FILLER_SLOT, HEAD_SLOT, FILLER_SLOT, FILLER_SLOT, CUE_SLOT],
        ],
    }
    for k in range(1, n_relations + 1):
        cue_a, cue_b = f"rel{k}_cue_a", f"rel{k}_cue_b"
        pool = [
            [FILLER_SLOT, HEAD_SLOT, cue_a, TAIL_SLOT, FILLER_SLOT],
            [HEAD_SLOT, cue_b, FILLER_SLOT, TAIL_SLOT],
            [TAIL_SLOT, cue_a, HEAD_SLOT, FILLER_SLOT],
        ]
        if n_relations >= 3:
            nxt = k % n_relations + 1
            prv = (k - 2) % n_relations + 1
            pool.append([FILLER_SLOT, HEAD_SLOT, shared_cue(k, nxt), TAIL_SLOT])
            pool.append([TAIL_SLOT, shared_cue(prv, k), HEAD_SLOT, FILLER_SLOT])
        templates[f"rel{k}"] = pool
    return templates


def cue_tokens_by_relation(templates) -> dict[str, list[str]]:
    out = {}
    for rel, pools in sorted(templates.items()):
        if rel in (NA_RELATION, "NA-hard"):
            continue
        cues = []
        for tpl in pools:
            for tok in tpl:
                if tok not in (HEAD_SLOT, TAIL_SLOT, FILLER_SLOT, CUE_SLOT) and tok not in cues:
                    cues.append(tok)
        out[rel] = cues
    return out


def _instantiate(template, head: str, tail: str, fillers, cues, gen) -> dict:
    tokens = []
    for tok in template:
        if tok == FILLER_SLOT:
            tokens.append(fillers[gen.integers(len(fillers))])
        elif tok == CUE_SLOT:
            tokens.append(cues[gen.integers(len(cues))])
        else:
            tokens.append(tok)
    for _ in range(gen.integers(0, 3)):
        tokens.append(fillers[gen.integers(len(fillers))])
    tokens = [head if t == HEAD_SLOT else tail if t == TAIL_SLOT else t for t in tokens]
    return {
        "head": head, "tail": tail, "tokens": tokens,
        "head_pos": tokens.index(head), "tail_pos": tokens.index(tail),
    }


def gen_synthetic(spec: SyntheticSpec):
    """Generate a corpus with hidden per-sentence ground truth.

    Returns (records, sidecar, relations): corpus records ready for the
    JSON-lines writer, parallel sidecar records with `is_true_positive`,
    and the relation inventory. Bags are generated from per-bag split
    seeds, so the output is byte-stable under regeneration.

    Multi-label pairs hold two relations: one bag per relation, and the
    co-label's templates serve as part of that bag's noise (the noise
    sentence genuinely expresses the pair's other relation). Each NA bag
    picks one distractor relation whose cue tokens its hard sentences
    reuse, so bag averaging sees consistent relation evidence there
    while the token positions say otherwise.
    """
    relations = [NA_RELATION] + [f"rel{k}" for k in range(1, spec.n_relations + 1)]
    templates = spec.templates if spec.templates is not None else default_templates(spec.n_relations)
    missing = [r for r in relations if r not in templates]
    if missing:
        raise ConfigError(f"templates missing for relations: {', '.join(missing)}")
    hard_na = templates.get("NA-hard", templates[NA_RELATION])
    cue_map = cue_tokens_by_relation(templates)
    all_cues = [c for rel in relations[1:] for c in cue_map.get(rel, [])] or ["cue0"]
    fillers = [f"w{i}" for i in range(spec.vocab_size)]
    root = RngState(spec.seed)
    records, sidecar = [], []
    lo, hi = spec.bag_size_range
    non_na_seen = 0
    for i in range(spec.n_entity_pairs):
        gen = root.split("bag", i).generator
        head, tail = f"ent_h{i}", f"ent_t{i}"
        is_na = gen.random() < spec.na_fraction
        if is_na:
            labels = [NA_RELATION]
        else:
            non_na_seen += 1
            multi = (spec.multi_label_every > 0
                     and non_na_seen % spec.multi_label_every == 0
                     and spec.n_relations >= 2)
            first = 1 + int(gen.integers(spec.n_relations))
            if multi:
                # avoid cue-sharing cyclic neighbours so the co-label's noise
                # sentences never carry the bag's own cue tokens
                def cyc_dist(a, b):
                    d = abs(a - b) % spec.n_relations
                    return min(d, spec.n_relations - d)

                candidates = [r for r in range(1, spec.n_relations + 1)
                              if r != first and cyc_dist(r, first) >= 2]
                if not candidates:
                    candidates = [r for r in range(1, spec.n_relations + 1) if r != first]
                second = candidates[int(gen.integers(len(candidates)))]
                labels = [relations[first], relations[second]]
            else:
                labels = [relations[first]]
        for label in labels:
            size = int(gen.integers(lo, hi + 1))
            co_labels = [l for l in labels if l != label]
            if label == NA_RELATION:
                # consistent distractor: the whole bag leans on one relation's cues
                hard_cues = cue_map.get(relations[1 + int(gen.integers(spec.n_relations))],
                                        all_cues)
            else:
                hard_cues = [c for r in relations[1:] if r != label
                             for c in cue_map.get(r, [])] or all_cues

            def na_pool():
                if gen.random() < spec.hard_na_share:
                    return hard_na
                return templates[NA_RELATION]

            for _ in range(size):
                if label == NA_RELATION:
                    pool, is_tp = na_pool(), False
                elif gen.random() >= spec.noise_rate:
                    pool, is_tp = templates[label], True
                else:
                    is_tp = False
                    if co_labels and gen.random() < spec.co_label_noise_share:
                        pool = templates[co_labels[int(gen.integers(len(co_labels)))]]
                    else:
                        pool = na_pool()
                rec = _instantiate(pool[gen.integers(len(pool))], head, tail,
                                   fillers, hard_cues, gen)
                rec["relation"] = label
                # field order fixed for byte-stable output
                records.append({k: rec[k] for k in ("head", "tail", "relation", "tokens",
                                                    "head_pos", "tail_pos")})
                sidecar.append({"is_true_positive": bool(is_tp)})
    return records, sidecar, relations


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=True) + "\n")


def load_sidecar(path) -> list[bool]:
    flags = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                flags.append(bool(obj["is_true_positive"]))
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise DataError(f"cannot read sidecar {path}: {e}") from e
    return flags
