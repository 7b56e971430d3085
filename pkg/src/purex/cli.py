"""Command-line surface: gen-synth, train, eval, predict, select.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
divergence. Every command is deterministic given its config and seed;
run outputs land in the command's output directory next to an echo of
the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .corpus import (SyntheticSpec, gen_synthetic, load_corpus, load_relations,
                     load_sidecar, build_bags, write_jsonl)
from .errors import ConfigError, DataError, NumericError
from .evaluation import (bag_prediction_entries, evaluate_predictions, greedy_splits,
                         selector_accuracy, sort_predictions, write_pr_csv)
from .trainer import (TrainConfig, build_model, init_train_state, joint_train,
                      load_checkpoint, save_checkpoint, select_decisions, warm_start)

RUN_CONFIG_KEYS = {"corpus", "relations", "embeddings", "out_dir", "train", "encoder"}


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}") from e


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _bag_key(bag, relations):
    return f"{bag.key[0]}|{bag.key[1]}|{relations[bag.distant_label]}"


def cmd_gen_synth(args):
    obj = _load_json(args.spec)
    if args.seed is not None:
        obj["seed"] = args.seed
    spec = SyntheticSpec.from_json(obj)
    records, sidecar, relations = gen_synthetic(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    write_jsonl(os.path.join(args.out_dir, "corpus.jsonl"), records)
    write_jsonl(os.path.join(args.out_dir, "sidecar.jsonl"), sidecar)
    with open(os.path.join(args.out_dir, "relations.json"), "w", encoding="utf-8") as fh:
        json.dump(relations, fh)
        fh.write("\n")
    n_true = sum(1 for s in sidecar if s["is_true_positive"])
    n_non_na = sum(1 for r in records if r["relation"] != "NA")
    _say(args, f"wrote {len(records)} sentences over {spec.n_entity_pairs} bags "
               f"({len(relations)} relations incl. NA) to {args.out_dir}")
    if n_non_na:
        _say(args, f"true-positive rate among non-NA sentences: {n_true / n_non_na:.3f}")
    return 0


def _resolve_run_config(path, args):
    obj = _load_json(path)
    unknown = set(obj) - RUN_CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown run config key(s): {', '.join(sorted(unknown))}")
    for key in ("corpus", "relations", "out_dir"):
        if key not in obj:
            raise ConfigError(f"run config missing required key {key!r}")
    train_obj = dict(obj.get("train", {}))
    if args.seed is not None:
        train_obj["seed"] = args.seed
    if args.precision is not None:
        train_obj["precision"] = args.precision
    config = TrainConfig.from_json({**train_obj, "encoder": obj.get("encoder", {})})
    return obj, config


def cmd_train(args):
    run_obj, config = _resolve_run_config(args.config, args)
    out_dir = run_obj["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    relations = load_relations(run_obj["relations"])
    log: list = []
    if args.resume:
        model, state = load_checkpoint(args.resume)
        config = model.config
        _say(args, f"resumed from {args.resume} at joint epoch {state.epoch}")
        instances, _, report = load_corpus(run_obj["corpus"], relations,
                                           vocab=model.vocab,
                                           max_len=config.encoder.max_len)
    else:
        instances, vocab, report = load_corpus(run_obj["corpus"], relations,
                                               max_len=config.encoder.max_len)
        model = build_model(config, vocab, relations, run_obj.get("embeddings"))
        state = None
    if report.skipped:
        _say(args, f"skipped {report.skipped}/{report.total_lines} corpus lines: "
                   f"{dict(report.reasons)}")
    bags = build_bags(instances)
    if not bags:
        raise DataError(f"no usable bags in {run_obj['corpus']}")
    if state is None:
        state = init_train_state(config, len(bags))
    # echo the resolved configuration for provenance
    echo = {"corpus": run_obj["corpus"], "relations": run_obj["relations"],
            "embeddings": run_obj.get("embeddings"), "out_dir": out_dir,
            "train": config.to_json()}
    echo["encoder"] = echo["train"].pop("encoder")
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(echo, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if state.phase == "init":
        warm_start(model, bags, state, log)
    joint_train(model, bags, state, stop_after=args.stop_after, log=log)
    ckpt_path = os.path.join(out_dir, "checkpoint.ckpt")
    save_checkpoint(ckpt_path, model, state)
    mode = "a" if args.resume else "w"
    with open(os.path.join(out_dir, "metrics.jsonl"), mode, encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    last = log[-1] if log else {}
    _say(args, f"trained {config.ablation} to epoch {state.epoch}/{config.epochs} "
               f"(phase {state.phase}); checkpoint at {ckpt_path}")
    if last:
        _say(args, f"final metrics: {json.dumps(last, sort_keys=True)}")
    return 0


def _load_eval_inputs(args):
    model, _ = load_checkpoint(args.checkpoint)
    instances, _, report = load_corpus(args.corpus, model.relations, vocab=model.vocab,
                                       max_len=model.config.encoder.max_len)
    bags = build_bags(instances)
    if not bags:
        raise DataError(f"no usable bags in {args.corpus}")
    return model, bags, report


def cmd_eval(args):
    model, bags, report = _load_eval_inputs(args)
    os.makedirs(args.out_dir, exist_ok=True)
    metrics = evaluate_predictions(model, bags, model.relations)
    write_pr_csv(os.path.join(args.out_dir, "pr.csv"), metrics["points"])
    table = {"config": model.config.ablation, "auc": metrics["auc"],
             "p_at_100": metrics["p_at_100"], "p_at_200": metrics["p_at_200"],
             "p_at_300": metrics["p_at_300"], "n_predictions": metrics["n_predictions"],
             "n_gold": metrics["n_gold"]}
    with open(os.path.join(args.out_dir, "pn.json"), "w", encoding="utf-8") as fh:
        json.dump(table, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if args.sidecar:
        flags = load_sidecar(args.sidecar)
        acc = selector_accuracy(greedy_splits(model, bags), flags)
        with open(os.path.join(args.out_dir, "selector_accuracy.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(acc), fh, sort_keys=True, indent=2)
            fh.write("\n")
        _say(args, f"selector accuracy: precision={acc.precision:.3f} "
                   f"recall={acc.recall:.3f} f1={acc.f1:.3f}")
    _say(args, f"AUC={metrics['auc']:.4f} P@100={metrics['p_at_100']:.3f} "
               f"P@200={metrics['p_at_200']:.3f} P@300={metrics['p_at_300']:.3f}")
    return 0


def cmd_predict(args):
    model, bags, _ = _load_eval_inputs(args)
    entries = sort_predictions(bag_prediction_entries(model, bags))
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        key_of = {}
        for bag in bags:
            key_of[(bag.key[0], bag.key[1])] = _bag_key(bag, model.relations)
        for e in entries:
            rec = {"bag_key": key_of[(e.head, e.tail)], "relation": e.relation,
                   "score": e.score}
            out.write(json.dumps(rec) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_select(args):
    model, bags, _ = _load_eval_inputs(args)
    if args.relation not in model.relations:
        raise ConfigError(f"relation {args.relation!r} not in inventory "
                          f"{model.relations}")
    rel_id = model.relations.index(args.relation)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for bag in bags:
            for d in select_decisions(model, bag, rel_id):
                rec = {"bag_key": _bag_key(bag, model.relations),
                       "relation": args.relation, **d}
                out.write(json.dumps(rec) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="purex",
        description="Bag-level distant-supervision relation extraction with an "
                    "RL sentence selector and a positive/unlabeled classifier.")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the seed from the config/spec file")
    parser.add_argument("--precision", type=int, choices=(32, 64), default=None,
                        help="override numeric precision")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic corpus with hidden truth")
    p.add_argument("spec", help="SyntheticSpec JSON file")
    p.add_argument("out_dir")
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("train", help="train a model from a run config file")
    p.add_argument("config", help="run config JSON (paths + train/encoder sections)")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--stop-after", type=int, default=None,
                   help="stop at this joint epoch (for later resume)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="held-out PR curve and P@N for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("out_dir")
    p.add_argument("--sidecar", default=None,
                   help="synthetic sidecar for selector accuracy")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="dump per-bag per-relation scores")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("--out", default=None, help="output JSON-lines path (default stdout)")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("select", help="dump per-sentence selector decisions")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("--relation", required=True, help="query relation name")
    p.add_argument("--out", default=None, help="output JSON-lines path (default stdout)")
    p.set_defaults(fn=cmd_select)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
