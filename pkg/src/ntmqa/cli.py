"""Command-line entry point: ``ntmqa <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bm25
from .cgnn import CgnnConfig, CgnnModel, pair_losses, rank_answers, rank_questions, train_retriever
from .checkpoint import CheckpointError, load_checkpoint
from .data import (DataError, EmbeddingTable, Episode, LabelClass, QaPair, Vocab, encode_sequence, load_corpus,
                   load_embeddings, load_pool)
from .gradcheck import finite_diff_check
from .metrics import export_gate_heatmap, labeling_accuracy, retrieval_metrics
from .ntm import NtmConfig, NtmModel, episode_forward, evaluate_labeler, train_labeler
from .pipeline import gold_labels, label_agreement, labeled_question_pool, ntm_labels
from .synth import FewshotConfig, RetrievalConfig, generate_synthetic

log = logging.getLogger("ntmqa")


class CliError(Exception):
    """A user-facing failure; the message is printed and the exit status is 1."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _require_file(path, what: str) -> Path:
    if path is None:
        raise CliError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}")
    return p


def _require_dir(path, what: str) -> Path:
    if path is None:
        raise CliError(f"{what} is required")
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"{what} not found: {p}")
    for name in ("answers.jsonl", "qa_train.jsonl", "qa_test.jsonl"):
        if not (p / name).is_file():
            raise CliError(f"{what} {p} lacks {name}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True) if args.json else text)


def _require_seed(args) -> None:
    if args.seed is None:
        raise CliError(f"{args.command} requires --seed")


def _shots(text) -> list[int]:
    try:
        values = [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"shots must be integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"shots must be positive, got {text!r}")
    return values


def _widths(text) -> list[int]:
    return [int(s) for s in str(text).split(",") if s.strip()]


def _apply_config(args, parser) -> None:
    """Values from a JSON config file override the command-line values."""
    if not args.config:
        return
    path = _require_file(args.config, "config file")
    try:
        overrides = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON config ({exc.msg})") from None
    if not isinstance(overrides, dict):
        raise CliError(f"{path}: config must be a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest) or dest in ("command", "config"):
            raise CliError(f"{path}: unknown option {key!r} for {args.command}")
        if dest == "shots":
            value = _shots(",".join(map(str, value)) if isinstance(value, list) else value)
        elif dest == "widths":
            value = _widths(",".join(map(str, value)) if isinstance(value, list) else value)
        setattr(args, dest, value)


def _load_data(args):
    corpus = load_corpus(_require_dir(args.data, "--data directory"))
    emb = _require_file(args.embeddings or Path(args.data) / "embeddings.txt", "embeddings file")
    vocab, table = load_embeddings(emb, args.vocab_policy, corpus.tokens(), np.random.default_rng(args.seed or 0))
    return corpus, vocab, table


def _label_mode(args) -> str:
    chosen = [name for name, on in (("no-labels", args.no_labels), ("oracle-labels", args.oracle_labels),
                                    ("labeler", args.labeler is not None)) if on]
    if len(chosen) > 1:
        raise CliError(f"conflicting label flags: {', '.join('--' + c for c in chosen)}")
    return chosen[0] if chosen else "no-labels"


def _resolve_labels(args, mode: str, pairs, corpus, vocab, table, rng):
    if mode == "no-labels":
        return None
    if mode == "oracle-labels":
        return gold_labels(pairs)
    _require_file(args.labeler, "labeler checkpoint")
    labeler = NtmModel.load(args.labeler)
    pool = None if args.weights_only else labeled_question_pool(corpus.train, vocab, table)
    return ntm_labels(labeler, pairs, vocab, table, pool, args.support_shots, rng)


def _load_kind(path, expected: str):
    kind, _, _ = load_checkpoint(_require_file(path, "checkpoint"))
    if kind != expected:
        raise CliError(f"{path} holds a {kind!r} model, this command needs {expected!r}")
    return NtmModel.load(path) if kind == "ntm" else CgnnModel.load(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    if args.task == "fewshot":
        noise = FewshotConfig.noise if args.noise is None else args.noise
        config = FewshotConfig(dim=args.dim, separation=args.separation, noise=noise,
                               per_class_train=args.per_class, per_class_test=args.per_class)
    else:
        noise = RetrievalConfig.noise if args.noise is None else args.noise
        config = RetrievalConfig(n_topics=args.n_topics, noise=noise, paraphrase=args.paraphrase, dim=args.dim)
    out = generate_synthetic(args.task, args.out, config, rng)
    files = sorted(p.name for p in Path(out).iterdir())
    _emit(args, {"task": args.task, "out": str(out), "files": files}, f"wrote {', '.join(files)} to {out}")
    return 0


def _labeler_pools(args):
    """(train pool, held-out pool or None) from --pool/--test-pool or a QA corpus."""
    if args.pool:
        train = load_pool(_require_file(args.pool, "--pool"))
        test = load_pool(_require_file(args.test_pool, "--test-pool")) if args.test_pool else None
        return train, test
    if args.data:
        corpus, vocab, table = _load_data(args)
        train = labeled_question_pool(corpus.train, vocab, table)
        labeled_test = [p for p in corpus.test if p.label is not None]
        test = labeled_question_pool(labeled_test, vocab, table) if labeled_test else None
        return train, test
    raise CliError("give --pool (vector records) or --data with --embeddings")


def cmd_train_labeler(args) -> int:
    _require_seed(args)
    train, test = _labeler_pools(args)
    need = max(args.shots) + args.queries_per_class
    counts = train.class_counts()
    short = [c.label for c in LabelClass if counts[c] < need]
    if short:
        raise CliError(f"class(es) {short} have fewer than {need} labeled items "
                       f"(counts {dict(zip([c.label for c in LabelClass], counts.tolist()))}); "
                       f"label more examples or lower --shots")
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    config = NtmConfig(input_dim=train.dim, controller=args.controller, heads=args.heads, slots=args.slots,
                       width=args.width, gamma=args.gamma, lr=args.lr, batch_size=args.batch_size,
                       queries_per_class=args.queries_per_class, erase_least_used=not args.no_erase,
                       rotate_inputs=args.rotate_inputs)
    model = NtmModel(config, rng)
    curve_path = out / "curve.jsonl"
    curve = train_labeler(model, train, args.shots if len(args.shots) > 1 else args.shots[0], args.episodes, rng,
                          test_pool=test, eval_every=args.eval_every if test is not None else 0,
                          eval_episodes=args.eval_episodes)
    _write_jsonl(curve_path, curve)
    model.save(out / "labeler.ckpt")
    summary = {"checkpoint": str(out / "labeler.ckpt"), "curve": str(curve_path), "episodes": args.episodes,
               "final_accuracy": curve[-1]["held_out_accuracy"] if curve else None}
    text = f"trained {args.episodes} episodes; checkpoint {out / 'labeler.ckpt'}"
    if curve:
        text += f"; held-out accuracy {100 * curve[-1]['held_out_accuracy']:.1f}%"
    _emit(args, summary, text)
    return 0


def _cgnn_config(args, label_dims: int) -> CgnnConfig:
    return CgnnConfig(widths=args.widths, channels=args.channels, embed_dim=args.embed_dim, n_max=args.n_max,
                      margin=args.margin, label_dims=label_dims, dropout=args.dropout, ablation=args.ablation,
                      negatives=args.negatives, lr=args.lr, weight_decay=args.weight_decay, epochs=args.epochs,
                      batch_size=args.batch_size, freeze_embeddings=args.freeze_embeddings,
                      literal_hinge=args.literal_hinge)


def cmd_train_retriever(args) -> int:
    _require_seed(args)
    mode = _label_mode(args)
    if mode == "labeler":
        _require_file(args.labeler, "labeler checkpoint")
    corpus, vocab, table = _load_data(args)
    if args.embed_dim != table.dim:
        log.info("embedding dim taken from file: %d", table.dim)
        args.embed_dim = table.dim
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    labels = _resolve_labels(args, mode, corpus.train, corpus, vocab, table, rng)
    table.trainable = not args.freeze_embeddings
    model = CgnnModel(_cgnn_config(args, 5 if labels is not None else 0), vocab, table, rng)
    trace = train_retriever(model, corpus.train, corpus.answers, rng, labels=labels)
    _write_jsonl(out / "loss_trace.jsonl", trace)
    if labels is not None:
        _write_jsonl(out / "train_labels.jsonl", [{"qid": q, "label": lab.label} for q, lab in labels.items()])
    model.save(out / "retriever.ckpt")
    summary = {"checkpoint": str(out / "retriever.ckpt"), "labels": mode, "epochs": len(trace),
               "final_loss": trace[-1]["mean_loss"] if trace else None}
    if labels is not None and mode == "labeler":
        summary["label_agreement"] = label_agreement(labels, corpus.train)
    text = f"trained {len(trace)} epochs ({mode}); checkpoint {out / 'retriever.ckpt'}"
    if trace:
        text += f"; final mean loss {trace[-1]['mean_loss']:.4f}"
    _emit(args, summary, text)
    return 0


def _candidates(args, corpus):
    return corpus.test_answer_ids() if args.restrict_test_answers else corpus.answers.ids


def _evaluate_retrieval(args) -> int:
    corpus, vocab, table = _load_data(args)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    ids = _candidates(args, corpus)
    gold = {p.qid: p.answer_id for p in corpus.test}
    class_of = {p.qid: p.label for p in corpus.test if p.label is not None}
    if args.scorer == "bm25":
        sub = corpus.answers if not args.restrict_test_answers else \
            type(corpus.answers)({a: corpus.answers[a] for a in ids})
        index = bm25.build_index(sub)
        rankings = {p.qid: [a for a, _ in bm25.rank(p.question, index)] for p in corpus.test}
    else:
        model = _load_kind(args.checkpoint, "cgnn")
        labels = None
        if model.config.label_dims:
            mode = _label_mode(args)
            if mode == "no-labels":
                raise CliError("this retriever was trained with labels; pass --labeler or --oracle-labels")
            labels = _resolve_labels(args, mode, corpus.test, corpus, vocab, table, rng)
        elif args.labeler or args.oracle_labels:
            raise CliError("this retriever was trained without labels; drop the label flags")
        rankings = rank_questions(model, corpus.test, corpus.answers, labels, ids)
    report = retrieval_metrics(rankings, gold, k=args.k, labels=class_of or None)
    out = _out_dir(args)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    _emit(args, json.loads(report.to_json()), report.table())
    return 0


def _evaluate_labeler(args) -> int:
    model = _load_kind(args.checkpoint, "ntm")
    train, test = _labeler_pools(args)
    if test is None:
        raise CliError("labeler evaluation needs held-out items (--test-pool or labeled qa_test)")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    shots = args.shots[0] if args.shots else 10
    qpc = min(5, int(test.class_counts().min()))
    if qpc == 0:
        raise CliError("held-out items must cover all five classes")
    acc, preds, gold = evaluate_labeler(model, train, test, shots, args.episodes, rng, queries_per_class=qpc)
    report = labeling_accuracy(preds, gold, shots)
    out = _out_dir(args)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    rows = "\n".join(f"{c.label:<12}" + " ".join(f"{v:5d}" for v in row) for c, row in zip(LabelClass, report.confusion))
    _emit(args, json.loads(report.to_json()), f"{shots}-shot accuracy {report.accuracy:.1f}%\n{rows}")
    return 0


def cmd_evaluate(args) -> int:
    if args.scorer == "bm25":
        return _evaluate_retrieval(args)
    if args.checkpoint is None:
        raise CliError("evaluate needs --checkpoint (or --scorer bm25)")
    kind, _, _ = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    if args.scorer and args.scorer != {"cgnn": "cgnn", "ntm": "ntm"}[kind]:
        raise CliError(f"{args.checkpoint} holds a {kind!r} model but --scorer {args.scorer} was requested")
    return _evaluate_labeler(args) if kind == "ntm" else _evaluate_retrieval(args)


def cmd_retrieve(args) -> int:
    corpus, vocab, table = _load_data(args)
    question = args.question.split()
    if not question:
        raise CliError("--question is empty")
    ids = _candidates(args, corpus)
    if args.scorer == "bm25":
        sub = type(corpus.answers)({a: corpus.answers[a] for a in ids})
        ranked = bm25.rank(question, bm25.build_index(sub), top_k=args.top)
    else:
        model = _load_kind(args.checkpoint, "cgnn")
        label = None
        if model.config.label_dims:
            if args.label:
                label = LabelClass.parse(args.label)
            elif args.labeler:
                rng = np.random.default_rng(args.seed if args.seed is not None else 0)
                labeler = NtmModel.load(_require_file(args.labeler, "labeler checkpoint"))
                pool = None if args.weights_only else labeled_question_pool(corpus.train, vocab, table)
                label = ntm_labels(labeler, [QaPair("query", question, ids[0])], vocab, table, pool,
                                   args.support_shots, rng)["query"]
            else:
                raise CliError("this retriever uses labels; pass --label NAME or --labeler CKPT")
        _, reps = model.answer_reps(corpus.answers, ids)
        q = model.encode_tokens([question], [label] if label is not None else None).rep.data[0]
        ranked = rank_answers(q, ids, reps)[:args.top]
    payload = {"question": args.question, "results": [{"answer_id": a, "score": s} for a, s in ranked]}
    lines = [f"{i + 1:>3}. {a}  {s:.4f}  {' '.join(corpus.answers[a][:12])}" for i, (a, s) in enumerate(ranked)]
    _emit(args, payload, "\n".join(lines))
    return 0


def _gradcheck_cgnn(tolerance: float):
    rng = np.random.default_rng(0)
    vocab = Vocab([f"w{i}" for i in range(12)])
    config = CgnnConfig(widths=[3], channels=6, embed_dim=8, n_max=12, negatives=2, dropout=0.0)
    model = CgnnModel(config, vocab, EmbeddingTable(rng.normal(size=(len(vocab), 8))), rng)

    def words(n):
        return [f"w{i}" for i in rng.integers(0, 12, n)]
    qs, ps = [words(6)], [words(8)]
    ns = [[words(7), words(5)]]
    return finite_diff_check(lambda: pair_losses(model, qs, None, ps, ns), model.parameters(), tolerance)


def _gradcheck_ntm(tolerance: float):
    rng = np.random.default_rng(0)
    model = NtmModel(NtmConfig(input_dim=4, controller=6, heads=1, slots=8, width=10), rng)
    ep = Episode(rng.normal(size=(3, 4)), np.array([0, 3, 1]), np.zeros((0, 4)), np.zeros(0, dtype=np.int64))
    return finite_diff_check(lambda: episode_forward(ep, model, strict=False).loss, model.parameters(), tolerance)


def cmd_gradcheck(args) -> int:
    modules = ["cgnn", "ntm"] if args.module == "all" else [args.module]
    results, lines = {}, []
    for name in modules:
        report = (_gradcheck_cgnn if name == "cgnn" else _gradcheck_ntm)(args.tolerance)
        results[name] = {"passed": report.passed, "max_error": report.worst, "checked": report.checked,
                         "tolerance": args.tolerance}
        lines.append(f"{name}: {'PASS' if report.passed else 'FAIL'} (max rel error {report.worst:.2e} "
                     f"over {sum(report.checked.values())} coordinates, tolerance {args.tolerance:g})")
    _emit(args, results, "\n".join(lines))
    return 0 if all(r["passed"] for r in results.values()) else 1


def cmd_heatmap(args) -> int:
    corpus, vocab, table = _load_data(args)
    model = _load_kind(args.checkpoint, "cgnn")
    pairs = {p.qid: p for p in corpus.train + corpus.test}
    if args.qid not in pairs:
        raise CliError(f"unknown question id {args.qid!r}")
    pair = pairs[args.qid]
    label = None
    if model.config.label_dims:
        if args.label:
            label = LabelClass.parse(args.label)
        elif pair.label is not None:
            label = pair.label
        else:
            raise CliError("this retriever uses labels; pass --label NAME")
    records = []
    for side, toks, lab in (("question", pair.question, label), ("answer", corpus.answers[pair.answer_id], None)):
        kept = toks[:model.config.n_max]
        enc = model.encode(encode_sequence(kept, vocab, model.config.n_max)[None],
                           [lab] if lab is not None else None)
        acts = [a.data[0] for a in enc.activations]
        records.append(export_gate_heatmap(acts, kept, side, model.config.widths))
    out = _out_dir(args)
    path = out / f"heatmap_{args.qid}.jsonl"
    _write_jsonl(path, [json.loads(r.to_json()) for r in records])
    text = "\n".join(f"{r.side}: " + " ".join(f"{t}({w:.2f})" for t, w in zip(r.tokens, r.weights))
                     for r in records)
    _emit(args, {"file": str(path), "records": [json.loads(r.to_json()) for r in records]}, text)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, out_default: str = "runs") -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed (required for training)")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--config", default=None, help="JSON file whose keys override command-line options")
    p.add_argument("--json", action="store_true", help="print machine-readable JSON")
    p.add_argument("-v", "--verbose", action="store_true")


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=None, help="corpus directory (answers.jsonl, qa_train.jsonl, qa_test.jsonl)")
    p.add_argument("--embeddings", default=None, help="embedding text file (default: <data>/embeddings.txt)")
    p.add_argument("--vocab-policy", choices=["fixed", "extend"], default="fixed")


def _label_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--labeler", default=None, help="NTM checkpoint that labels questions")
    p.add_argument("--oracle-labels", action="store_true", help="use gold question labels")
    p.add_argument("--no-labels", action="store_true", help="bare retriever without label input")
    p.add_argument("--support-shots", type=int, default=10, help="support items per class shown to the labeler")
    p.add_argument("--weights-only", action="store_true", help="label without a support prefix")


def _retriever_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scorer", choices=["cgnn", "bm25", "ntm"], default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--restrict-test-answers", action="store_true",
                   help="rank only answers referenced by the test split")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ntmqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("task", choices=["fewshot", "retrieval"])
    _common(p, "data")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--n-topics", type=int, default=12)
    p.add_argument("--paraphrase", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-labeler", help="episodic training of the NTM labeler")
    _common(p)
    _data_args(p)
    p.add_argument("--pool", default=None, help="labeled vector records for training")
    p.add_argument("--test-pool", default=None, help="held-out labeled vector records")
    p.add_argument("--shots", type=_shots, default=[10], help="shots per class, or a comma list to mix")
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--eval-episodes", type=int, default=50)
    p.add_argument("--controller", type=int, default=200)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--slots", type=int, default=128)
    p.add_argument("--width", type=int, default=100)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--queries-per-class", type=int, default=1)
    p.add_argument("--no-erase", action="store_true", help="disable pre-write erase of the least-used slot")
    p.add_argument("--rotate-inputs", action="store_true", help="random rotation augmentation per episode")
    p.set_defaults(func=cmd_train_labeler)

    p = sub.add_parser("train-retriever", help="max-margin training of the gated convolutional retriever")
    _common(p)
    _data_args(p)
    _label_args(p)
    p.add_argument("--widths", type=_widths, default=[4])
    p.add_argument("--channels", type=int, default=200)
    p.add_argument("--embed-dim", type=int, default=200)
    p.add_argument("--n-max", type=int, default=100)
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--ablation", choices=["full", "single_gate", "gates_off"], default="full")
    p.add_argument("--negatives", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--freeze-embeddings", action="store_true")
    p.add_argument("--literal-hinge", action="store_true",
                   help="use max over negatives of (pos - neg + margin) instead of the ranking hinge")
    p.set_defaults(func=cmd_train_retriever)

    p = sub.add_parser("evaluate", help="retrieval P/R/F1 or labeling accuracy")
    _common(p)
    _data_args(p)
    _label_args(p)
    _retriever_args(p)
    p.add_argument("--k", type=int, default=3, help="retrieval cutoff")
    p.add_argument("--pool", default=None)
    p.add_argument("--test-pool", default=None)
    p.add_argument("--shots", type=_shots, default=[10])
    p.add_argument("--episodes", type=int, default=200, help="labeler evaluation episodes")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("retrieve", help="rank answers for one question")
    _common(p)
    _data_args(p)
    _label_args(p)
    _retriever_args(p)
    p.add_argument("--question", required=True, help="space-separated question tokens")
    p.add_argument("--label", default=None, help="question label for a labeled retriever")
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on tiny models")
    _common(p)
    p.add_argument("--module", choices=["cgnn", "ntm", "all"], default="all")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("heatmap", help="per-token gate weights for a question and its gold answer")
    _common(p)
    _data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--qid", required=True)
    p.add_argument("--label", default=None)
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_config(args, parser)
        if getattr(args, "top", 1) < 1:
            raise CliError("--top must be >= 1")
        return args.func(args)
    except (CliError, DataError, CheckpointError, FileNotFoundError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
