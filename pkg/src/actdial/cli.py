"""Command-line entry point binding training, evaluation, scoring, and serving.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training divergence.
Failures print one machine-parseable line: ``error: <category>: <message>``.
"""

import argparse
import os
import sys
from typing import Optional

from .config import (
    ConfigError,
    RunSettings,
    load_settings,
    model_config,
    ppo_config,
    save_settings,
    sft_config,
)
from .corpus import (
    ACT_FULL_NAMES,
    ACTS,
    CorpusError,
    act_transition_counts,
    build_vocab,
    load_corpus,
    validate,
)
from .eval_harness import evaluate_generation, evaluate_rac, score_pairs
from .model import (
    DecodingParams,
    MultiHeadModel,
    TrainingDivergence,
    freeze_reference,
    load_checkpoint,
    save_checkpoint,
    seed_all,
    supervised_train,
)
from .ppo import TrainLog, train
from .reward import ActClassifier, RewardModels
from .service import SessionEngine, SessionOptions, create_app


def _fail(category: str, message: str) -> None:
    print(f"error: {category}: {message}", file=sys.stderr)


def _load_corpus_checked(path: str):
    if not path:
        raise CorpusError("no corpus path configured")
    corpus = load_corpus(path)
    report = validate(corpus)
    if not report.ok:
        first = report.violations[0]
        raise CorpusError(
            f"{path}: {len(report.violations)} violation(s); "
            f"first: {first.dialogue_id}: {first.kind}: {first.detail}"
        )
    return corpus


def _load_model_checked(path: str):
    if not path:
        raise ConfigError("checkpoint: no checkpoint path configured")
    if not os.path.exists(path):
        raise CorpusError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _prepare_run_dir(settings: RunSettings) -> str:
    os.makedirs(settings.run_dir, exist_ok=True)
    save_settings(settings, os.path.join(settings.run_dir, "settings.json"))
    return settings.run_dir


# -- commands ----------------------------------------------------------------


def cmd_train_sft(settings: RunSettings) -> int:
    seed_all(settings.seed, single_thread=settings.single_thread)
    corpus = _load_corpus_checked(settings.corpus)
    run_dir = _prepare_run_dir(settings)
    vocab = build_vocab(corpus, max_size=settings.vocab_max_size, min_freq=settings.vocab_min_freq)
    model = MultiHeadModel(model_config(settings, len(vocab)))
    model, curve = supervised_train(model, corpus, vocab, sft_config(settings))
    log = TrainLog()
    for i, record in enumerate(curve):
        log.append({"step": i, **record})
    log.save(os.path.join(run_dir, "sft_log.jsonl"))
    save_checkpoint(
        model, vocab, os.path.join(run_dir, "final.ckpt"), meta={"stage": "sft"}
    )
    print(f"sft complete: {len(curve) - 1} epoch(s), checkpoint {run_dir}/final.ckpt")
    return 0


def cmd_train_ppo(settings: RunSettings) -> int:
    seed_all(settings.seed, single_thread=settings.single_thread)
    policy, vocab, _ = _load_model_checked(settings.checkpoint)
    corpus = _load_corpus_checked(settings.corpus)
    run_dir = _prepare_run_dir(settings)
    policy.train()
    for p in policy.parameters():
        p.requires_grad_(True)
    reference = freeze_reference(policy)
    classifier = ActClassifier(reference, vocab, context_k=settings.context_k)
    models = RewardModels(
        reference=reference,
        act_classifier=classifier,
        vocab=vocab,
        re_scale=settings.re_scale,
        rouge_variant=settings.rouge_variant,
    )
    _, log = train(
        policy, reference, classifier, corpus, vocab,
        ppo_config(settings), run_dir=run_dir, reward_models=models,
    )
    last = log.records[-1] if log.records else {}
    print(
        f"ppo complete: {len(log.records)} step(s), "
        f"final reward {last.get('mean_reward', float('nan')):.4f}, "
        f"checkpoint {run_dir}/final.ckpt"
    )
    return 0


def cmd_eval(settings: RunSettings) -> int:
    seed_all(settings.seed, single_thread=settings.single_thread)
    model, vocab, _ = _load_model_checked(settings.checkpoint)
    corpus = _load_corpus_checked(settings.eval_corpus or settings.corpus)
    decoding = DecodingParams(
        temperature=0.0, max_new_tokens=settings.max_new_tokens, seed=settings.seed
    )
    report = evaluate_generation(
        model, corpus, vocab, decoding=decoding, context_k=settings.context_k
    )
    if settings.ref_checkpoint:
        ref_model, ref_vocab, _ = _load_model_checked(settings.ref_checkpoint)
        ref_clf = ActClassifier(ref_model, ref_vocab, context_k=settings.context_k)
    else:
        ref_clf = ActClassifier(model, vocab, context_k=settings.context_k)
    ref_vs_gold, head_vs_gold, head_vs_ref = evaluate_rac(
        model, corpus, vocab, ref_clf, context_k=settings.context_k
    )
    print(report.table("policy"))
    print(ref_vs_gold.table("reference vs gold"))
    print(head_vs_gold.table("act head vs gold"))
    print(head_vs_ref.table("act head vs reference"))
    if settings.run_dir:
        run_dir = _prepare_run_dir(settings)
        report.save(run_dir, name="eval")
        with open(os.path.join(run_dir, "rac_eval.txt"), "w", encoding="utf-8") as fh:
            fh.write(ref_vs_gold.table("reference vs gold") + "\n")
            fh.write(head_vs_gold.table("act head vs gold") + "\n")
            fh.write(head_vs_ref.table("act head vs reference") + "\n")
    return 0


def cmd_score(settings: RunSettings, candidate_path: str, reference_path: str) -> int:
    def read_lines(path: str) -> list[str]:
        if not os.path.exists(path):
            raise CorpusError(f"file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh]

    candidates = read_lines(candidate_path)
    references = read_lines(reference_path)
    try:
        report = score_pairs(candidates, references)
    except ValueError as exc:
        raise CorpusError(str(exc)) from exc
    print(report.table("pairs"))
    return 0


def cmd_generate(settings: RunSettings, context_path: str) -> int:
    seed_all(settings.seed, single_thread=settings.single_thread)
    model, vocab, _ = _load_model_checked(settings.checkpoint)
    corpus = _load_corpus_checked(context_path)
    dialogue = corpus.dialogues[-1]
    engine = SessionEngine(model, vocab)
    options = SessionOptions(
        temperature=settings.temperature,
        top_k=settings.top_k,
        top_p=settings.top_p,
        max_new_tokens=settings.max_new_tokens,
        context_k=settings.context_k,
        seed=settings.seed,
    )
    seed_turns = [(u.speaker, u.text, u.act) for u in dialogue.turns]
    session = engine.create("synthetic", seed_turns, options)
    turn = engine.step(session.id)
    print(f"{turn.speaker} [{turn.act.value}] {turn.text}")
    return 0


def cmd_stats(settings: RunSettings, corpus_path: str) -> int:
    corpus = _load_corpus_checked(corpus_path)
    counts = act_transition_counts(corpus)
    lengths = [len(d) for d in corpus.dialogues]
    print(f"dialogues {len(corpus)}")
    print(f"utterances {corpus.n_utterances}")
    print(f"transitions {int(counts.sum())}")
    print(f"turns min {min(lengths)} max {max(lengths)} "
          f"mean {sum(lengths) / len(lengths):.2f}")
    histogram = {act: 0 for act in ACTS}
    for u in corpus.utterances():
        histogram[u.act] += 1
    for act in ACTS:
        print(f"act {act.value:<4} {histogram[act]:>8}  # {ACT_FULL_NAMES[act]}")
    return 0


def cmd_serve(settings: RunSettings) -> int:
    import uvicorn

    model, vocab, _ = _load_model_checked(settings.checkpoint)
    app = create_app(
        freeze_reference(model),
        vocab,
        checkpoint_label=settings.checkpoint,
        persist_dir=settings.persist_dir or None,
    )
    uvicorn.run(app, host=settings.host, port=settings.port)
    return 0


# -- argument parsing ---------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value settings file")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one setting (repeatable)",
    )
    parser.add_argument("--corpus", help="training corpus JSONL path")
    parser.add_argument("--run-dir", dest="run_dir", help="artifact output directory")
    parser.add_argument("--checkpoint", help="model checkpoint path")
    parser.add_argument("--seed", type=int, help="RNG seed")
    parser.add_argument(
        "--single-thread",
        action="store_true",
        default=None,
        help="pin numeric kernels to one thread for bitwise reproducibility",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actdial",
        description="Train, evaluate, and serve an act-conditioned dialogue model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train-sft", help="supervised training from a corpus")
    sub.add_parser("train-ppo", help="reinforcement training from an SFT checkpoint")
    sub.add_parser("eval", help="generation and act-classification reports")
    score = sub.add_parser("score", help="score aligned candidate/reference text files")
    score.add_argument("candidate", help="one candidate text per line")
    score.add_argument("reference", help="one reference text per line")
    generate = sub.add_parser("generate", help="generate the next turn for a context")
    generate.add_argument("context", help="corpus JSONL file; last dialogue is the context")
    stats = sub.add_parser("stats", help="corpus statistics")
    stats.add_argument("corpus_path", help="corpus JSONL path")
    sub.add_parser("serve", help="run the HTTP session service")

    for name, command in sub.choices.items():
        _add_common(command)
    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"flags: expected KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key in ("corpus", "run_dir", "checkpoint", "seed", "single_thread"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    return overrides


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(config_path=args.config, overrides=_overrides_from_args(args))
        if args.command == "train-sft":
            return cmd_train_sft(settings)
        if args.command == "train-ppo":
            return cmd_train_ppo(settings)
        if args.command == "eval":
            return cmd_eval(settings)
        if args.command == "score":
            return cmd_score(settings, args.candidate, args.reference)
        if args.command == "generate":
            return cmd_generate(settings, args.context)
        if args.command == "stats":
            return cmd_stats(settings, args.corpus_path)
        if args.command == "serve":
            return cmd_serve(settings)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        _fail("config", str(exc))
        return 2
    except (CorpusError, OSError) as exc:
        _fail("data", str(exc))
        return 3
    except TrainingDivergence as exc:
        _fail("divergence", str(exc))
        return 4
    except ValueError as exc:
        _fail("config", str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
