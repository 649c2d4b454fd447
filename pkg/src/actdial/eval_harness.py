"""Evaluation harness: generation metrics, act-classification reports, reward ablations.

Produces per-example records alongside aggregates so every summary number can be
recomputed from the raw rows. Generation evaluation decodes greedily by default;
sampling stays confined to RL rollouts.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import N_ACTS, Corpus, Utterance, Vocabulary, tokenize
from .encoding import encode_prompt
from .metrics import PRF, embed_similarity, meteor, rouge_l, rouge_n
from .model import (
    DecodingParams,
    MultiHeadModel,
    freeze_reference,
    seed_all,
    token_embedder,
)
from .ppo import PPOConfig, TrainLog, train
from .reward import ActClassifier, RewardWeights

# Stub signature: (context_turns, next_speaker, gold_text) -> generated text.
# Real evaluation ignores the gold argument; oracle/degenerate stubs need it.
GenerateFn = Callable[[Sequence[Utterance], str, str], str]


@dataclass(frozen=True)
class GenerationRecord:
    """Scores for one evaluated turn."""

    dialogue_id: str
    turn_index: int
    gold: str
    generated: str
    r1: PRF
    r2: PRF
    rl: PRF
    bs: Optional[float]
    meteor: float

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("r1", "r2", "rl"):
            p = d[key]
            d[key] = [p["precision"], p["recall"], p["f1"]]
        return d


def _mean_prf(values: Sequence[PRF]) -> PRF:
    if not values:
        return PRF.zero()
    n = float(len(values))
    return PRF(
        sum(v.precision for v in values) / n,
        sum(v.recall for v in values) / n,
        sum(v.f1 for v in values) / n,
    )


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate generation metrics plus the per-example rows they average."""

    records: tuple[GenerationRecord, ...]
    r1: PRF
    r2: PRF
    rl: PRF
    bs: Optional[float]
    meteor: float
    n_examples: int
    n_skipped: int

    @classmethod
    def from_records(
        cls, records: Sequence[GenerationRecord], n_skipped: int = 0
    ) -> "MetricsReport":
        recs = tuple(records)
        bs_vals = [r.bs for r in recs if r.bs is not None]
        return cls(
            records=recs,
            r1=_mean_prf([r.r1 for r in recs]),
            r2=_mean_prf([r.r2 for r in recs]),
            rl=_mean_prf([r.rl for r in recs]),
            bs=sum(bs_vals) / len(bs_vals) if bs_vals else None,
            meteor=sum(r.meteor for r in recs) / len(recs) if recs else 0.0,
            n_examples=len(recs),
            n_skipped=n_skipped,
        )

    def table(self, name: str = "model") -> str:
        bs = f"{self.bs:.4f}" if self.bs is not None else "-"
        lines = [
            f"{'system':<12} {'R1-P':>7} {'R1-R':>7} {'R1-F1':>7} "
            f"{'R2-F1':>7} {'RL-F1':>7} {'BS':>7} {'METEOR':>7}",
            f"{name:<12} {self.r1.precision:7.4f} {self.r1.recall:7.4f} "
            f"{self.r1.f1:7.4f} {self.r2.f1:7.4f} {self.rl.f1:7.4f} "
            f"{bs:>7} {self.meteor:7.4f}",
            f"examples={self.n_examples} skipped={self.n_skipped}",
        ]
        return "\n".join(lines)

    def save(self, directory: str, name: str = "eval") -> None:
        """Write <name>.txt (table) and <name>.jsonl (one record per line)."""
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8") as fh:
            fh.write(self.table(name) + "\n")
        with open(os.path.join(directory, f"{name}.jsonl"), "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def generated_text(
    model: MultiHeadModel,
    vocab: Vocabulary,
    context_turns: Sequence[Utterance],
    next_speaker: str,
    decoding: DecodingParams,
    classifier: Optional[ActClassifier] = None,
) -> str:
    """Predict the next act, then decode a response conditioned on it."""
    clf = classifier or ActClassifier(model, vocab)
    act = clf.predict(context_turns, next_speaker)
    budget = model.config.max_seq_len - decoding.max_new_tokens
    prompt = encode_prompt(vocab, context_turns, next_speaker, act=act, max_len=budget)
    result = model.generate(prompt, decoding)
    return vocab.decode_text(result.tokens)


def evaluate_generation(
    model: MultiHeadModel,
    corpus: Corpus,
    vocab: Vocabulary,
    decoding: Optional[DecodingParams] = None,
    context_k: int = 4,
    embedder: Optional[Callable[[str], np.ndarray]] = None,
    generate_fn: Optional[GenerateFn] = None,
) -> MetricsReport:
    """Generate a reply for every turn with at least one context turn and score it."""
    dec = decoding or DecodingParams(temperature=0.0)
    emb = embedder or token_embedder(model, vocab)
    clf = ActClassifier(model, vocab, context_k=context_k)
    records: list[GenerationRecord] = []
    n_skipped = 0
    i = 0
    for dlg in corpus.dialogues:
        for t in range(1, len(dlg.turns)):
            target = dlg.turns[t]
            context = dlg.turns[max(0, t - context_k) : t]
            try:
                if generate_fn is not None:
                    hyp = generate_fn(context, target.speaker, target.text)
                else:
                    per_turn = replace(dec, seed=dec.seed + i * 9973)
                    hyp = generated_text(model, vocab, context, target.speaker, per_turn, clf)
            except ValueError:
                n_skipped += 1
                continue
            i += 1
            cand = tokenize(hyp)
            ref = tokenize(target.text)
            records.append(
                GenerationRecord(
                    dialogue_id=dlg.id,
                    turn_index=target.turn_index,
                    gold=target.text,
                    generated=hyp,
                    r1=rouge_n(cand, ref, 1),
                    r2=rouge_n(cand, ref, 2),
                    rl=rouge_l(cand, ref),
                    bs=embed_similarity(cand, ref, emb).f1,
                    meteor=meteor(cand, ref),
                )
            )
    return MetricsReport.from_records(records, n_skipped)


def score_pairs(
    candidates: Sequence[str],
    references: Sequence[str],
    embedder: Optional[Callable[[str], np.ndarray]] = None,
) -> MetricsReport:
    """Score aligned candidate/reference text pairs without a model."""
    if len(candidates) != len(references):
        raise ValueError(
            f"candidate/reference count mismatch: {len(candidates)} vs {len(references)}"
        )
    records = []
    for idx, (hyp, gold) in enumerate(zip(candidates, references)):
        cand = tokenize(hyp)
        ref = tokenize(gold)
        bs = embed_similarity(cand, ref, embedder).f1 if embedder is not None else None
        records.append(
            GenerationRecord(
                dialogue_id="pairs",
                turn_index=idx,
                gold=gold,
                generated=hyp,
                r1=rouge_n(cand, ref, 1),
                r2=rouge_n(cand, ref, 2),
                rl=rouge_l(cand, ref),
                bs=bs,
                meteor=meteor(cand, ref),
            )
        )
    return MetricsReport.from_records(records)


@dataclass(frozen=True)
class RACReport:
    """Classification quality derived from a 12x12 confusion matrix (rows = gold)."""

    confusion: tuple[tuple[int, ...], ...]
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    total: int

    @classmethod
    def from_pairs(cls, gold: Sequence[int], pred: Sequence[int]) -> "RACReport":
        if len(gold) != len(pred):
            raise ValueError(f"gold/pred length mismatch: {len(gold)} vs {len(pred)}")
        conf = np.zeros((N_ACTS, N_ACTS), dtype=np.int64)
        for g, p in zip(gold, pred):
            conf[g, p] += 1
        total = int(conf.sum())
        diag = np.diag(conf).astype(np.float64)
        row = conf.sum(axis=1).astype(np.float64)
        col = conf.sum(axis=0).astype(np.float64)
        prec = np.divide(diag, col, out=np.zeros(N_ACTS), where=col > 0)
        rec = np.divide(diag, row, out=np.zeros(N_ACTS), where=row > 0)
        pr = prec + rec
        f1 = np.divide(2.0 * prec * rec, pr, out=np.zeros(N_ACTS), where=pr > 0)
        support = row / total if total else np.zeros(N_ACTS)
        return cls(
            confusion=tuple(tuple(int(x) for x in r) for r in conf),
            accuracy=float(diag.sum() / total) if total else 0.0,
            weighted_precision=float(support @ prec),
            weighted_recall=float(support @ rec),
            weighted_f1=float(support @ f1),
            total=total,
        )

    def table(self, name: str = "classifier") -> str:
        return (
            f"{name:<24} P={self.weighted_precision:.4f} R={self.weighted_recall:.4f} "
            f"F1={self.weighted_f1:.4f} acc={self.accuracy:.4f} n={self.total}"
        )


def evaluate_rac(
    model: MultiHeadModel,
    corpus: Corpus,
    vocab: Vocabulary,
    ref_classifier: ActClassifier,
    context_k: int = 4,
) -> tuple[RACReport, RACReport, RACReport]:
    """Three comparisons: reference vs gold, model head vs gold, model head vs reference."""
    own = ActClassifier(model, vocab, context_k=context_k)
    golds: list[int] = []
    ref_preds: list[int] = []
    own_preds: list[int] = []
    for dlg in corpus.dialogues:
        for t in range(1, len(dlg.turns)):
            target = dlg.turns[t]
            context = dlg.turns[max(0, t - context_k) : t]
            golds.append(target.act.index)
            ref_preds.append(ref_classifier.predict(context, target.speaker).index)
            own_preds.append(own.predict(context, target.speaker).index)
    return (
        RACReport.from_pairs(golds, ref_preds),
        RACReport.from_pairs(golds, own_preds),
        RACReport.from_pairs(ref_preds, own_preds),
    )


@dataclass(frozen=True)
class AblationResult:
    name: str
    weights: RewardWeights
    report: MetricsReport
    distinct2: float
    log: TrainLog


def ablate(
    policy: MultiHeadModel,
    reference: MultiHeadModel,
    ref_classifier: ActClassifier,
    train_corpus: Corpus,
    eval_corpus: Corpus,
    vocab: Vocabulary,
    config: PPOConfig,
    variants: Sequence[tuple[str, RewardWeights]],
    run_dir: Optional[str] = None,
) -> list[AblationResult]:
    """Train one policy per reward variant with shared seed and data, then evaluate each.

    distinct2 is averaged over the final 10% of training steps as a collapse diagnostic.
    """
    results = []
    for name, weights in variants:
        seed_all(config.seed)
        work = copy.deepcopy(policy)
        work.train()
        for p in work.parameters():
            p.requires_grad_(True)
        cfg = replace(config, weights=weights)
        sub_dir = os.path.join(run_dir, name) if run_dir else None
        if sub_dir:
            os.makedirs(sub_dir, exist_ok=True)
        _, log = train(work, reference, ref_classifier, train_corpus, vocab, cfg, run_dir=sub_dir)
        frozen = freeze_reference(work)
        report = evaluate_generation(frozen, eval_corpus, vocab)
        d2 = log.column("distinct2")
        window = max(1, len(d2) // 10)
        results.append(
            AblationResult(
                name=name,
                weights=weights,
                report=report,
                distinct2=sum(d2[-window:]) / window if d2 else 0.0,
                log=log,
            )
        )
    if run_dir:
        with open(os.path.join(run_dir, "ablation.txt"), "w", encoding="utf-8") as fh:
            fh.write(ablation_table(results) + "\n")
    return results


def ablation_table(results: Sequence[AblationResult]) -> str:
    lines = [
        f"{'variant':<16} {'R1-F1':>7} {'RL-F1':>7} {'BS':>7} {'METEOR':>7} {'dist-2':>7}"
    ]
    for res in results:
        rep = res.report
        bs = f"{rep.bs:.4f}" if rep.bs is not None else "-"
        lines.append(
            f"{res.name:<16} {rep.r1.f1:7.4f} {rep.rl.f1:7.4f} {bs:>7} "
            f"{rep.meteor:7.4f} {res.distinct2:7.4f}"
        )
    return "\n".join(lines)
