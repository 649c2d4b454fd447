"""Scalar reward composition and its distribution into per-token rewards.

The sequence reward is a weighted sum of four signals: lexical overlap with
the gold response (R), embedding similarity to it (BS), the frozen reference
classifier's confidence in the chosen response-act (rho), and a relative
-entropy term (RE) that discourages drifting from the reference model. Reward
= l1*R + l2*BS + l3*rho - l4*RE, with RE divided by a fixed scale before it
enters the sum. Per-token rewards carry a KL penalty -beta*(logp - logp_ref)
at every token plus the sequence reward at the terminal token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .corpus import DialogueAct, Utterance, Vocabulary, tokenize
from .encoding import encode_prompt
from .metrics import RewardComponents, embed_similarity, rouge_l, rouge_n
from .model import MultiHeadModel, evaluate_logprobs, token_embedder


@dataclass(frozen=True)
class RewardWeights:
    lambda1: float = 0.5   # lexical overlap
    lambda2: float = 0.15  # embedding similarity
    lambda3: float = 0.15  # act-classifier confidence
    lambda4: float = 0.2   # relative-entropy penalty

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class RewardBreakdown:
    components: RewardComponents
    total: float
    beta: float
    per_token_kl: tuple[float, ...]


class ActClassifier:
    """Act predictor over a dialogue context, backed by a model's act head.

    Built on a frozen checkpoint it serves as the external reference scorer
    for the rho reward term; built on the live policy it supplies the act that
    conditions generation.
    """

    def __init__(self, model: MultiHeadModel, vocab: Vocabulary, context_k: int = 4):
        self.model = model
        self.vocab = vocab
        self.context_k = context_k

    @torch.no_grad()
    def probabilities(
        self, context_turns: Sequence[Utterance], next_speaker: str
    ) -> torch.Tensor:
        turns = list(context_turns)[-self.context_k :]
        prompt = encode_prompt(
            self.vocab, turns, next_speaker, max_len=self.model.config.max_seq_len
        )
        out = self.model(prompt)
        _, probs = self.model.rac_forward(out.hidden_states)
        return probs.detach()

    def predict(
        self, context_turns: Sequence[Utterance], next_speaker: str
    ) -> DialogueAct:
        probs = self.probabilities(context_turns, next_speaker)
        return DialogueAct.from_index(int(torch.argmax(probs)))


def reference_act_score(
    context_turns: Sequence[Utterance],
    next_speaker: str,
    predicted_act: DialogueAct,
    ref_classifier: ActClassifier,
) -> float:
    """Probability the reference classifier assigns to the chosen act."""
    probs = ref_classifier.probabilities(context_turns, next_speaker)
    return float(probs[predicted_act.index])


def compose_reward(components: RewardComponents, weights: RewardWeights) -> float:
    for name in ("r", "bs", "rho", "re"):
        if not math.isfinite(getattr(components, name)):
            raise ValueError(f"non-finite reward component {name}")
    return (
        weights.lambda1 * components.r
        + weights.lambda2 * components.bs
        + weights.lambda3 * components.rho
        - weights.lambda4 * components.re
    )


def per_token_rewards(
    sequence_reward: float,
    logp_policy: Sequence[float],
    logp_ref: Sequence[float],
    beta: float,
) -> list[float]:
    """-beta*(logp_policy - logp_ref) at every token; the final token also
    receives the sequence reward."""
    if len(logp_policy) != len(logp_ref):
        raise ValueError(
            f"log-prob vectors differ in length: {len(logp_policy)} vs {len(logp_ref)}"
        )
    if len(logp_policy) == 0:
        raise ValueError("need at least one generated token")
    rewards = [-beta * (lp - lr) for lp, lr in zip(logp_policy, logp_ref)]
    rewards[-1] += sequence_reward
    return rewards


_ROUGE_VARIANTS: dict[str, Callable[[Sequence[str], Sequence[str]], float]] = {
    "rouge1_f": lambda c, r: rouge_n(c, r, 1).f1,
    "rouge1_r": lambda c, r: rouge_n(c, r, 1).recall,
    "rouge2_f": lambda c, r: rouge_n(c, r, 2).f1,
    "rougeL_f": lambda c, r: rouge_l(c, r).f1,
}


@dataclass
class RewardModels:
    """Frozen scorers consulted when pricing a generation.

    ``reference`` anchors the RE term and supplies the similarity embedder
    (its embedding table does not move during policy updates, keeping the BS
    term stationary). ``act_classifier`` provides rho.
    """

    reference: MultiHeadModel
    act_classifier: ActClassifier
    vocab: Vocabulary
    re_scale: float = 1000.0
    rouge_variant: str = "rouge1_f"
    embedder: Callable[[str], np.ndarray] | None = None

    def __post_init__(self):
        if self.rouge_variant not in _ROUGE_VARIANTS:
            raise ValueError(
                f"unknown rouge variant {self.rouge_variant!r}; "
                f"choose from {sorted(_ROUGE_VARIANTS)}"
            )
        if self.re_scale <= 0:
            raise ValueError(f"re_scale must be positive, got {self.re_scale}")
        if self.embedder is None:
            self.embedder = token_embedder(self.reference, self.vocab)


def score_generation(
    context_turns: Sequence[Utterance],
    gold_response: Utterance,
    generated_ids: Sequence[int],
    predicted_act: DialogueAct,
    policy: MultiHeadModel,
    models: RewardModels,
    weights: RewardWeights = RewardWeights(),
    beta: float = 0.0,
    re_estimate: float | None = None,
) -> RewardBreakdown:
    """Price one generated response against its gold counterpart.

    ``re_estimate`` lets the caller supply a batch-level relative-entropy
    estimate (unscaled); when absent the single-sample estimate from this
    generation is used. Either way the stored RE component is the estimate
    divided by ``models.re_scale``.
    """
    vocab = models.vocab
    prompt = encode_prompt(
        vocab,
        context_turns,
        gold_response.speaker,
        act=predicted_act,
        max_len=policy.config.max_seq_len - len(generated_ids),
    )
    full = list(prompt) + list(generated_ids)
    lp_pol = evaluate_logprobs(policy, full, len(prompt))
    lp_ref = evaluate_logprobs(models.reference, full, len(prompt))
    per_token_kl = tuple(p - r for p, r in zip(lp_pol, lp_ref))

    raw_re = re_estimate if re_estimate is not None else sum(per_token_kl)
    re = raw_re / models.re_scale

    n_special = 6
    gen_tokens = [vocab.tokens[i] for i in generated_ids if i >= n_special]
    gold_tokens = tokenize(gold_response.text)
    r = _ROUGE_VARIANTS[models.rouge_variant](gen_tokens, gold_tokens)
    bs = embed_similarity(gen_tokens, gold_tokens, models.embedder).f1
    rho = reference_act_score(
        context_turns, gold_response.speaker, predicted_act, models.act_classifier
    )

    components = RewardComponents(r=r, bs=bs, rho=rho, re=re)
    return RewardBreakdown(
        components=components,
        total=compose_reward(components, weights),
        beta=beta,
        per_token_kl=per_token_kl,
    )
