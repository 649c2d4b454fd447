"""Reinforcement-learning fine-tuning loop: rollout, reward scoring, clipped
-surrogate policy optimization with value and act losses, and a constant or
adaptive KL-penalty coefficient.

Each step samples dialogue contexts, generates responses from the policy,
prices them with the composite reward, spreads reward over tokens with the KL
penalty, estimates advantages, and runs several optimization epochs over the
batch. The reference model and reference act classifier stay frozen.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F

from .corpus import Corpus, DialogueAct, Utterance, Vocabulary
from .encoding import encode_prompt
from .metrics import distinct_n
from .model import (
    DecodingParams,
    MultiHeadModel,
    TrainingDivergence,
    evaluate_logprobs,
    save_checkpoint,
)
from .reward import (
    ActClassifier,
    RewardModels,
    RewardWeights,
    per_token_rewards,
    score_generation,
)

N_SPECIAL = 6


@dataclass(frozen=True)
class AdaptiveBeta:
    """Proportional controller driving the KL coefficient toward a target."""

    init: float = 0.2
    target_kl: float = 1.0
    horizon: float = 10000.0

    def __post_init__(self):
        if self.init <= 0 or self.target_kl <= 0 or self.horizon <= 0:
            raise ValueError("adaptive beta fields must be positive")


@dataclass(frozen=True)
class PPOConfig:
    lr: float = 2e-6
    batch_size: int = 128
    mini_batch_size: int = 0  # 0 = whole batch per update
    ppo_epochs: int = 4
    clip_eps: float = 0.2
    gamma: float = 1.0
    gae_lambda: float = 0.95
    beta: float | AdaptiveBeta = 0.2
    re_scale: float = 1000.0
    weights: RewardWeights = field(default_factory=RewardWeights)
    total_steps: int = 100
    value_coef: float = 0.5
    act_coef: float = 0.1
    context_k: int = 4
    decoding: DecodingParams = field(default_factory=lambda: DecodingParams(max_new_tokens=24))
    seed: int = 0
    checkpoint_every: int = 0
    divergence_kl_factor: float = 50.0
    divergence_patience: int = 10
    monitor_target_kl: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 < self.clip_eps < 1:
            raise ValueError(f"clip_eps must lie in (0,1), got {self.clip_eps}")
        for name in ("gamma", "gae_lambda"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0,1], got {v}")
        if self.batch_size < 1 or self.total_steps < 0 or self.ppo_epochs < 1:
            raise ValueError("batch_size/ppo_epochs must be >= 1 and total_steps >= 0")
        if isinstance(self.beta, float) and self.beta < 0:
            raise ValueError(f"constant beta must be non-negative, got {self.beta}")

    def to_dict(self) -> dict:
        d = {
            k: getattr(self, k)
            for k in (
                "lr", "batch_size", "mini_batch_size", "ppo_epochs", "clip_eps",
                "gamma", "gae_lambda", "re_scale", "total_steps", "value_coef",
                "act_coef", "context_k", "seed", "checkpoint_every",
                "divergence_kl_factor", "divergence_patience", "monitor_target_kl",
            )
        }
        if isinstance(self.beta, AdaptiveBeta):
            d["beta"] = {
                "init": self.beta.init,
                "target_kl": self.beta.target_kl,
                "horizon": self.beta.horizon,
            }
        else:
            d["beta"] = self.beta
        w = self.weights
        d["weights"] = [w.lambda1, w.lambda2, w.lambda3, w.lambda4]
        dec = self.decoding
        d["decoding"] = {
            "temperature": dec.temperature, "top_k": dec.top_k, "top_p": dec.top_p,
            "max_new_tokens": dec.max_new_tokens, "seed": dec.seed,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PPOConfig":
        d = dict(d)
        if isinstance(d.get("beta"), dict):
            d["beta"] = AdaptiveBeta(**d["beta"])
        if isinstance(d.get("weights"), (list, tuple)):
            d["weights"] = RewardWeights(*d["weights"])
        if isinstance(d.get("decoding"), dict):
            d["decoding"] = DecodingParams(**d["decoding"])
        return cls(**d)


@dataclass(frozen=True)
class RolloutTask:
    """One context the policy must respond to, with its gold continuation."""

    context_turns: tuple[Utterance, ...]
    gold: Utterance


@dataclass
class RolloutItem:
    prompt_tokens: tuple[int, ...]
    response_tokens: tuple[int, ...]
    old_logprobs: tuple[float, ...]
    ref_logprobs: tuple[float, ...]
    old_values: tuple[float, ...]
    predicted_act: int
    gold_act: int
    task: RolloutTask
    rewards: tuple[float, ...] = ()
    advantages: tuple[float, ...] = ()
    returns: tuple[float, ...] = ()
    total_reward: float = 0.0


@dataclass
class RolloutBatch:
    items: list[RolloutItem]

    def mean_sequence_kl(self) -> float:
        per_item = [
            sum(p - r for p, r in zip(it.old_logprobs, it.ref_logprobs))
            for it in self.items
        ]
        return sum(per_item) / len(per_item)


class TrainLog:
    """Append-only per-step training records with strictly increasing steps.

    Records carry no wall-clock fields so identical runs serialize to
    identical bytes.
    """

    def __init__(self, records: list[dict] | None = None):
        self.records: list[dict] = []
        for rec in records or []:
            self.append(rec)

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError(
                f"step {record['step']} does not increase on {self.records[-1]['step']}"
            )
        self.records.append(dict(record))

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> list[float]:
        return [rec[name] for rec in self.records]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrainLog":
        with open(path, encoding="utf-8") as fh:
            return cls([json.loads(line) for line in fh if line.strip()])


def rollout(
    policy: MultiHeadModel,
    reference: MultiHeadModel,
    tasks: Sequence[RolloutTask],
    vocab: Vocabulary,
    decoding: DecodingParams,
    policy_classifier: ActClassifier,
    base_seed: int = 0,
) -> RolloutBatch:
    """Sample one response per task and record everything a PPO update needs.

    Each item gets its own derived decoding seed so batches are reproducible
    yet not degenerate. Responses that stop immediately still contribute the
    EOS token, so every item has at least one scored position.
    """
    items = []
    max_len = policy.config.max_seq_len
    for i, task in enumerate(tasks):
        predicted = policy_classifier.predict(task.context_turns, task.gold.speaker)
        prompt = encode_prompt(
            vocab,
            task.context_turns,
            task.gold.speaker,
            act=predicted,
            max_len=max_len - decoding.max_new_tokens,
        )
        dec = replace(decoding, seed=base_seed * 1_000_003 + i)
        gen = policy.generate(prompt, dec)
        full = list(prompt) + list(gen.tokens)
        with torch.no_grad():
            ids = torch.as_tensor(full, dtype=torch.long).unsqueeze(0)
            _, _, values = policy.backbone(ids)
            plens = torch.tensor([len(prompt)])
            lens = torch.tensor([len(full)])
            picked, vals, mask = policy.response_scores(ids, plens, lens)
            old_values = tuple(float(v) for v in vals[0][mask[0]])
        ref_lp = tuple(evaluate_logprobs(reference, full, len(prompt)))
        items.append(
            RolloutItem(
                prompt_tokens=tuple(prompt),
                response_tokens=gen.tokens,
                old_logprobs=gen.logprobs,
                ref_logprobs=ref_lp,
                old_values=old_values,
                predicted_act=predicted.index,
                gold_act=task.gold.act.index,
                task=task,
            )
        )
    return RolloutBatch(items)


def compute_advantages(
    rewards: Sequence[float],
    values: Sequence[float],
    gamma: float,
    gae_lambda: float,
) -> tuple[list[float], list[float]]:
    """Generalized advantage estimation with terminal bootstrap value 0.

    delta[t] = r[t] + gamma*V[t+1] - V[t]; A[t] = delta[t] + gamma*lambda*A[t+1];
    returns = A + V.
    """
    if len(rewards) != len(values):
        raise ValueError(f"length mismatch: {len(rewards)} rewards vs {len(values)} values")
    n = len(rewards)
    advantages = [0.0] * n
    running = 0.0
    for t in reversed(range(n)):
        next_value = values[t + 1] if t + 1 < n else 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * gae_lambda * running
        advantages[t] = running
    returns = [a + v for a, v in zip(advantages, values)]
    return advantages, returns


def normalize_advantages(batch: RolloutBatch, eps: float = 1e-8) -> None:
    """Shift/scale all advantages in the batch to mean 0, std 1 (guarded)."""
    flat = [a for it in batch.items for a in it.advantages]
    n = len(flat)
    if n == 0:
        return
    mean = sum(flat) / n
    var = sum((a - mean) ** 2 for a in flat) / n
    scale = math.sqrt(var) + eps
    for it in batch.items:
        it.advantages = tuple((a - mean) / scale for a in it.advantages)


def adaptive_beta_update(
    beta: float,
    observed_kl: float,
    target_kl: float,
    horizon: float,
    batch_size: int = 1,
) -> float:
    """One proportional-controller update of the KL coefficient.

    The gain K = ln(2)/0.2 makes beta double (or halve) over one horizon of
    samples while the error term is saturated at +/-0.2.
    """
    k_gain = math.log(2.0) / 0.2
    err = max(-0.2, min(0.2, observed_kl / target_kl - 1.0))
    beta = beta * (1.0 + err * (batch_size / horizon) * k_gain)
    return max(1e-6, min(beta, 1e3))


class BetaController:
    """Constant beta, or the adaptive controller above."""

    def __init__(self, spec: float | AdaptiveBeta):
        self.adaptive = isinstance(spec, AdaptiveBeta)
        self.spec = spec
        self.value = spec.init if self.adaptive else float(spec)

    @property
    def target_kl(self) -> float | None:
        return self.spec.target_kl if self.adaptive else None

    def update(self, observed_kl: float, batch_size: int) -> float:
        if self.adaptive:
            self.value = adaptive_beta_update(
                self.value, observed_kl, self.spec.target_kl, self.spec.horizon, batch_size
            )
        return self.value


@dataclass(frozen=True)
class StepLosses:
    policy_loss: float
    value_loss: float
    act_loss: float


def _pad_rollout(items: Sequence[RolloutItem]):
    lens = [len(it.prompt_tokens) + len(it.response_tokens) for it in items]
    maxlen = max(lens)
    b = len(items)
    ids = torch.zeros(b, maxlen, dtype=torch.long)
    old_lp = torch.zeros(b, maxlen - 1)
    adv = torch.zeros(b, maxlen - 1)
    ret = torch.zeros(b, maxlen - 1)
    for i, it in enumerate(items):
        seq = list(it.prompt_tokens) + list(it.response_tokens)
        ids[i, : len(seq)] = torch.as_tensor(seq)
        p = len(it.prompt_tokens)
        r = len(it.response_tokens)
        old_lp[i, p - 1 : p - 1 + r] = torch.as_tensor(it.old_logprobs)
        adv[i, p - 1 : p - 1 + r] = torch.as_tensor(it.advantages)
        ret[i, p - 1 : p - 1 + r] = torch.as_tensor(it.returns)
    prompt_lens = torch.tensor([len(it.prompt_tokens) for it in items])
    lengths = torch.tensor(lens)
    acts = torch.tensor([it.gold_act for it in items])
    return ids, prompt_lens, lengths, old_lp, adv, ret, acts


def ppo_step(
    policy: MultiHeadModel,
    batch: RolloutBatch,
    config: PPOConfig,
    optimizer: torch.optim.Optimizer,
    rng: random.Random,
) -> StepLosses:
    """Multiple optimization epochs over the batch with the clipped surrogate.

    Normalizes advantages in place first. Raises TrainingDivergence on a
    non-finite combined loss.
    """
    normalize_advantages(batch)
    mb = config.mini_batch_size or len(batch.items)
    totals = {"policy": 0.0, "value": 0.0, "act": 0.0}
    n_updates = 0
    order = list(range(len(batch.items)))
    for _ in range(config.ppo_epochs):
        rng.shuffle(order)
        for lo in range(0, len(order), mb):
            items = [batch.items[j] for j in order[lo : lo + mb]]
            ids, prompt_lens, lengths, old_lp, adv, ret, acts = _pad_rollout(items)
            hidden, logits, values = policy.backbone(ids)
            logprobs = F.log_softmax(logits[:, :-1], dim=-1)
            new_lp = torch.gather(logprobs, 2, ids[:, 1:].unsqueeze(-1)).squeeze(-1)
            pos = torch.arange(1, ids.shape[1])[None, :]
            mask = (pos >= prompt_lens[:, None]) & (pos < lengths[:, None])
            fmask = mask.float()
            n_tok = fmask.sum().clamp(min=1.0)

            ratio = torch.exp(new_lp - old_lp)
            clipped = torch.clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps)
            surrogate = torch.minimum(ratio * adv, clipped * adv)
            policy_loss = -(surrogate * fmask).sum() / n_tok

            value_loss = (((values[:, :-1] - ret) ** 2) * fmask).sum() / n_tok

            act_logits = policy.rac_logits(hidden, prompt_lens)
            act_loss = F.cross_entropy(act_logits, acts)

            loss = (
                policy_loss
                + config.value_coef * value_loss
                + config.act_coef * act_loss
            )
            if not torch.isfinite(loss):
                raise TrainingDivergence(
                    f"non-finite PPO loss (policy={float(policy_loss.detach())}, "
                    f"value={float(value_loss.detach())}, act={float(act_loss.detach())})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            totals["policy"] += float(policy_loss.detach())
            totals["value"] += float(value_loss.detach())
            totals["act"] += float(act_loss.detach())
            n_updates += 1
    n = max(n_updates, 1)
    return StepLosses(totals["policy"] / n, totals["value"] / n, totals["act"] / n)


def tasks_from_corpus(corpus: Corpus, k: int) -> list[RolloutTask]:
    tasks = []
    for d in corpus.dialogues:
        for t in range(1, len(d)):
            lo = max(0, t - k)
            tasks.append(RolloutTask(tuple(d.turns[lo:t]), d.turns[t]))
    return tasks


def train(
    policy: MultiHeadModel,
    reference: MultiHeadModel,
    ref_classifier: ActClassifier,
    corpus: Corpus,
    vocab: Vocabulary,
    config: PPOConfig,
    run_dir: str | Path | None = None,
    reward_models: RewardModels | None = None,
) -> tuple[MultiHeadModel, TrainLog]:
    """Full training loop; returns the updated policy and its step log.

    When ``run_dir`` is given, the config echo, the train log, and periodic
    plus final checkpoints are written there.
    """
    log = TrainLog()
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
            json.dump(config.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    tasks = tasks_from_corpus(corpus, config.context_k)
    if not tasks and config.total_steps > 0:
        raise ValueError("corpus yields no rollout tasks")
    if reward_models is None:
        reward_models = RewardModels(
            reference=reference,
            act_classifier=ref_classifier,
            vocab=vocab,
            re_scale=config.re_scale,
        )
    policy_classifier = ActClassifier(policy, vocab, context_k=config.context_k)
    controller = BetaController(config.beta)
    optimizer = torch.optim.Adam(policy.parameters(), lr=config.lr)
    rng = random.Random(config.seed)
    divergence_target = (
        controller.target_kl
        if controller.target_kl is not None
        else config.monitor_target_kl
    )
    kl_breaches = 0

    for step in range(config.total_steps):
        batch_tasks = [tasks[rng.randrange(len(tasks))] for _ in range(config.batch_size)]
        batch = rollout(
            policy, reference, batch_tasks, vocab, config.decoding,
            policy_classifier, base_seed=config.seed + step * 7_919,
        )

        re_estimate = batch.mean_sequence_kl()
        beta = controller.value
        reward_sum = 0.0
        comp_sums = {"r": 0.0, "bs": 0.0, "rho": 0.0, "re": 0.0}
        for it in batch.items:
            breakdown = score_generation(
                it.task.context_turns,
                it.task.gold,
                it.response_tokens,
                # the act that conditioned this very generation
                DialogueAct.from_index(it.predicted_act),
                policy,
                reward_models,
                config.weights,
                beta=beta,
                re_estimate=re_estimate,
            )
            it.total_reward = breakdown.total
            reward_sum += breakdown.total
            for name in comp_sums:
                comp_sums[name] += getattr(breakdown.components, name)
            rewards = per_token_rewards(
                breakdown.total, it.old_logprobs, it.ref_logprobs, beta
            )
            it.rewards = tuple(rewards)
            adv, ret = compute_advantages(
                rewards, it.old_values, config.gamma, config.gae_lambda
            )
            it.advantages = tuple(adv)
            it.returns = tuple(ret)

        losses = ppo_step(policy, batch, config, optimizer, rng)
        mean_kl = re_estimate
        controller.update(mean_kl, config.batch_size)

        texts = [
            [vocab.tokens[t] for t in it.response_tokens if t >= N_SPECIAL]
            for it in batch.items
        ]
        n = len(batch.items)
        record = {
            "step": step,
            "mean_reward": reward_sum / n,
            "mean_kl": mean_kl,
            "policy_loss": losses.policy_loss,
            "value_loss": losses.value_loss,
            "act_loss": losses.act_loss,
            "beta": beta,
            "distinct2": distinct_n(texts, 2),
            "mean_r": comp_sums["r"] / n,
            "mean_bs": comp_sums["bs"] / n,
            "mean_rho": comp_sums["rho"] / n,
            "mean_re": comp_sums["re"] / n,
        }
        log.append(record)

        if divergence_target is not None:
            if mean_kl > config.divergence_kl_factor * divergence_target:
                kl_breaches += 1
            else:
                kl_breaches = 0
            if kl_breaches >= config.divergence_patience:
                if run_dir is not None:
                    log.save(run_dir / "trainlog.jsonl")
                raise TrainingDivergence(
                    f"mean KL {mean_kl:.4f} exceeded {config.divergence_kl_factor}x "
                    f"target {divergence_target} for {kl_breaches} consecutive steps"
                )

        if (
            run_dir is not None
            and config.checkpoint_every > 0
            and (step + 1) % config.checkpoint_every == 0
        ):
            save_checkpoint(policy, vocab, run_dir / f"step-{step + 1}.ckpt")

    if run_dir is not None:
        log.save(run_dir / "trainlog.jsonl")
        save_checkpoint(policy, vocab, run_dir / "final.ckpt")
    return policy, log
