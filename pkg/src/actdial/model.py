"""Decoder-only causal transformer with three heads sharing one backbone:
next-token generation, response-act classification, and per-token value
estimation. Includes supervised pretraining, reference freezing, and a
deterministic checkpoint container.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import random
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import EOS, N_ACTS, PAD, Corpus, Vocabulary
from .encoding import TrainingExample, make_training_examples


class TrainingDivergence(RuntimeError):
    """Raised when a training loss becomes non-finite or runs away."""


def seed_all(seed: int, single_thread: bool = False) -> None:
    """Seed every RNG the package touches; optionally force one BLAS thread
    so reruns are byte-identical."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    if single_thread:
        torch.set_num_threads(1)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    max_seq_len: int = 256
    n_acts: int = N_ACTS
    rac_gru_width: int = 64
    rac_attn_heads: int = 4

    def __post_init__(self):
        if self.vocab_size < 7:
            raise ValueError("vocab_size must cover the special tokens")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.rac_gru_width % self.rac_attn_heads != 0:
            raise ValueError(
                f"rac_gru_width {self.rac_gru_width} not divisible by "
                f"rac_attn_heads {self.rac_attn_heads}"
            )
        for name in ("d_model", "n_layers", "n_heads", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class ForwardOutput:
    hidden_states: torch.Tensor  # (T, d_model)
    lm_logits: torch.Tensor      # (T, vocab_size)
    values: torch.Tensor         # (T,)


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 1.0
    top_k: int = 0
    top_p: float = 1.0
    max_new_tokens: int = 64
    seed: int = 0


@dataclass(frozen=True)
class GenerationResult:
    tokens: tuple[int, ...]
    logprobs: tuple[float, ...]
    stopped_at_eos: bool


class CausalSelfAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.head_dim = config.d_model // config.n_heads
        self.qkv = nn.Linear(config.d_model, 3 * config.d_model)
        self.proj = nn.Linear(config.d_model, config.d_model)
        mask = torch.tril(torch.ones(config.max_seq_len, config.max_seq_len, dtype=torch.bool))
        self.register_buffer("causal_mask", mask, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=2)
        shape = (b, t, self.n_heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        att = att.masked_fill(~self.causal_mask[:t, :t], float("-inf"))
        att = F.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).contiguous().view(b, t, d)
        return self.proj(y)


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = CausalSelfAttention(config)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(config.d_model, 4 * config.d_model),
            nn.GELU(),
            nn.Linear(4 * config.d_model, config.d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        x = x + self.mlp(self.ln2(x))
        return x


class MultiHeadModel(nn.Module):
    """Shared causal backbone + generation, act-classification, and value heads."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d, w = config.d_model, config.rac_gru_width
        self.tok_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_seq_len, d)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(d)
        self.lm_head = nn.Linear(d, config.vocab_size, bias=False)
        self.v_head = nn.Linear(d, 1)
        self.rac_gru = nn.GRU(d, w, batch_first=True)
        self.rac_key = nn.Linear(d, w)
        self.rac_value = nn.Linear(d, w)
        self.rac_attn = nn.MultiheadAttention(w, config.rac_attn_heads, batch_first=True)
        self.rac_classifier = nn.Linear(w, config.n_acts)
        self._init_weights()

    def _init_weights(self) -> None:
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.normal_(module.weight, mean=0.0, std=0.02)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Embedding):
                nn.init.normal_(module.weight, mean=0.0, std=0.02)
            elif isinstance(module, nn.MultiheadAttention):
                nn.init.normal_(module.in_proj_weight, mean=0.0, std=0.02)
                nn.init.zeros_(module.in_proj_bias)
        for name, p in self.rac_gru.named_parameters():
            if name.startswith("weight_hh"):
                nn.init.orthogonal_(p)
            elif name.startswith("weight_ih"):
                nn.init.normal_(p, mean=0.0, std=0.02)
            else:
                nn.init.zeros_(p)

    # --- backbone ---

    def backbone(self, ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Batched forward: ids (B, T) -> (hidden (B,T,d), lm_logits (B,T,V), values (B,T))."""
        b, t = ids.shape
        if t > self.config.max_seq_len:
            raise ValueError(
                f"sequence length {t} exceeds max_seq_len {self.config.max_seq_len}"
            )
        if ids.numel() and (int(ids.max()) >= self.config.vocab_size or int(ids.min()) < 0):
            raise ValueError("token id out of range for vocabulary")
        pos = torch.arange(t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None, :, :]
        for block in self.blocks:
            x = block(x)
        h = self.ln_f(x)
        return h, self.lm_head(h), self.v_head(h).squeeze(-1)

    def forward(self, tokens: Sequence[int]) -> ForwardOutput:
        if len(tokens) == 0:
            raise ValueError("empty token sequence")
        ids = torch.as_tensor(list(tokens), dtype=torch.long).unsqueeze(0)
        h, logits, values = self.backbone(ids)
        return ForwardOutput(h[0], logits[0], values[0])

    # --- response-act head ---

    def rac_logits(self, hidden: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """hidden (B, T, d), lengths (B,) -> act logits (B, n_acts).

        GRU outputs are the attention queries; linear projections of the
        hidden states are keys and values. The classifier reads the attention
        output at each sequence's last real position.
        """
        b, t, _ = hidden.shape
        queries, _ = self.rac_gru(hidden)
        keys = self.rac_key(hidden)
        vals = self.rac_value(hidden)
        pad_mask = torch.arange(t, device=hidden.device)[None, :] >= lengths[:, None]
        attn_out, _ = self.rac_attn(
            queries, keys, vals, key_padding_mask=pad_mask, need_weights=False
        )
        final = attn_out[torch.arange(b), lengths - 1]
        return self.rac_classifier(final)

    def rac_forward(self, hidden_states: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Single-sequence act head: hidden (T, d) -> (logits (n_acts,), probs).

        Argmax ties resolve to the lowest act index (first maximum).
        """
        if hidden_states.ndim != 2 or hidden_states.shape[0] == 0:
            raise ValueError("rac_forward needs a non-empty (T, d) hidden sequence")
        lengths = torch.tensor([hidden_states.shape[0]])
        logits = self.rac_logits(hidden_states.unsqueeze(0), lengths)[0]
        return logits, F.softmax(logits, dim=-1)

    # --- generation ---

    @torch.no_grad()
    def generate(
        self, context_tokens: Sequence[int], decoding: DecodingParams
    ) -> GenerationResult:
        """Sample a continuation; stops at EOS or max_new_tokens.

        Returned log-probs are the policy's own full-softmax log-probs of each
        emitted token (untempered and unfiltered), so recomputing them from the
        final sequence reproduces the same numbers.
        """
        cfg = self.config
        context = list(context_tokens)
        if not context:
            raise ValueError("empty context")
        if len(context) + decoding.max_new_tokens > cfg.max_seq_len:
            raise ValueError(
                f"context of {len(context)} tokens plus {decoding.max_new_tokens} "
                f"new tokens exceeds max_seq_len {cfg.max_seq_len}"
            )
        gen = torch.Generator().manual_seed(decoding.seed)
        ids = list(context)
        out_tokens: list[int] = []
        out_logprobs: list[float] = []
        stopped = False
        was_training = self.training
        self.eval()
        try:
            for _ in range(decoding.max_new_tokens):
                tens = torch.as_tensor(ids, dtype=torch.long).unsqueeze(0)
                _, logits, _ = self.backbone(tens)
                last = logits[0, -1]
                full_logprobs = F.log_softmax(last, dim=-1)
                token = _choose_token(last, decoding, gen)
                out_tokens.append(token)
                out_logprobs.append(float(full_logprobs[token]))
                ids.append(token)
                if token == EOS:
                    stopped = True
                    break
        finally:
            if was_training:
                self.train()
        return GenerationResult(tuple(out_tokens), tuple(out_logprobs), stopped)

    # --- scoring ---

    def response_scores(
        self, ids: torch.Tensor, prompt_lens: torch.Tensor, lengths: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Differentiable per-token log-probs and values for padded batches.

        ids (B, T); position p's log-prob/value come from the hidden state at
        p-1. Returns (logprobs (B, T-1), values (B, T-1), mask (B, T-1)) where
        mask selects response positions: prompt_len <= p < length.
        """
        _, logits, values = self.backbone(ids)
        logprobs = F.log_softmax(logits[:, :-1], dim=-1)
        picked = torch.gather(logprobs, 2, ids[:, 1:].unsqueeze(-1)).squeeze(-1)
        pos = torch.arange(1, ids.shape[1], device=ids.device)[None, :]
        mask = (pos >= prompt_lens[:, None]) & (pos < lengths[:, None])
        return picked, values[:, :-1], mask


def _choose_token(logits: torch.Tensor, decoding: DecodingParams, gen: torch.Generator) -> int:
    if decoding.temperature <= 0:
        return int(torch.argmax(logits))
    scaled = logits / decoding.temperature
    if decoding.top_k > 0 and decoding.top_k < scaled.shape[-1]:
        kth = torch.topk(scaled, decoding.top_k).values[-1]
        scaled = scaled.masked_fill(scaled < kth, float("-inf"))
    if decoding.top_p < 1.0:
        sorted_logits, order = torch.sort(scaled, descending=True)
        cum = torch.cumsum(F.softmax(sorted_logits, dim=-1), dim=-1)
        drop = cum - F.softmax(sorted_logits, dim=-1) >= decoding.top_p
        scaled[order[drop]] = float("-inf")
    probs = F.softmax(scaled, dim=-1)
    return int(torch.multinomial(probs, 1, generator=gen))


# --- module-level operation wrappers ---

def forward(model: MultiHeadModel, tokens: Sequence[int]) -> ForwardOutput:
    return model(tokens)


def rac_forward(model: MultiHeadModel, hidden_states: torch.Tensor):
    return model.rac_forward(hidden_states)


def generate(
    model: MultiHeadModel, context_tokens: Sequence[int], decoding: DecodingParams
) -> GenerationResult:
    return model.generate(context_tokens, decoding)


@torch.no_grad()
def evaluate_logprobs(
    model: MultiHeadModel, tokens: Sequence[int], prompt_len: int
) -> list[float]:
    """Log-probs of tokens[prompt_len:] under the model, given their prefix."""
    if not 1 <= prompt_len < len(tokens):
        raise ValueError(f"prompt_len {prompt_len} out of range for {len(tokens)} tokens")
    ids = torch.as_tensor(list(tokens), dtype=torch.long).unsqueeze(0)
    lens = torch.tensor([len(tokens)])
    picked, _, mask = model.response_scores(ids, torch.tensor([prompt_len]), lens)
    return [float(x) for x in picked[0][mask[0]]]


def token_embedder(model: MultiHeadModel, vocab: Vocabulary) -> Callable[[str], np.ndarray]:
    """Token -> embedding-row map for similarity scoring; unknowns hit UNK."""
    table = model.tok_emb.weight.detach().cpu().to(torch.float64).numpy()

    def embed(token: str) -> np.ndarray:
        return table[vocab.id_of(token)]

    return embed


# --- supervised pretraining ---

@dataclass(frozen=True)
class SFTConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 32
    act_loss_weight: float = 1.0
    context_k: int = 4
    seed: int = 0


def _pad_batch(examples: Sequence[TrainingExample]) -> dict[str, torch.Tensor]:
    maxlen = max(len(e.tokens) for e in examples)
    ids = torch.full((len(examples), maxlen), PAD, dtype=torch.long)
    for i, e in enumerate(examples):
        ids[i, : len(e.tokens)] = torch.as_tensor(e.tokens)
    return {
        "ids": ids,
        "prompt_lens": torch.tensor([e.prompt_len for e in examples]),
        "response_starts": torch.tensor([e.response_start for e in examples]),
        "lengths": torch.tensor([len(e.tokens) for e in examples]),
        "acts": torch.tensor([e.act_index for e in examples]),
    }


def _sft_losses(model: MultiHeadModel, batch: dict[str, torch.Tensor]):
    ids = batch["ids"]
    hidden, logits, _ = model.backbone(ids)
    targets = ids[:, 1:].clone()
    pos = torch.arange(1, ids.shape[1])[None, :]
    supervised = (pos >= batch["response_starts"][:, None]) & (pos < batch["lengths"][:, None])
    targets[~supervised] = -100
    lm_loss = F.cross_entropy(
        logits[:, :-1].reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=-100
    )
    act_logits = model.rac_logits(hidden, batch["prompt_lens"])
    act_loss = F.cross_entropy(act_logits, batch["acts"])
    return lm_loss, act_loss, int(supervised.sum())


@torch.no_grad()
def _sft_eval(model: MultiHeadModel, examples, batch_size):
    model.eval()
    lm_total, tok_total, act_total = 0.0, 0, 0.0
    for i in range(0, len(examples), batch_size):
        batch = _pad_batch(examples[i : i + batch_size])
        lm_loss, act_loss, n_tok = _sft_losses(model, batch)
        lm_total += float(lm_loss) * n_tok
        tok_total += n_tok
        act_total += float(act_loss) * len(batch["ids"])
    model.train()
    return lm_total / max(tok_total, 1), act_total / max(len(examples), 1)


def supervised_train(
    model: MultiHeadModel,
    corpus: Corpus,
    vocab: Vocabulary,
    config: SFTConfig = SFTConfig(),
) -> tuple[MultiHeadModel, list[dict]]:
    """Joint next-token + response-act training on gold responses.

    The curve's first entry (epoch 0) is a pre-training evaluation pass, so
    learning progress is measurable against it.
    """
    examples = make_training_examples(
        vocab, corpus, k=config.context_k, max_len=model.config.max_seq_len
    )
    if not examples:
        raise ValueError("corpus yields no trainable (context, response) pairs")
    rng = random.Random(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    lm0, act0 = _sft_eval(model, examples, config.batch_size)
    curve = [
        {"epoch": 0, "lm_loss": lm0, "act_loss": act0, "perplexity": math.exp(min(lm0, 50.0))}
    ]
    model.train()
    order = list(range(len(examples)))
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        lm_sum, tok_sum, act_sum, n_batches = 0.0, 0, 0.0, 0
        for i in range(0, len(order), config.batch_size):
            chunk = [examples[j] for j in order[i : i + config.batch_size]]
            batch = _pad_batch(chunk)
            lm_loss, act_loss, n_tok = _sft_losses(model, batch)
            loss = lm_loss + config.act_loss_weight * act_loss
            if not torch.isfinite(loss):
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch} "
                    f"(lm={float(lm_loss.detach())}, act={float(act_loss.detach())})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            lm_sum += float(lm_loss.detach()) * n_tok
            tok_sum += n_tok
            act_sum += float(act_loss.detach())
            n_batches += 1
        lm_mean = lm_sum / max(tok_sum, 1)
        curve.append(
            {
                "epoch": epoch,
                "lm_loss": lm_mean,
                "act_loss": act_sum / max(n_batches, 1),
                "perplexity": math.exp(min(lm_mean, 50.0)),
            }
        )
    model.eval()
    return model, curve


def freeze_reference(model: MultiHeadModel) -> MultiHeadModel:
    """Deep-copy the model and disable training on the copy. The copy shares
    nothing with the original, so later policy updates cannot leak into it."""
    ref = copy.deepcopy(model)
    ref.eval()
    for p in ref.parameters():
        p.requires_grad_(False)
    return ref


# --- checkpoint container ---

_MAGIC = b"ACTDIAL1"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    model: MultiHeadModel, vocab: Vocabulary, path: str | Path, meta: dict | None = None
) -> None:
    """Single-file container: magic, header length, JSON header (config, vocab,
    tensor index), then raw float32 little-endian tensor payload."""
    state = model.state_dict()
    index = []
    payload = bytearray()
    for name, tensor in state.items():
        arr = tensor.detach().cpu().to(torch.float32).numpy()
        index.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(arr.astype("<f4").tobytes())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "vocab": vocab.tokens,
        "vocab_hash": vocab.content_hash(),
        "meta": meta or {},
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path) -> tuple[MultiHeadModel, Vocabulary, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic)")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    if header["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['format_version']}")
    vocab = Vocabulary(header["vocab"][6:])
    if vocab.content_hash() != header["vocab_hash"]:
        raise ValueError("vocabulary hash mismatch in checkpoint")
    config = ModelConfig.from_dict(header["model_config"])
    model = MultiHeadModel(config)
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        numel = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            payload, dtype="<f4", count=numel, offset=entry["offset"]
        ).reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model, vocab, header["meta"]


def param_count(config: ModelConfig) -> int:
    """Closed-form trainable-parameter count for a given configuration."""
    d, w, v = config.d_model, config.rac_gru_width, config.vocab_size
    embeddings = v * d + config.max_seq_len * d
    per_block = 12 * d * d + 13 * d
    backbone = config.n_layers * per_block + 2 * d
    lm = d * v
    value = d + 1
    gru = 3 * w * d + 3 * w * w + 6 * w
    projections = 2 * (d * w + w)
    attention = 4 * w * w + 4 * w
    classifier = w * config.n_acts + config.n_acts
    return embeddings + backbone + lm + value + gru + projections + attention + classifier
