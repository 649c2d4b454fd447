"""Run settings: a flat, typed key=value layer over every module's config.

Sources merge with precedence flags > environment > file > defaults. Environment
variables use the ACTDIAL_ prefix with the upper-cased key (ACTDIAL_SFT_EPOCHS).
All parse and unknown-key problems across all sources are reported in one error.
"""

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Mapping, Optional

from .model import DecodingParams, ModelConfig, SFTConfig
from .ppo import AdaptiveBeta, PPOConfig
from .reward import RewardWeights

ENV_PREFIX = "ACTDIAL_"


class ConfigError(Exception):
    """Raised with every violated setting listed, semicolon-separated."""


@dataclass(frozen=True)
class RunSettings:
    # paths and run identity
    corpus: str = ""
    eval_corpus: str = ""
    run_dir: str = "runs/latest"
    checkpoint: str = ""
    ref_checkpoint: str = ""
    seed: int = 0
    single_thread: bool = False
    # model
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    max_seq_len: int = 256
    rac_gru_width: int = 64
    rac_attn_heads: int = 4
    vocab_max_size: int = 8192
    vocab_min_freq: int = 1
    # supervised stage
    sft_epochs: int = 10
    sft_lr: float = 1e-3
    sft_batch_size: int = 32
    act_loss_weight: float = 1.0
    context_k: int = 4
    # reinforcement stage
    ppo_lr: float = 2e-6
    ppo_batch_size: int = 128
    mini_batch_size: int = 0
    ppo_epochs: int = 4
    clip_eps: float = 0.2
    gamma: float = 1.0
    gae_lambda: float = 0.95
    beta: float = 0.2
    adaptive_beta: bool = False
    target_kl: float = 1.0
    beta_horizon: float = 10000.0
    re_scale: float = 1000.0
    total_steps: int = 100
    value_coef: float = 0.5
    act_coef: float = 0.1
    checkpoint_every: int = 0
    divergence_kl_factor: float = 50.0
    divergence_patience: int = 10
    monitor_target_kl: float = 0.0
    # reward weights
    lambda1: float = 0.5
    lambda2: float = 0.15
    lambda3: float = 0.15
    lambda4: float = 0.2
    rouge_variant: str = "rouge1_f"
    # decoding
    temperature: float = 1.0
    top_k: int = 0
    top_p: float = 1.0
    max_new_tokens: int = 64
    # splitting
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    # serving
    host: str = "127.0.0.1"
    port: int = 8000
    persist_dir: str = ""


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunSettings)}

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _parse_raw(key: str, raw: str):
    typ = _FIELDS[key]
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw


def parse_config_file(path: str) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment; blank lines skipped."""
    raw: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {stripped!r}")
            key, value = stripped.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def load_settings(
    config_path: Optional[str] = None,
    env: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[str, str]] = None,
) -> RunSettings:
    """Merge all sources into a RunSettings, collecting every violation at once."""
    env = os.environ if env is None else env
    errors: list[str] = []
    values: dict = {}

    def apply(source: str, items: Mapping[str, str]) -> None:
        for key, raw in items.items():
            if key not in _FIELDS:
                errors.append(f"{source}: unknown setting {key!r}")
                continue
            try:
                values[key] = _parse_raw(key, raw)
            except ValueError as exc:
                errors.append(f"{source}: {key}: {exc}")

    if config_path:
        try:
            apply(f"file {config_path}", parse_config_file(config_path))
        except OSError as exc:
            errors.append(f"file {config_path}: {exc}")
        except ConfigError as exc:
            errors.append(str(exc))
    env_items = {
        key[len(ENV_PREFIX) :].lower(): value
        for key, value in env.items()
        if key.startswith(ENV_PREFIX) and key[len(ENV_PREFIX) :].lower() in _FIELDS
    }
    apply("env", env_items)
    if overrides:
        apply("flags", overrides)

    if errors:
        raise ConfigError("; ".join(errors))
    return dataclasses.replace(RunSettings(), **values)


def settings_to_dict(settings: RunSettings) -> dict:
    return dataclasses.asdict(settings)


def save_settings(settings: RunSettings, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(settings_to_dict(settings), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- projections into module configs ----------------------------------------


def model_config(settings: RunSettings, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d_model=settings.d_model,
        n_layers=settings.n_layers,
        n_heads=settings.n_heads,
        max_seq_len=settings.max_seq_len,
        rac_gru_width=settings.rac_gru_width,
        rac_attn_heads=settings.rac_attn_heads,
    )


def sft_config(settings: RunSettings) -> SFTConfig:
    return SFTConfig(
        epochs=settings.sft_epochs,
        lr=settings.sft_lr,
        batch_size=settings.sft_batch_size,
        act_loss_weight=settings.act_loss_weight,
        context_k=settings.context_k,
        seed=settings.seed,
    )


def reward_weights(settings: RunSettings) -> RewardWeights:
    return RewardWeights(
        settings.lambda1, settings.lambda2, settings.lambda3, settings.lambda4
    )


def decoding_params(settings: RunSettings) -> DecodingParams:
    return DecodingParams(
        temperature=settings.temperature,
        top_k=settings.top_k,
        top_p=settings.top_p,
        max_new_tokens=settings.max_new_tokens,
        seed=settings.seed,
    )


def ppo_config(settings: RunSettings) -> PPOConfig:
    beta: float | AdaptiveBeta = settings.beta
    if settings.adaptive_beta:
        beta = AdaptiveBeta(
            init=settings.beta,
            target_kl=settings.target_kl,
            horizon=settings.beta_horizon,
        )
    return PPOConfig(
        lr=settings.ppo_lr,
        batch_size=settings.ppo_batch_size,
        mini_batch_size=settings.mini_batch_size,
        ppo_epochs=settings.ppo_epochs,
        clip_eps=settings.clip_eps,
        gamma=settings.gamma,
        gae_lambda=settings.gae_lambda,
        beta=beta,
        re_scale=settings.re_scale,
        weights=reward_weights(settings),
        total_steps=settings.total_steps,
        value_coef=settings.value_coef,
        act_coef=settings.act_coef,
        context_k=settings.context_k,
        decoding=decoding_params(settings),
        seed=settings.seed,
        checkpoint_every=settings.checkpoint_every,
        divergence_kl_factor=settings.divergence_kl_factor,
        divergence_patience=settings.divergence_patience,
        monitor_target_kl=settings.monitor_target_kl or None,
    )
