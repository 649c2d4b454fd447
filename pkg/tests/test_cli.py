"""Settings merging and CLI command tests (in-process, tmp run dirs)."""

import json
import os

import pytest

from actdial.cli import main
from actdial.config import (
    ConfigError,
    RunSettings,
    load_settings,
    ppo_config,
    save_settings,
)
from actdial.corpus import save_corpus
from actdial.ppo import AdaptiveBeta

from helpers import tiny_corpus


class TestSettings:
    def test_defaults(self):
        s = load_settings(env={})
        assert s == RunSettings()
        assert s.ppo_lr == 2e-6
        assert s.lambda1 == 0.5

    def test_file_env_flag_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 1\nsft_epochs = 3\nd_model = 16  # comment\n")
        s = load_settings(
            config_path=str(cfg),
            env={"ACTDIAL_SEED": "2", "ACTDIAL_TEMPERATURE": "0.5"},
            overrides={"seed": "3"},
        )
        assert s.seed == 3          # flag beats env beats file
        assert s.temperature == 0.5  # env beats default
        assert s.sft_epochs == 3    # file beats default
        assert s.d_model == 16      # comment stripped

    def test_all_violations_reported_together(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nope = 1\nseed = banana\n")
        with pytest.raises(ConfigError) as err:
            load_settings(config_path=str(cfg), env={}, overrides={"also_bad": "x"})
        message = str(err.value)
        assert "nope" in message and "banana" in message and "also_bad" in message

    def test_bool_parsing(self):
        s = load_settings(env={}, overrides={"single_thread": "True", "adaptive_beta": "yes"})
        assert s.single_thread is True
        assert s.adaptive_beta is True
        with pytest.raises(ConfigError, match="boolean"):
            load_settings(env={}, overrides={"single_thread": "maybe"})

    def test_missing_file_is_config_error(self):
        with pytest.raises(ConfigError):
            load_settings(config_path="/nonexistent/path.cfg", env={})

    def test_adaptive_beta_projection(self):
        s = load_settings(
            env={},
            overrides={"adaptive_beta": "true", "beta": "0.3", "target_kl": "0.9",
                       "beta_horizon": "500"},
        )
        cfg = ppo_config(s)
        assert isinstance(cfg.beta, AdaptiveBeta)
        assert cfg.beta.init == 0.3
        assert cfg.beta.target_kl == 0.9
        assert cfg.beta.horizon == 500.0
        assert isinstance(ppo_config(load_settings(env={})).beta, float)

    def test_save_settings_round_trip(self, tmp_path):
        s = load_settings(env={}, overrides={"seed": "9"})
        path = tmp_path / "settings.json"
        save_settings(s, str(path))
        data = json.loads(path.read_text())
        assert data["seed"] == 9
        assert data["lambda4"] == 0.2


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.jsonl"
    save_corpus(tiny_corpus(n_dialogues=4, n_turns=4, seed=3), str(path))
    return str(path)


TINY_MODEL = [
    "--set", "d_model=32", "--set", "n_layers=2", "--set", "n_heads=4",
    "--set", "max_seq_len=64", "--set", "rac_gru_width=16", "--set", "rac_attn_heads=2",
]


@pytest.fixture(scope="module")
def sft_run(tmp_path_factory, corpus_file):
    run_dir = str(tmp_path_factory.mktemp("sft"))
    code = main(
        ["train-sft", "--corpus", corpus_file, "--run-dir", run_dir,
         "--seed", "5", "--single-thread", "--set", "sft_epochs=2",
         "--set", "sft_lr=0.002", "--set", "sft_batch_size=8"] + TINY_MODEL
    )
    assert code == 0
    return run_dir


class TestTrainCommands:
    def test_sft_artifacts(self, sft_run):
        assert os.path.exists(os.path.join(sft_run, "settings.json"))
        assert os.path.exists(os.path.join(sft_run, "final.ckpt"))
        lines = open(os.path.join(sft_run, "sft_log.jsonl")).read().splitlines()
        assert len(lines) == 3  # pre-training eval plus two epochs
        for line in lines:
            record = json.loads(line)
            assert "lm_loss" in record and "perplexity" in record

    def test_ppo_smoke_and_reproducibility(self, sft_run, corpus_file, tmp_path):
        ckpt = os.path.join(sft_run, "final.ckpt")
        args = lambda d: (
            ["train-ppo", "--corpus", corpus_file, "--checkpoint", ckpt,
             "--run-dir", d, "--seed", "5", "--single-thread",
             "--set", "total_steps=2", "--set", "ppo_batch_size=4",
             "--set", "ppo_epochs=1", "--set", "ppo_lr=0.0005",
             "--set", "max_new_tokens=8"]
        )
        run_a, run_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(args(run_a)) == 0
        assert main(args(run_b)) == 0
        log_a = open(os.path.join(run_a, "trainlog.jsonl"), "rb").read()
        log_b = open(os.path.join(run_b, "trainlog.jsonl"), "rb").read()
        assert log_a == log_b
        assert len(log_a.splitlines()) == 2
        ckpt_a = open(os.path.join(run_a, "final.ckpt"), "rb").read()
        ckpt_b = open(os.path.join(run_b, "final.ckpt"), "rb").read()
        assert ckpt_a == ckpt_b
        assert os.path.exists(os.path.join(run_a, "config.json"))

    def test_ppo_divergence_exit_code(self, sft_run, corpus_file, tmp_path, capsys):
        ckpt = os.path.join(sft_run, "final.ckpt")
        code = main(
            ["train-ppo", "--corpus", corpus_file, "--checkpoint", ckpt,
             "--run-dir", str(tmp_path / "div"), "--seed", "5",
             "--set", "total_steps=6", "--set", "ppo_batch_size=4",
             "--set", "ppo_lr=0.01", "--set", "max_new_tokens=8",
             "--set", "monitor_target_kl=1e-12", "--set", "divergence_kl_factor=1.0",
             "--set", "divergence_patience=2"]
        )
        assert code == 4
        assert "error: divergence:" in capsys.readouterr().err

    def test_missing_checkpoint_is_data_error(self, corpus_file, tmp_path, capsys):
        code = main(
            ["train-ppo", "--corpus", corpus_file, "--checkpoint",
             str(tmp_path / "missing.ckpt"), "--run-dir", str(tmp_path / "r")]
        )
        assert code == 3
        assert "error: data:" in capsys.readouterr().err


class TestEvalGenerateScore:
    def test_eval_writes_reports(self, sft_run, corpus_file, tmp_path, capsys):
        out = str(tmp_path / "eval")
        code = main(
            ["eval", "--corpus", corpus_file, "--checkpoint",
             os.path.join(sft_run, "final.ckpt"), "--run-dir", out,
             "--set", "max_new_tokens=8"]
        )
        assert code == 0
        stdout = capsys.readouterr().out
        assert "R1-F1" in stdout and "act head vs gold" in stdout
        assert os.path.exists(os.path.join(out, "eval.txt"))
        assert os.path.exists(os.path.join(out, "eval.jsonl"))
        assert os.path.exists(os.path.join(out, "rac_eval.txt"))

    def test_generate_prints_act_and_text(self, sft_run, corpus_file, capsys):
        code = main(
            ["generate", corpus_file, "--checkpoint",
             os.path.join(sft_run, "final.ckpt"), "--set", "max_new_tokens=8",
             "--set", "temperature=0"]
        )
        assert code == 0
        out = capsys.readouterr().out.strip()
        assert out.startswith(("therapist [", "client ["))

    def test_score_identical_files(self, tmp_path, capsys):
        text = "hello there\nhow are you\n"
        cand = tmp_path / "cand.txt"
        ref = tmp_path / "ref.txt"
        cand.write_text(text)
        ref.write_text(text)
        assert main(["score", str(cand), str(ref)]) == 0
        assert "1.0000" in capsys.readouterr().out

    def test_score_missing_file(self, tmp_path, capsys):
        present = tmp_path / "x.txt"
        present.write_text("a\n")
        assert main(["score", str(present), str(tmp_path / "gone.txt")]) == 3
        assert "error: data:" in capsys.readouterr().err

    def test_score_length_mismatch(self, tmp_path, capsys):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        a.write_text("one\n")
        b.write_text("one\ntwo\n")
        assert main(["score", str(a), str(b)]) == 3


class TestStats:
    def test_minimal_two_turn_corpus(self, tmp_path, capsys):
        path = tmp_path / "mini.jsonl"
        save_corpus(tiny_corpus(n_dialogues=1, n_turns=2, seed=0), str(path))
        assert main(["stats", str(path)]) == 0
        out = capsys.readouterr().out
        assert "dialogues 1" in out
        assert "utterances 2" in out
        assert "transitions 1" in out

    def test_missing_corpus(self, tmp_path, capsys):
        assert main(["stats", str(tmp_path / "gone.jsonl")]) == 3


class TestErrorMapping:
    def test_bad_setting_exits_2(self, corpus_file, capsys):
        code = main(["train-sft", "--corpus", corpus_file, "--set", "bogus=1"])
        assert code == 2
        assert "error: config:" in capsys.readouterr().err

    def test_malformed_set_flag(self, corpus_file, capsys):
        code = main(["train-sft", "--corpus", corpus_file, "--set", "novalue"])
        assert code == 2

    def test_invalid_model_geometry_exits_2(self, corpus_file, tmp_path, capsys):
        code = main(
            ["train-sft", "--corpus", corpus_file, "--run-dir", str(tmp_path),
             "--set", "d_model=30", "--set", "n_heads=4"]
        )
        assert code == 2

    def test_missing_corpus_setting_exits_3(self, capsys):
        assert main(["train-sft"]) == 3
        assert "no corpus path configured" in capsys.readouterr().err
