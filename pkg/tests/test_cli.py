import json
import subprocess
import sys

import pytest

from headfilt.cli import main
from headfilt.data_io import load_model

CHARS = [chr(0x4E00 + i) for i in range(12)]
COMPONENTS = [chr(0x3400 + i) for i in range(8)]


@pytest.fixture
def toy(tmp_path):
    """IDS database, confusion sets, corpus, and input text for CLI runs."""
    ids_lines = []
    for i, ch in enumerate(CHARS):
        shared = COMPONENTS[i % 4]
        unique = chr(0x3500 + i)
        ids_lines.append(f"U+{ord(ch):04X}\t{ch}\t⿰{shared}{unique}")
    ids_db = tmp_path / "ids.txt"
    ids_db.write_text("\n".join(ids_lines) + "\n", encoding="utf-8")

    sets_path = tmp_path / "sets.txt"
    sets_path.write_text(
        f"{CHARS[0]}:{CHARS[1]}{CHARS[2]}\n"
        f"{CHARS[3]}:{CHARS[4]}{CHARS[5]}\n"
        f"{CHARS[6]}:{CHARS[7]}\n", encoding="utf-8")

    corpus_path = tmp_path / "train.tsv"
    corpus_path.write_text(
        f"T1\t{CHARS[1]}{CHARS[8]}{CHARS[9]}\t1,{CHARS[0]}\n"
        f"T2\t{CHARS[4]}{CHARS[10]}\t1,{CHARS[3]}\n"
        f"T3\t{CHARS[8]}{CHARS[9]}{CHARS[10]}\t\n", encoding="utf-8")

    text_path = tmp_path / "input.txt"
    text_path.write_text(
        f"{CHARS[0]}{CHARS[8]}{CHARS[9]}\n{CHARS[8]}{CHARS[9]}{CHARS[10]}\n",
        encoding="utf-8")

    lm_text = tmp_path / "lm.txt"
    lm_text.write_text(
        "\n".join(f"{CHARS[0]}{CHARS[8]}{CHARS[9]}" for _ in range(20)) + "\n",
        encoding="utf-8")
    return tmp_path


def train_args(toy, out_name="model.bin", **extra):
    args = ["train", "--ids", str(toy / "ids.txt"), "--sets", str(toy / "sets.txt"),
            "--out", str(toy / out_name), "--dim", "8", "--steps1", "30",
            "--steps2", "15", "--batch", "16", "--calib-pairs", "200", "--seed", "7"]
    for key, value in extra.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    return args


def run_cli(args):
    return subprocess.run(
        [sys.executable, "-m", "headfilt.cli", *args],
        capture_output=True, text=True)


class TestTrainCommand:
    def test_deterministic_output_across_processes(self, toy):
        r1 = run_cli(train_args(toy, "m1.bin"))
        r2 = run_cli(train_args(toy, "m2.bin"))
        assert r1.returncode == 0, r1.stderr
        assert r2.returncode == 0, r2.stderr
        assert (toy / "m1.bin").read_bytes() == (toy / "m2.bin").read_bytes()

    def test_missing_required_option_is_usage_error(self, toy, capsys):
        code = main(["train", "--ids", str(toy / "ids.txt"),
                     "--out", str(toy / "m.bin")])
        assert code == 2
        assert "--sets" in capsys.readouterr().err

    def test_corpus_records_adaptation_stage(self, toy):
        assert main(train_args(toy, "m.bin", corpus=str(toy / "train.tsv"))) == 0
        bundle = load_model(toy / "m.bin")
        assert bundle.provenance["stages"] == ["confusion-imitation", "adaptation"]
        assert "corpus" in bundle.provenance["data_hashes"]

    def test_without_corpus_single_stage(self, toy):
        assert main(train_args(toy, "m.bin")) == 0
        bundle = load_model(toy / "m.bin")
        assert bundle.provenance["stages"] == ["confusion-imitation"]
        assert bundle.provenance["steps"]["stage2"] == 0


class TestCheckCommand:
    def _train_and_lm(self, toy):
        assert main(train_args(toy, "model.bin")) == 0
        assert main(["lm-train", "--input", str(toy / "lm.txt"),
                     "--vocab", str(toy / "vocab.txt"),
                     "--order", "2", "--out", str(toy / "lm.bin")]) == 0

    @pytest.fixture
    def trained(self, toy):
        vocab_path = toy / "vocab.txt"
        vocab_path.write_text("\n".join(CHARS) + "\n", encoding="utf-8")
        self._train_and_lm(toy)
        return toy

    def _check(self, toy, mode, out_name, extra=()):
        args = ["check", "--model", str(toy / "model.bin"), "--lm", str(toy / "lm.bin"),
                "--mode", mode, "--input", str(toy / "input.txt"),
                "--output", str(toy / out_name), *extra]
        return main(args)

    def test_all_modes_emit_json_lines(self, trained):
        for mode, extra in (("none", ()), ("sets", ("--sets", str(trained / "sets.txt"))),
                            ("headfilt", ())):
            assert self._check(trained, mode, f"out_{mode}.jsonl", extra) == 0
            lines = (trained / f"out_{mode}.jsonl").read_text().splitlines()
            assert len(lines) == 2
            for line in lines:
                obj = json.loads(line)
                assert set(obj) == {"id", "edits"}

    def test_sets_mode_requires_sets(self, trained, capsys):
        assert self._check(trained, "sets", "out.jsonl") == 2
        assert "--sets" in capsys.readouterr().err

    def test_unreadable_model_is_runtime_error(self, trained, capsys):
        (trained / "broken.bin").write_bytes(b"junk")
        code = main(["check", "--model", str(trained / "broken.bin"),
                     "--lm", str(trained / "lm.bin"),
                     "--input", str(trained / "input.txt")])
        assert code == 1
        assert "container" in capsys.readouterr().err

    def test_results_independent_of_threads(self, trained):
        assert self._check(trained, "headfilt", "t1.jsonl", ("--threads", "1")) == 0
        assert self._check(trained, "headfilt", "t4.jsonl", ("--threads", "4")) == 0
        assert (trained / "t1.jsonl").read_bytes() == (trained / "t4.jsonl").read_bytes()

    def test_scorer_required(self, trained, capsys):
        code = main(["check", "--model", str(trained / "model.bin"),
                     "--input", str(trained / "input.txt")])
        assert code == 2


class TestEvaluateAndCoverage:
    def test_evaluate_json(self, toy, capsys):
        pred_path = toy / "pred.jsonl"
        pred_path.write_text(
            json.dumps({"id": "T1", "edits": [
                {"pos": 1, "wrong": CHARS[1], "correction": CHARS[0]}]}) + "\n"
            + json.dumps({"id": "T2", "edits": []}) + "\n"
            + json.dumps({"id": "T3", "edits": []}) + "\n", encoding="utf-8")
        code = main(["evaluate", "--gold", str(toy / "train.tsv"),
                     "--pred", str(pred_path), "--task", "correction", "--json"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["tp"] == 1 and report["fn"] == 1 and report["tn"] == 1

    def test_coverage_table(self, toy, capsys):
        code = main(["coverage", "--corpus", str(toy / "train.tsv"),
                     "--sets", str(toy / "sets.txt")])
        assert code == 0
        out = capsys.readouterr().out
        assert "2/2 (100.00%)" in out

    def test_coverage_json(self, toy, capsys):
        code = main(["coverage", "--corpus", str(toy / "train.tsv"),
                     "--sets", str(toy / "sets.txt"), "--json"])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["covered"] == 2


class TestCalibrateCommand:
    def test_prints_and_stores_scale(self, toy, capsys):
        assert main(train_args(toy, "model.bin")) == 0
        before = load_model(toy / "model.bin").config.beta
        code = main(["calibrate", "--model", str(toy / "model.bin"),
                     "--pairs", "300", "--seed", "1",
                     "--sets", str(toy / "sets.txt"),
                     "--out", str(toy / "recal.bin")])
        assert code == 0
        printed = float(capsys.readouterr().out.strip())
        after = load_model(toy / "recal.bin").config.beta
        assert abs(printed - after) < 1e-6
        assert after > 0
        assert load_model(toy / "model.bin").config.beta == before  # untouched

    def test_deterministic_given_seed(self, toy):
        assert main(train_args(toy, "model.bin")) == 0
        for tag in ("r1", "r2"):
            assert main(["calibrate", "--model", str(toy / "model.bin"),
                         "--pairs", "200", "--seed", "3",
                         "--out", str(toy / f"{tag}.bin")]) == 0
        assert (toy / "r1.bin").read_bytes() == (toy / "r2.bin").read_bytes()


class TestCheckpoints:
    def test_flag_writes_intermediate_bundles(self, toy):
        assert main(train_args(toy, "model.bin", checkpoint_every=15)) == 0
        names = sorted(p.name for p in toy.glob("model.bin.ckpt-*.bin"))
        assert names == ["model.bin.ckpt-stage1-000015.bin",
                         "model.bin.ckpt-stage1-000030.bin"]
        load_model(toy / names[0])


class TestOptionResolution:
    def test_environment_overrides_default(self, toy, monkeypatch):
        monkeypatch.setenv("HEADFILT_STEPS1", "5")
        args = [a for a in train_args(toy, "env.bin")]
        i = args.index("--steps1")
        del args[i:i + 2]
        assert main(args) == 0
        assert load_model(toy / "env.bin").provenance["steps"]["stage1"] == 5

    def test_cli_beats_environment_beats_config(self, toy, monkeypatch):
        cfg = toy / "run.cfg"
        cfg.write_text("steps1=4\nseed=7\n", encoding="utf-8")

        base = train_args(toy, "x.bin")
        i = base.index("--steps1")
        stripped = base[:i] + base[i + 2:]

        # config file alone
        assert main([*stripped, "--out", str(toy / "c1.bin"), "--config", str(cfg)]) == 0
        assert load_model(toy / "c1.bin").provenance["steps"]["stage1"] == 4

        # environment beats config
        monkeypatch.setenv("HEADFILT_STEPS1", "6")
        assert main([*stripped, "--out", str(toy / "c2.bin"), "--config", str(cfg)]) == 0
        assert load_model(toy / "c2.bin").provenance["steps"]["stage1"] == 6

        # explicit flag beats both
        assert main([*stripped, "--steps1", "8", "--out", str(toy / "c3.bin"),
                     "--config", str(cfg)]) == 0
        assert load_model(toy / "c3.bin").provenance["steps"]["stage1"] == 8

    def test_bad_config_file_is_usage_error(self, toy, capsys):
        cfg = toy / "bad.cfg"
        cfg.write_text("steps1 4\n", encoding="utf-8")
        code = main([*train_args(toy, "x.bin"), "--config", str(cfg)])
        assert code == 2


class TestLmTrain:
    def test_requires_exactly_one_source(self, toy, capsys):
        code = main(["lm-train", "--out", str(toy / "lm.bin")])
        assert code == 2
        code = main(["lm-train", "--out", str(toy / "lm.bin"),
                     "--input", str(toy / "lm.txt"),
                     "--corpus", str(toy / "train.tsv")])
        assert code == 2

    def test_corpus_source_with_corrections(self, toy):
        code = main(["lm-train", "--corpus", str(toy / "train.tsv"),
                     "--apply-edits", "--order", "2",
                     "--out", str(toy / "lm.bin")])
        assert code == 0
        assert (toy / "lm.bin").exists()
