import subprocess
import sys

import numpy as np
import pytest

from gradw.cli import build_parser, main
from gradw.config import load_config
from gradw.diagnostics import read_matrix_csv, read_pgm
from gradw.loss import VARIANT_NAMES
from gradw.metrics import read_report

TINY_INI = """\
[data]
n_speakers = 4
utts_per_speaker = 3
duration_s = 1.2
noise_clips = 6
noise_duration_s = 2.0
val_speakers = 1

[speaker]
first_conv_channels = 4
embedding_dim = 8
num_speakers = 4

[pretrain]
epochs = 1
batch_size = 4
crop_frames = 64

[unet]
first_conv_channels = 4

[train]
epochs = 1
batch_size = 4
warmup_epochs = 1
crop_frames = 64

[eval]
utts_per_speaker = 3
n_trials = 20
"""
SNRS = "-15,-10,-5,0,5,10,15,clean"


def pipeline(out, ini):
    base = ["--config", str(ini), "--out", str(out)]
    assert main(["synth-data"] + base) == 0
    assert main(base + ["pretrain"]) == 0
    assert main(["train-enh", "--variant", "grad_w"] + base) == 0
    assert main(["evaluate", f"--snr-list={SNRS}", "--variant", "noisy,grad_w"] + base) == 0


@pytest.fixture(scope="module")
def ini(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    p.write_text(TINY_INI)
    return p


@pytest.fixture(scope="module")
def runs(tmp_path_factory, ini):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    pipeline(a, ini)
    pipeline(b, ini)
    return a, b


class TestParser:
    def test_global_flags_either_side(self):
        p = build_parser()
        before = p.parse_args(["--seed", "3", "--f64", "evaluate"])
        after = p.parse_args(["evaluate", "--seed", "3", "--f64"])
        assert before.seed == after.seed == 3
        assert before.f64 and after.f64

    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestPipeline:
    def test_artifacts(self, runs):
        out = runs[0]
        for rel in ("config.ini", "manifests/manifest.txt", "checkpoints/speaker.gwckpt",
                    "checkpoints/grad_w_best.gwckpt", "reports/grad_w_trainlog.csv", "reports/trials.txt",
                    "reports/eval_report.csv", "reports/pretrain_log.csv"):
            assert (out / rel).exists(), rel

    def test_config_echo_parses(self, runs, ini):
        assert load_config(runs[0] / "config.ini") == load_config(ini)

    def test_report_rows(self, runs):
        rows = read_report(runs[0] / "reports" / "eval_report.csv")
        assert len(rows) == 16
        assert [r.condition for r in rows if r.variant == "noisy"] == SNRS.split(",")
        assert all(0 <= r.eer <= 1 and r.n_trials == 20 for r in rows)

    def test_noisy_only_gives_eight_rows(self, runs, ini, capsys):
        assert main(["evaluate", f"--snr-list={SNRS}", "--config", str(ini), "--out", str(runs[1])]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 8
        assert len(read_report(runs[1] / "reports" / "eval_report.csv")) == 8

    def test_byte_identical_reruns(self, runs):
        a, b = runs
        for rel in ("checkpoints/speaker.gwckpt", "checkpoints/grad_w_best.gwckpt",
                    "reports/grad_w_trainlog.csv", "reports/pretrain_log.csv", "manifests/manifest.txt"):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_diagnose_identity(self, runs, ini):
        out = runs[0]
        wav = out / "manifests" / "wav" / "spk000_utt000.wav"
        assert main(["diagnose", "--clean", str(wav), "--noisy", str(wav), "--config", str(ini),
                     "--out", str(out)]) == 0
        diag = out / "diagnostics"
        assert np.abs(read_matrix_csv(diag / "D.csv")).max() == 0
        p = read_matrix_csv(diag / "P.csv")
        assert p.sum() == pytest.approx(1, abs=1e-6)
        assert read_pgm(diag / "P.pgm").shape == p.shape
        assert read_pgm(diag / "X.pgm").shape == read_matrix_csv(diag / "X.csv").shape

    def test_diagnose_with_unet(self, runs, ini):
        out = runs[0]
        wav = out / "manifests" / "wav"
        assert main(["diagnose", "--clean", str(wav / "spk001_utt000.wav"), "--noisy",
                     str(wav / "spk001_utt001.wav"), "--unet", str(out / "checkpoints" / "grad_w_best.gwckpt"),
                     "--target", "1", "--config", str(ini), "--out", str(out)]) == 0
        assert "target_speaker=1" in (out / "diagnostics" / "summary.txt").read_text()


class TestErrors:
    def one_line(self, capsys):
        err = capsys.readouterr().err
        assert err.count("\n") == 1 and err.startswith("error[")
        return err

    def test_unknown_variant_lists_all(self, tmp_path, capsys):
        assert main(["evaluate", "--variant", "bogus", "--out", str(tmp_path)]) != 0
        err = self.one_line(capsys)
        assert all(v in err for v in VARIANT_NAMES)

    def test_missing_checkpoint(self, tmp_path, capsys):
        assert main(["evaluate", "--out", str(tmp_path)]) != 0
        assert "speaker checkpoint" in self.one_line(capsys)

    def test_bad_config(self, tmp_path, capsys):
        (tmp_path / "c.ini").write_text("[train]\nbogus = 1\n")
        assert main(["synth-data", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)]) != 0
        assert "train.bogus" in self.one_line(capsys)

    def test_bad_snr(self, runs, ini, capsys):
        assert main(["evaluate", "--snr-list=-5,loud", "--config", str(ini), "--out", str(runs[1])]) != 0
        self.one_line(capsys)

    def test_module_entry(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "gradw", "train-enh", "--variant", "x", "--out", str(tmp_path)],
                           capture_output=True, text=True)
        assert r.returncode == 2
        assert r.stderr.startswith("error[bad-variant]")
