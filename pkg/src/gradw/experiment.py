"""Pipeline stages and the end-to-end desk run built from them."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import checkpoint
from .config import ExperimentConfig, dump_config
from .corpus import AugmentPolicy, Corpus, synth_corpus, write_corpus
from .dsp import synth_utterance
from .enhance import UNet
from .metrics import EvalRow, make_trials, run_trial_eval, write_report, write_trials
from .speaker import PretrainLog, SpeakerNet, pretrain_speaker
from .trainer import TrainResult, train_enhancer

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 7_000_000
DESK_CONFIG = ExperimentConfig(eval=replace(ExperimentConfig().eval, snr_list=("-10", "-5", "0")))


def echo_config(cfg: ExperimentConfig, out_dir) -> Path:
    path = Path(out_dir) / "config.ini"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg), newline="\n")
    return path


def build_corpus(cfg: ExperimentConfig) -> Corpus:
    d = cfg.data
    return synth_corpus(d.n_speakers, d.utts_per_speaker, d.duration_s, d.noise_clips, d.noise_duration_s,
                        seed=cfg.run.seed)


def test_noise_pool(cfg: ExperimentConfig) -> dict:
    """Noise clips for evaluation, disjoint from the training pool by seed."""
    d = cfg.data
    return synth_corpus(0, 0, noise_clips=d.noise_clips, noise_duration_s=d.noise_duration_s,
                        seed=cfg.run.seed + EVAL_SEED_OFFSET).noise


def eval_utterances(cfg: ExperimentConfig):
    """Fresh utterances (unseen seeds) of the training speakers."""
    utts, speakers = {}, {}
    for s in range(cfg.data.n_speakers):
        for k in range(cfg.eval.utts_per_speaker):
            uid = f"eval_spk{s:03d}_utt{k:03d}"
            utts[uid] = synth_utterance(s, cfg.data.duration_s, EVAL_SEED_OFFSET + cfg.run.seed * 1000 + k)
            speakers[uid] = s
    return utts, speakers


def split(cfg: ExperimentConfig, corpus: Corpus) -> tuple[Corpus, Corpus]:
    n_train = cfg.data.n_speakers - cfg.data.val_speakers
    return corpus.by_speaker(range(n_train)), corpus.by_speaker(range(n_train, cfg.data.n_speakers))


def run_pretrain(cfg: ExperimentConfig, corpus: Corpus, out_dir=None) -> tuple[SpeakerNet, PretrainLog]:
    p = cfg.pretrain
    speaker, plog = pretrain_speaker(cfg.speaker, corpus, AugmentPolicy(), p.epochs, cfg.run.seed, p.batch_size,
                                     p.learning_rate, p.warmup_epochs, p.crop_frames, cfg.mel)
    if out_dir is not None:
        out = Path(out_dir)
        checkpoint.save_model(out / "checkpoints" / "speaker.gwckpt", speaker, "speaker", cfg.run.seed,
                              {"frozen": True})
        rows = ["epoch,loss,accuracy,lr"] + [f"{e},{l:.9g},{a:.6f},{lr:.9g}" for e, l, a, lr in plog.epochs]
        (out / "reports").mkdir(parents=True, exist_ok=True)
        (out / "reports" / "pretrain_log.csv").write_text("\n".join(rows) + "\n", newline="\n")
    return speaker, plog


def run_train(cfg: ExperimentConfig, corpus: Corpus, speaker: SpeakerNet, variant: str,
              out_dir=None) -> TrainResult:
    train, val = split(cfg, corpus)
    tcfg = replace(cfg.train, variant=variant, seed=cfg.run.seed)
    return train_enhancer(UNet(cfg.unet, seed=cfg.run.seed), speaker, train, tcfg, val, out_dir, cfg.mel)


def run_evaluate(cfg: ExperimentConfig, speaker: SpeakerNet, enhancers: dict, conditions=None,
                 out_dir=None) -> list[EvalRow]:
    """Noisy baseline plus every enhancer at every condition; enrollment stays clean."""
    utts, spk = eval_utterances(cfg)
    trials = make_trials(spk, cfg.eval.n_trials, cfg.run.seed)
    noise = test_noise_pool(cfg)
    e = cfg.eval
    rows = []
    for cond in (e.conditions() if conditions is None else conditions):
        args = dict(noise=noise, condition=cond, noise_kind=e.noise_kind, seed=cfg.run.seed, mel=cfg.mel,
                    p_target=e.p_target, c_miss=e.c_miss, c_fa=e.c_fa)
        rows.append(run_trial_eval(trials, speaker, utts, variant="noisy", **args))
        for v, unet in enhancers.items():
            rows.append(run_trial_eval(trials, speaker, utts, enhancer=unet, variant=v, **args))
    if out_dir is not None:
        reports = Path(out_dir) / "reports"
        reports.mkdir(parents=True, exist_ok=True)
        write_trials(reports / "trials.txt", trials)
        write_report(reports / "eval_report.csv", rows)
    for r in rows:
        log.info("seed %d %s %s EER %.4f minDCF %.4f", r.seed, r.condition, r.variant, r.eer, r.min_dcf)
    return rows


@dataclass
class DeskResult:
    seed: int
    pretrain: PretrainLog
    train_logs: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    speaker: SpeakerNet | None = None

    def eer(self, condition, variant) -> float:
        for r in self.rows:
            if r.condition == str(condition) and r.variant == variant:
                return r.eer
        raise KeyError((condition, variant))


def desk_run(seed: int, cfg: ExperimentConfig = DESK_CONFIG, out_dir=None) -> DeskResult:
    """Corpus -> frozen speaker net -> one enhancer per variant -> SNR-swept trials."""
    cfg = cfg.with_seed(seed)
    out = Path(out_dir) if out_dir is not None else None
    timings = {}
    t0 = time.perf_counter()
    corpus = build_corpus(cfg)
    if out is not None:
        echo_config(cfg, out)
        write_corpus(corpus, out / "manifests")
    timings["corpus"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    speaker, plog = run_pretrain(cfg, corpus, out)
    timings["pretrain"] = time.perf_counter() - t0

    result = DeskResult(seed, plog, timings=timings, speaker=speaker)
    enhancers = {}
    for v in cfg.run.variants:
        t0 = time.perf_counter()
        res = run_train(cfg, corpus, speaker, v, out)
        enhancers[v] = res.unet
        result.train_logs[v] = res.log
        timings[f"train_{v}"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result.rows = run_evaluate(cfg, speaker, enhancers, out_dir=out)
    timings["evaluate"] = time.perf_counter() - t0
    return result
