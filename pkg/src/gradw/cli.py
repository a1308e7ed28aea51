"""Command-line entry point: synth-data, pretrain, train-enh, evaluate, diagnose."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import read_corpus, write_corpus
from .diagnostics import diagnose_pair, write_diagnostics
from .dsp import mel_features, read_wav
from .experiment import build_corpus, echo_config, eval_utterances, run_evaluate, run_pretrain, run_train
from .loss import get_variant
from .metrics import make_trials, write_report, write_trials

log = logging.getLogger("gradw")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _paths(out: Path) -> dict:
    return {k: out / k for k in ("manifests", "checkpoints", "reports", "diagnostics")}


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError("missing-input", f"{what} not found: {path}")
    return path


def _corpus(args, out):
    manifest = Path(args.manifest) if getattr(args, "manifest", None) else out / "manifests" / "manifest.txt"
    return read_corpus(_require(manifest, "corpus manifest (run synth-data first)"))


def _speaker(args, out):
    path = Path(args.speaker) if getattr(args, "speaker", None) else out / "checkpoints" / "speaker.gwckpt"
    model = checkpoint.load_speaker(_require(path, "speaker checkpoint (run pretrain first)"))
    return model.freeze()


def _variants(spec: str) -> list[str]:
    names = [v.strip() for v in spec.split(",") if v.strip()]
    if not names:
        raise CliError("bad-variant", "empty variant list")
    for v in names:
        if v != "noisy":
            try:
                get_variant(v)
            except ValueError as exc:
                raise CliError("bad-variant", str(exc)) from None
    return names


def _conditions(spec: str) -> list:
    out = []
    for tok in spec.split(","):
        tok = tok.strip()
        if tok == "clean":
            out.append("clean")
            continue
        try:
            out.append(float(tok))
        except ValueError:
            raise CliError("bad-snr", f"bad SNR token {tok!r}; use dB values or 'clean'") from None
    if not out:
        raise CliError("bad-snr", "empty SNR list")
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_data(cfg: ExperimentConfig, args, out: Path) -> str:
    manifest = write_corpus(build_corpus(cfg), out / "manifests")
    return f"wrote {manifest}"


def cmd_pretrain(cfg, args, out):
    corpus = _corpus(args, out)
    _, plog = run_pretrain(cfg, corpus, out)
    return f"pretrained speaker net: final train accuracy {plog.final_accuracy:.3f}"


def cmd_train_enh(cfg, args, out):
    variant = _variants(args.variant)
    if len(variant) != 1 or variant[0] == "noisy":
        raise CliError("bad-variant", "train-enh takes exactly one loss variant")
    res = run_train(cfg, _corpus(args, out), _speaker(args, out), variant[0], out)
    return f"trained {variant[0]}: best epoch {res.best_epoch}"


def cmd_evaluate(cfg, args, out):
    systems = _variants(args.variant)
    conditions = _conditions(args.snr_list) if args.snr_list else cfg.eval.conditions()
    speaker = _speaker(args, out)
    enh = {}
    for s in systems:
        if s != "noisy":
            path = _require(out / "checkpoints" / f"{s}_best.gwckpt", f"{s} enhancer checkpoint (run train-enh)")
            enh[s] = checkpoint.load_unet(path)
    rows = [r for r in run_evaluate(cfg, speaker, enh, conditions) if r.variant in systems]
    reports = out / "reports"
    write_trials(reports / "trials.txt", make_trials(eval_utterances(cfg)[1], cfg.eval.n_trials, cfg.run.seed))
    write_report(reports / "eval_report.csv", rows)
    return "\n".join(r.csv() for r in rows)


def cmd_diagnose(cfg, args, out):
    speaker = _speaker(args, out)
    unet = checkpoint.load_unet(_require(Path(args.unet), "U-Net checkpoint")) if args.unet else None
    clean = mel_features(read_wav(_require(Path(args.clean), "clean WAV")), cfg.mel).values
    noisy = mel_features(read_wav(_require(Path(args.noisy), "noisy WAV")), cfg.mel).values
    n = min(clean.shape[0], noisy.shape[0])
    maps = diagnose_pair(speaker, clean[:n], noisy[:n], unet, args.target)
    written = write_diagnostics(maps, out / "diagnostics")
    return f"wrote {len(written)} files to {out / 'diagnostics'}"


COMMANDS = {
    "synth-data": cmd_synth_data,
    "pretrain": cmd_pretrain,
    "train-enh": cmd_train_enh,
    "evaluate": cmd_evaluate,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="sectioned key=value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides run.seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: runs)")
    common.add_argument("--f64", action="store_true", default=argparse.SUPPRESS,
                        help="64-bit arithmetic (verification precision)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="gradw", parents=[common],
                                description="Gradient-weighted enhancement for speaker verification")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth-data", parents=[common], help="synthesize the speaker corpus and noise pool")
    sp = sub.add_parser("pretrain", parents=[common], help="train and freeze the speaker network")
    sp.add_argument("--manifest")
    sp = sub.add_parser("train-enh", parents=[common], help="train one enhancer")
    sp.add_argument("--variant", default="grad_w")
    sp.add_argument("--manifest")
    sp.add_argument("--speaker")
    sp = sub.add_parser("evaluate", parents=[common], help="EER/minDCF across SNR conditions")
    sp.add_argument("--snr-list", help="comma-separated dB values and/or 'clean'")
    sp.add_argument("--variant", default="noisy", help="'noisy' and/or loss variants, comma-separated")
    sp.add_argument("--speaker")
    sp = sub.add_parser("diagnose", parents=[common], help="dump X, E, M, A, D, P heat maps for one pair")
    sp.add_argument("--clean", required=True)
    sp.add_argument("--noisy", required=True)
    sp.add_argument("--speaker")
    sp.add_argument("--unet", help="enhancer checkpoint; omitted means an identity mask")
    sp.add_argument("--target", type=int, help="target speaker (default: decision on the clean input)")
    return p


def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    out = Path(getattr(args, "out", "runs"))
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
        if getattr(args, "seed", None) is not None:
            cfg = cfg.with_seed(args.seed)
        for d in _paths(out).values():
            d.mkdir(parents=True, exist_ok=True)
        echo_config(cfg, out)
        dtype = np.float64 if getattr(args, "f64", False) else np.float32
        with ad.precision(dtype):
            msg = COMMANDS[args.command](cfg, args, out)
    except CliError as exc:
        print(f"error[{exc.code}]: {_one_line(exc)}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error[config]: {_one_line(exc)}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error[checkpoint]: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {_one_line(exc)}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, IndexError, RuntimeError) as exc:
        print(f"error[{type(exc).__name__}]: {_one_line(exc)}", file=sys.stderr)
        return 1
    print(msg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
