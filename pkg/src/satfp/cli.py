"""Command-line front end: dataset synthesis, training, scenario evaluation,
single-file verification, and replay-attack generation.

All informational output is a single JSON document on stdout; diagnostics go
to stderr. Output files are written to a temporary path and atomically moved
into place, so failed runs never leave partial outputs. Exit codes: 0 ok,
1 usage, 2 data/format, 3 model/training, 4 verification rejection under
--strict.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, replace

from . import __version__, datapipe, synth, verify
from .errors import (
    CheckpointFormatError,
    ConfigurationError,
    CorruptionError,
    DegenerateEmbeddingError,
    DegenerateInputError,
    FormatError,
    MalformedInputError,
    ShapeError,
    TrainingFailureError,
)
from .model import ModelConfig, default_config, load_checkpoint, save_checkpoint, train
from .sigcore import HeaderSpec

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3
EXIT_REJECTED = 4

_DATA_ERRORS = (
    FormatError,
    CorruptionError,
    MalformedInputError,
    ConfigurationError,
    DegenerateInputError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
)
_MODEL_ERRORS = (
    TrainingFailureError,
    CheckpointFormatError,
    ShapeError,
    DegenerateEmbeddingError,
)

log = logging.getLogger("satfp")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _atomic_write(path: str, writer) -> None:
    """Run writer(tmp_path) then atomically move tmp_path onto path."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".satfp-", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def _generation_config_dict(cfg: synth.GenerationConfig) -> dict:
    d = asdict(cfg)
    d["channel"]["multipath_taps"] = [
        [delay, gain.real, gain.imag] for delay, gain in cfg.channel.multipath_taps
    ]
    return d


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise _UsageError(f"expected a comma-separated integer list, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise _UsageError(f"expected a comma-separated float list, got {text!r}") from None


def build_parser() -> _Parser:
    parser = _Parser(prog="satfp", description=__doc__)
    parser.add_argument("--version", action="version", version=f"satfp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="key = value generation config file")
    p.add_argument("--tx", type=int, help="number of transmitters")
    p.add_argument("--msgs", type=int, help="messages per transmitter")
    p.add_argument("--distribution", choices=("fixed", "poisson"))
    p.add_argument("--severity", type=float)
    p.add_argument("--osr", type=int, help="oversampling (samples per symbol)")
    p.add_argument("--snr", type=float, help="channel SNR in dB (inf = noiseless)")
    p.add_argument("--snr-spread", type=float, help="per-message uniform SNR spread, dB")
    p.add_argument("--phase-jitter", type=float, help="per-message phase jitter, rad")
    p.add_argument("--drift", type=float, help="channel drift, rad/day")
    p.add_argument("--duration-days", type=float)
    p.add_argument("--start-day", type=float)
    p.add_argument("--pulse-shape", choices=("rrc", "rect"))
    p.add_argument("--seed", type=int)
    p.add_argument("--profile-seed", type=int,
                   help="reuse the transmitter fleet of another seed")
    p.add_argument("--out", required=True, help="output SIQ1 file")

    p = sub.add_parser("train", help="train a fingerprinting model")
    p.add_argument("--data", required=True, help="input SIQ1 file")
    p.add_argument("--out", required=True, help="output checkpoint file")
    p.add_argument("--ratios", default="0.9,0.05,0.05", help="train,val,test ratios")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--exclude-tx", default="", help="transmitter ids to hold out of training")
    p.add_argument("--excluded-out", help="optional SIQ1 file for the held-out pool")
    p.add_argument("--keep-fraction", type=float, help="noise filter: keep this fraction")
    p.add_argument("--embedding-dim", type=int, default=128)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--pretrain-epochs", type=int, default=0)
    p.add_argument("--learning-rate", type=float, default=3e-2)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--lambda-rec", type=float, default=1.0)
    p.add_argument("--lambda-trip", type=float, default=5.0)
    p.add_argument("--batch-seed", type=int, default=0)
    p.add_argument("--init-seed", type=int, default=0)

    p = sub.add_parser("eval", help="run an evaluation scenario")
    p.add_argument("--scenario", required=True, choices=verify.SCENARIOS)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="evaluation SIQ1 file")
    p.add_argument("--replayed", help="replayed SIQ1 file (replay scenario)")
    p.add_argument("--late", help="later-era SIQ1 file (timegap scenario)")
    p.add_argument("--anchors", default="1,4,16,32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--neg-ratio", type=int, default=10)
    p.add_argument("--roc-out", help="directory for per-report ROC CSV files")
    p.add_argument("--out", help="optional JSON report file")

    p = sub.add_parser("verify", help="score a record file against stored anchors")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--anchor-data", required=True, help="SIQ1 file holding known-good records")
    p.add_argument("--tx", type=int, required=True, help="claimed transmitter id")
    p.add_argument("--num-anchors", type=int, default=16)
    p.add_argument("--anchor-seed", type=int, default=0)
    p.add_argument("--input", required=True, help="SIQ1 file with messages to verify")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--strict", action="store_true", help="exit 4 if any message is rejected")

    p = sub.add_parser("attack", help="produce a replayed dataset")
    p.add_argument("--data", required=True, help="input SIQ1 file")
    p.add_argument("--out", required=True, help="output SIQ1 file")
    p.add_argument("--attacker-seed", type=int, default=1)
    p.add_argument("--attacker-severity", type=float, default=1.0)
    p.add_argument("--attacker-snr", type=float, help="optional attacker-chain SNR, dB")
    p.add_argument("--quantize-bits", type=int, default=8)
    p.add_argument("--no-quantize", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_synth(args) -> int:
    cfg = synth.parse_generation_config(args.config) if args.config else synth.GenerationConfig()
    overrides = {
        "tx": ("n_transmitters", args.tx),
        "msgs": ("messages_per_tx", args.msgs),
        "distribution": ("count_distribution", args.distribution),
        "severity": ("severity", args.severity),
        "snr_spread": ("snr_spread_db", args.snr_spread),
        "phase_jitter": ("phase_jitter_rad", args.phase_jitter),
        "duration_days": ("duration_days", args.duration_days),
        "start_day": ("start_day", args.start_day),
        "seed": ("seed", args.seed),
        "profile_seed": ("profile_seed", args.profile_seed),
        "pulse_shape": ("pulse_shape", args.pulse_shape),
    }
    for _, (field_name, value) in overrides.items():
        if value is not None:
            setattr(cfg, field_name, value)
    if args.snr is not None:
        cfg.channel = replace(cfg.channel, snr_db=args.snr)
    if args.drift is not None:
        cfg.channel = replace(cfg.channel, drift_rate=args.drift)
    if args.osr is not None:
        cfg.header = HeaderSpec(bits=cfg.header.bits, symbol_rate=cfg.header.symbol_rate,
                                oversampling=args.osr)
    log.info("generating %d transmitters x ~%d messages", cfg.n_transmitters, cfg.messages_per_tx)
    records = synth.generate_dataset(cfg)
    _atomic_write(args.out, lambda tmp: datapipe.write_records(records, tmp))
    _emit(
        {
            "command": "synth",
            "config": _generation_config_dict(cfg),
            "records": len(records),
            "out": args.out,
        }
    )
    return EXIT_OK


def _cmd_train(args) -> int:
    ratios = _float_list(args.ratios)
    records = list(datapipe.read_records(args.data))
    if not records:
        raise ConfigurationError(f"{args.data} holds no records")
    excluded: list[int] = _int_list(args.exclude_tx) if args.exclude_tx else []
    pool: list = []
    if excluded:
        records, pool = datapipe.exclude_labels(records, excluded)
        log.info("held out %d transmitters (%d records)", len(excluded), len(pool))
        if not records:
            raise ConfigurationError("every record was excluded; nothing left to train on")
    if args.keep_fraction is not None:
        before = len(records)
        records = datapipe.filter_by_noise(records, args.keep_fraction)
        log.info("noise filter kept %d of %d records", len(records), before)
    split = datapipe.split_dataset(records, ratios, seed=args.split_seed)
    config = default_config(
        input_length=len(records[0].waveform),
        embedding_dim=args.embedding_dim,
        margin=args.margin,
        lambda_rec=args.lambda_rec,
        lambda_trip=args.lambda_trip,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        epochs=args.epochs,
        pretrain_epochs=args.pretrain_epochs,
        batch_seed=args.batch_seed,
        init_seed=args.init_seed,
    )
    log.info(
        "training on %d records (%d val) for %d epochs",
        len(split.train),
        len(split.validation),
        config.epochs,
    )
    model = train(config, split.train, split.validation)
    _atomic_write(args.out, lambda tmp: save_checkpoint(model, tmp))
    if args.excluded_out and pool:
        _atomic_write(args.excluded_out, lambda tmp: datapipe.write_records(pool, tmp))
    _emit(
        {
            "command": "train",
            "config": {
                "model": _model_config_dict(config),
                "data": args.data,
                "ratios": ratios,
                "split_seed": args.split_seed,
                "exclude_tx": excluded,
                "keep_fraction": args.keep_fraction,
            },
            "history": model.history,
            "final_train_loss": model.history["train_total"][-1],
            "checkpoint": args.out,
        }
    )
    return EXIT_OK


def _model_config_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d["conv_stages"] = [list(s) for s in config.conv_stages]
    return d


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    records = list(datapipe.read_records(args.data))
    replayed = list(datapipe.read_records(args.replayed)) if args.replayed else None
    late = list(datapipe.read_records(args.late)) if args.late else None
    anchor_counts = _int_list(args.anchors)
    results = verify.run_scenario(
        args.scenario,
        model,
        records,
        replayed=replayed,
        late_records=late,
        anchor_counts=anchor_counts,
        seed=args.seed,
        neg_ratio=args.neg_ratio,
    )
    reports = [report.to_dict() for report, _ in results]
    if args.roc_out:
        os.makedirs(args.roc_out, exist_ok=True)
        for report, curve in results:
            name = f"roc_{report.scenario}_{report.anchors}.csv"
            path = os.path.join(args.roc_out, name)
            _atomic_write(path, lambda tmp, c=curve: _write_text(tmp, c.to_csv_text()))
    doc = {
        "command": "eval",
        "config": {
            "scenario": args.scenario,
            "ckpt": args.ckpt,
            "data": args.data,
            "replayed": args.replayed,
            "late": args.late,
            "anchors": anchor_counts,
            "seed": args.seed,
            "neg_ratio": args.neg_ratio,
        },
        "reports": reports,
    }
    if args.out:
        _atomic_write(args.out, lambda tmp: _write_text(tmp, json.dumps(doc, sort_keys=True)))
    _emit(doc)
    return EXIT_OK


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _cmd_verify(args) -> int:
    model = load_checkpoint(args.ckpt)
    anchor_records = [
        rec for rec in datapipe.read_records(args.anchor_data) if rec.transmitter_id == args.tx
    ]
    if not anchor_records:
        raise ConfigurationError(f"{args.anchor_data} has no records for transmitter {args.tx}")
    anchors, _ = verify.select_anchors(anchor_records, args.num_anchors, args.anchor_seed, model)
    results = []
    n_rejected = 0
    for rec in datapipe.read_records(args.input):
        score = verify.score_message(rec.waveform, anchors, model)
        accepted = verify.decide(score, args.threshold)
        n_rejected += not accepted
        results.append(
            {
                "message_id": rec.message_id,
                "transmitter_id": rec.transmitter_id,
                "score": score,
                "accepted": accepted,
            }
        )
    if not results:
        raise ConfigurationError(f"{args.input} holds no records")
    _emit(
        {
            "command": "verify",
            "config": {
                "ckpt": args.ckpt,
                "anchor_data": args.anchor_data,
                "tx": args.tx,
                "num_anchors": args.num_anchors,
                "anchor_seed": args.anchor_seed,
                "input": args.input,
                "threshold": args.threshold,
                "strict": args.strict,
            },
            "results": results,
            "n_accepted": len(results) - n_rejected,
            "n_rejected": n_rejected,
        }
    )
    if args.strict and n_rejected:
        log.warning("%d of %d messages rejected", n_rejected, len(results))
        return EXIT_REJECTED
    return EXIT_OK


def _cmd_attack(args) -> int:
    records = list(datapipe.read_records(args.data))
    if not records:
        raise ConfigurationError(f"{args.data} holds no records")
    attacker = synth.make_profile(args.attacker_seed, args.attacker_severity)
    channel = None
    if args.attacker_snr is not None:
        channel = synth.ChannelParams(snr_db=args.attacker_snr)
    quantize_bits = None if args.no_quantize else args.quantize_bits
    length = len(records[0].waveform)
    osr = length // (len(HeaderSpec().bits) // 2)
    header = HeaderSpec(oversampling=osr) if length % 8 == 0 and osr >= 1 else None
    replayed = synth.make_replay_dataset(
        records,
        attacker,
        channel,
        seed=args.seed,
        quantize_bits=quantize_bits,
        header=header,
    )
    _atomic_write(args.out, lambda tmp: datapipe.write_records(replayed, tmp))
    _emit(
        {
            "command": "attack",
            "config": {
                "data": args.data,
                "attacker_seed": args.attacker_seed,
                "attacker_severity": args.attacker_severity,
                "attacker_snr": args.attacker_snr,
                "quantize_bits": quantize_bits,
                "seed": args.seed,
            },
            "records": len(replayed),
            "out": args.out,
        }
    )
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "attack": _cmd_attack,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _MODEL_ERRORS as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
