"""Record persistence (SIQ1 files), dataset splits, noise filtering, and
triplet-friendly batch construction.

SIQ1 layout (all little-endian): magic ``SIQ1``, u32 format version; then per
record: transmitter_id u32, message_id u64, timestamp_s f64, snr_db f32,
noise_score f32 (NaN = unset), n_samples u32, and n_samples interleaved
(I f32, Q f32) pairs. ``sample_rate_hint`` is informational and not persisted.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    BatchStructureError,
    ConfigurationError,
    CorruptionError,
    FormatError,
    MalformedInputError,
)
from .sigcore import Waveform
from .synth import MessageRecord

MAGIC = b"SIQ1"
FORMAT_VERSION = 1

_HEADER_STRUCT = struct.Struct("<4sI")
_RECORD_STRUCT = struct.Struct("<IQdffI")

BATCH_TRANSMITTERS = 8
BATCH_PER_TRANSMITTER = 4
BATCH_SIZE = BATCH_TRANSMITTERS * BATCH_PER_TRANSMITTER


def write_records(records: Iterable[MessageRecord], path: str) -> int:
    """Write records to a SIQ1 file; returns the record count."""
    count = 0
    with open(path, "wb") as fh:
        fh.write(_HEADER_STRUCT.pack(MAGIC, FORMAT_VERSION))
        for rec in records:
            _write_one(fh, rec)
            count += 1
    return count


def _write_one(fh: BinaryIO, rec: MessageRecord) -> None:
    wave = rec.waveform
    n = len(wave)
    score = math.nan if rec.noise_score is None else rec.noise_score
    fh.write(
        _RECORD_STRUCT.pack(
            rec.transmitter_id, rec.message_id, rec.timestamp_s, rec.snr_db, score, n
        )
    )
    interleaved = np.empty(2 * n, dtype="<f4")
    interleaved[0::2] = wave.i.astype(np.float32)
    interleaved[1::2] = wave.q.astype(np.float32)
    fh.write(interleaved.tobytes())


def read_records(path: str) -> Iterator[MessageRecord]:
    """Stream records from a SIQ1 file without loading it whole."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER_STRUCT.size)
        if len(head) < _HEADER_STRUCT.size:
            raise FormatError(f"{path}: too short to hold a SIQ1 header")
        magic, version = _HEADER_STRUCT.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        offset = _HEADER_STRUCT.size
        while True:
            fixed = fh.read(_RECORD_STRUCT.size)
            if not fixed:
                return
            if len(fixed) < _RECORD_STRUCT.size:
                raise CorruptionError(f"{path}: truncated record header", offset)
            tx, msg, ts, snr, score, n = _RECORD_STRUCT.unpack(fixed)
            payload = fh.read(8 * n)
            if len(payload) < 8 * n:
                raise CorruptionError(f"{path}: truncated record payload", offset)
            interleaved = np.frombuffer(payload, dtype="<f4")
            yield MessageRecord(
                transmitter_id=tx,
                message_id=msg,
                timestamp_s=ts,
                snr_db=snr,
                noise_score=None if math.isnan(score) else score,
                waveform=Waveform(i=interleaved[0::2].copy(), q=interleaved[1::2].copy()),
            )
            offset += _RECORD_STRUCT.size + 8 * n


@dataclass
class DatasetSplit:
    """Disjoint train/validation/test partitions of a record list."""

    train: list[MessageRecord]
    validation: list[MessageRecord]
    test: list[MessageRecord]
    split_seed: int


def _largest_remainder_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    quotas = [n * r for r in ratios]
    sizes = [int(q) for q in quotas]
    remainders = [q - s for q, s in zip(quotas, sizes)]
    shortfall = n - sum(sizes)
    for idx in sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))[:shortfall]:
        sizes[idx] += 1
    return sizes


def split_dataset(
    records: Sequence[MessageRecord],
    ratios: Sequence[float] = (0.90, 0.05, 0.05),
    seed: int = 0,
) -> DatasetSplit:
    """Shuffle by seed and partition into train/validation/test.

    Sizes follow largest-remainder rounding of the ratios (ties favor the
    earlier partition).
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigurationError(f"ratios must be 3 positive values, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"ratios must sum to 1, got {sum(ratios)}")
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(len(records))
    n_train, n_val, _ = _largest_remainder_sizes(len(records), ratios)
    shuffled = [records[i] for i in perm]
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        split_seed=seed,
    )


def filter_by_noise(
    records: Sequence[MessageRecord], keep_fraction: float
) -> list[MessageRecord]:
    """Keep the ceil(keep_fraction * n) records with the lowest noise scores.

    Ties break by (transmitter_id, message_id) ascending; kept records stay
    in their input order.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigurationError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    if any(rec.noise_score is None for rec in records):
        raise MalformedInputError("filter_by_noise requires noise_score on every record")
    n_keep = math.ceil(keep_fraction * len(records))
    ranked = sorted(
        range(len(records)),
        key=lambda i: (records[i].noise_score, records[i].transmitter_id, records[i].message_id),
    )
    kept = sorted(ranked[:n_keep])
    return [records[i] for i in kept]


def exclude_labels(
    records: Sequence[MessageRecord], labels: Iterable[int]
) -> tuple[list[MessageRecord], list[MessageRecord]]:
    """Split records into (kept, excluded-label pool) for held-out experiments."""
    excluded = set(labels)
    kept = [r for r in records if r.transmitter_id not in excluded]
    pool = [r for r in records if r.transmitter_id in excluded]
    return kept, pool


@dataclass
class Batch:
    """32 records: 4 messages from each of 8 distinct transmitters."""

    records: list[MessageRecord]

    def __post_init__(self):
        labels = [r.transmitter_id for r in self.records]
        if len(labels) != BATCH_SIZE:
            raise BatchStructureError(f"batch must have {BATCH_SIZE} records, got {len(labels)}")
        counts: dict[int, int] = {}
        for lab in labels:
            counts[lab] = counts.get(lab, 0) + 1
        if len(counts) != BATCH_TRANSMITTERS or set(counts.values()) != {BATCH_PER_TRANSMITTER}:
            raise BatchStructureError(
                f"batch must hold {BATCH_TRANSMITTERS} labels x {BATCH_PER_TRANSMITTER} "
                f"messages, got counts {counts}"
            )

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.transmitter_id for r in self.records], dtype=np.int64)

    def waveform_array(self, dtype=np.float32) -> np.ndarray:
        """Stack waveforms as (32, 2, length) with I and Q as separate rows."""
        length = len(self.records[0].waveform)
        out = np.empty((len(self.records), 2, length), dtype=dtype)
        for row, rec in enumerate(self.records):
            out[row, 0] = rec.waveform.i
            out[row, 1] = rec.waveform.q
        return out


def batch_iter(
    records: Sequence[MessageRecord], seed: int = 0, epochs: int = 1
) -> Iterator[Batch]:
    """Yield 8x4 batches, one pass per epoch without replacement.

    Each batch takes the 8 transmitters with the most unconsumed messages
    (ties broken randomly per batch) and 4 unconsumed messages from each, so
    no (transmitter, message) pair repeats within an epoch. Transmitters with
    fewer than 4 records are skipped; at least 8 eligible transmitters are
    required.
    """
    by_label: dict[int, list[int]] = {}
    for idx, rec in enumerate(records):
        by_label.setdefault(rec.transmitter_id, []).append(idx)
    eligible = {lab: idxs for lab, idxs in by_label.items() if len(idxs) >= BATCH_PER_TRANSMITTER}
    if len(eligible) < BATCH_TRANSMITTERS:
        deficient = sorted(set(by_label) - set(eligible))
        raise ConfigurationError(
            f"need >= {BATCH_TRANSMITTERS} transmitters with >= {BATCH_PER_TRANSMITTER} "
            f"records, have {len(eligible)}; deficient labels: {deficient}"
        )
    labels = sorted(eligible)
    for epoch in range(epochs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
        queues = {lab: [eligible[lab][j] for j in rng.permutation(len(eligible[lab]))] for lab in labels}
        while True:
            ready = [lab for lab in labels if len(queues[lab]) >= BATCH_PER_TRANSMITTER]
            if len(ready) < BATCH_TRANSMITTERS:
                break
            tiebreak = rng.random(len(ready))
            order = sorted(
                range(len(ready)), key=lambda i: (-len(queues[ready[i]]), tiebreak[i])
            )
            chosen = [ready[i] for i in order[:BATCH_TRANSMITTERS]]
            members: list[MessageRecord] = []
            for lab in chosen:
                take, queues[lab] = (
                    queues[lab][:BATCH_PER_TRANSMITTER],
                    queues[lab][BATCH_PER_TRANSMITTER:],
                )
                members.extend(records[i] for i in take)
            yield Batch(records=members)
