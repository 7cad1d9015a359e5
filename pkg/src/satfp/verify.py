"""Anchor-based verification and evaluation: shuffle-split anchor selection,
multi-anchor mean-distance scoring, ROC/AUC/EER metrics, threshold tables,
and the closed/replay/heldout/timegap scenario runners.

Scores are angular distances, so positives (same transmitter) should be LOW;
a message is accepted when its score is <= the threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError
from .model import FingerprintModel, pairwise_angular_distances
from .sigcore import Waveform
from .synth import MessageRecord

#: TPR targets reported by default in threshold tables.
DEFAULT_TPR_TARGETS = (0.999, 0.990, 0.950, 0.900, 0.861, 0.805, 0.672, 0.424)

DEFAULT_ANCHOR_COUNTS = (1, 4, 16, 32)

SCENARIOS = ("closed", "replay", "heldout", "timegap")


@dataclass
class AnchorSet:
    """Known-good embeddings of one transmitter used as a reference."""

    transmitter_id: int
    embeddings: np.ndarray  # (n, D)
    source_message_ids: list[int]
    created_at: float  # latest source timestamp

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings))
        if self.embeddings.shape[0] < 1:
            raise ConfigurationError("anchor set needs at least one embedding")


@dataclass
class RocCurve:
    """Threshold sweep; fpr/tpr are fractions of scores <= threshold."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    n_pos: int
    n_neg: int

    @property
    def fnr(self) -> np.ndarray:
        return 1.0 - self.tpr

    def to_csv_text(self) -> str:
        lines = ["threshold,fpr,tpr,fnr"]
        for t, fp, tp in zip(self.thresholds, self.fpr, self.tpr):
            lines.append(f"{t:.9g},{fp:.9g},{tp:.9g},{1.0 - tp:.9g}")
        return "\n".join(lines) + "\n"


@dataclass
class MetricsReport:
    """Summary of one scenario evaluation at one anchor count."""

    scenario: str
    anchors: int
    auc: float
    eer: float
    eer_threshold: float
    n_pos: int
    n_neg: int
    threshold_table: list[dict]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "anchors": self.anchors,
            "auc": self.auc,
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "threshold_table": self.threshold_table,
        }


def select_anchors(
    records: Sequence[MessageRecord],
    n: int,
    seed: int,
    model: FingerprintModel,
) -> tuple[AnchorSet, list[MessageRecord]]:
    """Shuffle-split: n uniformly chosen records become anchors, the rest the
    positive test pool."""
    if n < 1:
        raise ConfigurationError(f"anchor count must be >= 1, got {n}")
    if len(records) < n + 1:
        raise ConfigurationError(
            f"need at least {n + 1} records to select {n} anchors, got {len(records)}"
        )
    tx_ids = {rec.transmitter_id for rec in records}
    if len(tx_ids) != 1:
        raise ConfigurationError(f"anchor records span multiple transmitters: {sorted(tx_ids)}")
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(len(records))
    chosen = [records[i] for i in perm[:n]]
    remaining = [records[i] for i in perm[n:]]
    anchors = AnchorSet(
        transmitter_id=chosen[0].transmitter_id,
        embeddings=model.encode_records(chosen),
        source_message_ids=[rec.message_id for rec in chosen],
        created_at=max(rec.timestamp_s for rec in chosen),
    )
    return anchors, remaining


def score_message(w: Waveform, anchors: AnchorSet, model: FingerprintModel) -> float:
    """Mean angular distance between the message embedding and each anchor."""
    emb = model.encode(w)
    dists = pairwise_angular_distances(emb[None, :], anchors.embeddings)
    return float(dists.mean())


def decide(score: float, threshold: float) -> bool:
    """Accept (True) iff score <= threshold."""
    if threshold < 0:
        raise ConfigurationError(f"threshold must be >= 0, got {threshold}")
    return score <= threshold


def compute_roc(pos_scores, neg_scores) -> RocCurve:
    """Sweep all distinct scores (plus a low sentinel); TPR/FPR at <= t."""
    pos = _as_scores(pos_scores, "positive")
    neg = _as_scores(neg_scores, "negative")
    thresholds = np.unique(np.concatenate([pos, neg]))
    thresholds = np.concatenate([[thresholds[0] - 1.0], thresholds])
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tpr = np.searchsorted(pos_sorted, thresholds, side="right") / len(pos)
    fpr = np.searchsorted(neg_sorted, thresholds, side="right") / len(neg)
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, n_pos=len(pos), n_neg=len(neg))


def compute_auc(pos_scores, neg_scores) -> float:
    """Rank statistic: P(pos < neg) with ties counted half.

    Agrees with trapezoidal integration of the ROC curve.
    """
    pos = np.sort(_as_scores(pos_scores, "positive"))
    neg = np.sort(_as_scores(neg_scores, "negative"))
    hi = len(neg) - np.searchsorted(neg, pos, side="right")  # negatives > each pos
    ties = np.searchsorted(neg, pos, side="right") - np.searchsorted(neg, pos, side="left")
    return float((hi.sum() + 0.5 * ties.sum()) / (len(pos) * len(neg)))


def trapezoid_auc(curve: RocCurve) -> float:
    """Area under the (FPR, TPR) curve by trapezoidal integration."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


def compute_eer(curve: RocCurve) -> tuple[float, float]:
    """Crossing of FPR (rising) and FNR (falling); returns (eer, threshold).

    Empirical FPR/FNR are step functions, so the crossing usually happens at
    a jump: the EER is the midpoint (fpr + fnr) / 2 at the sweep point where
    |fpr - fnr| is smallest (first such point on ties), matching a
    brute-force fine-step threshold sweep.
    """
    gap = np.abs(curve.fpr - curve.fnr)
    k = int(np.argmin(gap))
    return float((curve.fpr[k] + curve.fnr[k]) / 2.0), float(curve.thresholds[k])


def threshold_table(
    pos_scores, neg_scores, tpr_targets: Iterable[float] = DEFAULT_TPR_TARGETS
) -> list[dict]:
    """Per target TPR: the smallest threshold achieving it and the resulting
    FPR. Rows are {tpr, fpr, threshold} with the achieved TPR."""
    pos = np.sort(_as_scores(pos_scores, "positive"))
    neg = np.sort(_as_scores(neg_scores, "negative"))
    rows = []
    for target in tpr_targets:
        if not 0.0 < target <= 1.0:
            raise ConfigurationError(f"TPR target must be in (0, 1], got {target}")
        k = math.ceil(target * len(pos))
        thr = float(pos[k - 1])
        tpr = float(np.searchsorted(pos, thr, side="right") / len(pos))
        fpr = float(np.searchsorted(neg, thr, side="right") / len(neg))
        rows.append({"tpr": tpr, "fpr": fpr, "threshold": thr})
    return rows


def _as_scores(scores, kind: str) -> np.ndarray:
    arr = np.asarray(list(scores) if not isinstance(scores, np.ndarray) else scores, dtype=np.float64)
    if arr.size == 0:
        raise ConfigurationError(f"{kind} score list is empty")
    return arr.ravel()


def evaluate_scores(pos_scores, neg_scores, scenario: str, anchors: int) -> tuple[MetricsReport, RocCurve]:
    """Bundle curve, AUC, EER, and the threshold table into a report."""
    curve = compute_roc(pos_scores, neg_scores)
    eer, eer_thr = compute_eer(curve)
    report = MetricsReport(
        scenario=scenario,
        anchors=anchors,
        auc=compute_auc(pos_scores, neg_scores),
        eer=eer,
        eer_threshold=eer_thr,
        n_pos=curve.n_pos,
        n_neg=curve.n_neg,
        threshold_table=threshold_table(pos_scores, neg_scores),
    )
    return report, curve


# --- scenario runners -----------------------------------------------------------


def _group_by_tx(records: Sequence[MessageRecord]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for idx, rec in enumerate(records):
        groups.setdefault(rec.transmitter_id, []).append(idx)
    return groups


def _mean_anchor_distance(emb: np.ndarray, anchor_emb: np.ndarray) -> np.ndarray:
    return pairwise_angular_distances(emb, anchor_emb).mean(axis=1)


def _anchor_splits(
    records: Sequence[MessageRecord], max_n: int, seed: int
) -> dict[int, tuple[list[int], list[int]]]:
    """Per transmitter: (anchor candidate indices, positive pool indices).

    Anchor sets for smaller counts are prefixes of the candidate list, so the
    positive pool is identical across anchor counts. Transmitters without
    max_n + 1 records are skipped.
    """
    splits = {}
    for tx, idxs in _group_by_tx(records).items():
        if len(idxs) < max_n + 1:
            continue
        perm = np.random.default_rng(np.random.SeedSequence([seed, 17, tx])).permutation(len(idxs))
        splits[tx] = ([idxs[i] for i in perm[:max_n]], [idxs[i] for i in perm[max_n:]])
    return splits


def _pooled_scores(
    records: Sequence[MessageRecord],
    embeddings: np.ndarray,
    splits: dict[int, tuple[list[int], list[int]]],
    anchor_counts: Sequence[int],
    seed: int,
    neg_ratio: int,
    anchor_override: dict[int, np.ndarray] | None = None,
    replay_map: dict[tuple[int, int], np.ndarray] | None = None,
):
    """Pool per-transmitter positive/negative scores for each anchor count.

    Positives: the transmitter's own pool messages scored against its
    anchors. Negatives: replayed twins of the positives when replay_map is
    given, otherwise other transmitters' pool messages subsampled to
    neg_ratio x positives. anchor_override swaps in externally built anchor
    embedding stacks (stale-anchor mode) while keeping the same pools.
    """
    groups = _group_by_tx(records)
    pos_scores: dict[int, list[np.ndarray]] = {n: [] for n in anchor_counts}
    neg_scores: dict[int, list[np.ndarray]] = {n: [] for n in anchor_counts}
    for tx in sorted(splits):
        anchor_idx, pos_pool = splits[tx]
        anchor_embs = (
            anchor_override[tx] if anchor_override is not None else embeddings[anchor_idx]
        )
        pos_emb = embeddings[pos_pool]
        if replay_map is not None:
            twins = []
            for i in pos_pool:
                key = (records[i].transmitter_id, records[i].message_id)
                if key not in replay_map:
                    raise ConfigurationError(
                        f"no replayed twin for transmitter {key[0]} message {key[1]}"
                    )
                twins.append(replay_map[key])
            neg_emb = np.stack(twins)
        else:
            other = [
                i for other_tx, other_idxs in groups.items() if other_tx != tx for i in other_idxs
            ]
            if not other:
                raise ConfigurationError("negatives require at least two transmitters")
            rng = np.random.default_rng(np.random.SeedSequence([seed, 29, tx]))
            quota = min(len(other), neg_ratio * len(pos_pool))
            take = rng.choice(len(other), size=quota, replace=False)
            neg_emb = embeddings[[other[i] for i in take]]

        for n in anchor_counts:
            sub = anchor_embs[:n]
            pos_scores[n].append(_mean_anchor_distance(pos_emb, sub))
            neg_scores[n].append(_mean_anchor_distance(neg_emb, sub))
    return (
        {n: np.concatenate(pos_scores[n]) for n in anchor_counts},
        {n: np.concatenate(neg_scores[n]) for n in anchor_counts},
    )


def run_scenario(
    scenario: str,
    model: FingerprintModel,
    records: Sequence[MessageRecord],
    replayed: Sequence[MessageRecord] | None = None,
    late_records: Sequence[MessageRecord] | None = None,
    anchor_counts: Sequence[int] = DEFAULT_ANCHOR_COUNTS,
    seed: int = 0,
    neg_ratio: int = 10,
) -> list[tuple[MetricsReport, RocCurve]]:
    """Run one evaluation scenario; one (report, curve) per anchor count.

    closed:  records = evaluation split; negatives are other transmitters.
    replay:  additionally replayed = attacker twins of the records.
    heldout: records = pool of transmitters excluded from training.
    timegap: records = training-era split, late_records = later dataset;
             emits two reports per anchor count (fresh then stale anchors),
             scored over the same positive pool.
    """
    if scenario not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {scenario!r}; pick one of {SCENARIOS}")
    anchor_counts = tuple(sorted(set(int(n) for n in anchor_counts)))
    if not anchor_counts or anchor_counts[0] < 1:
        raise ConfigurationError(f"anchor counts must be >= 1, got {anchor_counts}")
    max_n = anchor_counts[-1]

    if scenario == "timegap":
        if late_records is None:
            raise ConfigurationError("timegap scenario needs the late record set")
        late_emb = model.encode_records(late_records)
        era_emb = model.encode_records(records)
        splits = _anchor_splits(late_records, max_n, seed)
        # Stale anchors come from the training-era records of the same
        # transmitter; keep only transmitters eligible for both runs.
        era_groups = _group_by_tx(records)
        stale_anchors = {}
        for tx in list(splits):
            era_idxs = era_groups.get(tx, [])
            if len(era_idxs) < max_n:
                del splits[tx]
                continue
            perm = np.random.default_rng(np.random.SeedSequence([seed, 23, tx])).permutation(
                len(era_idxs)
            )
            stale_anchors[tx] = era_emb[[era_idxs[i] for i in perm[:max_n]]]
        if not splits:
            raise ConfigurationError(
                f"no transmitter has {max_n} anchors in both eras plus a positive pool"
            )
        fresh_pos, fresh_neg = _pooled_scores(
            late_records, late_emb, splits, anchor_counts, seed, neg_ratio
        )
        stale_pos, stale_neg = _pooled_scores(
            late_records, late_emb, splits, anchor_counts, seed, neg_ratio,
            anchor_override=stale_anchors,
        )
        results = []
        for n in anchor_counts:
            results.append(evaluate_scores(fresh_pos[n], fresh_neg[n], "timegap_fresh", n))
            results.append(evaluate_scores(stale_pos[n], stale_neg[n], "timegap_stale", n))
        return results

    embeddings = model.encode_records(records)
    splits = _anchor_splits(records, max_n, seed)
    if not splits:
        raise ConfigurationError(
            f"no transmitter has enough records for {max_n} anchors plus a positive pool"
        )
    replay_map = None
    if scenario == "replay":
        if replayed is None:
            raise ConfigurationError("replay scenario needs the replayed record set")
        twin_emb = model.encode_records(replayed)
        replay_map = {
            (rec.transmitter_id, rec.message_id): twin_emb[i] for i, rec in enumerate(replayed)
        }
    pos, neg = _pooled_scores(
        records, embeddings, splits, anchor_counts, seed, neg_ratio, replay_map=replay_map
    )
    return [evaluate_scores(pos[n], neg[n], scenario, n) for n in anchor_counts]
