"""SIQ1 persistence, splits, noise filtering, and batch construction."""

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satfp.datapipe import (
    Batch,
    batch_iter,
    exclude_labels,
    filter_by_noise,
    read_records,
    split_dataset,
    write_records,
)
from satfp.errors import (
    BatchStructureError,
    ConfigurationError,
    CorruptionError,
    FormatError,
    MalformedInputError,
)
from satfp.sigcore import HeaderSpec, Waveform
from satfp.synth import ChannelParams, GenerationConfig, MessageRecord, generate_dataset


def _make_records(n_tx=8, per_tx=10, seed=0, osr=4):
    return generate_dataset(
        GenerationConfig(
            n_transmitters=n_tx,
            messages_per_tx=per_tx,
            seed=seed,
            channel=ChannelParams(snr_db=20.0),
            header=HeaderSpec(oversampling=osr),
        )
    )


def _random_record(rng, tx, msg, n_samples, with_score=True):
    return MessageRecord(
        transmitter_id=tx,
        message_id=msg,
        timestamp_s=float(rng.uniform(0, 1e6)),
        snr_db=float(rng.uniform(-5, 40)),
        noise_score=float(rng.uniform(0, 1)) if with_score else None,
        waveform=Waveform(
            i=rng.standard_normal(n_samples).astype(np.float32),
            q=rng.standard_normal(n_samples).astype(np.float32),
        ),
    )


def _assert_records_equal(a, b):
    assert a.transmitter_id == b.transmitter_id
    assert a.message_id == b.message_id
    assert a.timestamp_s == b.timestamp_s
    assert np.float32(a.snr_db) == np.float32(b.snr_db)
    if a.noise_score is None:
        assert b.noise_score is None
    else:
        assert np.float32(a.noise_score) == np.float32(b.noise_score)
    np.testing.assert_array_equal(a.waveform.i.astype(np.float32), b.waveform.i)
    np.testing.assert_array_equal(a.waveform.q.astype(np.float32), b.waveform.q)


class TestSiqRoundTrip:
    def test_generated_corpus_bit_exact(self, tmp_path):
        records = _make_records()
        path = tmp_path / "data.siq"
        assert write_records(records, str(path)) == 80
        back = list(read_records(str(path)))
        assert len(back) == 80
        for a, b in zip(records, back):
            _assert_records_equal(a, b)

    def test_rewrite_is_byte_identical(self, tmp_path):
        records = _make_records(n_tx=2, per_tx=3)
        p1, p2 = tmp_path / "a.siq", tmp_path / "b.siq"
        write_records(records, str(p1))
        write_records(list(read_records(str(p1))), str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_file_with_header(self, tmp_path):
        path = tmp_path / "empty.siq"
        assert write_records([], str(path)) == 0
        assert list(read_records(str(path))) == []

    def test_unset_noise_score_round_trips_as_none(self, tmp_path, rng):
        rec = _random_record(rng, 1, 2, 16, with_score=False)
        path = tmp_path / "one.siq"
        write_records([rec], str(path))
        (back,) = read_records(str(path))
        assert back.noise_score is None

    @given(data=st.data())
    @settings(max_examples=25, deadline=None)
    def test_random_records_round_trip(self, data, tmp_path_factory):
        seed = data.draw(st.integers(min_value=0, max_value=2**31 - 1))
        gen = np.random.default_rng(seed)
        n = data.draw(st.integers(min_value=1, max_value=6))
        records = [
            _random_record(
                gen,
                tx=int(gen.integers(0, 5)),
                msg=int(gen.integers(0, 1000)),
                n_samples=int(gen.integers(1, 64)),
                with_score=bool(gen.integers(0, 2)),
            )
            for _ in range(n)
        ]
        path = tmp_path_factory.mktemp("siq") / "r.siq"
        write_records(records, str(path))
        back = list(read_records(str(path)))
        assert len(back) == n
        for a, b in zip(records, back):
            _assert_records_equal(a, b)


class TestSiqErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.siq"
        path.write_bytes(b"NOPE" + struct.pack("<I", 1))
        with pytest.raises(FormatError):
            list(read_records(str(path)))

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.siq"
        path.write_bytes(b"SIQ1" + struct.pack("<I", 99))
        with pytest.raises(FormatError):
            list(read_records(str(path)))

    def test_too_short_for_header(self, tmp_path):
        path = tmp_path / "tiny.siq"
        path.write_bytes(b"SI")
        with pytest.raises(FormatError):
            list(read_records(str(path)))

    def test_truncation_reports_record_offset(self, tmp_path):
        records = _make_records(n_tx=2, per_tx=2)
        path = tmp_path / "full.siq"
        write_records(records, str(path))
        blob = path.read_bytes()
        record_bytes = 28 + 4 + 8 * len(records[0].waveform)
        second_record_offset = 8 + record_bytes
        for cut in (second_record_offset + 10, second_record_offset + 40):
            trunc = tmp_path / f"cut{cut}.siq"
            trunc.write_bytes(blob[:cut])
            with pytest.raises(CorruptionError) as exc:
                list(read_records(str(trunc)))
            assert exc.value.offset == second_record_offset
            assert str(second_record_offset) in str(exc.value)


class TestSplitDataset:
    def test_ratio_sizes(self):
        records = _make_records(n_tx=10, per_tx=100, osr=1)
        split = split_dataset(records, (0.9, 0.05, 0.05), seed=0)
        assert (len(split.train), len(split.validation), len(split.test)) == (900, 50, 50)

    def test_disjoint_and_exhaustive(self):
        records = _make_records(n_tx=4, per_tx=25, osr=1)
        split = split_dataset(records, (0.5, 0.3, 0.2), seed=3)
        ids = lambda rs: {(r.transmitter_id, r.message_id) for r in rs}
        train, val, test = ids(split.train), ids(split.validation), ids(split.test)
        assert not (train & val or train & test or val & test)
        assert train | val | test == ids(records)

    def test_deterministic(self):
        records = _make_records(n_tx=4, per_tx=10, osr=1)
        a = split_dataset(records, seed=42)
        b = split_dataset(records, seed=42)
        assert [r.message_id for r in a.train] == [r.message_id for r in b.train]

    def test_largest_remainder_on_seven(self):
        records = _make_records(n_tx=7, per_tx=1, osr=1)
        split = split_dataset(records, (0.9, 0.05, 0.05), seed=0)
        # quotas 6.3/0.35/0.35 -> floors 6/0/0; the leftover goes to the
        # first of the tied larger remainders (validation).
        assert (len(split.train), len(split.validation), len(split.test)) == (6, 1, 0)

    def test_bad_ratios(self):
        records = _make_records(n_tx=2, per_tx=2, osr=1)
        with pytest.raises(ConfigurationError):
            split_dataset(records, (0.5, 0.5, 0.5))
        with pytest.raises(ConfigurationError):
            split_dataset(records, (1.0, -0.5, 0.5))


class TestFilterByNoise:
    def test_keep_all_is_identity(self):
        records = _make_records(n_tx=2, per_tx=5, osr=4)
        assert filter_by_noise(records, 1.0) == records

    def test_kept_scores_dominate_dropped(self):
        records = _make_records(n_tx=10, per_tx=10, osr=4)
        kept = filter_by_noise(records, 0.3)
        assert len(kept) == 30
        kept_ids = {(r.transmitter_id, r.message_id) for r in kept}
        dropped = [r for r in records if (r.transmitter_id, r.message_id) not in kept_ids]
        assert max(r.noise_score for r in kept) <= min(r.noise_score for r in dropped)

    def test_tie_break_order(self, rng):
        records = [_random_record(rng, tx=i, msg=i, n_samples=4) for i in range(10)]
        for rec in records:
            rec.noise_score = 0.5
        kept = filter_by_noise(records, 0.5)
        assert [r.transmitter_id for r in kept] == [0, 1, 2, 3, 4]

    def test_size_is_ceil(self, rng):
        records = [_random_record(rng, tx=0, msg=i, n_samples=4) for i in range(7)]
        assert len(filter_by_noise(records, 0.5)) == math.ceil(0.5 * 7)

    def test_unset_scores_rejected(self, rng):
        records = [_random_record(rng, 0, 0, 4, with_score=False)]
        with pytest.raises(MalformedInputError):
            filter_by_noise(records, 0.5)

    def test_bad_fraction(self, rng):
        records = [_random_record(rng, 0, 0, 4)]
        with pytest.raises(ConfigurationError):
            filter_by_noise(records, 0.0)


class TestBatchIter:
    def test_exact_fit_single_batch(self):
        records = _make_records(n_tx=8, per_tx=4, osr=1)
        batches = list(batch_iter(records, seed=0))
        assert len(batches) == 1
        got = {(r.transmitter_id, r.message_id) for r in batches[0].records}
        assert got == {(r.transmitter_id, r.message_id) for r in records}

    def test_full_epoch_coverage_16x8(self):
        records = _make_records(n_tx=16, per_tx=8, osr=1)
        batches = list(batch_iter(records, seed=5))
        assert len(batches) == 4
        seen = []
        for batch in batches:
            labels = batch.labels
            assert len(set(labels.tolist())) == 8
            seen.extend((r.transmitter_id, r.message_id) for r in batch.records)
        assert len(seen) == len(set(seen)) == 128

    def test_no_repeats_within_epoch(self):
        records = _make_records(n_tx=9, per_tx=7, osr=1)
        seen = set()
        for batch in batch_iter(records, seed=1):
            for rec in batch.records:
                key = (rec.transmitter_id, rec.message_id)
                assert key not in seen
                seen.add(key)

    def test_deterministic(self):
        records = _make_records(n_tx=10, per_tx=6, osr=1)
        a = [[r.message_id for r in b.records] for b in batch_iter(records, seed=3)]
        b = [[r.message_id for r in b.records] for b in batch_iter(records, seed=3)]
        assert a == b

    def test_epochs_vary(self):
        records = _make_records(n_tx=10, per_tx=6, osr=1)
        batches = list(batch_iter(records, seed=3, epochs=2))
        half = len(batches) // 2
        first = [[r.message_id for r in b.records] for b in batches[:half]]
        second = [[r.message_id for r in b.records] for b in batches[half:]]
        assert first != second

    def test_too_few_transmitters(self):
        records = _make_records(n_tx=7, per_tx=5, osr=1)
        with pytest.raises(ConfigurationError):
            next(batch_iter(records, seed=0))

    def test_deficient_labels_listed(self, rng):
        records = [_random_record(rng, tx, m, 4) for tx in range(8) for m in range(4)]
        records = records[:-1]  # transmitter 7 now has only 3 records
        with pytest.raises(ConfigurationError) as exc:
            next(batch_iter(records, seed=0))
        assert "7" in str(exc.value)

    def test_batch_structure_enforced(self, rng):
        records = [_random_record(rng, tx=0, msg=m, n_samples=4) for m in range(32)]
        with pytest.raises(BatchStructureError):
            Batch(records=records)

    def test_waveform_array_layout(self):
        records = _make_records(n_tx=8, per_tx=4, osr=4)
        batch = next(batch_iter(records, seed=0))
        arr = batch.waveform_array()
        assert arr.shape == (32, 2, 32)
        assert arr.dtype == np.float32
        np.testing.assert_array_equal(arr[0, 0], batch.records[0].waveform.i)
        np.testing.assert_array_equal(arr[0, 1], batch.records[0].waveform.q)


class TestExcludeLabels:
    def test_partition(self):
        records = _make_records(n_tx=5, per_tx=3, osr=1)
        kept, pool = exclude_labels(records, [1, 3])
        assert {r.transmitter_id for r in kept} == {0, 2, 4}
        assert {r.transmitter_id for r in pool} == {1, 3}
        assert len(kept) + len(pool) == len(records)
