import numpy as np
import pytest

from satfp import synth
from satfp.sigcore import HeaderSpec


@pytest.fixture(scope="session")
def toy_records():
    """8 transmitters x 20 messages at osr 40, moderate impairments and noise."""
    gen = synth.GenerationConfig(
        n_transmitters=8,
        messages_per_tx=20,
        severity=0.5,
        channel=synth.ChannelParams(snr_db=25.0),
        snr_spread_db=8.0,
        seed=7,
    )
    return synth.generate_dataset(gen)


@pytest.fixture(scope="session")
def toy_split(toy_records):
    """Stratified 16/4 per-transmitter train/val slices of the toy corpus."""
    by_tx: dict[int, list] = {}
    for rec in toy_records:
        by_tx.setdefault(rec.transmitter_id, []).append(rec)
    train = [r for recs in by_tx.values() for r in recs[:16]]
    val = [r for recs in by_tx.values() for r in recs[16:]]
    return train, val


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def header40():
    return HeaderSpec(oversampling=40)
