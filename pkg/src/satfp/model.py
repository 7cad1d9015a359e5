"""Fingerprinting model: convolutional autoencoder with split I/Q branches,
angular-distance comparator, batch-hard triplet mining, SGD training, and a
binary checkpoint container.

The network is deliberately self-contained (kernels + layers in this
package): training is bit-reproducible given its seeds, checkpoints
round-trip exactly, and gradients are checkable against finite differences.
"""

from __future__ import annotations

import json
import logging
import struct
from contextlib import nullcontext
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .datapipe import BATCH_PER_TRANSMITTER, BATCH_TRANSMITTERS, Batch, batch_iter
from .errors import (
    BatchStructureError,
    CheckpointFormatError,
    ConfigurationError,
    DegenerateEmbeddingError,
    ShapeError,
    TrainingFailureError,
    UnsupportedVersionError,
)
from .layers import Conv1d, Dense, MaxPool1d, ReLU, Upsample1d
from .sigcore import Waveform

log = logging.getLogger("satfp")

#: Minimum embedding norm used when computing angular distances.
NORM_FLOOR = 1e-12

CHECKPOINT_MAGIC = b"SFPC"
CHECKPOINT_VERSION = 1

_DEFAULT_CHANNELS = (16, 32, 64)
_DEFAULT_KERNEL = 9
_POOL_CANDIDATES = (10, 8, 5, 4, 3, 2)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and training hyperparameters.

    conv_stages lists (channels, kernel_size, pool_factor) per encoder stage;
    the decoder mirrors them. input_length must survive the pool chain.
    """

    input_length: int = 320
    embedding_dim: int = 128
    conv_stages: tuple[tuple[int, int, int], ...] = ((16, 9, 4), (32, 9, 4), (64, 9, 4))
    margin: float = 0.2
    lambda_rec: float = 1.0
    lambda_trip: float = 5.0
    learning_rate: float = 3e-2
    momentum: float = 0.9
    epochs: int = 30
    pretrain_epochs: int = 0  # autoencoder-only epochs before joint training
    batch_seed: int = 0
    init_seed: int = 0
    dtype: str = "float32"
    deterministic: bool = True

    def __post_init__(self):
        if self.embedding_dim < 2:
            raise ConfigurationError(f"embedding_dim must be >= 2, got {self.embedding_dim}")
        if self.margin <= 0:
            raise ConfigurationError(f"margin must be > 0, got {self.margin}")
        if not self.conv_stages:
            raise ConfigurationError("need at least one conv stage")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")
        length = self.input_length
        for channels, kernel, pool in self.conv_stages:
            if channels < 1 or kernel % 2 != 1 or pool < 1:
                raise ConfigurationError(
                    f"bad conv stage ({channels}, {kernel}, {pool}): need channels >= 1, "
                    "odd kernel, pool >= 1"
                )
            if length % pool != 0:
                raise ConfigurationError(
                    f"input length {self.input_length} does not survive pool chain "
                    f"{[s[2] for s in self.conv_stages]} (stuck at {length} % {pool})"
                )
            length //= pool
        if length < 1:
            raise ConfigurationError("pooled length fell below 1")

    @property
    def pooled_length(self) -> int:
        length = self.input_length
        for _, _, pool in self.conv_stages:
            length //= pool
        return length

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def default_config(input_length: int = 320, embedding_dim: int = 128, **overrides) -> ModelConfig:
    """Standard three-stage config; pool factors auto-adjusted so the
    flattened feature count stays within 4x..64x the embedding dimension."""
    channels = _DEFAULT_CHANNELS
    kernel = _DEFAULT_KERNEL
    lo = max(1, -(-4 * embedding_dim // (2 * channels[-1])))  # ceil
    hi = max(lo, 64 * embedding_dim // (2 * channels[-1]))

    def pooled(pools):
        length = input_length
        for p in pools:
            if length % p != 0:
                return None
            length //= p
        return length

    pools = (4, 4, 4)
    final = pooled(pools)
    if final is None or not lo <= final <= hi:
        best = None
        for p1 in _POOL_CANDIDATES:
            for p2 in _POOL_CANDIDATES:
                for p3 in _POOL_CANDIDATES:
                    final = pooled((p1, p2, p3))
                    if final is None or not lo <= final <= hi:
                        continue
                    cand = (p1 * p2 * p3, (p1, p2, p3))
                    if best is None or cand[0] > best[0]:
                        best = cand
        if best is None:
            raise ConfigurationError(
                f"no pool chain fits input length {input_length}; pass conv_stages explicitly"
            )
        pools = best[1]
    stages = tuple((c, kernel, p) for c, p in zip(channels, pools))
    return ModelConfig(
        input_length=input_length,
        embedding_dim=embedding_dim,
        conv_stages=stages,
        **overrides,
    )


# --- embedding-space operations ----------------------------------------------


def angular_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cosine similarity; in [0, 2], symmetric, scale-invariant."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"embedding dimensions differ: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < NORM_FLOOR or nv < NORM_FLOOR:
        raise DegenerateEmbeddingError("cannot compare a zero-norm embedding")
    d = 1.0 - float(np.dot(u, v) / (nu * nv))
    return min(max(d, 0.0), 2.0)


def pairwise_angular_distances(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Distance matrix between embedding rows; zero-norm rows are floored,
    not rejected (training-time use)."""
    a = np.asarray(a, dtype=np.float64)
    ua = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), NORM_FLOOR)
    if b is None:
        ub = ua
    else:
        b = np.asarray(b, dtype=np.float64)
        ub = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), NORM_FLOOR)
    return np.clip(1.0 - ua @ ub.T, 0.0, 2.0)


def triplet_loss(a: np.ndarray, p: np.ndarray, n: np.ndarray, margin: float) -> float:
    """max(d(a,p) - d(a,n) + margin, 0)."""
    if margin <= 0:
        raise ConfigurationError(f"margin must be > 0, got {margin}")
    return max(angular_distance(a, p) - angular_distance(a, n) + margin, 0.0)


def mine_triplets(
    embeddings: np.ndarray, labels: np.ndarray, margin: float = 0.2
) -> list[tuple[int, int, int]]:
    """Batch-hard mining: per anchor, the farthest same-label and nearest
    different-label embedding. Requires the 8x4 batch structure; the margin
    argument is accepted for interface stability but batch-hard selection
    does not depend on it."""
    embeddings = np.asarray(embeddings)
    labels = np.asarray(labels)
    if embeddings.ndim != 2 or len(labels) != embeddings.shape[0]:
        raise BatchStructureError(
            f"embeddings {embeddings.shape} and labels {labels.shape} do not align"
        )
    uniq, counts = np.unique(labels, return_counts=True)
    if len(labels) != BATCH_TRANSMITTERS * BATCH_PER_TRANSMITTER or len(
        uniq
    ) != BATCH_TRANSMITTERS or set(counts.tolist()) != {BATCH_PER_TRANSMITTER}:
        raise BatchStructureError(
            f"expected {BATCH_TRANSMITTERS} labels x {BATCH_PER_TRANSMITTER} each, "
            f"got counts {dict(zip(uniq.tolist(), counts.tolist()))}"
        )
    dist = pairwise_angular_distances(embeddings)
    same = labels[:, None] == labels[None, :]
    triples = []
    for i in range(len(labels)):
        pos_mask = same[i].copy()
        pos_mask[i] = False
        neg_mask = ~same[i]
        pos_d = np.where(pos_mask, dist[i], -np.inf)
        neg_d = np.where(neg_mask, dist[i], np.inf)
        triples.append((i, int(np.argmax(pos_d)), int(np.argmin(neg_d))))
    return triples


def _triplet_loss_and_grad(
    emb: np.ndarray, triples: list[tuple[int, int, int]], margin: float
) -> tuple[float, np.ndarray]:
    """Mean triplet loss over the mined triples and its gradient w.r.t. the
    embedding rows (selection treated as constant)."""
    a = np.array([t[0] for t in triples])
    p = np.array([t[1] for t in triples])
    n = np.array([t[2] for t in triples])
    e = emb.astype(np.float64, copy=False)
    norms = np.maximum(np.linalg.norm(e, axis=1), NORM_FLOOR)
    unit = e / norms[:, None]

    cos_ap = np.sum(unit[a] * unit[p], axis=1)
    cos_an = np.sum(unit[a] * unit[n], axis=1)
    losses = (1.0 - cos_ap) - (1.0 - cos_an) + margin
    active = losses > 0.0
    loss = float(np.mean(np.maximum(losses, 0.0)))
    grad = np.zeros_like(e)
    if np.any(active):
        scale = 1.0 / len(triples)
        # d d(u,v)/du = -(v_hat - cos * u_hat) / ||u||
        ga_p = -(unit[p] - cos_ap[:, None] * unit[a]) / norms[a][:, None]
        gp = -(unit[a] - cos_ap[:, None] * unit[p]) / norms[p][:, None]
        ga_n = -(unit[n] - cos_an[:, None] * unit[a]) / norms[a][:, None]
        gn = -(unit[a] - cos_an[:, None] * unit[n]) / norms[n][:, None]
        act = np.where(active)[0]
        np.add.at(grad, a[act], scale * (ga_p[act] - ga_n[act]))
        np.add.at(grad, p[act], scale * gp[act])
        np.add.at(grad, n[act], scale * -gn[act])
    return loss, grad.astype(emb.dtype, copy=False)


# --- network ------------------------------------------------------------------


class _AutoencoderNet:
    """Split-branch conv autoencoder; parameters addressed by canonical names."""

    def __init__(self, config: ModelConfig):
        self.config = config
        stages = config.conv_stages
        self.branches = ("i", "q")
        self.enc_convs: dict[str, list[Conv1d]] = {}
        self.enc_pools: dict[str, list[MaxPool1d]] = {}
        self.dec_convs: dict[str, list[Conv1d]] = {}
        self.dec_ups: dict[str, list[Upsample1d]] = {}
        self.relu = ReLU()

        for br in self.branches:
            convs, pools = [], []
            in_ch = 1
            for channels, kernel, pool in stages:
                convs.append(Conv1d(in_ch, channels, kernel))
                pools.append(MaxPool1d(pool))
                in_ch = channels
            self.enc_convs[br] = convs
            self.enc_pools[br] = pools

        self.last_channels = stages[-1][0]
        self.flat_per_branch = self.last_channels * config.pooled_length
        flat = 2 * self.flat_per_branch
        self.embed = Dense(flat, config.embedding_dim)
        self.expand = Dense(config.embedding_dim, flat)

        rev = list(reversed(stages))
        for br in self.branches:
            convs, ups = [], []
            for s, (channels, kernel, pool) in enumerate(rev):
                out_ch = rev[s + 1][0] if s + 1 < len(rev) else 1
                ups.append(Upsample1d(pool))
                convs.append(Conv1d(channels, out_ch, kernel))
            self.dec_convs[br] = convs
            self.dec_ups[br] = ups

        # Canonical parameter order: encoder branches, embed, expand, decoder branches.
        self._named_layers: list[tuple[str, Conv1d | Dense]] = []
        for br in self.branches:
            for s, conv in enumerate(self.enc_convs[br]):
                self._named_layers.append((f"encoder.{br}.conv{s}", conv))
        self._named_layers.append(("encoder.embed", self.embed))
        self._named_layers.append(("decoder.expand", self.expand))
        for br in self.branches:
            for s, conv in enumerate(self.dec_convs[br]):
                self._named_layers.append((f"decoder.{br}.conv{s}", conv))

    def init_params(self, rng: np.random.Generator) -> None:
        for _, layer in self._named_layers:
            layer.init_params(rng, self.config.np_dtype)

    def zero_grads(self) -> None:
        for _, layer in self._named_layers:
            layer.zero_grads()

    def named_params(self):
        for name, layer in self._named_layers:
            for pname in sorted(layer.params):
                yield f"{name}.{pname}", layer, pname

    # -- encoder --

    def encode_forward(self, x: np.ndarray):
        n = x.shape[0]
        caches = {"branch": {}, "shapes": {}}
        flats = []
        for bi, br in enumerate(self.branches):
            h = np.ascontiguousarray(x[:, bi : bi + 1, :])
            stage_caches = []
            for conv, pool in zip(self.enc_convs[br], self.enc_pools[br]):
                h, c_conv = conv.forward(h)
                h, c_relu = self.relu.forward(h)
                h, c_pool = pool.forward(h)
                stage_caches.append((c_conv, c_relu, c_pool))
            caches["branch"][br] = stage_caches
            caches["shapes"][br] = h.shape
            flats.append(h.reshape(n, -1))
        flat = np.concatenate(flats, axis=1)
        emb, c_dense = self.embed.forward(flat)
        caches["dense"] = c_dense
        return emb, caches

    def encode_backward(self, grad_emb: np.ndarray, caches) -> np.ndarray:
        grad_flat = self.embed.backward(grad_emb, caches["dense"])
        n = grad_flat.shape[0]
        out = []
        for bi, br in enumerate(self.branches):
            g = grad_flat[:, bi * self.flat_per_branch : (bi + 1) * self.flat_per_branch]
            g = np.ascontiguousarray(g.reshape(caches["shapes"][br]))
            for conv, pool, (c_conv, c_relu, c_pool) in zip(
                reversed(self.enc_convs[br]),
                reversed(self.enc_pools[br]),
                reversed(caches["branch"][br]),
            ):
                g = pool.backward(g, c_pool)
                g = self.relu.backward(g, c_relu)
                g = conv.backward(g, c_conv)
            out.append(g)
        return np.concatenate(out, axis=1)

    # -- decoder --

    def decode_forward(self, emb: np.ndarray):
        n = emb.shape[0]
        caches = {}
        flat, c_dense = self.expand.forward(emb)
        flat, c_relu0 = self.relu.forward(flat)
        caches["dense"] = c_dense
        caches["relu0"] = c_relu0
        caches["branch"] = {}
        outs = []
        for bi, br in enumerate(self.branches):
            h = flat[:, bi * self.flat_per_branch : (bi + 1) * self.flat_per_branch]
            h = np.ascontiguousarray(h.reshape(n, self.last_channels, self.config.pooled_length))
            stage_caches = []
            n_stages = len(self.dec_convs[br])
            for s, (up, conv) in enumerate(zip(self.dec_ups[br], self.dec_convs[br])):
                h, c_up = up.forward(h)
                h, c_conv = conv.forward(h)
                if s + 1 < n_stages:
                    h, c_relu = self.relu.forward(h)
                else:
                    c_relu = None
                stage_caches.append((c_up, c_conv, c_relu))
            caches["branch"][br] = stage_caches
            outs.append(h)
        return np.concatenate(outs, axis=1), caches

    def decode_backward(self, grad_out: np.ndarray, caches) -> np.ndarray:
        n = grad_out.shape[0]
        grads_flat = []
        for bi, br in enumerate(self.branches):
            g = np.ascontiguousarray(grad_out[:, bi : bi + 1, :])
            for up, conv, (c_up, c_conv, c_relu) in zip(
                reversed(self.dec_ups[br]),
                reversed(self.dec_convs[br]),
                reversed(caches["branch"][br]),
            ):
                if c_relu is not None:
                    g = self.relu.backward(g, c_relu)
                g = conv.backward(g, c_conv)
                g = up.backward(g, c_up)
            grads_flat.append(g.reshape(n, -1))
        grad_flat = np.concatenate(grads_flat, axis=1)
        grad_flat = self.relu.backward(grad_flat, caches["relu0"])
        return self.expand.backward(grad_flat, caches["dense"])


# --- model --------------------------------------------------------------------


class FingerprintModel:
    """Config + parameters + training history; encode/decode entry points."""

    def __init__(self, config: ModelConfig, net: _AutoencoderNet, history: dict | None = None):
        self.config = config
        self.net = net
        self.history = history if history is not None else {}

    @classmethod
    def initialize(cls, config: ModelConfig) -> "FingerprintModel":
        net = _AutoencoderNet(config)
        net.init_params(np.random.default_rng(np.random.SeedSequence(config.init_seed)))
        return cls(config, net)

    # -- inference --

    def _check_length(self, length: int) -> None:
        if length != self.config.input_length:
            raise ShapeError(
                f"waveform length {length} does not match model input length "
                f"{self.config.input_length}"
            )

    def encode_array(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.config.np_dtype)
        if x.ndim != 3 or x.shape[1] != 2:
            raise ShapeError(f"expected (n, 2, length) array, got {x.shape}")
        self._check_length(x.shape[2])
        emb, _ = self.net.encode_forward(x)
        return emb

    def encode(self, w: Waveform) -> np.ndarray:
        self._check_length(len(w))
        x = np.stack([w.i, w.q])[None, :, :]
        return self.encode_array(x)[0]

    def encode_records(self, records, batch_size: int = 256) -> np.ndarray:
        out = []
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            x = np.empty(
                (len(chunk), 2, self.config.input_length), dtype=self.config.np_dtype
            )
            for row, rec in enumerate(chunk):
                self._check_length(len(rec.waveform))
                x[row, 0] = rec.waveform.i
                x[row, 1] = rec.waveform.q
            out.append(self.encode_array(x))
        return np.concatenate(out, axis=0) if out else np.empty((0, self.config.embedding_dim))

    def decode_array(self, emb: np.ndarray) -> np.ndarray:
        emb = np.asarray(emb, dtype=self.config.np_dtype)
        if emb.ndim != 2 or emb.shape[1] != self.config.embedding_dim:
            raise ShapeError(
                f"expected (n, {self.config.embedding_dim}) embeddings, got {emb.shape}"
            )
        xhat, _ = self.net.decode_forward(emb)
        return xhat

    def decode(self, emb: np.ndarray) -> Waveform:
        emb = np.asarray(emb, dtype=self.config.np_dtype)
        if emb.ndim != 1 or emb.shape[0] != self.config.embedding_dim:
            raise ShapeError(
                f"expected a {self.config.embedding_dim}-dim embedding, got {emb.shape}"
            )
        xhat = self.decode_array(emb[None, :])[0]
        return Waveform(i=xhat[0], q=xhat[1])

    def reconstruction_mse(self, records, batch_size: int = 256) -> float:
        """Mean squared reconstruction error over a record collection."""
        total = 0.0
        count = 0
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            x = np.empty((len(chunk), 2, self.config.input_length), dtype=self.config.np_dtype)
            for row, rec in enumerate(chunk):
                x[row, 0] = rec.waveform.i
                x[row, 1] = rec.waveform.q
            emb, _ = self.net.encode_forward(x)
            xhat, _ = self.net.decode_forward(emb)
            total += float(np.sum((xhat - x) ** 2))
            count += x.size
        return total / count if count else 0.0


def _loss_and_grads(
    model: FingerprintModel, x: np.ndarray, labels: np.ndarray, lambda_trip: float
) -> tuple[float, float, float]:
    """Forward + backward for one batch; returns (total, rec, trip) losses.

    Parameter gradients accumulate into the net; caller zeroes them first.
    """
    cfg = model.config
    net = model.net
    emb, enc_cache = net.encode_forward(x)
    xhat, dec_cache = net.decode_forward(emb)

    diff = xhat - x
    rec_loss = float(np.mean(diff**2))
    grad_emb = np.zeros_like(emb)
    if cfg.lambda_rec != 0.0:
        d_xhat = (cfg.lambda_rec * 2.0 / diff.size) * diff
        grad_emb += net.decode_backward(d_xhat.astype(cfg.np_dtype), dec_cache)

    trip_loss = 0.0
    if lambda_trip != 0.0:
        triples = mine_triplets(emb, labels, cfg.margin)
        trip_loss, d_emb_trip = _triplet_loss_and_grad(emb, triples, cfg.margin)
        grad_emb += lambda_trip * d_emb_trip

    net.encode_backward(grad_emb, enc_cache)
    total = cfg.lambda_rec * rec_loss + lambda_trip * trip_loss
    return total, rec_loss, trip_loss


def _batch_losses(model: FingerprintModel, batch: Batch, lambda_trip: float) -> tuple[float, float, float]:
    """Forward-only loss evaluation (validation)."""
    cfg = model.config
    x = batch.waveform_array(dtype=cfg.np_dtype)
    emb, _ = model.net.encode_forward(x)
    xhat, _ = model.net.decode_forward(emb)
    rec_loss = float(np.mean((xhat - x) ** 2))
    trip_loss = 0.0
    if lambda_trip != 0.0:
        triples = mine_triplets(emb, batch.labels, cfg.margin)
        trip_loss, _ = _triplet_loss_and_grad(emb, triples, cfg.margin)
    return cfg.lambda_rec * rec_loss + lambda_trip * trip_loss, rec_loss, trip_loss


def _epoch_seed(base: int, stream: int, epoch: int) -> int:
    return int(np.random.SeedSequence([base, stream, epoch]).generate_state(1, np.uint64)[0])


def train(
    config: ModelConfig,
    train_records,
    val_records=None,
) -> FingerprintModel:
    """Train the autoencoder + triplet objective with SGD and momentum.

    Deterministic given config seeds: batches, initialization, and updates
    are all derived from them, and BLAS is pinned to one thread while
    config.deterministic is set. Raises TrainingFailureError on divergence.
    A validation set too small to form a full batch is skipped with a
    warning and no validation losses are recorded.
    """
    if val_records:
        try:
            next(iter(_val_batches(val_records, config)))
        except ConfigurationError as exc:
            log.warning("validation set unusable, skipping validation losses: %s", exc)
            val_records = None
    model = FingerprintModel.initialize(config)
    net = model.net
    velocity = {name: np.zeros_like(layer.params[pname]) for name, layer, pname in net.named_params()}
    history: dict[str, list[float]] = {
        "train_total": [],
        "train_rec": [],
        "train_trip": [],
        "val_total": [],
        "val_rec": [],
        "val_trip": [],
    }

    guard = threadpool_limits(limits=1) if config.deterministic else nullcontext()
    with guard:
        for epoch in range(config.epochs):
            lambda_trip = 0.0 if epoch < config.pretrain_epochs else config.lambda_trip
            totals = np.zeros(3)
            n_batches = 0
            for batch in batch_iter(train_records, seed=_epoch_seed(config.batch_seed, 1, epoch)):
                net.zero_grads()
                x = batch.waveform_array(dtype=config.np_dtype)
                losses = _loss_and_grads(model, x, batch.labels, lambda_trip)
                if not all(np.isfinite(losses)):
                    raise TrainingFailureError(epoch, losses[0])
                for name, layer, pname in net.named_params():
                    v = velocity[name]
                    v *= config.momentum
                    v -= config.learning_rate * layer.grads[pname]
                    layer.params[pname] += v
                totals += losses
                n_batches += 1
            if n_batches == 0:
                raise ConfigurationError("training set yielded no batches")
            history["train_total"].append(totals[0] / n_batches)
            history["train_rec"].append(totals[1] / n_batches)
            history["train_trip"].append(totals[2] / n_batches)
            if not np.isfinite(history["train_total"][-1]):
                raise TrainingFailureError(epoch, history["train_total"][-1])

            if val_records:
                vtotals = np.zeros(3)
                v_batches = 0
                for batch in _val_batches(val_records, config):
                    vtotals += _batch_losses(model, batch, lambda_trip)
                    v_batches += 1
                if v_batches:
                    history["val_total"].append(vtotals[0] / v_batches)
                    history["val_rec"].append(vtotals[1] / v_batches)
                    history["val_trip"].append(vtotals[2] / v_batches)

    model.history = history
    return model


def _val_batches(val_records, config: ModelConfig):
    # Fixed seed: validation batches are identical across epochs.
    return batch_iter(val_records, seed=_epoch_seed(config.batch_seed, 2, 0))


# --- checkpoint container -------------------------------------------------------
#
# Layout (little-endian): magic "SFPC", u32 container version, u32 JSON length,
# JSON metadata {config, history, param_order}, u32 tensor count; per tensor:
# u16 name length, name bytes (UTF-8), u8 dtype code (0 = f32), u8 ndim,
# ndim x u32 dims, then the row-major f32 payload.

_DTYPE_CODES = {0: np.dtype("<f4")}


def save_checkpoint(model: FingerprintModel, path: str) -> None:
    """Serialize config, history, and parameters; f32 models only."""
    if model.config.dtype != "float32":
        raise ConfigurationError(
            "checkpoints store f32 payloads; float64 models are a testing mode "
            "and cannot be checkpointed"
        )
    names = [name for name, _, _ in model.net.named_params()]
    meta = {
        "config": _config_to_dict(model.config),
        "history": model.history,
        "param_order": names,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(names)))
        for name, layer, pname in model.net.named_params():
            arr = np.ascontiguousarray(layer.params[pname], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", 0, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _config_to_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d["conv_stages"] = [list(s) for s in config.conv_stages]
    return d


def _config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["conv_stages"] = tuple(tuple(s) for s in d["conv_stages"])
    return ModelConfig(**d)


def load_checkpoint(path: str) -> FingerprintModel:
    """Rebuild a model from a checkpoint; encode outputs match the saved
    model bit-exactly."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(
                f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}"
            )
        version, blob_len = _read_struct(fh, "<II", path)
        if version > CHECKPOINT_VERSION:
            raise UnsupportedVersionError(
                f"{path}: container version {version} is newer than supported "
                f"({CHECKPOINT_VERSION})"
            )
        blob = fh.read(blob_len)
        if len(blob) < blob_len:
            raise CheckpointFormatError(f"{path}: truncated metadata block")
        try:
            meta = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"{path}: corrupt metadata: {exc}") from exc
        config = _config_from_dict(meta["config"])
        model = FingerprintModel.initialize(config)
        model.history = meta.get("history", {})
        layers = {name: (layer, pname) for name, layer, pname in model.net.named_params()}
        (count,) = _read_struct(fh, "<I", path)
        if count != len(layers):
            raise CheckpointFormatError(
                f"{path}: tensor count {count} does not match architecture ({len(layers)})"
            )
        for _ in range(count):
            (name_len,) = _read_struct(fh, "<H", path)
            name = fh.read(name_len).decode("utf-8")
            code, ndim = _read_struct(fh, "<BB", path)
            if code not in _DTYPE_CODES:
                raise CheckpointFormatError(f"{path}: unknown dtype code {code}")
            shape = _read_struct(fh, f"<{ndim}I", path)
            if name not in layers:
                raise CheckpointFormatError(f"{path}: unexpected tensor {name!r}")
            layer, pname = layers[name]
            expected = layer.params[pname].shape
            if tuple(shape) != expected:
                raise CheckpointFormatError(
                    f"{path}: tensor {name!r} has shape {tuple(shape)}, expected {expected}"
                )
            n_items = int(np.prod(shape)) if shape else 1
            payload = fh.read(4 * n_items)
            if len(payload) < 4 * n_items:
                raise CheckpointFormatError(f"{path}: truncated payload for {name!r}")
            layer.params[pname] = (
                np.frombuffer(payload, dtype=_DTYPE_CODES[code]).reshape(shape).copy()
            )
    return model


def _read_struct(fh, fmt: str, path: str):
    size = struct.calcsize(fmt)
    raw = fh.read(size)
    if len(raw) < size:
        raise CheckpointFormatError(f"{path}: unexpected end of file")
    return struct.unpack(fmt, raw)
