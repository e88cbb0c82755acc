"""SAN-style VQA model: conv image encoder, LSTM question encoder,
single-stack soft attention over the region grid, and a linear answer
classifier. Parameters live in a flat name -> Tensor dict so they can
be checkpointed and swept generically.

Checkpoint format "ATCK1" (little-endian): magic, u32 section count,
then name-sorted sections of (u32 name_len, utf8 name, u32 rank,
u32 extents, f64 row-major payload).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

CKPT_MAGIC = b"ATCK1"
EMBED_DIM = 16
_LSTM_GATES = ("i", "f", "g", "o")


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


@dataclass(frozen=True)
class VqaModelConfig:
    image_size: int = 28
    region_grid: int = 7
    feature_dim: int = 32
    question_vocab: int = 6
    answer_classes: int = 12
    recurrent_hidden: int = 32

    def __post_init__(self):
        if self.image_size % 4 != 0:
            raise ValueError("image_size must be divisible by 4 (two stride-2 pools)")
        if self.conv_extent < self.region_grid:
            raise ValueError(
                f"encoder extent {self.conv_extent} smaller than region grid "
                f"{self.region_grid}"
            )
        if self.recurrent_hidden != self.feature_dim:
            raise ValueError("recurrent hidden size must equal feature_dim (fused by addition)")
        if min(self.feature_dim, self.question_vocab, self.answer_classes) < 2:
            raise ValueError("feature_dim, vocab and classes must each be at least 2")

    @property
    def conv_extent(self):
        return self.image_size // 4

    @property
    def cells(self):
        return self.region_grid * self.region_grid

    @property
    def conv_channels(self):
        d = self.feature_dim
        return (max(2, d // 2), max(3, (3 * d) // 4), d)


@dataclass
class FeatureBundle:
    g_i: Tensor  # (B, G, G, d) region features
    g_q: Tensor  # (B, d) question feature
    alpha: Tensor  # (B, G*G) attention weights, rows on the simplex
    g_f: Tensor  # (B, d) fused attended feature
    conv_act: Tensor  # (B, E, E, d) retained last conv activation


def init_params(config, seed):
    """Seed-deterministic parameter dict; all tensors require grad."""
    rng = np.random.default_rng([seed, 0x5EED])
    d = config.feature_dim
    c1, c2, c3 = config.conv_channels
    h = config.recurrent_hidden

    def norm(shape, fan_in):
        return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    params = {
        "conv1.w": norm((3, 3, 3, c1), 27),
        "conv1.b": zeros(c1),
        "conv2.w": norm((3, 3, c1, c2), 9 * c1),
        "conv2.b": zeros(c2),
        "conv3.w": norm((3, 3, c2, c3), 9 * c2),
        "conv3.b": zeros(c3),
        "embed.w": norm((config.question_vocab, EMBED_DIM), EMBED_DIM),
        "attn.wi": norm((d, d), d),
        "attn.wq": norm((d, d), d),
        "attn.v": norm((d, 1), d),
        "cls.w": norm((d, config.answer_classes), d),
        "cls.b": zeros(config.answer_classes),
    }
    for gate in _LSTM_GATES:
        params[f"lstm.wx{gate}"] = norm((EMBED_DIM, h), EMBED_DIM)
        params[f"lstm.wh{gate}"] = norm((h, h), h)
        params[f"lstm.b{gate}"] = zeros(h)
    return params


def _mean_pool2(x):
    b, hh, ww, c = x.shape
    y = T.reshape(x, (b, hh // 2, 2, ww // 2, 2, c))
    return T.tmean(y, axis=(2, 4))


def _pool_matrix(src, dst):
    # adaptive mean pooling: output i averages source window [i*src//dst, ceil((i+1)*src/dst))
    m = np.zeros((dst, src))
    for i in range(dst):
        a = (i * src) // dst
        b = -(-((i + 1) * src) // dst)
        m[i, a:b] = 1.0 / (b - a)
    return m


def _pool_axis(x, mat):
    # contract axis 1 of (B, E, *, C) against mat (G, E)
    b, e = x.shape[0], x.shape[1]
    rest = x.shape[2:]
    g = mat.shape[0]
    moved = T.transpose(x, (1, 0) + tuple(range(2, x.data.ndim)))
    flat = T.reshape(moved, (e, -1))
    pooled = T.matmul(Tensor(mat), flat)
    back = T.reshape(pooled, (g, b) + rest)
    return T.transpose(back, (1, 0) + tuple(range(2, x.data.ndim)))


def _region_pool(x, grid):
    extent = x.shape[1]
    if extent == grid:
        return x
    mat = _pool_matrix(extent, grid)
    rows = _pool_axis(x, mat)  # (B, G, E, C)
    swapped = T.transpose(rows, (0, 2, 1, 3))
    cols = _pool_axis(swapped, mat)  # (B, G, G, C) with axes swapped
    return T.transpose(cols, (0, 2, 1, 3))


def encode_image(config, params, images):
    """Three 3x3 relu convs with two stride-2 mean pools, then region pooling.

    Returns (g_i, conv_act): the (B, G, G, d) region grid and the last
    conv activation retained for explanation maps.
    """
    imgs = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
    if imgs.data.ndim != 4 or imgs.shape[1:] != (config.image_size, config.image_size, 3):
        raise ShapeError(
            f"expected images (B, {config.image_size}, {config.image_size}, 3), "
            f"got {imgs.shape}"
        )
    x = T.relu(T.conv2d(imgs, params["conv1.w"], pad=1) + params["conv1.b"])
    x = _mean_pool2(x)
    x = T.relu(T.conv2d(x, params["conv2.w"], pad=1) + params["conv2.b"])
    x = _mean_pool2(x)
    conv_act = T.relu(T.conv2d(x, params["conv3.w"], pad=1) + params["conv3.b"])
    g_i = _region_pool(conv_act, config.region_grid)
    return g_i, conv_act


def encode_question(config, params, tokens):
    """Final LSTM hidden state over the embedded token sequence."""
    ids = np.asarray(tokens)
    if ids.ndim != 2 or ids.shape[1] < 1:
        raise ValueError(f"expected token ids (B, L>=1), got shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= config.question_vocab:
        raise ValueError(
            f"token ids must lie in [0, {config.question_vocab}), "
            f"got range [{ids.min()}, {ids.max()}]"
        )
    b, length = ids.shape
    hdim = config.recurrent_hidden
    h = Tensor(np.zeros((b, hdim)))
    c = Tensor(np.zeros((b, hdim)))
    for t in range(length):
        x = T.embedding(params["embed.w"], ids[:, t])
        gates = {}
        for gate in _LSTM_GATES:
            pre = (
                T.matmul(x, params[f"lstm.wx{gate}"])
                + T.matmul(h, params[f"lstm.wh{gate}"])
                + params[f"lstm.b{gate}"]
            )
            gates[gate] = T.tanh(pre) if gate == "g" else T.sigmoid(pre)
        c = gates["f"] * c + gates["i"] * gates["g"]
        h = gates["o"] * T.tanh(c)
    return h


def attend(config, params, g_i, g_q):
    """Soft attention: alpha = softmax(v . tanh(W_i g_i + W_q g_q)), g_f = sum alpha g_i + g_q."""
    b = g_i.shape[0]
    d = config.feature_dim
    k = config.cells
    cells = T.reshape(g_i, (b * k, d))
    img_part = T.reshape(T.matmul(cells, params["attn.wi"]), (b, k, d))
    q_part = T.reshape(T.matmul(g_q, params["attn.wq"]), (b, 1, d))
    scores = T.matmul(T.reshape(T.tanh(img_part + q_part), (b * k, d)), params["attn.v"])
    alpha = T.softmax(T.reshape(scores, (b, k)))
    weighted = T.reshape(alpha, (b, k, 1)) * T.reshape(g_i, (b, k, d))
    g_f = T.tsum(weighted, axis=1) + g_q
    return alpha, g_f


def answer_logits(params, g_f):
    return T.matmul(g_f, params["cls.w"]) + params["cls.b"]


def log_softmax(logits):
    # constant shift keeps exp in range without changing value or gradient
    shift = Tensor(np.max(logits.data, axis=-1, keepdims=True))
    z = logits - shift
    return z - T.log(T.tsum(T.exp(z), axis=-1, keepdims=True))


def classify(params, g_f):
    """Log-probabilities over answer classes."""
    return log_softmax(answer_logits(params, g_f))


def cross_entropy(logp, labels):
    """Mean negative log-likelihood of the integer labels."""
    lbl = np.asarray(labels)
    b, c = logp.shape
    if lbl.shape != (b,):
        raise ShapeError(f"labels shape {lbl.shape} does not match batch {b}")
    onehot = np.zeros((b, c))
    onehot[np.arange(b), lbl] = 1.0
    return -T.tsum(logp * Tensor(onehot)) * (1.0 / b)


def forward(config, params, images, questions):
    g_i, conv_act = encode_image(config, params, images)
    g_q = encode_question(config, params, questions)
    alpha, g_f = attend(config, params, g_i, g_q)
    return FeatureBundle(g_i=g_i, g_q=g_q, alpha=alpha, g_f=g_f, conv_act=conv_act)


def save_checkpoint(path, arrays):
    """Write a name-sorted ATCK1 checkpoint; identical state gives identical bytes."""
    parts = [CKPT_MAGIC, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        data = np.ascontiguousarray(
            arrays[name].data if isinstance(arrays[name], Tensor) else arrays[name],
            dtype="<f8",
        )
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def _ck_take(buf, offset, nbytes, what):
    if offset + nbytes > len(buf):
        raise CheckpointError(
            f"truncated checkpoint: needed {nbytes} bytes for {what} at byte "
            f"{offset}, file has {len(buf)}"
        )
    return buf[offset:offset + nbytes], offset + nbytes


def load_checkpoint(path):
    """Read an ATCK1 checkpoint back into a name -> float64 array dict."""
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0
    magic, off = _ck_take(buf, off, len(CKPT_MAGIC), "magic")
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    nraw, off = _ck_take(buf, off, 4, "section count")
    count = struct.unpack("<I", nraw)[0]
    arrays = {}
    for _ in range(count):
        lraw, off = _ck_take(buf, off, 4, "name length")
        nlen = struct.unpack("<I", lraw)[0]
        name_raw, off = _ck_take(buf, off, nlen, "name")
        name = name_raw.decode("utf-8")
        rraw, off = _ck_take(buf, off, 4, "rank")
        rank = struct.unpack("<I", rraw)[0]
        eraw, off = _ck_take(buf, off, 4 * rank, "extents")
        extents = struct.unpack(f"<{rank}I", eraw)
        n_items = int(np.prod(extents, dtype=np.int64)) if rank else 1
        praw, off = _ck_take(buf, off, 8 * n_items, f"payload of {name}")
        arrays[name] = np.frombuffer(praw, dtype="<f8").reshape(extents).copy()
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes after last section")
    return arrays
