"""Shared velocity network: a small convolutional net with FiLM conditioning.

One parameter set serves every stage. Each hidden 3x3 convolution is followed
by a per-channel affine modulation (scale, shift) computed from the summed
embedding of rescaled time, feature-map resolution, and class label, then a
SiLU nonlinearity; the final convolution is linear and zero-initialized so
the untrained net predicts zero velocity. The backward pass is hand-written
and checked coordinate-by-coordinate against central finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .coupling import CouplingSample
from .tensors import ImageTensor

CHECKPOINT_MAGIC = b"CDCM"
CHECKPOINT_VERSION = 1

NULL_CONDITION_ROW = -1  # class_table's last row is the null token


@dataclass
class VelocityModel:
    """Network parameters plus the conditioning tables.

    Parameter arrays in canonical (checkpoint) order: for each conv layer its
    kernel (3, 3, in_ch, out_ch) then bias; for each hidden layer its FiLM
    weight (embed_dim, 2*out_ch) then bias; finally the class table
    (num_classes + 1, embed_dim) whose last row is the null token.
    """

    channels: int
    hidden_channels: int
    depth: int
    embed_dim: int
    num_classes: int
    base_height: int
    conv_w: list[np.ndarray]
    conv_b: list[np.ndarray]
    film_w: list[np.ndarray]
    film_b: list[np.ndarray]
    class_table: np.ndarray

    def param_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.conv_w, self.conv_b):
            out.extend([w, b])
        for w, b in zip(self.film_w, self.film_b):
            out.extend([w, b])
        out.append(self.class_table)
        return out

    def num_params(self) -> int:
        return sum(a.size for a in self.param_arrays())

    def copy(self) -> "VelocityModel":
        return replace(
            self,
            conv_w=[w.copy() for w in self.conv_w],
            conv_b=[b.copy() for b in self.conv_b],
            film_w=[w.copy() for w in self.film_w],
            film_b=[b.copy() for b in self.film_b],
            class_table=self.class_table.copy(),
        )

    def astype(self, dtype) -> "VelocityModel":
        return replace(
            self,
            conv_w=[w.astype(dtype) for w in self.conv_w],
            conv_b=[b.astype(dtype) for b in self.conv_b],
            film_w=[w.astype(dtype) for w in self.film_w],
            film_b=[b.astype(dtype) for b in self.film_b],
            class_table=self.class_table.astype(dtype),
        )

    @property
    def dtype(self):
        return self.conv_w[0].dtype

    def resolution_of(self, level: int) -> int:
        if level < 1:
            raise ValueError(f"level must be >= 1, got {level}")
        return self.base_height * 2 ** (level - 1)


def init_velocity_model(
    channels: int,
    num_classes: int,
    base_height: int,
    hidden_channels: int = 64,
    depth: int = 6,
    embed_dim: int = 64,
    rng: Optional[np.random.Generator] = None,
) -> VelocityModel:
    """He-initialized kernels, zero final layer, identity FiLM at start."""
    if depth < 2:
        raise ValueError(f"depth must be >= 2, got {depth}")
    if embed_dim % 2:
        raise ValueError(f"embed_dim must be even, got {embed_dim}")
    rng = rng or np.random.default_rng(0)
    widths = [channels] + [hidden_channels] * (depth - 1) + [channels]
    conv_w, conv_b, film_w, film_b = [], [], [], []
    for l in range(depth):
        cin, cout = widths[l], widths[l + 1]
        if l == depth - 1:
            w = np.zeros((3, 3, cin, cout), np.float32)
        else:
            w = rng.standard_normal((3, 3, cin, cout)).astype(np.float32)
            w *= np.sqrt(2.0 / (9 * cin)).astype(np.float32)
        conv_w.append(w)
        conv_b.append(np.zeros(cout, np.float32))
        if l < depth - 1:
            fw = 0.02 * rng.standard_normal((embed_dim, 2 * cout)).astype(np.float32)
            fb = np.zeros(2 * cout, np.float32)
            fb[:cout] = 1.0  # scale part starts at identity
            film_w.append(fw)
            film_b.append(fb)
    table = 0.5 * rng.standard_normal((num_classes + 1, embed_dim)).astype(np.float32)
    return VelocityModel(
        channels=channels,
        hidden_channels=hidden_channels,
        depth=depth,
        embed_dim=embed_dim,
        num_classes=num_classes,
        base_height=base_height,
        conv_w=conv_w,
        conv_b=conv_b,
        film_w=film_w,
        film_b=film_b,
        class_table=table,
    )


# ---------------------------------------------------------------------------
# Conditioning embeddings
# ---------------------------------------------------------------------------


def sinusoidal_features(values: np.ndarray, dim: int, dtype=np.float32) -> np.ndarray:
    """Interleaved (sin, cos) features at frequencies 2^j, j = 0..dim/2-1."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    freqs = 2.0 ** np.arange(dim // 2)
    angles = v[:, None] * freqs[None, :]
    out = np.empty((v.size, dim), dtype=dtype)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def _condition_rows(model: VelocityModel, conditions: Sequence[Optional[int]]) -> np.ndarray:
    rows = np.empty(len(conditions), dtype=np.intp)
    for i, c in enumerate(conditions):
        if c is None:
            rows[i] = model.num_classes
        else:
            if not 0 <= int(c) < model.num_classes:
                raise ValueError(f"unknown class label {c}")
            rows[i] = int(c)
    return rows


def embed_batch(
    model: VelocityModel,
    taus: np.ndarray,
    levels: Sequence[int],
    conditions: Sequence[Optional[int]],
) -> tuple[np.ndarray, np.ndarray]:
    """Summed embedding for a batch; also returns the class-table rows used."""
    dtype = model.dtype
    res = np.array([model.resolution_of(k) for k in levels], dtype=np.float64)
    e = sinusoidal_features(np.asarray(taus), model.embed_dim, dtype)
    e = e + sinusoidal_features(res, model.embed_dim, dtype)
    rows = _condition_rows(model, conditions)
    e = e + model.class_table[rows]
    return e, rows


def embed(
    model: VelocityModel, tau: float, level: int, condition: Optional[int] = None
) -> np.ndarray:
    """Embedding vector for one (tau, level, condition) triple."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    e, _ = embed_batch(model, np.array([tau]), [level], [condition])
    return e[0]


# ---------------------------------------------------------------------------
# Convolution kernels (channels-last internally, 9 shifted matmuls)
# ---------------------------------------------------------------------------


def _conv_forward(x: np.ndarray, w9: np.ndarray, b: np.ndarray):
    """Same-padded 3x3 convolution on (B, H, W, C) input."""
    bsz, h, w, cin = x.shape
    cout = w9.shape[3]
    xp = np.zeros((bsz, h + 2, w + 2, cin), x.dtype)
    xp[:, 1 : h + 1, 1 : w + 1, :] = x
    out = None
    for di in range(3):
        for dj in range(3):
            patch = xp[:, di : di + h, dj : dj + w, :].reshape(-1, cin)
            term = patch @ w9[di, dj]
            out = term if out is None else out + term
    out += b
    return out.reshape(bsz, h, w, cout), xp


def _conv_backward(dout: np.ndarray, xp: np.ndarray, w9: np.ndarray):
    bsz, hp, wp, cin = xp.shape
    h, w = hp - 2, wp - 2
    cout = w9.shape[3]
    do = dout.reshape(-1, cout)
    dw9 = np.empty_like(w9)
    dxp = np.zeros_like(xp)
    for di in range(3):
        for dj in range(3):
            patch = xp[:, di : di + h, dj : dj + w, :].reshape(-1, cin)
            dw9[di, dj] = patch.T @ do
            dxp[:, di : di + h, dj : dj + w, :] += (do @ w9[di, dj].T).reshape(
                bsz, h, w, cin
            )
    db = do.sum(axis=0)
    return dw9, db, dxp[:, 1 : h + 1, 1 : w + 1, :]


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _forward_group(model: VelocityModel, x_cl: np.ndarray, emb: np.ndarray, keep: bool):
    """Run the net on a group of same-shape inputs; optionally keep caches."""
    h = x_cl
    caches = []
    for l in range(model.depth - 1):
        z, xp = _conv_forward(h, model.conv_w[l], model.conv_b[l])
        mods = emb @ model.film_w[l] + model.film_b[l]
        cout = z.shape[-1]
        s = mods[:, :cout][:, None, None, :]
        t = mods[:, cout:][:, None, None, :]
        a = z * s + t
        sig = _sigmoid(a)
        h = a * sig
        if keep:
            caches.append((xp, z, a, sig, s))
    out, xp_last = _conv_forward(h, model.conv_w[-1], model.conv_b[-1])
    if keep:
        caches.append(xp_last)
    return out, caches


def _backward_group(
    model: VelocityModel,
    caches: list,
    dout: np.ndarray,
    emb: np.ndarray,
    grads: list[np.ndarray],
):
    """Accumulate parameter gradients for one group; returns d(embedding)."""
    depth = model.depth
    dw_last, db_last, dh = _conv_backward(dout, caches[-1], model.conv_w[-1])
    grads[2 * (depth - 1)] += dw_last
    grads[2 * (depth - 1) + 1] += db_last
    demb = np.zeros_like(emb)
    film_base = 2 * depth
    for l in range(depth - 2, -1, -1):
        xp, z, a, sig, s = caches[l]
        da = dh * (sig * (1.0 + a * (1.0 - sig)))
        dz = da * s
        ds = (da * z).sum(axis=(1, 2))
        dt = da.sum(axis=(1, 2))
        dmods = np.concatenate([ds, dt], axis=1)
        grads[film_base + 2 * l] += emb.T @ dmods
        grads[film_base + 2 * l + 1] += dmods.sum(axis=0)
        demb += dmods @ model.film_w[l].T
        dw, db, dh = _conv_backward(dz, xp, model.conv_w[l])
        grads[2 * l] += dw
        grads[2 * l + 1] += db
    return demb


def forward(
    x: ImageTensor,
    tau: float,
    level: int,
    condition: Optional[int],
    model: VelocityModel,
) -> ImageTensor:
    """Velocity prediction for one image. Pure and deterministic."""
    if not np.all(np.isfinite(x.data)):
        raise ValueError("non-finite input")
    out = forward_array(x.data[None], tau, level, condition, model)[0]
    return ImageTensor(out.astype(np.float32), x.level)


def forward_array(
    xs: np.ndarray,
    tau: float,
    level: int,
    condition: Optional[int],
    model: VelocityModel,
) -> np.ndarray:
    """Batched forward on a (B, C, H, W) array sharing one (tau, level, cond)."""
    bsz = xs.shape[0]
    emb, _ = embed_batch(
        model, np.full(bsz, tau), [level] * bsz, [condition] * bsz
    )
    x_cl = np.ascontiguousarray(xs.transpose(0, 2, 3, 1), dtype=model.dtype)
    out, _ = _forward_group(model, x_cl, emb, keep=False)
    return out.transpose(0, 3, 1, 2)


# ---------------------------------------------------------------------------
# Flow-matching loss and exact gradients
# ---------------------------------------------------------------------------


def zero_grads(model: VelocityModel) -> list[np.ndarray]:
    return [np.zeros_like(a) for a in model.param_arrays()]


def loss_and_grad(
    batch: list[CouplingSample],
    model: VelocityModel,
    reduction: str = "sum",
) -> tuple[float, list[np.ndarray]]:
    """Mean over the batch of |b|^2 - 2 v.b and its exact parameter gradients.

    reduction "sum" accumulates each sample over pixels (the estimator's native
    form); "per_pixel_mean" divides each sample by its pixel count so stages
    with different resolutions contribute comparably.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    channels = batch[0].interpolant.channels
    if any(s.interpolant.channels != channels for s in batch):
        raise ValueError("samples disagree in channel count")
    if reduction not in ("sum", "per_pixel_mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    dtype = model.dtype
    grads = zero_grads(model)
    # Group same-shape samples so convolutions run batched.
    groups: dict[tuple[int, int, int], list[int]] = {}
    for i, s in enumerate(batch):
        groups.setdefault(s.interpolant.data.shape, []).append(i)
    total = 0.0
    n = len(batch)
    table_grad = grads[-1]
    for shape in sorted(groups):
        idx = groups[shape]
        samples = [batch[i] for i in idx]
        xs = np.stack([s.interpolant.data for s in samples]).astype(dtype)
        vs = np.stack([s.target_velocity.data for s in samples]).astype(dtype)
        taus = np.array([s.tau for s in samples])
        levels = [s.stage for s in samples]
        conds = [s.condition for s in samples]
        emb, rows = embed_batch(model, taus, levels, conds)
        x_cl = np.ascontiguousarray(xs.transpose(0, 2, 3, 1))
        v_cl = np.ascontiguousarray(vs.transpose(0, 2, 3, 1))
        out, caches = _forward_group(model, x_cl, emb, keep=True)
        per_sample = (out * out - 2.0 * v_cl * out).sum(
            axis=(1, 2, 3), dtype=np.float64
        )
        if reduction == "per_pixel_mean":
            weights = 1.0 / (n * float(np.prod(shape)))
        else:
            weights = 1.0 / n
        total += float(per_sample.sum() * weights)
        dout = (2.0 * out - 2.0 * v_cl) * dtype.type(weights)
        demb = _backward_group(model, caches, dout, emb, grads)
        np.add.at(table_grad, rows, demb)
    return total, grads


# ---------------------------------------------------------------------------
# Checkpoint file format
# ---------------------------------------------------------------------------


def flatten_params(model: VelocityModel) -> np.ndarray:
    return np.concatenate([a.ravel() for a in model.param_arrays()]).astype(np.float32)


def load_flat_params(model: VelocityModel, flat: np.ndarray) -> None:
    """Write a flat float32 vector back into the model's arrays, in order."""
    if flat.size != model.num_params():
        raise ValueError(f"expected {model.num_params()} params, got {flat.size}")
    pos = 0
    for a in model.param_arrays():
        a[...] = flat[pos : pos + a.size].reshape(a.shape).astype(a.dtype)
        pos += a.size


def save_checkpoint(path, model: VelocityModel, config_echo: str) -> None:
    """magic, version u32, count u64, raw LE float32 params, config echo."""
    flat = flatten_params(model)
    blob = config_echo.encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", flat.size))
        f.write(flat.astype("<f4").tobytes())
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def read_checkpoint(path) -> tuple[np.ndarray, str]:
    """Return (flat float32 params, config echo string)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<Q", f.read(8))
        flat = np.frombuffer(f.read(4 * count), dtype="<f4").copy()
        if flat.size != count:
            raise ValueError("truncated checkpoint payload")
        (blen,) = struct.unpack("<I", f.read(4))
        echo = f.read(blen).decode("utf-8")
    return flat, echo
