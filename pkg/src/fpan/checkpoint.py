"""Binary checkpoint format (little-endian).

Layout::

    b"FPAN"                     magic
    u32                         format version (1)
    u32 x 5                     scale, channels, num_blocks, stage_depth, reduction
    u32, u32 x n                number of pyramid scales, the scales
    u8 x 3                      feedforward_skips, feedback_skips, attention (0 none, 1 gc, 2 pnlb)
    u32                         tensor count
    per tensor:
        u16 + bytes             name (UTF-8)
        u8, u32 x ndim          ndim, dims
        f32 x prod(dims)        payload, row-major

Optimizer slots are stored as ordinary tensors named ``adam.m/<param>``,
``adam.v/<param>`` and ``adam.step``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ATTENTION_KINDS, FPAN, ModelConfig

MAGIC = b"FPAN"
VERSION = 1

_M_PREFIX = "adam.m/"
_V_PREFIX = "adam.v/"
_STEP_NAME = "adam.step"


class CheckpointError(ValueError):
    pass


def _encode_config(cfg: ModelConfig) -> bytes:
    parts = [struct.pack("<5I", cfg.scale, cfg.channels, cfg.num_blocks, cfg.stage_depth, cfg.reduction)]
    parts.append(struct.pack("<I", len(cfg.pyramid_scales)))
    parts.append(struct.pack(f"<{len(cfg.pyramid_scales)}I", *cfg.pyramid_scales))
    parts.append(
        struct.pack(
            "<3B", int(cfg.feedforward_skips), int(cfg.feedback_skips), ATTENTION_KINDS.index(cfg.attention)
        )
    )
    return b"".join(parts)


def encode(cfg: ModelConfig, tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION), _encode_config(cfg), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes for {what} at byte offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def decode(data: bytes) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at byte offset 0")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at byte offset 4")
    cfg_at = r.pos
    scale, channels, blocks, depth, reduction = r.unpack("<5I", "config")
    (n_scales,) = r.unpack("<I", "pyramid scale count")
    scales = r.unpack(f"<{n_scales}I", "pyramid scales")
    ff, fb, att = r.unpack("<3B", "ablation switches")
    if att >= len(ATTENTION_KINDS):
        raise CheckpointError(f"bad attention code {att} at byte offset {r.pos - 1}")
    try:
        cfg = ModelConfig(
            scale=scale,
            channels=channels,
            num_blocks=blocks,
            stage_depth=depth,
            pyramid_scales=tuple(scales),
            reduction=reduction,
            feedforward_skips=bool(ff),
            feedback_skips=bool(fb),
            attention=ATTENTION_KINDS[att],
        )
    except ValueError as exc:
        raise CheckpointError(f"invalid model config at byte offset {cfg_at}: {exc}") from exc
    (count,) = r.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "name length")
        at = r.pos
        try:
            name = r.take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"tensor name is not UTF-8 at byte offset {at}") from exc
        (ndim,) = r.unpack("<B", f"ndim of {name}")
        dims = r.unpack(f"<{ndim}I", f"dims of {name}")
        n = int(np.prod(dims)) if ndim else 1
        payload = r.take(4 * n, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes at byte offset {r.pos}")
    return cfg, tensors


def model_tensors(model: FPAN, with_optimizer: bool = False) -> dict[str, np.ndarray]:
    store = model.store
    tensors = dict(store.state_arrays())
    if with_optimizer and store.m:
        for name in store:
            if name in store.m:
                tensors[_M_PREFIX + name] = store.m[name]
                tensors[_V_PREFIX + name] = store.v[name]
        tensors[_STEP_NAME] = np.array([store.step], dtype=np.float32)
    return tensors


def save_checkpoint(model: FPAN, path, with_optimizer: bool = False) -> None:
    data = encode(model.cfg, model_tensors(model, with_optimizer))
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def load_checkpoint(path) -> FPAN:
    """Rebuild the model stored at ``path``; optimizer slots are restored if present."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    try:
        cfg, tensors = decode(data)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    model = FPAN(cfg)
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    extra = set(params) - set(model.store)
    if extra:
        raise CheckpointError(f"{path}: unexpected tensors {sorted(extra)[:5]}")
    try:
        model.store.load_arrays(params)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    store = model.store
    if _STEP_NAME in tensors:
        store.step = int(tensors[_STEP_NAME].reshape(-1)[0])
        for name, p in store.items():
            if _M_PREFIX + name in tensors:
                store.m[name] = tensors[_M_PREFIX + name].astype(p.data.dtype)
                store.v[name] = tensors[_V_PREFIX + name].astype(p.data.dtype)
    return model
