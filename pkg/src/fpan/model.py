"""Feedback pyramid attention network.

Structure::

    F_0  = head(I_LR)                                   3x3 conv
    F_g  = F_{g-1} + PNLB(FC(F_{g-1}))                   g = 1..G
    F_GF = F_0 + conv3x3(conv1x1([F_G, ..., F_1]))
    I_SR = out(upsample(F_GF))                           sub-pixel conv(s)

``FC`` is the two-stage feedback connection structure and ``PNLB`` the
pyramid non-local (global-context) block.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, replace

import numpy as np

from .layers import ConvLayer, ParameterStore
from .tensor import (
    DimensionError,
    Tensor,
    add,
    broadcast_add,
    concat_channels,
    get_dtype,
    layer_norm,
    matmul,
    no_grad,
    pixel_shuffle,
    relu,
    reshape,
    softmax_positions,
    softmax_rows,
    transpose,
)


class ConfigurationError(ValueError):
    """Invalid model configuration or input incompatible with it."""


ATTENTION_KINDS = ("none", "gc", "pnlb")

# Table of ablation switches: (feedforward_skips, feedback_skips, attention)
ABLATIONS = {
    "P0": (False, False, "none"),
    "P1": (True, False, "none"),
    "P2": (True, True, "none"),
    "P3": (True, True, "gc"),
    "P4": (True, True, "pnlb"),
}

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 4
    channels: int = 64
    num_blocks: int = 2
    stage_depth: int = 4
    pyramid_scales: tuple[int, ...] = (1, 2, 4)
    reduction: int = 16
    feedforward_skips: bool = True
    feedback_skips: bool = True
    attention: str = "pnlb"

    def __post_init__(self):
        object.__setattr__(self, "pyramid_scales", tuple(sorted(set(int(s) for s in self.pyramid_scales))))
        if self.scale not in (2, 3, 4):
            raise ConfigurationError(f"unsupported scale {self.scale}; expected 2, 3 or 4")
        if self.num_blocks < 1 or self.stage_depth < 1 or self.channels < 1:
            raise ConfigurationError("num_blocks, stage_depth and channels must be >= 1")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigurationError(f"attention must be one of {ATTENTION_KINDS}")
        if self.attention != "none":
            if self.reduction < 1 or self.channels % self.reduction:
                raise ConfigurationError(f"channels {self.channels} not divisible by reduction {self.reduction}")
        if self.attention == "pnlb":
            if not self.pyramid_scales:
                raise ConfigurationError("pnlb attention needs at least one pyramid scale")
            for s in self.pyramid_scales:
                if s < 1 or s & (s - 1):
                    raise ConfigurationError(f"pyramid scale {s} is not a power of two")

    @property
    def attention_scales(self) -> tuple[int, ...]:
        if self.attention == "pnlb":
            return self.pyramid_scales
        if self.attention == "gc":
            return (1,)
        return ()

    @property
    def ablation(self) -> str | None:
        """Name of the matching ablation preset, if any."""
        key = (self.feedforward_skips, self.feedback_skips, self.attention)
        for name, switches in ABLATIONS.items():
            if switches == key and (self.attention != "pnlb" or self.pyramid_scales == (1, 2, 4)):
                return name
        return None

    def with_ablation(self, name: str) -> "ModelConfig":
        try:
            ff, fb, att = ABLATIONS[name.upper()]
        except KeyError:
            raise ConfigurationError(f"unknown ablation preset {name!r}") from None
        scales = self.pyramid_scales if att == "pnlb" else self.pyramid_scales or (1, 2, 4)
        return replace(self, feedforward_skips=ff, feedback_skips=fb, attention=att, pyramid_scales=scales)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "tiny": dict(scale=2, channels=8, num_blocks=1, stage_depth=2, reduction=2),
    "desk": dict(scale=4, channels=64, num_blocks=2, stage_depth=4),
    # num_blocks is resolved against the parameter-count target, see paper_config()
    "paper": dict(scale=4, channels=64, num_blocks=1, stage_depth=4),
}

PAPER_PARAM_TARGET = 11.7e6


def preset(name: str, **overrides) -> ModelConfig:
    if name == "paper":
        return paper_config(**overrides)
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return ModelConfig(**base)


def paper_config(target: float = PAPER_PARAM_TARGET, **overrides) -> ModelConfig:
    """Full-width configuration with the smallest G whose size reaches ``target``."""
    from .metrics import resolve_num_blocks

    base = dict(PRESETS["paper"])
    base.update(overrides)
    cfg = ModelConfig(**base)
    return replace(cfg, num_blocks=resolve_num_blocks(cfg, target))


# ----------------------------------------------------------------------
# building blocks
# ----------------------------------------------------------------------
class FeedbackBlock:
    """Two-stage feedback connection structure (state + forward)."""

    def __init__(self, store: ParameterStore, prefix: str, cfg: ModelConfig, seeds):
        c, d = cfg.channels, cfg.stage_depth
        self.channels = c
        self.feedforward_skips = cfg.feedforward_skips
        self.w0 = ConvLayer(store, f"{prefix}.w0", c, c, 3, seed=next(seeds))
        self.stage1 = [ConvLayer(store, f"{prefix}.stage1.{i}", 2 * c, c, 3, seed=next(seeds)) for i in range(1, d + 1)]
        self.stage2 = []
        if cfg.feedback_skips:
            self.stage2 = [
                ConvLayer(store, f"{prefix}.stage2.{i}", 2 * c, c, 3, seed=next(seeds)) for i in range(1, d + 1)
            ]

    def layers(self) -> list[ConvLayer]:
        return [self.w0, *self.stage1, *self.stage2]

    def __call__(self, f_prev: Tensor) -> Tensor:
        if f_prev.ndim != 4 or f_prev.shape[1] != self.channels:
            raise DimensionError(f"feedback block expects {self.channels} channels, got {f_prev.shape}")
        x0 = relu(self.w0(f_prev))
        older, newer = f_prev, x0  # X_1^{i-2}, X_1^{i-1}
        stage1_out = []
        for conv in self.stage1:
            pair = [newer, older] if self.feedforward_skips else [newer, newer]
            x = relu(conv(concat_channels(pair)))
            stage1_out.append(x)
            older, newer = newer, x
        if not self.stage2:
            return stage1_out[-1]
        y = stage1_out[-1]
        for conv, skip in zip(self.stage2, stage1_out):
            y = relu(conv(concat_channels([y, skip])))
        return y


def gc_context_pool(x: Tensor, key: ConvLayer, return_weights: bool = False):
    """Softmax-weighted spatial average of ``x`` with weights from a 1x1 key conv.

    Returns the pooled ``[N, C, 1, 1]`` context (and the ``[N,1,H,W]`` weights).
    """
    n, c, h, w = x.shape
    alpha = softmax_positions(key(x))
    pooled = matmul(reshape(x, (n, c, h * w)), reshape(alpha, (n, h * w, 1)))
    pooled = reshape(pooled, (n, c, 1, 1))
    return (pooled, alpha) if return_weights else pooled


class PyramidNonLocal:
    """Global-context attention pooled at several downsampled scales.

    With a single scale ``(1,)`` this is the plain global-context block.
    """

    def __init__(self, store: ParameterStore, prefix: str, channels: int, scales, reduction: int, seeds):
        self.channels = channels
        self.scales = tuple(scales)
        self.down: dict[int, list[ConvLayer]] = {}
        self.keys: dict[int, ConvLayer] = {}
        for s in self.scales:
            steps = int(np.log2(s))
            self.down[s] = [
                ConvLayer(store, f"{prefix}.down{s}.{k}", channels, channels, 6, stride=2, pad=2, seed=next(seeds))
                for k in range(steps)
            ]
        for s in self.scales:
            self.keys[s] = ConvLayer(store, f"{prefix}.key{s}", channels, 1, 1, seed=next(seeds))
        hidden = channels // reduction
        self.hidden = hidden
        self.v1 = ConvLayer(store, f"{prefix}.v1", len(self.scales) * channels, hidden, 1, seed=next(seeds))
        dt = get_dtype()
        self.ln_gamma = store.register(f"{prefix}.ln.gamma", Tensor(np.ones(hidden, dtype=dt)))
        self.ln_beta = store.register(f"{prefix}.ln.beta", Tensor(np.zeros(hidden, dtype=dt)))
        self.v2 = ConvLayer(store, f"{prefix}.v2", hidden, channels, 1, zero=True)

    def layers(self) -> list[ConvLayer]:
        out = [conv for s in self.scales for conv in self.down[s]]
        return out + [self.keys[s] for s in self.scales] + [self.v1, self.v2]

    def check_input(self, h: int, w: int) -> None:
        for s in self.scales:
            hh, ww = h, w
            for conv in self.down[s]:
                if hh + 2 * conv.pad < conv.kernel or ww + 2 * conv.pad < conv.kernel:
                    raise ConfigurationError(f"input {h}x{w} too small for pyramid scale {s}")
                hh, ww = conv.output_size(hh, ww)

    def transform(self, context: Tensor) -> Tensor:
        """Bottleneck transform: 1x1 conv, layer norm, ReLU, 1x1 conv."""
        hidden = layer_norm(self.v1(context), self.ln_gamma, self.ln_beta, LN_EPS)
        return self.v2(relu(hidden))

    def scale_maps(self, x: Tensor) -> dict[int, Tensor]:
        maps = {}
        for s in self.scales:
            xs = x
            for conv in self.down[s]:
                xs = conv(xs)
            maps[s] = xs
        return maps

    def __call__(self, x: Tensor) -> Tensor:
        self.check_input(x.shape[2], x.shape[3])
        maps = self.scale_maps(x)
        context = concat_channels([gc_context_pool(maps[s], self.keys[s]) for s in self.scales])
        return broadcast_add(x, self.transform(context))


class NonLocalBlock:
    """Embedded-Gaussian non-local block with residual output.

    Quadratic in the number of positions, so limited to ``H*W <= 4096``.
    """

    MAX_POSITIONS = 4096

    def __init__(self, store: ParameterStore, prefix: str, channels: int, inner: int | None = None, seed=0):
        inner = inner or max(channels // 2, 1)
        seeds = itertools.count()
        self.theta = ConvLayer(store, f"{prefix}.theta", channels, inner, 1, seed=(seed, next(seeds)))
        self.phi = ConvLayer(store, f"{prefix}.phi", channels, inner, 1, seed=(seed, next(seeds)))
        self.g = ConvLayer(store, f"{prefix}.g", channels, inner, 1, seed=(seed, next(seeds)))
        self.w_y = ConvLayer(store, f"{prefix}.w_y", inner, channels, 1, zero=True)

    def __call__(self, x: Tensor, return_similarity: bool = False):
        return non_local_reference_forward(x, self.theta, self.phi, self.g, self.w_y, return_similarity)


def non_local_reference_forward(x, theta, phi, g, w_y, return_similarity: bool = False):
    n, c, h, w = x.shape
    npos = h * w
    if npos > NonLocalBlock.MAX_POSITIONS:
        raise ValueError(f"non-local block limited to {NonLocalBlock.MAX_POSITIONS} positions, got {npos}")
    ci = theta.cout
    th = transpose(reshape(theta(x), (n, ci, npos)), (0, 2, 1))
    ph = reshape(phi(x), (n, ci, npos))
    sim = softmax_rows(matmul(th, ph))
    gx = transpose(reshape(g(x), (n, ci, npos)), (0, 2, 1))
    agg = reshape(transpose(matmul(sim, gx), (0, 2, 1)), (n, ci, h, w))
    y = add(w_y(agg), x)
    return (y, sim) if return_similarity else y


class FPAB:
    """Feedback structure followed by attention, with a local residual."""

    def __init__(self, store: ParameterStore, prefix: str, cfg: ModelConfig, seeds):
        self.feedback = FeedbackBlock(store, f"{prefix}.fc", cfg, seeds)
        self.attention = None
        if cfg.attention != "none":
            self.attention = PyramidNonLocal(
                store, f"{prefix}.pnlb", cfg.channels, cfg.attention_scales, cfg.reduction, seeds
            )

    def layers(self) -> list[ConvLayer]:
        return self.feedback.layers() + (self.attention.layers() if self.attention else [])

    def __call__(self, f_prev: Tensor) -> Tensor:
        y = self.feedback(f_prev)
        if self.attention is not None:
            y = self.attention(y)
        return add(f_prev, y)


class FPAN:
    """The full network. Parameters live in ``self.store``."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.store = ParameterStore()
        c, s = cfg.channels, cfg.scale
        counter = itertools.count()
        seeds = ((seed, k) for k in counter)
        store = self.store

        self.head = ConvLayer(store, "head", 3, c, 3, seed=next(seeds))
        self.blocks = [FPAB(store, f"block{g}", cfg, seeds) for g in range(1, cfg.num_blocks + 1)]
        self.fusion = ConvLayer(store, "fusion.hff", cfg.num_blocks * c, c, 1, seed=next(seeds))
        self.fusion_conv = ConvLayer(store, "fusion.conv", c, c, 3, seed=next(seeds))
        factors = [2, 2] if s == 4 else [s]
        self.upsample = [
            (ConvLayer(store, f"recon.up{k}", c, c * r * r, 3, seed=next(seeds)), r) for k, r in enumerate(factors)
        ]
        self.tail = ConvLayer(store, "recon.out", c, 3, 3, seed=next(seeds))

    @property
    def scale(self) -> int:
        return self.cfg.scale

    def layers(self) -> list[ConvLayer]:
        out = [self.head]
        for b in self.blocks:
            out += b.layers()
        return out + [self.fusion, self.fusion_conv] + [conv for conv, _ in self.upsample] + [self.tail]

    def features(self, lr: Tensor) -> Tensor:
        if lr.ndim != 4 or lr.shape[1] != 3:
            raise DimensionError(f"FPAN expects [N,3,h,w] input, got {lr.shape}")
        f0 = self.head(lr)
        f = f0
        history = []
        for block in self.blocks:
            f = block(f)
            history.append(f)
        fused = self.fusion_conv(self.fusion(concat_channels(history[::-1])))
        return add(f0, fused)

    def reconstruct(self, feats: Tensor) -> Tensor:
        y = feats
        for conv, r in self.upsample:
            y = pixel_shuffle(conv(y), r)
        return self.tail(y)

    def __call__(self, lr: Tensor) -> Tensor:
        return self.reconstruct(self.features(lr))

    def predict(self, lr: np.ndarray) -> np.ndarray:
        """Inference on ``[N,3,h,w]`` (or ``[3,h,w]``) values in [0,1]; output clamped to [0,1]."""
        arr = np.asarray(lr)
        single = arr.ndim == 3
        if single:
            arr = arr[None]
        with no_grad():
            out = self(Tensor(arr)).data
        out = np.clip(out, 0.0, 1.0)
        return out[0] if single else out


# Functional entry points mirroring the block structure.
def feedback_structure_forward(f_prev: Tensor, state: FeedbackBlock) -> Tensor:
    return state(f_prev)


def pyramid_non_local_forward(x: Tensor, state: PyramidNonLocal) -> Tensor:
    return state(x)


def fpab_forward(f_prev: Tensor, block: FPAB) -> Tensor:
    return block(f_prev)


def fpan_forward(lr: Tensor, model: FPAN) -> Tensor:
    return model(lr)
