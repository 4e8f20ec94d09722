"""PSNR/SSIM on the luminance channel and parameter/FLOP accounting."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .imaging import (
    DegradationSpec,
    crop_to_multiple,
    degrade,
    rgb_to_y,
    self_ensemble_sr,
    super_resolve,
)


def _luma(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 2:
        return arr.astype(np.float64)
    return rgb_to_y(arr)


def shave(plane: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return plane
    return plane[border:-border, border:-border]


def psnr_y(sr, hr, scale: int) -> float:
    """PSNR in dB between the Y channels, ignoring a ``scale``-pixel border.

    RGB images are converted with BT.601; 2-d inputs are taken to be Y
    planes already. Identical inputs give ``inf``.
    """
    a, b = _luma(sr), _luma(hr)
    if a.shape != b.shape:
        raise ValueError(f"psnr_y: shape mismatch {a.shape} vs {b.shape}")
    a, b = shave(a, scale), shave(b, scale)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


_SSIM_WIN = 11
_SSIM_SIGMA = 1.5


def _gauss_1d(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    n = len(k)
    h, w = img.shape
    tmp = sum(k[i] * img[i : h - n + 1 + i] for i in range(n))
    return sum(k[j] * tmp[:, j : w - n + 1 + j] for j in range(n))


def ssim_y(sr, hr, scale: int, data_range: float = 255.0) -> float:
    """Single-scale SSIM on shaved Y planes (11x11 Gaussian window, sigma 1.5)."""
    a, b = _luma(sr), _luma(hr)
    if a.shape != b.shape:
        raise ValueError(f"ssim_y: shape mismatch {a.shape} vs {b.shape}")
    a, b = shave(a, scale), shave(b, scale)
    if min(a.shape) < _SSIM_WIN:
        raise ValueError(f"ssim_y: image {a.shape} smaller than {_SSIM_WIN}x{_SSIM_WIN} after shaving")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    k = _gauss_1d(_SSIM_WIN, _SSIM_SIGMA)
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    saa = _filter_valid(a * a, k) - mu_a**2
    sbb = _filter_valid(b * b, k) - mu_b**2
    sab = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


# ----------------------------------------------------------------------
# evaluation reports
# ----------------------------------------------------------------------
@dataclass
class EvalReport:
    rows: list[tuple[str, float, float]]
    scale: int
    shave: int
    channel: str = "Y"

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("name,psnr,ssim\n")
        for name, p, s in self.rows:
            buf.write(f"{name},{p:.6f},{s:.6f}\n")
        buf.write(f"average,{self.mean_psnr:.6f},{self.mean_ssim:.6f}\n")
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"# scale x{self.scale}, channel {self.channel}, border shave {self.shave}px"]
        lines.append(f"{'image':<24} {'PSNR':>10} {'SSIM':>8}")
        for name, p, s in self.rows:
            lines.append(f"{name:<24} {p:>10.4f} {s:>8.4f}")
        lines.append(f"{'average':<24} {self.mean_psnr:>10.4f} {self.mean_ssim:>8.4f}")
        return "\n".join(lines)


def evaluate(model, images, spec: DegradationSpec, ensemble: bool = False) -> EvalReport:
    """Degrade each ``(name, hr)`` pair, super-resolve and score it.

    ``model`` is an FPAN or any callable mapping float HWC [0,1] to an
    enlarged float HWC image.
    """
    rows = []
    s = spec.scale
    for i, (name, hr) in enumerate(images):
        hr = crop_to_multiple(hr, s)
        lr = degrade(hr, replace(spec, seed=spec.seed ^ i))
        sr = self_ensemble_sr(model, lr) if ensemble else super_resolve(model, lr)
        rows.append((name, psnr_y(sr, hr, s), ssim_y(sr, hr, s)))
    return EvalReport(rows, scale=s, shave=s)


# ----------------------------------------------------------------------
# cost accounting
# ----------------------------------------------------------------------
@dataclass
class CostReport:
    rows: list[tuple[str, int, int]] = field(default_factory=list)
    hr_size: tuple[int, int] | None = None
    scale: int | None = None

    @property
    def params(self) -> int:
        return sum(r[1] for r in self.rows)

    @property
    def flops(self) -> int:
        return sum(r[2] for r in self.rows)

    def to_csv(self) -> str:
        lines = ["layer,params,flops"]
        lines += [f"{n},{p},{f}" for n, p, f in self.rows]
        lines.append(f"total,{self.params},{self.flops}")
        return "\n".join(lines) + "\n"


def _group_name(param_name: str) -> str:
    return param_name.rsplit(".", 1)[0]


def count_params(model) -> CostReport:
    """Exact element count over the parameter store, grouped per layer."""
    groups: dict[str, int] = {}
    for name, t in model.store.items():
        key = _group_name(name)
        groups[key] = groups.get(key, 0) + t.size
    return CostReport([(k, v, 0) for k, v in groups.items()])


def count_flops(model, hr_size=(512, 512), scale: int | None = None) -> CostReport:
    """Analytic operation count of one forward pass for an HR output of ``hr_size``.

    Convolutions count ``2*kh*kw*Cin*Cout*Hout*Wout``; attention pooling
    counts ``2*C*H*W``. Activations, normalisation, additions and pixel
    shuffles are not counted.
    """
    if isinstance(hr_size, int):
        hr_size = (hr_size, hr_size)
    s = scale or model.scale
    if s != model.scale:
        raise ValueError(f"model scale is {model.scale}, asked for {s}")
    h, w = hr_size[0] // s, hr_size[1] // s
    rows: list[tuple[str, int, int]] = []

    def conv(layer, hh, ww):
        rows.append((layer.name, layer.num_params, layer.flops(hh, ww)))
        return layer.output_size(hh, ww)

    conv(model.head, h, w)
    for block in model.blocks:
        for layer in block.feedback.layers():
            conv(layer, h, w)
        att = block.attention
        if att is None:
            continue
        for sc in att.scales:
            hh, ww = h, w
            for layer in att.down[sc]:
                hh, ww = conv(layer, hh, ww)
            conv(att.keys[sc], hh, ww)
            prefix = att.keys[sc].name.rsplit(".", 1)[0]
            rows.append((f"{prefix}.pool{sc}", 0, 2 * att.channels * hh * ww))
        conv(att.v1, 1, 1)
        rows.append((att.ln_gamma.name.rsplit(".", 1)[0], att.ln_gamma.size + att.ln_beta.size, 0))
        conv(att.v2, 1, 1)
    conv(model.fusion, h, w)
    conv(model.fusion_conv, h, w)
    hh, ww = h, w
    for layer, r in model.upsample:
        conv(layer, hh, ww)
        hh, ww = hh * r, ww * r
    conv(model.tail, hh, ww)
    return CostReport(rows, hr_size=tuple(hr_size), scale=s)


def resolve_num_blocks(cfg, target: float) -> int:
    """Smallest block count G whose total parameter count is >= ``target``.

    Parameter count is affine in G, so two probe models fix it exactly.
    """
    from .model import FPAN

    p1 = FPAN(replace(cfg, num_blocks=1)).store.num_elements()
    p2 = FPAN(replace(cfg, num_blocks=2)).store.num_elements()
    per_block = p2 - p1
    if p1 >= target:
        return 1
    return 1 + math.ceil((target - p1) / per_block)
