"""Time-conditioned U-Net noise predictor for 2-channel (Re/Im) port maps.

The network is a compact encoder-decoder: four depth levels with two
residual blocks each, strided-convolution downsampling, nearest-neighbor
upsampling, and skip concatenation at matching resolutions. The diffusion
step index enters every residual block as a per-channel bias derived from
a sinusoidal embedding.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .channel import FasGeometry
from .diffusion import NoiseSchedule, make_schedule

CHECKPOINT_MAGIC = b"FASCKPT1"
PAD_MULTIPLE = 8  # three 2x downsamplings below the input resolution


@dataclass(frozen=True)
class DenoiserArch:
    """Architecture descriptor; fully determines the parameter layout."""

    base_width: int = 32
    channel_multipliers: tuple = (1, 2, 2, 4)
    d_emb: int = 128
    resblocks_per_level: int = 2
    in_channels: int = 2
    groups: int = 8

    def __post_init__(self):
        if self.d_emb % 2:
            raise ValueError("d_emb must be even")
        if len(self.channel_multipliers) != 4:
            raise ValueError("expected 4 depth levels")

    @property
    def widths(self) -> list[int]:
        return [self.base_width * m for m in self.channel_multipliers]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_multipliers"] = list(self.channel_multipliers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserArch":
        d = dict(d)
        d["channel_multipliers"] = tuple(d["channel_multipliers"])
        return cls(**d)


def time_embedding(t, d_emb: int) -> np.ndarray:
    """Raw sinusoidal embedding of a step index.

    Component 2k is sin(t * w_k) and 2k+1 is cos(t * w_k) with
    w_k = 10000^(-2k/d_emb). The learned projection to the working
    embedding lives inside the network.
    """
    if d_emb % 2:
        raise ValueError("d_emb must be even")
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be nonnegative")
    k = np.arange(d_emb // 2)
    freqs = 10000.0 ** (-2.0 * k / d_emb)
    angles = np.multiply.outer(np.asarray(t, dtype=np.float64), freqs)
    emb = np.empty(angles.shape[:-1] + (d_emb,))
    emb[..., 0::2] = np.sin(angles)
    emb[..., 1::2] = np.cos(angles)
    return emb


def _sinusoid_torch(t: torch.Tensor, d_emb: int) -> torch.Tensor:
    k = torch.arange(d_emb // 2, dtype=torch.float64, device=t.device)
    freqs = 10000.0 ** (-2.0 * k / d_emb)
    angles = t.double()[:, None] * freqs[None, :]
    emb = torch.empty(t.shape[0], d_emb, dtype=torch.float64, device=t.device)
    emb[:, 0::2] = torch.sin(angles)
    emb[:, 1::2] = torch.cos(angles)
    return emb


class ResBlock(nn.Module):
    """Two 3x3 convolutions with group norm, SiLU, and a time-bias injection."""

    def __init__(self, in_ch: int, out_ch: int, d_emb: int, groups: int = 8):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(d_emb, out_ch)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.shortcut = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, t_emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(t_emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.shortcut(x)


class Downsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class ChannelDenoiser(nn.Module):
    """Noise predictor: (B, 2, H, W) plus step indices -> (B, 2, H, W).

    Spatial dims must be multiples of 8 (use pad_input/crop_output around
    the call for arbitrary port grids). The output head is zero-initialized
    so a fresh model predicts exactly zero noise.
    """

    def __init__(self, arch: DenoiserArch = DenoiserArch()):
        super().__init__()
        self.arch = arch
        w = arch.widths
        de = arch.d_emb
        nb = arch.resblocks_per_level

        self.time_mlp = nn.Sequential(nn.Linear(de, de), nn.SiLU())
        self.stem = nn.Conv2d(arch.in_channels, w[0], 3, padding=1)

        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = w[0]
        for level, width in enumerate(w):
            blocks = nn.ModuleList()
            for b in range(nb):
                blocks.append(ResBlock(prev if b == 0 else width, width, de, arch.groups))
            self.enc_blocks.append(blocks)
            prev = width
            if level < len(w) - 1:
                self.downs.append(Downsample(width))

        self.ups = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        for level in range(len(w) - 2, -1, -1):
            width = w[level]
            self.ups.append(Upsample(prev, width))
            blocks = nn.ModuleList()
            for b in range(nb):
                blocks.append(ResBlock(2 * width if b == 0 else width, width, de, arch.groups))
            self.dec_blocks.append(blocks)
            prev = width

        self.head_norm = nn.GroupNorm(arch.groups, w[0])
        self.head = nn.Conv2d(w[0], arch.in_channels, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x, t):
        if x.ndim != 4 or x.shape[1] != self.arch.in_channels:
            raise ValueError(f"expected (B, {self.arch.in_channels}, H, W) input, got {tuple(x.shape)}")
        if x.shape[-2] % PAD_MULTIPLE or x.shape[-1] % PAD_MULTIPLE:
            raise ValueError(f"spatial dims must be multiples of {PAD_MULTIPLE}; pad the input first")
        if not torch.is_tensor(t):
            t = torch.as_tensor(t)
        if t.ndim == 0:
            t = t.expand(x.shape[0])
        t_emb = self.time_mlp(_sinusoid_torch(t, self.arch.d_emb).to(x.dtype))

        h = self.stem(x)
        skips = []
        for level, blocks in enumerate(self.enc_blocks):
            for block in blocks:
                h = block(h, t_emb)
            if level < len(self.enc_blocks) - 1:
                skips.append(h)
                h = self.downs[level](h)
        for up, blocks in zip(self.ups, self.dec_blocks):
            h = up(h)
            h = torch.cat([skips.pop(), h], dim=1)
            for block in blocks:
                h = block(h, t_emb)
        return self.head(F.silu(self.head_norm(h)))


def build_denoiser(arch: DenoiserArch = DenoiserArch(), seed: int = 0) -> ChannelDenoiser:
    """Construct a denoiser with seed-reproducible weight initialization."""
    torch.manual_seed(seed)
    model = ChannelDenoiser(arch)
    model.eval()
    return model


def pad_input(x, multiple: int = PAD_MULTIPLE):
    """Reflect-pad spatial dims up to the next multiple; returns (padded, pads).

    ``pads`` is (top, bottom, left, right) and feeds crop_output. Works on
    numpy arrays and torch tensors of shape (..., H, W).
    """
    h, w = x.shape[-2], x.shape[-1]
    ph = (-h) % multiple
    pw = (-w) % multiple
    pads = (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)
    if ph == 0 and pw == 0:
        return x, pads
    if isinstance(x, np.ndarray):
        spec = [(0, 0)] * (x.ndim - 2) + [(pads[0], pads[1]), (pads[2], pads[3])]
        return np.pad(x, spec, mode="reflect"), pads
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    out = F.pad(x, (pads[2], pads[3], pads[0], pads[1]), mode="reflect")
    return (out[0] if squeeze else out), pads


def crop_output(x, pads):
    """Undo pad_input exactly."""
    top, bottom, left, right = pads
    h, w = x.shape[-2], x.shape[-1]
    return x[..., top:h - bottom, left:w - right]


def denoise(model: ChannelDenoiser, h_t, t) -> torch.Tensor:
    """Predict the injected noise for a (2, H, W) or (B, 2, H, W) tensor.

    Pads to the network's resolution internally, so the output shape always
    equals the input shape.
    """
    x = torch.as_tensor(np.asarray(h_t), dtype=torch.float32) if not torch.is_tensor(h_t) else h_t
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    with torch.no_grad():
        padded, pads = pad_input(x)
        out = crop_output(model(padded, t), pads)
    return out[0] if squeeze else out


def vec_to_image(h_vec: np.ndarray, geom: FasGeometry) -> np.ndarray:
    """(..., 2N) real channel vectors -> (..., 2, n1, n2) Re/Im maps."""
    h_vec = np.asarray(h_vec)
    n = geom.num_ports
    if h_vec.shape[-1] != 2 * n:
        raise ValueError(f"expected last dimension {2 * n}, got {h_vec.shape}")
    lead = h_vec.shape[:-1]
    # column-major unflatten: reshape to (n2, n1) then transpose
    re = h_vec[..., :n].reshape(*lead, geom.n2, geom.n1).swapaxes(-1, -2)
    im = h_vec[..., n:].reshape(*lead, geom.n2, geom.n1).swapaxes(-1, -2)
    return np.stack([re, im], axis=-3)


def image_to_vec(img: np.ndarray, geom: FasGeometry) -> np.ndarray:
    """Inverse of vec_to_image."""
    img = np.asarray(img)
    if img.shape[-3:] != (2, geom.n1, geom.n2):
        raise ValueError(f"expected (..., 2, {geom.n1}, {geom.n2}), got {img.shape}")
    lead = img.shape[:-3]
    n = geom.num_ports
    re = img[..., 0, :, :].swapaxes(-1, -2).reshape(*lead, n)
    im = img[..., 1, :, :].swapaxes(-1, -2).reshape(*lead, n)
    return np.concatenate([re, im], axis=-1)


def make_denoise_fn(model: ChannelDenoiser, geom: FasGeometry):
    """Adapter exposing the network over flat real channel vectors.

    Returns ``f(h, t) -> eps_hat`` where h has shape (2N,) or (B, 2N); t is
    an integer step (or per-item array). Used by the samplers, which work
    in the vector domain.
    """
    def f(h, t):
        h = np.asarray(h, dtype=np.float64)
        single = h.ndim == 1
        batch = h[None] if single else h
        x = torch.from_numpy(vec_to_image(batch, geom).astype(np.float32))
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (batch.shape[0],))
        with torch.no_grad():
            padded, pads = pad_input(x)
            out = crop_output(model(padded, torch.from_numpy(t_arr.copy())), pads)
        eps = image_to_vec(out.numpy().astype(np.float64), geom)
        return eps[0] if single else eps

    return f


def schedule_fingerprint(sched: NoiseSchedule) -> str:
    return hashlib.sha256(sched.beta.astype("<f8").tobytes()).hexdigest()


def save_checkpoint(path: str, model: ChannelDenoiser, sched: NoiseSchedule,
                    dataset_fingerprint: str | None = None, extra: dict | None = None):
    """Write weights plus metadata; reload is bit-exact for f32 tensors."""
    state = model.state_dict()
    names = list(state.keys())
    header = {
        "version": 1,
        "arch": model.arch.to_dict(),
        "schedule": {
            "t_max": sched.t_max,
            "beta_1": float(sched.beta[0]),
            "beta_t": float(sched.beta[-1]),
            "fingerprint": schedule_fingerprint(sched),
        },
        "dataset_fingerprint": dataset_fingerprint,
        "tensors": [{"name": k, "shape": list(state[k].shape)} for k in names],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(state[k].numpy().astype("<f4").tobytes())


def load_checkpoint(path: str) -> tuple[ChannelDenoiser, NoiseSchedule, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a denoiser checkpoint: bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        arch = DenoiserArch.from_dict(header["arch"])
        model = ChannelDenoiser(arch)
        state = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            state[entry["name"]] = torch.from_numpy(data.copy())
    model.load_state_dict(state)
    model.eval()
    s = header["schedule"]
    sched = make_schedule(s["t_max"], s["beta_1"], s["beta_t"])
    if schedule_fingerprint(sched) != s["fingerprint"]:
        raise ValueError("schedule fingerprint mismatch in checkpoint")
    return model, sched, header
