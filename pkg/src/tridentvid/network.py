"""Three-branch denoiser: a text-to-image UNet lifted to video with pseudo-3D blocks,
a structure branch injecting into the decoder side and an appearance branch
injecting an edited keyframe on the encoder side.

Tensor layouts: the main branch runs frames as a flat batch ``(B*l, C, h, w)``;
temporal layers fold that back to ``(B, l, ...)`` and mix along the frame axis.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import config_to_json, load_archive, save_archive, state_checksum
from .conditioning import TextEncoder


class ArchitectureMismatch(ValueError):
    pass


class BranchShapeError(ValueError):
    def __init__(self, branch: str, message: str):
        super().__init__(f"[{branch}] {message}")
        self.branch = branch


@dataclass
class UNetConfig:
    latent_channels: int = 4
    channels: tuple[int, int] = (32, 64)
    time_dim: int = 128
    text_dim: int = 64
    n_tokens: int = 4
    vocab_size: int = 14
    groups: int = 8

    def __post_init__(self):
        self.channels = tuple(self.channels)


@dataclass
class TridentConfig:
    frames_per_run: int = 5
    s_struct: float = 1.0
    s_app: float = 1.0
    mode: str = "edit"  # or "interpolate"
    structure_kind: str = "edge"
    structure_in_middle: bool = True
    hint_size: int = 32  # pixel size of structure maps (latent size * codec factor)
    seed: int = 0

    def __post_init__(self):
        if self.frames_per_run < 2:
            raise ValueError("frames_per_run must be >= 2")
        if self.mode not in ("edit", "interpolate"):
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("s_struct", "s_app"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def default_trident_config(mode: str = "edit", **kw) -> TridentConfig:
    """Edit model: full structure control on edges.  Interpolation model: depth proxy at 0.5."""
    if mode == "interpolate":
        kw.setdefault("s_struct", 0.5)
        kw.setdefault("structure_kind", "depth_proxy")
    return TridentConfig(mode=mode, **kw)


def zero_module(m: nn.Module) -> nn.Module:
    for p in m.parameters():
        nn.init.zeros_(p)
    return m


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 1000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


# spatial building blocks --------------------------------------------------------

class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, tdim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.time = nn.Linear(tdim, cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


def _attend(q, k, v):
    w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]), dim=-1)
    return w @ v


class SelfAttention(nn.Module):
    def __init__(self, c: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, c)
        self.qkv = nn.Linear(c, 3 * c)
        self.proj = nn.Linear(c, c)

    def forward(self, x):
        n, c, h, w = x.shape
        y = self.norm(x).flatten(2).transpose(1, 2)
        q, k, v = self.qkv(y).chunk(3, dim=-1)
        y = self.proj(_attend(q, k, v))
        return x + y.transpose(1, 2).reshape(n, c, h, w)


class CrossAttention(nn.Module):
    def __init__(self, c: int, text_dim: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, c)
        self.q = nn.Linear(c, c)
        self.kv = nn.Linear(text_dim, 2 * c)
        self.proj = nn.Linear(c, c)

    def forward(self, x, text):
        n, c, h, w = x.shape
        y = self.norm(x).flatten(2).transpose(1, 2)
        k, v = self.kv(text).chunk(2, dim=-1)
        y = self.proj(_attend(self.q(y), k, v))
        return x + y.transpose(1, 2).reshape(n, c, h, w)


Hook = Callable[[str, torch.Tensor], torch.Tensor]


def _no_hook(name: str, h: torch.Tensor) -> torch.Tensor:
    return h


class SpatialUNet(nn.Module):
    """Toy text-to-image epsilon model: two resolution levels with cross-attention.

    ``forward`` accepts an optional hook called with a site name after every
    spatial block; the video model uses it to insert temporal layers and
    branch injections without duplicating the spatial computation.
    """

    # sites that get a temporal layer, keyed by the spatial block they follow
    TEMPORAL_SITES = {
        "enc0.res": "conv", "enc0.attn": "attn",
        "enc1.res": "conv", "enc1.attn": "attn",
        "mid.res": "conv",
        "dec1.res": "conv", "dec1.attn": "attn",
        "dec0.res": "conv", "dec0.attn": "attn",
    }
    ENCODER_LAYERS = ("conv_in", "enc0_res", "enc0_self", "enc0_cross", "down0", "enc1_res", "enc1_self", "enc1_cross")

    def __init__(self, config: UNetConfig | None = None):
        super().__init__()
        self.config = cfg = config or UNetConfig()
        c0, c1 = cfg.channels
        g, td = cfg.groups, cfg.time_dim
        self.text = TextEncoder(cfg.vocab_size, cfg.n_tokens, cfg.text_dim)
        self.time_embed = nn.Sequential(nn.Linear(c0, td), nn.SiLU(), nn.Linear(td, td))
        self.conv_in = nn.Conv2d(cfg.latent_channels, c0, 3, padding=1)
        self.enc0_res = ResBlock(c0, c0, td, g)
        self.enc0_self = SelfAttention(c0, g)
        self.enc0_cross = CrossAttention(c0, cfg.text_dim, g)
        self.down0 = nn.Conv2d(c0, c0, 3, stride=2, padding=1)
        self.enc1_res = ResBlock(c0, c1, td, g)
        self.enc1_self = SelfAttention(c1, g)
        self.enc1_cross = CrossAttention(c1, cfg.text_dim, g)
        self.mid_res = ResBlock(c1, c1, td, g)
        self.dec1_res = ResBlock(2 * c1, c1, td, g)
        self.dec1_self = SelfAttention(c1, g)
        self.dec1_cross = CrossAttention(c1, cfg.text_dim, g)
        self.up1 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(c1, c1, 3, padding=1))
        self.dec0_res = ResBlock(c1 + c0, c0, td, g)
        self.dec0_self = SelfAttention(c0, g)
        self.dec0_cross = CrossAttention(c0, cfg.text_dim, g)
        self.out = nn.Sequential(nn.GroupNorm(g, c0), nn.SiLU(), nn.Conv2d(c0, cfg.latent_channels, 3, padding=1))

    def time_embedding(self, t: torch.Tensor) -> torch.Tensor:
        dtype = self.conv_in.weight.dtype
        return self.time_embed(timestep_embedding(t, self.config.channels[0]).to(dtype))

    def encoder_layers(self) -> list[str]:
        return list(self.ENCODER_LAYERS)

    def forward(self, z, t, text, hook: Hook = _no_hook, temb=None):
        """``z`` (N, C, h, w), ``t`` (N,), ``text`` (N, n_tokens, d) -> epsilon (N, C, h, w)."""
        if temb is None:
            temb = self.time_embedding(t)
        h = self.conv_in(z)
        h = hook("enc0.res", self.enc0_res(h, temb))
        h = hook("enc0.attn", self.enc0_cross(self.enc0_self(h), text))
        s0 = h = hook("enc0.out", h)
        h = self.down0(h)
        h = hook("enc1.res", self.enc1_res(h, temb))
        h = hook("enc1.attn", self.enc1_cross(self.enc1_self(h), text))
        s1 = h = hook("enc1.out", h)
        h = hook("mid.res", self.mid_res(h, temb))
        h = hook("mid.out", h)
        h = torch.cat([h, hook("skip1", s1)], dim=1)
        h = hook("dec1.res", self.dec1_res(h, temb))
        h = hook("dec1.attn", self.dec1_cross(self.dec1_self(h), text))
        h = self.up1(h)
        h = torch.cat([h, hook("skip0", s0)], dim=1)
        h = hook("dec0.res", self.dec0_res(h, temb))
        h = hook("dec0.attn", self.dec0_cross(self.dec0_self(h), text))
        return self.out(h)

    def save(self, path: str | Path) -> Path:
        return save_archive(path, self.state_dict(), {"kind": "t2i", **config_to_json(asdict(self.config))})

    @classmethod
    def load(cls, path: str | Path) -> "SpatialUNet":
        arrays, cfg = load_archive(path)
        if cfg.pop("kind", None) != "t2i":
            raise ArchitectureMismatch(f"{path} is not a t2i checkpoint")
        m = cls(UNetConfig(**cfg))
        m.load_state_dict(arrays)
        return m.eval()


# temporal layers -----------------------------------------------------------------

def _to_frame_axis(x: torch.Tensor, frames: int) -> tuple[torch.Tensor, tuple[int, ...]]:
    n, c, h, w = x.shape
    b = n // frames
    # (B, l, C, H, W) -> (B*H*W, l, C)
    y = x.reshape(b, frames, c, h, w).permute(0, 3, 4, 1, 2).reshape(b * h * w, frames, c)
    return y, (b, frames, c, h, w)


def _from_frame_axis(y: torch.Tensor, shape: tuple[int, ...]) -> torch.Tensor:
    b, l, c, h, w = shape
    return y.reshape(b, h, w, l, c).permute(0, 3, 4, 1, 2).reshape(b * l, c, h, w)


class TemporalConvBody(nn.Module):
    """1D convolution along frames (kernel 3, zero padding)."""

    def __init__(self, c: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, c)
        self.conv = nn.Conv1d(c, c, 3, padding=1)

    def forward(self, y):  # (M, l, C)
        y = self.norm(y.transpose(1, 2))
        return F.silu(self.conv(y)).transpose(1, 2)


class TemporalAttentionBody(nn.Module):
    """Single-head self-attention along frames with sinusoidal frame positions."""

    def __init__(self, c: int):
        super().__init__()
        self.norm = nn.LayerNorm(c)
        self.qkv = nn.Linear(c, 3 * c)

    def forward(self, y):  # (M, l, C)
        l, c = y.shape[1], y.shape[2]
        pos = torch.arange(l, dtype=torch.float64)[:, None]
        freqs = torch.exp(-math.log(100.0) * torch.arange(0, c, 2, dtype=torch.float64) / c)
        pe = torch.zeros(l, c, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(pos * freqs)
        pe[:, 1::2] = torch.cos(pos * freqs)
        q, k, v = self.qkv(self.norm(y) + pe.to(y.dtype)).chunk(3, dim=-1)
        return _attend(q, k, v)


class TemporalBlock(nn.Module):
    """Temporal half of a pseudo-3D block: ``s + proj_out(body(s))`` on spatial output ``s``."""

    def __init__(self, c: int, kind: str, groups: int):
        super().__init__()
        self.kind = kind
        self.body = TemporalConvBody(c, groups) if kind == "conv" else TemporalAttentionBody(c)
        self.proj_out = zero_module(nn.Linear(c, c))

    def forward(self, s: torch.Tensor, frames: int) -> torch.Tensor:
        if frames < 1:
            raise BranchShapeError("main.temporal", "frame axis has length 0")
        y, shape = _to_frame_axis(s, frames)
        return s + _from_frame_axis(self.proj_out(self.body(y)), shape)


def pseudo3d_forward(u: torch.Tensor, spatial: Callable[[torch.Tensor], torch.Tensor], temporal: TemporalBlock, frames: int) -> torch.Tensor:
    """One pseudo-3D block on ``u`` laid out as (B*frames, C, h, w)."""
    if frames < 1 or u.shape[0] == 0:
        raise BranchShapeError("main", "frame axis has length 0")
    return temporal(spatial(u), frames)


# conditioning branches ----------------------------------------------------------------

def _copy(module: nn.Module) -> nn.Module:
    return copy.deepcopy(module)


class StructureBranch(nn.Module):
    """Frame-wise encoder copy fed with ``z_t + hint(c_s)``; zero convs on both ends."""

    def __init__(self, unet: SpatialUNet, hint_size: int, in_middle: bool = True):
        super().__init__()
        cfg = unet.config
        c0, c1 = cfg.channels
        lc = cfg.latent_channels
        latent = hint_size // 4
        if latent * 4 != hint_size:
            raise ArchitectureMismatch(f"hint size {hint_size} not divisible by 4")
        self.in_middle = in_middle
        self.hint = nn.Sequential(
            nn.Conv2d(1, 16, 3, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 32, 3, stride=2, padding=1), nn.SiLU(),
            zero_module(nn.Conv2d(32, lc, 3, padding=1)),
        )
        self.body = nn.ModuleDict({
            name: _copy(getattr(unet, name))
            for name in (*SpatialUNet.ENCODER_LAYERS, "mid_res")
        })
        n_out = 3 if in_middle else 2
        widths = (c0, c1, c1)[:n_out]
        self.zero_out = nn.ModuleList([zero_module(nn.Conv2d(c, c, 1)) for c in widths])

    def forward(self, z_t, c_s, temb, text) -> list[torch.Tensor]:
        b = self.body
        h = b["conv_in"](z_t + self.hint(c_s))
        h = b["enc0_cross"](b["enc0_self"](b["enc0_res"](h, temb)), text)
        f0 = h
        h = b["down0"](h)
        h = b["enc1_cross"](b["enc1_self"](b["enc1_res"](h, temb)), text)
        feats = [f0, h]
        if self.in_middle:
            feats.append(b["mid_res"](h, temb))
        return [z(f) for z, f in zip(self.zero_out, feats)]


class AppearanceBranch(nn.Module):
    """Main-encoder copy without the text cross-attention layers."""

    LAYERS = tuple(n for n in SpatialUNet.ENCODER_LAYERS if not n.endswith("_cross"))

    def __init__(self, unet: SpatialUNet):
        super().__init__()
        c0, c1 = unet.config.channels
        self.body = nn.ModuleDict({name: _copy(getattr(unet, name)) for name in self.LAYERS})
        self.zero_out = nn.ModuleList([zero_module(nn.Conv2d(c0, c0, 1)), zero_module(nn.Conv2d(c1, c1, 1))])

    def forward(self, latent, temb) -> list[torch.Tensor]:
        b = self.body
        h = b["enc0_self"](b["enc0_res"](b["conv_in"](latent), temb))
        f0 = h
        h = b["enc1_self"](b["enc1_res"](b["down0"](h), temb))
        return [self.zero_out[0](f0), self.zero_out[1](h)]


# the trident ---------------------------------------------------------------------------

PARAM_GROUPS = (
    "main.spatial",
    "main.temporal.body",
    "main.temporal.proj_out",
    "structure",
    "appearance.body",
    "appearance.zero_out",
)
TRAINABLE = {
    "structure": {"structure"},
    "temporal_appearance": {"main.temporal.body", "main.temporal.proj_out", "appearance.body", "appearance.zero_out"},
    "interpolation": {"main.temporal.body", "main.temporal.proj_out", "appearance.body", "appearance.zero_out"},
}


def param_group(name: str) -> str:
    if name.startswith("main.spatial."):
        return "main.spatial"
    if name.startswith("main.temporal."):
        return "main.temporal.proj_out" if ".proj_out." in name else "main.temporal.body"
    if name.startswith("structure."):
        return "structure"
    if name.startswith("appearance."):
        return "appearance.zero_out" if name.startswith("appearance.zero_out.") else "appearance.body"
    raise KeyError(name)


def _site_key(site: str) -> str:
    return site.replace(".", "_")


class TridentNet(nn.Module):
    def __init__(self, unet_config: UNetConfig | None = None, config: TridentConfig | None = None):
        super().__init__()
        self.config = config or TridentConfig()
        spatial = SpatialUNet(unet_config)
        ucfg = spatial.config
        c0, c1 = ucfg.channels
        widths = {"enc0": c0, "enc1": c1, "mid": c1, "dec1": c1, "dec0": c0}
        self.main = nn.ModuleDict({
            "spatial": spatial,
            "temporal": nn.ModuleDict({
                _site_key(site): TemporalBlock(widths[site.split(".")[0]], kind, ucfg.groups)
                for site, kind in SpatialUNet.TEMPORAL_SITES.items()
            }),
        })
        self.structure = StructureBranch(spatial, self.config.hint_size, self.config.structure_in_middle)
        self.appearance = AppearanceBranch(spatial)
        self.freeze_stage: str | None = None

    @property
    def spatial(self) -> SpatialUNet:
        return self.main["spatial"]

    @property
    def unet_config(self) -> UNetConfig:
        return self.spatial.config

    def forward(
        self,
        z_t: torch.Tensor,
        t: torch.Tensor,
        text: torch.Tensor,
        structure: torch.Tensor | None = None,
        ref_latents: torch.Tensor | None = None,
        ref_indices: Sequence[int] = (),
        s_struct: float | None = None,
        s_app: float | None = None,
        temporal: bool = True,
    ) -> torch.Tensor:
        """Batched forward.

        ``z_t`` (B, l, C, h, w); ``t`` (B,); ``text`` (B, n_tokens, d);
        ``structure`` (B, l, 1, H, W); ``ref_latents`` (B, R, C, h, w) placed at
        frame positions ``ref_indices``.
        """
        s_struct = self.config.s_struct if s_struct is None else s_struct
        s_app = self.config.s_app if s_app is None else s_app
        bsz, l = z_t.shape[:2]
        n = bsz * l
        spatial = self.spatial
        zf = z_t.reshape(n, *z_t.shape[2:])
        tf = t.repeat_interleave(l)
        text_f = text.repeat_interleave(l, dim=0)
        temb = spatial.time_embedding(tf)

        struct_feats = None
        if s_struct != 0 and structure is not None:
            sf = structure.reshape(n, *structure.shape[2:])
            struct_feats = dict(zip(("skip0", "skip1", "mid.out"), self.structure(zf, sf, temb, text_f)))

        app_feats = None
        if s_app != 0 and ref_latents is not None and len(ref_indices):
            r = ref_latents.shape[1]
            lat = ref_latents.reshape(bsz * r, *ref_latents.shape[2:])
            feats = self.appearance(lat, spatial.time_embedding(t.repeat_interleave(r)))
            app_feats = {
                "enc0.out": feats[0].reshape(bsz, r, *feats[0].shape[1:]),
                "enc1.out": feats[1].reshape(bsz, r, *feats[1].shape[1:]),
            }
        temporal_layers = self.main["temporal"]

        def hook(site: str, h: torch.Tensor) -> torch.Tensor:
            if temporal and site in SpatialUNet.TEMPORAL_SITES:
                h = temporal_layers[_site_key(site)](h, l)
            if app_feats is not None and site in app_feats:
                f = app_feats[site]
                hv = h.reshape(bsz, l, *h.shape[1:])
                per_frame = list(hv.unbind(1))
                for k, j in enumerate(ref_indices):
                    per_frame[j] = per_frame[j] + s_app * f[:, k]
                h = torch.stack(per_frame, dim=1).reshape_as(h)
            if struct_feats is not None and site in struct_feats:
                h = h + s_struct * struct_feats[site]
            return h

        eps = spatial(zf, tf, text_f, hook=hook, temb=temb)
        return eps.reshape(z_t.shape)

    # parameter partition ------------------------------------------------------------

    def named_groups(self) -> dict[str, dict[str, torch.Tensor]]:
        out: dict[str, dict[str, torch.Tensor]] = {g: {} for g in PARAM_GROUPS}
        for name, p in self.named_parameters():
            out[param_group(name)][name] = p
        return out

    def freeze_flags(self) -> dict[str, bool]:
        return {name: not p.requires_grad for name, p in self.named_parameters()}

    def apply_freeze(self, stage: str) -> dict[str, bool]:
        if stage not in TRAINABLE:
            raise ValueError(f"unknown stage {stage!r}")
        trainable = TRAINABLE[stage]
        for name, p in self.named_parameters():
            p.requires_grad_(param_group(name) in trainable)
        self.freeze_stage = stage
        return self.freeze_flags()

    def group_checksums(self) -> dict[str, str]:
        return {g: state_checksum(ps) for g, ps in self.named_groups().items()}

    def save(self, path: str | Path) -> Path:
        cfg = {
            "kind": "trident",
            "unet": config_to_json(asdict(self.unet_config)),
            "trident": config_to_json(asdict(self.config)),
            "freeze_stage": self.freeze_stage,
            "freeze_flags": self.freeze_flags(),
        }
        return save_archive(path, self.state_dict(), cfg)

    @classmethod
    def load(cls, path: str | Path) -> "TridentNet":
        arrays, cfg = load_archive(path)
        if cfg.get("kind") != "trident":
            raise ArchitectureMismatch(f"{path} is not a trident checkpoint")
        net = cls(UNetConfig(**cfg["unet"]), TridentConfig(**cfg["trident"]))
        net.load_state_dict(arrays)
        for name, p in net.named_parameters():
            p.requires_grad_(not cfg["freeze_flags"].get(name, False))
        net.freeze_stage = cfg.get("freeze_stage")
        return net.eval()


def _check_compatible(a: nn.Module, b: nn.Module, what: str) -> None:
    sa, sb = a.state_dict(), b.state_dict()
    if sa.keys() != sb.keys():
        missing = sorted(set(sa) ^ set(sb))[:5]
        raise ArchitectureMismatch(f"{what}: parameter names differ, e.g. {missing}")
    for k in sa:
        if sa[k].shape != sb[k].shape:
            raise ArchitectureMismatch(f"{what}: {k} has shape {tuple(sb[k].shape)}, expected {tuple(sa[k].shape)}")


def init_from_t2i(
    t2i: SpatialUNet,
    config: TridentConfig | None = None,
    structure: StructureBranch | None = None,
    stage: str = "temporal_appearance",
) -> TridentNet:
    """Build a trident around a trained T2I model.

    Spatial weights are copied bitwise, temporal bodies are randomly initialised
    from ``config.seed``, every projection-out and zero convolution starts at
    zero, the appearance body is the T2I encoder minus cross-attention, and the
    structure branch is either the given pretrained one or a fresh encoder copy.
    """
    config = config or TridentConfig()
    torch.manual_seed(config.seed)
    net = TridentNet(t2i.config, config)
    _check_compatible(net.spatial, t2i, "t2i")
    net.spatial.load_state_dict(t2i.state_dict())
    net.appearance = AppearanceBranch(net.spatial)
    if structure is not None:
        fresh = StructureBranch(net.spatial, config.hint_size, config.structure_in_middle)
        _check_compatible(fresh, structure, "structure")
        fresh.load_state_dict(structure.state_dict())
        net.structure = fresh
    else:
        net.structure = StructureBranch(net.spatial, config.hint_size, config.structure_in_middle)
    net.apply_freeze(stage)
    return net


def swap_spatial_weights(net: TridentNet, new_t2i: SpatialUNet) -> TridentNet:
    """Copy of ``net`` whose main-branch spatial weights come from ``new_t2i``."""
    _check_compatible(net.spatial, new_t2i, "t2i")
    out = copy.deepcopy(net)
    flags = {n: p.requires_grad for n, p in out.spatial.named_parameters()}
    out.spatial.load_state_dict(new_t2i.state_dict())
    for n, p in out.spatial.named_parameters():
        p.requires_grad_(flags[n])
    return out


def count_layers(names: Sequence[str], kind: str = "cross") -> int:
    return sum(1 for n in names if n.endswith(f"_{kind}"))


def trident_forward(
    net: TridentNet,
    z_t: torch.Tensor,
    t: int | torch.Tensor,
    text: torch.Tensor,
    structure: torch.Tensor | None = None,
    ref_latents: torch.Tensor | None = None,
    ref_indices: Sequence[int] = (),
    s_struct: float | None = None,
    s_app: float | None = None,
) -> torch.Tensor:
    """Validated forward on one clip; ``z_t`` is (l, C, h, w), ``text`` (n_tokens, d).

    ``structure`` is (l, 1, H, W) and ``ref_latents`` (R, C, h, w).
    """
    if z_t.ndim != 4:
        raise BranchShapeError("main", f"z_t must be (l, C, h, w), got {tuple(z_t.shape)}")
    l = z_t.shape[0]
    ucfg = net.unet_config
    if z_t.shape[1] != ucfg.latent_channels:
        raise BranchShapeError("main", f"expected {ucfg.latent_channels} latent channels, got {z_t.shape[1]}")
    if z_t.shape[2] % 2 or z_t.shape[3] % 2:
        raise BranchShapeError("main", f"latent size {tuple(z_t.shape[2:])} must be even")
    if text.shape != (ucfg.n_tokens, ucfg.text_dim):
        raise BranchShapeError("text", f"expected ({ucfg.n_tokens}, {ucfg.text_dim}), got {tuple(text.shape)}")
    if structure is not None:
        if structure.shape[0] != l:
            raise BranchShapeError("structure", f"{structure.shape[0]} structure maps for {l} frames")
        want = (1, z_t.shape[2] * 4, z_t.shape[3] * 4)
        if tuple(structure.shape[1:]) != want:
            raise BranchShapeError("structure", f"maps must be {want}, got {tuple(structure.shape[1:])}")
    if ref_latents is not None:
        if ref_latents.shape[0] != len(ref_indices):
            raise BranchShapeError("appearance", f"{ref_latents.shape[0]} latents for {len(ref_indices)} indices")
        if tuple(ref_latents.shape[1:]) != tuple(z_t.shape[1:]):
            raise BranchShapeError("appearance", f"reference latent {tuple(ref_latents.shape[1:])} != {tuple(z_t.shape[1:])}")
        for j in ref_indices:
            if not 0 <= j < l:
                raise BranchShapeError("appearance", f"reference index {j} outside [0, {l})")
    t = torch.as_tensor(t).reshape(1)
    return net(
        z_t[None], t, text[None],
        structure=None if structure is None else structure[None],
        ref_latents=None if ref_latents is None else ref_latents[None],
        ref_indices=tuple(ref_indices),
        s_struct=s_struct, s_app=s_app,
    )[0]
