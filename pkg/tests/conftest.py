import os
from pathlib import Path

import pytest
import torch
from hypothesis import HealthCheck, settings

from tridentvid.desk import DeskConfig, build_desk_models, tiny_desk_config
from tridentvid.network import SpatialUNet, TridentConfig, UNetConfig, init_from_t2i

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MICRO_UNET = UNetConfig(channels=(8, 16), time_dim=16, text_dim=8, groups=4)


def micro_trident(frames=3, seed=0, stage="temporal_appearance", dtype=torch.float64, randomize_zero=True, mode="edit"):
    """l=3, 8x8 latents, narrow channels; optionally with non-zero zero-init layers."""
    torch.manual_seed(seed)
    t2i = SpatialUNet(MICRO_UNET)
    cfg = TridentConfig(frames_per_run=frames, hint_size=32, seed=seed, mode=mode)
    net = init_from_t2i(t2i, cfg, stage=stage).to(dtype)
    if randomize_zero:
        gen = torch.Generator().manual_seed(seed + 100)
        with torch.no_grad():
            for name, p in net.named_parameters():
                if ".proj_out." in name or "zero_out" in name or name.startswith("structure.hint.6"):
                    p.copy_(0.1 * torch.randn(p.shape, generator=gen, dtype=torch.float64).to(dtype))
    return t2i.to(dtype), net


@pytest.fixture
def micro():
    return micro_trident


def _desk_dir(config) -> Path:
    env = os.environ.get("TRIDENTVID_DESK_DIR")
    if env:
        return Path(env)
    return Path(config.cache.mkdir("tridentvid_desk"))


@pytest.fixture(scope="session")
def desk(request):
    """Full desk-scale chain, trained once and cached across sessions (about 10 min cold)."""
    return build_desk_models(_desk_dir(request.config), DeskConfig(), verbose=True)


@pytest.fixture(scope="session")
def tiny(tmp_path_factory):
    """Barely trained chain for plumbing tests."""
    return build_desk_models(tmp_path_factory.mktemp("tiny_desk"), tiny_desk_config())
