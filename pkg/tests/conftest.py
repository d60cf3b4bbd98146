import pytest
import torch

from msemcom.config import RunConfig


def small_config(**overrides) -> RunConfig:
    """Tiny architecture for fast unit tests (32x32 images, 64 bits)."""
    cfg = RunConfig()
    cfg.data.height = cfg.data.width = 32
    cfg.data.count = 8
    cfg.encoder.widths = [8, 16, 16]
    cfg.prompt.conv_width = 16
    cfg.prompt.hidden = 32
    cfg.prompt.proj_dim = 16
    cfg.fusion.d_model = 16
    cfg.fusion.d_attn = 16
    cfg.fusion.heads = 2
    cfg.fusion.ffn_dim = 32
    cfg.fusion.stage_width = [16, 8, 8]
    cfg.channel.lb = 64
    cfg.decoder.grid_h = cfg.decoder.grid_w = 4
    cfg.decoder.width = 16
    cfg.train.epochs = 2
    cfg.train.pretrain_epochs = 2
    cfg.train.lr = 1e-3
    from msemcom.config import apply_overrides

    apply_overrides(cfg, overrides)
    return cfg.validate()


@pytest.fixture
def tiny_cfg():
    return small_config()


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


_ACCEPTANCE: list[str] = []


def record_acceptance(num: int, ok: bool, detail: str) -> None:
    """Print one acceptance line now and again in the session summary."""
    line = f"[acceptance] {'PASS' if ok else 'FAIL'} {num:>2} {detail}"
    _ACCEPTANCE.append(line)
    print("\n" + line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
