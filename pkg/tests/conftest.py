import numpy as np
import pytest

from streaming_am.config import EncoderConfig, init_weights
from streaming_am.frontend import FeatureSequence, FrontendConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(family: str, **overrides) -> EncoderConfig:
    """Tiny configurations for each family with 8-dim, 10 ms input features."""
    base = dict(family=family, name=f"tiny-{family}", input_dim=8, input_rate_ms=10)
    if family in ("emformer", "amtrf", "transformer_offline"):
        base.update(
            layers=2,
            model_dim=8,
            heads=2,
            head_dim=4,
            ffn_dim=16,
            frontend=FrontendConfig(projection=4, stack=2, order="project_then_stack"),
        )
        if family != "transformer_offline":
            base.update(c_ms=60, r_ms=40, l_ms=80, memory=2)
    elif family == "lstm":
        base.update(
            layers=2,
            model_dim=6,
            frontend=FrontendConfig(lookahead_stack=2, order="lookahead_then_passthrough"),
            c_ms=50,
            subsample=((0, 2),),
        )
    else:
        base.update(layers=2, model_dim=5, c_ms=40, r_ms=30, subsample=((0, 2),))
    base.update(overrides)
    return EncoderConfig(**base)


def random_features(rng, frames: int, dim: int = 8, rate: int = 10) -> FeatureSequence:
    return FeatureSequence(rng.standard_normal((frames, dim)).astype(np.float32), rate)


@pytest.fixture
def tiny_emformer():
    cfg = small_config("emformer")
    return cfg, init_weights(cfg, seed=3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
