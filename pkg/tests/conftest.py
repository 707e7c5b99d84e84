from pathlib import Path

import pytest

from zlink.ingest import read_jsonl
from zlink.synth import RttBehavior, SynthConfig, generate

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def appendix_path():
    return FIXTURES / "appendix.jsonl"


@pytest.fixture
def appendix_batch(appendix_path):
    with open(appendix_path) as f:
        return read_jsonl(f)


@pytest.fixture(scope="session")
def small_chain():
    """120 blocks, exact and fee plants; shared read-only across tests."""
    cfg = SynthConfig(seed=7, n_blocks=120, rtt_behavior=RttBehavior(4, 2, 2))
    return generate(cfg)
