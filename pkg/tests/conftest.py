import os
import sys
from pathlib import Path

import numpy as np
import pytest

from conceptinc import numkit as nk
from conceptinc.cli.config import RunConfig
from conceptinc.toyldm import ModelConfig, ToyModel, Vocabulary, init_weights, make_schedule
from conceptinc.toyldm.patterns import ConceptSpec

SMALL = dict(time_hidden=16, mlp_hidden=16, timesteps=20)


def small_model(seed: int = 0, **overrides) -> ToyModel:
    """Randomly initialized (untrained) toy model, small enough for gradient checks."""
    cfg = ModelConfig(**{**SMALL, "seed": seed, **overrides})
    rng = nk.Rng(cfg.seed)
    vocab = Vocabulary(cfg.dim, rng)
    sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    return ToyModel(cfg, vocab, sched, init_weights(cfg, rng).freeze())


def blob(cid="c1", n=1, filler="sks", center=(2.5, 5.0)):
    return ConceptSpec(cid, "blob", center, 1.4, (0.8, 0.6, -0.6, 0.2),
                       tokens=(f"v{n}", f"v{n}n"), init_words=(filler, "blob"))


@pytest.fixture
def model():
    return small_model()


@pytest.fixture(scope="session")
def base_cache_dir():
    """Shared base-weight cache; pretraining runs at most once per machine."""
    path = Path(os.environ.get("CONCEPTINC_CACHE", Path.home() / ".cache" / "conceptinc"))
    path.mkdir(parents=True, exist_ok=True)
    return path


@pytest.fixture(scope="session")
def toy_model(base_cache_dir):
    from conceptinc.cli.commands import load_model

    return load_model(RunConfig(base=base_cache_dir / f"base-{ModelConfig().digest()}.citf"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
