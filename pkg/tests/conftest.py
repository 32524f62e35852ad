"""Shared fixtures: a micro corpus and a micro training profile."""

import pytest

from binloc import spatial as S
from binloc.config import ExperimentConfig
from binloc.model import ModelConfig


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    """Tiny two-azimuth, two-environment corpus for trainer plumbing tests."""
    root = tmp_path_factory.mktemp("corpus")
    kinds = list(S.SOURCE_KINDS)
    sources = {f"s{i:02d}": S.make_source(kinds[i % 4], seed=500 + i)
               for i in range(4)}
    manifest = S.build_dataset(
        sources, (90, 270),
        {"AE": S.anechoic_scene(), "RV": S.reverberant_scene()},
        ratio=0.5, seed=11, out_dir=root,
        test_sources={"t00": S.make_source("white-noise", seed=900)})
    return root / "manifest.jsonl", manifest


def micro_config(**overrides) -> ExperimentConfig:
    """A configuration small enough to train in well under a second."""
    base = ExperimentConfig(
        model=ModelConfig(dim=16, heads=2, mlp_dim=16, layers=1, stride=24,
                          dropout=0.0),
        lr=1e-3, batch=8, epochs=2, use_cache=False,
    )
    return base.override(**overrides) if overrides else base
