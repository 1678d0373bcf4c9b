"""Shared pytest fixtures: worked-example RSA instances, small random instances, Taboo worlds."""

import numpy as np
import pytest

from foresight import datagen
from foresight.environments import RsaEnv, TabooEnv, TabooWorld
from foresight.rsa_oracle import ObjectSet
from foresight.settings import DataGenConfig, RsaGameConfig, TabooGameConfig

CIRCLES_DIMS = ("moisture", "color", "texture", "shape")
CIRCLES_OBJECTS = [
    "dry-blue-smooth-square",
    "wet-green-rough-square",
    "wet-green-smooth-square",
    "wet-blue-smooth-circle",
    "wet-blue-smooth-square",
    "dry-blue-rough-circle",
    "dry-blue-rough-square",
    "dry-blue-smooth-circle",
]
CIRCLES_TARGET = "dry-blue-smooth-circle"

CHAIN_DIMS = ("volume", "strength", "timing", "build")
CHAIN_OBJECTS = [
    "loud-weak-late-lean",
    "quiet-strong-early-fat",
    "quiet-strong-early-lean",
    "quiet-strong-late-fat",
    "quiet-strong-late-lean",
    "loud-weak-early-fat",
    "loud-weak-early-lean",
    "loud-weak-late-fat",
]
CHAIN_TARGET = "loud-weak-late-lean"

# 4 words x 6 cues; word w owns cue w, cues 4 and 5 are flat noise
TABOO_WEIGHTS = np.array([
    [0.90, 0.02, 0.02, 0.02, 0.02, 0.02],
    [0.02, 0.90, 0.02, 0.02, 0.02, 0.02],
    [0.02, 0.02, 0.90, 0.02, 0.02, 0.02],
    [0.02, 0.02, 0.02, 0.90, 0.02, 0.02],
])


@pytest.fixture
def circles_instance() -> ObjectSet:
    return ObjectSet.from_names(CIRCLES_DIMS, CIRCLES_OBJECTS, CIRCLES_TARGET, "dry-circles")


@pytest.fixture
def chain_instance() -> ObjectSet:
    return ObjectSet.from_names(CHAIN_DIMS, CHAIN_OBJECTS, CHAIN_TARGET, "loud-chain")


@pytest.fixture
def rsa_config() -> RsaGameConfig:
    return RsaGameConfig(max_features=4, max_objects=8)


@pytest.fixture
def rsa_env(rsa_config) -> RsaEnv:
    return RsaEnv(rsa_config)


@pytest.fixture
def small_datagen_config() -> DataGenConfig:
    return DataGenConfig(seed=3, rl_count=12, pretrain_count=6, min_dims=3, max_dims=3,
                         min_referents=4, max_referents=4, shuffle_objects=True)


@pytest.fixture
def small_instances(small_datagen_config):
    """Twelve solvable 3-dimension / 4-object instances."""
    return datagen.generate_rsa_corpus(small_datagen_config).instances("rl")


@pytest.fixture
def taboo_config() -> TabooGameConfig:
    return TabooGameConfig(vocab_size=4, cue_count=6, max_turns=6, respond_top_k=2, signature_size=2)


@pytest.fixture
def taboo_env(taboo_config) -> TabooEnv:
    return TabooEnv(taboo_config)


@pytest.fixture
def taboo_world() -> TabooWorld:
    return TabooWorld(weights=TABOO_WEIGHTS.copy(), target_index=0, max_turns=6, world_id="hand-built")


@pytest.fixture
def taboo_worlds(taboo_config):
    return datagen.generate_taboo_worlds(11, 20, taboo_config)


@pytest.fixture
def run_dir(tmp_path):
    path = tmp_path / "run"
    path.mkdir()
    return path
