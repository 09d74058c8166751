import numpy as np
import pytest

from skillseg.datagen import locations_1d, make_synthetic_dataset
from skillseg.model import SkillModel
from skillseg.objective import TrainConfig


def tiny_config(**overrides) -> TrainConfig:
    """Small shapes so forward passes and losses run in milliseconds."""
    base = dict(s_skills=3, n_max=2, rnn_size=8, linear_size=6, t_steps=60,
                sub_len=12, iwae_k=2, batch_size=4,
                cap_d=(0.0, 1.0, 100), cap_s=(0.0, 1.0, 100), omega=(1.0, 0.2, 100))
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def tiny_cfg() -> TrainConfig:
    return tiny_config()


@pytest.fixture
def tiny_model(tiny_cfg) -> SkillModel:
    return SkillModel(tiny_cfg.model_config(1), seed=3)


@pytest.fixture
def tiny_batch(tiny_cfg) -> np.ndarray:
    rng = np.random.default_rng(11)
    return np.cumsum(rng.standard_normal((4, tiny_cfg.t_steps, 1)) * 0.05, axis=1)


@pytest.fixture(scope="session")
def small_1d_dataset():
    return make_synthetic_dataset(locations_1d(3), per_length=20, n_max=2,
                                  t_steps=60, seed=5, name="tiny-1d")
