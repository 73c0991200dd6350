import logging
from typing import Callable, Dict, List, Tuple

import numpy as np
import pytest
import torch
import torch.nn as nn

from models.Discriminators import DiscriminatorConfig
from models.system import ModelConfig
from srdata.ImagePipeline import DatasetConfig, ImagePair, load_corpus
from training.Trainer import ExperimentConfig
from utils.config import mesclar, validar

logger = logging.getLogger(__name__)

TINY_DISC = {
    "base_channels": 4,
    "max_channels": 8,
    "depth": 2,
    "fc_hidden": 8,
    "plain_stages": 2,
    "tail_channels": 4,
}

TINY_EXPERIMENT: Dict = {
    "data": {"scale": 4, "patch_size_lr": 4, "synthetic_images": 2, "synthetic_size": 32},
    "model": {
        "num_features": 8,
        "growth": 4,
        "trunk_blocks": 1,
        "shared_blocks": 1,
        "discriminator": TINY_DISC,
    },
    "loss": {"perceptual": "identity"},
    "train": {"batch": 2, "total_steps": 10, "pretrain_steps": 0, "lr0": 1e-3, "seed": 0},
}

TINY_TOML = """
[data]
scale = 4
patch_size_lr = 4
synthetic_images = 2
synthetic_size = 32

[model]
num_features = 8
growth = 4
trunk_blocks = 1
shared_blocks = 1

[model.discriminator]
base_channels = 4
max_channels = 8
depth = 2
fc_hidden = 8
plain_stages = 2
tail_channels = 4

[loss]
perceptual = "identity"

[train]
mode = "{mode}"
batch = 2
total_steps = {total_steps}
pretrain_steps = {pretrain_steps}
lr0 = 1e-3
"""


def tiny_experiment(mode: str, **overrides) -> ExperimentConfig:
    """Experimento mínimo (redes de 8 canais, recortes LR 4x4) para os testes."""
    dados = mesclar(TINY_EXPERIMENT, {"train": {"mode": mode}})
    return validar(ExperimentConfig, mesclar(dados, overrides))


def tiny_toml(mode: str, total_steps: int = 10, pretrain_steps: int = 0) -> str:
    return TINY_TOML.format(mode=mode, total_steps=total_steps, pretrain_steps=pretrain_steps)


def directional_gradient_check(
    make_case: Callable[[int], Tuple[List[nn.Parameter], Callable[[], torch.Tensor]]],
    draws: int = 20,
    step: float = 1e-6,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    seed: int = 0,
) -> None:
    """
    Compara, tensor a tensor, a derivada direcional analítica com a diferença
    central (f(θ + h·v) - f(θ - h·v)) / 2h.

    A cada sorteio `make_case(i)` devolve parâmetros e objetivo novos (pesos e
    entradas reinicializados); a direção v é gaussiana, sem viés de sinal.
    """
    gerador = torch.Generator().manual_seed(seed)
    for sorteio in range(draws):
        params, objective = make_case(sorteio)
        for p in params:
            p.grad = None
        objective().backward()
        gradientes = [torch.zeros_like(p) if p.grad is None else p.grad.detach().clone() for p in params]

        for p, g in zip(params, gradientes):
            v = torch.randn(p.shape, generator=gerador, dtype=p.dtype)
            v = v / v.norm()
            analitica = float((g * v).sum())
            with torch.no_grad():
                p.add_(step * v)
                mais = float(objective())
                p.sub_(2 * step * v)
                menos = float(objective())
                p.add_(step * v)
            numerica = (mais - menos) / (2 * step)
            assert abs(analitica - numerica) <= rtol * abs(numerica) + atol, (
                f"gradiente divergente no sorteio {sorteio}: analítico={analitica}, "
                f"numérico={numerica}, forma={tuple(p.shape)}"
            )


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        num_features=8,
        growth=4,
        trunk_blocks=1,
        shared_blocks=1,
        discriminator=DiscriminatorConfig(**TINY_DISC),
    )


@pytest.fixture
def tiny_corpus() -> List[ImagePair]:
    return load_corpus(DatasetConfig(scale=4, patch_size_lr=4, synthetic_images=2, synthetic_size=32))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
