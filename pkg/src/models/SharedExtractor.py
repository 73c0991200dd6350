import logging
from typing import Iterator

import torch
import torch.nn as nn

from models.GeneratorNet import RRDB, RRDBConfig, scaled_kaiming_
from utils.exceptions import ConfigurationError, SharingViolationError

logger = logging.getLogger(__name__)


class SharedExtractor(nn.Module):
    """
    Extrator raso de E RRDBs usado pelos caminhos do gerador (LR) e do discriminador (SR/HR).

    Totalmente convolucional: a saída tem o mesmo tamanho espacial da entrada.

    Args:
        config: RRDBConfig; num_blocks é o E
        in_channels: Canais da imagem (C)
    """

    def __init__(self, config: RRDBConfig, in_channels: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.num_features = config.num_features
        self.entry_conv = nn.Conv2d(in_channels, config.num_features, 3, 1, 1)
        self.blocks = nn.Sequential(*[RRDB(config) for _ in range(config.num_blocks)])
        scaled_kaiming_([self.blocks], scale=0.1)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"Extrator espera {self.in_channels} canais, recebeu {x.shape[1]}"
            )
        return self.blocks(self.entry_conv(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.extract(x)


class FeaturePath(nn.Module):
    """Composição extrator -> cabeça; representa o caminho do gerador ou do discriminador."""

    def __init__(self, extractor: nn.Module, head: nn.Module):
        super().__init__()
        self.extractor = extractor
        self.head = head

    def forward(self, x: torch.Tensor):
        return self.head(self.extractor(x))


def _extractor_params(path: nn.Module) -> Iterator[tuple[str, torch.Tensor]]:
    extractor = path.extractor if isinstance(path, FeaturePath) else path
    return extractor.named_parameters()


def assert_shared(gen_path: nn.Module, disc_path: nn.Module, strict: bool = False) -> bool:
    """
    Verifica se os dois caminhos referenciam exatamente o mesmo armazenamento de parâmetros.

    Args:
        gen_path: Caminho do gerador (FeaturePath ou o próprio extrator)
        disc_path: Caminho do discriminador
        strict: Levanta SharingViolationError em vez de retornar False

    Returns:
        True se todos os tensores do extrator são os mesmos nos dois caminhos
    """
    gen = dict(_extractor_params(gen_path))
    disc = dict(_extractor_params(disc_path))
    divergentes = [
        nome for nome in gen.keys() | disc.keys()
        if nome not in gen or nome not in disc
        or gen[nome] is not disc[nome]
        or gen[nome].data_ptr() != disc[nome].data_ptr()
    ]
    if divergentes:
        logger.debug(f"Parâmetros não compartilhados: {sorted(divergentes)[:5]}")
        if strict:
            raise SharingViolationError(
                f"Extrator compartilhado divergiu em {len(divergentes)} tensores: {sorted(divergentes)[:5]}"
            )
        return False
    return True
