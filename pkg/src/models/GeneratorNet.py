import logging
import math
from typing import Iterable, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from utils.exceptions import ConfigurationError, UnsupportedScaleError

logger = logging.getLogger(__name__)


class RRDBConfig(BaseModel):
    """Hiperparâmetros dos blocos RRDB."""
    model_config = ConfigDict(extra="forbid")

    num_features: int = Field(64, ge=1)
    growth: int = Field(32, ge=1)
    num_blocks: int = Field(23, ge=1)
    residual_scale: float = Field(0.2, gt=0.0, le=1.0)


def scaled_kaiming_(modules: Iterable[nn.Module], scale: float = 0.1) -> None:
    """Inicialização Kaiming escalada (pesos × scale, bias zero) das convoluções."""
    for module in modules:
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=0, mode="fan_in")
                m.weight.data.mul_(scale)
                if m.bias is not None:
                    m.bias.data.zero_()


class DenseBlock(nn.Module):
    """Bloco denso de 5 convoluções com resíduo escalado."""

    def __init__(self, num_features: int = 64, growth: int = 32, residual_scale: float = 0.2):
        super().__init__()
        nf, gc = num_features, growth
        self.conv1 = nn.Conv2d(nf, gc, 3, 1, 1)
        self.conv2 = nn.Conv2d(nf + gc, gc, 3, 1, 1)
        self.conv3 = nn.Conv2d(nf + 2 * gc, gc, 3, 1, 1)
        self.conv4 = nn.Conv2d(nf + 3 * gc, gc, 3, 1, 1)
        self.conv5 = nn.Conv2d(nf + 4 * gc, nf, 3, 1, 1)
        self.act = nn.LeakyReLU(negative_slope=0.2)
        self.residual_scale = residual_scale

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x1 = self.act(self.conv1(x))
        x2 = self.act(self.conv2(torch.cat((x, x1), 1)))
        x3 = self.act(self.conv3(torch.cat((x, x1, x2), 1)))
        x4 = self.act(self.conv4(torch.cat((x, x1, x2, x3), 1)))
        x5 = self.conv5(torch.cat((x, x1, x2, x3, x4), 1))
        return x + self.residual_scale * x5


class RRDB(nn.Module):
    """
    Residual-in-Residual Dense Block: três DenseBlocks encadeados e um resíduo externo.

    O ramo residual é a variação produzida pela cadeia (cadeia(x) - x), de modo que
    convoluções zeradas ou residual_scale = 0 resultam exatamente na identidade.

    Args:
        config: RRDBConfig (num_features, growth, residual_scale)
    """

    def __init__(self, config: RRDBConfig):
        super().__init__()
        self.num_features = config.num_features
        self.residual_scale = config.residual_scale
        self.db1 = DenseBlock(config.num_features, config.growth, config.residual_scale)
        self.db2 = DenseBlock(config.num_features, config.growth, config.residual_scale)
        self.db3 = DenseBlock(config.num_features, config.growth, config.residual_scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.db3(self.db2(self.db1(x)))
        return x + self.residual_scale * (out - x)


def rrdb_block(features: torch.Tensor, block: RRDB) -> torch.Tensor:
    """Aplica um RRDB validando o número de canais."""
    if features.shape[1] != block.num_features:
        raise ConfigurationError(
            f"RRDB espera {block.num_features} canais, recebeu {features.shape[1]}"
        )
    return block(features)


class UpsampleX2(nn.Module):
    """Ampliação 2x por vizinho mais próximo seguida de conv + LeakyReLU."""

    def __init__(self, num_features: int = 64):
        super().__init__()
        self.conv = nn.Conv2d(num_features, num_features, 3, 1, 1)
        self.act = nn.LeakyReLU(negative_slope=0.2)

    @staticmethod
    def enlarge(x: torch.Tensor) -> torch.Tensor:
        return F.interpolate(x, scale_factor=2, mode="nearest")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.conv(self.enlarge(x)))


def build_upsampler(scale: int, num_features: int) -> nn.Sequential:
    """
    Encadeia log2(scale) estágios UpsampleX2.

    Raises:
        UnsupportedScaleError: Se scale não for potência de dois >= 2
    """
    if scale < 2 or scale & (scale - 1):
        raise UnsupportedScaleError(f"Escala {scale} não suportada (apenas potências de dois)")
    return nn.Sequential(*[UpsampleX2(num_features) for _ in range(int(math.log2(scale)))])


class GeneratorNet(nn.Module):
    """
    Gerador RRDB: extração rasa, tronco profundo com resíduo global, ampliação e reconstrução.

    Args:
        config: RRDBConfig do tronco profundo
        scale: Fator de ampliação (potência de dois)
        in_channels: Canais da imagem (C)
        with_shallow: False quando um extrator externo (compartilhado) fornece as features
    """

    def __init__(self, config: RRDBConfig, scale: int = 4, in_channels: int = 3, with_shallow: bool = True):
        super().__init__()
        nf = config.num_features
        self.config = config
        self.scale = scale
        self.in_channels = in_channels

        self.shallow: Optional[nn.Conv2d] = nn.Conv2d(in_channels, nf, 3, 1, 1) if with_shallow else None
        self.trunk = nn.Sequential(*[RRDB(config) for _ in range(config.num_blocks)])
        self.trunk_conv = nn.Conv2d(nf, nf, 3, 1, 1)
        self.upsampler = build_upsampler(scale, nf)
        self.head = nn.Sequential(
            nn.Conv2d(nf, nf, 3, 1, 1),
            nn.LeakyReLU(negative_slope=0.2),
            nn.Conv2d(nf, in_channels, 3, 1, 1),
        )
        scaled_kaiming_([self.trunk, self.trunk_conv], scale=0.1)

    @property
    def expected_channels(self) -> int:
        return self.in_channels if self.shallow is not None else self.config.num_features

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.expected_channels:
            raise ConfigurationError(
                f"Gerador espera {self.expected_channels} canais na entrada, recebeu {x.shape[1]}"
            )
        features = self.shallow(x) if self.shallow is not None else x
        features = features + self.trunk_conv(self.trunk(features))
        return self.head(self.upsampler(features))


def clamp_for_export(sr: torch.Tensor) -> torch.Tensor:
    return sr.clamp(0.0, 1.0)


def count_parameters(net: nn.Module | Iterable[nn.Module]) -> int:
    """Conta os escalares treináveis, contando uma única vez parâmetros compartilhados."""
    modules = [net] if isinstance(net, nn.Module) else list(net)
    vistos: dict[int, int] = {}
    for module in modules:
        for p in module.parameters():
            if p.requires_grad:
                vistos[id(p)] = p.numel()
    return sum(vistos.values())


def _blend_weights(length: int, overlap: int, lead: bool, trail: bool, device, dtype) -> torch.Tensor:
    """
    Pesos de mistura ao longo de um eixo do bloco (em pixels SR).

    Nas bordas internas (lead/trail) o primeiro quarto da sobreposição tem peso zero,
    descartando o efeito do preenchimento, e a metade seguinte sobe linearmente até 1.
    """
    pesos = torch.ones(length, device=device, dtype=dtype)
    if overlap <= 0:
        return pesos
    margem = overlap // 4
    rampa = max(overlap // 2, 1)
    pos = torch.arange(length, device=device, dtype=dtype)
    subida = ((pos - margem + 1) / float(rampa + 1)).clamp(0.0, 1.0)
    if lead:
        pesos = torch.minimum(pesos, subida)
    if trail:
        pesos = torch.minimum(pesos, subida.flip(0))
    return pesos


def _tile_starts(size: int, tile: int, overlap: int) -> list[int]:
    if size <= tile:
        return [0]
    passo = tile - overlap
    starts = list(range(0, size - tile, passo))
    starts.append(size - tile)
    return starts


@torch.no_grad()
def tiled_forward(net: nn.Module, lr: torch.Tensor, scale: int, tile: int, overlap: int = 16) -> torch.Tensor:
    """
    Inferência em blocos com sobreposição e mistura linear, limitando a memória.

    Args:
        net: Mapa LR -> SR
        lr: Tensor N×C×H×W
        scale: Fator de ampliação
        tile: Lado do bloco em pixels LR (<= 0 desativa)
        overlap: Sobreposição em pixels LR
    """
    n, c, h, w = lr.shape
    if tile <= 0 or (h <= tile and w <= tile):
        return net(lr)
    if overlap >= tile:
        raise ConfigurationError(f"Sobreposição {overlap} deve ser menor que o bloco {tile}")

    out: Optional[torch.Tensor] = None
    peso = torch.zeros(1, 1, h * scale, w * scale, device=lr.device, dtype=lr.dtype)
    for top in _tile_starts(h, tile, overlap):
        for left in _tile_starts(w, tile, overlap):
            bloco = lr[:, :, top:top + tile, left:left + tile]
            sr = net(bloco)
            th, tw = sr.shape[-2:]
            if out is None:
                out = torch.zeros(n, sr.shape[1], h * scale, w * scale, device=lr.device, dtype=sr.dtype)
            wy = _blend_weights(th, overlap * scale, top > 0, top + tile < h, lr.device, lr.dtype)
            wx = _blend_weights(tw, overlap * scale, left > 0, left + tile < w, lr.device, lr.dtype)
            w2d = (wy[:, None] * wx[None, :])[None, None]
            y0, x0 = top * scale, left * scale
            out[:, :, y0:y0 + th, x0:x0 + tw] += sr * w2d
            peso[:, :, y0:y0 + th, x0:x0 + tw] += w2d
    return out / peso
