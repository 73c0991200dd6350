import logging
from typing import List, Literal, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


class DiscriminatorConfig(BaseModel):
    """Hiperparâmetros dos dois discriminadores."""
    model_config = ConfigDict(extra="forbid")

    base_channels: int = Field(64, ge=1)
    max_channels: int = Field(512, ge=1)
    depth: int = Field(4, ge=1)
    fc_hidden: int = Field(100, ge=1)
    mask_channels: Literal["image", "single"] = "image"
    score_pooling: Literal["flatten", "adaptive"] = "flatten"
    use_bn: bool = False
    plain_stages: int = Field(5, ge=1)
    tail_channels: int = Field(64, ge=1)


def _conv_block(in_ch: int, out_ch: int, use_bn: bool) -> List[nn.Module]:
    layers: List[nn.Module] = []
    for entrada in (in_ch, out_ch):
        layers.append(nn.Conv2d(entrada, out_ch, 3, 1, 1))
        if use_bn:
            layers.append(nn.BatchNorm2d(out_ch))
        layers.append(nn.LeakyReLU(0.2))
    return layers


class _DecoderStage(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int, out_ch: int, use_bn: bool):
        super().__init__()
        self.block = nn.Sequential(*_conv_block(in_ch + skip_ch, out_ch, use_bn))

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.block(torch.cat((x, skip), dim=1))


class FineGrainedDiscriminator(nn.Module):
    """
    Discriminador tipo Unet com duas saídas: o logit C(x) da imagem inteira
    (encoder + duas camadas totalmente conectadas) e o mapa de pontuação M(x)
    por pixel (decoder com conexões de salto + sigmoide).

    Args:
        config: DiscriminatorConfig
        in_channels: Canais da entrada (C para imagens, num_features em modo compartilhado)
        image_channels: C da imagem; define os canais do mapa
        patch_size: Lado da entrada usada no treino (fixa a camada FC em modo flatten)
    """

    def __init__(self, config: DiscriminatorConfig, in_channels: int = 3,
                 image_channels: int = 3, patch_size: int = 192):
        super().__init__()
        self.config = config
        self.multiple = 2 ** config.depth
        if patch_size % self.multiple:
            raise ConfigurationError(
                f"patch_size {patch_size} deve ser divisível por 2^depth = {self.multiple}"
            )
        self.patch_size = patch_size
        self.grid = patch_size // self.multiple

        chs = [min(config.base_channels * 2 ** i, config.max_channels) for i in range(config.depth + 1)]
        self.channels = chs

        stages: List[nn.Module] = [nn.Sequential(*_conv_block(in_channels, chs[0], config.use_bn))]
        for i in range(1, config.depth + 1):
            stages.append(nn.Sequential(
                nn.MaxPool2d(kernel_size=2, stride=2),
                *_conv_block(chs[i - 1], chs[i], config.use_bn),
            ))
        self.encoder = nn.ModuleList(stages)

        pooling: List[nn.Module] = []
        if config.score_pooling == "adaptive":
            pooling.append(nn.AdaptiveAvgPool2d(self.grid))
        self.score_head = nn.Sequential(
            *pooling,
            nn.Flatten(),
            nn.Linear(chs[-1] * self.grid * self.grid, config.fc_hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(config.fc_hidden, 1),
        )

        self.decoder = nn.ModuleList(
            _DecoderStage(chs[i], chs[i - 1], chs[i - 1], config.use_bn)
            for i in range(config.depth, 0, -1)
        )
        mask_ch = image_channels if config.mask_channels == "image" else 1
        self.mask_head = nn.Sequential(nn.Conv2d(chs[0], mask_ch, 3, 1, 1), nn.Sigmoid())

    def _pad(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        ph, pw = (-h) % self.multiple, (-w) % self.multiple
        if ph == 0 and pw == 0:
            return x
        modo = "reflect" if ph < h and pw < w else "replicate"
        return F.pad(x, (0, pw, 0, ph), mode=modo)

    def _encode(self, x: torch.Tensor) -> List[torch.Tensor]:
        feats = []
        out = x
        for stage in self.encoder:
            out = stage(out)
            feats.append(out)
        return feats

    def _decode(self, feats: List[torch.Tensor], h: int, w: int) -> torch.Tensor:
        out = feats[-1]
        for stage, skip in zip(self.decoder, reversed(feats[:-1])):
            out = stage(out, skip)
        return self.mask_head(out)[..., :h, :w]

    def score(self, bottleneck: torch.Tensor) -> torch.Tensor:
        if self.config.score_pooling == "flatten" and bottleneck.shape[-2:] != (self.grid, self.grid):
            raise ConfigurationError(
                f"Cabeça de pontuação fixa em {self.patch_size}px; "
                f"entrada gerou gargalo {tuple(bottleneck.shape[-2:])}"
            )
        return self.score_head(bottleneck).squeeze(1)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        h, w = x.shape[-2:]
        feats = self._encode(self._pad(x))
        return self.score(feats[-1]), self._decode(feats, h, w)

    def forward_mask(self, x: torch.Tensor) -> torch.Tensor:
        """Apenas o mapa de pontuação; aceita qualquer tamanho de entrada."""
        h, w = x.shape[-2:]
        return self._decode(self._encode(self._pad(x)), h, w)


def fg_forward(x: torch.Tensor, d: FineGrainedDiscriminator) -> Tuple[torch.Tensor, torch.Tensor]:
    return d(x)


class PlainDiscriminator(nn.Module):
    """
    Discriminador estilo VGG: convoluções com stride 2 no lugar do pooling,
    conv de cauda, achatamento e duas camadas FC -> probabilidade em [0,1].
    """

    def __init__(self, config: DiscriminatorConfig, in_channels: int = 3, patch_size: int = 192):
        super().__init__()
        fator = 2 ** config.plain_stages
        if patch_size % fator:
            raise ConfigurationError(
                f"patch_size {patch_size} deve ser divisível por 2^plain_stages = {fator}"
            )
        self.patch_size = patch_size

        layers: List[nn.Module] = []
        ch_in, ch = in_channels, config.base_channels
        for i in range(config.plain_stages):
            layers.append(nn.Conv2d(ch_in, ch, 3, 1, 1))
            if config.use_bn and i > 0:
                layers.append(nn.BatchNorm2d(ch))
            layers.append(nn.LeakyReLU(0.2))
            layers.append(nn.Conv2d(ch, ch, 4, 2, 1))
            if config.use_bn:
                layers.append(nn.BatchNorm2d(ch))
            layers.append(nn.LeakyReLU(0.2))
            ch_in, ch = ch, min(ch * 2, config.max_channels)
        self.features = nn.Sequential(*layers)

        grid = patch_size // fator
        self.tail = nn.Sequential(nn.Conv2d(ch_in, config.tail_channels, 3, 1, 1), nn.LeakyReLU(0.2))
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(config.tail_channels * grid * grid, config.fc_hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(config.fc_hidden, 1),
        )

    def score_logit(self, x: torch.Tensor) -> torch.Tensor:
        if tuple(x.shape[-2:]) != (self.patch_size, self.patch_size):
            raise ConfigurationError(
                f"Discriminador VGG espera {self.patch_size}x{self.patch_size}, recebeu {tuple(x.shape[-2:])}"
            )
        return self.classifier(self.tail(self.features(x))).squeeze(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.score_logit(x))


def plain_forward(x: torch.Tensor, d: PlainDiscriminator) -> torch.Tensor:
    return d(x)


def relativistic_pair(c_real: torch.Tensor, c_fake: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Saídas do discriminador relativístico: σ(C(x_r) − E[C(x_f)]) e σ(C(x_f) − E[C(x_r)]).
    """
    if c_real.numel() == 0 or c_fake.numel() == 0:
        raise ConfigurationError("Lotes de logits vazios")
    return torch.sigmoid(c_real - c_fake.mean()), torch.sigmoid(c_fake - c_real.mean())
