import logging
import math
from enum import Enum
from typing import Literal, Mapping, Optional, Tuple

import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, Field

from utils.exceptions import ConfigurationError, TrainingDivergenceError

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12

# Chaves estáveis do log de métricas
LOSS_KEYS = ("l1", "l_percep", "l_adv_entire", "l_adv_fine", "l_attention", "l_total", "d_adv", "d_mask")


class AdversarialConvention(str, Enum):
    PRINTED = "printed"
    BCE = "bce"


class LossWeights(BaseModel):
    """Pesos λ1 (adversarial), λ2 (atenção) e λ3 (perceptual)."""
    model_config = ConfigDict(extra="forbid")

    lambda1: float = Field(5e-3, ge=0.0)
    lambda2: float = Field(1.0, ge=0.0)
    lambda3: float = Field(1.0, ge=0.0)


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    weights: LossWeights = LossWeights()
    convention: AdversarialConvention = AdversarialConvention.PRINTED
    non_saturating: bool = True
    perceptual: Literal["vgg19", "identity", "none"] = "vgg19"
    perceptual_pretrained: bool = True


def safe_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x.clamp(min=LOG_FLOOR))


def _check_shapes(nome: str, *tensores: torch.Tensor) -> None:
    formas = {tuple(t.shape) for t in tensores}
    if len(formas) != 1:
        raise ConfigurationError(f"{nome}: formas divergentes {sorted(formas)}")


def l1_content(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    """Média de |sr - hr| sobre todas as posições e o lote."""
    _check_shapes("l1_content", sr, hr)
    return (sr - hr).abs().mean()


def attention_l1(sr: torch.Tensor, hr: torch.Tensor, mask_fake: torch.Tensor) -> torch.Tensor:
    """
    L1 ponderado por (1 - M_f): pixels que o discriminador considera falsos pesam mais.

    O mapa é tratado como peso constante (sem gradiente para o discriminador).
    Um mapa de canal único é replicado nos C canais.

    Args:
        sr: Imagem gerada N×C×H×W
        hr: Referência N×C×H×W
        mask_fake: Mapa M_f do discriminador para sr, N×C×H×W ou N×1×H×W
    """
    _check_shapes("attention_l1", sr, hr)
    if mask_fake.shape != sr.shape:
        if mask_fake.dim() == sr.dim() and mask_fake.shape[1] == 1 \
                and mask_fake.shape[2:] == sr.shape[2:] and mask_fake.shape[0] == sr.shape[0]:
            mask_fake = mask_fake.expand_as(sr)
        else:
            raise ConfigurationError(
                f"attention_l1: mapa {tuple(mask_fake.shape)} incompatível com {tuple(sr.shape)}"
            )
    peso = 1.0 - mask_fake.detach()
    return (peso * (sr - hr).abs()).mean()


def perceptual(sr: torch.Tensor, hr: torch.Tensor, phi: nn.Module) -> torch.Tensor:
    _check_shapes("perceptual", sr, hr)
    return (phi(sr) - phi(hr)).abs().mean()


def d_adversarial(c_real: torch.Tensor, c_fake: torch.Tensor) -> torch.Tensor:
    """
    Perda relativística do discriminador, com o sinal como impresso:
    E[log(1 - σ(C_r - E C_f))] + E[log σ(C_f - E C_r)].
    """
    if c_real.numel() == 0 or c_fake.numel() == 0:
        raise ConfigurationError("d_adversarial: lote vazio")
    real_term = safe_log(1.0 - torch.sigmoid(c_real - c_fake.mean())).mean()
    fake_term = safe_log(torch.sigmoid(c_fake - c_real.mean())).mean()
    return real_term + fake_term


def g_adversarial_entire(c_real: torch.Tensor, c_fake: torch.Tensor) -> torch.Tensor:
    """Forma simétrica de d_adversarial, minimizada pelo gerador."""
    if c_real.numel() == 0 or c_fake.numel() == 0:
        raise ConfigurationError("g_adversarial_entire: lote vazio")
    real_term = safe_log(torch.sigmoid(c_real - c_fake.mean())).mean()
    fake_term = safe_log(1.0 - torch.sigmoid(c_fake - c_real.mean())).mean()
    return real_term + fake_term


def d_mask_loss(mask_real: torch.Tensor, mask_fake: torch.Tensor) -> torch.Tensor:
    """E[log(1 - M_r)] + E[log M_f]; minimizar leva M_r -> 1 e M_f -> 0."""
    _check_shapes("d_mask_loss", mask_real, mask_fake)
    return safe_log(1.0 - mask_real).mean() + safe_log(mask_fake).mean()


def g_mask_loss(mask_real: torch.Tensor, mask_fake: torch.Tensor) -> torch.Tensor:
    _check_shapes("g_mask_loss", mask_real, mask_fake)
    return safe_log(mask_real).mean() + safe_log(1.0 - mask_fake).mean()


def plain_gan_losses(d_real: torch.Tensor, d_fake: torch.Tensor,
                     non_saturating: bool = True,
                     convention: AdversarialConvention = AdversarialConvention.PRINTED
                     ) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Perdas do discriminador VGG (probabilidades) e do gerador.

    Args:
        d_real: D(hr) em (0,1)
        d_fake: D(G(lr)) em (0,1)
        non_saturating: Gerador minimiza -log D(G(lr)) em vez de log(1 - D(G(lr)))
        convention: printed mantém o sinal impresso na perda do discriminador;
            bce usa -log D(hr) - log(1 - D(G(lr)))

    Returns:
        (loss_d, loss_g)
    """
    if AdversarialConvention(convention) is AdversarialConvention.BCE:
        loss_d = -safe_log(d_real).mean() - safe_log(1.0 - d_fake).mean()
    else:
        loss_d = safe_log(1.0 - d_real).mean() + safe_log(d_fake).mean()
    if non_saturating:
        loss_g = -safe_log(d_fake).mean()
    else:
        loss_g = safe_log(1.0 - d_fake).mean()
    return loss_d, loss_g


def discriminator_objective(c_real: torch.Tensor, c_fake: torch.Tensor,
                            convention: AdversarialConvention) -> torch.Tensor:
    """Termo relativístico minimizado pelo discriminador sob a convenção escolhida."""
    if AdversarialConvention(convention) is AdversarialConvention.BCE:
        return -g_adversarial_entire(c_real, c_fake)
    return d_adversarial(c_real, c_fake)


def generator_objective(c_real: torch.Tensor, c_fake: torch.Tensor,
                        convention: AdversarialConvention) -> torch.Tensor:
    if AdversarialConvention(convention) is AdversarialConvention.BCE:
        return -d_adversarial(c_real, c_fake)
    return g_adversarial_entire(c_real, c_fake)


def discriminator_mask_objective(mask_real: torch.Tensor, mask_fake: torch.Tensor,
                                 convention: AdversarialConvention) -> torch.Tensor:
    if AdversarialConvention(convention) is AdversarialConvention.BCE:
        return -g_mask_loss(mask_real, mask_fake)
    return d_mask_loss(mask_real, mask_fake)


def generator_mask_objective(mask_real: torch.Tensor, mask_fake: torch.Tensor,
                             convention: AdversarialConvention) -> torch.Tensor:
    if AdversarialConvention(convention) is AdversarialConvention.BCE:
        return -d_mask_loss(mask_real, mask_fake)
    return g_mask_loss(mask_real, mask_fake)


def _as_float(value) -> float:
    return float(value.detach()) if isinstance(value, torch.Tensor) else float(value)


def generator_total(parts: Mapping[str, torch.Tensor | float], weights: LossWeights,
                    step: Optional[int] = None) -> torch.Tensor | float:
    """
    L_G = L_1 + λ1·L_adv + λ2·L_attention + λ3·L_percep.

    L_adv é `l_adv` se presente; senão l_adv_entire + l_adv_fine (os que existirem).
    Termos ausentes não entram na soma.

    Args:
        parts: Termos por chave (l1, l_adv | l_adv_entire/l_adv_fine, l_attention, l_percep)
        weights: LossWeights
        step: Passo atual, para o diagnóstico

    Raises:
        ConfigurationError: Se l1 estiver ausente
        TrainingDivergenceError: Se algum termo não for finito
    """
    if "l1" not in parts:
        raise ConfigurationError("generator_total: termo l1 ausente")
    ensure_finite(parts, step)

    total = parts["l1"]
    if "l_adv" in parts:
        adv = parts["l_adv"]
    else:
        adv_terms = [parts[k] for k in ("l_adv_entire", "l_adv_fine") if k in parts]
        adv = sum(adv_terms[1:], adv_terms[0]) if adv_terms else None
    if adv is not None:
        total = total + weights.lambda1 * adv
    if "l_attention" in parts:
        total = total + weights.lambda2 * parts["l_attention"]
    if "l_percep" in parts:
        total = total + weights.lambda3 * parts["l_percep"]
    return total


def ensure_finite(parts: Mapping[str, torch.Tensor | float], step: Optional[int] = None) -> None:
    """Aborta com diagnóstico se alguma perda não for finita."""
    valores = {k: _as_float(v) for k, v in parts.items()}
    nao_finitos = [k for k, v in valores.items() if not math.isfinite(v)]
    if nao_finitos:
        logger.error(f"Perda não finita no passo {step}: {nao_finitos}")
        raise TrainingDivergenceError(f"Termos não finitos: {nao_finitos}", step=step, parts=valores)


class VGGFeatureExtractor(nn.Module):
    """
    Mapa Φ congelado: VGG19 até conv5_4 antes da ativação, com normalização ImageNet.

    Imagens de um canal são replicadas em RGB.
    """

    TAP = 35

    def __init__(self, pretrained: bool = True):
        super().__init__()
        from torchvision.models import VGG19_Weights, vgg19

        weights = VGG19_Weights.DEFAULT if pretrained else None
        self.features = vgg19(weights=weights).features[:self.TAP]
        for param in self.features.parameters():
            param.requires_grad = False
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.eval()

    def train(self, mode: bool = True) -> "VGGFeatureExtractor":
        # Φ permanece em modo de avaliação
        return super().train(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        return self.features((x - self.mean) / self.std)


def build_feature_extractor(kind: str, pretrained: bool = True) -> Optional[nn.Module]:
    """
    Seleciona o extrator perceptual: vgg19 | identity | none.

    Returns:
        Módulo congelado, ou None quando a perda perceptual está desligada
    """
    if kind == "none":
        return None
    if kind == "identity":
        return nn.Identity()
    if kind == "vgg19":
        logger.info(f"Carregando VGG19 (pesos pré-treinados={pretrained})")
        return VGGFeatureExtractor(pretrained=pretrained)
    raise ConfigurationError(f"Extrator perceptual desconhecido: {kind}")
