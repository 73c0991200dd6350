import logging
from typing import Any, Dict, List, Literal, Optional

import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, Field

from models.Discriminators import DiscriminatorConfig, FineGrainedDiscriminator, PlainDiscriminator
from models.GeneratorNet import GeneratorNet, RRDBConfig, count_parameters
from models.SharedExtractor import FeaturePath, SharedExtractor

logger = logging.getLogger(__name__)

Mode = Literal["fasrgan", "fs-srgan", "fa-fs-srgan", "psnr-pretrain"]
SHARED_MODES = ("fs-srgan", "fa-fs-srgan")
FINE_GRAINED_MODES = ("fasrgan", "fa-fs-srgan")
DEFAULT_TRUNK = {"fasrgan": 23, "fs-srgan": 12, "fa-fs-srgan": 12}


class ModelConfig(BaseModel):
    """Arquitetura do sistema gerador/discriminador."""
    model_config = ConfigDict(extra="forbid")

    image_channels: int = Field(3, ge=1)
    num_features: int = Field(64, ge=1)
    growth: int = Field(32, ge=1)
    residual_scale: float = Field(0.2, gt=0.0, le=1.0)
    trunk_blocks: Optional[int] = Field(None, ge=1)
    shared_blocks: int = Field(1, ge=1)
    sharing_enabled: bool = True
    pretrain_layout: Literal["plain", "shared"] = "plain"
    discriminator: DiscriminatorConfig = DiscriminatorConfig()

    def rrdb(self, num_blocks: int) -> RRDBConfig:
        return RRDBConfig(num_features=self.num_features, growth=self.growth,
                          num_blocks=num_blocks, residual_scale=self.residual_scale)


def resolve_trunk_blocks(mode: str, config: ModelConfig) -> int:
    if config.trunk_blocks is not None:
        return config.trunk_blocks
    if mode == "psnr-pretrain":
        return DEFAULT_TRUNK["fs-srgan" if config.pretrain_layout == "shared" else "fasrgan"]
    return DEFAULT_TRUNK[mode]


class SRSystem(nn.Module):
    """
    Monta gerador, discriminador e (nos modos Fs) o extrator compartilhado.

    Namespaces do state_dict: shared.*, gen.*, disc.*, disc_extractor.* (este
    último só existe quando o compartilhamento está desligado).

    Args:
        mode: fasrgan | fs-srgan | fa-fs-srgan | psnr-pretrain
        config: ModelConfig
        scale: Fator de ampliação
        patch_size_hr: Lado do recorte HR de treino (fixa as camadas FC)
    """

    def __init__(self, mode: Mode, config: ModelConfig, scale: int, patch_size_hr: int):
        super().__init__()
        self.mode = mode
        self.config = config
        self.scale = scale
        self.patch_size_hr = patch_size_hr

        c = config.image_channels
        nf = config.num_features
        self.uses_shared = mode in SHARED_MODES or (
            mode == "psnr-pretrain" and config.pretrain_layout == "shared"
        )
        self.trunk_blocks = resolve_trunk_blocks(mode, config)
        trunk_cfg = config.rrdb(self.trunk_blocks)

        self.shared: Optional[SharedExtractor] = None
        self.disc_extractor: Optional[SharedExtractor] = None
        self.disc: Optional[nn.Module] = None

        if self.uses_shared:
            self.shared = SharedExtractor(config.rrdb(config.shared_blocks), c)
        self.gen = GeneratorNet(trunk_cfg, scale, c, with_shallow=not self.uses_shared)

        disc_in = nf if self.uses_shared else c
        if mode in FINE_GRAINED_MODES:
            self.disc = FineGrainedDiscriminator(config.discriminator, disc_in, c, patch_size_hr)
        elif mode == "fs-srgan":
            self.disc = PlainDiscriminator(config.discriminator, disc_in, patch_size_hr)

        if self.disc is not None and self.uses_shared and not config.sharing_enabled:
            self.disc_extractor = SharedExtractor(config.rrdb(config.shared_blocks), c)

        logger.info(
            f"Sistema {mode} montado: G={self.trunk_blocks} RRDBs, "
            f"E={config.shared_blocks if self.uses_shared else 0}, "
            f"compartilhado={self.sharing_active}, parâmetros={count_parameters(self)}"
        )

    @property
    def sharing_active(self) -> bool:
        return self.uses_shared and self.disc is not None and self.disc_extractor is None

    @property
    def fine_grained(self) -> bool:
        return isinstance(self.disc, FineGrainedDiscriminator)

    def _disc_feature_extractor(self) -> Optional[nn.Module]:
        if not self.uses_shared:
            return None
        return self.disc_extractor if self.disc_extractor is not None else self.shared

    def generate(self, lr: torch.Tensor) -> torch.Tensor:
        features = self.shared(lr) if self.shared is not None else lr
        return self.gen(features)

    def discriminate(self, x: torch.Tensor):
        if self.disc is None:
            raise RuntimeError(f"Modo {self.mode} não possui discriminador")
        extractor = self._disc_feature_extractor()
        return self.disc(extractor(x) if extractor is not None else x)

    def discriminate_mask(self, x: torch.Tensor) -> torch.Tensor:
        extractor = self._disc_feature_extractor()
        return self.disc.forward_mask(extractor(x) if extractor is not None else x)

    def generator_path(self) -> nn.Module:
        return FeaturePath(self.shared, self.gen) if self.shared is not None else self.gen

    def discriminator_path(self) -> Optional[nn.Module]:
        if self.disc is None:
            return None
        extractor = self._disc_feature_extractor()
        return FeaturePath(extractor, self.disc) if extractor is not None else self.disc

    def shared_parameters(self) -> List[nn.Parameter]:
        return list(self.shared.parameters()) if self.shared is not None else []

    def generator_parameters(self) -> List[nn.Parameter]:
        """Parâmetros exclusivos do gerador."""
        return list(self.gen.parameters())

    def discriminator_parameters(self) -> List[nn.Parameter]:
        """Parâmetros exclusivos do discriminador (inclui extrator privado, se houver)."""
        params: List[nn.Parameter] = []
        if self.disc is not None:
            params += list(self.disc.parameters())
        if self.disc_extractor is not None:
            params += list(self.disc_extractor.parameters())
        return params

    def manifest(self) -> Dict[str, Any]:
        """Descrição da arquitetura gravada nos checkpoints."""
        return {
            "mode": self.mode,
            "scale": self.scale,
            "patch_size_hr": self.patch_size_hr,
            "image_channels": self.config.image_channels,
            "num_features": self.config.num_features,
            "growth": self.config.growth,
            "residual_scale": self.config.residual_scale,
            "trunk_blocks": self.trunk_blocks,
            "shared_blocks": self.config.shared_blocks if self.uses_shared else 0,
            "sharing_enabled": self.config.sharing_enabled,
            "discriminator": self.config.discriminator.model_dump(),
        }


def parameter_report(system: SRSystem) -> Dict[str, int]:
    """Contagem de parâmetros por caminho (compartilhados contados uma vez no total)."""
    disc_path = system.discriminator_path()
    return {
        "generator_path": count_parameters(system.generator_path()),
        "discriminator_path": count_parameters(disc_path) if disc_path is not None else 0,
        "shared": count_parameters(system.shared) if system.shared is not None else 0,
        "total": count_parameters(system),
    }


def system_from_manifest(manifest: Dict[str, Any]) -> SRSystem:
    """Reconstrói o sistema descrito no manifesto de um checkpoint."""
    config = ModelConfig(
        image_channels=manifest["image_channels"],
        num_features=manifest["num_features"],
        growth=manifest["growth"],
        residual_scale=manifest.get("residual_scale", 0.2),
        trunk_blocks=manifest["trunk_blocks"],
        shared_blocks=max(manifest["shared_blocks"], 1),
        sharing_enabled=manifest["sharing_enabled"],
        pretrain_layout="shared" if manifest["shared_blocks"] > 0 else "plain",
        discriminator=DiscriminatorConfig(**manifest["discriminator"]),
    )
    return SRSystem(manifest["mode"], config, manifest["scale"], manifest["patch_size_hr"])
