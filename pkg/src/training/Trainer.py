import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional

import numpy as np
import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from evaluation.EvalReport import ExternalScorer, mean_finite
from evaluation.Metrics import psnr, rmse
from models.GeneratorNet import clamp_for_export
from models.SharedExtractor import assert_shared
from models.system import Mode, ModelConfig, SRSystem
from srdata.ImagePipeline import DatasetConfig, ImagePair, PairBatch, batch_iterator, load_corpus
from srdata.image_files import gravar_imagem_png
from training.Losses import (
    LOSS_KEYS, LossConfig, LossWeights, attention_l1, build_feature_extractor,
    discriminator_mask_objective, discriminator_objective, ensure_finite,
    generator_mask_objective, generator_objective, generator_total, l1_content,
    perceptual, plain_gan_losses,
)
from training.checkpoint import (
    GENERATOR_KEYS, check_manifest, checkpoint_name, load_checkpoint, load_prefixed, save_checkpoint,
)
from utils.config import ler_toml, mesclar, validar
from utils.exceptions import CheckpointError, ConfigurationError
from utils.functions import definir_determinismo

logger = logging.getLogger(__name__)

RUNNING_DECAY = 0.98


class TrainConfig(BaseModel):
    """Protocolo de otimização."""
    model_config = ConfigDict(extra="forbid")

    mode: Mode
    lr0: float = Field(1e-4, gt=0.0)
    lr_halve_every: int = Field(200_000, gt=0)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    batch: int = Field(16, ge=1)
    total_steps: int = Field(1000, ge=0)
    pretrain_steps: int = Field(200, ge=0)
    seed: int = 0
    deterministic: bool = True
    shared_update_policy: Literal["both", "generator-only", "discriminator-only"] = "both"
    attention_enabled: bool = True
    clip_grad_norm: Optional[float] = Field(None, gt=0.0)
    checkpoint_every: int = Field(0, ge=0)
    val_every: int = Field(0, ge=0)
    val_hr_dir: Optional[Path] = None
    val_images: int = Field(2, ge=1)
    pretrained_checkpoint: Optional[Path] = None


class ExperimentConfig(BaseModel):
    """Arquivo de experimento completo: [data], [model], [loss], [train]."""
    model_config = ConfigDict(extra="forbid")

    data: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    loss: LossConfig = LossConfig()
    train: TrainConfig

    @property
    def weights(self) -> LossWeights:
        return self.loss.weights


def load_train_config(caminho: str | Path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Lê o TOML do experimento e valida o esquema.

    Raises:
        ConfigurationError: Arquivo inválido ou chaves fora do esquema (listadas na mensagem)
    """
    dados = ler_toml(caminho)
    if overrides:
        dados = mesclar(dados, overrides)
    return validar(ExperimentConfig, dados)


def lr_at(step: int, config: TrainConfig) -> float:
    """lr0 · 0.5^floor(step / lr_halve_every)."""
    if step < 0:
        raise ValueError(f"step negativo: {step}")
    return config.lr0 * 0.5 ** (step // config.lr_halve_every)


@dataclass
class TrainState:
    step: int = 0
    lr: float = 0.0
    running: Dict[str, float] = field(default_factory=dict)


def format_record(record: Dict[str, Any]) -> str:
    return " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in record.items())


def parse_record(linha: str) -> Dict[str, Any]:
    registro: Dict[str, Any] = {}
    for par in linha.split():
        chave, valor = par.split("=", 1)
        try:
            registro[chave] = int(valor)
        except ValueError:
            try:
                registro[chave] = float(valor)
            except ValueError:
                registro[chave] = valor
    return registro


class MetricsLog:
    """Registros key=value, um por linha, sem carimbo de tempo."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self.records: List[Dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: Dict[str, Any]) -> None:
        self.records.append(dict(record))
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as arquivo:
                arquivo.write(format_record(record) + "\n")

    @staticmethod
    def read(path: str | Path) -> List[Dict[str, Any]]:
        with open(path, encoding="utf-8") as arquivo:
            return [parse_record(linha) for linha in arquivo if linha.strip()]


class Trainer:
    """
    Pré-treino L1 e treino adversarial alternado (D depois G, razão 1:1).

    O extrator compartilhado aparece nos dois otimizadores; a política
    shared_update_policy decide qual passo de fato o atualiza.

    Args:
        config: ExperimentConfig validado
        run_dir: Diretório da execução (checkpoints/, logs/, samples/); None não grava nada
        device: Dispositivo torch
        scorer: Avaliador perceptual externo usado na validação
        corpus: Corpus já carregado (senão load_corpus)
        feature_extractor: Substitui o Φ configurado
    """

    def __init__(self, config: ExperimentConfig, run_dir: Optional[Path] = None, device: str = "cpu",
                 scorer: Optional[ExternalScorer] = None, corpus: Optional[List[ImagePair]] = None,
                 feature_extractor: Optional[nn.Module] = None, load_pretrained: bool = True):
        self.config = config
        tc = config.train
        definir_determinismo(tc.seed, tc.deterministic)

        self.device = torch.device(device)
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.scorer = scorer
        self.data_config = config.data.model_copy(update={"batch_size": tc.batch})
        self.corpus = corpus if corpus is not None else load_corpus(self.data_config)
        self._val_corpus: Optional[List[ImagePair]] = None

        patch_hr = self.data_config.patch_size_lr * self.data_config.scale
        self.system = SRSystem(tc.mode, config.model, self.data_config.scale, patch_hr).to(self.device)

        if feature_extractor is not None:
            self.phi = feature_extractor
        elif tc.mode == "psnr-pretrain":
            self.phi = None
        else:
            self.phi = build_feature_extractor(config.loss.perceptual, config.loss.perceptual_pretrained)
        if self.phi is not None:
            self.phi = self.phi.to(self.device)

        betas = (tc.adam_beta1, tc.adam_beta2)
        shared = self.system.shared_parameters()
        self.opt_g = torch.optim.Adam(self.system.generator_parameters() + shared,
                                      lr=tc.lr0, betas=betas, eps=tc.adam_eps)
        self.opt_d: Optional[torch.optim.Adam] = None
        if self.system.disc is not None:
            d_params = self.system.discriminator_parameters()
            if self.system.sharing_active:
                d_params = d_params + shared
            self.opt_d = torch.optim.Adam(d_params, lr=tc.lr0, betas=betas, eps=tc.adam_eps)

        self.pretrain_steps = 0 if tc.pretrained_checkpoint else tc.pretrain_steps
        self.state = TrainState(step=0, lr=lr_at(0, tc))
        self.metrics = MetricsLog(self.run_dir / "logs" / "metrics.log" if self.run_dir else None)

        if tc.pretrained_checkpoint and load_pretrained:
            self.load_generator(tc.pretrained_checkpoint)

    def in_pretraining(self) -> bool:
        return self.config.train.mode == "psnr-pretrain" or self.state.step < self.pretrain_steps

    def _set_lr(self) -> None:
        self.state.lr = lr_at(self.state.step, self.config.train)
        for opt in (self.opt_g, self.opt_d):
            if opt is None:
                continue
            for grupo in opt.param_groups:
                grupo["lr"] = self.state.lr

    def _clip(self, params: Iterable[nn.Parameter]) -> None:
        if self.config.train.clip_grad_norm:
            torch.nn.utils.clip_grad_norm_([p for p in params if p.grad is not None],
                                           self.config.train.clip_grad_norm)

    def _drop_shared_grads(self) -> None:
        for p in self.system.shared_parameters():
            p.grad = None

    def _check_mask(self, mask: torch.Tensor, ref: torch.Tensor) -> None:
        if mask.shape[0] != ref.shape[0] or mask.shape[2:] != ref.shape[2:] \
                or mask.shape[1] not in (ref.shape[1], 1):
            raise ConfigurationError(
                f"Mapa de pontuação {tuple(mask.shape)} incompatível com a imagem {tuple(ref.shape)}"
            )

    def _finish_step(self, phase: str, losses: Dict[str, torch.Tensor]) -> Dict[str, Any]:
        record: Dict[str, Any] = {"step": self.state.step, "phase": phase, "lr": float(self.state.lr)}
        for chave in LOSS_KEYS:
            if chave not in losses:
                continue
            valor = float(losses[chave].detach())
            record[chave] = valor
            anterior = self.state.running.get(chave)
            self.state.running[chave] = valor if anterior is None else \
                RUNNING_DECAY * anterior + (1.0 - RUNNING_DECAY) * valor
        self.metrics.append(record)
        self.state.step += 1
        return record

    def pretrain_step(self, batch: PairBatch) -> Dict[str, Any]:
        """Um passo Adam minimizando L1 no caminho do gerador."""
        self._set_lr()
        self.system.train()
        batch = batch.to(self.device)

        self.opt_g.zero_grad(set_to_none=True)
        sr = self.system.generate(batch.lr)
        l1 = l1_content(sr, batch.hr)
        ensure_finite({"l1": l1}, self.state.step)
        l1.backward()
        self._clip(self.system.generator_path().parameters())
        self.opt_g.step()
        return self._finish_step("pretrain", {"l1": l1, "l_total": l1})

    def discriminator_update(self, batch: PairBatch) -> Dict[str, torch.Tensor]:
        """Atualiza o discriminador com o gerador congelado (amostras falsas sem gradiente)."""
        sistema = self.system
        convencao = self.config.loss.convention
        with torch.no_grad():
            fake = sistema.generate(batch.lr)

        self.opt_d.zero_grad(set_to_none=True)
        if sistema.fine_grained:
            c_r, m_r = sistema.discriminate(batch.hr)
            c_f, m_f = sistema.discriminate(fake)
            self._check_mask(m_f, batch.hr)
            parts = {
                "d_adv": discriminator_objective(c_r, c_f, convencao),
                "d_mask": discriminator_mask_objective(m_r, m_f, convencao),
            }
            loss = parts["d_adv"] + parts["d_mask"]
        else:
            d_real = sistema.discriminate(batch.hr)
            d_fake = sistema.discriminate(fake)
            loss, _ = plain_gan_losses(d_real, d_fake, self.config.loss.non_saturating, convencao)
            parts = {"d_adv": loss}

        ensure_finite(parts, self.state.step)
        loss.backward()
        if self.config.train.shared_update_policy == "generator-only":
            self._drop_shared_grads()
        self._clip(p for grupo in self.opt_d.param_groups for p in grupo["params"])
        self.opt_d.step()
        return parts

    def generator_update(self, batch: PairBatch) -> Dict[str, torch.Tensor]:
        """
        Atualiza o gerador (e o extrator compartilhado, conforme a política) minimizando
        L1 + λ1·L_adv + λ2·L_attention + λ3·L_percep, com o discriminador congelado.
        """
        sistema = self.system
        tc = self.config.train
        convencao = self.config.loss.convention
        exclusivos = sistema.discriminator_parameters()
        for p in exclusivos:
            p.requires_grad_(False)
        try:
            self.opt_g.zero_grad(set_to_none=True)
            sr = sistema.generate(batch.lr)
            parts: Dict[str, torch.Tensor] = {"l1": l1_content(sr, batch.hr)}
            if self.phi is not None:
                parts["l_percep"] = perceptual(sr, batch.hr, self.phi)

            if sistema.fine_grained:
                if sistema.uses_shared:
                    # o caminho real passa pelo extrator compartilhado
                    c_r, m_r = sistema.discriminate(batch.hr)
                else:
                    with torch.no_grad():
                        c_r, m_r = sistema.discriminate(batch.hr)
                c_f, m_f = sistema.discriminate(sr)
                self._check_mask(m_f, batch.hr)
                parts["l_adv_entire"] = generator_objective(c_r, c_f, convencao)
                parts["l_adv_fine"] = generator_mask_objective(m_r, m_f, convencao)
                if tc.attention_enabled:
                    parts["l_attention"] = attention_l1(sr, batch.hr, m_f)
            else:
                d_fake = sistema.discriminate(sr)
                _, parts["l_adv_entire"] = plain_gan_losses(
                    d_fake.detach(), d_fake, self.config.loss.non_saturating, convencao
                )

            total = generator_total(parts, self.config.weights, self.state.step)
            ensure_finite({"l_total": total}, self.state.step)
            total.backward()
            if tc.shared_update_policy == "discriminator-only":
                self._drop_shared_grads()
            self._clip(p for grupo in self.opt_g.param_groups for p in grupo["params"])
            self.opt_g.step()
        finally:
            for p in exclusivos:
                p.requires_grad_(True)
        parts["l_total"] = total
        return parts

    def gan_step(self, batch: PairBatch) -> Dict[str, Any]:
        """Passo adversarial: atualização do D seguida da atualização do G."""
        if self.system.disc is None:
            raise ConfigurationError(f"Modo {self.config.train.mode} não tem fase adversarial")
        self._set_lr()
        self.system.train()
        batch = batch.to(self.device)

        d_parts = self.discriminator_update(batch)
        g_parts = self.generator_update(batch)
        if self.system.sharing_active:
            assert_shared(self.system.generator_path(), self.system.discriminator_path(), strict=True)
        return self._finish_step("gan", {**g_parts, **d_parts})

    def step(self, batch: PairBatch) -> Dict[str, Any]:
        return self.pretrain_step(batch) if self.in_pretraining() else self.gan_step(batch)

    def fit(self, max_steps: Optional[int] = None) -> TrainState:
        """
        Treina até total_steps (ou por max_steps passos), validando e gravando checkpoints.

        O fluxo de lotes recomeça no lote de índice state.step, de modo que uma
        execução retomada vê exatamente os mesmos lotes.
        """
        tc = self.config.train
        alvo = tc.total_steps if max_steps is None else min(tc.total_steps, self.state.step + max_steps)
        fluxo = batch_iterator(self.data_config, tc.seed, start_batch=self.state.step, corpus=self.corpus)
        logger.info(f"Treinando {tc.mode} do passo {self.state.step} até {alvo}")

        with tqdm(total=alvo, initial=self.state.step, desc=tc.mode, disable=None) as barra:
            while self.state.step < alvo:
                self.step(next(fluxo))
                passo = self.state.step
                if tc.val_every and passo % tc.val_every == 0:
                    self.validate()
                if self.run_dir is not None and tc.checkpoint_every and passo % tc.checkpoint_every == 0:
                    self.save()
                barra.update(1)

        if self.run_dir is not None:
            self.save()
        return self.state

    def _validation_corpus(self) -> List[ImagePair]:
        if self._val_corpus is None:
            tc, dc = self.config.train, self.data_config
            val_cfg = DatasetConfig(
                hr_dir=tc.val_hr_dir,
                scale=dc.scale,
                synthetic_images=tc.val_images,
                synthetic_size=dc.synthetic_size,
                synthetic_seed=dc.synthetic_seed + 1,
            )
            self._val_corpus = load_corpus(val_cfg, check_patch=False)
        return self._val_corpus

    @torch.no_grad()
    def validate(self) -> Dict[str, Any]:
        """PSNR-Y e RMSE do gerador no conjunto de validação; grava amostras em samples/."""
        passo = self.state.step
        psnrs, rmses, percepcoes = [], [], []
        self.system.eval()
        try:
            for par in self._validation_corpus():
                lr = torch.from_numpy(par.lr).permute(2, 0, 1)[None].to(self.device)
                sr = clamp_for_export(self.system.generate(lr))[0].permute(1, 2, 0).cpu().numpy()
                sr = sr.astype(np.float64)
                psnrs.append(psnr(sr, par.hr))
                rmses.append(rmse(sr, par.hr))
                if self.run_dir is not None:
                    amostra = gravar_imagem_png(
                        self.run_dir / "samples" / f"step_{passo:08d}_{par.id}.png", sr
                    )
                    if self.scorer is not None:
                        percepcoes.append(self.scorer(amostra))
        finally:
            self.system.train()

        record: Dict[str, Any] = {
            "step": passo, "phase": "val",
            "val_psnr_y": float(np.mean(psnrs)), "val_rmse": float(np.mean(rmses)),
        }
        if percepcoes:
            record["val_perceptual"] = mean_finite(percepcoes)
        self.metrics.append(record)
        logger.info(f"Validação no passo {passo}: PSNR-Y={record['val_psnr_y']:.3f} RMSE={record['val_rmse']:.5f}")
        return record

    def checkpoint_payload(self) -> Dict[str, Any]:
        return {
            "manifest": self.system.manifest(),
            "step": self.state.step,
            "lr": self.state.lr,
            "model": self.system.state_dict(),
            "optim_g": self.opt_g.state_dict(),
            "optim_d": self.opt_d.state_dict() if self.opt_d is not None else None,
            "torch_rng": torch.get_rng_state(),
            "running": dict(self.state.running),
            "config": self.config.model_dump(mode="json"),
        }

    def save(self, destino: Optional[str | Path] = None) -> Path:
        if destino is None:
            if self.run_dir is None:
                raise CheckpointError("Sem run_dir nem destino para o checkpoint")
            destino = self.run_dir / "checkpoints" / checkpoint_name(self.state.step)
        return save_checkpoint(destino, self.checkpoint_payload())

    def load_state(self, caminho: str | Path) -> TrainState:
        """
        Restaura modelo, otimizadores, RNG e contadores de um checkpoint.

        Raises:
            CheckpointError: Arquivo corrompido ou arquitetura divergente
        """
        archive = load_checkpoint(caminho)
        check_manifest(self.system.manifest(), archive["manifest"])
        try:
            self.system.load_state_dict(archive["model"])
            self.opt_g.load_state_dict(archive["optim_g"])
            if self.opt_d is not None:
                if archive.get("optim_d") is None:
                    raise CheckpointError("Checkpoint sem estado do otimizador do discriminador")
                self.opt_d.load_state_dict(archive["optim_d"])
        except (RuntimeError, ValueError, KeyError) as e:
            raise CheckpointError(f"Estado incompatível em {caminho}: {e}") from e

        self.state = TrainState(
            step=int(archive["step"]),
            lr=lr_at(int(archive["step"]), self.config.train),
            running=dict(archive.get("running", {})),
        )
        if archive.get("torch_rng") is not None:
            torch.set_rng_state(archive["torch_rng"])
        self._set_lr()
        logger.info(f"Treino retomado de {caminho} no passo {self.state.step}")
        return self.state

    def load_generator(self, caminho: str | Path) -> None:
        """Inicializa o caminho do gerador a partir de um checkpoint (ex.: psnr-pretrain)."""
        archive = load_checkpoint(caminho)
        check_manifest(self.system.manifest(), archive["manifest"], GENERATOR_KEYS)
        load_prefixed(self.system, archive["model"], ("gen.", "shared."))
        logger.info(f"Gerador inicializado de {caminho}")

    @classmethod
    def resume(cls, caminho: str | Path, run_dir: Optional[Path] = None, device: str = "cpu",
               scorer: Optional[ExternalScorer] = None, corpus: Optional[List[ImagePair]] = None,
               feature_extractor: Optional[nn.Module] = None) -> "Trainer":
        """Recria o Trainer com a configuração gravada no checkpoint e restaura o estado."""
        archive = load_checkpoint(caminho)
        config = validar(ExperimentConfig, archive.get("config") or {})
        trainer = cls(config, run_dir=run_dir, device=device, scorer=scorer, corpus=corpus,
                      feature_extractor=feature_extractor, load_pretrained=False)
        trainer.load_state(caminho)
        return trainer
