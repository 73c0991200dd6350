"""Ponto de entrada `fasr`: prepare, train, infer, eval e ablate."""
import argparse
import json
import logging
import sys
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq
import torch
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from evaluation.EvalReport import EvalOptions, ExternalScorer, evaluate_dir
from models.GeneratorNet import clamp_for_export, tiled_forward
from models.system import parameter_report, system_from_manifest
from srdata.ImagePipeline import bicubic_downscale, crop_to_multiple
from srdata.image_files import gravar_imagem_png, ler_imagem_png
from srdata.synthetic import write_synthetic_corpus
from training.Trainer import ExperimentConfig, Trainer, load_train_config
from training.checkpoint import latest_checkpoint, load_checkpoint, load_prefixed
from utils.config import ler_toml, mesclar, validar
from utils.exceptions import CheckpointError, ConfigurationError
from utils.functions import GerenciadorArquivos, configurar_logging, definir_determinismo
from utils.settings import Settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

PACKAGE = "fasrgan"


def versao_codigo() -> str:
    try:
        return metadata.version(PACKAGE)
    except metadata.PackageNotFoundError:
        return "0+unknown"


class RunManifest(BaseModel):
    """Manifesto único de um diretório de execução."""
    model_config = ConfigDict(extra="forbid")

    command: str
    config: Dict[str, Any]
    code_version: str = Field(default_factory=versao_codigo)
    seed: int
    deterministic: bool
    started_at: datetime
    finished_at: Optional[datetime] = None
    final_step: Optional[int] = None
    outputs: Dict[str, str] = Field(default_factory=dict)
    resumed_at: List[datetime] = Field(default_factory=list)

    def save(self, run_dir: Path) -> Path:
        return GerenciadorArquivos.gravar_atomico(
            Path(run_dir) / "manifest.json",
            lambda tmp: tmp.write_text(self.model_dump_json(indent=2), encoding="utf-8"),
        )

    @staticmethod
    def load(run_dir: Path) -> "RunManifest":
        caminho = Path(run_dir) / "manifest.json"
        if not caminho.is_file():
            raise ConfigurationError(f"Diretório sem manifest.json: {run_dir}")
        return RunManifest.model_validate_json(caminho.read_text(encoding="utf-8"))


def resolver_device(nome: str) -> str:
    if nome.startswith("cuda") and not torch.cuda.is_available():
        logger.warning(f"Dispositivo {nome} indisponível, usando cpu.")
        return "cpu"
    return nome


def criar_run_dir(runs_dir: Path, rotulo: str) -> Path:
    run_dir = Path(runs_dir) / GerenciadorArquivos.gerar_nome_execucao(rotulo)
    sufixo = 1
    base = run_dir
    while run_dir.exists():
        run_dir = base.with_name(f"{base.name}-{sufixo}")
        sufixo += 1
    for sub in ("checkpoints", "logs", "samples"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    return run_dir


def _overrides_execucao(args: argparse.Namespace) -> Dict[str, Any]:
    """Sobrescritas de linha de comando aplicadas sobre o TOML antes da validação."""
    data: Dict[str, Any] = {}
    train: Dict[str, Any] = {}
    if getattr(args, "hr_dir", None) is not None:
        data["hr_dir"] = args.hr_dir
    if getattr(args, "scale", None) is not None:
        data["scale"] = args.scale
    if getattr(args, "patch", None) is not None:
        data["patch_size_lr"] = args.patch
    if getattr(args, "batch", None) is not None:
        train["batch"] = args.batch
    if args.seed is not None:
        train["seed"] = args.seed
    if args.deterministic is not None:
        train["deterministic"] = args.deterministic
    overrides: Dict[str, Any] = {}
    if data:
        overrides["data"] = data
    if train:
        overrides["train"] = train
    return overrides


def _scorer(args: argparse.Namespace, settings: Settings) -> Optional[ExternalScorer]:
    comando = getattr(args, "scorer", None) or settings.perceptual_scorer
    return ExternalScorer(comando) if comando else None


def cmd_prepare(args: argparse.Namespace, settings: Settings) -> int:
    """Gera os LR bicúbicos em <out>/X<scale>, pulando arquivos já preparados."""
    definir_determinismo(args.seed or 0, args.deterministic is not False)
    out_dir = Path(args.out_dir)
    hr_dir = Path(args.hr_dir) if args.hr_dir else None

    if args.synthetic:
        hr_dir = out_dir / "HR"
        write_synthetic_corpus(hr_dir, args.synthetic, args.size, seed=args.seed or 0)
    if hr_dir is None:
        raise ConfigurationError("Informe --hr-dir ou --synthetic N")

    try:
        arquivos = GerenciadorArquivos.listar_arquivos_by_path(hr_dir, ["png"])
    except ValueError as e:
        raise ConfigurationError(str(e)) from e

    lr_dir = out_dir / f"X{args.scale}"
    lr_dir.mkdir(parents=True, exist_ok=True)
    checksums_path = lr_dir / "checksums.json"
    checksums: Dict[str, Dict[str, str]] = (
        json.loads(checksums_path.read_text(encoding="utf-8")) if checksums_path.is_file() else {}
    )

    escritos, pulados = 0, 0
    for stem, info in tqdm(arquivos.items(), desc="prepare", disable=None):
        destino = lr_dir / f"{stem}.png"
        hr_hash = GerenciadorArquivos.calcular_checksum(info.caminho_completo)
        registro = checksums.get(stem)
        if destino.is_file() and registro and registro.get("hr") == hr_hash \
                and registro.get("lr") == GerenciadorArquivos.calcular_checksum(destino):
            pulados += 1
            continue

        hr = crop_to_multiple(ler_imagem_png(info.caminho_completo), args.scale)
        lr = bicubic_downscale(hr, args.scale)
        GerenciadorArquivos.gravar_atomico(destino, lambda tmp: gravar_imagem_png(tmp, lr))
        checksums[stem] = {"hr": hr_hash, "lr": GerenciadorArquivos.calcular_checksum(destino)}
        escritos += 1

    GerenciadorArquivos.gravar_atomico(
        checksums_path,
        lambda tmp: tmp.write_text(json.dumps(checksums, indent=2, sort_keys=True), encoding="utf-8"),
    )
    logger.info(f"prepare: escritos={escritos} pulados={pulados} em {lr_dir}")
    print(f"written={escritos} skipped={pulados} out={lr_dir}")
    return EXIT_OK


def _executar_treino(config: ExperimentConfig, run_dir: Path, settings: Settings,
                     scorer: Optional[ExternalScorer], command: str) -> Trainer:
    manifest = RunManifest(
        command=command,
        config=config.model_dump(mode="json"),
        seed=config.train.seed,
        deterministic=config.train.deterministic,
        started_at=datetime.now(),
        outputs={"run_dir": str(run_dir), "metrics": str(run_dir / "logs" / "metrics.log")},
    )
    manifest.save(run_dir)

    trainer = Trainer(config, run_dir=run_dir, device=resolver_device(settings.device), scorer=scorer)
    trainer.fit()

    manifest.finished_at = datetime.now()
    manifest.final_step = trainer.state.step
    manifest.outputs["checkpoint"] = str(latest_checkpoint(run_dir / "checkpoints"))
    manifest.save(run_dir)
    return trainer


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    """Treina um experimento novo ou retoma um diretório de execução (--resume)."""
    if args.resume:
        return _retomar_treino(args, settings)
    if not args.config:
        raise ConfigurationError("Informe o arquivo de configuração ou --resume RUN_DIR")

    config = load_train_config(args.config, _overrides_execucao(args))
    run_dir = criar_run_dir(args.runs_dir or settings.runs_dir, config.train.mode)
    configurar_logging(run_dir / "logs" / "run.log", args.log_level)
    logger.info(f"Execução {run_dir} iniciada a partir de {args.config}")

    trainer = _executar_treino(config, run_dir, settings, _scorer(args, settings), "train")
    print(f"run_dir={run_dir} step={trainer.state.step}")
    return EXIT_OK


def _retomar_treino(args: argparse.Namespace, settings: Settings) -> int:
    if any(getattr(args, k) is not None for k in ("hr_dir", "scale", "patch", "batch")):
        raise ConfigurationError("--hr-dir/--scale/--patch/--batch não se aplicam a --resume")
    run_dir = Path(args.resume)
    manifest = RunManifest.load(run_dir)
    checkpoint = latest_checkpoint(run_dir / "checkpoints")
    configurar_logging(run_dir / "logs" / "run.log", args.log_level)

    archive_step = int(load_checkpoint(checkpoint)["step"])
    if manifest.final_step is not None and manifest.final_step != archive_step:
        raise CheckpointError(
            f"Manifesto registra passo {manifest.final_step}, checkpoint mais recente está em {archive_step}"
        )
    if args.seed is not None:
        logger.warning("--seed ignorado na retomada; vale a semente do manifesto.")

    trainer = Trainer.resume(checkpoint, run_dir=run_dir, device=resolver_device(settings.device),
                             scorer=_scorer(args, settings))
    if args.total_steps is not None:
        trainer.config.train.total_steps = args.total_steps
        manifest.config["train"]["total_steps"] = args.total_steps
    manifest.resumed_at.append(datetime.now())
    manifest.save(run_dir)

    trainer.fit()
    manifest.finished_at = datetime.now()
    manifest.final_step = trainer.state.step
    manifest.outputs["checkpoint"] = str(latest_checkpoint(run_dir / "checkpoints"))
    manifest.save(run_dir)
    print(f"run_dir={run_dir} step={trainer.state.step}")
    return EXIT_OK


def _entradas(caminho: Path) -> List[Path]:
    if caminho.is_dir():
        return [Path(info.caminho_completo)
                for info in GerenciadorArquivos.listar_arquivos_by_path(caminho, ["png"]).values()]
    if caminho.is_file():
        return [caminho]
    raise ConfigurationError(f"Entrada não encontrada: {caminho}")


def cmd_infer(args: argparse.Namespace, settings: Settings) -> int:
    """Amplia uma imagem (ou diretório) com o gerador de um checkpoint."""
    definir_determinismo(args.seed or 0, args.deterministic is not False)
    archive = load_checkpoint(args.checkpoint)
    manifest = archive["manifest"]
    if args.scale is not None and args.scale != manifest["scale"]:
        raise CheckpointError(f"Checkpoint treinado para x{manifest['scale']}, pedido x{args.scale}")

    system = system_from_manifest(manifest)
    load_prefixed(system, archive["model"], ("gen.", "shared."), strict=True)
    device = resolver_device(settings.device)
    rede = system.generator_path().to(device).eval()

    entradas = _entradas(Path(args.input))
    saida = Path(args.out)
    para_diretorio = Path(args.input).is_dir() or saida.suffix.lower() != ".png"
    for caminho in tqdm(entradas, desc="infer", disable=None):
        lr = torch.from_numpy(ler_imagem_png(caminho)).permute(2, 0, 1)[None].to(device)
        with torch.no_grad():
            sr = clamp_for_export(tiled_forward(rede, lr, manifest["scale"], args.tile, args.overlap))
        destino = saida / f"{caminho.stem}.png" if para_diretorio else saida
        gravar_imagem_png(destino, sr[0].permute(1, 2, 0).cpu().numpy())
        logger.info(f"{caminho.name} -> {destino} ({tuple(sr.shape[-2:])})")
    print(f"images={len(entradas)} out={saida}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    """Avalia SR contra HR, imprime a tabela e grava o relatório."""
    options = EvalOptions(
        scale=args.scale,
        border_crop=args.crop_border,
        crop_by_scale=args.crop_by_scale,
        rmse_on_rgb=args.rgb_rmse,
        workers=args.workers,
        scorer=args.scorer or settings.perceptual_scorer,
    )
    relatorio = evaluate_dir(args.sr_dir, args.hr_dir, options)
    out_dir = Path(args.out) if args.out else Path(args.sr_dir).parent / f"{Path(args.sr_dir).name}_eval"
    relatorio.write(out_dir)
    print(relatorio.to_table())
    print(f"report={out_dir}")
    return EXIT_OK


def _linha_ablacao(nome: str, trainer: Trainer, run_dir: Path) -> Dict[str, Any]:
    config = trainer.config
    validacao = trainer.validate()
    finais = [r for r in trainer.metrics.records if r.get("phase") in ("pretrain", "gan")]
    ultimo = finais[-1] if finais else {}
    return {
        "arm": nome,
        "mode": config.train.mode,
        "attention_enabled": config.train.attention_enabled,
        "sharing_enabled": config.model.sharing_enabled,
        "shared_blocks": config.model.shared_blocks if trainer.system.uses_shared else 0,
        "trunk_blocks": trainer.system.trunk_blocks,
        **{f"params_{k}": v for k, v in parameter_report(trainer.system).items()},
        "steps": trainer.state.step,
        "l1": ultimo.get("l1", float("nan")),
        "l_total": ultimo.get("l_total", float("nan")),
        "val_psnr_y": validacao["val_psnr_y"],
        "val_rmse": validacao["val_rmse"],
        "run_dir": str(run_dir),
    }


def cmd_ablate(args: argparse.Namespace, settings: Settings) -> int:
    """Executa cada braco ([[arms]]) sobre a configuração [base] e grava a tabela comparativa."""
    dados = ler_toml(args.config)
    base = dados.get("base", {})
    bracos = dados.get("arms", [])
    if not bracos:
        raise ConfigurationError(f"Nenhum braco [[arms]] em {args.config}")
    nomes = [b.get("name") for b in bracos]
    if any(not n for n in nomes) or len(set(nomes)) != len(nomes):
        raise ConfigurationError(f"Braços precisam de nomes únicos: {nomes}")

    configs = {}
    for braco in bracos:
        sobrescrita = {k: v for k, v in braco.items() if k != "name"}
        mesclado = mesclar(mesclar(base, sobrescrita), _overrides_execucao(args))
        configs[braco["name"]] = validar(ExperimentConfig, mesclado)

    raiz = criar_run_dir(args.runs_dir or settings.runs_dir, "ablate")
    configurar_logging(raiz / "logs" / "run.log", args.log_level)
    scorer = _scorer(args, settings)

    linhas = []
    for nome, config in configs.items():
        run_dir = raiz / nome
        for sub in ("checkpoints", "logs", "samples"):
            (run_dir / sub).mkdir(parents=True, exist_ok=True)
        logger.info(f"Braço {nome}: modo {config.train.mode}")
        trainer = _executar_treino(config, run_dir, settings, scorer, f"ablate:{nome}")
        linhas.append(_linha_ablacao(nome, trainer, run_dir))

    tabela = pd.DataFrame(linhas)
    pq.write_table(pa.Table.from_pandas(tabela, preserve_index=False), raiz / "comparison.parquet")
    tabela.to_csv(raiz / "comparison.csv", index=False)
    print(tabela.drop(columns=["run_dir"]).to_string(index=False))
    print(f"ablation_dir={raiz}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    comum = argparse.ArgumentParser(add_help=False)
    comum.add_argument("--seed", type=int, default=None, help="Semente global")
    comum.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                       help="Algoritmos determinísticos do torch")
    comum.add_argument("--verbose", "-v", action="store_true", help="Log em nível DEBUG")

    dados = argparse.ArgumentParser(add_help=False)
    dados.add_argument("--hr-dir", default=None, help="Diretório HR (substitui [data].hr_dir)")
    dados.add_argument("--scale", type=int, default=None, help="Fator de ampliação (substitui [data].scale)")
    dados.add_argument("--patch", type=int, default=None, help="Lado do recorte LR (substitui [data].patch_size_lr)")
    dados.add_argument("--batch", type=int, default=None, help="Tamanho do lote (substitui [train].batch)")

    parser = argparse.ArgumentParser(prog="fasr", description="Super-resolução adversarial com atenção fina")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[comum], help="Gera os LR bicúbicos")
    p.add_argument("--hr-dir", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--synthetic", type=int, default=0, metavar="N", help="Gera N imagens HR sintéticas")
    p.add_argument("--size", type=int, default=128, help="Lado das imagens sintéticas")
    p.set_defaults(handler=cmd_prepare)

    p = sub.add_parser("train", parents=[comum, dados], help="Treina ou retoma uma execução")
    p.add_argument("config", nargs="?", default=None)
    p.add_argument("--resume", default=None, metavar="RUN_DIR")
    p.add_argument("--total-steps", type=int, default=None, help="Novo total de passos na retomada")
    p.add_argument("--runs-dir", default=None)
    p.add_argument("--scorer", default=None, help="Comando do avaliador perceptual externo")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", parents=[comum], help="Amplia imagens com um checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--tile", type=int, default=0, help="Lado do bloco LR (0 desativa)")
    p.add_argument("--overlap", type=int, default=16)
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("eval", parents=[comum], help="PSNR-Y, RMSE e SSIM de um diretório")
    p.add_argument("--sr-dir", required=True)
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--crop-border", type=int, default=0)
    p.add_argument("--crop-by-scale", action="store_true")
    p.add_argument("--rgb-rmse", action="store_true")
    p.add_argument("--scorer", default=None)
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", parents=[comum, dados], help="Executa a matriz de ablação")
    p.add_argument("config")
    p.add_argument("--runs-dir", default=None)
    p.add_argument("--scorer", default=None)
    p.set_defaults(handler=cmd_ablate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    settings = Settings.carregar()
    args.log_level = "DEBUG" if args.verbose else settings.log_level
    configurar_logging(level=args.log_level)
    try:
        return args.handler(args, settings)
    except ConfigurationError as e:
        logger.error(f"Erro de configuração: {e}")
        print(f"erro: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.exception(f"Falha em {args.command}: {e}")
        print(f"erro: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
