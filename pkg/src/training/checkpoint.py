import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import torch
import torch.nn as nn

from utils.exceptions import CheckpointError
from utils.functions import GerenciadorArquivos

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
REQUIRED_KEYS = ("format_version", "manifest", "step", "model")

# Chaves do manifesto que definem a arquitetura do caminho do gerador
GENERATOR_KEYS = ("scale", "image_channels", "num_features", "growth", "trunk_blocks", "shared_blocks")


def checkpoint_name(step: int) -> str:
    return f"step_{step:08d}.pt"


def save_checkpoint(destino: str | Path, payload: Dict[str, Any]) -> Path:
    """
    Grava o arquivo de checkpoint de forma atômica (temporário + rename).

    Args:
        destino: Caminho final do .pt
        payload: Dicionário com manifest, step, model e estados opcionais

    Returns:
        Caminho gravado
    """
    archive = {"format_version": FORMAT_VERSION, **payload}
    faltando = [k for k in REQUIRED_KEYS if k not in archive]
    if faltando:
        raise CheckpointError(f"Checkpoint incompleto, faltam: {faltando}")
    caminho = GerenciadorArquivos.gravar_atomico(destino, lambda tmp: torch.save(archive, tmp))
    logger.info(f"Checkpoint gravado em {caminho} (step {archive['step']})")
    return caminho


def load_checkpoint(caminho: str | Path) -> Dict[str, Any]:
    """
    Lê e valida um checkpoint.

    Raises:
        CheckpointError: Arquivo ausente, corrompido ou de versão desconhecida
    """
    caminho = Path(caminho)
    if not caminho.is_file():
        raise CheckpointError(f"Checkpoint não encontrado: {caminho}")
    try:
        archive = torch.load(caminho, map_location="cpu", weights_only=True)
    except Exception as e:
        logger.error(f"Falha ao ler checkpoint {caminho}: {e}")
        raise CheckpointError(f"Checkpoint corrompido: {caminho}") from e

    if not isinstance(archive, dict) or any(k not in archive for k in REQUIRED_KEYS):
        raise CheckpointError(f"Checkpoint sem as chaves obrigatórias: {caminho}")
    if archive["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"Versão de checkpoint {archive['format_version']} não suportada (esperado {FORMAT_VERSION})"
        )
    return archive


def latest_checkpoint(diretorio: str | Path) -> Path:
    candidatos = sorted(Path(diretorio).glob("step_*.pt"))
    if not candidatos:
        raise CheckpointError(f"Nenhum checkpoint em {diretorio}")
    return candidatos[-1]


def manifest_mismatches(esperado: Dict[str, Any], encontrado: Dict[str, Any],
                        chaves: Optional[Iterable[str]] = None) -> List[str]:
    chaves = list(chaves) if chaves is not None else sorted(esperado.keys() | encontrado.keys())
    return [
        f"{k}: esperado={esperado.get(k)!r}, checkpoint={encontrado.get(k)!r}"
        for k in chaves if esperado.get(k) != encontrado.get(k)
    ]


def check_manifest(esperado: Dict[str, Any], encontrado: Dict[str, Any],
                   chaves: Optional[Iterable[str]] = None) -> None:
    """
    Recusa checkpoints cuja arquitetura difere da configuração atual.

    Raises:
        CheckpointError: listando as chaves divergentes
    """
    divergencias = manifest_mismatches(esperado, encontrado, chaves)
    if divergencias:
        logger.error(f"Manifesto incompatível: {divergencias}")
        raise CheckpointError(f"Checkpoint incompatível com a configuração: {'; '.join(divergencias)}")


def load_prefixed(module: nn.Module, state: Dict[str, torch.Tensor], prefixes: Iterable[str],
                  strict: bool = False) -> None:
    """
    Carrega no módulo apenas as entradas cujo nome começa por um dos prefixos.

    Chaves ausentes ou inesperadas geram aviso, não erro, salvo com strict=True.

    Raises:
        CheckpointError: Formas divergentes, ou chaves ausentes/inesperadas sob os prefixos com strict=True
    """
    prefixes = tuple(prefixes)
    filtrado = {k: v for k, v in state.items() if k.startswith(prefixes)}
    try:
        resultado = module.load_state_dict(filtrado, strict=False)
    except RuntimeError as e:
        raise CheckpointError(f"Pesos incompatíveis: {e}") from e
    ausentes = [k for k in resultado.missing_keys if k.startswith(prefixes)]
    inesperadas = list(resultado.unexpected_keys)
    if strict and (ausentes or inesperadas):
        raise CheckpointError(
            f"Pesos não correspondem ao manifesto: ausentes={ausentes[:5]} inesperadas={inesperadas[:5]}"
        )
    if ausentes:
        logger.warning(f"Chaves ausentes no checkpoint: {ausentes[:5]}")
    if inesperadas:
        logger.warning(f"Chaves inesperadas no checkpoint: {inesperadas[:5]}")
