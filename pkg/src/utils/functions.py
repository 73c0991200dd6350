import os
import random
import logging
import hashlib
import tempfile
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional

import numpy as np
import torch

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configurar_logging(log_file: Optional[Path] = None, level: str = "INFO") -> None:
    """
    Configura o logging da aplicação (arquivo + console).

    Args:
        log_file: Caminho do arquivo de log; None registra só no console
        level: Nível de log (DEBUG, INFO, ...)
    """
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def definir_determinismo(seed: int, deterministic: bool = True) -> None:
    """
    Fixa as sementes de python, numpy e torch.

    Args:
        seed: Semente global
        deterministic: Ativa os algoritmos determinísticos do torch
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if deterministic:
        # exigido pelo cuBLAS quando os algoritmos determinísticos estão ativos
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.use_deterministic_algorithms(True)
        torch.backends.cudnn.benchmark = False
    logger.debug(f"Semente {seed} aplicada (determinístico={deterministic}).")


@dataclass
class ArquivoInfo:
    """Representa informações de um arquivo."""
    nome: str
    caminho_completo: str
    extensao: str
    tamanho: int


class GerenciadorArquivos:
    """Classe para gerenciamento de arquivos e diretórios de imagens e execuções."""

    @staticmethod
    def obter_info_arquivo(caminho: Path) -> Optional[ArquivoInfo]:
        """
        Obtém informações de um arquivo específico.

        Args:
            caminho: Path do arquivo a ser analisado

        Returns:
            ArquivoInfo se sucesso, None se falhar
        """
        try:
            return ArquivoInfo(
                nome=caminho.stem,
                caminho_completo=str(caminho),
                extensao=caminho.suffix.lstrip('.').lower(),
                tamanho=caminho.stat().st_size
            )
        except OSError as e:
            logger.error(f"Erro ao processar arquivo {caminho}: {e}")
            return None

    @staticmethod
    def validar_diretorio(diretorio: Path) -> None:
        """
        Valida se o diretório existe e é realmente um diretório.

        Args:
            diretorio: Path do diretório a ser validado

        Raises:
            ValueError: Se o diretório não for válido
        """
        if not diretorio.exists():
            raise ValueError(f"Diretório não encontrado: {diretorio}")

        if not diretorio.is_dir():
            raise ValueError(f"O caminho especificado não é um diretório: {diretorio}")

    @staticmethod
    def listar_arquivos_by_path(diretorio: str | Path,
                                extensoes: Optional[Iterable[str]] = None) -> Dict[str, ArquivoInfo]:
        """
        Lista os arquivos de um diretório (sem subpastas), indexados pelo nome sem extensão.

        Args:
            diretorio: Caminho do diretório a ser analisado
            extensoes: Extensões aceitas (sem ponto); None aceita todas

        Returns:
            Dicionário stem -> ArquivoInfo, ordenado pelo stem

        Raises:
            ValueError: Se o diretório não existir
        """
        caminho = Path(diretorio)
        GerenciadorArquivos.validar_diretorio(caminho)
        aceitas = {e.lower().lstrip('.') for e in extensoes} if extensoes else None

        arquivos_info: Dict[str, ArquivoInfo] = {}
        for arquivo_path in sorted(caminho.iterdir()):
            if not arquivo_path.is_file():
                continue
            info = GerenciadorArquivos.obter_info_arquivo(arquivo_path)
            if info and (aceitas is None or info.extensao in aceitas):
                arquivos_info[info.nome] = info

        logger.info(f"Encontrados {len(arquivos_info)} arquivos em {diretorio}")
        return dict(sorted(arquivos_info.items()))

    @staticmethod
    def calcular_checksum(caminho: str | Path) -> str:
        """
        Calcula o SHA-256 do conteúdo de um arquivo.

        Args:
            caminho: Arquivo a ser lido

        Returns:
            Hash hexadecimal
        """
        hash_obj = hashlib.sha256()
        with open(caminho, "rb") as arquivo:
            for bloco in iter(lambda: arquivo.read(1 << 20), b""):
                hash_obj.update(bloco)
        return hash_obj.hexdigest()

    @staticmethod
    def gravar_atomico(destino: str | Path, escritor: Callable[[Path], None]) -> Path:
        """
        Grava um arquivo via arquivo temporário + rename, nunca deixando escrita parcial.

        Args:
            destino: Caminho final
            escritor: Função que recebe o caminho temporário e grava o conteúdo

        Returns:
            Caminho final gravado
        """
        destino = Path(destino)
        destino.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{destino.name}.", suffix=".tmp", dir=destino.parent)
        os.close(fd)
        try:
            escritor(Path(tmp))
            os.replace(tmp, destino)
        except Exception:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        return destino

    @staticmethod
    def gerar_nome_execucao(modo: str, momento: Optional[datetime] = None) -> str:
        """
        Gera o nome do diretório de uma execução: <timestamp>-<modo>.

        Args:
            modo: Modo de treino ou rótulo da execução
            momento: Data/hora base; padrão agora

        Returns:
            Nome do diretório
        """
        momento = momento or datetime.now()
        return f"{momento.strftime('%Y%m%d-%H%M%S')}-{modo}"
