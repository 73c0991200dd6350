import logging
import tomllib
from pathlib import Path
from typing import Any, Dict, Type, TypeVar

from pydantic import BaseModel, ValidationError

from utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


def ler_toml(caminho: str | Path) -> Dict[str, Any]:
    """
    Lê um arquivo de configuração TOML.

    Args:
        caminho: Caminho do arquivo

    Returns:
        Dicionário com as seções aninhadas

    Raises:
        ConfigurationError: Se o arquivo não existir ou não for TOML válido
    """
    caminho = Path(caminho)
    if not caminho.is_file():
        raise ConfigurationError(f"Arquivo de configuração não encontrado: {caminho}")
    try:
        with open(caminho, "rb") as arquivo:
            return tomllib.load(arquivo)
    except tomllib.TOMLDecodeError as e:
        logger.error(f"TOML inválido em {caminho}: {e}")
        raise ConfigurationError(f"TOML inválido em {caminho}: {e}") from e


def validar(modelo: Type[ModelT], dados: Dict[str, Any]) -> ModelT:
    """
    Valida um dicionário contra um modelo pydantic.

    Raises:
        ConfigurationError: listando todas as chaves problemáticas
    """
    try:
        return modelo.model_validate(dados)
    except ValidationError as e:
        chaves = sorted({".".join(str(p) for p in erro["loc"]) or "<raiz>" for erro in e.errors()})
        detalhes = "; ".join(
            f"{'.'.join(str(p) for p in erro['loc'])}: {erro['msg']}" for erro in e.errors()
        )
        logger.error(f"Configuração inválida: {detalhes}")
        err = ConfigurationError(f"Chaves inválidas: {', '.join(chaves)} ({detalhes})")
        err.offending_keys = chaves
        raise err from e


def mesclar(base: Dict[str, Any], sobrescrita: Dict[str, Any]) -> Dict[str, Any]:
    """Mescla recursivamente dois dicionários de configuração (sobrescrita vence)."""
    resultado = dict(base)
    for chave, valor in sobrescrita.items():
        if isinstance(valor, dict) and isinstance(resultado.get(chave), dict):
            resultado[chave] = mesclar(resultado[chave], valor)
        else:
            resultado[chave] = valor
    return resultado
