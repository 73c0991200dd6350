"""Hierarquia de exceções do projeto."""
from typing import Any, Dict, Optional


class SuperResolutionError(Exception):
    """Base de todas as exceções do projeto."""


class ConfigurationError(SuperResolutionError, ValueError):
    """Configuração inválida (chaves, canais, corpus vazio, tamanho de entrada)."""


class DegenerateInputError(SuperResolutionError, ValueError):
    """Imagem ou recorte pequeno demais para a operação pedida."""


class UnsupportedScaleError(SuperResolutionError, ValueError):
    """Fator de escala que não é potência de dois."""


class SharingViolationError(SuperResolutionError, RuntimeError):
    """O extrator compartilhado divergiu entre gerador e discriminador."""


class TrainingDivergenceError(SuperResolutionError, RuntimeError):
    """Perda não finita durante o treino."""

    def __init__(self, message: str, step: Optional[int] = None,
                 parts: Optional[Dict[str, Any]] = None):
        self.step = step
        self.parts = dict(parts or {})
        detalhes = ", ".join(f"{k}={v}" for k, v in self.parts.items())
        super().__init__(f"{message} (step={step}; {detalhes})")


class CheckpointError(SuperResolutionError, RuntimeError):
    """Arquivo de checkpoint corrompido ou incompatível com a configuração."""


class MetricError(SuperResolutionError, ValueError):
    """Entradas inválidas para as métricas de avaliação."""
