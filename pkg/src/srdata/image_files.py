import logging
from pathlib import Path

import numpy as np
from PIL import Image

from utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

LOSSY_SUFFIXES = {"jpg", "jpeg", "webp", "jpe", "jfif"}


def ler_imagem_png(caminho: str | Path) -> np.ndarray:
    """
    Lê uma imagem PNG como float32 H×W×C em [0,1].

    Args:
        caminho: Caminho do arquivo

    Returns:
        Array float32; imagens em tons de cinza ficam com C = 1

    Raises:
        ConfigurationError: Se o formato for com perdas
    """
    caminho = Path(caminho)
    if caminho.suffix.lower().lstrip(".") in LOSSY_SUFFIXES:
        raise ConfigurationError(f"Formato com perdas não aceito como referência HR: {caminho.name}")

    with Image.open(caminho) as img:
        if img.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(img, dtype=np.float32) / 65535.0
            arr = arr[..., None]
        elif img.mode == "L":
            arr = np.asarray(img, dtype=np.float32)[..., None] / 255.0
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return np.clip(arr, 0.0, 1.0)


def gravar_imagem_png(caminho: str | Path, img: np.ndarray) -> Path:
    """
    Grava uma imagem float em [0,1] como PNG de 8 bits (valores arredondados).

    Args:
        caminho: Arquivo de saída
        img: Array H×W×C (C = 1 ou 3) ou H×W

    Returns:
        Caminho gravado
    """
    caminho = Path(caminho)
    caminho.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(caminho, format="PNG")
    logger.debug(f"Imagem gravada: {caminho}")
    return caminho
