"""Corpus sintético embarcado: xadrezes, gradientes e ruído de banda limitada."""
import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from srdata.image_files import gravar_imagem_png

logger = logging.getLogger(__name__)

KINDS = ("checkerboard", "gradient", "smooth_noise", "rough_noise")


def _normalizar(img: np.ndarray) -> np.ndarray:
    lo, hi = float(img.min()), float(img.max())
    if hi - lo < 1e-12:
        return np.full_like(img, 0.5)
    return (img - lo) / (hi - lo)


def synthetic_image(kind: str, size: int, rng: np.random.Generator, channels: int = 3) -> np.ndarray:
    """
    Gera uma imagem sintética size×size×channels em [0,1].

    Args:
        kind: Um de KINDS
        size: Lado da imagem
        rng: Gerador numpy
        channels: Número de canais

    Returns:
        Array float32
    """
    yy, xx = np.indices((size, size), dtype=np.float64)

    if kind == "checkerboard":
        cell = int(rng.integers(2, max(3, size // 4)))
        board = ((yy // cell + xx // cell) % 2)[..., None]
        cor_a = rng.uniform(0.05, 0.45, size=channels)
        cor_b = rng.uniform(0.55, 0.95, size=channels)
        img = board * cor_b + (1.0 - board) * cor_a
    elif kind == "gradient":
        angulo = rng.uniform(0.0, 2.0 * np.pi)
        rampa = _normalizar(np.cos(angulo) * xx + np.sin(angulo) * yy)[..., None]
        ganho = rng.uniform(0.5, 1.0, size=channels)
        base = rng.uniform(0.0, 1.0 - ganho)
        img = base + ganho * rampa
    elif kind in ("smooth_noise", "rough_noise"):
        sigma = size / 16.0 if kind == "smooth_noise" else 1.0
        ruido = rng.standard_normal((size, size, channels))
        img = _normalizar(gaussian_filter(ruido, sigma=(sigma, sigma, 0.0), mode="wrap"))
    else:
        raise ValueError(f"Tipo de imagem sintética desconhecido: {kind}")

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synthetic_corpus(count: int, size: int, seed: int = 0, channels: int = 3) -> List[Tuple[str, np.ndarray]]:
    """
    Gera `count` imagens HR alternando entre os quatro tipos.

    Returns:
        Lista de (id, imagem HR)
    """
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(count):
        kind = KINDS[i % len(KINDS)]
        corpus.append((f"synthetic_{i:03d}_{kind}", synthetic_image(kind, size, rng, channels)))
    logger.info(f"Corpus sintético gerado: {count} imagens de {size}x{size}")
    return corpus


def write_synthetic_corpus(out_dir: str | Path, count: int, size: int, seed: int = 0) -> List[Path]:
    """Grava o corpus sintético como PNG em out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [gravar_imagem_png(out_dir / f"{nome}.png", img)
            for nome, img in synthetic_corpus(count, size, seed)]
