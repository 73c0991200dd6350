import logging
import math

import numpy as np
from skimage.metrics import structural_similarity

from utils.exceptions import MetricError

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

# Luma BT.601 (faixa de estúdio) na escala [0,1]
_Y_COEFS = np.array([65.481, 128.553, 24.966]) / 255.0
_Y_OFFSET = 16.0 / 255.0


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """
    Plano de luminância Y do BT.601: (65.481 R + 128.553 G + 24.966 B + 16) / 255.

    Imagens de um canal (H×W ou H×W×1) passam inalteradas.

    Args:
        img: Array H×W×C em [0,1]

    Returns:
        Plano H×W em float64
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 1:
        return arr[..., 0]
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise MetricError(f"rgb_to_y espera H×W×3, recebeu {arr.shape}")
    return arr @ _Y_COEFS + _Y_OFFSET


def _planes(a: np.ndarray, b: np.ndarray, on_y: bool, border_crop: int):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"Formas divergentes: {a.shape} vs {b.shape}")
    if on_y:
        a, b = rgb_to_y(a), rgb_to_y(b)
    if border_crop < 0:
        raise MetricError(f"border_crop negativo: {border_crop}")
    if border_crop:
        h, w = a.shape[:2]
        if 2 * border_crop >= min(h, w):
            raise MetricError(f"border_crop {border_crop} consome a imagem {h}x{w}")
        a = a[border_crop:h - border_crop, border_crop:w - border_crop]
        b = b[border_crop:h - border_crop, border_crop:w - border_crop]
    return a, b


def mse(a: np.ndarray, b: np.ndarray, on_y: bool = True, border_crop: int = 0) -> float:
    a, b = _planes(a, b, on_y, border_crop)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, on_y: bool = True, border_crop: int = 0) -> float:
    """
    PSNR em dB para imagens em [0,1]; imagens idênticas retornam o teto de 100 dB.

    Raises:
        MetricError: Formas divergentes
    """
    erro = mse(a, b, on_y, border_crop)
    if erro == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / erro))


def rmse(a: np.ndarray, b: np.ndarray, on_y: bool = True, border_crop: int = 0) -> float:
    return math.sqrt(mse(a, b, on_y, border_crop))


def ssim(a: np.ndarray, b: np.ndarray, on_y: bool = True, border_crop: int = 0) -> float:
    """
    SSIM de escala única: janela gaussiana 11×11 (σ = 1.5), K1 = 0.01, K2 = 0.03.

    Raises:
        MetricError: Formas divergentes ou imagem menor que a janela
    """
    a, b = _planes(a, b, on_y, border_crop)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise MetricError(f"Imagem {a.shape[:2]} menor que a janela SSIM {SSIM_WINDOW}")
    return float(structural_similarity(
        a, b,
        data_range=1.0,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        channel_axis=-1 if a.ndim == 3 else None,
    ))
