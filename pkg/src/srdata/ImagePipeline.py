import logging
from dataclasses import dataclass
from itertools import count
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field
from torch.utils.data import DataLoader, Dataset, Sampler

from srdata.image_files import LOSSY_SUFFIXES, ler_imagem_png
from srdata.synthetic import synthetic_corpus
from utils.exceptions import ConfigurationError, DegenerateInputError
from utils.functions import GerenciadorArquivos

logger = logging.getLogger(__name__)

SeedLike = int | Sequence[int] | np.random.SeedSequence


class DatasetConfig(BaseModel):
    """Configuração do corpus de treino e do amostrador de recortes."""
    model_config = ConfigDict(extra="forbid")

    hr_dir: Optional[Path] = None
    lr_dir: Optional[Path] = None
    scale: int = Field(4, ge=2)
    patch_size_lr: int = Field(48, ge=1)
    batch_size: int = Field(16, ge=1)
    augment: bool = True
    synthetic_images: int = Field(8, ge=0)
    synthetic_size: int = Field(128, ge=2)
    synthetic_seed: int = 0
    num_workers: int = Field(0, ge=0)


@dataclass(frozen=True, eq=False)
class ImagePair:
    """Par LR/HR alinhado (arrays float32 H×W×C em [0,1])."""
    lr: np.ndarray
    hr: np.ndarray
    scale: int
    id: str

    def __post_init__(self):
        if self.lr.ndim != 3 or self.hr.ndim != 3:
            raise ConfigurationError(f"{self.id}: imagens devem ser H×W×C")
        lh, lw, lc = self.lr.shape
        if self.hr.shape != (lh * self.scale, lw * self.scale, lc):
            raise ConfigurationError(
                f"{self.id}: HR {self.hr.shape} não é {self.scale}x o LR {self.lr.shape}"
            )


@dataclass
class PairBatch:
    """Lote empilhado em tensores N×C×H×W."""
    lr: torch.Tensor
    hr: torch.Tensor
    ids: List[str]
    scale: int

    def to(self, device: torch.device | str) -> "PairBatch":
        return PairBatch(self.lr.to(device), self.hr.to(device), self.ids, self.scale)


def crop_to_multiple(img: np.ndarray, multiple: int) -> np.ndarray:
    """Recorta centralmente a imagem para dimensões divisíveis por `multiple`."""
    h, w = img.shape[:2]
    h2, w2 = h - h % multiple, w - w % multiple
    top, left = (h - h2) // 2, (w - w2) // 2
    return img[top:top + h2, left:left + w2]


def bicubic_downscale(img: np.ndarray, scale: int) -> np.ndarray:
    """
    Reduz a imagem por `scale` com o kernel bicúbico a = -0.5 e pré-filtragem antialias.

    Args:
        img: Array H×W×C (ou H×W) em [0,1]
        scale: Fator inteiro >= 2

    Returns:
        Array float32 (H/scale)×(W/scale)×C, limitado a [0,1]

    Raises:
        ConfigurationError: Se scale < 2
        DegenerateInputError: Se a imagem for menor que o fator
    """
    if scale < 2:
        raise ConfigurationError(f"Fator de redução deve ser >= 2, recebido {scale}")
    arr = np.asarray(img, dtype=np.float32)
    planar = arr.ndim == 2
    if planar:
        arr = arr[..., None]
    h, w = arr.shape[:2]
    if h < scale or w < scale:
        raise DegenerateInputError(f"Imagem {h}x{w} menor que o fator {scale}")

    arr = crop_to_multiple(arr, scale)
    out_h, out_w = arr.shape[0] // scale, arr.shape[1] // scale
    # o BICUBIC do Pillow usa a = -0.5 e alarga o suporte pelo fator (antialias)
    canais = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(arr[..., c])).resize(
                (out_w, out_h), Image.Resampling.BICUBIC
            ),
            dtype=np.float32,
        )
        for c in range(arr.shape[2])
    ]
    out = np.clip(np.stack(canais, axis=-1), 0.0, 1.0)
    return out[..., 0] if planar else out


def patch_offsets(pair: ImagePair, patch_size_lr: int, rng_seed: SeedLike) -> Tuple[int, int]:
    """Sorteia o deslocamento (linha, coluna) do recorte no LR."""
    lh, lw = pair.lr.shape[:2]
    if patch_size_lr > lh or patch_size_lr > lw:
        raise DegenerateInputError(
            f"{pair.id}: recorte {patch_size_lr} maior que o LR {lh}x{lw}"
        )
    rng = np.random.default_rng(rng_seed)
    i = int(rng.integers(0, lh - patch_size_lr + 1))
    j = int(rng.integers(0, lw - patch_size_lr + 1))
    return i, j


def crop_pair(pair: ImagePair, i: int, j: int, patch_size_lr: int) -> ImagePair:
    r = pair.scale
    p = patch_size_lr
    return ImagePair(
        lr=np.ascontiguousarray(pair.lr[i:i + p, j:j + p]),
        hr=np.ascontiguousarray(pair.hr[r * i:r * (i + p), r * j:r * (j + p)]),
        scale=r,
        id=pair.id,
    )


def random_patch(pair: ImagePair, patch_size_lr: int, rng_seed: SeedLike) -> ImagePair:
    """
    Recorta um patch LR quadrado e o patch HR correspondente (deslocamento r vezes maior).

    Raises:
        DegenerateInputError: Se o patch for maior que a imagem
    """
    i, j = patch_offsets(pair, patch_size_lr, rng_seed)
    return crop_pair(pair, i, j, patch_size_lr)


def _dihedral(arr: np.ndarray, index: int) -> np.ndarray:
    out = np.rot90(arr, k=-(index % 4), axes=(0, 1))
    if index >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def inverse_dihedral(index: int) -> int:
    """Índice da transformação inversa (reflexões são involuções)."""
    if not 0 <= index < 8:
        raise ValueError(f"Índice diedral fora de 0..7: {index}")
    return index if index >= 4 else (4 - index) % 4


def apply_dihedral(pair: ImagePair, index: int) -> ImagePair:
    """
    Aplica a transformação diedral `index` a LR e HR.

    Args:
        pair: Par de entrada
        index: 0..7; rotação de (index mod 4) quartos de volta no sentido horário,
            seguida de espelhamento horizontal quando index >= 4
    """
    if not 0 <= index < 8:
        raise ValueError(f"Índice diedral fora de 0..7: {index}")
    return ImagePair(_dihedral(pair.lr, index), _dihedral(pair.hr, index), pair.scale, pair.id)


def augment(pair: ImagePair, rng_seed: SeedLike) -> ImagePair:
    """Sorteia uma das 8 transformações diedrais e aplica ao par."""
    index = int(np.random.default_rng(rng_seed).integers(0, 8))
    return apply_dihedral(pair, index)


def _pair_from_hr(hr: np.ndarray, scale: int, image_id: str, lr: Optional[np.ndarray] = None) -> ImagePair:
    hr = crop_to_multiple(hr, scale)
    if lr is None:
        lr = bicubic_downscale(hr, scale)
    elif lr.shape[:2] != (hr.shape[0] // scale, hr.shape[1] // scale):
        raise ConfigurationError(
            f"{image_id}: LR pré-gerado {lr.shape[:2]} não corresponde ao HR {hr.shape[:2]}/{scale}"
        )
    return ImagePair(lr=np.ascontiguousarray(lr, dtype=np.float32),
                     hr=np.ascontiguousarray(hr, dtype=np.float32), scale=scale, id=image_id)


def load_corpus(config: DatasetConfig, check_patch: bool = True) -> List[ImagePair]:
    """
    Carrega o corpus HR (diretório de PNG ou corpus sintético) e sintetiza os LR.

    Args:
        config: Configuração do dataset
        check_patch: Valida patch_size_lr·scale <= menor dimensão HR

    Returns:
        Lista de ImagePair ordenada por id

    Raises:
        ConfigurationError: Corpus vazio, formato com perdas ou imagem pequena demais
    """
    r = config.scale
    pares: List[ImagePair] = []

    if config.hr_dir is None:
        for nome, hr in synthetic_corpus(config.synthetic_images, config.synthetic_size,
                                         seed=config.synthetic_seed):
            pares.append(_pair_from_hr(hr, r, nome))
    else:
        try:
            arquivos = GerenciadorArquivos.listar_arquivos_by_path(config.hr_dir)
        except ValueError as e:
            raise ConfigurationError(str(e)) from e

        lossy = [info.nome for info in arquivos.values() if info.extensao in LOSSY_SUFFIXES]
        if lossy:
            raise ConfigurationError(f"Referências HR com perdas não são aceitas: {lossy}")

        lr_base = Path(config.lr_dir) / f"X{r}" if config.lr_dir else None
        for stem, info in arquivos.items():
            if info.extensao != "png":
                continue
            hr = ler_imagem_png(info.caminho_completo)
            lr = None
            if lr_base is not None and (lr_base / f"{stem}.png").is_file():
                lr = ler_imagem_png(lr_base / f"{stem}.png")
            pares.append(_pair_from_hr(hr, r, stem, lr))

    if not pares:
        raise ConfigurationError("Corpus vazio: nenhuma imagem HR encontrada")

    if check_patch:
        menor = min(min(p.hr.shape[:2]) for p in pares)
        if config.patch_size_lr * r > menor:
            raise ConfigurationError(
                f"patch_size_lr·scale = {config.patch_size_lr * r} excede a menor dimensão HR ({menor})"
            )

    logger.info(f"Corpus carregado: {len(pares)} pares (escala x{r})")
    return pares


class PatchDataset(Dataset):
    """
    Item k é função pura de (seed, k): época e = k // n percorre a permutação
    (seed, e) das imagens; recorte e aumento usam rng(seed, k).
    """

    def __init__(self, corpus: List[ImagePair], config: DatasetConfig, seed: int):
        self.corpus = corpus
        self.config = config
        self.seed = seed
        self._perm_cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.corpus)

    def _permutation(self, epoch: int) -> np.ndarray:
        perm = self._perm_cache.get(epoch)
        if perm is None:
            perm = np.random.default_rng([self.seed, epoch]).permutation(len(self.corpus))
            self._perm_cache = {epoch: perm}
        return perm

    def __getitem__(self, k: int) -> ImagePair:
        epoch, pos = divmod(k, len(self.corpus))
        pair = self.corpus[int(self._permutation(epoch)[pos])]
        crop_seed, aug_seed = np.random.SeedSequence([self.seed, k, 1]).spawn(2)
        pair = random_patch(pair, self.config.patch_size_lr, crop_seed)
        if self.config.augment:
            pair = augment(pair, aug_seed)
        return pair


class _CountingSampler(Sampler[int]):
    def __init__(self, start: int):
        self.start = start

    def __iter__(self) -> Iterator[int]:
        return count(self.start)


def collate_pairs(pairs: List[ImagePair]) -> PairBatch:
    lr = torch.from_numpy(np.stack([p.lr for p in pairs])).permute(0, 3, 1, 2).contiguous()
    hr = torch.from_numpy(np.stack([p.hr for p in pairs])).permute(0, 3, 1, 2).contiguous()
    return PairBatch(lr=lr, hr=hr, ids=[p.id for p in pairs], scale=pairs[0].scale)


def batch_iterator(config: DatasetConfig, rng_seed: int, start_batch: int = 0,
                   corpus: Optional[List[ImagePair]] = None) -> Iterator[PairBatch]:
    """
    Fluxo infinito e determinístico de lotes com exatamente batch_size pares.

    Args:
        config: Configuração do dataset
        rng_seed: Semente do fluxo
        start_batch: Índice do primeiro lote (retomada de treino)
        corpus: Corpus já carregado; None carrega via load_corpus

    Yields:
        PairBatch com lr N×C×p×p e hr N×C×(p·r)×(p·r)

    Raises:
        ConfigurationError: Corpus vazio
    """
    corpus = load_corpus(config) if corpus is None else corpus
    if not corpus:
        raise ConfigurationError("Corpus vazio: nada para amostrar")

    loader = DataLoader(
        PatchDataset(corpus, config, rng_seed),
        batch_size=config.batch_size,
        sampler=_CountingSampler(start_batch * config.batch_size),
        num_workers=config.num_workers,
        collate_fn=collate_pairs,
    )
    yield from loader
