import json
import logging
import math
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from evaluation.Metrics import psnr, rmse, ssim
from srdata.image_files import ler_imagem_png
from utils.exceptions import MetricError
from utils.functions import GerenciadorArquivos

logger = logging.getLogger(__name__)


class EvalOptions(BaseModel):
    """Opções da avaliação de diretórios."""
    model_config = ConfigDict(extra="forbid")

    scale: int = Field(4, ge=1)
    border_crop: int = Field(0, ge=0)
    crop_by_scale: bool = False
    rmse_on_rgb: bool = False
    workers: int = Field(0, ge=0)
    scorer: Optional[str] = None

    @property
    def crop(self) -> int:
        return self.scale if self.crop_by_scale else self.border_crop


class ExternalScorer:
    """
    Pontuação perceptual externa: executa `<comando> <imagem>` e lê um float do stdout.

    Falhas viram NaN com aviso no log, sem abortar a avaliação.
    """

    def __init__(self, command: str, timeout: float = 300.0):
        self.command = shlex.split(command)
        self.timeout = timeout

    def __call__(self, image_path: str | Path) -> float:
        try:
            resultado = subprocess.run(
                [*self.command, str(image_path)],
                capture_output=True, text=True, timeout=self.timeout, check=True,
            )
            return float(resultado.stdout.strip().split()[-1])
        except (subprocess.SubprocessError, OSError, ValueError, IndexError) as e:
            logger.warning(f"Avaliador perceptual falhou para {image_path}: {e}")
            return float("nan")


@dataclass
class ImageRecord:
    id: str
    psnr_y: float
    rmse: float
    ssim: float
    perceptual: float = float("nan")


@dataclass
class EvalReport:
    """Registros por imagem, agregados e eco da configuração."""
    records: List[ImageRecord]
    omissions: List[Dict[str, str]] = field(default_factory=list)
    options: EvalOptions = field(default_factory=EvalOptions)

    def to_frame(self) -> pd.DataFrame:
        colunas = ["id", "psnr_y", "rmse", "ssim", "perceptual"]
        return pd.DataFrame([asdict(r) for r in self.records], columns=colunas)

    def aggregates(self) -> Dict[str, float]:
        """Média aritmética de cada métrica; perceptual só quando houver pontuações."""
        df = self.to_frame()
        medias = {k: float(df[k].mean()) for k in ("psnr_y", "rmse", "ssim")}
        if df["perceptual"].notna().any():
            medias["perceptual"] = float(df["perceptual"].mean(skipna=True))
        return medias

    def summary(self) -> Dict:
        return {
            "images": len(self.records),
            "aggregates": self.aggregates(),
            "omissions": self.omissions,
            "config": {
                "scale": self.options.scale,
                "border_crop": self.options.crop,
                "rmse_plane": "rgb" if self.options.rmse_on_rgb else "y",
                "scorer": self.options.scorer,
            },
        }

    def to_table(self) -> str:
        df = self.to_frame()
        media = pd.DataFrame([{"id": "MÉDIA", **self.aggregates()}], columns=df.columns)
        texto = pd.concat([df, media], ignore_index=True).to_string(index=False, float_format="%.4f")
        if self.omissions:
            texto += "\nOmissões: " + ", ".join(f"{o['id']} (falta {o['missing']})" for o in self.omissions)
        return texto

    def write(self, out_dir: str | Path) -> Dict[str, Path]:
        """
        Grava report.parquet, summary.json e scatter.parquet em out_dir.

        Returns:
            Dicionário nome -> caminho gravado
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        df = self.to_frame()

        report = out_dir / "report.parquet"
        pq.write_table(pa.Table.from_pandas(df, preserve_index=False), report)

        scatter = out_dir / "scatter.parquet"
        pq.write_table(pa.Table.from_pandas(df[["id", "rmse", "perceptual"]], preserve_index=False), scatter)

        summary = out_dir / "summary.json"
        summary.write_text(json.dumps(self.summary(), indent=2, ensure_ascii=False), encoding="utf-8")

        logger.info(f"Relatório gravado em {out_dir}")
        return {"report": report, "scatter": scatter, "summary": summary}


def _avaliar_par(image_id: str, sr_path: str, hr_path: str, options: EvalOptions,
                 scorer: Optional[ExternalScorer]) -> ImageRecord:
    sr = ler_imagem_png(sr_path)
    hr = ler_imagem_png(hr_path)
    if sr.shape != hr.shape:
        raise MetricError(f"{image_id}: SR {sr.shape} e HR {hr.shape} com formas diferentes")
    crop = options.crop
    return ImageRecord(
        id=image_id,
        psnr_y=psnr(sr, hr, on_y=True, border_crop=crop),
        rmse=rmse(sr, hr, on_y=not options.rmse_on_rgb, border_crop=crop),
        ssim=ssim(sr, hr, on_y=True, border_crop=crop),
        perceptual=scorer(sr_path) if scorer is not None else float("nan"),
    )


def evaluate_dir(sr_dir: str | Path, hr_dir: str | Path,
                 options: Optional[EvalOptions] = None) -> EvalReport:
    """
    Avalia os PNG de sr_dir contra os de mesmo stem em hr_dir.

    Args:
        sr_dir: Diretório com as imagens geradas
        hr_dir: Diretório com as referências
        options: EvalOptions

    Returns:
        EvalReport ordenado por id, com as omissões listadas

    Raises:
        MetricError: Nenhum stem em comum
    """
    options = options or EvalOptions()
    sr_files = GerenciadorArquivos.listar_arquivos_by_path(sr_dir, ["png"])
    hr_files = GerenciadorArquivos.listar_arquivos_by_path(hr_dir, ["png"])

    comuns = sorted(sr_files.keys() & hr_files.keys())
    if not comuns:
        raise MetricError(f"Nenhuma imagem em comum entre {sr_dir} e {hr_dir}")
    omissoes = [{"id": s, "missing": "hr"} for s in sorted(sr_files.keys() - hr_files.keys())]
    omissoes += [{"id": s, "missing": "sr"} for s in sorted(hr_files.keys() - sr_files.keys())]
    omissoes.sort(key=lambda o: o["id"])
    for o in omissoes:
        logger.warning(f"Sem par para {o['id']} (falta {o['missing']})")

    scorer = ExternalScorer(options.scorer) if options.scorer else None
    tarefas = [
        (s, sr_files[s].caminho_completo, hr_files[s].caminho_completo, options, scorer)
        for s in comuns
    ]
    if options.workers > 0:
        with ThreadPoolExecutor(max_workers=options.workers) as executor:
            registros = list(tqdm(executor.map(lambda t: _avaliar_par(*t), tarefas),
                                  total=len(tarefas), desc="eval", disable=None))
    else:
        registros = [_avaliar_par(*t) for t in tqdm(tarefas, desc="eval", disable=None)]

    registros.sort(key=lambda r: r.id)
    relatorio = EvalReport(records=registros, omissions=omissoes, options=options)
    logger.info(f"Avaliadas {len(registros)} imagens; médias {relatorio.aggregates()}")
    return relatorio


def mean_finite(valores: List[float]) -> float:
    finitos = [v for v in valores if math.isfinite(v)]
    return float(np.mean(finitos)) if finitos else float("nan")
