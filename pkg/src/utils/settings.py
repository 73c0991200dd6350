import os
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Settings:
    """Configurações de ambiente lidas do arquivo .env."""
    runs_dir: Path
    device: str
    log_level: str
    perceptual_scorer: Optional[str]
    num_workers: int

    @staticmethod
    def carregar(env_path: Optional[str] = None) -> "Settings":
        """
        Carrega as variáveis do arquivo .env (se existir) e do ambiente.

        Args:
            env_path: Caminho alternativo para o arquivo .env

        Returns:
            Settings com os valores resolvidos
        """
        if env_path is None:
            env_path = os.path.join(os.path.dirname(os.path.dirname(__file__)), '.env')
        load_dotenv(dotenv_path=env_path)

        try:
            num_workers = int(os.getenv("FASR_NUM_WORKERS", "0"))
        except ValueError:
            logger.warning("FASR_NUM_WORKERS inválido, usando 0.")
            num_workers = 0

        return Settings(
            runs_dir=Path(os.getenv("FASR_RUNS_DIR", "runs")),
            device=os.getenv("FASR_DEVICE", "cpu"),
            log_level=os.getenv("FASR_LOG_LEVEL", "INFO").upper(),
            perceptual_scorer=os.getenv("FASR_PERCEPTUAL_SCORER") or None,
            num_workers=max(num_workers, 0),
        )
