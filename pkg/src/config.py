import os
from dotenv import load_dotenv

load_dotenv()

log_level: str = os.getenv("EBCA_LOG_LEVEL", "INFO")

# Experiment runner
OUTPUT_DIR: str = os.getenv("EBCA_OUTPUT_DIR", "runs")
WORKERS: int = int(os.getenv("EBCA_WORKERS", 4))
DEFAULT_SEED: int = int(os.getenv("EBCA_DEFAULT_SEED", 0))
