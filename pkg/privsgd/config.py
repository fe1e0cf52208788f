import os

from dotenv import load_dotenv, find_dotenv

load_dotenv(find_dotenv(usecwd=True), override=False)

# ---- Defaults (overridable from .env) ----
OUTPUT_DIR = os.getenv("PRIVSGD_OUTPUT_DIR", "results")
LOG_LEVEL = os.getenv("PRIVSGD_LOG_LEVEL", "INFO")
WORKERS = int(os.getenv("PRIVSGD_WORKERS", "1"))

# membership / projection tolerance
SET_TOL = 1e-9
