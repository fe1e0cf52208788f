"""Self-describing CSV / JSON writers shared by the CLI commands."""

import json
from pathlib import Path
from typing import Any, Dict, Mapping

import numpy as np
import pandas as pd

FLOAT_FORMAT = "%.17g"


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def dumps(payload: Any) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True)


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload) + "\n")
    return path


def write_csv(path: Path, frame: pd.DataFrame, config: Dict[str, Any]) -> Path:
    """CSV preceded by one `# config: <json>` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = "# config: " + json.dumps(_jsonable(config), sort_keys=True)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def read_config_line(path: Path) -> Dict[str, Any]:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("# config: "):
        return {}
    return json.loads(first[len("# config: "):])
