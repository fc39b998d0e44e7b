"""Report writing for FMD-analysis: plot-ready CSV and JSON summaries"""
import json
import math
import os
import tempfile
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from utils.helpers import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = "%.10g"


def _jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats for json.dump"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return None
        return value
    return value


def dataframe_to_csv_text(frame: pd.DataFrame) -> str:
    """Canonical CSV text: fixed float format, '\\n' line endings, no index"""
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def json_text(payload: Dict[str, Any]) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


class ReportWriter:
    """Write report files under one output directory, atomically"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        self.written: List[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def write_text(self, name: str, text: str) -> str:
        target = self.path(name)
        directory = os.path.dirname(target) or "."
        os.makedirs(directory, exist_ok=True)
        # Temp file + rename: readers never see a half-written report.
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            os.replace(tmp_path, target)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        self.written.append(target)
        logger.debug(f"wrote {target}")
        return target

    def write_csv(self, name: str, frame: pd.DataFrame) -> str:
        """Write a DataFrame as canonical CSV"""
        return self.write_text(name, dataframe_to_csv_text(frame))

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        """Write a JSON document with sorted keys"""
        return self.write_text(name, json_text(payload))
