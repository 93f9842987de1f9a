import json
import logging
from typing import Any, Dict, Iterable, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from .rng import generate_seed

logger = logging.getLogger(__name__)


def progress(items: Iterable, text: str, total: Optional[int] = None, enabled: bool = True):
    """Wrap `items` in a tqdm bar when enabled."""
    if not enabled:
        return items
    return tqdm(items, desc=text, total=total, unit='it', leave=False)


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def to_json(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, indent=2, default=_json_default)


def write_json(payload: Dict[str, Any], path: Optional[str]) -> None:
    """Write to `path`, or to stdout when path is None or '-'."""
    text = to_json(payload)
    if path in (None, '-'):
        print(text)
        return
    with open(path, 'w') as f:
        f.write(text + '\n')
    logger.info("wrote %s", path)


def write_frame_csv(frame: pd.DataFrame, path: Optional[str],
                    header: Optional[Dict[str, Any]] = None) -> None:
    """CSV export with the resolved configuration as leading '#' lines."""
    lines = []
    for key, value in (header or {}).items():
        lines.append(f"# {key}: {json.dumps(value, default=_json_default)}")
    body = frame.to_csv(index=False)
    text = '\n'.join(lines + [body]) if lines else body
    if path in (None, '-'):
        print(text, end='')
        return
    with open(path, 'w') as f:
        f.write(text)
    logger.info("wrote %d rows to %s", len(frame), path)


def resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return int(seed)
    seed = generate_seed()
    logger.info("no seed given; generated seed %d", seed)
    return seed


def handle_error(error: Exception) -> int:
    logger.error("Error: %s", error)
    logger.debug("traceback", exc_info=error)
    return 1
