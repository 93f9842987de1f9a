"""PGM (P2/P5, 8/16-bit) and CSV matrix I/O for intensity patterns."""
import logging
import os
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from simulators.pattern_analysis import PatternMatrix
from .errors import PatternError, PatternFormatError

logger = logging.getLogger(__name__)

SCALE_COMMENT = 'scale'


def _pgm_header(data: bytes) -> Tuple[List[bytes], List[bytes], int]:
    """Magic, width, height and maxval tokens, comments, and the offset of the raster."""
    tokens, comments = [], []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PatternFormatError("truncated PGM header")
        if data[pos:pos + 1] == b'#':
            end = data.find(b'\n', pos)
            end = len(data) if end < 0 else end
            comments.append(data[pos + 1:end].strip())
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b'#':
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from a binary raster
    return tokens, comments, pos + 1


def _scale_from(comments: List[bytes]) -> Optional[float]:
    for comment in comments:
        parts = comment.decode('ascii', 'replace').split()
        if len(parts) == 2 and parts[0] == SCALE_COMMENT:
            return float(parts[1])
    return None


def read_pgm(path: str) -> np.ndarray:
    """Pixel values as floats; a '# scale <max>' comment restores physical units."""
    try:
        with open(path, 'rb') as f:
            data = f.read()
        tokens, comments, offset = _pgm_header(data)
        magic = tokens[0]
        width, height, maxval = (int(t) for t in tokens[1:4])
    except (OSError, ValueError) as e:
        raise PatternFormatError(f"Failed to read PGM {path}: {e}") from e
    if magic not in (b'P2', b'P5'):
        raise PatternFormatError(f"{path}: unsupported PGM magic {magic!r}")
    if not 0 < maxval < 65536 or width < 1 or height < 1:
        raise PatternFormatError(f"{path}: invalid PGM dimensions or maxval")
    count = width * height
    try:
        if magic == b'P2':
            pixels = np.array(data[offset:].split()[:count], dtype=float)
        else:
            dtype = np.dtype('u1') if maxval < 256 else np.dtype('>u2')
            pixels = np.frombuffer(data, dtype=dtype, count=count, offset=offset).astype(float)
    except ValueError as e:
        raise PatternFormatError(f"Failed to read PGM raster {path}: {e}") from e
    if pixels.size != count:
        raise PatternFormatError(f"{path}: expected {count} pixels, found {pixels.size}")
    values = pixels.reshape(height, width)
    scale = _scale_from(comments)
    if scale is not None:
        values = values * (scale / maxval)
    return values


def write_pgm(path: str, values: np.ndarray, binary: bool = True, bits: int = 16) -> None:
    """Quantize to [0, 2^bits - 1] and record the original maximum as a comment."""
    if bits not in (8, 16):
        raise PatternError("PGM depth must be 8 or 16 bits")
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or np.any(values < 0) or not np.all(np.isfinite(values)):
        raise PatternError("PGM output needs a finite non-negative 2-D array")
    maxval = (1 << bits) - 1
    top = float(values.max())
    levels = np.zeros(values.shape) if top == 0 else np.rint(values / top * maxval)
    height, width = values.shape
    header = f"{'P5' if binary else 'P2'}\n# {SCALE_COMMENT} {top!r}\n{width} {height}\n{maxval}\n"
    with open(path, 'wb') as f:
        f.write(header.encode('ascii'))
        if binary:
            dtype = np.dtype('u1') if bits == 8 else np.dtype('>u2')
            f.write(levels.astype(dtype).tobytes())
        else:
            for row in levels.astype(int):
                f.write((' '.join(map(str, row)) + '\n').encode('ascii'))
    logger.debug("wrote %dx%d PGM to %s", height, width, path)


def read_csv_matrix(path: str) -> np.ndarray:
    try:
        frame = pd.read_csv(path, header=None, comment='#')
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise PatternFormatError(f"Failed to read CSV matrix {path}: {e}") from e
    try:
        return frame.to_numpy(dtype=float)
    except ValueError as e:
        raise PatternFormatError(f"{path}: non-numeric matrix entries: {e}") from e


def write_csv_matrix(path: str, values: np.ndarray) -> None:
    pd.DataFrame(np.asarray(values, dtype=float)).to_csv(path, header=False, index=False)


def _read_matrix(path: str) -> np.ndarray:
    suffix = os.path.splitext(path)[1].lower()
    if suffix == '.pgm':
        return read_pgm(path)
    if suffix == '.csv':
        return read_csv_matrix(path)
    raise PatternFormatError(f"{path}: unknown pattern format {suffix!r} (expected .pgm or .csv)")


def read_mask(path: str) -> np.ndarray:
    """0/1 image; any positive pixel is inside."""
    return _read_matrix(path) > 0


def load_pattern(path: str, mask_path: Optional[str] = None) -> PatternMatrix:
    values = _read_matrix(path)
    mask = read_mask(mask_path) if mask_path else None
    return PatternMatrix(values, mask, label=os.path.basename(path))
