"""CSV input shared by the samplers and the trace diagnostics."""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DataError

logger = logging.getLogger(__name__)


def read_csv_frame(path: Union[str, Path]) -> pd.DataFrame:
    """Headed CSV as a frame; a missing file still raises FileNotFoundError."""
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot parse CSV ({exc})") from exc
    logger.debug("read %s: %d rows, columns %s", path, frame.shape[0], list(frame.columns))
    return frame


def numeric_columns(frame: pd.DataFrame, columns: Optional[Sequence[str]], source: Union[str, Path],
                    dtype=float) -> np.ndarray:
    """
    Selected columns of frame as a dtype matrix.

    Args:
        frame: Table read by read_csv_frame.
        columns: Column names to keep, in order; None keeps all.
        source: Path used in error messages.
        dtype: Target dtype; missing cells fail for integer targets.

    Raises:
        DataError: No columns, an absent column or a value that does not convert.
    """
    names = [str(c) for c in frame.columns] if columns is None else [str(c) for c in columns]
    if not names:
        raise DataError(f"{source}: no columns selected")
    missing = [c for c in names if c not in frame.columns]
    if missing:
        raise DataError(f"{source}: missing columns {missing}; found {[str(c) for c in frame.columns]}")
    if np.issubdtype(np.dtype(dtype), np.integer) and frame[names].isna().to_numpy().any():
        raise DataError(f"{source}: empty cells in integer columns {names}")
    try:
        return frame[names].to_numpy(dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{source}: columns {names} are not all numeric ({exc})") from exc
