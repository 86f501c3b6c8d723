"""CSV and Parquet emission.

CSVs are UTF-8 with LF line endings and floats rendered with 17 significant
digits, so identical runs give identical bytes.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import pandas as pd

from oclb.optimizers import OptimizerTrace

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["optimizer", "seed", "t", "calls", "ratio", "envelope"]
EXEMPT = "exempt"
FLOAT_FORMAT = "%.17g"


def write_csv(frame: pd.DataFrame, path: Union[str, Path], footer: Optional[Sequence[str]] = None) -> Path:
    """Write a frame as CSV; ``footer`` lines are appended as ``# ...`` comments."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        text = frame.to_csv(index=False, lineterminator="\n", float_format=FLOAT_FORMAT)
        if footer:
            text += "".join(f"# {line}\n" for line in footer)
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    logger.debug("Wrote %s (%d rows)", path, len(frame))
    return path


def _envelope_cell(trace: OptimizerTrace, k: int) -> Union[str, float]:
    if trace.exempt or trace.envelopes is None:
        return EXEMPT
    return format(trace.envelopes[k], ".17g")


def traces_frame(traces: Sequence[OptimizerTrace]) -> pd.DataFrame:
    """One row per trace sample, sorted by (optimizer, seed, t).

    ``t`` is calls + 1, the index of the iterate the sample evaluates. The
    envelope column reads ``exempt`` for optimizers outside the certified
    class.
    """
    rows = []
    for trace in traces:
        for k, sample in enumerate(trace.samples):
            rows.append({
                "optimizer": trace.optimizer,
                "seed": trace.seed,
                "t": sample.calls + 1,
                "calls": sample.calls,
                "ratio": sample.ratio,
                "envelope": _envelope_cell(trace, k),
            })
    frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    if frame.empty:
        return frame
    return frame.sort_values(["optimizer", "seed", "t"], kind="mergesort").reset_index(drop=True)


def export_results(traces: Sequence[OptimizerTrace], path: Union[str, Path]) -> Path:
    """Write traces as ``optimizer,seed,t,calls,ratio,envelope``.

    Raises:
        ValueError: when ``traces`` is empty
        OSError: when the path cannot be written
    """
    if not traces:
        raise ValueError("export_results needs at least one trace")
    return write_csv(traces_frame(traces), path)


def csv_to_parquet(csv_path: Union[str, Path], parquet_path: Optional[Union[str, Path]] = None) -> Path:
    """Parquet copy of a CSV written by this package (comment lines are dropped)."""
    csv_path = Path(csv_path)
    parquet_path = Path(parquet_path) if parquet_path else csv_path.with_suffix(".parquet")
    frame = pd.read_csv(csv_path, comment="#")
    frame.to_parquet(parquet_path, engine="pyarrow", index=False)
    return parquet_path


def export_directory(directory: Union[str, Path]) -> List[Path]:
    """Convert every CSV in a run directory to Parquet."""
    return [csv_to_parquet(path) for path in sorted(Path(directory).glob("*.csv"))]
