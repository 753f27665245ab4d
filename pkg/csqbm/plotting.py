"""Line-delimited metrics files and the headless SVG learning curve."""

from __future__ import annotations

import json
import logging
import pathlib
from typing import Any, Dict, Iterable, List, Sequence, TextIO, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


LOGGER = logging.getLogger("csqbm.plotting")

METRICS_SCHEMA = "csqbm-metrics"
SAMPLES_SCHEMA = "csqbm-samples"
RECORD_VERSION = 1


class MetricsFormatError(ValueError):
    def __init__(self, path: Any, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def header_record(schema: str, fields: Sequence[str]) -> Dict[str, Any]:
    return {"schema": schema, "version": RECORD_VERSION, "fields": list(fields)}


def write_record(stream: TextIO, record: Dict[str, Any]) -> None:
    stream.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
    stream.flush()


def read_metrics(path: pathlib.Path) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    """(header, episode records); every line must be a JSON object."""
    path = pathlib.Path(path)
    header: Dict[str, Any] = {}
    records: List[Dict[str, Any]] = []
    with path.open("r", encoding="utf-8") as stream:
        for number, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetricsFormatError(path, number, f"not valid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise MetricsFormatError(path, number, "record must be a JSON object")
            if number == 1 and "schema" in record:
                if record.get("schema") != METRICS_SCHEMA:
                    raise MetricsFormatError(path, number, f"unexpected schema {record.get('schema')!r}")
                header = record
                continue
            for key in ("episode", "return", "mean_abs_td"):
                if not isinstance(record.get(key), (int, float)) or isinstance(record.get(key), bool):
                    raise MetricsFormatError(path, number, f"field {key!r} missing or not numeric")
            records.append(record)
    return header, records


def _series(records: Iterable[Dict[str, Any]], key: str) -> List[float]:
    return [float(record[key]) for record in records]


def plot_learning_curve(records: Sequence[Dict[str, Any]], output: pathlib.Path, title: str = "") -> None:
    """Episode vs return and episode vs mean |td|; byte-stable for identical input."""
    if not records:
        raise ValueError("no episode records to plot")
    output = pathlib.Path(output)
    episodes = _series(records, "episode")
    plt.rcParams["svg.hashsalt"] = "csqbm"
    figure, (top, bottom) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    try:
        marker = "o" if len(records) == 1 else None
        top.plot(episodes, _series(records, "return"), marker=marker, color="tab:blue")
        top.set_ylabel("return")
        top.grid(True, alpha=0.3)
        bottom.plot(episodes, _series(records, "mean_abs_td"), marker=marker, color="tab:orange")
        bottom.set_ylabel("mean |td|")
        bottom.set_xlabel("episode")
        bottom.grid(True, alpha=0.3)
        if title:
            top.set_title(title)
        figure.tight_layout()
        output.parent.mkdir(parents=True, exist_ok=True)
        temporary = output.with_suffix(output.suffix + ".tmp")
        figure.savefig(temporary, format="svg", metadata={"Date": None})
        temporary.replace(output)
    finally:
        plt.close(figure)
    LOGGER.info("Learning curve written: %s", output)
