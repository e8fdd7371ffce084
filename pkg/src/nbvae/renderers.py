import csv
import io
import json
import os
from typing import Iterable, Mapping, Optional, Sequence


__all__ = ["CSVRenderer", "JSONRenderer", "render_metric_table"]


class CSVRenderer:
    """Render a sequence of dict-like rows as CSV.

    Fields are taken from ``fields`` or, if not specified, from the
    first row's keys. With ``pretty_header``, a field like
    "validation_metric" is written as "Validation metric" in the
    header. ``None`` is written as an empty cell.

    """

    def __init__(self, fields: Optional[Sequence[str]] = None, pretty_header=False):
        self.fields = tuple(fields) if fields is not None else None
        self.pretty_header = pretty_header

    def __call__(self, value: Iterable[Mapping]) -> str:
        rows = iter(value)
        first_row = next(rows, None)
        if first_row is None and self.fields is None:
            return ""
        file = io.StringIO()
        fields = self.fields or tuple(first_row.keys())  # type: ignore
        if self.pretty_header:
            header = {f: " ".join(f.split("_")).capitalize() for f in fields}
        else:
            header = {f: f for f in fields}
        writer = csv.DictWriter(file, fieldnames=fields, lineterminator="\n")
        writer.writerow(header)
        if first_row is not None:
            writer.writerow(first_row)
            writer.writerows(rows)
        return file.getvalue()

    def write(self, value: Iterable[Mapping], path):
        _write_text(path, self(value))


class JSONRenderer:
    """Render a value as indented JSON with sorted keys."""

    def __call__(self, value) -> str:
        return json.dumps(value, indent=2, sort_keys=True) + "\n"

    def write(self, value, path):
        _write_text(path, self(value))


def _write_text(path, text):
    directory = os.path.dirname(str(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="") as fp:
        fp.write(text)


def render_metric_table(metrics: Mapping[str, float]) -> str:
    """Two aligned columns of metric names and values."""
    if not metrics:
        return ""
    width = max(len(name) for name in metrics)
    lines = [f"{'Metric'.ljust(width)}  Value"]
    for name, value in metrics.items():
        lines.append(f"{name.ljust(width)}  {value:.6f}")
    return "\n".join(lines)
