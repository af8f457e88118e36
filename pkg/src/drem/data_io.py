"""Dataset loading, flat config files, and archive reading.

Data files are delimited text with the response in the first column and
the design matrix in the rest; a single header line is allowed.  Malformed
rows are hard errors that name the offending line.
"""

from __future__ import annotations

import numpy as np

from drem.linear_model import Dataset
from drem.probit_model import BinaryDataset


class DataFormatError(ValueError):
    """A data file failed to parse."""


def _split(line: str) -> list:
    return line.split(",") if "," in line else line.split()


def _parse_rows(path):
    rows = []
    with open(path) as fh:
        lines = fh.readlines()
    start = 0
    if lines:
        try:
            [float(tok) for tok in _split(lines[0].strip())]
        except ValueError:
            start = 1  # header line
    for lineno, line in enumerate(lines[start:], start=start + 1):
        text = line.strip()
        if not text:
            continue
        toks = _split(text)
        try:
            rows.append(([float(t) for t in toks], lineno))
        except ValueError as err:
            raise DataFormatError(f"line {lineno}: {err}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    width = len(rows[0][0])
    if width < 2:
        raise DataFormatError(f"{path}: need a response column plus covariates")
    for vals, lineno in rows:
        if len(vals) != width:
            raise DataFormatError(
                f"line {lineno}: expected {width} columns, found {len(vals)}"
            )
    return np.asarray([vals for vals, _ in rows]), [ln for _, ln in rows]


def load_dataset(path) -> Dataset:
    """Linear-model data: first column y, remaining columns X."""
    table, lines = _parse_rows(path)
    try:
        return Dataset(y=table[:, 0], X=table[:, 1:])
    except ValueError as err:
        raise DataFormatError(str(err)) from None


def load_binary_dataset(path) -> BinaryDataset:
    """Probit data: the response column must parse to exactly 0 or 1."""
    table, lines = _parse_rows(path)
    y = table[:, 0]
    bad = np.flatnonzero(~np.isin(y, (0.0, 1.0)))
    if bad.size:
        raise DataFormatError(
            f"line {lines[bad[0]]}: response {y[bad[0]]!r} is not 0 or 1"
        )
    try:
        return BinaryDataset(y=y.astype(int), X=table[:, 1:])
    except ValueError as err:
        raise DataFormatError(str(err)) from None


def parse_config_file(path) -> dict:
    """Flat key=value lines; blank lines and # comments are ignored."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise DataFormatError(f"line {lineno}: expected key=value, got {text!r}")
            key, value = text.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_config_file(mapping: dict, path) -> None:
    with open(path, "w") as fh:
        for key in sorted(mapping):
            fh.write(f"{key}={mapping[key]}\n")


def load_archive_csv(path) -> dict:
    """Columns of a chain-trace CSV as arrays (sizes stay strings)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cols = {h: [] for h in header}
        for lineno, line in enumerate(fh, start=2):
            toks = line.strip().split(",")
            if len(toks) != len(header):
                raise DataFormatError(f"line {lineno}: ragged row")
            for h, t in zip(header, toks):
                cols[h].append(t)
    out = {}
    for h, vals in cols.items():
        if h == "sizes":
            out[h] = vals
        else:
            try:
                out[h] = np.asarray([float(v) for v in vals])
            except ValueError as err:
                raise DataFormatError(f"column {h}: {err}") from None
    return out
