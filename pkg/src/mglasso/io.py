"""File formats: numeric CSV, stable JSON, atomic writes, run manifests.

Floats are written with 17 significant digits so that a CSV round trip
reproduces every value exactly. JSON is UTF-8 with sorted keys.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .model import DataMatrix, RegressionMatrix

__all__ = ["DataError", "read_csv_matrix", "read_data", "format_float",
           "matrix_csv", "beta_csv", "read_beta_csv", "dumps_json",
           "write_text", "write_json", "file_digest", "RunManifest",
           "version"]


class DataError(ValueError):
    """Malformed or unusable input data."""


def version():
    try:
        from importlib.metadata import version as _v
        return _v("artifact")
    except Exception:
        return "0+unknown"


def format_float(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def read_csv_matrix(path, header=True):
    """Numeric matrix and column names from a comma-separated file.

    Raises
    ------
    DataError
        On ragged rows, non-numeric cells or an empty file, naming the
        offending line.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [(k + 1, r) for k, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError("%s: file is empty" % path)
    names = None
    if header:
        names = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    width = len(names) if names is not None else len(rows[0][1])
    out = []
    for line, r in rows:
        if len(r) != width:
            raise DataError("%s: line %d has %d fields, expected %d"
                            % (path, line, len(r), width))
        try:
            out.append([float(c) for c in r])
        except ValueError:
            raise DataError("%s: line %d has a non-numeric field"
                            % (path, line)) from None
    if not out:
        raise DataError("%s: no data rows" % path)
    return np.array(out, dtype=float), names


def read_data(path):
    """Data matrix with column names; rejects non-finite entries."""
    values, names = read_csv_matrix(path)
    if not np.all(np.isfinite(values)):
        r, c = np.argwhere(~np.isfinite(values))[0]
        raise DataError("%s: non-finite value in column %s (data row %d)"
                        % (path, names[c], r + 1))
    try:
        return DataMatrix(values, column_names=names)
    except ValueError as exc:
        raise DataError("%s: %s" % (path, exc)) from None


def matrix_csv(values, names):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in np.asarray(values, float):
        w.writerow([format_float(v) for v in row])
    return buf.getvalue()


def beta_csv(beta, names):
    """``p x (p-1)`` coefficients; the header maps column ``k`` of row
    ``i`` to its variable as ``slot_k``, and a leading ``variable`` column
    names the row. Slot ``k`` of row ``i`` is variable ``k`` if ``k < i``,
    else ``k + 1``."""
    B = beta.coeffs
    p = beta.p
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variable"] + ["slot_%d" % k for k in range(p - 1)]
               + ["regressors"])
    for i in range(p):
        others = [names[k] for k in range(p) if k != i]
        w.writerow([names[i]] + [format_float(v) for v in B[i]]
                   + [";".join(others)])
    return buf.getvalue()


def read_beta_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    names = [r[0] for r in rows]
    vals = np.array([[float(c) for c in r[1:-1]] for r in rows])
    return RegressionMatrix(vals), names


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else format_float(x)
    return obj


def dumps_json(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2,
                      ensure_ascii=False) + "\n"


def write_text(path, text):
    """Write ``text`` atomically: temporary file in the target directory,
    then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj):
    return write_text(path, dumps_json(obj))


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Record of one command run: resolved configuration, seed, version,
    input and output digests, per-stage wall-clock times.

    The manifest is the only output that varies between identical runs
    (timings); every other file is a primary output.
    """

    command: str
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def add_input(self, path):
        self.inputs[os.path.basename(path)] = file_digest(path)

    def add_output(self, path):
        self.outputs[os.path.basename(path)] = file_digest(path)

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - t0

    def to_dict(self):
        return {"command": self.command, "config": self.config,
                "seed": self.seed, "version": version(),
                "inputs": self.inputs, "outputs": self.outputs,
                "timings": self.timings,
                **({"extra": self.extra} if self.extra else {})}
