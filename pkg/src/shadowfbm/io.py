"""
Reproducible output files.

Numbers are written with 17 significant digits so that they parse back to
the same doubles. Every CSV file starts with a ``# manifest_sha256=...``
comment line and every JSON report carries a ``manifest_sha256`` field
naming the run that produced it.
"""

import csv
import hashlib
import json
import math
import os

import numpy as np

ENV_OUT = "FBM_SHADOW_OUT"
HASH_KEYS = ("subcommand", "parameters", "seed", "tool_version")


def fmt(x):
    """17 significant digits; integers stay integers."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return "%.17g" % x


def _json(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return _quote(obj)
    if isinstance(obj, (bool, np.bool_, int, np.integer, float, np.floating)):
        return fmt(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_quote(str(k))}: {_json(obj[k], indent, level + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_json(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _json(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _quote(s):
    return json.dumps(s, ensure_ascii=True)


def dumps(obj, indent=2):
    """Deterministic JSON: sorted keys, 17-digit floats."""
    return _json(obj, indent, 0) + "\n"


def manifest_hash(manifest):
    """sha256 over the fields that determine the outputs."""
    core = {k: manifest.get(k) for k in HASH_KEYS}
    return hashlib.sha256(dumps(core, indent=0).encode()).hexdigest()


def output_dir(flag=None):
    """Flag, then the ``FBM_SHADOW_OUT`` environment variable, then the cwd."""
    path = flag or os.environ.get(ENV_OUT) or "."
    os.makedirs(path, exist_ok=True)
    return path


def write_csv(path, header, rows, digest):
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest_sha256={digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    """``(header, array)`` of a numeric CSV file, skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    reader = csv.reader(lines)
    header = next(reader)
    data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    return header, data.reshape(-1, len(header))


def file_digest(path):
    """The manifest hash recorded in an output file, or None."""
    with open(path) as fh:
        first = fh.readline().strip()
        if first.startswith("# manifest_sha256="):
            return first.split("=", 1)[1]
        if first.startswith("{"):
            fh.seek(0)
            return json.load(fh).get("manifest_sha256")
    return None


def write_json(path, obj, digest=None):
    body = dict(obj)
    if digest is not None:
        body["manifest_sha256"] = digest
    with open(path, "w") as fh:
        fh.write(dumps(body))
    return path


def write_paths_csv(path, times, paths, digest):
    """Wide format ``t,path_0,...,path_{n-1}``."""
    paths = np.atleast_2d(paths)
    header = ["t"] + [f"path_{i}" for i in range(paths.shape[0])]
    rows = np.column_stack([times, paths.T])
    return write_csv(path, header, rows, digest)


def read_paths_csv(path):
    """``(times, paths)`` from a wide-format path file."""
    header, data = read_csv(path)
    if not header or header[0] != "t":
        raise ValueError(f"{path}: expected a wide path file with a leading 't' column")
    return data[:, 0], data[:, 1:].T
