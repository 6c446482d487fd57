"""Flat key-value result files: exact float round-trip, atomic writes.

Format: one ``key = value`` line per entry. Scalars are written with
``repr`` (floats round-trip exactly); sequences are bracketed,
comma-separated scalar lists. ``true``/``false`` encode booleans. Lines
starting with ``#`` are comments.
"""

import os
import tempfile

import numpy as np


def _format_scalar(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return repr(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_value(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_format_scalar(x) for x in np.asarray(v).ravel().tolist()) + "]"
    return _format_scalar(v)


def _parse_scalar(text):
    text = text.strip()
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_value(text):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(part) for part in inner.split(",")]
    return _parse_scalar(text)


def dumps_kv(items):
    lines = []
    for key, value in items.items():
        lines.append(f"{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"


def loads_kv(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = parse_value(value)
    return out


def atomic_write_text(path, text):
    """Write via a sibling temp file and rename, so failures leave no partial file."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".pllmm-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_kv(path, items):
    atomic_write_text(path, dumps_kv(items))


def read_kv(path):
    with open(path) as handle:
        return loads_kv(handle.read())
