"""Versioned text formats shared by targets, tracks and reports.

Sectioned files look like::

    format-version 1
    [camera]
    focal 512
    array rotation 4
    1 0 0 0
    [human]
    ...

``key value`` lines hold scalars or strings; ``array name d0 d1 ...`` is
followed by ``prod(d0..d-2)`` rows of ``d-1`` numbers (a 1-D array is one row).
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_sections(path, sections: dict, version: int = FORMAT_VERSION) -> None:
    lines = [f"format-version {version}"]
    for name, body in sections.items():
        lines.append(f"[{name}]")
        for key, val in body.items():
            if isinstance(val, np.ndarray):
                arr = np.asarray(val)
                shape = arr.shape if arr.ndim else (1,)
                lines.append(f"array {key} " + " ".join(str(d) for d in shape))
                kind = "i" if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool else "f"
                rows = arr.reshape(-1, shape[-1]) if shape[-1] else np.zeros((0, 0))
                for row in rows:
                    lines.append(" ".join(str(int(v)) if kind == "i" else repr(float(v)) for v in row))
            else:
                lines.append(f"{key} {_fmt(val)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _scalar(tok: str):
    for cast in (int, float):
        try:
            return cast(tok)
        except ValueError:
            pass
    return tok


def read_sections(path, version: int = FORMAT_VERSION) -> dict:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("format-version"):
        raise FormatError(f"{path}: missing format-version line")
    got = int(lines[0].split()[1])
    if got != version:
        raise FormatError(f"{path}: unsupported format-version {got}")
    out: dict = {}
    cur = None
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            cur = out.setdefault(line[1:-1], {})
            continue
        if cur is None:
            raise FormatError(f"{path}: content before first section")
        parts = line.split()
        if parts[0] == "array":
            name, shape = parts[1], tuple(int(d) for d in parts[2:])
            nrows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
            if shape[-1] == 0:
                nrows = 0 if len(shape) > 1 else 1
            rows = lines[i:i + nrows] if shape[-1] else []
            i += len(rows)
            try:
                data = np.array([[float(t) for t in r.split()] for r in rows], dtype=float)
            except ValueError as exc:
                raise FormatError(f"{path}: bad numeric row in array {name}") from exc
            if data.size != int(np.prod(shape)):
                raise FormatError(f"{path}: array {name} has {data.size} values, expected shape {shape}")
            cur[name] = data.reshape(shape)
        else:
            cur[parts[0]] = _scalar(" ".join(parts[1:])) if len(parts) > 1 else ""
    return out


def write_csv(path, header, rows) -> None:
    """Comma-separated with a ``# format-version`` comment line above the header."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# format-version {FORMAT_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# format-version"):
            raise FormatError(f"{path}: missing format-version line")
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
