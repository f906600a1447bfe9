"""File formats used by the command-line tool.

Matrices travel as CSV (optional "N,D" header, 17-significant-digit decimals
so doubles round-trip losslessly) or as a small binary container: the magic
bytes ``CAOTEMB1``, two little-endian uint32 counts N and D, then N*D
little-endian float32 values row-major (widened to float64 on load). Labels
are one decimal integer per line; configs are ``key=value`` lines with ``#``
comments; reports are JSON with sorted keys.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "ParseError",
    "EMB_MAGIC",
    "read_matrix",
    "read_matrix_csv",
    "read_matrix_binary",
    "write_matrix_csv",
    "write_matrix_binary",
    "read_labels",
    "write_labels",
    "parse_config_text",
    "read_config",
    "format_config",
    "write_report",
]

EMB_MAGIC = b"CAOTEMB1"


class ParseError(ValueError):
    """A file failed to parse; message carries the offending line number."""


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    rows: list[list[float]] = []
    expected: tuple[int, int] | None = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if lineno == 1 and expected is None and len(fields) == 2:
                try:
                    n, d = int(fields[0]), int(fields[1])
                except ValueError:
                    n = d = -1
                if n >= 0 and d >= 0 and "." not in line and "e" not in line.lower():
                    expected = (n, d)
                    continue
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: not a number: {exc}") from None
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(rows[0])} fields, got {len(rows[-1])}"
                )
    if not rows:
        raise ParseError(f"{path}:1: empty matrix file")
    mat = np.asarray(rows, dtype=np.float64)
    if expected is not None and mat.shape != expected:
        raise ParseError(
            f"{path}:1: header says {expected[0]}x{expected[1]}, body is {mat.shape[0]}x{mat.shape[1]}"
        )
    if not np.all(np.isfinite(mat)):
        raise ParseError(f"{path}:1: matrix contains non-finite values")
    return mat


def read_matrix_binary(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != EMB_MAGIC:
        raise ParseError(f"{path}:1: bad magic, expected {EMB_MAGIC!r}")
    if len(blob) < 16:
        raise ParseError(f"{path}:1: truncated header")
    n, d = struct.unpack("<II", blob[8:16])
    body = blob[16:]
    if len(body) != 4 * n * d:
        raise ParseError(f"{path}:1: body holds {len(body)} bytes, header implies {4 * n * d}")
    mat = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(n, d)
    if not np.all(np.isfinite(mat)):
        raise ParseError(f"{path}:1: matrix contains non-finite values")
    return mat


def read_matrix(path) -> np.ndarray:
    """Load a matrix file, sniffing the binary magic before falling back to CSV."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(8)
    if head == EMB_MAGIC:
        return read_matrix_binary(path)
    return read_matrix_csv(path)


def write_matrix_csv(path, mat, header: bool = True) -> None:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat.reshape(-1, 1)
    lines = []
    if header:
        lines.append(f"{mat.shape[0]},{mat.shape[1]}")
    for row in mat:
        lines.append(",".join(f"{x:.17g}" for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_matrix_binary(path, mat) -> None:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat.reshape(-1, 1)
    n, d = mat.shape
    payload = EMB_MAGIC + struct.pack("<II", n, d) + mat.astype("<f4").tobytes()
    Path(path).write_bytes(payload)


def read_labels(path) -> np.ndarray:
    path = Path(path)
    values = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(int(line))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: not an integer label: {line!r}") from None
    if not values:
        raise ParseError(f"{path}:1: empty label file")
    return np.asarray(values, dtype=np.int64)


def write_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    Path(path).write_text("\n".join(str(int(x)) for x in labels) + "\n", encoding="utf-8")


_CONFIG_SPEC: dict[str, type] = {
    "e_total": int,
    "e_warm": int,
    "batch": int,
    "lambda": float,
    "tau_a": float,
    "tau_i": float,
    "lr": float,
    "seed": int,
    "grad_mode": str,
    "d2": int,
    "eps1": float,
    "eps2": float,
    "eps3": float,
    "t1": int,
    "t2": int,
    "newton_iters": int,
    "armijo_c1": float,
    "armijo_shrink": float,
    "marginal_tol": float,
    "prob_floor": float,
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse key=value configuration lines, rejecting unknown keys."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_SPEC:
            valid = ", ".join(sorted(_CONFIG_SPEC))
            raise ParseError(f"{source}:{lineno}: unknown key {key!r}; valid keys: {valid}")
        caster = _CONFIG_SPEC[key]
        try:
            out[key] = caster(value)
        except ValueError:
            raise ParseError(
                f"{source}:{lineno}: cannot parse value {value!r} for key {key!r} as {caster.__name__}"
            ) from None
    return out


def read_config(path) -> dict:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def format_config(resolved: dict) -> str:
    """Render a resolved configuration back to re-ingestible key=value text."""
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if isinstance(value, float):
            lines.append(f"{key}={value:.17g}")
        else:
            lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def write_report(path, payload: dict) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
