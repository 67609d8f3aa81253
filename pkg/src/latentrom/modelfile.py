"""Text serialization of trained models.

A model file is a header of ``key value`` lines followed by named
matrix blocks in the same exact-decimal layout as the matrix files::

    # latentrom model
    version 1
    tool_version 0.1.0
    config_hash 3f2a...
    seed 0
    p 4
    l 2
    dt 0.01
    cell midpoint-stable
    z0 absent
    z_init absent
    force {"kind": "identity", "l": 2}
    matrix theta_d
    4 1
    ...
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import _matrix_lines, _parse_matrix
from .errors import ParseError
from .model_core import CELL_KINDS, ModelParams

MODEL_VERSION = 1
_HEADER = ("version", "tool_version", "config_hash", "seed", "p", "l", "dt", "cell", "z0", "z_init", "force")


def model_text(params: ModelParams, force_spec: dict | None = None, config_hash: str = "none",
               seed=None) -> str:
    lines = [
        "# latentrom model",
        f"version {MODEL_VERSION}",
        f"tool_version {__version__}",
        f"config_hash {config_hash}",
        f"seed {'none' if seed is None else int(seed)}",
        f"p {params.p}",
        f"l {params.l}",
        f"dt {params.dt!r}",
        f"cell {params.cell}",
        f"z0 {'absent' if params.z0 is None else 'present'}",
        f"z_init {'absent' if params.z_init is None else 'present'}",
        "force " + (json.dumps(force_spec, sort_keys=True) if force_spec is not None else "none"),
    ]
    for name in params.names():
        arr = getattr(params, name)
        lines.append(f"matrix {name}")
        lines += _matrix_lines(arr.reshape(arr.shape[0], -1))
    return "\n".join(lines) + "\n"


def save_model(path, params: ModelParams, force_spec: dict | None = None, config_hash: str = "none",
               seed=None) -> None:
    Path(path).write_text(model_text(params, force_spec, config_hash, seed))


def load_model(path):
    """Read a model file.

    Returns ``(params, force_spec, header)``; ``force_spec`` is ``None``
    when the file records no force.
    """
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    header = {}
    for pos, key in enumerate(_HEADER):
        if pos >= len(lines):
            raise ParseError(f"{path}: missing header field {key!r}")
        parts = lines[pos].split(None, 1)
        if parts[0] != key:
            raise ParseError(f"{path}:{pos + 1}: expected {key!r}, got {lines[pos]!r}")
        header[key] = parts[1] if len(parts) > 1 else ""
    try:
        if int(header["version"]) != MODEL_VERSION:
            raise ParseError(f"{path}: unsupported model version {header['version']}")
        p, l = int(header["p"]), int(header["l"])  # noqa: E741
        dt = float(header["dt"])
        force_spec = None if header["force"] == "none" else json.loads(header["force"])
    except (ValueError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad header: {exc}") from exc
    if header["cell"] not in CELL_KINDS:
        raise ParseError(f"{path}: unknown cell kind {header['cell']!r}")
    blocks, pos = {}, len(_HEADER)
    while pos < len(lines):
        head = lines[pos].split()
        if len(head) != 2 or head[0] != "matrix":
            raise ParseError(f"{path}: expected 'matrix <name>', got {lines[pos]!r}")
        blocks[head[1]], pos = _parse_matrix(lines, pos + 1, path)
    expected = {"theta_d": (p, 1), "C": (p, p), "R": (p, l)}
    for opt in ("z0", "z_init"):
        if header[opt] == "present":
            expected[opt] = (p, 1)
        elif header[opt] != "absent":
            raise ParseError(f"{path}: {opt} must be 'present' or 'absent'")
    if set(blocks) != set(expected):
        raise ParseError(f"{path}: blocks {sorted(blocks)} do not match the header ({sorted(expected)})")
    for name, shape in expected.items():
        if blocks[name].shape != shape:
            raise ParseError(f"{path}: block {name} has shape {blocks[name].shape}, expected {shape}")
    try:
        params = ModelParams(
            theta_d=blocks["theta_d"].reshape(-1), C=blocks["C"], R=blocks["R"], dt=dt,
            z0=blocks["z0"].reshape(-1) if "z0" in blocks else None,
            z_init=blocks["z_init"].reshape(-1) if "z_init" in blocks else None,
            cell=header["cell"],
        )
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return params, force_spec, header


def force_spec_equal(a, b) -> bool:
    return json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def parameters_equal(a: ModelParams, b: ModelParams) -> bool:
    """Bitwise equality of every parameter block and the metadata."""
    if (a.names() != b.names() or a.dt != b.dt or a.cell != b.cell):
        return False
    return all(np.array_equal(getattr(a, n), getattr(b, n)) for n in a.names())
