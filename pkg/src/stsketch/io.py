"""Plain-text file formats.

Tensor (``.tns``)::

    dims I J K
    i j k value        # 0-based, one line per stored entry

Mask::

    dims I J K
    t                  # an observed time slice
    i j k              # an individually observed cell (optional)

Factors::

    rank R dims I J K
    <I rows of A> <J rows of B> <K rows of C>   # row-major, R values per line

Floats are written with ``repr`` so every file reloads bit-for-bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import DenseTensor, KruskalModel, MaskTensor, SparseTensor


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_lines(path):
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                yield line


def _parse_dims(line: str, path) -> tuple[int, int, int]:
    parts = line.split()
    if len(parts) != 4 or parts[0] != "dims":
        raise ValueError(f"{path}: expected 'dims I J K' header, got {line!r}")
    return tuple(int(p) for p in parts[1:])


def write_tensor(path, T) -> None:
    """Write a sparse tensor, or a dense one with every entry listed."""
    if isinstance(T, DenseTensor):
        T = T.to_sparse(keep_zeros=True)
    with open(path, "w") as fh:
        fh.write("dims {} {} {}\n".format(*T.dims))
        for i, j, k, v in T.entries():
            fh.write(f"{i} {j} {k} {_fmt(v)}\n")


def read_tensor(path) -> SparseTensor:
    lines = _read_lines(path)
    try:
        dims = _parse_dims(next(lines), path)
    except StopIteration:
        raise ValueError(f"{path}: empty tensor file") from None
    subs, vals = [], []
    for n, line in enumerate(lines, start=2):
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{n}: expected 'i j k value', got {line!r}")
        subs.append([int(p) for p in parts[:3]])
        vals.append(float(parts[3]))
    return SparseTensor(dims, np.array(subs, dtype=np.int64).reshape(-1, 3), np.array(vals))


def read_dense(path) -> DenseTensor:
    return read_tensor(path).to_dense()


def write_mask(path, mask: MaskTensor) -> None:
    with open(path, "w") as fh:
        fh.write("dims {} {} {}\n".format(*mask.dims))
        for t in sorted(mask.observed_slices):
            fh.write(f"{t}\n")
        if mask.entries is not None:
            for i, j, k in mask.entries.tolist():
                fh.write(f"{i} {j} {k}\n")


def read_mask(path) -> MaskTensor:
    lines = _read_lines(path)
    dims = _parse_dims(next(lines), path)
    slices, entries = [], []
    for line in lines:
        parts = [int(p) for p in line.split()]
        if len(parts) == 1:
            slices.append(parts[0])
        elif len(parts) == 3:
            entries.append(parts)
        else:
            raise ValueError(f"{path}: bad mask line {line!r}")
    return MaskTensor(dims, frozenset(slices), np.array(entries, dtype=np.int64) if entries else None)


def write_factors(path, model: KruskalModel) -> None:
    model = model.absorb_weights()
    I, J, K = model.dims
    with open(path, "w") as fh:
        fh.write(f"rank {model.rank} dims {I} {J} {K}\n")
        for M in model.factors:
            for row in M:
                fh.write(" ".join(_fmt(x) for x in row) + "\n")


def read_factors(path) -> KruskalModel:
    lines = list(_read_lines(path))
    head = lines[0].split()
    if len(head) != 6 or head[0] != "rank" or head[2] != "dims":
        raise ValueError(f"{path}: expected 'rank R dims I J K' header")
    R = int(head[1])
    I, J, K = (int(x) for x in head[3:])
    rows = np.array([[float(x) for x in ln.split()] for ln in lines[1:]]).reshape(-1, R)
    if len(rows) != I + J + K:
        raise ValueError(f"{path}: expected {I + J + K} factor rows, found {len(rows)}")
    return KruskalModel(rows[:I], rows[I:I + J], rows[I + J:])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
