"""Three-mode dense/sparse tensors and the multilinear primitives used by CP.

Unfolding convention (used everywhere in the package):

    mode 1: X_(1)[i, j + J*k]
    mode 2: X_(2)[j, i + I*k]
    mode 3: X_(3)[k, i + I*j]

i.e. among the remaining modes the lower-numbered one varies fastest.  With
``khatri_rao(M1, M2)[i1*n2 + i2, r] = M1[i1, r] * M2[i2, r]`` this gives
``X_(1) = A (C kr B)^T``, ``X_(2) = B (C kr A)^T`` and ``X_(3) = C (B kr A)^T``
for a Kruskal tensor ``[[A, B, C]]``.

Dense values live in a C-ordered ``(I, J, K)`` numpy array (k fastest in
memory); the unfolding above is independent of that storage order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


def _check_dims(dims: Sequence[int]) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise DimensionError(f"expected three positive dims, got {dims}")
    return dims


def _check_mode(mode: int) -> int:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode


@dataclass(frozen=True)
class DenseTensor:
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 3:
            raise DimensionError(f"expected a 3-mode array, got ndim={data.ndim}")
        _check_dims(data.shape)
        if not np.all(np.isfinite(data)):
            raise ValueError("tensor values must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, dims):
        return cls(np.zeros(_check_dims(dims)))

    def to_sparse(self, keep_zeros: bool = False) -> SparseTensor:
        if keep_zeros:
            subs = np.argwhere(np.ones(self.dims, dtype=bool))
        else:
            subs = np.argwhere(self.data != 0)
        vals = self.data[tuple(subs.T)] if len(subs) else np.zeros(0)
        return SparseTensor(self.dims, subs, vals)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class SparseTensor:
    """COO tensor, entries sorted lexicographically by (i, j, k).

    Explicit zeros are allowed (a sketch stores every cell of a sampled slice).
    """

    dims: tuple[int, int, int]
    subs: np.ndarray = field(repr=False)
    vals: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = _check_dims(self.dims)
        subs = np.asarray(self.subs, dtype=np.int64).reshape(-1, 3)
        vals = np.asarray(self.vals, dtype=float).reshape(-1)
        if len(subs) != len(vals):
            raise DimensionError(f"{len(subs)} subscripts but {len(vals)} values")
        if len(subs):
            if subs.min() < 0 or np.any(subs >= np.array(dims)):
                raise IndexError("subscript outside tensor dims")
            if not np.all(np.isfinite(vals)):
                raise ValueError("tensor values must be finite")
            lin = np.ravel_multi_index(tuple(subs.T), dims)
            order = np.argsort(lin, kind="stable")
            lin = lin[order]
            if np.any(lin[1:] == lin[:-1]):
                raise ValueError("duplicate subscripts in sparse tensor")
            subs, vals = subs[order], vals[order]
        subs.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "subs", subs)
        object.__setattr__(self, "vals", vals)

    @classmethod
    def from_entries(cls, dims, entries: Iterable[tuple[int, int, int, float]]):
        entries = list(entries)
        if not entries:
            return cls(dims, np.zeros((0, 3), dtype=np.int64), np.zeros(0))
        arr = np.array(entries, dtype=object)
        return cls(dims, arr[:, :3].astype(np.int64), arr[:, 3].astype(float))

    @classmethod
    def empty(cls, dims):
        return cls(dims, np.zeros((0, 3), dtype=np.int64), np.zeros(0))

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def entries(self):
        for (i, j, k), v in zip(self.subs.tolist(), self.vals.tolist()):
            yield i, j, k, v

    def to_dense(self) -> DenseTensor:
        out = np.zeros(self.dims)
        if self.nnz:
            out[tuple(self.subs.T)] = self.vals
        return DenseTensor(out)


@dataclass(frozen=True)
class MaskTensor:
    """Binary observation pattern.

    The usual case is slice-structured: ``w(i, j, k) = 1`` iff ``i`` is in
    ``observed_slices``.  ``entries`` optionally adds individual observed cells
    (an (n, 3) index array) on top of the slices.
    """

    dims: tuple[int, int, int]
    observed_slices: frozenset = frozenset()
    entries: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        dims = _check_dims(self.dims)
        slices = frozenset(int(t) for t in self.observed_slices)
        if any(t < 0 or t >= dims[0] for t in slices):
            raise IndexError("observed slice index outside the time mode")
        entries = self.entries
        if entries is not None:
            entries = np.asarray(entries, dtype=np.int64).reshape(-1, 3)
            if len(entries) and (entries.min() < 0 or np.any(entries >= np.array(dims))):
                raise IndexError("mask entry outside tensor dims")
            entries = np.unique(entries, axis=0)
            entries.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "observed_slices", slices)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def full(cls, dims):
        return cls(dims, frozenset(range(dims[0])))

    @property
    def is_slice_structured(self) -> bool:
        return self.entries is None or len(self.entries) == 0

    def slice_array(self) -> np.ndarray:
        return np.array(sorted(self.observed_slices), dtype=np.int64)

    def __call__(self, i: int, j: int, k: int) -> int:
        if not (0 <= i < self.dims[0] and 0 <= j < self.dims[1] and 0 <= k < self.dims[2]):
            raise IndexError((i, j, k))
        if i in self.observed_slices:
            return 1
        if self.entries is not None and len(self.entries):
            return int(np.any(np.all(self.entries == (i, j, k), axis=1)))
        return 0

    def to_dense(self) -> np.ndarray:
        w = np.zeros(self.dims)
        w[self.slice_array()] = 1.0
        if self.entries is not None and len(self.entries):
            w[tuple(self.entries.T)] = 1.0
        return w

    def observed_subs(self) -> np.ndarray:
        """All observed (i, j, k), sorted lexicographically."""
        I, J, K = self.dims
        t = self.slice_array()
        jj, kk = np.meshgrid(np.arange(J), np.arange(K), indexing="ij")
        block = np.column_stack([
            np.repeat(t, J * K),
            np.tile(jj.ravel(), len(t)),
            np.tile(kk.ravel(), len(t)),
        ]).astype(np.int64)
        if self.entries is None or len(self.entries) == 0:
            return block
        extra = self.entries[~np.isin(self.entries[:, 0], t)]
        subs = np.vstack([block, extra])
        lin = np.ravel_multi_index(tuple(subs.T), self.dims)
        return subs[np.argsort(lin, kind="stable")]

    def count(self) -> int:
        return len(self.observed_subs())


@dataclass(frozen=True)
class KruskalModel:
    """CP model ``sum_r weights[r] * a_r o b_r o c_r`` (factors kept unnormalized)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        mats = [np.array(m, dtype=float) for m in (self.A, self.B, self.C)]
        if any(m.ndim != 2 for m in mats):
            raise DimensionError("factors must be matrices")
        R = mats[0].shape[1]
        if any(m.shape[1] != R for m in mats) or R < 1:
            raise DimensionError(f"factor column counts differ: {[m.shape for m in mats]}")
        w = np.ones(R) if self.weights is None else np.array(self.weights, dtype=float).reshape(-1)
        if len(w) != R:
            raise DimensionError("weights length must equal rank")
        for m in (*mats, w):
            if not np.all(np.isfinite(m)):
                raise ValueError("factor entries must be finite")
            m.setflags(write=False)
        for name, m in zip("ABC", mats):
            object.__setattr__(self, name, m)
        object.__setattr__(self, "weights", w)

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    @property
    def factors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.A, self.B, self.C

    def absorb_weights(self) -> KruskalModel:
        """Equivalent model with unit weights (weights folded into A)."""
        return KruskalModel(self.A * self.weights, self.B, self.C)

    def full(self) -> np.ndarray:
        return np.einsum("r,ir,jr,kr->ijk", self.weights, self.A, self.B, self.C)

    def values_at(self, subs: np.ndarray) -> np.ndarray:
        subs = np.asarray(subs, dtype=np.int64).reshape(-1, 3)
        prod = self.A[subs[:, 0]] * self.B[subs[:, 1]] * self.C[subs[:, 2]]
        return prod @ self.weights


def khatri_rao(M1: np.ndarray, M2: np.ndarray) -> np.ndarray:
    """Columnwise Kronecker product; row ``i1 * n2 + i2`` holds ``M1[i1] * M2[i2]``."""
    M1 = np.asarray(M1, dtype=float)
    M2 = np.asarray(M2, dtype=float)
    if M1.ndim != 2 or M2.ndim != 2 or M1.shape[1] != M2.shape[1]:
        raise DimensionError(f"khatri_rao needs equal column counts, got {M1.shape} and {M2.shape}")
    return (M1[:, None, :] * M2[None, :, :]).reshape(-1, M1.shape[1])


_MODE_AXES = {1: (0, 1, 2), 2: (1, 0, 2), 3: (2, 0, 1)}


def matricize(T, mode: int):
    """Mode-``mode`` unfolding.  Dense input gives an ndarray, sparse a scipy CSR matrix."""
    _check_mode(mode)
    if isinstance(T, SparseTensor):
        I, J, K = T.dims
        i, j, k = T.subs.T
        if mode == 1:
            rows, cols, shape = i, j + J * k, (I, J * K)
        elif mode == 2:
            rows, cols, shape = j, i + I * k, (J, I * K)
        else:
            rows, cols, shape = k, i + I * j, (K, I * J)
        return sp.csr_matrix((T.vals, (rows, cols)), shape=shape)
    data = T.data if isinstance(T, DenseTensor) else np.asarray(T, dtype=float)
    moved = np.transpose(data, _MODE_AXES[mode])
    return moved.reshape(moved.shape[0], -1, order="F")


def fold(M: np.ndarray, mode: int, dims) -> DenseTensor:
    """Inverse of :func:`matricize` for dense tensors."""
    _check_mode(mode)
    dims = _check_dims(dims)
    axes = _MODE_AXES[mode]
    moved_shape = tuple(dims[a] for a in axes)
    moved = np.asarray(M, dtype=float).reshape(moved_shape, order="F")
    return DenseTensor(np.transpose(moved, np.argsort(axes)))


def _other_factors(factors, mode):
    A, B, C = factors
    return {1: (B, C), 2: (A, C), 3: (A, B)}[mode]


def mttkrp_coo(subs: np.ndarray, vals: np.ndarray, factors, mode: int, n_rows: int) -> np.ndarray:
    """MTTKRP for raw COO data; O(nnz * R), the Khatri-Rao product is never formed.

    Row ``subs[:, mode-1]`` accumulates ``vals * (product of the other two factor rows)``,
    which equals ``X_(n) @ khatri_rao(...)`` under the module's unfolding convention.
    """
    F1, F2 = _other_factors(factors, mode)
    others = [m for m in (0, 1, 2) if m != mode - 1]
    R = F1.shape[1]
    out = np.zeros((n_rows, R))
    if len(vals) == 0:
        return out
    contrib = vals[:, None] * F1[subs[:, others[0]]] * F2[subs[:, others[1]]]
    idx = subs[:, mode - 1]
    for r in range(R):
        out[:, r] = np.bincount(idx, weights=contrib[:, r], minlength=n_rows)
    return out


def mttkrp(T: SparseTensor, model: KruskalModel, mode: int) -> np.ndarray:
    """``T_(n) @ KR`` with KR = C kr B, C kr A, B kr A for modes 1, 2, 3.

    Model weights are applied to the result (they scale the Khatri-Rao columns).
    """
    _check_mode(mode)
    if tuple(T.dims) != model.dims:
        raise DimensionError(f"tensor dims {T.dims} != model dims {model.dims}")
    out = mttkrp_coo(T.subs, T.vals, model.factors, mode, T.dims[mode - 1])
    return out * model.weights


def reconstruct_masked(model: KruskalModel, mask: MaskTensor) -> SparseTensor:
    """``W * [[A, B, C]]`` stored at every observed position."""
    if tuple(mask.dims) != model.dims:
        raise DimensionError(f"mask dims {mask.dims} != model dims {model.dims}")
    subs = mask.observed_subs()
    return SparseTensor(mask.dims, subs, model.values_at(subs))
