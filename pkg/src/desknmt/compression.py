"""Magnitude pruning, mask-preserving retraining and CCS sparse inference."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

__all__ = ["SparseCCS", "to_ccs", "ccs_matvec", "PruneMask", "magnitude_prune",
           "retrain_pruned", "sparse_infer", "prunable_names", "memory_report"]

VALUE_BYTES = 4
INDEX_BYTES = 4


@dataclass
class SparseCCS:
    """Compressed column storage: column ``j`` owns ``values[col_ptr[j]:col_ptr[j+1]]``."""

    shape: tuple[int, int]
    col_ptr: np.ndarray
    row_idx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_dense(cls, dense) -> "SparseCCS":
        dense = np.asarray(dense)
        if dense.ndim != 2:
            raise ValueError("CCS needs a 2-d matrix")
        cols, rows = np.nonzero(dense.T)
        col_ptr = np.zeros(dense.shape[1] + 1, dtype=np.int32)
        np.add.at(col_ptr, cols + 1, 1)
        col_ptr = np.cumsum(col_ptr, dtype=np.int32)
        return cls(dense.shape, col_ptr, rows.astype(np.int32), dense.T[cols, rows].copy())

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.values.dtype)
        out[self.row_idx, self._col_of_entry()] = self.values
        return out

    def _col_of_entry(self) -> np.ndarray:
        return np.repeat(np.arange(self.shape[1]), np.diff(self.col_ptr))

    def matvec(self, x) -> np.ndarray:
        return ccs_matvec(self, x)

    def nbytes(self) -> int:
        return self.nnz * (VALUE_BYTES + INDEX_BYTES) + self.col_ptr.size * INDEX_BYTES

    def dense_nbytes(self) -> int:
        return self.shape[0] * self.shape[1] * VALUE_BYTES


def to_ccs(dense) -> SparseCCS:
    return SparseCCS.from_dense(dense)


def ccs_matvec(sparse: SparseCCS, x) -> np.ndarray:
    """``A @ x`` for a CCS matrix ``A``.  ``x`` may be a vector or a column block."""
    x = np.asarray(x)
    if x.shape[0] != sparse.shape[1]:
        raise ValueError(f"dims disagree: {sparse.shape} x {x.shape}")
    out = np.zeros((sparse.shape[0],) + x.shape[1:], dtype=np.result_type(sparse.values, x))
    if sparse.nnz == 0:
        return out
    cols = sparse._col_of_entry()
    contrib = sparse.values.reshape((-1,) + (1,) * (x.ndim - 1)) * x[cols]
    # sum entries row by row: sort by row once, then segment sums
    order = np.argsort(sparse.row_idx, kind="stable")
    rows = sparse.row_idx[order]
    starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    out[rows[starts]] = np.add.reduceat(contrib[order], starts, axis=0)
    return out


# ---------------------------------------------------------------------------
# pruning


def prunable_names(model) -> list[str]:
    """Weight matrices subject to pruning; biases are exempt."""
    return [name for name, p in model.params.items() if p.data.ndim == 2]


@dataclass
class PruneMask:
    masks: dict          # name -> bool array, True = kept

    @property
    def kept_fraction(self) -> float:
        total = sum(m.size for m in self.masks.values())
        return float(sum(int(m.sum()) for m in self.masks.values()) / total) if total else 1.0

    def apply(self, model):
        for name, m in self.masks.items():
            p = model.params[name]
            if m.shape != p.data.shape:
                raise ValueError(f"mask shape {m.shape} != {name} shape {p.data.shape}")
            p.data[~m] = 0
        model.masks = {k: v.astype(model.graph.dtype) for k, v in self.masks.items()}
        return model

    @classmethod
    def from_model(cls, model) -> "PruneMask":
        return cls({k: v.astype(bool) for k, v in model.masks.items()})


def _prune_array(mag: np.ndarray, k: int) -> np.ndarray:
    """Keep-mask removing exactly the ``k`` smallest magnitudes (ties by position)."""
    keep = np.ones(mag.size, dtype=bool)
    if k:
        order = np.argsort(mag, kind="stable")
        keep[order[:k]] = False
    return keep.reshape(mag.shape)


def magnitude_prune(model, fraction: float, scope: str = "class-blind"):
    """Zero the smallest-magnitude weights.

    ``class-blind`` ranks all weights together under one global threshold;
    ``class-uniform`` prunes the same fraction from every matrix.  Already
    pruned positions stay pruned.  Returns ``(model, PruneMask)``.
    """
    if not 0 <= fraction < 1:
        raise ValueError("prune fraction must lie in [0, 1)")
    if scope not in ("class-blind", "class-uniform"):
        raise ValueError(f"unknown pruning scope {scope!r}")
    names = prunable_names(model)
    masks = {}
    if scope == "class-uniform":
        for name in names:
            mag = np.abs(model.params[name].data).reshape(-1)
            masks[name] = _prune_array(mag, int(round(fraction * mag.size))).reshape(model.params[name].shape)
    else:
        mags = np.concatenate([np.abs(model.params[n].data).reshape(-1) for n in names])
        keep = _prune_array(mags, int(round(fraction * mags.size))).reshape(-1)
        pos = 0
        for name in names:
            shape = model.params[name].shape
            size = int(np.prod(shape))
            masks[name] = keep[pos:pos + size].reshape(shape)
            pos += size
    for name, old in model.masks.items():
        if name in masks:
            masks[name] &= old.astype(bool)
    mask = PruneMask(masks)
    mask.apply(model)
    return model, mask


def retrain_pruned(model, mask: PruneMask, examples, epochs: int, config=None, log=None):
    """Continue training with gradients zeroed on pruned positions."""
    from .training import TrainConfig, train

    mask.apply(model)
    if epochs <= 0:
        return model
    cfg = TrainConfig(**{**(config.__dict__ if config else {}), "epochs": epochs})
    train(model, examples, cfg, log=log)
    return model


def sparse_infer(model, sentences, mask: PruneMask | None = None, beam_size: int = 1,
                 batch_size: int = 16, max_len: int = 50):
    """Decode with every pruned weight matrix in CCS form.

    Returns ``(results, report)`` with wall-clock seconds and byte counts.
    The model's dense path is restored afterwards.
    """
    from .decoding import batch_translate

    names = list(mask.masks) if mask is not None else prunable_names(model)
    names = [n for n in names if n not in ("src_emb", "tgt_emb")]   # embeddings are lookups
    model.sparse = {n: to_ccs(model.params[n].data.T) for n in names}
    try:
        start = time.perf_counter()
        results = batch_translate(model, sentences, beam_size, batch_size, max_len)
        seconds = time.perf_counter() - start
    finally:
        sparse = model.sparse
        model.sparse = {}
    report = memory_report(sparse)
    report["seconds"] = seconds
    return results, report


def memory_report(sparse: dict) -> dict:
    """Bytes of the CCS matrices vs their dense float32 form."""
    sp = sum(s.nbytes() for s in sparse.values())
    dense = sum(s.dense_nbytes() for s in sparse.values())
    nnz = sum(s.nnz for s in sparse.values())
    size = sum(s.shape[0] * s.shape[1] for s in sparse.values())
    return {"sparse_bytes": sp, "dense_bytes": dense, "nnz": nnz,
            "zero_fraction": 1 - nnz / size if size else 0.0,
            "break_even_zero_fraction": 1 - VALUE_BYTES / (VALUE_BYTES + INDEX_BYTES)}
