"""Dense third-order tensor algebra.

Tensors are plain ``numpy`` arrays of shape ``(I1, I2, I3)``. Unfoldings use
the convention where earlier indices vary fastest along the columns, so that
for a CPD with factors ``(B1, B2, B3)``::

    unfold(X, 1).T == khatri_rao(B3, B2) @ B1.T
    unfold(X, 2).T == khatri_rao(B3, B1) @ B2.T
    unfold(X, 3).T == khatri_rao(B2, B1) @ B3.T

Row ``k * I2 + j`` of ``unfold(X, 1).T`` therefore holds ``X[:, j, k]``: the
third index selects blocks of ``I2`` consecutive rows, which is the layout
spatial smoothing slides over. Flat storage (``save_tensor``) is mode-1
fastest, i.e. Fortran order.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import NamedTuple

import numpy as np

_MAGIC = "ISACT3"


class FactorTriple(NamedTuple):
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray

    @property
    def rank(self) -> int:
        return self.b1.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.b1.shape[0], self.b2.shape[0], self.b3.shape[0]


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product; column ``q`` is ``kron(a[:, q], b[:, q])``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"column counts differ: {a.shape} vs {b.shape}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def cpd_reconstruct(f: FactorTriple) -> np.ndarray:
    """Sum of rank-one terms ``sum_q b1[:, q] o b2[:, q] o b3[:, q]``."""
    b1, b2, b3 = (np.asarray(x) for x in f)
    if not (b1.ndim == b2.ndim == b3.ndim == 2) or not (b1.shape[1] == b2.shape[1] == b3.shape[1]):
        raise ValueError("factor matrices must share their column count")
    return np.einsum("iq,jq,kq->ijk", b1, b2, b3)


def _check_mode(mode: int) -> None:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding (1-based), of shape ``I_mode x prod(other dims)``."""
    _check_mode(mode)
    t = np.asarray(t)
    if t.ndim != 3:
        raise ValueError("expected a third-order tensor")
    moved = np.moveaxis(t, mode - 1, 0)
    return moved.reshape(moved.shape[0], -1, order="F")


def fold(m: np.ndarray, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    rest = [d for i, d in enumerate(dims) if i != mode - 1]
    moved = np.asarray(m).reshape([dims[mode - 1], *rest], order="F")
    return np.moveaxis(moved, 0, mode - 1)


def add_noise(t: np.ndarray, snr_db: float, rng=None) -> tuple[np.ndarray, float]:
    """Add circular complex Gaussian noise at ``||t||^2 / E||noise||^2 = 10^(snr_db/10)``.

    Returns the noisy tensor and the per-entry noise variance. ``snr_db=inf``
    leaves the tensor untouched.
    """
    t = np.asarray(t)
    if math.isinf(snr_db) and snr_db > 0:
        return t.copy(), 0.0
    if not np.isfinite(snr_db):
        raise ValueError(f"invalid SNR {snr_db}")
    energy = float(np.vdot(t, t).real)
    if energy == 0.0:
        raise ValueError("cannot set an SNR relative to a zero tensor")
    rng = np.random.default_rng(rng)
    sigma2 = energy / (t.size * 10.0 ** (snr_db / 10.0))
    noise = rng.standard_normal((2, *t.shape))
    return t + np.sqrt(sigma2 / 2) * (noise[0] + 1j * noise[1]), sigma2


def save_tensor(path, t: np.ndarray) -> None:
    """Write a header line ``ISACT3 I1 I2 I3 F complex128`` followed by raw data."""
    t = np.asarray(t, dtype=np.complex128)
    if t.ndim != 3:
        raise ValueError("expected a third-order tensor")
    header = f"{_MAGIC} {t.shape[0]} {t.shape[1]} {t.shape[2]} F complex128\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(t.astype("<c16").tobytes(order="F"))


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    line, _, payload = raw.partition(b"\n")
    fields = line.decode("ascii").split()
    if len(fields) != 6 or fields[0] != _MAGIC or fields[4] != "F" or fields[5] != "complex128":
        raise ValueError(f"{path}: not an {_MAGIC} tensor file")
    dims = tuple(int(x) for x in fields[1:4])
    data = np.frombuffer(payload, dtype="<c16")
    if data.size != math.prod(dims):
        raise ValueError(f"{path}: payload has {data.size} values, header says {dims}")
    return data.reshape(dims, order="F").astype(np.complex128)
