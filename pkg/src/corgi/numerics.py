"""Deterministic dense-matrix kernels and a counter-based seeded RNG.

Everything downstream (weights, initial noise, schedules, policies) is built
on these primitives, so two properties are non-negotiable here:

* all arithmetic is 64-bit float, and
* random streams are pure functions of (seed, counter).

Matrix products that feed the attention path go through :func:`matmul` /
:func:`matmul_nt` instead of ``@``. BLAS gemm picks different kernels (and
different accumulation orders) depending on operand shape, so ``(A[rows] @ B)``
is not bit-equal to ``(A @ B)[rows]`` in general. ``np.einsum`` with
``optimize=False`` accumulates each output element in an order that depends
only on the reduction length, which makes row-subset computations reproduce
the full product bit-for-bit; the partial-attention engine relies on that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Matrix = np.ndarray

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SEED_SALT = 0x8A5CD789635D2DFF
_SH30 = np.uint64(30)
_SH27 = np.uint64(27)
_SH31 = np.uint64(31)
_SH11 = np.uint64(11)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = (z ^ (z >> _SH30)) * _M1
    z = (z ^ (z >> _SH27)) * _M2
    return z ^ (z >> _SH31)


def _stream_base(seed: int) -> np.uint64:
    word = np.array([(seed ^ _SEED_SALT) & _MASK64], dtype=np.uint64)
    return _mix64(word)[0]


def derive_seed(seed: int, tag: str) -> int:
    """Derive an independent 64-bit sub-seed from (seed, tag).

    Distinct tags give statistically independent streams for the same user
    seed (weights vs. initial noise vs. policy sampling).
    """
    h = 0xCBF29CE484222325
    for byte in tag.encode("utf-8"):  # FNV-1a fold of the tag
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    word = np.array([(seed ^ h) & _MASK64], dtype=np.uint64)
    return int(_mix64(word)[0])


def normal_stream(seed: int, counter: int, n: int) -> np.ndarray:
    """n standard-normal draws as a pure function of (seed, counter).

    Counter words counter..counter+2*ceil(n/2)-1 are hashed to uniforms in
    (0, 1] and passed through the Box-Muller transform. The transform is
    fixed; the stream is bit-reproducible for a given (seed, counter).
    """
    if n < 1:
        raise ValueError("empty shape")
    pairs = (n + 1) // 2
    base = _stream_base(seed)
    idx = np.arange(counter, counter + 2 * pairs, dtype=np.uint64)
    words = _mix64(base + (idx + np.uint64(1)) * _GAMMA)
    u = ((words >> _SH11).astype(np.float64) + 1.0) * 2.0**-53  # (0, 1]
    u1, u2 = u[:pairs], u[pairs:]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * np.pi) * u2
    return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]


@dataclass
class SeededRng:
    """Counter-based random stream.

    Output is a pure function of (seed, counter); drawing advances the
    counter by the exact number of words consumed, so two instances with
    equal state produce equal streams on any platform.
    """

    seed: int
    counter: int = 0

    def standard_normal(self, rows: int, cols: int) -> Matrix:
        if rows < 1 or cols < 1:
            raise ValueError("empty shape")
        n = rows * cols
        out = normal_stream(self.seed, self.counter, n)
        self.counter += 2 * ((n + 1) // 2)
        return out.reshape(rows, cols)


def rng_standard_normal(rng: SeededRng, rows: int, cols: int) -> Matrix:
    """Draw a rows x cols matrix of i.i.d. standard normals, advancing rng."""
    return rng.standard_normal(rows, cols)


def ensure_matrix(m, name: str = "matrix") -> Matrix:
    """Coerce to a nonempty finite 2-D float64 array or raise ValueError."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """a @ b with a shape-stable accumulation order (see module docstring)."""
    return np.einsum("ij,jk->ik", a, b, optimize=False)


def matmul_nt(a: Matrix, b: Matrix) -> Matrix:
    """a @ b.T, shape-stable; used for attention scores."""
    return np.einsum("id,jd->ij", a, b, optimize=False)


def softmax_rows(m: Matrix) -> Matrix:
    """Row-wise exp-normalization with max subtraction for stability."""
    a = ensure_matrix(m, "softmax input")
    z = a - np.max(a, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def frobenius_norm(m: Matrix) -> float:
    """Square root of the sum of squared entries."""
    a = ensure_matrix(m, "norm input")
    return float(np.sqrt(np.sum(np.square(a))))
