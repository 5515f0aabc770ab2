"""Periodized tensor-product Daubechies wavelets on the unit cube.

Filters are built by spectral factorization and checked against the
orthonormality and vanishing-moment identities rather than copied from a
table.  Mother
functions are tabulated on a dyadic grid with the cascade (two-scale
recursion) and evaluated by interpolation.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Literal, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, ConfigurationError

Kind = Literal["scaling", "wavelet"]

MAX_ORDER = 10


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Orthonormal Daubechies low-pass filter with ``2 * order`` taps."""

    taps: np.ndarray
    order: int

    def __post_init__(self):
        taps = np.array(self.taps, dtype=float)
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def length(self) -> int:
        return self.taps.size

    @property
    def highpass(self) -> np.ndarray:
        """Quadrature mirror filter ``g[k] = (-1)^k h[L-1-k]``."""
        L = self.length
        signs = (-1.0) ** np.arange(L)
        return signs * self.taps[::-1]

    def residuals(self) -> Dict[str, float]:
        """Largest violation of each defining identity."""
        h = self.taps
        L = h.size
        shifts = [
            abs(float(np.dot(h[: L - 2 * k], h[2 * k:])))
            for k in range(1, self.order)
        ]
        t = np.arange(L) / max(L - 1, 1)
        g = self.highpass
        moments = [abs(float(np.dot(g, t ** m))) for m in range(self.order)]
        return {
            "sum": abs(float(h.sum()) - math.sqrt(2.0)),
            "energy": abs(float(np.dot(h, h)) - 1.0),
            "shift_orthogonality": max(shifts, default=0.0),
            "vanishing_moments": max(moments),
        }


def _spectral_factor(order: int) -> np.ndarray:
    # Extremal-phase factor of P(y) = sum_k C(N-1+k, k) y^k with y = sin^2(w/2).
    coeffs = [math.comb(order - 1 + k, k) for k in range(order)][::-1]
    y_roots = np.roots(coeffs)
    poly = np.poly1d([1.0, 1.0]) ** order
    q = np.poly1d([1.0 + 0j])
    for y in y_roots:
        const = 1.0 - 2.0 * y
        part = 2.0 * np.sqrt(y * (y - 1.0))
        z = const + part
        if abs(z) < 1.0:
            z = const - part
        q = q * np.poly1d([1.0, -z])
    taps = (poly * np.poly1d(np.real(q.c))).c[::-1]
    return taps / taps.sum() * math.sqrt(2.0)


def build_filter(order: int) -> FilterBank:
    """Daubechies low-pass filter with ``order`` vanishing moments.

    ``order=1`` is the Haar filter and ``order=4`` the 8-tap "db4" filter.
    """
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= MAX_ORDER:
        raise ConfigurationError(
            f"wavelet order must be an integer in 1..{MAX_ORDER}, got {order!r}"
        )
    order = int(order)
    if order == 1:
        c = 1.0 / math.sqrt(2.0)
        return FilterBank(np.array([c, c]), 1)
    bank = FilterBank(_spectral_factor(order), order)
    worst = max(bank.residuals().values())
    if worst > 1e-12:
        raise ConfigurationError(f"order {order} filter failed validation (residual {worst:.1e})")
    return bank


@dataclass(frozen=True, eq=False)
class CascadeTable:
    """Mother scaling function and wavelet sampled at spacing ``2**-depth``."""

    filter: FilterBank
    depth: int
    phi: np.ndarray
    psi: np.ndarray

    @property
    def support(self) -> float:
        return float(self.filter.length - 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.phi.size) / 2.0 ** self.depth

    def refinement_residual(self) -> float:
        """Sup-norm of ``phi(x) - sqrt(2) sum_k h_k phi(2x - k)`` on the grid."""
        return float(np.max(np.abs(self.phi - _refine(self.phi, self.filter.taps, self.depth, self.depth))))

    def mother(self, kind: Kind, t: np.ndarray) -> np.ndarray:
        """Interpolated mother function; zero outside ``[0, 2*order - 1]``."""
        table = self.phi if kind == "scaling" else self.psi
        t = np.asarray(t, dtype=float)
        scale = 2.0 ** self.depth
        s = t * scale
        idx = np.floor(s)
        inside = (t >= 0.0) & (t <= self.support)
        i0 = np.clip(idx, 0, table.size - 1).astype(np.int64)
        if self.filter.order == 1:
            # Haar functions are piecewise constant on dyadic cells.
            out = table[i0]
        else:
            i1 = np.minimum(i0 + 1, table.size - 1)
            frac = s - idx
            out = table[i0] * (1.0 - frac) + table[i1] * frac
        return np.where(inside, out, 0.0)


def _refine(coarse: np.ndarray, taps: np.ndarray, level: int, out_level: int) -> np.ndarray:
    """Apply ``v(x) = sqrt(2) sum_k taps[k] coarse(2x - k)``.

    ``coarse`` is sampled at spacing ``2**-(level)`` over ``[0, L-1]``; the
    result is sampled at spacing ``2**-out_level`` where ``out_level`` is
    ``level + 1`` during refinement or ``level`` for a residual check.
    """
    L = taps.size
    n_out = (L - 1) * 2 ** out_level + 1
    out = np.zeros(n_out)
    i = np.arange(n_out)
    # 2x - k in units of the coarse spacing
    step = 2 ** (level + 1 - out_level)
    for k, hk in enumerate(taps):
        src = i * step - k * 2 ** level
        ok = (src >= 0) & (src < coarse.size)
        out[ok] += math.sqrt(2.0) * hk * coarse[src[ok]]
    return out


def cascade_evaluate(filter: FilterBank, depth: int = 10) -> CascadeTable:
    """Tabulate the mother scaling function and wavelet by the cascade.

    Integer samples come from the eigenvector of the two-scale operator with
    eigenvalue one, normalized by the partition of unity; each refinement
    halves the grid spacing.
    """
    if not isinstance(depth, (int, np.integer)) or depth < 6:
        raise ArgumentError(f"cascade depth must be an integer >= 6, got {depth!r}")
    h = filter.taps
    L = h.size
    if filter.order == 1:
        phi = np.array([1.0, 0.0])
    else:
        interior = np.arange(1, L - 1)
        M = np.zeros((L - 2, L - 2))
        for a, n in enumerate(interior):
            for b, m in enumerate(interior):
                if 0 <= 2 * n - m < L:
                    M[a, b] = math.sqrt(2.0) * h[2 * n - m]
        _, _, vt = np.linalg.svd(M - np.eye(L - 2))
        v = vt[-1]
        v = v / v.sum()
        phi = np.concatenate([[0.0], v, [0.0]])
    for level in range(1, depth + 1):
        phi = _refine(phi, h, level - 1, level)
    psi = _refine(phi, filter.highpass, depth, depth)
    phi.setflags(write=False)
    psi.setflags(write=False)
    return CascadeTable(filter, int(depth), phi, psi)


@dataclass(frozen=True, eq=False)
class WaveletBasis:
    """Periodized tensor-product wavelet basis on ``[0,1]^dim``.

    Level ``j`` carries ``2**j`` translates per coordinate.  Scaling
    functions at level ``J`` span the same space as the scaling functions at
    ``j0`` plus all wavelets at levels ``j0 .. J-1``.
    """

    filter: FilterBank
    dim: int
    j0: int = 0
    J: int = 4
    cascade_depth: int = 10
    boundary_mode: str = "periodization"
    table: CascadeTable = field(init=False, repr=False)

    def __post_init__(self):
        if self.boundary_mode != "periodization":
            raise ConfigurationError(f"unsupported boundary mode {self.boundary_mode!r}")
        if self.dim < 1:
            raise ConfigurationError("dimension must be positive")
        if self.j0 < 0 or self.J < self.j0:
            raise ConfigurationError(f"need 0 <= j0 <= J, got j0={self.j0}, J={self.J}")
        object.__setattr__(self, "table", cascade_evaluate(self.filter, self.cascade_depth))

    @classmethod
    def daubechies(cls, order: int, dim: int, j0: int = 0, J: int = 4, cascade_depth: int = 10) -> "WaveletBasis":
        return cls(build_filter(order), dim, j0, J, cascade_depth)

    # -- 1D -----------------------------------------------------------------
    def _check_level(self, j: int) -> None:
        if not self.j0 <= j <= self.J:
            raise ArgumentError(f"level {j} outside [{self.j0}, {self.J}]")

    def eval_1d(self, kind: Kind, j: int, k: int, x) -> np.ndarray | float:
        """``2^{j/2} mother(2^j x - k)`` summed over periodic copies."""
        self._check_level(j)
        if kind not in ("scaling", "wavelet"):
            raise ArgumentError(f"kind must be 'scaling' or 'wavelet', got {kind!r}")
        if not 0 <= k < 2 ** j:
            raise ArgumentError(f"shift {k} outside [0, {2 ** j})")
        xa = np.asarray(x, dtype=float)
        if np.any((xa < 0.0) | (xa > 1.0)):
            raise ArgumentError("x must lie in [0, 1]")
        out = self._periodized(kind, j, k, xa)
        return float(out) if out.ndim == 0 else out

    def _periodized(self, kind: Kind, j: int, k, x: np.ndarray) -> np.ndarray:
        period = 2 ** j
        u = np.mod(period * x - k, period)
        out = np.zeros(np.broadcast(u).shape)
        m = 0
        while m * period < self.table.support:
            out = out + self.table.mother(kind, u + m * period)
            m += 1
        return 2.0 ** (j / 2.0) * out

    def sparse_1d(self, kind: Kind, j: int, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nonzero entries of every level-``j`` translate at each point.

        Returns ``(shift, value)`` arrays of shape ``(n, L-1)``.  When the
        period is shorter than the support a shift may appear more than once;
        summing duplicates gives the periodized value.
        """
        x = np.asarray(x, dtype=float)
        period = 2 ** j
        s = period * x
        base = np.floor(s)
        frac = s - base
        offsets = np.arange(self.filter.length - 1)
        t = frac[:, None] + offsets[None, :]
        shift = np.mod(base[:, None].astype(np.int64) - offsets[None, :], period)
        value = 2.0 ** (j / 2.0) * self.table.mother(kind, t)
        return shift, value

    def basis_matrix(self, kind: Kind, j: int, x: np.ndarray) -> np.ndarray:
        """Dense ``(n, 2**j)`` matrix of all level-``j`` translates at ``x``."""
        x = np.asarray(x, dtype=float)
        shift, value = self.sparse_1d(kind, j, x)
        period = 2 ** j
        rows = np.repeat(np.arange(x.size), shift.shape[1])
        flat = rows * period + shift.ravel()
        out = np.bincount(flat, weights=value.ravel(), minlength=x.size * period)
        return out.reshape(x.size, period)

    # -- tensor products ----------------------------------------------------
    def eval_tensor(self, j: int, k: Sequence[int], l: Sequence[int], x) -> float:
        """Product over coordinates of scaling (``l_r = 0``) or wavelet (``l_r = 1``) factors."""
        k = list(k)
        l = list(l)
        x = np.asarray(x, dtype=float).ravel()
        if not (len(k) == len(l) == x.size == self.dim):
            raise ArgumentError(
                f"dimension mismatch: dim={self.dim}, |k|={len(k)}, |l|={len(l)}, |x|={x.size}"
            )
        if any(lr not in (0, 1) for lr in l):
            raise ArgumentError("type vector entries must be 0 or 1")
        value = 1.0
        for kr, lr, xr in zip(k, l, x):
            value *= self.eval_1d("wavelet" if lr else "scaling", j, int(kr), float(xr))
        return value


# -- discrete periodized transform -------------------------------------------

def analysis_matrices(filter: FilterBank, j: int) -> Tuple[np.ndarray, np.ndarray]:
    """Maps from level ``j+1`` scaling coefficients to level ``j`` scaling and detail ones.

    Uses ``phi_{j,k} = sum_m h_m phi_{j+1, 2k+m}`` (indices modulo ``2**(j+1)``).
    Stacked, the two matrices form an orthogonal ``2**(j+1)`` square matrix.
    """
    n_fine = 2 ** (j + 1)
    A = np.zeros((2 ** j, n_fine))
    D = np.zeros((2 ** j, n_fine))
    g = filter.highpass
    for k in range(2 ** j):
        for m, (hm, gm) in enumerate(zip(filter.taps, g)):
            col = (2 * k + m) % n_fine
            A[k, col] += hm
            D[k, col] += gm
    return A, D


def _mode_product(tensor: np.ndarray, matrix: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(matrix, tensor, axes=(1, axis)), 0, axis)


def type_vectors(dim: int) -> Iterable[Tuple[int, ...]]:
    """All nonzero ``l`` in ``{0,1}^dim`` in lexicographic order."""
    return [l for l in itertools.product((0, 1), repeat=dim) if any(l)]


@dataclass(eq=False)
class WaveletCoefficients:
    """Multilevel representation: scaling block at ``j0`` plus detail blocks.

    ``details[(j, l)]`` holds the ``(2**j,)*d`` block of wavelet coefficients
    of type ``l`` at level ``j``.
    """

    scaling: np.ndarray
    details: Dict[Tuple[int, Tuple[int, ...]], np.ndarray]
    j0: int
    J: int


def decompose(fine: np.ndarray, filter: FilterBank, j0: int) -> WaveletCoefficients:
    """Split level-``J`` scaling coefficients into the ``j0 .. J-1`` hierarchy."""
    d = fine.ndim
    J = int(round(math.log2(fine.shape[0])))
    current = fine
    details: Dict[Tuple[int, Tuple[int, ...]], np.ndarray] = {}
    for j in range(J - 1, j0 - 1, -1):
        A, D = analysis_matrices(filter, j)
        blocks: Dict[Tuple[int, ...], np.ndarray] = {(): current}
        for axis in range(d):
            nxt = {}
            for key, arr in blocks.items():
                nxt[key + (0,)] = _mode_product(arr, A, axis)
                nxt[key + (1,)] = _mode_product(arr, D, axis)
            blocks = nxt
        current = blocks.pop((0,) * d)
        for l, arr in blocks.items():
            details[(j, l)] = arr
    return WaveletCoefficients(current, details, j0, J)


def reconstruct(coeffs: WaveletCoefficients, filter: FilterBank) -> np.ndarray:
    """Inverse of :func:`decompose`."""
    current = coeffs.scaling
    d = current.ndim
    for j in range(coeffs.j0, coeffs.J):
        A, D = analysis_matrices(filter, j)
        total = np.zeros((2 ** (j + 1),) * d)
        for l in itertools.product((0, 1), repeat=d):
            arr = current if not any(l) else coeffs.details[(j, l)]
            for axis, lr in enumerate(l):
                arr = _mode_product(arr, (D if lr else A).T, axis)
            total += arr
        current = total
    return current
