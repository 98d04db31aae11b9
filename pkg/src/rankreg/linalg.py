"""Dense real linear algebra for representation matrices.

Matrices are plain 2-D float64 numpy arrays (row-major). A representation
batch is an (N, d) array with one sample per row. All functions are pure;
nothing here mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceError,
    DimensionError,
    MatrixFormatError,
    NotSymmetricError,
    ZeroRowError,
)

# Eigenvalues below this are treated as zero by the rank metrics.
NOISE_FLOOR = 1e-12

# Row norms below this cannot be normalized.
MIN_ROW_NORM = 1e-12

SYMMETRY_TOL = 1e-10
ORTHONORMALITY_TOL = 1e-8


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a 2-D float64 array with finite entries."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return np.ascontiguousarray(m)


def row_normalize(H) -> np.ndarray:
    """Scale every row of H to unit L2 norm.

    Raises ZeroRowError for any row with norm below 1e-12.
    """
    H = as_matrix(H, "H")
    norms = np.linalg.norm(H, axis=1)
    bad = np.flatnonzero(norms < MIN_ROW_NORM)
    if bad.size:
        raise ZeroRowError(int(bad[0]), float(norms[bad[0]]))
    return H / norms[:, None]


def gram_scaled(H_norm) -> np.ndarray:
    """Gram matrix C = H^T H / N of a row-normalized batch.

    C is symmetric PSD with trace 1 when the rows of H_norm are unit
    vectors. Requires at least 2 rows.
    """
    H = as_matrix(H_norm, "H_norm")
    n = H.shape[0]
    if n < 2:
        raise DimensionError(f"need at least 2 rows, got {n}")
    C = H.T @ H / n
    # enforce exact symmetry against accumulation noise
    return (C + C.T) / 2.0


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition of a symmetric PSD matrix.

    eigenvalues are sorted descending; eigenvectors holds the matching
    unit eigenvectors as columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source_dim: int

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=np.float64)
        V = as_matrix(self.eigenvectors, "eigenvectors")
        if ev.shape != (self.source_dim,) or V.shape != (self.source_dim, self.source_dim):
            raise DimensionError(
                f"spectrum shapes {ev.shape}/{V.shape} do not match dim {self.source_dim}"
            )
        if np.any(np.diff(ev) > 0):
            raise ValueError("eigenvalues must be sorted descending")
        gram = V.T @ V
        err = np.linalg.norm(gram - np.eye(self.source_dim))
        if err > ORTHONORMALITY_TOL:
            raise ValueError(f"eigenvector columns not orthonormal (deviation {err:.3e})")
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "eigenvectors", V)

    @property
    def nonnegative_eigenvalues(self) -> np.ndarray:
        """Eigenvalues with small negative noise clamped to zero."""
        return np.maximum(self.eigenvalues, 0.0)


def sym_eigen(A) -> Spectrum:
    """Full eigendecomposition of a symmetric matrix, descending order.

    Backed by LAPACK's symmetric solver (numpy.linalg.eigh). Raises
    NotSymmetricError if max|A - A^T| exceeds 1e-10 and ConvergenceError
    if the iterative diagonalization fails.
    """
    A = as_matrix(A, "A")
    n, m = A.shape
    if n != m:
        raise DimensionError(f"matrix must be square, got {n}x{m}")
    asym = float(np.max(np.abs(A - A.T))) if n else 0.0
    if asym > SYMMETRY_TOL:
        raise NotSymmetricError(f"max asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:.0e}")
    try:
        w, V = np.linalg.eigh((A + A.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigendecomposition did not converge: {exc}") from exc
    order = np.argsort(w)[::-1]
    return Spectrum(eigenvalues=w[order], eigenvectors=V[:, order], source_dim=n)


def load_matrix_csv(path) -> np.ndarray:
    """Read a matrix from CSV: first line "rows,cols", then one line per row.

    Raises MatrixFormatError with a 1-based line number on malformed input.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixFormatError(1, "empty file, expected 'rows,cols' header")
    header = lines[0].split(",")
    if len(header) != 2:
        raise MatrixFormatError(1, f"expected 'rows,cols' header, got {lines[0]!r}")
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError:
        raise MatrixFormatError(1, f"non-integer header {lines[0]!r}") from None
    if rows < 0 or cols < 0:
        raise MatrixFormatError(1, f"negative dimensions in header {lines[0]!r}")
    data_lines = [ln for ln in lines[1:] if ln.strip()]
    if len(data_lines) != rows:
        raise MatrixFormatError(
            len(lines) + 1 if len(data_lines) < rows else rows + 2,
            f"expected {rows} data rows, found {len(data_lines)}",
        )
    out = np.empty((rows, cols), dtype=np.float64)
    for i, ln in enumerate(data_lines):
        parts = ln.split(",")
        if len(parts) != cols:
            raise MatrixFormatError(i + 2, f"expected {cols} values, got {len(parts)}")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise MatrixFormatError(i + 2, str(exc)) from None
    if rows and cols and not np.all(np.isfinite(out)):
        i = int(np.argwhere(~np.isfinite(out))[0][0])
        raise MatrixFormatError(i + 2, "non-finite value")
    return out


def save_matrix_csv(path, M) -> None:
    """Write a matrix in the CSV format accepted by load_matrix_csv."""
    M = as_matrix(M, "M")
    rows, cols = M.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{rows},{cols}\n")
        for r in range(rows):
            fh.write(",".join(repr(float(v)) for v in M[r]) + "\n")
