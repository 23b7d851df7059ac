"""Snapshot assembly, POD basis extraction and quadrature projections.

The reduced basis is computed by the method of snapshots: eigendecomposition
of the small spatial Gram matrix A A^T instead of a full SVD of the wide
snapshot matrix. Projections are plain weighted inner products on the grid;
linear reconstruction is kept as a diagnostic (the learned pipeline uses a
nonlinear readout instead).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .sim import Dataset, Grid1D, PiecewiseConstantInput

_POD_MAGIC = b"RXP1"


def uniform_subsample(grid: Grid1D, n_spatial: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and positions of the grid nodes nearest ``n_spatial`` uniform targets.

    Targets follow the same periodic convention as the grid itself
    (x_min + i * L/n_spatial, no duplicated endpoint).
    """
    if not 1 <= n_spatial <= grid.n_points:
        raise ContractViolation(f"n_spatial must be in [1, {grid.n_points}]")
    targets = grid.x_min + grid.length / n_spatial * np.arange(n_spatial)
    idx = np.round((targets - grid.x_min) / grid.dx).astype(int) % grid.n_points
    if len(np.unique(idx)) != n_spatial:
        raise ContractViolation("nearest-node lookup produced duplicate nodes")
    return idx, grid.nodes[idx]


# ---------------------------------------------------------------------------
# snapshots and POD
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SnapshotMatrix:
    """Spatially subsampled states, one column per stored time step."""

    values: np.ndarray          # (n_spatial, M), trajectory-major column order
    spatial_points: np.ndarray  # (n_spatial,)
    provenance: str = ""

    def __post_init__(self):
        if self.values.shape[0] != len(self.spatial_points):
            raise ContractViolation("row count must match spatial points")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("snapshot matrix contains non-finite entries")


@dataclass(frozen=True)
class PodBasis:
    """Truncated left singular factors of a snapshot matrix.

    ``modes`` columns have unit euclidean norm and a deterministic sign
    (largest-magnitude entry positive). Dividing a column by the square root
    of the point spacing converts it to samples of a continuum-orthonormal
    function.
    """

    modes: np.ndarray            # (n_spatial, r)
    singular_values: np.ndarray  # (r,)
    spatial_points: np.ndarray   # (n_spatial,)

    def __post_init__(self):
        if self.modes.shape != (len(self.spatial_points), self.r):
            raise ContractViolation("mode matrix shape mismatch")
        if np.any(np.diff(self.singular_values) > 0):
            raise ContractViolation("singular values must be nonincreasing")
        gram = self.modes.T @ self.modes
        if np.max(np.abs(gram - np.eye(self.r))) > 1e-8:
            raise ContractViolation("mode columns are not orthonormal")

    @property
    def r(self) -> int:
        return len(self.singular_values)


@dataclass(frozen=True)
class ProjectedState:
    """Coordinates of one field in the reduced basis."""

    coeffs: np.ndarray  # (r,)

    def __post_init__(self):
        if np.asarray(self.coeffs).ndim != 1:
            raise ContractViolation("coefficients must form a vector")
        if not np.all(np.isfinite(self.coeffs)):
            raise ContractViolation("non-finite projection coefficients")

    @property
    def r(self) -> int:
        return len(self.coeffs)


def assemble_snapshots(dataset: Dataset, n_spatial: int,
                       time_selection: slice | None = None) -> SnapshotMatrix:
    """Stack subsampled states of all trajectories column-wise.

    ``time_selection=None`` uses every stored time step; otherwise a slice
    over the stored step index.
    """
    if dataset.n == 0:
        raise ContractViolation("empty dataset")
    idx, points = uniform_subsample(dataset.grid, n_spatial)
    sel = time_selection if time_selection is not None else slice(None)
    blocks = [traj.states[sel][:, idx].T for traj in dataset.trajectories]
    return SnapshotMatrix(values=np.hstack(blocks), spatial_points=points,
                          provenance=f"n={dataset.n}")


def _fix_mode_signs(modes: np.ndarray) -> np.ndarray:
    # sign convention: largest-magnitude entry of each column is positive
    # (argmax resolves ties to the first such entry)
    out = modes.copy()
    for j in range(out.shape[1]):
        k = int(np.argmax(np.abs(out[:, j])))
        if out[k, j] < 0:
            out[:, j] = -out[:, j]
    return out


def pod(snapshots: SnapshotMatrix, r: int) -> PodBasis:
    """Truncated POD by the method of snapshots (Gram eigendecomposition).

    Equivalent to the leading left singular factors of the snapshot matrix
    up to column sign, which is fixed deterministically.
    """
    a = snapshots.values
    n_x, m = a.shape
    if not 1 <= r <= min(n_x, m):
        raise ContractViolation(f"rank r={r} out of range for {n_x}x{m} snapshots")
    gram = a @ a.T
    eigvals, eigvecs = np.linalg.eigh(gram)      # ascending
    order = np.argsort(eigvals)[::-1][:r]
    sigma = np.sqrt(np.maximum(eigvals[order], 0.0))
    modes = _fix_mode_signs(eigvecs[:, order])
    return PodBasis(modes=modes, singular_values=sigma,
                    spatial_points=snapshots.spatial_points)


def pod_svd_oracle(a: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference route for cross-checks: direct SVD of the full matrix."""
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    return _fix_mode_signs(u[:, :r]), s[:r]


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def project_batch(field_samples: np.ndarray, basis_values: np.ndarray,
                  quad_weights: np.ndarray) -> np.ndarray:
    """Weighted inner products <phi_n, u> for a stack of fields (last axis = grid)."""
    field_samples = np.asarray(field_samples, dtype=float)
    basis_values = np.asarray(basis_values, dtype=float)
    if basis_values.shape[0] != field_samples.shape[-1] or \
            len(quad_weights) != field_samples.shape[-1]:
        raise ContractViolation("field, basis and weights must share the grid")
    return (field_samples * quad_weights) @ basis_values


def project(field_samples: np.ndarray, basis_values: np.ndarray,
            quad_weights: np.ndarray) -> ProjectedState:
    """Coefficients a_n = sum_j w_j phi_n(x_j) u(x_j) of a single field."""
    field_samples = np.asarray(field_samples, dtype=float)
    if field_samples.ndim != 1:
        raise ContractViolation("project expects a single field; see project_batch")
    return ProjectedState(coeffs=project_batch(field_samples, basis_values, quad_weights))


def _as_coeffs(a) -> np.ndarray:
    return a.coeffs if isinstance(a, ProjectedState) else np.asarray(a, dtype=float)


def reconstruct_linear(a, basis_values: np.ndarray) -> np.ndarray:
    """Diagnostic linear expansion sum_n a_n phi_n(x_j)."""
    coeffs = _as_coeffs(a)
    if basis_values.shape[-1] != coeffs.shape[-1]:
        raise ContractViolation("coefficient count must match basis rank")
    return coeffs @ basis_values.T


@dataclass(frozen=True)
class ProjectedInputSequence:
    """Input profiles reduced to coefficient vectors, one per hold period."""

    delta: float
    coeff_profiles: np.ndarray  # (n_profiles, r)

    @property
    def n_profiles(self) -> int:
        return self.coeff_profiles.shape[0]

    @property
    def r(self) -> int:
        return self.coeff_profiles.shape[1]


def project_input_signal(signal: PiecewiseConstantInput, basis_values: np.ndarray,
                         quad_weights: np.ndarray) -> ProjectedInputSequence:
    """Project every held profile; the hold period carries over.

    Checks the Cauchy-Schwarz radius ||f_k||_2 <= M sqrt(r |domain|) with the
    amplitude bound M recorded on the signal.
    """
    if signal.profiles.shape[1] != basis_values.shape[0]:
        raise ContractViolation("input profiles and basis live on different grids")
    coeffs = project_batch(signal.profiles, basis_values, quad_weights)
    domain_len = float(np.sum(quad_weights))
    radius = signal.bound * np.sqrt(basis_values.shape[1] * domain_len)
    norms = np.linalg.norm(coeffs, axis=1)
    if np.any(norms > radius * (1.0 + 1e-9)):
        raise ContractViolation(
            f"projected input norm {norms.max():.6g} exceeds radius {radius:.6g}")
    return ProjectedInputSequence(delta=signal.delta, coeff_profiles=coeffs)


# ---------------------------------------------------------------------------
# on-disk format: magic "RXP1", u32 n_spatial, u32 r, then little-endian f64
# blocks: spatial_points, singular_values, modes (row-major)
# ---------------------------------------------------------------------------

def save_pod_basis(basis: PodBasis, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_POD_MAGIC)
        fh.write(struct.pack("<II", len(basis.spatial_points), basis.r))
        fh.write(basis.spatial_points.astype("<f8").tobytes())
        fh.write(basis.singular_values.astype("<f8").tobytes())
        fh.write(basis.modes.astype("<f8").tobytes())


def load_pod_basis(path) -> PodBasis:
    raw = Path(path).read_bytes()
    if raw[:4] != _POD_MAGIC:
        raise ContractViolation(f"{path}: bad magic {raw[:4]!r}")
    n_x, r = struct.unpack("<II", raw[4:12])
    body = np.frombuffer(raw[12:], dtype="<f8")
    if len(body) != n_x + r + n_x * r:
        raise ContractViolation(f"{path}: truncated basis file")
    points = body[:n_x].copy()
    sigma = body[n_x:n_x + r].copy()
    modes = body[n_x + r:].reshape(n_x, r).copy()
    return PodBasis(modes=modes, singular_values=sigma, spatial_points=points)
