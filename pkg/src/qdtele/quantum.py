"""Small dense linear algebra for one to three polarization qubits.

Conventions used throughout the package:

* single-qubit basis is ``(H, V)``;
* multi-photon states are ordered ``(X_E, X_L, XX_L)`` with the first
  factor owning the most significant index;
* pure states are plain 1-D complex arrays, density matrices and process
  matrices are 2-D complex arrays.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

MAX_DIM = 8
ATOL = 1e-12
RHO_ATOL = 1e-10
NEG_EIG_TOL = 1e-9

SQRT2 = math.sqrt(2.0)


class DimensionError(ValueError):
    """Raised on incompatible or unsupported matrix dimensions."""


class CapacityError(DimensionError):
    """Raised when a product space exceeds the three-qubit limit."""


class BellLabel(str, enum.Enum):
    PHI_PLUS = "phi_plus"
    PHI_MINUS = "phi_minus"
    PSI_PLUS = "psi_plus"
    PSI_MINUS = "psi_minus"

    @property
    def pauli(self) -> "PauliLabel":
        """Correction that maps the input onto the teleported state."""
        return _BELL_TO_PAULI[self]


class PauliLabel(str, enum.Enum):
    I = "I"
    X = "X"
    Y = "Y"
    Z = "Z"

    @property
    def index(self) -> int:
        return _PAULI_ORDER.index(self)


_PAULI_ORDER = (PauliLabel.I, PauliLabel.X, PauliLabel.Y, PauliLabel.Z)
_BELL_TO_PAULI = {
    BellLabel.PHI_PLUS: PauliLabel.I,
    BellLabel.PSI_PLUS: PauliLabel.X,
    BellLabel.PSI_MINUS: PauliLabel.Y,
    BellLabel.PHI_MINUS: PauliLabel.Z,
}

_PAULI = {
    PauliLabel.I: np.eye(2, dtype=complex),
    PauliLabel.X: np.array([[0, 1], [1, 0]], dtype=complex),
    PauliLabel.Y: np.array([[0, -1j], [1j, 0]], dtype=complex),
    PauliLabel.Z: np.array([[1, 0], [0, -1]], dtype=complex),
}

_BELL = {
    BellLabel.PHI_PLUS: np.array([1, 0, 0, 1], dtype=complex) / SQRT2,
    BellLabel.PHI_MINUS: np.array([1, 0, 0, -1], dtype=complex) / SQRT2,
    BellLabel.PSI_PLUS: np.array([0, 1, 1, 0], dtype=complex) / SQRT2,
    BellLabel.PSI_MINUS: np.array([0, 1, -1, 0], dtype=complex) / SQRT2,
}

# R = (H + iV)/sqrt(2); see README for the handedness convention.
_POLARIZATION = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([1, 1], dtype=complex) / SQRT2,
    "A": np.array([1, -1], dtype=complex) / SQRT2,
    "R": np.array([1, 1j], dtype=complex) / SQRT2,
    "L": np.array([1, -1j], dtype=complex) / SQRT2,
}

POLARIZATION_LABELS = tuple(_POLARIZATION)


def pauli(label: PauliLabel | str) -> np.ndarray:
    return _PAULI[PauliLabel(label)].copy()


def pauli_basis() -> list[np.ndarray]:
    """Pauli matrices in the order I, X, Y, Z."""
    return [pauli(p) for p in _PAULI_ORDER]


def bell_state(label: BellLabel | str) -> np.ndarray:
    return _BELL[BellLabel(label)].copy()


def bell_projector(label: BellLabel | str) -> np.ndarray:
    return ket_to_dm(bell_state(label))


def polarization_state(label: str) -> np.ndarray:
    """Return one of the six cardinal polarization kets (H, V, D, A, R, L)."""
    try:
        return _POLARIZATION[label.upper()].copy()
    except KeyError:
        raise ValueError(f"unknown polarization label {label!r}") from None


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def _check_dim(d: int) -> None:
    if d < 2:
        raise DimensionError(f"dimension must be >= 2, got {d}")
    if d > MAX_DIM:
        raise CapacityError(f"dimension {d} exceeds the supported maximum {MAX_DIM}")


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product ``a ⊗ b`` of two kets or two density matrices.

    ``a`` owns the most significant index of the result.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.ndim != b.ndim:
        raise DimensionError("cannot mix kets and density matrices in tensor()")
    _check_dim(a.shape[0])
    _check_dim(b.shape[0])
    _check_dim(a.shape[0] * b.shape[0])
    return np.kron(a, b)


def partial_trace(rho: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep`` (0-based indices)."""
    rho = np.asarray(rho, dtype=complex)
    dims = [int(d) for d in dims]
    n = len(dims)
    if math.prod(dims) != rho.shape[0] or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"subsystem dims {dims} do not match matrix shape {rho.shape}")
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise DimensionError("keep must name at least one subsystem")
    if keep[0] < 0 or keep[-1] >= n:
        raise DimensionError(f"keep indices {keep} out of range for {n} subsystems")

    t = rho.reshape(dims + dims)
    # Trace pairs from the highest index down so axis numbers stay valid.
    traced = [i for i in range(n) if i not in keep]
    m = n
    for i in reversed(traced):
        t = np.trace(t, axis1=i, axis2=i + m)
        m -= 1
    dk = math.prod(dims[k] for k in keep)
    return t.reshape(dk, dk)


def is_hermitian(m: np.ndarray, atol: float = RHO_ATOL) -> bool:
    return bool(np.allclose(m, m.conj().T, atol=atol, rtol=0))


def check_density_matrix(rho: np.ndarray, *, neg_tol: float = NEG_EIG_TOL, name: str = "rho") -> np.ndarray:
    """Validate a density matrix and return it as a complex array.

    Raises ``ValueError`` if ``rho`` is not Hermitian, not unit trace or has
    an eigenvalue below ``-neg_tol``.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {rho.shape}")
    _check_dim(rho.shape[0])
    if not is_hermitian(rho):
        raise ValueError(f"{name} is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > RHO_ATOL:
        raise ValueError(f"{name} has trace {tr!r}, expected 1")
    lam = np.linalg.eigvalsh(rho)[0]
    if lam < -neg_tol:
        raise ValueError(f"{name} has negative eigenvalue {lam:.3e}")
    return rho


def is_density_matrix(rho: np.ndarray, neg_tol: float = NEG_EIG_TOL) -> bool:
    try:
        check_density_matrix(rho, neg_tol=neg_tol)
    except ValueError:
        return False
    return True


def fidelity_to_pure(rho: np.ndarray, psi: np.ndarray) -> float:
    """Overlap ``<psi|rho|psi>`` of a density matrix with a pure state."""
    rho = np.asarray(rho, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    if rho.shape != (psi.shape[0], psi.shape[0]):
        raise DimensionError(f"state of dim {psi.shape[0]} vs matrix of shape {rho.shape}")
    return float(np.real(psi.conj() @ rho @ psi))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w) @ v.conj().T


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit density matrix.

    The λ's are computed as eigenvalues of the Hermitian matrix
    ``sqrt(ρ) ρ̃ sqrt(ρ)`` (same spectrum as ``ρ ρ̃``), which keeps the
    decomposition on ``eigh`` and the ordering deterministic.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise DimensionError("concurrence requires a 4x4 density matrix")
    yy = np.kron(_PAULI[PauliLabel.Y], _PAULI[PauliLabel.Y])
    rho_tilde = yy @ rho.conj() @ yy
    s = _psd_sqrt(rho)
    m = s @ rho_tilde @ s
    m = 0.5 * (m + m.conj().T)
    lam = np.sqrt(np.clip(np.linalg.eigvalsh(m), 0.0, None))[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


@dataclass(frozen=True)
class StokesVector:
    """Normalized Stokes parameters (H/V, D/A, R/L) with 1-sigma errors."""

    s1: float
    s2: float
    s3: float
    err: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3])

    @property
    def is_physical(self) -> bool:
        return float(np.sum(self.vector**2)) <= 1.0 + 1e-9


def state_from_stokes(s: StokesVector | Sequence[float]) -> np.ndarray:
    """Direct-inversion single-qubit state ``(I + s1 Z + s2 X + s3 Y)/2``."""
    v = s.vector if isinstance(s, StokesVector) else np.asarray(s, dtype=float)
    return 0.5 * (
        _PAULI[PauliLabel.I]
        + v[0] * _PAULI[PauliLabel.Z]
        + v[1] * _PAULI[PauliLabel.X]
        + v[2] * _PAULI[PauliLabel.Y]
    )


def stokes_from_state(rho: np.ndarray) -> StokesVector:
    rho = np.asarray(rho, dtype=complex)
    return StokesVector(
        float(np.real(np.trace(rho @ _PAULI[PauliLabel.Z]))),
        float(np.real(np.trace(rho @ _PAULI[PauliLabel.X]))),
        float(np.real(np.trace(rho @ _PAULI[PauliLabel.Y]))),
    )


def _contrast(a: float, b: float) -> tuple[float, float]:
    n = a + b
    if n <= 0:
        raise ValueError("zero total counts in a measurement basis")
    s = (a - b) / n
    # var((a-b)/(a+b)) for independent Poisson a, b
    return s, math.sqrt(4.0 * a * b / n**3)


def stokes_from_counts(counts: Sequence[float]) -> StokesVector:
    """Stokes vector from six counts ordered H, V, D, A, R, L."""
    if len(counts) != 6:
        raise ValueError("expected six counts (H, V, D, A, R, L)")
    if any(c < 0 for c in counts):
        raise ValueError("counts must be nonnegative")
    s1, e1 = _contrast(counts[0], counts[1])
    s2, e2 = _contrast(counts[2], counts[3])
    s3, e3 = _contrast(counts[4], counts[5])
    return StokesVector(s1, s2, s3, (e1, e2, e3))


@dataclass(frozen=True)
class TomographyResult:
    rho: np.ndarray
    stokes: StokesVector
    physical: bool


def state_tomography(counts: Sequence[float]) -> TomographyResult:
    """Linear-inversion tomography; ``physical`` flags negative eigenvalues."""
    s = stokes_from_counts(counts)
    rho = state_from_stokes(s)
    physical = bool(np.linalg.eigvalsh(rho)[0] >= -NEG_EIG_TOL)
    return TomographyResult(rho, s, physical)


def fidelity_error(stokes: StokesVector, target: np.ndarray) -> float:
    """1-sigma error of ``fidelity_to_pure(state_from_stokes(s), target)``.

    The fidelity is ``(1 + s·n)/2`` with ``n`` the Bloch vector of
    ``target``, so the error is linear in the Stokes errors.
    """
    n = stokes_from_state(ket_to_dm(target)).vector
    e = np.asarray(stokes.err)
    return float(0.5 * math.sqrt(float(np.sum((n * e) ** 2))))


# Process tomography ---------------------------------------------------------

PROCESS_INPUTS = ("H", "V", "D", "R")


def apply_chi(chi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Apply the channel ``ρ -> Σ χ_mn σ_m ρ σ_n†``."""
    basis = pauli_basis()
    out = np.zeros((2, 2), dtype=complex)
    for m in range(4):
        for n in range(4):
            if chi[m, n] != 0:
                out += chi[m, n] * basis[m] @ rho @ basis[n].conj().T
    return out


def _chi_inversion_matrix() -> np.ndarray:
    # Column (m, n) holds vec(σ_m ρ_j σ_n†) stacked over the four inputs.
    basis = pauli_basis()
    rhos = [ket_to_dm(polarization_state(s)) for s in PROCESS_INPUTS]
    cols = []
    for m in range(4):
        for n in range(4):
            cols.append(np.concatenate([(basis[m] @ r @ basis[n].conj().T).ravel() for r in rhos]))
    return np.linalg.inv(np.array(cols).T)


_CHI_INV = _chi_inversion_matrix()


def process_tomography(outputs: Mapping[str, np.ndarray]) -> np.ndarray:
    """Reconstruct the single-qubit χ matrix from outputs for inputs H, V, D, R.

    Linear inversion: the map is linear in the input, so the four outputs
    fix the channel; solving ``E(ρ_j) = Σ χ_mn σ_m ρ_j σ_n†`` for χ is a
    fixed 16x16 linear system.
    """
    missing = [s for s in PROCESS_INPUTS if s not in outputs]
    if missing:
        raise ValueError(f"missing channel outputs for inputs {missing}")
    y = np.concatenate([np.asarray(outputs[s], dtype=complex).reshape(4) for s in PROCESS_INPUTS])
    chi = (_CHI_INV @ y).reshape(4, 4)
    return 0.5 * (chi + chi.conj().T)


def average_gate_fidelity(chi: np.ndarray, ideal: PauliLabel | str) -> float:
    """Average gate fidelity of a qubit channel against a Pauli target."""
    f_proc = float(np.real(chi[PauliLabel(ideal).index, PauliLabel(ideal).index]))
    return (2.0 * f_proc + 1.0) / 3.0


# JSON interchange ----------------------------------------------------------


def matrix_to_json(m: np.ndarray) -> dict:
    m = np.asarray(m, dtype=complex)
    return {
        "dim": int(m.shape[0]),
        "re": [float(x) for x in m.real.ravel()],
        "im": [float(x) for x in m.imag.ravel()],
    }


def matrix_from_json(d: Mapping) -> np.ndarray:
    dim = int(d["dim"])
    re = np.asarray(d["re"], dtype=float)
    im = np.asarray(d.get("im", [0.0] * dim * dim), dtype=float)
    if re.size != dim * dim or im.size != dim * dim:
        raise DimensionError(f"expected {dim * dim} entries for dim {dim}")
    return (re + 1j * im).reshape(dim, dim)
