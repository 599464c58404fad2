"""Truncated-Fock-basis core: states, ladder operators, Gaussian unitaries.

Conventions used throughout the package
---------------------------------------
* Quadrature at phase ``phi``:  x_phi = (a_dag * e^{i phi} + a * e^{-i phi}) / 2,
  so the vacuum quadrature variance is 1/4 and
  [x_phi, x_{phi+pi/2}] = i/2.
* Joint two-mode kets are ordered with the *system* index varying slowest:
  element ``m * probe_dim + q`` is |m>_sys |q>_probe.
* Every construction that can silently lose amplitude past the truncation
  boundary carries a guard band: the top ``GUARD_FRACTION`` of the Fock
  levels is treated as untrusted, and constructors attach warnings when a
  requested object predictably leaks into it.

All matrices are plain numpy arrays (complex128 unless the object is real
by construction); states are 1-d, operators 2-d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm, eigh

from .errors import DimensionMismatchError, ParameterError

GUARD_FRACTION = 0.2


def guard_level(cutoff: int) -> int:
    """First untrusted Fock level: levels >= guard_level(cutoff) form the
    guard band (top GUARD_FRACTION of the basis)."""
    return int(math.ceil((1.0 - GUARD_FRACTION) * cutoff))


def _check_cutoff(cutoff: int) -> int:
    if not isinstance(cutoff, (int, np.integer)):
        raise ParameterError(f"cutoff must be an integer, got {cutoff!r}")
    if cutoff < 2:
        raise ParameterError(f"cutoff must be >= 2, got {cutoff}")
    return int(cutoff)


def _check_transmissivity(eta: float) -> float:
    eta = float(eta)
    if not 0.0 < eta < 1.0:
        raise ParameterError(
            f"transmissivity must lie strictly inside (0, 1), got {eta}")
    return eta


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class StateVector:
    """Pure state of a single mode in the truncated number basis.

    Attributes
    ----------
    amplitudes : (cutoff,) complex ndarray
    warnings : tuple of str
        Guard-band or construction notes attached by the factory that
        produced the state.  Empty for clean constructions.
    """

    amplitudes: np.ndarray
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex)
        if amp.ndim != 1 or amp.shape[0] < 2:
            raise DimensionMismatchError(
                f"state vector must be 1-d with length >= 2, got shape {amp.shape}")
        object.__setattr__(self, "amplitudes", amp)

    @property
    def cutoff(self) -> int:
        return self.amplitudes.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0.0:
            raise ParameterError("cannot normalize the zero vector")
        return StateVector(self.amplitudes / n, self.warnings)

    def guard_band_population(self) -> float:
        """Probability weight sitting in the untrusted top Fock levels."""
        g = guard_level(self.cutoff)
        return float(np.sum(np.abs(self.amplitudes[g:]) ** 2))

    def density(self) -> "DensityOperator":
        return DensityOperator(np.outer(self.amplitudes,
                                        self.amplitudes.conj()),
                               self.warnings)


@dataclass(frozen=True)
class JointState:
    """Pure state of the system+probe pair, system index slowest.

    ``amplitudes`` is stored flat with length sys_cutoff * probe_cutoff;
    ``as_matrix()`` reshapes to (sys_cutoff, probe_cutoff).
    """

    amplitudes: np.ndarray
    sys_cutoff: int
    probe_cutoff: int
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex).ravel()
        if amp.shape[0] != self.sys_cutoff * self.probe_cutoff:
            raise DimensionMismatchError(
                "joint amplitudes have length %d, expected %d * %d"
                % (amp.shape[0], self.sys_cutoff, self.probe_cutoff))
        object.__setattr__(self, "amplitudes", amp)

    def as_matrix(self) -> np.ndarray:
        return self.amplitudes.reshape(self.sys_cutoff, self.probe_cutoff)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class Operator:
    """Matrix acting on a single mode (or a flattened two-mode space).

    The flags are construction-time assertions checked on the trusted
    (below-guard) block; compositions via ``@`` or ``dag`` drop them
    rather than re-verifying.
    """

    matrix: np.ndarray
    warnings: Tuple[str, ...] = ()
    hermitian_flag: bool = False
    unitary_flag: bool = False

    def __post_init__(self):
        mat = np.asarray(self.matrix)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionMismatchError(
                f"operator must be square, got shape {mat.shape}")
        object.__setattr__(self, "matrix", mat)
        if self.hermitian_flag or self.unitary_flag:
            block = guard_level(self.cutoff)
            if self.hermitian_flag:
                sub = mat[:block, :block]
                dev = float(np.max(np.abs(sub - sub.conj().T)))
                if dev > 1e-10:
                    raise ParameterError(
                        f"operator flagged hermitian deviates by {dev:.3e} "
                        f"on the trusted block")
            if self.unitary_flag:
                cols = mat[:, :block]
                dev = float(np.max(np.abs(cols.conj().T @ cols
                                          - np.eye(block))))
                if dev > 1e-10:
                    raise ParameterError(
                        f"operator flagged unitary deviates by {dev:.3e} "
                        f"on the trusted block")

    @property
    def cutoff(self) -> int:
        return self.matrix.shape[0]

    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.warnings)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            if other.cutoff != self.cutoff:
                raise DimensionMismatchError(
                    f"operator dims differ: {self.cutoff} vs {other.cutoff}")
            return Operator(self.matrix @ other.matrix,
                            self.warnings + other.warnings)
        return NotImplemented


@dataclass(frozen=True)
class DensityOperator:
    """Mixed state of a single mode: positive, unit-trace matrix."""

    matrix: np.ndarray
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionMismatchError(
                f"density operator must be square, got shape {mat.shape}")
        object.__setattr__(self, "matrix", mat)

    @property
    def cutoff(self) -> int:
        return self.matrix.shape[0]

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def normalized(self) -> "DensityOperator":
        tr = self.trace().real
        if tr <= 0.0:
            raise ParameterError(f"density trace must be positive, got {tr}")
        return DensityOperator(self.matrix / tr, self.warnings)

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def validate(self, trace_tol: float = 1e-10, hermitian_tol: float = 1e-12,
                 eigenvalue_floor: float = -1e-10) -> "DensityOperator":
        """Assert unit trace, hermiticity and positivity; returns self.

        Opt-in rather than enforced at construction: intermediate matrices
        (lossy-channel outputs, unnormalized conditionals) legitimately
        carry small trace deficits that are reported as warnings upstream.
        """
        tr = self.trace()
        if abs(tr - 1.0) > trace_tol:
            raise ParameterError(f"density trace {tr} deviates from 1 "
                                 f"beyond {trace_tol}")
        herm_dev = float(np.max(np.abs(self.matrix - self.matrix.conj().T)))
        if herm_dev > hermitian_tol:
            raise ParameterError(f"density matrix non-hermitian by "
                                 f"{herm_dev:.3e}")
        lowest = float(np.linalg.eigvalsh(
            0.5 * (self.matrix + self.matrix.conj().T)).min())
        if lowest < eigenvalue_floor:
            raise ParameterError(f"density matrix has eigenvalue {lowest:.3e}"
                                 f" below {eigenvalue_floor}")
        return self


# ---------------------------------------------------------------------------
# state factories


def vacuum_state(cutoff: int) -> StateVector:
    cutoff = _check_cutoff(cutoff)
    amp = np.zeros(cutoff, dtype=complex)
    amp[0] = 1.0
    return StateVector(amp)


def fock_state(n: int, cutoff: int) -> StateVector:
    cutoff = _check_cutoff(cutoff)
    if not 0 <= n < cutoff:
        raise ParameterError(f"Fock level {n} outside basis of size {cutoff}")
    amp = np.zeros(cutoff, dtype=complex)
    amp[n] = 1.0
    warn: Tuple[str, ...] = ()
    if n >= guard_level(cutoff):
        warn = (f"fock level {n} lies inside the guard band "
                f"(levels >= {guard_level(cutoff)})",)
    return StateVector(amp, warn)


def coherent_state(alpha: complex, cutoff: int) -> StateVector:
    """Coherent state by the closed-form amplitudes
    c_n = exp(-|alpha|^2/2) alpha^n / sqrt(n!), renormalized on the
    truncated basis."""
    cutoff = _check_cutoff(cutoff)
    n = np.arange(cutoff)
    if alpha != 0:
        log_mod = -abs(alpha) ** 2 / 2.0 + n * math.log(abs(alpha)) \
            - 0.5 * np.array([math.lgamma(k + 1) for k in n])
        amp = np.exp(log_mod) * np.exp(1j * n * np.angle(alpha))
    else:
        amp = np.zeros(cutoff, dtype=complex)
        amp[0] = 1.0
    warn: Tuple[str, ...] = ()
    tail = 1.0 - float(np.sum(np.abs(amp) ** 2))
    # mean photon number must sit comfortably below the guard band
    if abs(alpha) ** 2 > guard_level(cutoff) or tail > 1e-9:
        warn = (f"coherent amplitude |alpha|^2 = {abs(alpha)**2:.3g} reaches the "
                f"guard band of a cutoff-{cutoff} basis (tail mass {max(tail, 0):.2e})",)
    v = StateVector(amp, warn)
    return v.normalized()


def squeezed_vacuum(sigma: float, cutoff: int, phase: float = 0.0) -> StateVector:
    """Minimum-uncertainty state with quadrature variance sigma/4 along
    ``phase`` (sigma=1 is the vacuum; sigma<1 squeezed, sigma>1 anti-squeezed).

    Built from the two-photon recursion for S(r)|0> with r = ln(sigma)/2:
    c_0 = 1/sqrt(cosh r), c_{2k} = tanh(r) sqrt(2k-1)/sqrt(2k) c_{2k-2}.
    """
    cutoff = _check_cutoff(cutoff)
    sigma = float(sigma)
    if sigma <= 0.0:
        raise ParameterError(f"variance scale sigma must be > 0, got {sigma}")
    r = 0.5 * math.log(sigma)
    amp = np.zeros(cutoff, dtype=complex)
    amp[0] = 1.0 / math.sqrt(math.cosh(r))
    t = math.tanh(r) * np.exp(2j * phase)
    for k in range(2, cutoff, 2):
        amp[k] = amp[k - 2] * t * math.sqrt(k - 1) / math.sqrt(k)
    warn: Tuple[str, ...] = ()
    tail = abs(amp[cutoff - 2 if cutoff % 2 == 0 else cutoff - 1]) ** 2
    if abs(r) > 2.5 or tail > 1e-12:
        warn = (f"squeeze parameter r = {r:.3g} for sigma = {sigma} populates "
                f"the top of a cutoff-{cutoff} basis",)
    v = StateVector(amp, warn)
    return v.normalized()


# ---------------------------------------------------------------------------
# elementary operators


def make_annihilation(cutoff: int) -> np.ndarray:
    cutoff = _check_cutoff(cutoff)
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), 1).astype(complex)


def make_creation(cutoff: int) -> np.ndarray:
    return make_annihilation(cutoff).conj().T


def make_number(cutoff: int) -> np.ndarray:
    cutoff = _check_cutoff(cutoff)
    return np.diag(np.arange(cutoff, dtype=float)).astype(complex)


def make_quadrature(cutoff: int, phase: float = 0.0) -> np.ndarray:
    """x_phase = (a_dag e^{i phase} + a e^{-i phase}) / 2."""
    a = make_annihilation(cutoff)
    return 0.5 * (a.conj().T * np.exp(1j * phase) + a * np.exp(-1j * phase))


def make_phase_rotation(cutoff: int, phase: float) -> np.ndarray:
    """exp(i phase n): rotates the quadrature angle by +phase."""
    cutoff = _check_cutoff(cutoff)
    return np.diag(np.exp(1j * phase * np.arange(cutoff)))


def make_displacement(alpha: complex, cutoff: int) -> Operator:
    """D(alpha) = expm(alpha a_dag - conj(alpha) a) on the truncated basis.

    The matrix is exactly unitary by construction (expm of an anti-Hermitian
    truncation), at the price of faithfulness near the truncation boundary;
    a guard warning is attached when |alpha|^2 reaches the guard band.
    """
    cutoff = _check_cutoff(cutoff)
    a = make_annihilation(cutoff)
    gen = alpha * a.conj().T - np.conjugate(alpha) * a
    warn: Tuple[str, ...] = ()
    if abs(alpha) ** 2 > guard_level(cutoff):
        warn = (f"displacement |alpha|^2 = {abs(alpha)**2:.3g} exceeds the "
                f"guard level {guard_level(cutoff)} of a cutoff-{cutoff} basis",)
    return Operator(expm(gen), warn, unitary_flag=True)


def make_squeeze(r: float, cutoff: int, phase: float = 0.0) -> Operator:
    """S(r, phase) = expm((r/2)(a_dag^2 e^{2i phase} - a^2 e^{-2i phase})).

    Positive r stretches the ``phase`` quadrature: S_dag x S = e^r x at
    phase=0.  Exactly unitary on the truncated basis; a guard warning is
    attached for |r| > 2.5 where the truncated action is untrustworthy.
    """
    cutoff = _check_cutoff(cutoff)
    a = make_annihilation(cutoff)
    a2 = a @ a
    gen = 0.5 * r * (a2.conj().T * np.exp(2j * phase) - a2 * np.exp(-2j * phase))
    warn: Tuple[str, ...] = ()
    if abs(r) > 2.5:
        warn = (f"squeeze parameter |r| = {abs(r):.3g} > 2.5 exceeds the "
                f"guard threshold for a truncated basis",)
    return Operator(expm(gen), warn, unitary_flag=True)


def _bs_sector_blocks(eta: float, na: int, nb: Optional[int] = None):
    """Yield (rows_a, sector_total, block) for the two-mode mixer at
    intensity transmissivity eta.

    The generator theta*(a b_dag - a_dag b), theta = atan(sqrt((1-eta)/eta)),
    conserves total photon number, so the unitary is block-diagonal over
    sectors of fixed m+q = s; each block is the expm of a small real
    antisymmetric tridiagonal matrix and therefore exact to rounding.
    ``block[i, j]`` couples |rows_a[i], s-rows_a[i]> <- |rows_a[j], s-rows_a[j]>.
    """
    eta = _check_transmissivity(eta)
    nb = na if nb is None else nb
    theta = math.atan(math.sqrt((1.0 - eta) / eta))
    for s in range(na + nb - 1):
        m = np.arange(max(0, s - (nb - 1)), min(s, na - 1) + 1)
        d = len(m)
        if d == 1:
            yield m, s, np.ones((1, 1))
            continue
        g = np.zeros((d, d))
        mm = m[1:].astype(float)
        amp = theta * np.sqrt(mm) * np.sqrt(s - mm + 1.0)
        g[np.arange(d - 1), np.arange(1, d)] = amp
        g[np.arange(1, d), np.arange(d - 1)] = -amp
        yield m, s, expm(g)


def make_beam_splitter(eta: float, cutoff: int) -> Operator:
    """Two-mode mixer U = expm(theta (a b_dag - a_dag b)) with
    cos(theta) = sqrt(eta), on the flattened joint basis (system slowest).

    Heisenberg action: U_dag a U = sqrt(eta) a - sqrt(1-eta) b and
    U_dag b U = sqrt(1-eta) a + sqrt(eta) b.  Assembled exactly from the
    photon-number-conserving sector blocks.
    """
    cutoff = _check_cutoff(cutoff)
    u = np.zeros((cutoff * cutoff, cutoff * cutoff))
    for m, s, block in _bs_sector_blocks(eta, cutoff):
        idx = m * cutoff + (s - m)
        u[np.ix_(idx, idx)] = block
    return Operator(u.astype(complex), unitary_flag=True)


# ---------------------------------------------------------------------------
# quadrature eigenvectors and spectral calculus


def quadrature_eigenvector(x: float, cutoff: int, phase: float = 0.0) -> StateVector:
    """Delta-normalized improper eigenvector |x>_phase of x_phase, i.e. the
    vector of values <n|x>_phase = e^{i n phase} chi_n(x) with chi the
    Hermite functions of this package's scaling:

        chi_0(x) = (2/pi)^{1/4} exp(-x^2),   chi_1 = 2 x chi_0,
        chi_{n+1} = (2 x chi_n - sqrt(n) chi_{n-1}) / sqrt(n+1).

    The recursion is carried out in the function (not polynomial) form, so
    it is stable for every x in the guarded range |x| <= sqrt(g + 1/2).
    """
    cutoff = _check_cutoff(cutoff)
    chi = np.empty(cutoff, dtype=float)
    chi[0] = (2.0 / math.pi) ** 0.25 * math.exp(-x * x)
    if cutoff > 1:
        chi[1] = 2.0 * x * chi[0]
    for n in range(1, cutoff - 1):
        chi[n + 1] = (2.0 * x * chi[n] - math.sqrt(n) * chi[n - 1]) / math.sqrt(n + 1)
    warn: Tuple[str, ...] = ()
    xmax = math.sqrt(guard_level(cutoff) + 0.5)
    if abs(x) > xmax:
        warn = (f"quadrature value |x| = {abs(x):.3g} exceeds the guarded "
                f"range sqrt(guard_level + 1/2) = {xmax:.3g}",)
    if phase == 0.0:
        return StateVector(chi.astype(complex), warn)
    return StateVector(chi * np.exp(1j * phase * np.arange(cutoff)), warn)


def quadrature_eigenvector_matrix(xs: Sequence[float], cutoff: int,
                                  phase: float = 0.0) -> np.ndarray:
    """Stack quadrature_eigenvector over a grid: returns (len(xs), cutoff)."""
    xs = np.asarray(xs, dtype=float)
    out = np.empty((xs.shape[0], cutoff), dtype=float)
    out[:, 0] = (2.0 / math.pi) ** 0.25 * np.exp(-xs * xs)
    if cutoff > 1:
        out[:, 1] = 2.0 * xs * out[:, 0]
    for n in range(1, cutoff - 1):
        out[:, n + 1] = (2.0 * xs * out[:, n]
                         - math.sqrt(n) * out[:, n - 1]) / math.sqrt(n + 1)
    if phase == 0.0:
        return out.astype(complex)
    return out * np.exp(1j * phase * np.arange(cutoff))[None, :]


def function_of_quadrature(f, cutoff: int, phase: float = 0.0) -> np.ndarray:
    """Spectral calculus f(x_phase) through eigh of the truncated quadrature.

    Only trustworthy when f is resolved by the eigenvalue spacing of the
    truncated operator (~ pi / (2 sqrt(cutoff)) near the center); callers
    needing sharp f should enlarge the cutoff and truncate afterwards.
    """
    xq = make_quadrature(cutoff, phase)
    evals, vecs = eigh(xq)
    return (vecs * np.asarray([f(v) for v in evals])) @ vecs.conj().T


# ---------------------------------------------------------------------------
# joint-space helpers


def joint_state(sys_state: StateVector, probe_state: StateVector) -> JointState:
    amp = np.kron(sys_state.amplitudes, probe_state.amplitudes)
    return JointState(amp, sys_state.cutoff, probe_state.cutoff,
                      sys_state.warnings + probe_state.warnings)


def joint_operator(op_sys: np.ndarray, op_probe: np.ndarray) -> np.ndarray:
    """kron with the system factor slowest, matching JointState ordering."""
    return np.kron(op_sys, op_probe)


def partial_trace(joint: np.ndarray, sys_cutoff: int, probe_cutoff: int,
                  keep: str = "system") -> np.ndarray:
    """Trace a flattened (sys*probe, sys*probe) density matrix down to one mode."""
    if joint.shape != (sys_cutoff * probe_cutoff, sys_cutoff * probe_cutoff):
        raise DimensionMismatchError(
            f"joint matrix shape {joint.shape} does not match "
            f"{sys_cutoff} x {probe_cutoff} modes")
    r = joint.reshape(sys_cutoff, probe_cutoff, sys_cutoff, probe_cutoff)
    if keep == "system":
        return np.einsum("mqnq->mn", r)
    if keep == "probe":
        return np.einsum("mqmr->qr", r)
    raise ParameterError(f"keep must be 'system' or 'probe', got {keep!r}")


# ---------------------------------------------------------------------------
# expectation values and distances


def expectation(op: np.ndarray, state) -> complex:
    """<op> in a StateVector or DensityOperator (or raw ndarray of either kind)."""
    if isinstance(state, StateVector):
        v = state.amplitudes
        return complex(v.conj() @ (op @ v))
    if isinstance(state, DensityOperator):
        return complex(np.trace(op @ state.matrix))
    arr = np.asarray(state)
    if arr.ndim == 1:
        return complex(arr.conj() @ (op @ arr))
    return complex(np.trace(op @ arr))


def variance(op: np.ndarray, state) -> float:
    m1 = expectation(op, state)
    m2 = expectation(op @ op, state)
    return float((m2 - m1 * m1).real)


def _state_matrix(state) -> np.ndarray:
    """Density matrix of a StateVector, DensityOperator, vector or matrix."""
    if isinstance(state, StateVector):
        arr = state.amplitudes
    elif isinstance(state, DensityOperator):
        arr = state.matrix
    else:
        arr = np.asarray(state)
    if arr.ndim == 1:
        return np.outer(arr, arr.conj())
    return arr


def trace_distance(rho, tau) -> float:
    """(1/2) ||rho - tau||_1 via the eigenvalues of the Hermitian difference.
    Accepts density matrices, pure vectors, or their wrapper types."""
    d = _state_matrix(rho) - _state_matrix(tau)
    d = 0.5 * (d + d.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(d))))


def fidelity_to_pure(psi, rho) -> float:
    """<psi| rho |psi> for a pure reference vector psi."""
    if isinstance(psi, StateVector):
        psi = psi.amplitudes
    psi = np.asarray(psi).ravel()
    if isinstance(rho, StateVector):
        rho = rho.amplitudes
    elif isinstance(rho, DensityOperator):
        rho = rho.matrix
    rho = np.asarray(rho)
    if rho.ndim == 1:
        return float(abs(np.vdot(psi, rho)) ** 2)
    return float(np.real(psi.conj() @ (rho @ psi)))
