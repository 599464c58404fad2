"""The all-optical projective-quadrature measurement pipeline.

Schroedinger-picture stage order (rightmost acts first on the input):

    back-squeeze . feedback displacement . probe readout . two-mode mixing
        . probe preparation (x) system pre-squeeze

The signal is squeezed by r_pre = -ln(1-eta)/2 along the working quadrature,
mixed with a squeezed-vacuum probe (variance ratio sigma) on a mixer of
transmissivity eta, and the probe's quadrature is read out.  Conditioned on
outcome x, the signal then receives a displacement of amplitude
sqrt((1-eta)/eta) x and a squeeze by ln(eta(1-eta))/2, which exactly cancel
the unitary dressing left by the readout.  The resulting reduction-operator
family is a Gaussian function of the signal quadrature,

    Omega(x) = (2 pi Delta^2)^{-1/4} exp[-(x - x_phi)^2 / (4 Delta^2)],

with r.m.s. kernel width Delta = sqrt(eta sigma)/2: a projective quadrature
measurement smeared by a tunable Gaussian, approaching the projective limit
as eta sigma -> 0 while leaving pure states pure at every width.

All squeeze stages are realizable as phase-sensitive amplifiers (PSA): a
PSA of intensity gain G pumped at phase psi maps the quadrature at psi to
G^{-1/2} times itself, which is the squeeze S(-ln(G)/2) along psi.  Pump
phase table used here (working quadrature phase phi, probe readout phase
phi_probe):

    stage        gain            pump phase        equivalent squeeze
    ---------    ------------    --------------    -------------------------
    signal pre   1/(1-eta)       phi + pi/2        S(-ln(1-eta)/2)   at phi
    probe prep   sigma           phi_probe+pi/2    S(ln(sigma)/2)    at phi_probe
    back         eta(1-eta)      phi + pi/2        S(ln(eta(1-eta))/2) at phi

i.e. every pump is set a quarter period from the working quadrature, so the
deamplified axis is the conjugate one (S(r, psi+pi/2) = S(-r, psi) exactly).

Numerical architecture: composing truncated matrix exponentials corrupts
low Fock blocks, so every stage is evaluated in an enlarged working space
(margin * cutoff levels) using closed-form or sector-exact constructions,
and only the final family is truncated to the requested cutoff.  The dense
joint unitary is never materialized; the mixer acts through its conserved
total-occupancy sectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln

from .errors import InfeasibleFeedbackError, ParameterError
from .fock import (
    StateVector,
    _bs_sector_blocks,
    _check_transmissivity,
    make_annihilation,
    make_quadrature,
    make_squeeze,
    quadrature_eigenvector_matrix,
    squeezed_vacuum,
)
from .gaussian import (
    GaussianState,
    beam_splitter_symplectic,
    condition_on_quadrature,
    displacement_transform,
    quadrature_statistics,
    squeeze_symplectic,
    tensor_product,
    vacuum_gaussian,
)
from .kernel import (
    OutcomeGrid,
    ReductionOperatorFamily,
    vn_target_family,
)

DEFAULT_GRID_SPEC = "-3:3:0.25"


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class SchemeParams:
    """All tunables of the optical measurement scheme.

    eta        mixer intensity transmissivity, strictly inside (0, 1)
    sigma      probe quadrature variance in units of the vacuum value (> 0)
    phi        phase of the signal quadrature being measured
    phi_probe  phase of the probe quadrature that is read out; defaults to
               phi, the choice for which the compensation stages cancel the
               readout dressing exactly
    cutoff     Fock-space dimension of the delivered operators
    grid       outcome grid (default "-3:3:0.25")
    """

    eta: float
    sigma: float
    phi: float = 0.0
    phi_probe: Optional[float] = None
    cutoff: int = 60
    grid: OutcomeGrid = None

    def __post_init__(self):
        _check_transmissivity(self.eta)
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ParameterError(
                f"probe variance ratio sigma must be > 0, got {self.sigma}")
        if not isinstance(self.cutoff, (int, np.integer)) or self.cutoff < 2:
            raise ParameterError(f"cutoff must be an integer >= 2, "
                                 f"got {self.cutoff}")
        if self.phi_probe is None:
            object.__setattr__(self, "phi_probe", float(self.phi))
        if self.grid is None:
            object.__setattr__(self, "grid",
                               OutcomeGrid.from_spec(DEFAULT_GRID_SPEC))

    @property
    def delta(self) -> float:
        """r.m.s. width of the effective measurement kernel."""
        return measurement_width(self.eta, self.sigma)


@dataclass(frozen=True)
class StageMask:
    """Which compensation stages run.  The raw readout (mixing + probe
    readout) always runs; the three optional stages may be disabled to
    expose the intermediate operator forms."""

    pre_squeeze: bool = True
    feedback: bool = True
    back_squeeze: bool = True

    @classmethod
    def full(cls) -> "StageMask":
        return cls()

    @classmethod
    def raw(cls) -> "StageMask":
        return cls(False, False, False)


def presqueeze_param(eta: float) -> float:
    """Squeeze parameter of the signal pre-squeeze stage: -ln(1-eta)/2 > 0.
    Raises the working-quadrature variance by 1/(1-eta) so that the mixer's
    transmission loss lands the kernel argument on x - x_quad exactly."""
    _check_transmissivity(eta)
    return -0.5 * math.log1p(-eta)


def backsqueeze_param(eta: float, pre_squeezed: bool = True) -> float:
    """Squeeze parameter of the final compensation stage.

    The readout leaves the adjoint squeeze dressing S(q)^dag on the signal;
    applying S(q) cancels it.  With the pre-squeeze on, q = ln(eta(1-eta))/2
    (symmetric under eta <-> 1-eta); with the pre-squeeze disabled the
    residual is only S(ln(eta)/2)^dag.
    """
    _check_transmissivity(eta)
    if pre_squeezed:
        return 0.5 * math.log(eta * (1.0 - eta))
    return 0.5 * math.log(eta)


def feedback_coefficient(eta: float) -> float:
    """Outcome-to-displacement gain sqrt((1-eta)/eta)."""
    _check_transmissivity(eta)
    return math.sqrt((1.0 - eta) / eta)


def feedback_displacement(x: float, eta: float, phi: float = 0.0) -> complex:
    """Amplitude of the conditional displacement: sqrt((1-eta)/eta) x along
    the working quadrature (phase phi), cancelling the D^dag dressing of
    the raw readout."""
    return feedback_coefficient(eta) * x * complex(math.cos(phi),
                                                   math.sin(phi))


def measurement_width(eta: float, sigma: float) -> float:
    """Kernel r.m.s. width Delta = sqrt(eta sigma)/2."""
    _check_transmissivity(eta)
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    return 0.5 * math.sqrt(eta * sigma)


# ---------------------------------------------------------------------------
# phase-sensitive amplifier view of the squeeze stages


@dataclass(frozen=True)
class PsaStage:
    """One phase-sensitive amplifier: intensity gain and pump phase."""

    gain: float
    pump_phase: float

    def __post_init__(self):
        if not (self.gain > 0.0 and math.isfinite(self.gain)):
            raise ParameterError(f"PSA gain must be > 0, got {self.gain}")

    @property
    def squeeze_parameter(self) -> float:
        """The stage deamplifies the pump-phase quadrature by G^{1/2}:
        squeeze parameter -ln(G)/2 along the pump phase."""
        return -0.5 * math.log(self.gain)


@dataclass(frozen=True)
class PsaSpec:
    """The three amplifier stages realizing the scheme's squeezers."""

    pre: PsaStage
    probe: PsaStage
    back: PsaStage

    @property
    def g1(self) -> float:
        return self.pre.gain

    @property
    def g2(self) -> float:
        return self.back.gain

    @property
    def g3(self) -> float:
        return self.probe.gain


def psa_from_params(params: SchemeParams) -> PsaSpec:
    """Amplifier gains and pump phases realizing the scheme's three squeeze
    stages: g1 = 1/(1-eta) (signal pre), g2 = eta(1-eta) (back), g3 = sigma
    (probe preparation).  Every pump sits a quarter period from the working
    quadrature; see the module docstring's sign table."""
    half_pi = 0.5 * math.pi
    return PsaSpec(
        pre=PsaStage(1.0 / (1.0 - params.eta), params.phi + half_pi),
        probe=PsaStage(params.sigma, params.phi_probe + half_pi),
        back=PsaStage(params.eta * (1.0 - params.eta), params.phi + half_pi),
    )


def psa_squeeze_operator(stage: PsaStage, cutoff: int) -> np.ndarray:
    """Truncated unitary of one PSA stage: S(-ln(G)/2) along the pump
    phase."""
    return make_squeeze(stage.squeeze_parameter, cutoff,
                        phase=stage.pump_phase).matrix


# ---------------------------------------------------------------------------
# feedback specification


@dataclass(frozen=True)
class FeedbackSpec:
    """How the conditional displacement is realized.

    mode "ideal": exact unitary displacement.
    mode "finite-lo": mixing with a strong coherent local oscillator of
    amplitude beta through an outcome-controlled transmissivity cell
    obeying |beta| sqrt(1-theta(x)) = |required amplitude|; exact for
    |beta| -> infinity, infeasible when the required amplitude reaches
    |beta|.
    """

    mode: str = "ideal"
    beta: Optional[complex] = None

    def __post_init__(self):
        if self.mode not in ("ideal", "finite-lo"):
            raise ParameterError(
                f"feedback mode must be 'ideal' or 'finite-lo', "
                f"got {self.mode!r}")
        if self.mode == "finite-lo":
            if self.beta is None or abs(self.beta) <= 0.0:
                raise ParameterError(
                    "finite-lo feedback requires a nonzero local-oscillator "
                    "amplitude beta")

    @classmethod
    def ideal(cls) -> "FeedbackSpec":
        return cls("ideal")

    @classmethod
    def finite_lo(cls, beta: complex) -> "FeedbackSpec":
        return cls("finite-lo", complex(beta))

    def theta(self, amplitude: complex) -> float:
        """Cell transmissivity realizing the given displacement amplitude:
        1 - (|amplitude|/|beta|)^2, valid while that stays in (0, 1]."""
        if self.mode == "ideal":
            return 1.0
        ratio = abs(amplitude) / abs(self.beta)
        if ratio >= 1.0:
            raise InfeasibleFeedbackError(
                f"required displacement {abs(amplitude):.4g} reaches the "
                f"local-oscillator amplitude {abs(self.beta):.4g}")
        return 1.0 - ratio * ratio

    def validate_for(self, params: SchemeParams,
                     grid: Optional[OutcomeGrid] = None) -> None:
        """Check that every outcome on the grid is realizable (theta in
        (0,1]); raises InfeasibleFeedbackError otherwise."""
        if self.mode == "ideal":
            return
        g = grid if grid is not None else params.grid
        worst = max(abs(g.x_min), abs(g.x_max))
        self.theta(feedback_displacement(worst, params.eta, params.phi))


# ---------------------------------------------------------------------------
# faithful working-space operators


def _faithful_displacement(alpha: complex, n: int) -> np.ndarray:
    """Displacement matrix from its closed-form Laguerre elements; every
    entry is exact to rounding, unlike expm of the truncated generator
    whose low blocks degrade once |alpha|^2 approaches the cutoff."""
    m = np.arange(n)[:, None]
    k = np.arange(n)[None, :]
    p = np.maximum(m, k)
    q = np.minimum(m, k)
    d = p - q
    aa = abs(alpha) ** 2
    lag = eval_genlaguerre(q, d, aa)
    pref = np.exp(0.5 * (gammaln(q + 1) - gammaln(p + 1)) - 0.5 * aa)
    base = np.where(m >= k, np.power(alpha, d, dtype=complex),
                    np.power(-np.conjugate(alpha), d, dtype=complex))
    return pref * lag * base


def _faithful_squeeze(r: float, n: int, phase: float = 0.0) -> np.ndarray:
    """Squeeze matrix whose low columns are faithful: the generator is
    exponentiated in an extended space (n e^{2|r|} levels) and truncated
    back, and the parity split keeps the expm cheap.  The pump phase enters
    as the exact element phase e^{i(m-k) phase}."""
    if r == 0.0:
        return np.eye(n, dtype=complex)
    n_ext = int(math.ceil(n * math.exp(2.0 * abs(r)))) + 40
    out = np.zeros((n_ext, n_ext))
    for parity in (0, 1):
        idx = np.arange(parity, n_ext, 2)
        d = len(idx)
        gen = np.zeros((d, d))
        lower = idx[:-1].astype(float)
        amp = 0.5 * r * np.sqrt((lower + 1.0) * (lower + 2.0))
        gen[np.arange(1, d), np.arange(d - 1)] = amp
        gen[np.arange(d - 1), np.arange(1, d)] = -amp
        out[np.ix_(idx, idx)] = expm(gen)
    block = out[:n, :n].astype(complex)
    if phase != 0.0:
        ph = np.exp(1j * phase * np.arange(n))
        block = ph[:, None] * block * ph.conj()[None, :]
    return block


# ---------------------------------------------------------------------------
# the pipeline builder


class SchemeFamilyBuilder:
    """Assembles the scheme's reduction operators in a working Fock space.

    The mixer-probe contraction V[m, p, n] = <m, p|U_mix|n, probe> is
    precomputed once per parameter set through the conserved-occupancy
    sectors; each outcome then costs one eigenvector contraction and (for
    unmasked stages) two or three working-space matrix products.
    """

    def __init__(self, params: SchemeParams, margin: float = 2.5):
        if margin < 1.0:
            raise ParameterError(f"working-space margin must be >= 1, "
                                 f"got {margin}")
        self.params = params
        self.n_work = max(params.cutoff,
                          int(math.ceil(margin * params.cutoff)))
        probe = squeezed_vacuum(params.sigma, self.n_work,
                                phase=params.phi_probe)
        self._probe_warnings = probe.warnings
        self._v = self._contract_probe(probe.amplitudes)
        self._s_pre = None
        self._s_back = {}

    def _contract_probe(self, probe_vec: np.ndarray) -> np.ndarray:
        n = self.n_work
        complex_probe = np.iscomplexobj(probe_vec) and np.any(
            np.abs(probe_vec.imag) > 0.0)
        v = np.zeros((n, n, n),
                     dtype=complex if complex_probe else float)
        amps = probe_vec if complex_probe else probe_vec.real
        for m, s, block in _bs_sector_blocks(self.params.eta, n):
            v[m[:, None], (s - m)[:, None], m[None, :]] = \
                block * amps[s - m][None, :]
        return v

    def _pre_matrix(self) -> np.ndarray:
        if self._s_pre is None:
            self._s_pre = _faithful_squeeze(
                presqueeze_param(self.params.eta), self.n_work,
                self.params.phi)
        return self._s_pre

    def _back_matrix(self, pre_on: bool) -> np.ndarray:
        if pre_on not in self._s_back:
            self._s_back[pre_on] = _faithful_squeeze(
                backsqueeze_param(self.params.eta, pre_squeezed=pre_on),
                self.n_work, self.params.phi)
        return self._s_back[pre_on]

    def _chi(self, xs: np.ndarray) -> np.ndarray:
        return quadrature_eigenvector_matrix(
            np.asarray(xs, dtype=float), self.n_work,
            self.params.phi_probe).conj()

    def raw_operator(self, x: float) -> np.ndarray:
        """Uncompensated reduction operator at working size."""
        return np.einsum("p,mpn->mn", self._chi(np.array([x]))[0], self._v)

    def operator(self, x: float, mask: StageMask = StageMask(), *,
                 workspace: bool = False) -> np.ndarray:
        """Reduction operator for one outcome, truncated to the requested
        cutoff unless ``workspace`` asks for the full working-space matrix."""
        om = self.raw_operator(x)
        if mask.pre_squeeze:
            om = om @ self._pre_matrix()
        if mask.feedback:
            om = _faithful_displacement(
                feedback_displacement(x, self.params.eta, self.params.phi),
                self.n_work) @ om
        if mask.back_squeeze:
            om = self._back_matrix(mask.pre_squeeze) @ om
        if workspace:
            return om
        c = self.params.cutoff
        return om[:c, :c]

    def masked_pom_matrix(self, x: float, block: int,
                          mask: StageMask = StageMask()) -> np.ndarray:
        """Probability-operator matrix at one outcome with the masked
        dressing stages genuinely applied (at working size, before the
        quadratic product), restricted to the leading ``block`` levels.

        Unlike :meth:`pom_on_grid`, nothing here assumes the dressings
        cancel; comparing masks through this method measures the
        invariance instead of postulating it."""
        raw = self.raw_operator(x)
        cols = raw @ self._pre_matrix()[:, :block] if mask.pre_squeeze \
            else raw[:, :block].astype(complex)
        if mask.feedback:
            cols = _faithful_displacement(
                feedback_displacement(x, self.params.eta, self.params.phi),
                self.n_work) @ cols
        if mask.back_squeeze:
            cols = self._back_matrix(mask.pre_squeeze) @ cols
        return cols.conj().T @ cols

    def family(self, grid: Optional[OutcomeGrid] = None,
               mask: StageMask = StageMask()) -> ReductionOperatorFamily:
        g = grid if grid is not None else self.params.grid
        c = self.params.cutoff
        chi = self._chi(g.points)
        ops = np.empty((len(g), c, c), dtype=complex)
        pre = self._pre_matrix() if mask.pre_squeeze else None
        back = self._back_matrix(mask.pre_squeeze) if mask.back_squeeze \
            else None
        for i, x in enumerate(g.points):
            om = np.einsum("p,mpn->mn", chi[i], self._v)
            if pre is not None:
                om = om @ pre
            if mask.feedback:
                om = _faithful_displacement(
                    feedback_displacement(x, self.params.eta,
                                          self.params.phi),
                    self.n_work) @ om
            if back is not None:
                om = back @ om
            ops[i] = om[:c, :c]
        origin = "raw-interaction" if mask == StageMask.raw() else "compensated"
        return ReductionOperatorFamily(g, ops, origin, self._probe_warnings)

    def pom_on_grid(self, grid: OutcomeGrid, block: int,
                    mask: StageMask = StageMask()) -> np.ndarray:
        """Probability-operator density restricted to the leading ``block``
        Fock levels, shape (len(grid), block, block).  Only the pre-squeeze
        flag matters here: the quadratic product is taken at working size,
        where the outcome-dependent unitary dressings of feedback and
        back-squeeze cancel (verified separately through
        :meth:`masked_pom_matrix`, which applies them explicitly)."""
        n = self.n_work
        flat = self._v.reshape(n * n, n)
        cols = (flat @ self._pre_matrix()[:, :block]) if mask.pre_squeeze \
            else flat[:, :block].astype(complex)
        cols = cols.reshape(n, n, block)
        w = np.einsum("xp,mpk->xmk", self._chi(grid.points), cols,
                      optimize=True)
        return np.einsum("xmi,xmj->xij", w.conj(), w, optimize=True)

    def completeness_defect(self, grid: OutcomeGrid, block: int = 16,
                            mask: StageMask = StageMask()) -> float:
        pom = self.pom_on_grid(grid, block, mask)
        acc = np.tensordot(grid.weights(), pom, axes=(0, 0))
        return float(np.max(np.abs(acc - np.eye(block))))

    def outcome_density_values(self, state, grid: OutcomeGrid,
                               mask: StageMask = StageMask()) -> np.ndarray:
        """Born density of the measurement outcome for a pure input, without
        materializing the family."""
        if isinstance(state, StateVector):
            psi = state.amplitudes
        else:
            psi = np.asarray(state)
        if psi.ndim != 1:
            raise ParameterError(
                "outcome_density_values wants a pure state; use the family "
                "POM for mixed inputs")
        padded = np.zeros(self.n_work, dtype=complex)
        padded[:min(len(psi), self.n_work)] = psi[:self.n_work]
        if mask.pre_squeeze:
            padded = self._pre_matrix() @ padded
        vv = np.einsum("mpn,n->mp", self._v, padded)
        amps = np.einsum("xp,mp->xm", self._chi(grid.points), vv)
        return np.linalg.norm(amps, axis=1) ** 2


# ---------------------------------------------------------------------------
# pipeline verification


@dataclass(frozen=True)
class PipelineResult:
    """Comparison of the composed pipeline against its analytic target."""

    params: SchemeParams
    mask: StageMask
    family: ReductionOperatorFamily
    target: ReductionOperatorFamily
    block: int
    max_deviation: float
    per_outcome_deviation: np.ndarray
    pom_deviation: float
    completeness_defect_family: float
    completeness_defect_target: float
    completeness_grid: OutcomeGrid

    def check(self, identity_tol: float = 1e-6, pom_tol: float = 1e-10,
              completeness_tol: float = 1e-4) -> Tuple[str, ...]:
        """Names of the acceptance-style checks this result fails, with
        values; empty when all pass."""
        failures = []
        if not (self.max_deviation <= identity_tol):
            failures.append(
                f"pipeline-identity: max deviation {self.max_deviation:.3e} "
                f"> {identity_tol:.1e}")
        if not (self.pom_deviation <= pom_tol):
            failures.append(
                f"pom-identity: max deviation {self.pom_deviation:.3e} "
                f"> {pom_tol:.1e}")
        if not (self.completeness_defect_family <= completeness_tol):
            failures.append(
                f"completeness: defect {self.completeness_defect_family:.3e} "
                f"> {completeness_tol:.1e}")
        return tuple(failures)


def _blockwise_phase_fit_deviation(fam_ops: np.ndarray, tgt_ops: np.ndarray,
                                   block: int) -> np.ndarray:
    """Per-outcome max elementwise deviation after fitting one global phase
    per outcome (the Frobenius-overlap phase on the compared block)."""
    f = fam_ops[:, :block, :block]
    t = tgt_ops[:, :block, :block]
    inner = np.einsum("xmn,xmn->x", t.conj(), f)
    mag = np.abs(inner)
    phases = np.where(mag > 0.0, inner / np.where(mag > 0.0, mag, 1.0), 1.0)
    return np.max(np.abs(f * phases.conj()[:, None, None] - t), axis=(1, 2))


def build_scheme_family(params: SchemeParams,
                        feedback: Optional[FeedbackSpec] = None,
                        compensate: StageMask = StageMask(),
                        margin: float = 2.5, block: int = 16,
                        completeness_grid: Optional[OutcomeGrid] = None,
                        ) -> PipelineResult:
    """Compose the pipeline and compare it against the analytic Gaussian
    quadrature-kernel target of width Delta = sqrt(eta sigma)/2.

    The deviation is reported up to one fitted global phase per outcome on
    the leading ``block`` Fock levels; the POM deviation compares the
    composed family's probability operators with the target's on the same
    block; completeness defects are evaluated on ``completeness_grid``
    (default [-8, 8] step 0.02).  All numbers are reported whether or not
    they meet any tolerance; use PipelineResult.check for adjudication.
    """
    feedback = feedback if feedback is not None else FeedbackSpec.ideal()
    if feedback.mode != "ideal":
        raise ParameterError(
            "the operator-family identity is defined for ideal feedback; "
            "finite-lo feedback acts as a channel on states - use the "
            "monte-carlo trial engine for it")
    builder = SchemeFamilyBuilder(params, margin)
    family = builder.family(params.grid, compensate)
    target = vn_target_family(params.delta, params.grid, params.cutoff,
                              phase=params.phi, margin=margin)
    per_x = _blockwise_phase_fit_deviation(family.operators, target.operators,
                                           block)
    pom_dev = float(np.max(np.abs(
        family.pom().matrices[:, :block, :block]
        - target.pom().matrices[:, :block, :block])))
    cgrid = completeness_grid if completeness_grid is not None \
        else OutcomeGrid.from_range(-8.0, 8.0, 0.02)
    cf = builder.completeness_defect(cgrid, block, compensate)
    tgt_wide = vn_target_family(params.delta, cgrid, params.cutoff,
                                phase=params.phi, margin=margin)
    ct = tgt_wide.completeness_defect(block)
    return PipelineResult(
        params=params, mask=compensate, family=family, target=target,
        block=block, max_deviation=float(np.max(per_x)),
        per_outcome_deviation=per_x, pom_deviation=pom_dev,
        completeness_defect_family=cf, completeness_defect_target=ct,
        completeness_grid=cgrid)


# ---------------------------------------------------------------------------
# mixer factorization verification


@dataclass(frozen=True)
class BchReport:
    """Numerical adjudication of the mixer's Gauss factorization

        U_mix = exp(2ic y X) . (S_sys(-ln(eta)/2) (x) S_probe(ln(eta)/2))
                             . exp(-2ic x Y),   c = sqrt((1-eta)/eta),

    (lowercase quadratures on the signal, uppercase on the probe) together
    with the su(2) commutators of the generators J+ = 2i y X, J- = 2i x Y,
    Jz = i(X Y - x y), and the equality of the mixer's ladder-operator and
    quadrature-pair generator forms.
    """

    eta: float
    cutoff: int
    block_total: int
    working_cutoff: int
    factorization_deviation: float
    su2_plus_minus_deviation: Optional[float]
    su2_z_plus_deviation: Optional[float]
    su2_z_minus_deviation: Optional[float]
    generator_form_deviation: Optional[float]
    factor_identity_deviations: Tuple[float, float, float]


def _joint_quadratures(cutoff: int):
    x = make_quadrature(cutoff, 0.0)
    y = make_quadrature(cutoff, 0.5 * math.pi)
    eye = np.eye(cutoff)
    return (np.kron(x, eye), np.kron(y, eye),
            np.kron(eye, x), np.kron(eye, y))


def _low_total_indices(cutoff: int, block_total: int) -> np.ndarray:
    m = np.arange(cutoff)
    total = m[:, None] + m[None, :]
    return np.flatnonzero((total <= block_total).ravel())


def _apply_mixer_sectors(eta: float, vecs: np.ndarray) -> np.ndarray:
    """Apply the sector-exact mixer to joint vectors shaped (n, n, k)."""
    n = vecs.shape[0]
    out = np.zeros_like(vecs, dtype=complex)
    for m, s, blockm in _bs_sector_blocks(eta, n):
        out[m, s - m, :] = blockm @ vecs[m, s - m, :]
    return out


def _apply_on_mode(mat: np.ndarray, vecs: np.ndarray, mode: int) -> np.ndarray:
    """Left-multiply joint vectors (n_sys, n_probe, k) by a one-mode matrix
    acting on the given mode, via a reshaped BLAS product."""
    if mode == 0:
        n = vecs.shape[0]
        return (mat @ vecs.reshape(n, -1)).reshape(vecs.shape)
    swapped = vecs.transpose(1, 0, 2)
    n = swapped.shape[0]
    out = (mat @ swapped.reshape(n, -1)).reshape(swapped.shape)
    return out.transpose(1, 0, 2)


def _apply_factored_mixer(eta: float, vecs: np.ndarray) -> np.ndarray:
    """Apply the three Gauss factors (rightmost first) to joint vectors
    shaped (n, n, k), using per-mode eigenbases so that no truncated joint
    product ever forms."""
    n = vecs.shape[0]
    c = math.sqrt((1.0 - eta) / eta)
    x = make_quadrature(n, 0.0)
    y = make_quadrature(n, 0.5 * math.pi)
    nu, rx = np.linalg.eigh(x)
    mu, ry = np.linalg.eigh(y)
    half_log = -0.5 * math.log(eta)
    sq_sys = _faithful_squeeze(half_log, n)
    sq_probe = _faithful_squeeze(-half_log, n)
    v = vecs.astype(complex)
    # rightmost factor exp(-2ic x Y): diagonal in (sys x-basis, probe y-basis)
    v = _apply_on_mode(rx.conj().T, v, 0)
    v = _apply_on_mode(ry.conj().T, v, 1)
    v *= np.exp(-2j * c * np.outer(nu, mu))[:, :, None]
    v = _apply_on_mode(rx, v, 0)
    v = _apply_on_mode(ry, v, 1)
    # middle factor: opposite squeezes on the two modes
    v = _apply_on_mode(sq_sys, v, 0)
    v = _apply_on_mode(sq_probe, v, 1)
    # leftmost factor exp(+2ic y X)
    v = _apply_on_mode(ry.conj().T, v, 0)
    v = _apply_on_mode(rx.conj().T, v, 1)
    v *= np.exp(2j * c * np.outer(mu, nu))[:, :, None]
    v = _apply_on_mode(ry, v, 0)
    v = _apply_on_mode(rx, v, 1)
    return v


def verify_bch_factorization(eta: float, cutoff: int = 40,
                             block_total: int = 10,
                             working_cutoff: Optional[int] = None,
                             check_su2: bool = True) -> BchReport:
    """Check the mixer's three-factor Gauss factorization and the su(2)
    algebra of its generators.

    The two sides are applied to every joint basis vector with total
    occupancy <= block_total and compared on the rows of the same total,
    inside a working space of ``working_cutoff`` levels per mode (default
    2.5x the requested cutoff): the factorization is an operator identity,
    but products of individually truncated exponentials corrupt low blocks,
    so the faithful route evaluates each factor in its own eigenbasis.

    ``check_su2=False`` skips the commutator and generator-form products
    (the expensive cutoff^2-sized matrices, and the only eta-independent
    part), leaving those report fields None - useful when scanning eta.
    """
    _check_transmissivity(eta)
    if cutoff < 40:
        raise ParameterError(
            f"factorization check wants cutoff >= 40, got {cutoff}")
    n_w = working_cutoff if working_cutoff is not None \
        else int(math.ceil(2.5 * cutoff))
    pairs = [(m, p) for m in range(cutoff) for p in range(cutoff)
             if m + p <= block_total]
    basis = np.zeros((n_w, n_w, len(pairs)))
    for k, (m, p) in enumerate(pairs):
        basis[m, p, k] = 1.0
    left = _apply_mixer_sectors(eta, basis)
    right = _apply_factored_mixer(eta, basis)
    rows = np.array([(m, p) for m in range(n_w) for p in range(n_w)
                     if m + p <= block_total])
    fac_dev = float(np.max(np.abs(left[rows[:, 0], rows[:, 1], :]
                                  - right[rows[:, 0], rows[:, 1], :])))

    su_pm = su_zp = su_zm = gen_dev = None
    if check_su2:
        # su(2) commutators of the factor generators, on the low-total block
        # of the requested cutoff (products only ever reach total +- 4 there)
        xs, ys, xp, yp = _joint_quadratures(cutoff)
        j_plus = 2j * (ys @ xp)
        j_minus = 2j * (xs @ yp)
        j_z = 1j * (xp @ yp - xs @ ys)
        idx = _low_total_indices(cutoff, block_total)

        def block_max(mat):
            return float(np.max(np.abs(mat[np.ix_(idx, idx)])))

        su_pm = block_max(j_plus @ j_minus - j_minus @ j_plus - 2.0 * j_z)
        su_zp = block_max(j_z @ j_plus - j_plus @ j_z - j_plus)
        su_zm = block_max(j_z @ j_minus - j_minus @ j_z + j_minus)

        # ladder form a b^dag - a^dag b versus quadrature form 2i(y X - x Y)
        a = make_annihilation(cutoff)
        ladder_gen = np.kron(a, a.conj().T) - np.kron(a.conj().T, a)
        quad_gen = 2j * (ys @ xp - xs @ yp)
        gen_dev = float(np.max(np.abs(ladder_gen - quad_gen)))

    # each factor alone, for the eta -> 1 limit where all become identity
    c = math.sqrt((1.0 - eta) / eta)
    x1 = make_quadrature(n_w, 0.0)
    y1 = make_quadrature(n_w, 0.5 * math.pi)
    nu, rx = np.linalg.eigh(x1)
    mu, ry = np.linalg.eigh(y1)
    devs = []
    for basis_a, basis_b, vals, sign in (
            (rx, ry, (nu, mu), -1.0), (ry, rx, (mu, nu), +1.0)):
        v = _apply_on_mode(basis_a.conj().T, basis.astype(complex), 0)
        v = _apply_on_mode(basis_b.conj().T, v, 1)
        v *= np.exp(sign * 2j * c * np.outer(*vals))[:, :, None]
        v = _apply_on_mode(basis_a, v, 0)
        v = _apply_on_mode(basis_b, v, 1)
        devs.append(float(np.max(np.abs(
            (v - basis)[rows[:, 0], rows[:, 1], :]))))
    sq_s = _faithful_squeeze(-0.5 * math.log(eta), n_w)
    sq_p = _faithful_squeeze(0.5 * math.log(eta), n_w)
    v = _apply_on_mode(sq_s, basis.astype(complex), 0)
    v = _apply_on_mode(sq_p, v, 1)
    mid_dev = float(np.max(np.abs((v - basis)[rows[:, 0], rows[:, 1], :])))
    devs.insert(1, mid_dev)

    return BchReport(
        eta=eta, cutoff=cutoff, block_total=block_total, working_cutoff=n_w,
        factorization_deviation=fac_dev, su2_plus_minus_deviation=su_pm,
        su2_z_plus_deviation=su_zp, su2_z_minus_deviation=su_zm,
        generator_form_deviation=gen_dev,
        factor_identity_deviations=tuple(devs))


# ---------------------------------------------------------------------------
# exact Gaussian oracle of the whole scheme


class GaussianSchemeOracle:
    """Mean/covariance bookkeeping of the full pipeline for Gaussian
    inputs: an independent reference path sharing no Fock-space code."""

    def __init__(self, params: SchemeParams,
                 input_state: Optional[GaussianState] = None,
                 mask: StageMask = StageMask()):
        if input_state is None:
            input_state = vacuum_gaussian(1)
        if input_state.n_modes != 1:
            raise ParameterError("the scheme oracle takes a one-mode input")
        self.params = params
        self.mask = mask
        sys0 = input_state
        if mask.pre_squeeze:
            sys0 = squeeze_symplectic(presqueeze_param(params.eta),
                                      params.phi).apply(sys0)
        probe = squeeze_symplectic(0.5 * math.log(params.sigma),
                                   params.phi_probe).apply(vacuum_gaussian(1))
        joint = tensor_product(sys0, probe)
        self.joint_after = beam_splitter_symplectic(params.eta).apply(joint)

    def outcome_moments(self) -> Tuple[float, float]:
        """Mean and variance of the readout outcome."""
        return quadrature_statistics(self.joint_after, 1,
                                     self.params.phi_probe)

    def post_state(self, x: float) -> GaussianState:
        """Conditional signal state after the compensation stages."""
        _, reduced = condition_on_quadrature(self.joint_after, 1,
                                             self.params.phi_probe, x)
        state = reduced
        if self.mask.feedback:
            state = displacement_transform(
                feedback_displacement(x, self.params.eta,
                                      self.params.phi)).apply(state)
        if self.mask.back_squeeze:
            state = squeeze_symplectic(
                backsqueeze_param(self.params.eta,
                                  pre_squeezed=self.mask.pre_squeeze),
                self.params.phi).apply(state)
        return state

    def post_quadrature_moments(self, x: float,
                                phase: Optional[float] = None,
                                ) -> Tuple[float, float]:
        ph = self.params.phi if phase is None else phase
        return quadrature_statistics(self.post_state(x), 0, ph)
