"""Continuous-pointer spectroscopy: couple a system Hamiltonian H to one
oscillator through H(x)P, let eigenvalue branches shift the pointer, then
read the pointer position.

Position measurement uses the eigenbasis of the truncated X operator, whose
nodes are the scaled Gauss-Hermite points; Born sampling is exactly diagonal
there and no external grid has to be chosen.  A Gaussian pointer of width
parameter beta (beta = 1 is the vacuum, beta > 1 squeezes X) resolves
eigenvalues to about 1/(t sqrt(beta)); that figure is recorded with every
run, and scaling against it is what the resolution experiments check.

Shots are independent: each shot uses its own counter-derived substream of
the master seed, so results are bit-identical no matter how the shot loop
is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .evolution import Pulse, PulseSequence, leakage as state_leakage, run_sequence, trotter
from .hilbert import (
    DEFAULT_GUARD,
    RegisterLayout,
    StateVector,
    guard_start,
    qumode,
)
from .operators import (
    HamiltonianExpr,
    HamiltonianTerm,
    LocalOp,
    build,
    fock_position,
)

LEAKAGE_INVALID = 1e-3


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class PointerSpec:
    """Pointer configuration: Gaussian width beta, Fock cutoff, coupling time."""

    beta: float
    cutoff: int
    t_couple: float

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise SpectralError(f"beta must be positive and finite, got {self.beta}")
        if self.cutoff < 2:
            raise SpectralError(f"pointer cutoff must be >= 2, got {self.cutoff}")
        if not (np.isfinite(self.t_couple) and self.t_couple > 0):
            raise SpectralError(f"t_couple must be positive, got {self.t_couple}")

    @property
    def resolution(self) -> float:
        """Eigenvalue resolution figure 1/(t sqrt(beta))."""
        return 1.0 / (self.t_couple * np.sqrt(self.beta))


@dataclass(frozen=True)
class QuadratureBasis:
    """Eigenbasis of the truncated X: strictly increasing nodes, orthonormal columns."""

    nodes: np.ndarray
    vectors: np.ndarray


@lru_cache(maxsize=32)
def quadrature_basis(cutoff: int) -> QuadratureBasis:
    nodes, vectors = np.linalg.eigh(fock_position(cutoff))
    # Fix signs so <0|x_k> > 0, matching the positive ground-state wavefunction.
    signs = np.sign(vectors[0, :].real)
    signs[signs == 0] = 1.0
    vectors = vectors * signs
    nodes.flags.writeable = False
    vectors.flags.writeable = False
    return QuadratureBasis(nodes, vectors)


def prepare_gaussian_pointer(beta: float, cutoff: int) -> StateVector:
    """Single-mode state with position wavefunction proportional to e^{-beta x^2 / 2}.

    This is the squeezed vacuum with Var(X) = 1/(2 beta); beta = 1 is the
    Fock vacuum exactly.  Raises if the truncated space cannot hold the
    state to overlap 1 - 1e-6 (extreme squeezing at a too-small cutoff).
    """
    if not (np.isfinite(beta) and beta > 0):
        raise SpectralError(f"beta must be positive and finite, got {beta}")
    lam = np.tanh(0.5 * np.log(beta))
    coeff = np.zeros(cutoff, dtype=complex)
    c = 1.0
    coeff[0] = c
    for m in range(1, (cutoff + 1) // 2):
        c *= -lam * np.sqrt((2 * m - 1) / (2 * m))
        coeff[2 * m] = c
    captured = float(np.sum(np.abs(coeff) ** 2)) / np.cosh(0.5 * np.log(beta))
    if captured < 1.0 - 1e-6:
        raise SpectralError(
            f"cutoff {cutoff} holds only {captured:.6f} of the beta={beta} pointer; "
            "increase the cutoff or reduce the squeezing"
        )
    amps = coeff / np.linalg.norm(coeff)
    return StateVector(RegisterLayout((qumode(cutoff),)), amps)


def _coupling_expr(h: HamiltonianExpr, pointer_idx: int) -> HamiltonianExpr:
    """H = sum_k H_k turned into the pointer coupling sum_k H_k (x) P."""
    terms = tuple(
        HamiltonianTerm(t.coefficient, t.factors + ((pointer_idx, LocalOp("P")),))
        for t in h.terms
    )
    return HamiltonianExpr(terms)


def couple_pointer(
    system_state: StateVector,
    h: HamiltonianExpr,
    pointer: StateVector,
    t: float,
    method: str = "exact",
    trotter_steps: int = 64,
) -> StateVector:
    """Joint state exp(-i H(x)P t) |system>|pointer> (pointer appended last).

    Each eigenvalue branch |E_j> of H translates the pointer by E_j t.  With
    method="trotter" the coupling is applied term by term in ``trotter_steps``
    first-order rounds, which is how a many-term H is actually driven.
    """
    n_sys = len(system_state.layout)
    for trm in h.terms:
        for idx, _ in trm.factors:
            if idx >= n_sys:
                raise SpectralError(f"H touches subsystem {idx}, outside the system register")
    if len(pointer.layout) != 1 or not pointer.layout.is_qumode(0):
        raise SpectralError("pointer must be a single qumode state")
    if not (np.isfinite(t) and t > 0):
        raise SpectralError(f"coupling time must be positive, got {t}")

    joint_layout = RegisterLayout(system_state.layout.subsystems + pointer.layout.subsystems)
    joint = StateVector(joint_layout, np.kron(system_state.amplitudes, pointer.amplitudes))
    coupling = _coupling_expr(h, n_sys)
    if method == "exact":
        seq = PulseSequence((Pulse(coupling, t, 1),))
    elif method == "trotter":
        seq = trotter(coupling, t, trotter_steps)
    else:
        raise SpectralError(f"method must be 'exact' or 'trotter', got {method!r}")
    return run_sequence(seq, joint).final_state


def _node_amplitudes(joint: StateVector, mode_idx: int) -> tuple[np.ndarray, QuadratureBasis]:
    """Amplitudes re-expressed in the mode's quadrature-node basis, shape (rest, nodes)."""
    layout = joint.layout
    if not layout.is_qumode(mode_idx):
        raise SpectralError(f"subsystem {mode_idx} is not a qumode")
    basis = quadrature_basis(layout.dims[mode_idx])
    moved = np.moveaxis(joint.tensor(), mode_idx, -1)
    flat = moved.reshape(-1, layout.dims[mode_idx])
    return flat @ basis.vectors.conj(), basis


def _collapse_to_node(joint: StateVector, mode_idx: int, node_amps: np.ndarray, basis: QuadratureBasis, k: int) -> StateVector:
    layout = joint.layout
    d = layout.dims[mode_idx]
    column = node_amps[:, k]
    p = float(np.sum(np.abs(column) ** 2))
    flat = np.outer(column / np.sqrt(p), basis.vectors[:, k])
    dims = layout.dims
    rest = tuple(dims[i] for i in range(len(dims)) if i != mode_idx)
    shaped = flat.reshape(rest + (d,))
    return StateVector(layout, np.moveaxis(shaped, -1, mode_idx).reshape(-1))


def measure_position(
    joint: StateVector, mode_idx: int, rng: np.random.Generator
) -> tuple[float, StateVector]:
    """Born-sample the X eigenbasis of one mode; returns (node value, collapsed state)."""
    node_amps, basis = _node_amplitudes(joint, mode_idx)
    probs = np.sum(np.abs(node_amps) ** 2, axis=0)
    probs = probs / probs.sum()
    k = int(rng.choice(len(probs), p=probs))
    return float(basis.nodes[k]), _collapse_to_node(joint, mode_idx, node_amps, basis, k)


def _collapse_to_bin(
    joint: StateVector,
    mode_idx: int,
    node_amps: np.ndarray,
    basis: QuadratureBasis,
    members: np.ndarray,
) -> tuple[float, StateVector]:
    """Project onto the span of the given quadrature nodes and renormalize."""
    layout = joint.layout
    d = layout.dims[mode_idx]
    kept = np.zeros_like(node_amps)
    kept[:, members] = node_amps[:, members]
    p = float(np.sum(np.abs(kept) ** 2))
    probs = np.sum(np.abs(kept) ** 2, axis=0) / p
    outcome = float(np.dot(probs, basis.nodes))
    flat = (kept / np.sqrt(p)) @ basis.vectors.T
    dims = layout.dims
    rest = tuple(dims[i] for i in range(len(dims)) if i != mode_idx)
    shaped = flat.reshape(rest + (d,))
    return outcome, StateVector(layout, np.moveaxis(shaped, -1, mode_idx).reshape(-1))


def measure_position_binned(
    joint: StateVector, mode_idx: int, rng: np.random.Generator, bin_width: float
) -> tuple[float, StateVector]:
    """Projective position measurement at finite resolution ``bin_width``.

    Projects onto the span of the quadrature nodes inside the sampled bin
    (a rank > 1 projector), so the collapsed pointer stays a band-limited
    wavepacket that the truncated mode can keep evolving.  A single-node
    collapse would saturate the Fock space and cannot be translated
    faithfully, which is why mid-run measurements use this form.  Returns
    the Born-weighted position within the bin and the collapsed state.
    """
    if bin_width <= 0:
        raise SpectralError(f"bin_width must be positive, got {bin_width}")
    node_amps, basis = _node_amplitudes(joint, mode_idx)
    probs = np.sum(np.abs(node_amps) ** 2, axis=0)
    probs = probs / probs.sum()
    bins = np.floor(basis.nodes / bin_width).astype(int)
    labels = np.unique(bins)
    bin_probs = np.array([probs[bins == lab].sum() for lab in labels])
    lab = labels[int(rng.choice(len(labels), p=bin_probs / bin_probs.sum()))]
    return _collapse_to_bin(joint, mode_idx, node_amps, basis, np.flatnonzero(bins == lab))


@dataclass(frozen=True)
class Peak:
    eigenvalue: float
    weight: float
    count: int
    center_x: float
    sigma_x: float


@dataclass(frozen=True)
class SpectrumEstimate:
    """Sampled pointer positions plus the detected peaks and run diagnostics."""

    samples: tuple[float, ...]
    t_couple: float
    beta: float
    peaks: tuple[Peak, ...]
    resolution: float
    leakage: float
    valid: bool
    seed: int
    method: str
    notes: tuple[str, ...] = ()

    def eigenvalue_estimates(self) -> tuple[float, ...]:
        return tuple(p.eigenvalue for p in self.peaks)


def _cluster(samples: np.ndarray, gap: float) -> list[np.ndarray]:
    order = np.sort(samples)
    splits = np.flatnonzero(np.diff(order) > gap) + 1
    return np.split(order, splits)


def _make_peaks(samples: np.ndarray, beta: float, t: float, n_shots: int) -> tuple[Peak, ...]:
    gap = 3.0 / np.sqrt(2.0 * beta)
    peaks = []
    for cluster in _cluster(samples, gap):
        center = float(np.mean(cluster))
        peaks.append(
            Peak(
                eigenvalue=center / t,
                weight=len(cluster) / n_shots,
                count=len(cluster),
                center_x=center,
                sigma_x=float(np.std(cluster)),
            )
        )
    return tuple(peaks)


def _shot_rngs(seed: int, n_shots: int, stream: int) -> list[np.random.Generator]:
    root = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return [np.random.default_rng(child) for child in root.spawn(n_shots)]


def reliable_shift(cutoff: int, guard: float = DEFAULT_GUARD) -> float:
    """Largest pointer displacement the guard-banded mode can register."""
    return float(np.sqrt(2.0 * guard_start(cutoff, guard) + 1.0))


def estimate_spectrum(
    h: HamiltonianExpr,
    psi: StateVector,
    spec: PointerSpec,
    n_shots: int,
    seed: int,
    method: str = "exact",
    trotter_steps: int = 64,
    guard: float = DEFAULT_GUARD,
) -> SpectrumEstimate:
    """Sample the spectral decomposition of |psi> under H.

    Runs prepare -> couple -> measure with a fresh pointer per shot (shots
    are i.i.d., so the coupled state is computed once and sampled n_shots
    times).  Samples cluster into peaks separated by more than three pointer
    widths; each peak reports eigenvalue = center/t and weight = count/shots.
    """
    if n_shots < 1:
        raise SpectralError(f"n_shots must be >= 1, got {n_shots}")
    pointer = prepare_gaussian_pointer(spec.beta, spec.cutoff)
    joint = couple_pointer(psi, h, pointer, spec.t_couple, method, trotter_steps)
    mode_idx = len(psi.layout)
    node_amps, basis = _node_amplitudes(joint, mode_idx)
    probs = np.sum(np.abs(node_amps) ** 2, axis=0)
    probs = probs / probs.sum()

    n_nodes = len(probs)
    samples = np.array(
        [basis.nodes[int(rng.choice(n_nodes, p=probs))] for rng in _shot_rngs(seed, n_shots, 0)]
    )
    peaks = _make_peaks(samples, spec.beta, spec.t_couple, n_shots)

    leak = state_leakage(joint, guard)
    notes = []
    limit = reliable_shift(spec.cutoff, guard)
    if any(abs(p.center_x) > limit for p in peaks):
        notes.append(
            f"peak beyond the reliable quadrature range |x| <= {limit:.2f}; "
            "reduce t_couple or enlarge the pointer cutoff"
        )
    if leak > LEAKAGE_INVALID:
        notes.append(f"leakage {leak:.3e} exceeds {LEAKAGE_INVALID}")
    return SpectrumEstimate(
        samples=tuple(float(x) for x in samples),
        t_couple=spec.t_couple,
        beta=spec.beta,
        peaks=peaks,
        resolution=spec.resolution,
        leakage=leak,
        valid=not notes,
        seed=seed,
        method=method,
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class BranchCheck:
    """Mid-measurement diagnostics for one detected peak."""

    eigenvalue: float
    baseline_eigenvalue: float | None
    shift: float | None
    fidelity_before: float
    fidelity_after: float


@dataclass(frozen=True)
class RobustnessReport:
    baseline: SpectrumEstimate
    samples: tuple[float, ...]
    peaks: tuple[Peak, ...]
    branches: tuple[BranchCheck, ...]
    resolution: float
    leakage: float
    valid: bool
    seed: int


def _eigenspace_projectors(h_mat: np.ndarray, tol: float = 1e-9) -> list[tuple[float, np.ndarray]]:
    evals, evecs = np.linalg.eigh(h_mat)
    groups: list[tuple[float, np.ndarray]] = []
    start = 0
    for i in range(1, len(evals) + 1):
        if i == len(evals) or evals[i] - evals[start] > tol:
            vecs = evecs[:, start:i]
            groups.append((float(np.mean(evals[start:i])), vecs @ vecs.conj().T))
            start = i
    return groups


def _system_vector(node_amps: np.ndarray, k: int) -> np.ndarray:
    column = node_amps[:, k]
    return column / np.linalg.norm(column)


def robustness_midmeasure(
    h: HamiltonianExpr,
    psi: StateVector,
    spec: PointerSpec,
    n_shots: int,
    seed: int,
    method: str = "exact",
    trotter_steps: int = 64,
    guard: float = DEFAULT_GUARD,
) -> RobustnessReport:
    """Interrupt the coupling halfway with a projective pointer measurement.

    The mid-run measurement is the finite-resolution binned projection
    (bin width = one pointer sigma): a single-node collapse would leave the
    truncated mode unable to keep translating.  The final estimate still
    uses the total displacement over the total time: peak positions are
    preserved within the resolution (widths may change).  For each detected
    peak the report checks that the system stays in the same eigenspace
    across the second half.
    """
    baseline = estimate_spectrum(h, psi, spec, n_shots, seed, method, trotter_steps, guard)

    pointer = prepare_gaussian_pointer(spec.beta, spec.cutoff)
    half = spec.t_couple / 2.0
    joint1 = couple_pointer(psi, h, pointer, half, method, trotter_steps)
    mode_idx = len(psi.layout)
    amps1, basis = _node_amplitudes(joint1, mode_idx)
    probs1 = np.sum(np.abs(amps1) ** 2, axis=0)
    probs1 = probs1 / probs1.sum()
    n_nodes = len(probs1)

    bin_width = 1.0 / np.sqrt(2.0 * spec.beta)
    bins = np.floor(basis.nodes / bin_width).astype(int)
    labels = np.unique(bins)
    bin_probs = np.array([probs1[bins == lab].sum() for lab in labels])
    bin_probs = bin_probs / bin_probs.sum()

    coupling = _coupling_expr(h, mode_idx)
    second_half = PulseSequence((Pulse(coupling, half, 1),)) if method == "exact" else trotter(
        coupling, half, trotter_steps
    )

    branches_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def branch_for(bin_i: int):
        """(mid system amps, post node amps, post node probabilities) per bin."""
        if bin_i not in branches_cache:
            members = np.flatnonzero(bins == labels[bin_i])
            _, collapsed = _collapse_to_bin(joint1, mode_idx, amps1, basis, members)
            mid_amps, _ = _node_amplitudes(collapsed, mode_idx)
            after = run_sequence(second_half, collapsed).final_state
            amps2, _ = _node_amplitudes(after, mode_idx)
            p2 = np.sum(np.abs(amps2) ** 2, axis=0)
            branches_cache[bin_i] = (mid_amps, amps2, p2 / p2.sum())
        return branches_cache[bin_i]

    shot_records: list[tuple[int, int]] = []
    samples = np.empty(n_shots)
    for i, rng in enumerate(_shot_rngs(seed, n_shots, 1)):
        bin_i = int(rng.choice(len(labels), p=bin_probs))
        _, _, probs2 = branch_for(bin_i)
        k2 = int(rng.choice(n_nodes, p=probs2))
        shot_records.append((bin_i, k2))
        samples[i] = basis.nodes[k2]

    peaks = _make_peaks(samples, spec.beta, spec.t_couple, n_shots)

    projectors = _eigenspace_projectors(build(h, psi.layout))
    branches = []
    for peak in peaks:
        rep = min(
            range(n_shots), key=lambda i: abs(basis.nodes[shot_records[i][1]] - peak.center_x)
        )
        bin_i, k2 = shot_records[rep]
        mid_amps, amps2, _ = branch_for(bin_i)
        v1 = _system_vector(mid_amps, int(np.argmax(np.sum(np.abs(mid_amps) ** 2, axis=0))))
        v2 = _system_vector(amps2, k2)
        _, proj = min(projectors, key=lambda g: abs(g[0] - peak.eigenvalue))
        base = min(
            (b for b in baseline.peaks),
            key=lambda b: abs(b.eigenvalue - peak.eigenvalue),
            default=None,
        )
        branches.append(
            BranchCheck(
                eigenvalue=peak.eigenvalue,
                baseline_eigenvalue=None if base is None else base.eigenvalue,
                shift=None if base is None else abs(peak.eigenvalue - base.eigenvalue),
                fidelity_before=float(np.vdot(v1, proj @ v1).real),
                fidelity_after=float(np.vdot(v2, proj @ v2).real),
            )
        )

    leak = state_leakage(joint1, guard)
    return RobustnessReport(
        baseline=baseline,
        samples=tuple(float(x) for x in samples),
        peaks=peaks,
        branches=tuple(branches),
        resolution=spec.resolution,
        leakage=leak,
        valid=leak <= LEAKAGE_INVALID,
        seed=seed,
    )


def spectrum_rows(est: SpectrumEstimate) -> list[tuple[int, float, float]]:
    """CSV rows (shot, x, eigenvalue_estimate)."""
    return [(i, x, x / est.t_couple) for i, x in enumerate(est.samples)]


def estimate_to_dict(est: SpectrumEstimate) -> dict:
    return {
        "t_couple": est.t_couple,
        "beta": est.beta,
        "resolution": est.resolution,
        "leakage": est.leakage,
        "valid": est.valid,
        "seed": est.seed,
        "method": est.method,
        "notes": list(est.notes),
        "peaks": [
            {
                "eigenvalue": p.eigenvalue,
                "weight": p.weight,
                "count": p.count,
                "center_x": p.center_x,
                "sigma_x": p.sigma_x,
            }
            for p in est.peaks
        ],
    }
