"""Unitary evolution: exact exponentials, pulse sequences, Trotterization,
the single-step continuous-variable Fourier transform, and leakage checks.

Exponentials use eigendecomposition of the (Hermitian) generator, which is
exact to machine precision at the dimensions this package targets.  That
keeps exponentiation error out of the pulse-compiler error-scaling
experiments, which must isolate the commutator-approximation error itself.
Decompositions are cached per (generator id, layout).

Sign convention: a pulse of generator H with duration t and sign s applies
``exp(-i * s * H * t)``.  Global phases are never asserted anywhere; state
comparisons go through fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hilbert import DEFAULT_GUARD, RegisterLayout, StateVector, interior_mask
from .operators import HamiltonianExpr, build, generator_id, parse_expr, term

HERMITICITY_TOL = 1e-10

LEAKAGE_INVALID = 1e-3


class EvolutionError(ValueError):
    pass


class UnknownGeneratorError(EvolutionError):
    """A pulse referenced a generator id that nothing can resolve."""


@dataclass(frozen=True)
class Pulse:
    """One timed exponential of a named or inline generator."""

    generator: str | HamiltonianExpr
    duration: float
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise EvolutionError(f"pulse sign must be +1 or -1, got {self.sign}")
        d = float(self.duration)
        if not np.isfinite(d) or d < 0:
            raise EvolutionError(f"pulse duration must be finite and >= 0, got {d}")
        object.__setattr__(self, "duration", d)

    @property
    def generator_id(self) -> str:
        if isinstance(self.generator, str):
            return self.generator
        return generator_id(self.generator)


@dataclass(frozen=True)
class PulseSequence:
    """Ordered pulses, executed left to right; empty sequence is the identity."""

    pulses: tuple[Pulse, ...] = ()
    metadata: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.pulses)

    def __add__(self, other: PulseSequence) -> PulseSequence:
        return PulseSequence(self.pulses + other.pulses, self.metadata + other.metadata)

    def to_text(self) -> str:
        """Line-oriented form: one ``<generator_id> <sign> <duration>`` per pulse.

        Durations print via repr, so the round trip is bit-exact.
        """
        lines = [f"# {note}" for note in self.metadata]
        lines += [f"{p.generator_id} {p.sign:+d} {p.duration!r}" for p in self.pulses]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str) -> PulseSequence:
        pulses = []
        metadata = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                metadata.append(line[1:].strip())
                continue
            fields = line.split()
            if len(fields) != 3:
                raise EvolutionError(f"line {lineno}: expected 'id sign duration', got {raw!r}")
            gid, sign_text, dur_text = fields
            if sign_text not in ("+1", "-1"):
                raise EvolutionError(f"line {lineno}: sign must be +1 or -1, got {sign_text!r}")
            pulses.append(Pulse(gid, float(dur_text), int(sign_text)))
        return cls(tuple(pulses), tuple(metadata))


@dataclass(frozen=True)
class EvolutionReport:
    """Final state plus the diagnostics every run must carry."""

    final_state: StateVector
    leakage: float
    norm_drift: float

    @property
    def valid(self) -> bool:
        return self.leakage <= LEAKAGE_INVALID


def _check_hermitian(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise EvolutionError(f"generator must be square, got shape {h.shape}")
    if np.max(np.abs(h - h.conj().T)) > HERMITICITY_TOL:
        raise EvolutionError("generator is not Hermitian within 1e-10")
    return h


# (generator id, layout signature) -> (eigenvalues, eigenvectors); reads are
# concurrency-safe and entries are only ever assigned once.
_EIG_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _eig(h: np.ndarray, cache_key: tuple | None = None) -> tuple[np.ndarray, np.ndarray]:
    if cache_key is not None and cache_key in _EIG_CACHE:
        return _EIG_CACHE[cache_key]
    w, v = np.linalg.eigh(_check_hermitian(h))
    if cache_key is not None:
        _EIG_CACHE[cache_key] = (w, v)
    return w, v


def _apply(w: np.ndarray, v: np.ndarray, t: float, amps: np.ndarray) -> np.ndarray:
    return v @ (np.exp(-1j * w * t) * (v.conj().T @ amps))


def expm_apply(h: np.ndarray, t: float, state: StateVector) -> StateVector:
    """exp(-i H t)|state> for Hermitian H, exact via eigendecomposition."""
    h = _check_hermitian(h)
    if h.shape[0] != state.layout.total_dim:
        raise EvolutionError(f"generator dim {h.shape[0]} != state dim {state.layout.total_dim}")
    w, v = np.linalg.eigh(h)
    return StateVector(state.layout, _apply(w, v, t, state.amplitudes))


def expm_unitary(h: np.ndarray, t: float) -> np.ndarray:
    """Dense exp(-i H t); the oracle used by error-scaling tests."""
    w, v = np.linalg.eigh(_check_hermitian(h))
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def _resolve(pulse: Pulse, layout: RegisterLayout, generators) -> tuple[str, np.ndarray | None]:
    gid = pulse.generator_id
    if generators is not None:
        try:
            return gid, generators[gid]
        except KeyError:
            pass
    if isinstance(pulse.generator, HamiltonianExpr):
        return gid, None  # build from the inline expression
    try:
        parse_expr(gid)
        return gid, None
    except Exception:
        raise UnknownGeneratorError(f"cannot resolve generator id {gid!r}") from None


def _pulse_eig(pulse: Pulse, layout: RegisterLayout, generators) -> tuple[np.ndarray, np.ndarray]:
    gid, mat = _resolve(pulse, layout, generators)
    key = (gid, layout.signature())
    if key in _EIG_CACHE:
        return _EIG_CACHE[key]
    if mat is None:
        expr = pulse.generator if isinstance(pulse.generator, HamiltonianExpr) else parse_expr(gid)
        mat = build(expr, layout)
    return _eig(mat, cache_key=key)


def run_sequence(
    seq: PulseSequence,
    state: StateVector,
    generators=None,
    guard: float = DEFAULT_GUARD,
) -> EvolutionReport:
    """Execute a pulse sequence and report leakage and norm drift.

    ``generators`` is an optional mapping from generator id to a prebuilt
    matrix (a synthesis registry exposes one).  Ids absent from the mapping
    fall back to being parsed as inline Hamiltonian text.
    """
    amps = state.amplitudes
    for pulse in seq.pulses:
        if pulse.duration == 0.0:
            continue
        w, v = _pulse_eig(pulse, state.layout, generators)
        amps = _apply(w, v, pulse.sign * pulse.duration, amps)
    final = StateVector(state.layout, amps)
    return EvolutionReport(
        final_state=final,
        leakage=leakage(final, guard),
        norm_drift=abs(float(np.linalg.norm(amps)) - 1.0),
    )


def sequence_unitary(seq: PulseSequence, layout: RegisterLayout, generators=None) -> np.ndarray:
    """Dense unitary realized by a sequence (test and diagnostics helper)."""
    u = np.eye(layout.total_dim, dtype=complex)
    for pulse in seq.pulses:
        if pulse.duration == 0.0:
            continue
        w, v = _pulse_eig(pulse, layout, generators)
        u = (v * np.exp(-1j * w * pulse.sign * pulse.duration)) @ (v.conj().T @ u)
    return u


def trotter(expr: HamiltonianExpr, t: float, n_steps: int) -> PulseSequence:
    """First-order Lie-Trotter sequence for exp(-i build(expr) t).

    Each of the ``n_steps`` rounds applies every term for t/n_steps; the
    approximation error is O(t^2 / n_steps) and vanishes for commuting terms.
    """
    if n_steps < 1:
        raise EvolutionError(f"n_steps must be >= 1, got {n_steps}")
    dt = abs(t) / n_steps
    sign = 1 if t >= 0 else -1
    step = tuple(
        Pulse(HamiltonianExpr((trm,)), dt, sign) for trm in expr.terms
    )
    return PulseSequence(step * n_steps, (f"trotter n_steps={n_steps} t={t!r}",))


def cv_qft(state: StateVector, mode_idx: int) -> StateVector:
    """Quarter rotation of one mode in phase space: X -> P, P -> -X.

    Implemented as exp(-i H t) with H = (X^2 + P^2)/2 = n + 1/2 and t = pi/2,
    the generator normalization under [X, P] = i for which a quarter rotation
    takes exactly a quarter period.  Applying it four times is the identity
    up to global phase.
    """
    if not state.layout.is_qumode(mode_idx):
        raise EvolutionError(f"subsystem {mode_idx} is not a qumode")
    rot = term(0.5, (mode_idx, "X", 2)) + term(0.5, (mode_idx, "P", 2))
    key = (f"cvqft@{mode_idx}", state.layout.signature())
    if key in _EIG_CACHE:
        w, v = _EIG_CACHE[key]
    else:
        w, v = _eig(build(rot, state.layout), cache_key=key)
    return StateVector(state.layout, _apply(w, v, np.pi / 2, state.amplitudes))


def leakage(state: StateVector, guard: float = DEFAULT_GUARD) -> float:
    """Probability of any qumode occupying its guard-band Fock levels."""
    inside = interior_mask(state.layout, guard)
    kept = float(np.sum(np.abs(state.amplitudes[inside]) ** 2))
    return max(0.0, 1.0 - kept)
