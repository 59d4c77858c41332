"""The commutator compiler: group-commutator pulse blocks, derivation rules,
target synthesis, the spin-reset trick, and numerical Lie-algebra closure.

The compiled product for a generator pair (A, B) with step s is

    exp(+iBs) exp(+iAs) exp(-iBs) exp(-iAs)  =  exp(s^2 [A, B]) + O(s^3)
                                             =  exp(-i (i[A,B]) s^2) + O(s^3),

i.e. one block turns on the effective Hermitian generator i[A, B] for an
effective time s^2.  Directions of effective generators are taken from the
derivation-rule registry; their scale and sign are always *measured*
numerically on the guard-banded interior block, never assumed, because the
constants are convention dependent.

Scale measurement and rule residuals use the Hilbert-Schmidt inner product
restricted to the interior block (truncation corrupts the top Fock corner
by construction).  Synthesis *error*, in contrast, is measured with the
plain spectral norm on the whole truncated space: it quantifies what the
compiled sequence actually does in this simulator.

The spin-reset trick: with a spin held in |0>, a generator sz(x)M acts on
the modes as M alone.  Bare X and P (and mode-only targets such as X1*X2)
are available through it; the registry tracks these as "reset-effective"
generators and aliases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .evolution import Pulse, PulseSequence, expm_unitary, sequence_unitary
from .hilbert import (
    DEFAULT_GUARD,
    RegisterLayout,
    StateVector,
    compress_to_interior,
    interior_mask,
)
from .operators import (
    HamiltonianExpr,
    HamiltonianTerm,
    build,
    commutator,
    generator_id,
    parse_expr,
    primitive_set,
    term,
)

RULE_RESIDUAL_TOL = 1e-8

# Candidate directions whose novel component is below this fraction of their
# interior norm are treated as already contained in the closure basis.
NEW_DIRECTION_TOL = 1e-6


class SynthesisError(ValueError):
    pass


class DerivationError(SynthesisError):
    """A candidate identity failed its interior-block residual check."""


@dataclass(frozen=True)
class DerivationRule:
    """Measured identity i[A, B] = scale * direction (on the interior block)."""

    a_id: str
    b_id: str
    direction: HamiltonianExpr
    direction_id: str
    scale: float
    residual: float


@dataclass(frozen=True)
class ResetAlias:
    """Mode-only target realized by a sz(x)target rule plus a spin held in |0>."""

    target_id: str
    direction_id: str
    spin: int


@dataclass(frozen=True)
class GeneratorRecord:
    generator_id: str
    expr: HamiltonianExpr
    drivable: bool
    origin: str  # "primitive" | "reset-effective" | "derived"


@dataclass(frozen=True)
class DerivationNode:
    """Provenance tree: how a generator is reached from drivable inputs."""

    generator_id: str
    rule: DerivationRule | None
    children: tuple[DerivationNode, ...] = ()


@dataclass(frozen=True)
class SynthPlan:
    target: HamiltonianExpr
    target_id: str
    angle: float
    sequence: PulseSequence
    n_blocks: int
    block_step: float
    predicted_error: float
    derivation: DerivationNode
    reset_spin_required: int | None = None


class SynthesisRegistry:
    """Named generators, their matrices, and the derivation rules over them.

    Generators are keyed by the compact canonical text of their Hamiltonian,
    so ids are stable, serializable, and parseable.  Matrices and rules are
    built against one fixed layout.
    """

    def __init__(self, layout: RegisterLayout, guard: float = DEFAULT_GUARD):
        self.layout = layout
        self.guard = guard
        self._records: dict[str, GeneratorRecord] = {}
        self._matrices: dict[str, np.ndarray] = {}
        self._rules: dict[str, DerivationRule] = {}
        self._aliases: dict[str, ResetAlias] = {}

    # -- generators ---------------------------------------------------------

    def register(self, expr: HamiltonianExpr, *, drivable: bool, origin: str) -> str:
        gid = generator_id(expr)
        if gid not in self._records:
            self._records[gid] = GeneratorRecord(gid, expr, drivable, origin)
            self._matrices[gid] = build(expr, self.layout)
        return gid

    def ids(self) -> tuple[str, ...]:
        return tuple(self._records)

    def record(self, gid: str) -> GeneratorRecord:
        if gid not in self._records:
            raise SynthesisError(f"unknown generator id {gid!r}")
        return self._records[gid]

    def matrix(self, gid: str) -> np.ndarray:
        self.record(gid)
        return self._matrices[gid]

    @property
    def matrices(self) -> dict[str, np.ndarray]:
        """Mapping view consumed by evolution.run_sequence / sequence_unitary."""
        return self._matrices

    def is_drivable(self, gid: str) -> bool:
        return self.record(gid).drivable

    # -- rules and aliases ---------------------------------------------------

    def add_rule(self, rule: DerivationRule) -> None:
        self._rules.setdefault(rule.direction_id, rule)

    def rule_for(self, target_id: str) -> DerivationRule | None:
        return self._rules.get(target_id)

    def rules(self) -> tuple[DerivationRule, ...]:
        return tuple(self._rules.values())

    def add_reset_alias(self, rule: DerivationRule, spin: int) -> str:
        """Expose the mode-only version of a sz(x)modes rule (spin held in |0>)."""
        effective = _strip_spin_factor(rule.direction, spin)
        target_id = self.register(effective, drivable=False, origin="derived")
        self._aliases.setdefault(target_id, ResetAlias(target_id, rule.direction_id, spin))
        return target_id

    def alias_for(self, target_id: str) -> ResetAlias | None:
        return self._aliases.get(target_id)

    def derivation_tree(self, gid: str) -> DerivationNode:
        rule = self._rules.get(gid)
        if rule is None:
            return DerivationNode(gid, None)
        return DerivationNode(gid, rule, (self.derivation_tree(rule.a_id), self.derivation_tree(rule.b_id)))


def _strip_spin_factor(expr: HamiltonianExpr, spin: int) -> HamiltonianExpr:
    if len(expr.terms) != 1:
        raise SynthesisError("reset alias needs a single-term direction")
    t = expr.terms[0]
    kept = tuple((i, op) for i, op in t.factors if i != spin)
    dropped = [op.tag for i, op in t.factors if i == spin]
    if dropped != ["sz"] or not kept:
        raise SynthesisError(f"direction {generator_id(expr)!r} is not sz@{spin} times mode operators")
    return HamiltonianExpr((HamiltonianTerm(t.coefficient, kept),))


def _hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    return complex(np.vdot(a, b))


def derive_rule(
    a_id: str,
    b_id: str,
    candidate_direction: HamiltonianExpr,
    registry: SynthesisRegistry,
    *,
    register: bool = True,
) -> DerivationRule:
    """Measure i[A, B] against a candidate direction on the interior block.

    Returns the accepted rule (scale and residual measured numerically) or
    raises DerivationError when the projection residual exceeds 1e-8, which
    signals a wrong identity.
    """
    a = registry.matrix(a_id)
    b = registry.matrix(b_id)
    k = 1j * commutator(a, b)
    layout, guard = registry.layout, registry.guard
    k_int = compress_to_interior(k, layout, guard)
    g_int = compress_to_interior(build(candidate_direction, layout), layout, guard)
    g_norm2 = _hs_inner(g_int, g_int).real
    if g_norm2 <= 0.0:
        raise SynthesisError("candidate direction vanishes on the interior block")
    scale_c = _hs_inner(g_int, k_int) / g_norm2
    if abs(scale_c.imag) > 1e-8 * max(1.0, abs(scale_c)):
        raise DerivationError(f"projection of i[A,B] onto candidate is not real: {scale_c}")
    scale = float(scale_c.real)
    denom = abs(scale) * np.sqrt(g_norm2)
    if denom == 0.0:
        raise DerivationError("i[A,B] has no component along the candidate direction")
    residual = float(np.linalg.norm(k_int - scale * g_int) / denom)
    if residual > RULE_RESIDUAL_TOL:
        raise DerivationError(
            f"candidate {generator_id(candidate_direction)!r} rejected: "
            f"interior residual {residual:.3e} > {RULE_RESIDUAL_TOL:g}"
        )
    rule = DerivationRule(a_id, b_id, candidate_direction, generator_id(candidate_direction), scale, residual)
    if register:
        registry.register(candidate_direction, drivable=True, origin="derived")
        registry.add_rule(rule)
    return rule


def _block_pulses(a_id: str, b_id: str, s: float) -> tuple[Pulse, ...]:
    # Applied left to right this realizes e^{+iBs} e^{+iAs} e^{-iBs} e^{-iAs}.
    return (Pulse(a_id, s, 1), Pulse(b_id, s, 1), Pulse(a_id, s, -1), Pulse(b_id, s, -1))


def group_commutator(a_id: str, b_id: str, s: float, registry: SynthesisRegistry) -> PulseSequence:
    """Four-pulse block approximating exp(-i (i[A,B]) s^2) to third order in s."""
    if s <= 0:
        raise SynthesisError(f"block step must be > 0, got {s}")
    registry.record(a_id)
    registry.record(b_id)
    return PulseSequence(_block_pulses(a_id, b_id, s), (f"group-commutator A={a_id} B={b_id} s={s!r}",))


def _third_order_scale(a: np.ndarray, b: np.ndarray) -> float:
    c = commutator(a, b)
    return 0.5 * (np.linalg.norm(commutator(a, c), 2) + np.linalg.norm(commutator(b, c), 2))


def synthesize(
    target: HamiltonianExpr | str,
    angle: float,
    n_blocks: int,
    registry: SynthesisRegistry,
) -> SynthPlan:
    """Compile exp(-i build(target) angle) into group-commutator blocks.

    The target must have a registered derivation rule (or a reset alias).
    Each of the ``n_blocks`` blocks pulses the rule's two input generators
    with step s = sqrt(|angle| / (n_blocks |scale|)); a negative effective
    angle is realized by swapping the pulse order of A and B.  The measured
    error of the plan decreases like n_blocks^(-1/2).
    """
    if n_blocks < 1:
        raise SynthesisError(f"n_blocks must be >= 1, got {n_blocks}")
    target_expr = parse_expr(target) if isinstance(target, str) else target
    tid = generator_id(target_expr)

    reset_spin_required = None
    rule = registry.rule_for(tid)
    if rule is None:
        alias = registry.alias_for(tid)
        if alias is not None:
            rule = registry.rule_for(alias.direction_id)
            reset_spin_required = alias.spin
    if rule is None:
        raise SynthesisError(
            f"target {tid!r} has no derivation rule in the registry; "
            "derive one from registered generators first"
        )

    angle = float(angle)
    swap = rule.scale * angle < 0
    a_id, b_id = (rule.b_id, rule.a_id) if swap else (rule.a_id, rule.b_id)
    for gid in (a_id, b_id):
        if not registry.is_drivable(gid):
            raise SynthesisError(f"rule input {gid!r} is not drivable")
    s = float(np.sqrt(abs(angle) / (n_blocks * abs(rule.scale)))) if angle != 0.0 else 0.0

    pulses: tuple[Pulse, ...] = ()
    if s > 0.0:
        pulses = _block_pulses(a_id, b_id, s) * n_blocks
    meta = (
        f"synthesize target={tid} angle={angle!r} n_blocks={n_blocks} s={s!r}"
        + (f" reset_spin={reset_spin_required}" if reset_spin_required is not None else ""),
    )
    predicted = 0.0
    if s > 0.0:
        c3 = _third_order_scale(registry.matrix(a_id), registry.matrix(b_id))
        predicted = 1.5 * n_blocks * s**3 * c3
    return SynthPlan(
        target=target_expr,
        target_id=tid,
        angle=angle,
        sequence=PulseSequence(pulses, meta),
        n_blocks=n_blocks,
        block_step=s,
        predicted_error=predicted,
        derivation=registry.derivation_tree(rule.direction_id),
        reset_spin_required=reset_spin_required,
    )


def _spin_zero_block(u: np.ndarray, layout: RegisterLayout, spin: int) -> np.ndarray:
    occ = np.unravel_index(np.arange(layout.total_dim), layout.dims)[spin]
    sel = np.flatnonzero(occ == 0)
    return u[np.ix_(sel, sel)]


def measure_plan_error(plan: SynthPlan, registry: SynthesisRegistry) -> float:
    """Spectral-norm distance between the compiled sequence and its target."""
    layout = registry.layout
    u = sequence_unitary(plan.sequence, layout, registry.matrices)
    u_target = expm_unitary(build(plan.target, layout), plan.angle)
    if plan.reset_spin_required is not None:
        u = _spin_zero_block(u, layout, plan.reset_spin_required)
        u_target = _spin_zero_block(u_target, layout, plan.reset_spin_required)
    return float(np.linalg.norm(u - u_target, 2))


def standard_registry(layout: RegisterLayout, guard: float = DEFAULT_GUARD) -> SynthesisRegistry:
    """Registry pre-loaded with the primitive sets and the derivation chain.

    Registers, for every (spin, mode) pair: the primitives sxX, szX, szP;
    reset-effective X and P on each mode; and the derived chain
    sx, sz, sy, the identity direction, sy X^2, sz X^3.  With a second spin
    sharing a mode it derives sz^1 sz^2; with a second mode sharing a spin,
    sy X_1 and sz X_1 X_2 (aliased to the mode-only X_1 X_2).
    """
    reg = SynthesisRegistry(layout, guard)
    spins = [i for i in range(len(layout)) if layout.is_qubit(i)]
    modes = [i for i in range(len(layout)) if layout.is_qumode(i)]
    if not spins or not modes:
        raise SynthesisError("standard registry needs at least one qubit and one qumode")

    for s in spins:
        for m in modes:
            for gen in primitive_set(layout, s, m).members:
                reg.register(gen.expr, drivable=True, origin="primitive")
    for m in modes:
        reg.register(term(1.0, (m, "X")), drivable=True, origin="reset-effective")
        reg.register(term(1.0, (m, "P")), drivable=True, origin="reset-effective")

    def gid(expr):
        return generator_id(expr)

    for s in spins:
        for m in modes:
            p_m = gid(term(1.0, (m, "P")))
            sx_x = gid(term(1.0, (s, "sx"), (m, "X")))
            sz_x = gid(term(1.0, (s, "sz"), (m, "X")))
            sz_p = gid(term(1.0, (s, "sz"), (m, "P")))
            derive_rule(p_m, sx_x, term(1.0, (s, "sx")), reg)
            derive_rule(p_m, sz_x, term(1.0, (s, "sz")), reg)
            derive_rule(gid(term(1.0, (s, "sz"))), gid(term(1.0, (s, "sx"))), term(1.0, (s, "sy")), reg)
            derive_rule(sz_p, sz_x, term(1.0, (0, "id")), reg)
            derive_rule(sz_x, sx_x, term(1.0, (s, "sy"), (m, "X", 2)), reg)
            derive_rule(gid(term(1.0, (s, "sy"), (m, "X", 2))), sx_x, term(1.0, (s, "sz"), (m, "X", 3)), reg)

    first = spins[0]
    shared = modes[0]
    for s2 in spins[1:]:
        derive_rule(
            gid(term(1.0, (first, "sz"), (shared, "P"))),
            gid(term(1.0, (s2, "sz"), (shared, "X"))),
            term(1.0, (first, "sz"), (s2, "sz")),
            reg,
        )
    for m2 in modes[1:]:
        m1 = modes[0]
        derive_rule(
            gid(term(1.0, (first, "sz"))),
            gid(term(1.0, (first, "sx"), (m1, "X"))),
            term(1.0, (first, "sy"), (m1, "X")),
            reg,
        )
        rule = derive_rule(
            gid(term(1.0, (first, "sy"), (m1, "X"))),
            gid(term(1.0, (first, "sx"), (m2, "X"))),
            term(1.0, (first, "sz"), (m1, "X"), (m2, "X")),
            reg,
        )
        reg.add_reset_alias(rule, first)
    return reg


# ---------------------------------------------------------------------------
# spin reset and oscillator-only drives


def reset_spin(state: StateVector, spin_idx: int, rng: np.random.Generator) -> StateVector:
    """Projective sigma_z measurement followed by a flip on outcome |1>.

    Leaves the spin deterministically in |0>, the rest of the register
    collapsed onto the measured branch, renormalized (a documented collapse
    point).  Idempotent once the spin is in |0>.
    """
    if not state.layout.is_qubit(spin_idx):
        raise SynthesisError(f"subsystem {spin_idx} is not a qubit")
    n = len(state.layout)
    psi = np.moveaxis(state.tensor(), spin_idx, 0).reshape(2, -1).copy()
    p1 = float(np.sum(np.abs(psi[1]) ** 2))
    outcome = 1 if rng.random() < p1 else 0
    p = p1 if outcome == 1 else 1.0 - p1
    branch = psi[outcome] / np.sqrt(p)
    psi[0] = branch
    psi[1] = 0.0
    dims = state.layout.dims
    shaped = psi.reshape((2,) + tuple(dims[i] for i in range(n) if i != spin_idx))
    return StateVector(state.layout, np.moveaxis(shaped, 0, spin_idx).reshape(-1))


def oscillator_drive(
    state: StateVector,
    mode_idx: int,
    which: str,
    t: float,
    spin_idx: int,
    rng: np.random.Generator,
    n_steps: int = 64,
) -> StateVector:
    """Drive one mode under bare X or P via sz-coupled pulses and spin resets.

    Each of the ``n_steps`` slices re-prepares the spin in |0> and applies
    exp(-i sz(x)W dt) with W in {X, P}; on the |0> branch that is exactly
    exp(-i W dt) on the mode, which is how coherent displacements are built
    from the primitive set.
    """
    if which not in ("X", "P"):
        raise SynthesisError(f"drive axis must be 'X' or 'P', got {which!r}")
    if not state.layout.is_qumode(mode_idx):
        raise SynthesisError(f"subsystem {mode_idx} is not a qumode")
    if n_steps < 1:
        raise SynthesisError(f"n_steps must be >= 1, got {n_steps}")
    if t == 0.0:
        return state
    gen = term(1.0, (spin_idx, "sz"), (mode_idx, which))
    w, v = np.linalg.eigh(build(gen, state.layout))
    dt = t / n_steps
    for _ in range(n_steps):
        state = reset_spin(state, spin_idx, rng)
        state = StateVector(state.layout, v @ (np.exp(-1j * w * dt) * (v.conj().T @ state.amplitudes)))
    return state


# ---------------------------------------------------------------------------
# numerical Lie-algebra closure


@dataclass(frozen=True)
class ClosureDirection:
    """One orthonormal direction of the generated algebra (interior block)."""

    vector: np.ndarray  # flattened, unit HS norm on the interior block
    degree: int
    source: str


@dataclass(frozen=True)
class ClosureReport:
    layout: RegisterLayout
    guard: float
    seed_ids: tuple[str, ...]
    directions: tuple[ClosureDirection, ...]
    depth_reached: int
    notes: tuple[str, ...] = ()

    def membership(self, query: HamiltonianExpr | np.ndarray) -> float:
        """Relative interior-block residual of a direction against the basis."""
        mat = query if isinstance(query, np.ndarray) else build(query, self.layout)
        vec = compress_to_interior(mat, self.layout, self.guard).ravel()
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise SynthesisError("query direction vanishes on the interior block")
        vec = vec / norm
        for _ in range(2):
            for d in self.directions:
                vec = vec - np.vdot(d.vector, vec) * d.vector
        return float(np.linalg.norm(vec))


def _orthonormal_residual(vec: np.ndarray, basis: list[np.ndarray]) -> tuple[np.ndarray, float]:
    for _ in range(2):
        for b in basis:
            vec = vec - np.vdot(b, vec) * b
    return vec, float(np.linalg.norm(vec))


def close_algebra(
    seed_ids: list[str] | tuple[str, ...],
    max_new: int,
    degree_cap: int,
    registry: SynthesisRegistry,
    *,
    include_reset_effectives: bool = True,
) -> ClosureReport:
    """Breadth-first commutator closure of the seed generators.

    Seeds sit at degree 1; a direction found as i[a, b] has degree
    max(deg a, deg b) + 1.  Exploration stops after ``max_new`` accepted
    directions beyond the seeds or once ``degree_cap`` is exhausted, and is
    strictly ordered, so the output is deterministic.

    With ``include_reset_effectives`` (default), every seed of the form
    sz(x)M with M acting on modes also contributes M itself as a degree-1
    seed: the repreparation of the spin in |0> makes those mode-only
    generators available, and without them the bare one-spin Paulis are
    provably outside the commutator closure of the interaction set.
    """
    layout, guard = registry.layout, registry.guard
    notes: list[str] = []

    seeds: list[tuple[str, HamiltonianExpr]] = []
    for gid in seed_ids:
        seeds.append((gid, registry.record(gid).expr))
    if include_reset_effectives:
        for gid, expr in list(seeds):
            if len(expr.terms) != 1:
                continue
            t = expr.terms[0]
            spin_factors = [i for i, op in t.factors if op.tag == "sz"]
            mode_factors = [(i, op) for i, op in t.factors if layout.is_qumode(i)]
            if len(spin_factors) == 1 and len(mode_factors) == len(t.factors) - 1 and mode_factors:
                eff = HamiltonianExpr((HamiltonianTerm(t.coefficient, tuple(mode_factors)),))
                eff_id = registry.register(eff, drivable=True, origin="reset-effective")
                if eff_id not in [s[0] for s in seeds]:
                    seeds.append((eff_id, eff))
                    notes.append(f"reset-effective seed {eff_id} from {gid}")

    mask = interior_mask(layout, guard)
    idx = np.ix_(mask, mask)

    full: list[np.ndarray] = []
    degrees: list[int] = []
    basis: list[np.ndarray] = []
    directions: list[ClosureDirection] = []

    def try_add(mat: np.ndarray, degree: int, source: str) -> bool:
        comp = mat[idx].ravel()
        norm = np.linalg.norm(comp)
        if norm < 1e-12:
            return False
        vec, resid = _orthonormal_residual(comp / norm, basis)
        if resid <= NEW_DIRECTION_TOL:
            return False
        vec = vec / resid
        basis.append(vec)
        directions.append(ClosureDirection(vec, degree, source))
        full.append(mat / norm)
        degrees.append(degree)
        return True

    for gid, expr in seeds:
        try_add(registry.matrix(gid), 1, f"seed {gid}")

    depth = 1
    added = 0
    done = False
    for degree in range(2, degree_cap + 1):
        prev = [i for i, d in enumerate(degrees) if d == degree - 1]
        if not prev or done:
            break
        n_before = len(full)
        for j in prev:
            for i in range(n_before):
                if i == j or (degrees[i] == degree - 1 and i > j):
                    continue
                cand = 1j * commutator(full[i], full[j])
                if try_add(cand, degree, f"i[{i},{j}]"):
                    depth = degree
                    added += 1
                    if added >= max_new:
                        done = True
                        break
            if done:
                break

    return ClosureReport(
        layout=layout,
        guard=guard,
        seed_ids=tuple(s[0] for s in seeds),
        directions=tuple(directions),
        depth_reached=depth,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# JSON serialization


def _node_to_dict(node: DerivationNode) -> dict:
    out: dict = {"generator": node.generator_id}
    if node.rule is not None:
        out["rule"] = {
            "a": node.rule.a_id,
            "b": node.rule.b_id,
            "scale": node.rule.scale,
            "residual": node.rule.residual,
        }
        out["inputs"] = [_node_to_dict(c) for c in node.children]
    return out


def plan_to_json(plan: SynthPlan) -> str:
    doc = {
        "target": plan.target_id,
        "angle": plan.angle,
        "n_blocks": plan.n_blocks,
        "block_step": plan.block_step,
        "predicted_error": plan.predicted_error,
        "reset_spin_required": plan.reset_spin_required,
        "n_pulses": len(plan.sequence),
        "derivation": _node_to_dict(plan.derivation),
        "sequence": plan.sequence.to_text(),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def closure_to_json(report: ClosureReport, probes: dict[str, float] | None = None) -> str:
    doc = {
        "seed_ids": list(report.seed_ids),
        "guard": report.guard,
        "depth_reached": report.depth_reached,
        "n_directions": len(report.directions),
        "directions": [{"degree": d.degree, "source": d.source} for d in report.directions],
        "notes": list(report.notes),
    }
    if probes is not None:
        doc["probes"] = probes
    return json.dumps(doc, indent=2, sort_keys=True)
