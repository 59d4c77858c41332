"""Local operators and the Hamiltonian-expression algebra.

Quadrature convention (normative for the whole package):

    X = (a + a†)/√2,   P = (a - a†)/(i√2),   so  [X, P] = i.

On a Fock space truncated at ``cutoff`` the identity ``[X, P] = i·I``
holds exactly on levels ``0 .. cutoff-2``; the ``(cutoff-1, cutoff-1)``
corner is corrupted by construction.  All commutator identities are
therefore asserted on the guard-banded interior block only.

Hamiltonians are real-weighted sums of tensor products of local Hermitian
operators, one factor per subsystem at most.  They have a canonical text
form, e.g. ``1.5 * sz@0 * X@1 + 0.5 * X@1^2``; see `parse_expr` for the
grammar.  The compact (space-free) rendering of an expression doubles as
the stable generator id used by pulse sequences and the synthesis registry.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .hilbert import RegisterLayout, embed

QUBIT_TAGS = ("sx", "sy", "sz")
QUMODE_TAGS = ("X", "P", "a", "adag")
HERMITIAN_TAGS = ("sx", "sy", "sz", "id", "X", "P")
ALL_TAGS = QUBIT_TAGS + QUMODE_TAGS + ("id",)


class OperatorError(ValueError):
    """Raised for ill-formed operators or Hamiltonian expressions."""


class ExprSyntaxError(OperatorError):
    """Hamiltonian text that does not parse; carries a 1-based column."""

    def __init__(self, message: str, column: int):
        super().__init__(f"{message} (column {column})")
        self.column = column


# ---------------------------------------------------------------------------
# local operator matrices


def fock_annihilate(cutoff: int) -> np.ndarray:
    if cutoff < 2:
        raise OperatorError(f"cutoff must be >= 2, got {cutoff}")
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1).astype(complex)


def fock_create(cutoff: int) -> np.ndarray:
    return fock_annihilate(cutoff).conj().T


def fock_position(cutoff: int) -> np.ndarray:
    """Truncated X = (a + a†)/√2; Hermitian tridiagonal, <n|X|n+1> = √(n+1)/√2."""
    a = fock_annihilate(cutoff)
    return (a + a.conj().T) / np.sqrt(2.0)


def fock_momentum(cutoff: int) -> np.ndarray:
    """Truncated P = (a - a†)/(i√2)."""
    a = fock_annihilate(cutoff)
    return (a - a.conj().T) / (1j * np.sqrt(2.0))


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli(tag: str) -> np.ndarray:
    """Standard Pauli matrix; |0> = spin-up eigenstate of sigma_z."""
    if tag not in _PAULI:
        raise OperatorError(f"pauli tag must be one of x, y, z; got {tag!r}")
    return _PAULI[tag].copy()


@dataclass(frozen=True)
class LocalOp:
    """One local factor: a Pauli, identity, ladder operator, or X^n / P^n."""

    tag: str
    power: int = 1

    def __post_init__(self):
        if self.tag not in ALL_TAGS:
            raise OperatorError(f"unknown local operator tag {self.tag!r}")
        if self.power < 1:
            raise OperatorError(f"operator power must be >= 1, got {self.power}")
        if self.power > 1 and self.tag not in ("X", "P"):
            raise OperatorError(f"powers are only defined for X and P, not {self.tag!r}")

    @property
    def hermitian(self) -> bool:
        return self.tag in HERMITIAN_TAGS


def local_matrix(op: LocalOp, dim: int) -> np.ndarray:
    """Concrete matrix for a local operator on a subsystem of dimension ``dim``.

    Powers are matrix powers of the truncated operator, so products stay
    inside the truncated space (the corner caveat above applies).
    """
    if op.tag in QUBIT_TAGS:
        if dim != 2:
            raise OperatorError(f"{op.tag} acts on qubits (dim 2), got dim {dim}")
        return pauli(op.tag[1])
    if op.tag == "id":
        return np.eye(dim, dtype=complex)
    if dim < 2:
        raise OperatorError(f"oscillator operator {op.tag} needs dim >= 2")
    base = {"X": fock_position, "P": fock_momentum, "a": fock_annihilate, "adag": fock_create}[op.tag](dim)
    return np.linalg.matrix_power(base, op.power)


# ---------------------------------------------------------------------------
# Hamiltonian expressions


@dataclass(frozen=True)
class HamiltonianTerm:
    """Real coefficient times a tensor product of local Hermitian factors."""

    coefficient: float
    factors: tuple[tuple[int, LocalOp], ...]

    def __post_init__(self):
        coeff = float(self.coefficient)
        if not np.isfinite(coeff) or coeff == 0.0:
            raise OperatorError(f"term coefficient must be finite and nonzero, got {coeff}")
        if not self.factors:
            raise OperatorError("term needs at least one factor")
        idxs = [i for i, _ in self.factors]
        if len(set(idxs)) != len(idxs):
            raise OperatorError(f"at most one factor per subsystem; repeated index in {idxs}")
        for _, op in self.factors:
            if not op.hermitian:
                raise OperatorError(
                    f"{op.tag!r} is not Hermitian and cannot appear in a Hamiltonian term"
                )
        object.__setattr__(self, "coefficient", coeff)
        object.__setattr__(self, "factors", tuple(sorted(self.factors, key=lambda f: f[0])))


@dataclass(frozen=True)
class HamiltonianExpr:
    """Sum of HamiltonianTerms; Hermitian by construction."""

    terms: tuple[HamiltonianTerm, ...]

    def __post_init__(self):
        if not self.terms:
            raise OperatorError("expression needs at least one term")

    def __add__(self, other: HamiltonianExpr) -> HamiltonianExpr:
        return HamiltonianExpr(self.terms + other.terms)

    def __rmul__(self, c: float) -> HamiltonianExpr:
        return HamiltonianExpr(tuple(HamiltonianTerm(c * t.coefficient, t.factors) for t in self.terms))

    def __neg__(self) -> HamiltonianExpr:
        return (-1.0) * self


def term(coefficient: float, *factors: tuple[int, str] | tuple[int, str, int]) -> HamiltonianExpr:
    """Single-term expression builder: term(0.5, (0, "sz"), (1, "X", 2))."""
    ops = []
    for f in factors:
        idx, tag = f[0], f[1]
        power = f[2] if len(f) > 2 else 1
        ops.append((idx, LocalOp(tag, power)))
    return HamiltonianExpr((HamiltonianTerm(coefficient, tuple(ops)),))


def build(expr: HamiltonianExpr, layout: RegisterLayout) -> np.ndarray:
    """Realize an expression as a dense Hermitian matrix on the layout."""
    total = layout.total_dim
    out = np.zeros((total, total), dtype=complex)
    for t in expr.terms:
        mats = []
        targets = []
        for idx, op in t.factors:
            if not 0 <= idx < len(layout):
                raise OperatorError(f"factor {op.tag}@{idx}: no subsystem {idx} in a {len(layout)}-subsystem layout")
            if op.tag in QUBIT_TAGS and not layout.is_qubit(idx):
                raise OperatorError(f"{op.tag} at subsystem {idx}: not a qubit")
            if op.tag in QUMODE_TAGS and not layout.is_qumode(idx):
                raise OperatorError(f"{op.tag} at subsystem {idx}: not a qumode")
            mats.append(local_matrix(op, layout.dims[idx]))
            targets.append(idx)
        local = mats[0]
        for m in mats[1:]:
            local = np.kron(local, m)
        out += t.coefficient * embed(local, targets, layout)
    return out


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """AB - BA; anti-Hermitian whenever A and B are Hermitian."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise OperatorError(f"commutator shape mismatch: {a.shape} vs {b.shape}")
    return a @ b - b @ a


# ---------------------------------------------------------------------------
# canonical text form

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z]+)"
    r"|(?P<sym>[@^*+\-]))"
)


def format_expr(expr: HamiltonianExpr, compact: bool = False) -> str:
    """Canonical rendering; ``compact=True`` (no spaces) is the generator-id form.

    Round trip is exact: coefficients print via ``repr`` and factors are
    sorted by subsystem, so ``parse_expr(format_expr(e)) == e``.
    """
    sep = "" if compact else " "
    parts: list[str] = []
    for i, t in enumerate(expr.terms):
        mag = abs(t.coefficient)
        sign = "-" if t.coefficient < 0 else "+"
        factors = [
            f"{op.tag}@{idx}" + (f"^{op.power}" if op.power > 1 else "") for idx, op in t.factors
        ]
        body = f"{sep}*{sep}".join([repr(mag)] + factors)
        if i == 0:
            parts.append(body if sign == "+" else f"-{sep}{body}" if not compact else f"-{body}")
        else:
            parts.append(f"{sep}{sign}{sep}{body}")
    return "".join(parts)


def generator_id(expr: HamiltonianExpr) -> str:
    """Stable, space-free id for a Hamiltonian (used by pulses and registries)."""
    return format_expr(expr, compact=True)


class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.items: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                stripped = text[pos:].lstrip()
                if not stripped:
                    break
                col = len(text) - len(stripped) + 1
                raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", col)
            kind = m.lastgroup or "sym"
            self.items.append((kind, m.group(kind), m.start(kind) + 1))
            pos = m.end()
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        if self.i < len(self.items):
            return self.items[self.i]
        return ("eof", "", len(self.text) + 1)

    def next(self) -> tuple[str, str, int]:
        tok = self.peek()
        self.i += 1
        return tok


def _parse_factor(toks: _Tokens) -> tuple[int, LocalOp]:
    kind, val, col = toks.next()
    if kind != "name":
        raise ExprSyntaxError(f"expected operator name, got {val!r}", col)
    if val not in ALL_TAGS or val in ("a", "adag"):
        raise ExprSyntaxError(f"unknown operator {val!r} (use sx, sy, sz, id, X, P)", col)
    kind, sym, col = toks.next()
    if sym != "@":
        raise ExprSyntaxError(f"expected '@' after operator name, got {sym!r}", col)
    kind, idx_text, col = toks.next()
    if kind != "number" or not idx_text.isdigit():
        raise ExprSyntaxError(f"expected subsystem index, got {idx_text!r}", col)
    power = 1
    if toks.peek()[1] == "^":
        toks.next()
        kind, pow_text, col = toks.next()
        if kind != "number" or not pow_text.isdigit():
            raise ExprSyntaxError(f"expected integer power, got {pow_text!r}", col)
        power = int(pow_text)
    try:
        op = LocalOp(val, power)
    except OperatorError as exc:
        raise ExprSyntaxError(str(exc), col) from None
    return int(idx_text), op


def _parse_term(toks: _Tokens, sign: float) -> HamiltonianTerm:
    coeff = 1.0
    factors: list[tuple[int, LocalOp]] = []
    kind, val, col = toks.peek()
    if kind == "number":
        toks.next()
        coeff = float(val)
        kind, sym, col = toks.peek()
        if sym != "*":
            raise ExprSyntaxError("a coefficient must be followed by '*' and a factor", col)
        toks.next()
    factors.append(_parse_factor(toks))
    while toks.peek()[1] == "*":
        toks.next()
        factors.append(_parse_factor(toks))
    seen = [i for i, _ in factors]
    if len(set(seen)) != len(seen):
        raise ExprSyntaxError(
            "two factors on one subsystem in a single term; pre-multiply them instead", col
        )
    try:
        return HamiltonianTerm(sign * coeff, tuple(factors))
    except OperatorError as exc:
        raise ExprSyntaxError(str(exc), col) from None


def parse_expr(text: str) -> HamiltonianExpr:
    """Parse the canonical Hamiltonian grammar.

    ::

        expr    := ['-'] term (('+' | '-') term)*
        term    := [NUMBER '*'] factor ('*' factor)*
        factor  := NAME '@' INT ['^' INT]
        NAME    := sx | sy | sz | id | X | P

    Whitespace is insignificant.  Raises ExprSyntaxError with a 1-based
    column on malformed input.
    """
    toks = _Tokens(text)
    if toks.peek()[0] == "eof":
        raise ExprSyntaxError("empty expression", 1)
    sign = 1.0
    if toks.peek()[1] == "-":
        toks.next()
        sign = -1.0
    terms = [_parse_term(toks, sign)]
    while True:
        kind, sym, col = toks.peek()
        if kind == "eof":
            break
        if sym not in ("+", "-"):
            raise ExprSyntaxError(f"expected '+' or '-' between terms, got {sym!r}", col)
        toks.next()
        terms.append(_parse_term(toks, 1.0 if sym == "+" else -1.0))
    return HamiltonianExpr(tuple(terms))


# ---------------------------------------------------------------------------
# the primitive interaction set


@dataclass(frozen=True)
class NamedGenerator:
    """A Hamiltonian with a short name and its stable generator id."""

    name: str
    expr: HamiltonianExpr

    @property
    def generator_id(self) -> str:
        return generator_id(self.expr)


@dataclass(frozen=True)
class PrimitiveSet:
    """The three drivable spin/mode interactions {sx·X, sz·X, sz·P}."""

    spin: int
    mode: int
    members: tuple[NamedGenerator, ...]

    def __len__(self) -> int:
        return len(self.members)

    def by_name(self, name: str) -> NamedGenerator:
        for g in self.members:
            if g.name == name:
                return g
        raise OperatorError(f"no primitive named {name!r}; have {[g.name for g in self.members]}")


def primitive_set(layout: RegisterLayout, spin_idx: int, mode_idx: int) -> PrimitiveSet:
    """The interaction set for one spin/mode pair, each member available with +/- sign."""
    if not layout.is_qubit(spin_idx):
        raise OperatorError(f"subsystem {spin_idx} is not a qubit")
    if not layout.is_qumode(mode_idx):
        raise OperatorError(f"subsystem {mode_idx} is not a qumode")
    members = (
        NamedGenerator("sxX", term(1.0, (spin_idx, "sx"), (mode_idx, "X"))),
        NamedGenerator("szX", term(1.0, (spin_idx, "sz"), (mode_idx, "X"))),
        NamedGenerator("szP", term(1.0, (spin_idx, "sz"), (mode_idx, "P"))),
    )
    return PrimitiveSet(spin_idx, mode_idx, members)
