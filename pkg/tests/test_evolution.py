import numpy as np
import pytest

from hybridsim.evolution import (
    EvolutionError,
    Pulse,
    PulseSequence,
    UnknownGeneratorError,
    cv_qft,
    expm_apply,
    expm_unitary,
    leakage,
    run_sequence,
    sequence_unitary,
    trotter,
)
from hybridsim.hilbert import StateVector, basis_state, new_register, qubit, qumode
from hybridsim.operators import build, fock_position, parse_expr
from hybridsim.spectral import quadrature_basis


def test_expm_zero_time_is_identity():
    layout = new_register([qubit(), qumode(4)])
    state = basis_state(layout, [1, 2])
    out = expm_apply(build(parse_expr("sz@0*X@1"), layout), 0.0, state)
    assert np.max(np.abs(out.amplitudes - state.amplitudes)) <= 1e-14


def test_expm_translates_quadrature_eigenvector():
    # e^{-iPt}|x> = |x+t>: on the truncated mode the overlap with the node
    # nearest x+t must be the largest of all nodes
    cutoff = 48
    layout = new_register([qumode(cutoff)])
    basis = quadrature_basis(cutoff)
    j = cutoff // 2  # a central node
    state = StateVector(layout, basis.vectors[:, j])
    t = 1.3
    moved = expm_apply(build(parse_expr("P@0"), layout), t, state)
    overlaps = np.abs(basis.vectors.conj().T @ moved.amplitudes) ** 2
    expected = int(np.argmin(np.abs(basis.nodes - (basis.nodes[j] + t))))
    assert int(np.argmax(overlaps)) == expected


def test_expm_on_sigma_z_eigenstate():
    layout = new_register([qubit()])
    state = basis_state(layout, [0])
    out = expm_apply(build(parse_expr("sz@0"), layout), np.pi, state)
    assert abs(abs(out.amplitudes[0]) ** 2 - 1.0) <= 1e-12


def test_expm_validation():
    layout = new_register([qubit()])
    state = basis_state(layout, [0])
    with pytest.raises(EvolutionError):
        expm_apply(np.array([[0, 1], [0, 0]], dtype=complex), 1.0, state)
    with pytest.raises(EvolutionError):
        expm_apply(np.eye(3, dtype=complex), 1.0, state)


def test_expm_composition_and_norm():
    rng = np.random.default_rng(2)
    layout = new_register([qubit(), qumode(6)])
    h = build(parse_expr("sz@0*X@1+0.5*P@1^2"), layout)
    amps = rng.normal(size=12) + 1j * rng.normal(size=12)
    state = StateVector(layout, amps / np.linalg.norm(amps))
    one = expm_apply(h, 0.7, expm_apply(h, 0.3, state))
    two = expm_apply(h, 1.0, state)
    assert abs(one.overlap(two)) >= 1.0 - 1e-10
    assert abs(one.norm - 1.0) <= 1e-10


def test_run_sequence_empty_and_inverse_pair():
    layout = new_register([qubit(), qumode(8)])
    state = basis_state(layout, [0, 1])
    rep = run_sequence(PulseSequence(), state)
    assert rep.final_state.fidelity(state) == 1.0

    gen = parse_expr("sx@0*X@1")
    seq = PulseSequence((Pulse(gen, 0.4, 1), Pulse(gen, 0.4, -1)))
    rep = run_sequence(seq, state)
    assert rep.final_state.fidelity(state) >= 1.0 - 1e-10
    assert rep.norm_drift <= 1e-10


def test_run_sequence_unknown_generator():
    layout = new_register([qubit()])
    state = basis_state(layout, [0])
    with pytest.raises(UnknownGeneratorError):
        run_sequence(PulseSequence((Pulse("no-such-generator", 1.0, 1),)), state)


def test_sequence_text_round_trip_is_bit_exact():
    seq = PulseSequence(
        (
            Pulse("1.0*sz@0*X@1", 0.1234567890123456789, 1),
            Pulse(parse_expr("0.5*P@1^2"), 1e-7, -1),
        ),
        ("compiled block", "second note"),
    )
    text = seq.to_text()
    again = PulseSequence.from_text(text)
    assert again.to_text() == text
    assert [p.duration for p in again.pulses] == [p.duration for p in seq.pulses]
    with pytest.raises(EvolutionError):
        PulseSequence.from_text("1.0*sz@0 +1\n")


def test_pulse_validation():
    with pytest.raises(EvolutionError):
        Pulse("1.0*sz@0", -0.1, 1)
    with pytest.raises(EvolutionError):
        Pulse("1.0*sz@0", 0.1, 2)


def test_trotter_single_term_is_exact():
    layout = new_register([qubit(), qumode(8)])
    expr = parse_expr("sz@0*X@1")
    u = sequence_unitary(trotter(expr, 0.7, 5), layout)
    exact = expm_unitary(build(expr, layout), 0.7)
    assert np.max(np.abs(u - exact)) <= 1e-12


def test_trotter_error_halves_when_steps_double():
    layout = new_register([qubit(), qumode(16)])
    expr = parse_expr("sz@0*X@1+sx@0*X@1")
    exact = expm_unitary(build(expr, layout), 0.5)
    errs = [
        np.linalg.norm(sequence_unitary(trotter(expr, 0.5, n), layout) - exact, 2)
        for n in (4, 8, 16, 32)
    ]
    for a, b in zip(errs, errs[1:]):
        assert 0.8 * 2 <= a / b <= 1.2 * 2
    slope = np.polyfit(np.log([4, 8, 16, 32]), np.log(errs), 1)[0]
    assert -1.2 <= slope <= -0.8


def test_trotter_commuting_terms_exact():
    layout = new_register([qubit(), qubit()])
    expr = parse_expr("sz@0+sz@1")
    exact = expm_unitary(build(expr, layout), 1.3)
    u = sequence_unitary(trotter(expr, 1.3, 3), layout)
    assert np.linalg.norm(u - exact, 2) <= 1e-10


def test_cv_qft_vacuum_invariant():
    layout = new_register([qumode(32)])
    vac = basis_state(layout, [0])
    assert cv_qft(vac, 0).fidelity(vac) >= 1.0 - 1e-10


def test_cv_qft_fock_phases():
    # each |n> picks up e^{-i (n + 1/2) pi/2}; probabilities are untouched
    layout = new_register([qumode(32)])
    n = 3
    amps = np.zeros(32, dtype=complex)
    amps[0] = amps[n] = 1 / np.sqrt(2)
    out = cv_qft(StateVector(layout, amps), 0)
    assert np.allclose(np.abs(out.amplitudes) ** 2, np.abs(amps) ** 2, atol=1e-12)
    rel = (out.amplitudes[n] / out.amplitudes[0]) / np.exp(-1j * n * np.pi / 2)
    assert abs(rel - 1.0) <= 1e-10

    fock = basis_state(layout, [n])
    out = cv_qft(fock, 0)
    assert abs(out.amplitudes[n] - np.exp(-1j * (n + 0.5) * np.pi / 2)) <= 1e-10


def test_cv_qft_rotates_displaced_vacuum():
    layout = new_register([qumode(64)])
    x_op = build(parse_expr("X@0"), layout)
    p_op = build(parse_expr("P@0"), layout)
    state = expm_apply(p_op, 1.0, basis_state(layout, [0]))  # <X>=1, <P>=0
    out = cv_qft(state, 0)
    assert abs(out.expectation(x_op) - 0.0) <= 1e-3
    assert abs(out.expectation(p_op) - (-1.0)) <= 1e-3


def test_cv_qft_fourth_power_is_identity():
    layout = new_register([qumode(64)])
    state = expm_apply(build(parse_expr("P@0"), layout), 0.8, basis_state(layout, [0]))
    out = state
    for _ in range(4):
        out = cv_qft(out, 0)
    assert out.fidelity(state) >= 1.0 - 1e-8
    with pytest.raises(EvolutionError):
        cv_qft(basis_state(new_register([qubit()]), [0]), 0)


def test_report_flags_guard_band_population():
    layout = new_register([qumode(32)])
    ok = run_sequence(PulseSequence(), basis_state(layout, [0]))
    assert ok.valid and ok.leakage == 0.0
    bad = run_sequence(PulseSequence(), basis_state(layout, [30]))
    assert not bad.valid and bad.leakage == 1.0


def test_leakage_examples():
    layout = new_register([qumode(32)])
    assert leakage(basis_state(layout, [0])) == 0.0
    assert abs(leakage(basis_state(layout, [31])) - 1.0) <= 1e-15

    # coherent-like state |alpha| = 1: Poisson tail above the guard band
    import math

    alpha = 1.0
    n = np.arange(32)
    amps = np.exp(-abs(alpha) ** 2 / 2) * alpha**n / np.sqrt(
        np.array([math.factorial(int(k)) for k in n], dtype=float)
    )
    state = StateVector(layout, amps / np.linalg.norm(amps))
    tail = 1.0 - np.sum(np.abs(amps[:24]) ** 2) / np.sum(np.abs(amps) ** 2)
    assert leakage(state, 0.25) < 1e-6
    assert abs(leakage(state, 0.25) - tail) <= 1e-12
