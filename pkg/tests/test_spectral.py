import numpy as np
import pytest

from hybridsim.hilbert import StateVector, basis_state, new_register, qubit, qumode
from hybridsim.operators import build, fock_position, parse_expr
from hybridsim.spectral import (
    PointerSpec,
    SpectralError,
    _node_amplitudes,
    couple_pointer,
    estimate_spectrum,
    measure_position,
    measure_position_binned,
    prepare_gaussian_pointer,
    quadrature_basis,
    reliable_shift,
    robustness_midmeasure,
    spectrum_rows,
)


def two_qubit_uniform():
    layout = new_register([qubit(), qubit()])
    return StateVector(layout, np.ones(4, dtype=complex) / 2)


def test_quadrature_basis_matches_gauss_hermite():
    basis = quadrature_basis(40)
    nodes, _ = np.polynomial.hermite.hermgauss(40)
    assert np.max(np.abs(basis.nodes - nodes)) <= 1e-12
    assert np.all(np.diff(basis.nodes) > 0)
    gram = basis.vectors.conj().T @ basis.vectors
    assert np.max(np.abs(gram - np.eye(40))) <= 1e-10


def test_pointer_beta_one_is_vacuum():
    pointer = prepare_gaussian_pointer(1.0, 64)
    vac = basis_state(new_register([qumode(64)]), [0])
    assert pointer.fidelity(vac) >= 1.0 - 1e-10


def test_pointer_variance_tracks_beta():
    for beta, cutoff in ((0.5, 64), (4.0, 64), (16.0, 128)):
        x = fock_position(cutoff)
        pointer = prepare_gaussian_pointer(beta, cutoff)
        var = pointer.expectation(x @ x) - pointer.expectation(x) ** 2
        assert abs(var - 1.0 / (2 * beta)) <= 0.02 * (1.0 / (2 * beta))


def test_pointer_wavefunction_shape():
    # node amplitudes divided by the discrete measure follow e^{-beta x^2/2}
    beta, cutoff = 4.0, 64
    basis = quadrature_basis(cutoff)
    pointer = prepare_gaussian_pointer(beta, cutoff)
    node_coeff = basis.vectors.conj().T @ pointer.amplitudes
    phi0 = np.pi**-0.25 * np.exp(-basis.nodes**2 / 2)
    weights = (basis.vectors[0, :].real / phi0) ** 2
    psi_vals = (node_coeff / np.sqrt(weights)).real
    sel = np.abs(basis.nodes) <= 1.5
    ratio = psi_vals[sel] / np.exp(-beta * basis.nodes[sel] ** 2 / 2)
    assert np.max(np.abs(ratio / ratio[0] - 1.0)) <= 1e-6


def test_pointer_rejects_unreachable_squeezing():
    with pytest.raises(SpectralError):
        prepare_gaussian_pointer(1e6, 64)
    with pytest.raises(SpectralError):
        prepare_gaussian_pointer(-1.0, 64)


def test_pointer_spec_validation():
    with pytest.raises(SpectralError):
        PointerSpec(beta=0.0, cutoff=64, t_couple=1.0)
    with pytest.raises(SpectralError):
        PointerSpec(beta=1.0, cutoff=1, t_couple=1.0)
    spec = PointerSpec(beta=4.0, cutoff=64, t_couple=5.0)
    assert abs(spec.resolution - 0.1) <= 1e-15


def test_couple_zero_operator_leaves_pointer_unshifted():
    # terms are individually nonzero but build to the zero operator
    layout = new_register([qubit()])
    psi = basis_state(layout, [0])
    h = parse_expr("sz@0 - sz@0")
    pointer = prepare_gaussian_pointer(4.0, 64)
    joint = couple_pointer(psi, h, pointer, 5.0)
    expected = np.kron(psi.amplitudes, pointer.amplitudes)
    assert abs(abs(np.vdot(expected, joint.amplitudes)) ** 2 - 1.0) <= 1e-12


def test_couple_shifts_pointer_by_eigenvalue_times_time():
    layout = new_register([qubit()])
    psi = basis_state(layout, [0])  # sz eigenvalue +1
    joint = couple_pointer(psi, parse_expr("sz@0"), prepare_gaussian_pointer(4.0, 128), 3.0)
    x_op = build(parse_expr("X@1"), joint.layout)
    assert abs(joint.expectation(x_op) - 3.0) <= 0.02 * 3.0


def test_couple_creates_equal_branches():
    joint = couple_pointer(
        two_qubit_uniform(), parse_expr("sz@0*sz@1"), prepare_gaussian_pointer(4.0, 128), 5.0
    )
    amps, basis = _node_amplitudes(joint, 2)
    probs = np.sum(np.abs(amps) ** 2, axis=0)
    assert abs(probs[basis.nodes > 0].sum() - 0.5) <= 1e-10
    assert abs(probs[basis.nodes < 0].sum() - 0.5) <= 1e-10


def test_couple_rejects_hamiltonian_on_pointer():
    layout = new_register([qubit()])
    psi = basis_state(layout, [0])
    with pytest.raises(SpectralError):
        couple_pointer(psi, parse_expr("sz@1"), prepare_gaussian_pointer(1.0, 16), 1.0)
    with pytest.raises(SpectralError):
        couple_pointer(psi, parse_expr("sz@0"), prepare_gaussian_pointer(1.0, 16), -1.0)


def test_measure_position_on_node_state_is_deterministic():
    layout = new_register([qumode(32)])
    basis = quadrature_basis(32)
    k = 13
    state = StateVector(layout, basis.vectors[:, k])
    for seed in range(5):
        x, collapsed = measure_position(state, 0, np.random.default_rng(seed))
        assert x == basis.nodes[k]
        assert collapsed.fidelity(state) >= 1.0 - 1e-12


def test_measure_position_vacuum_statistics():
    pointer = prepare_gaussian_pointer(1.0, 64)
    rng = np.random.default_rng(17)
    xs = [measure_position(pointer, 0, rng)[0] for _ in range(10000)]
    assert abs(np.var(xs) - 0.5) <= 0.05 * 0.5


def test_measure_position_collapses_system_to_eigenvector():
    layout = new_register([qubit()])
    plus = StateVector(layout, np.array([1, 1], dtype=complex) / np.sqrt(2))
    joint = couple_pointer(plus, parse_expr("sz@0"), prepare_gaussian_pointer(4.0, 128), 5.0)
    for seed in range(6):
        x, collapsed = measure_position(joint, 1, np.random.default_rng(seed))
        amps, _ = _node_amplitudes(collapsed, 1)
        k = int(np.argmax(np.sum(np.abs(amps) ** 2, axis=0)))
        v = amps[:, k] / np.linalg.norm(amps[:, k])
        target = np.array([1, 0]) if x > 0 else np.array([0, 1])
        assert abs(np.vdot(target, v)) ** 2 >= 0.99
        assert abs(collapsed.norm - 1.0) <= 1e-12


def test_binned_measurement_keeps_outcome_statistics():
    pointer = prepare_gaussian_pointer(4.0, 64)
    rng = np.random.default_rng(23)
    xs = [measure_position_binned(pointer, 0, rng, 0.35)[0] for _ in range(4000)]
    assert abs(np.mean(xs)) <= 0.03
    assert abs(np.var(xs) - 0.125) <= 0.15 * 0.125


def test_estimate_spectrum_single_peak():
    layout = new_register([qubit()])
    psi = basis_state(layout, [0])
    spec = PointerSpec(beta=4.0, cutoff=128, t_couple=5.0)
    est = estimate_spectrum(parse_expr("sz@0"), psi, spec, 500, seed=3)
    assert len(est.peaks) == 1
    assert abs(est.peaks[0].eigenvalue - 1.0) <= est.resolution
    assert est.valid


def test_estimate_spectrum_two_branches_and_rows():
    spec = PointerSpec(beta=4.0, cutoff=128, t_couple=5.0)
    est = estimate_spectrum(parse_expr("sz@0*sz@1"), two_qubit_uniform(), spec, 2000, seed=7)
    assert len(est.peaks) == 2
    assert abs(est.peaks[0].eigenvalue + 1.0) <= 0.1
    assert abs(est.peaks[-1].eigenvalue - 1.0) <= 0.1
    for peak in est.peaks:
        assert abs(peak.weight - 0.5) <= 0.05
    rows = spectrum_rows(est)
    assert rows[0][0] == 0 and len(rows) == 2000
    assert rows[5][2] == rows[5][1] / 5.0


def test_pointer_shift_is_linear_in_coefficient():
    layout = new_register([qubit()])
    psi = basis_state(layout, [0])
    spec = PointerSpec(beta=4.0, cutoff=128, t_couple=5.0)
    for c in (-2.0, -1.0, 0.5, 1.0):
        est = estimate_spectrum(parse_expr(f"{c}*sz@0"), psi, spec, 600, seed=31)
        assert len(est.peaks) == 1
        assert abs(est.peaks[0].eigenvalue - c) <= est.resolution


def test_cluster_weights_match_spectral_decomposition():
    # |psi> = cos(theta)|0> + sin(theta)|1> under sz: weights cos^2, sin^2
    theta = 0.6
    layout = new_register([qubit()])
    psi = StateVector(layout, np.array([np.cos(theta), np.sin(theta)], dtype=complex))
    spec = PointerSpec(beta=4.0, cutoff=128, t_couple=5.0)
    n_shots = 2000
    est = estimate_spectrum(parse_expr("sz@0"), psi, spec, n_shots, seed=19)
    expect = {1.0: np.cos(theta) ** 2, -1.0: np.sin(theta) ** 2}
    assert len(est.peaks) == 2
    for peak in est.peaks:
        w = expect[round(peak.eigenvalue)]
        assert abs(peak.weight - w) <= 3 * np.sqrt(w * (1 - w) / n_shots)


def test_measurement_support_is_on_the_sampled_node():
    pointer = prepare_gaussian_pointer(1.0, 32)
    basis = quadrature_basis(32)
    x, collapsed = measure_position(pointer, 0, np.random.default_rng(2))
    node_coeff = basis.vectors.conj().T @ collapsed.amplitudes
    k = int(np.argmin(np.abs(basis.nodes - x)))
    off_node = np.delete(np.abs(node_coeff), k)
    assert np.max(off_node) <= 1e-12
    assert abs(collapsed.norm - 1.0) <= 1e-12


def test_estimate_spectrum_deterministic_per_seed():
    spec = PointerSpec(beta=4.0, cutoff=64, t_couple=2.0)
    layout = new_register([qubit()])
    psi = basis_state(layout, [0])
    a = estimate_spectrum(parse_expr("sx@0"), psi, spec, 200, seed=5)
    b = estimate_spectrum(parse_expr("sx@0"), psi, spec, 200, seed=5)
    assert a.samples == b.samples
    c = estimate_spectrum(parse_expr("sx@0"), psi, spec, 200, seed=6)
    assert a.samples != c.samples


def test_estimate_spectrum_trotter_matches_exact():
    spec = PointerSpec(beta=4.0, cutoff=128, t_couple=5.0)
    layout = new_register([qubit()])
    psi = basis_state(layout, [0])
    h = parse_expr("sz@0+sx@0")
    exact = estimate_spectrum(h, psi, spec, 1000, seed=21, method="exact")
    trot = estimate_spectrum(h, psi, spec, 1000, seed=21, method="trotter", trotter_steps=64)
    for pe, pt in zip(exact.peaks, trot.peaks):
        assert abs(pe.eigenvalue - pt.eigenvalue) <= spec.resolution


def test_estimate_flags_out_of_range_shift():
    layout = new_register([qubit()])
    psi = basis_state(layout, [0])
    spec = PointerSpec(beta=1.0, cutoff=16, t_couple=8.0)
    est = estimate_spectrum(parse_expr("sz@0"), psi, spec, 100, seed=3)
    assert not est.valid
    assert est.notes
    assert reliable_shift(16) < 8.0


def test_robustness_single_branch_preserves_position():
    layout = new_register([qubit()])
    psi = basis_state(layout, [0])
    spec = PointerSpec(beta=4.0, cutoff=128, t_couple=5.0)
    rep = robustness_midmeasure(parse_expr("sz@0"), psi, spec, 800, seed=5)
    main = max(rep.peaks, key=lambda p: p.weight)
    base = max(rep.baseline.peaks, key=lambda p: p.weight)
    assert abs(main.eigenvalue - base.eigenvalue) <= spec.resolution
    assert abs(main.eigenvalue - 1.0) <= spec.resolution


def test_robustness_identity_hamiltonian_mean_and_width():
    # single eigenvalue: the mid-run projection must not move the
    # distribution; the truncated binned collapse may widen it slightly
    layout = new_register([qubit()])
    psi = basis_state(layout, [0])
    spec = PointerSpec(beta=4.0, cutoff=128, t_couple=5.0)
    rep = robustness_midmeasure(parse_expr("0.7*id@0"), psi, spec, 1500, seed=9)
    assert abs(np.mean(rep.samples) - np.mean(rep.baseline.samples)) <= spec.resolution
    assert np.std(rep.samples) <= 1.5 * np.std(rep.baseline.samples)


def test_robustness_two_branches_persist():
    spec = PointerSpec(beta=4.0, cutoff=128, t_couple=5.0)
    rep = robustness_midmeasure(
        parse_expr("sz@0*sz@1"), two_qubit_uniform(), spec, 2000, seed=7
    )
    major = [b for b in rep.branches
             if any(p.weight >= 0.2 and abs(p.eigenvalue - b.eigenvalue) < 1e-12 for p in rep.peaks)]
    assert len(major) == 2
    for branch in major:
        assert branch.shift <= spec.resolution
        assert branch.fidelity_before >= 0.99
        assert branch.fidelity_after >= 0.99
