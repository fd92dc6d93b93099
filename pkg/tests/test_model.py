import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbmtrain.densemath import ValidationError, random_density_matrix
from qbmtrain.model import (
    OperatorTerm,
    QbmHamiltonian,
    assemble,
    gibbs_state,
    grad_exact,
    grad_fd,
    grad_visible_closed,
    load_model,
    objective,
    pauli_ising_model,
    random_instance,
    relative_entropy,
    save_model,
    terms_from_labels,
    visible_marginal,
)

from conftest import I2, Z

SINGLE_Z = QbmHamiltonian(1, 0, [OperatorTerm("Z", "")])


def test_assemble_zero_theta():
    inst = random_instance(2, 1, 6, 0)
    assert np.allclose(assemble(inst.model, np.zeros(6)), 0)


def test_assemble_single_z():
    assert np.allclose(assemble(SINGLE_Z, [0.4]), np.diag([0.4, -0.4]))


def test_ising_layout_term_count():
    m = pauli_ising_model(2)
    assert m.D == 5
    assert [t.visible for t in m.terms] == ["XI", "ZI", "IX", "IZ", "ZZ"]


def test_tensor_order_visible_first():
    m = QbmHamiltonian(1, 1, [OperatorTerm("Z", "I")])
    assert np.allclose(assemble(m, [1.0]), np.kron(Z, I2))


def test_operator_term_kind_inference():
    assert OperatorTerm("Z", "I").kind == "visible"
    assert OperatorTerm("I", "Z").kind == "hidden"
    assert OperatorTerm("Z", "Z").kind == "interaction"
    with pytest.raises(ValidationError):
        OperatorTerm("Z", "I", kind="hidden")


def test_model_rejects_wrong_label_length():
    with pytest.raises(ValidationError):
        QbmHamiltonian(2, 0, [OperatorTerm("Z", "")])


def test_gibbs_state_zero():
    assert np.allclose(gibbs_state(np.zeros((4, 4))), np.eye(4) / 4)


def test_gibbs_state_diagonal():
    assert np.allclose(gibbs_state(np.diag([0.0, np.log(2)])), np.diag([2 / 3, 1 / 3]))


def test_gibbs_state_large_shift_stable():
    assert np.allclose(gibbs_state(np.diag([1000.0, 1000.0 + np.log(2)])), np.diag([2 / 3, 1 / 3]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_gibbs_gauge_invariance(seed, c):
    rng = np.random.default_rng(seed)
    from qbmtrain.densemath import random_hermitian

    h = random_hermitian(4, rng)
    assert np.allclose(gibbs_state(h + c * np.eye(4)), gibbs_state(h), atol=1e-12)


def test_visible_marginal_no_hidden():
    m = pauli_ising_model(2)
    th = np.linspace(-1, 1, 5)
    assert np.allclose(visible_marginal(m, th), gibbs_state(assemble(m, th)))


def test_visible_marginal_zero_theta():
    inst = random_instance(2, 2, 8, 3)
    assert np.allclose(visible_marginal(inst.model, np.zeros(8)), np.eye(4) / 4)


def test_visible_marginal_hidden_only_term():
    m = QbmHamiltonian(1, 1, [OperatorTerm("I", "Z")])
    assert np.allclose(visible_marginal(m, [1.3]), I2 / 2, atol=1e-15)


def test_relative_entropy_examples(rng):
    rho = random_density_matrix(4, rng)
    assert abs(relative_entropy(rho, rho)) < 1e-12
    assert relative_entropy(np.diag([1.0, 0.0]), I2 / 2) == pytest.approx(np.log(2), abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_klein_inequality(seed):
    rng = np.random.default_rng(seed)
    rho, sigma = random_density_matrix(4, rng), random_density_matrix(4, rng)
    assert relative_entropy(rho, sigma) >= -1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_commuting_states_reduce_to_kl(seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
    kl = float(np.sum(p * np.log(p / q)))
    assert relative_entropy(np.diag(p), np.diag(q)) == pytest.approx(kl, abs=1e-12)


def test_objective_self_distance():
    inst = random_instance(2, 1, 6, 5)
    rho = visible_marginal(inst.model, inst.theta)
    assert abs(objective(rho, inst.model, inst.theta)) < 1e-12


def test_objective_scalar_example():
    assert objective(np.diag([1.0, 0.0]), SINGLE_Z, [0.0]) == pytest.approx(np.log(2), abs=1e-14)


def test_objective_decreases_after_descent_step():
    for seed in range(10):
        inst = random_instance(2, 1, 6, seed)
        g = grad_exact(inst.rho_target, inst.model, inst.theta).values
        before = objective(inst.rho_target, inst.model, inst.theta)
        after = objective(inst.rho_target, inst.model, inst.theta - 1e-3 * g)
        assert after < before


def test_grad_exact_matches_fd():
    for seed in range(10):
        n_v, n_h = 1 + seed % 3, seed % 3
        inst = random_instance(n_v, n_h, min(6, 4**n_v * 2**n_h - 1), seed, restricted=seed % 2 == 0)
        ge = grad_exact(inst.rho_target, inst.model, inst.theta).values
        fd = grad_fd(inst.rho_target, inst.model, inst.theta).values
        assert np.max(np.abs(ge - fd)) <= 1e-6


def test_grad_exact_matches_closed_form():
    for seed in range(10):
        inst = random_instance(2, 0, 6, seed)
        ge = grad_exact(inst.rho_target, inst.model, inst.theta).values
        gc = grad_visible_closed(inst.rho_target, inst.model, inst.theta).values
        assert np.max(np.abs(ge - gc)) <= 1e-9


def test_grad_exact_zero_for_traceless_at_origin():
    m = pauli_ising_model(2)
    g = grad_exact(np.eye(4) / 4, m, np.zeros(5)).values
    assert np.max(np.abs(g)) < 1e-14


def test_grad_closed_scalar_example():
    p, th = 0.3, 0.8
    g = grad_visible_closed(np.diag([p, 1 - p]), SINGLE_Z, [th]).values
    assert g[0] == pytest.approx((2 * p - 1) + np.tanh(th), abs=1e-14)
    assert abs(grad_visible_closed(I2 / 2, SINGLE_Z, [0.0]).values[0]) < 1e-15


def test_grad_closed_matches_fd():
    for seed in range(20):
        inst = random_instance(1 + seed % 3, 0, 3, seed)
        gc = grad_visible_closed(inst.rho_target, inst.model, inst.theta).values
        fd = grad_fd(inst.rho_target, inst.model, inst.theta).values
        assert np.max(np.abs(gc - fd)) <= 1e-7


def test_grad_closed_requires_no_hidden():
    inst = random_instance(1, 1, 3, 0)
    with pytest.raises(ValidationError):
        grad_visible_closed(inst.rho_target, inst.model, inst.theta)


def test_grad_fd_constant_objective():
    m = pauli_ising_model(2)
    assert np.max(np.abs(grad_fd(np.eye(4) / 4, m, np.zeros(5)).values)) < 1e-10


def test_grad_fd_second_order():
    inst = random_instance(2, 1, 6, 2)
    ge = grad_exact(inst.rho_target, inst.model, inst.theta).values
    e1 = np.max(np.abs(grad_fd(inst.rho_target, inst.model, inst.theta, step=2e-2).values - ge))
    e2 = np.max(np.abs(grad_fd(inst.rho_target, inst.model, inst.theta, step=1e-2).values - ge))
    assert 3.5 < e1 / e2 < 4.5
    rich = np.max(np.abs(grad_fd(inst.rho_target, inst.model, inst.theta, step=1e-2, richardson=True).values - ge))
    assert rich < e2 / 10


def test_grad_exact_singular_marginal_raises():
    m = QbmHamiltonian(1, 0, [OperatorTerm("Z", "")])
    with pytest.raises(ValidationError):
        grad_exact(I2 / 2, m, [40.0])


def test_random_instance_deterministic():
    a, b = random_instance(2, 1, 6, 11), random_instance(2, 1, 6, 11)
    assert a.model == b.model
    assert np.array_equal(a.theta, b.theta)
    assert np.array_equal(a.rho_target, b.rho_target)


def test_random_instance_restricted_hidden_ops_commute():
    for seed in range(10):
        inst = random_instance(2, 2, 10, seed, restricted=True)
        ops = [t.hidden_op for t in inst.model.terms]
        for a in ops:
            for b in ops:
                assert np.array_equal(a @ b, b @ a)


def test_random_instance_realizable():
    for seed in range(10):
        inst = random_instance(2, 1, 6, seed)
        assert objective(inst.rho_target, inst.model, inst.theta_truth) < 0.05


def test_random_instance_spectrum_window():
    inst = random_instance(2, 1, 6, 0, spectrum=(0.1, 0.3))
    for th in (inst.theta, inst.theta_truth):
        lam = np.linalg.eigvalsh(visible_marginal(inst.model, th))
        assert 0.1 <= lam[0] and lam[-1] <= 0.3


def test_model_file_roundtrip(tmp_path):
    inst = random_instance(2, 1, 6, 4)
    save_model(tmp_path / "m.json", inst.model, inst.theta)
    m, th = load_model(tmp_path / "m.json")
    assert m == inst.model
    assert np.array_equal(th, inst.theta)


def test_terms_from_labels():
    m = terms_from_labels(2, 1, ["ZI|Z", "XX|I", "II|Z"])
    assert m.counts() == {"visible": 1, "hidden": 1, "interaction": 1}
