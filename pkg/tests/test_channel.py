import json

import numpy as np
import pytest
from conftest import random_matrix, random_state
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from erislab import matcore
from erislab._rng import rng_for
from erislab.channel import (
    ChannelFamily,
    ChannelSpec,
    KrausChannel,
    amplitude_damping,
    amplitude_flip,
    apply,
    build,
    choi_to_kraus,
    compose,
    conjugate,
    depolarizing,
    direct_sum,
    dual_apply,
    haar_unitary,
    identity_channel,
    mean_channel,
    random_isometry_kraus,
    transfer_matrix,
    transfer_to_kraus,
    unitary_channel,
    unvec,
    validate,
    vec,
)
from erislab.errors import DimensionMismatch, InvalidInput

KET0 = np.diag([1.0, 0.0])
KET1 = np.diag([0.0, 1.0])


def generated_channels():
    rng = np.random.default_rng(7)
    return [
        identity_channel(3),
        depolarizing(0.3, 3),
        amplitude_flip(2),
        amplitude_flip(4),
        amplitude_damping(0.4),
        amplitude_damping(1.0, 3),
        unitary_channel(haar_unitary(3, rng)),
        random_isometry_kraus(3, 2, rng),
        random_isometry_kraus(2, 4, rng),
    ]


def test_vec_is_column_stacking():
    X = np.array([[1, 2], [3, 4]])
    assert_allclose(vec(X), [1, 3, 2, 4])
    assert_allclose(unvec(vec(X)), X)


# --- apply ---------------------------------------------------------------------------------------------


def test_identity_channel_apply(rng):
    X = random_matrix(3, rng)
    assert_allclose(apply(identity_channel(3), X), X)


def test_amplitude_flip_kraus_and_action():
    F = amplitude_flip(2)
    assert_allclose(F.kraus_ops[0], [[0, 0], [1, 0]])
    assert_allclose(F.kraus_ops[1], [[0, 1], [0, 0]])
    assert_allclose(F.apply(KET0), KET1)
    assert validate(F).passed


@pytest.mark.parametrize("p", [0.0, 0.25, 0.5, 1.0])
@pytest.mark.parametrize("d", [2, 3])
def test_depolarizing_closed_form(rng, p, d):
    rho = random_state(d, rng)
    X = random_matrix(d, rng)
    for Y in (rho, X):
        oracle = (1 - p) * Y + p * np.trace(Y) * np.eye(d) / d
        assert_allclose(depolarizing(p, d).apply(Y), oracle, atol=1e-12)


def test_depolarizing_zero_is_identity(rng):
    X = random_matrix(2, rng)
    assert_allclose(depolarizing(0.0).apply(X), X, atol=1e-14)


def test_apply_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        apply(identity_channel(2), np.eye(3))


# --- duals ------------------------------------------------------------------------------------------------


@pytest.mark.parametrize("ch", generated_channels(), ids=repr)
def test_dual_is_unital(ch):
    assert_allclose(dual_apply(ch, np.eye(ch.dim)), np.eye(ch.dim), atol=1e-10)


def test_unitary_dual(rng):
    U = haar_unitary(3, rng)
    X = random_matrix(3, rng)
    assert_allclose(dual_apply(unitary_channel(U), X), U.conj().T @ X @ U, atol=1e-12)


def test_dual_adjoint_identity(rng):
    for _ in range(20):
        ch = random_isometry_kraus(3, 2, rng)
        X, Y = random_matrix(3, rng), random_matrix(3, rng)
        lhs = matcore.hs_inner(apply(ch, Y), X)
        rhs = matcore.hs_inner(Y, dual_apply(ch, X))
        assert abs(lhs - rhs) < 1e-10


def test_dual_of_composition_reverses_order(rng):
    f, g = random_isometry_kraus(2, 2, rng), random_isometry_kraus(2, 3, rng)
    X = random_matrix(2, rng)
    assert_allclose(compose(g, f).dual_apply(X), f.dual_apply(g.dual_apply(X)), atol=1e-10)


def test_dual_is_positive(rng):
    ch = random_isometry_kraus(3, 2, rng)
    B = random_matrix(3, rng)
    assert matcore.is_psd(dual_apply(ch, B @ B.conj().T))


# --- validation ------------------------------------------------------------------------------------------------


def test_validate_identity_passes_with_zero_residuals():
    rep = validate(KrausChannel((np.eye(2),)))
    assert rep.passed and rep.tp_residual == 0


def test_validate_detects_trace_loss():
    rep = validate(KrausChannel((np.diag([1.0, 0.5]),)))
    assert not rep.passed and not rep.tp_ok
    assert rep.tp_residual == pytest.approx(0.75)


@pytest.mark.parametrize("seed", range(5))
def test_random_kraus_validates(seed):
    ch = build(ChannelSpec("random_kraus", dim=3, kraus_count=2, seed=seed))
    assert validate(ch).passed


@pytest.mark.parametrize("ch", generated_channels(), ids=repr)
def test_generated_channels_are_cptp_and_trace_preserving(ch, rng):
    assert validate(ch).passed
    for _ in range(5):
        rho = random_state(ch.dim, rng)
        out = ch.apply(rho)
        assert abs(np.trace(out) - 1) < 1e-10
        assert matcore.is_psd(out)
        X = random_matrix(ch.dim, rng)
        assert matcore.trace_norm(ch.apply(X)) <= matcore.trace_norm(X) + 1e-9


# --- composition ---------------------------------------------------------------------------------------------------


def test_compose_with_identity(rng):
    ch = random_isometry_kraus(2, 2, rng)
    X = random_matrix(2, rng)
    assert_allclose(compose(ch, identity_channel(2)).apply(X), ch.apply(X), atol=1e-12)


def test_flip_squared_is_dephasing():
    F2 = compose(amplitude_flip(2), amplitude_flip(2))
    assert_allclose(F2.apply(np.diag([0.3, 0.7])), np.diag([0.3, 0.7]))
    assert_allclose(F2.apply(np.array([[0, 1], [0, 0]])), np.zeros((2, 2)))


def test_compose_matches_sequential_application_and_associates(rng):
    f, g, h = (random_isometry_kraus(2, 2, rng) for _ in range(3))
    X = random_matrix(2, rng)
    assert_allclose(compose(g, f).apply(X), g.apply(f.apply(X)), atol=1e-10)
    left = compose(compose(h, g), f).apply(X)
    right = compose(h, compose(g, f)).apply(X)
    assert_allclose(left, right, atol=1e-10)


def test_compose_prunes_zero_kraus_operators():
    F2 = compose(amplitude_flip(2), amplitude_flip(2))
    # |0><1| |0><1| = 0 and |1><0| |1><0| = 0 are dropped
    assert len(F2.kraus_ops) == 2


def test_compose_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        compose(identity_channel(2), identity_channel(3))


# --- transfer matrices -------------------------------------------------------------------------------------------------


def test_identity_transfer():
    assert_allclose(transfer_matrix(identity_channel(3)), np.eye(9))


def test_unitary_transfer_on_basis(rng):
    U = haar_unitary(2, rng)
    T = transfer_matrix(unitary_channel(U))
    assert_allclose(T, np.kron(U.conj(), U), atol=1e-14)
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = 1
            assert_allclose(T @ vec(E), vec(U @ E @ U.conj().T), atol=1e-12)


def test_transfer_definition(rng):
    ch = random_isometry_kraus(3, 3, rng)
    T = transfer_matrix(ch)
    for _ in range(10):
        X = random_matrix(3, rng)
        assert np.abs(T @ vec(X) - vec(ch.apply(X))).max() < 1e-11


def test_transfer_to_kraus_and_choi_roundtrip(rng):
    ch = random_isometry_kraus(2, 3, rng)
    back = transfer_to_kraus(ch.transfer)
    X = random_matrix(2, rng)
    assert_allclose(back.apply(X), ch.apply(X), atol=1e-10)
    again = choi_to_kraus(ch.choi(), 2)
    assert_allclose(again.apply(X), ch.apply(X), atol=1e-10)


# --- specs and builders ---------------------------------------------------------------------------------------------------


def test_build_is_deterministic_per_seed():
    spec = ChannelSpec("haar_random_unitary", dim=3, seed=9)
    assert_allclose(build(spec, 4).kraus_ops[0], build(spec, 4).kraus_ops[0])
    assert not np.allclose(build(spec, 4).kraus_ops[0], build(spec, 5).kraus_ops[0])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "depolarizing"},
        {"kind": "depolarizing", "p": 1.5},
        {"kind": "amplitude_damping", "p": -0.1},
        {"kind": "unitary"},
        {"kind": "explicit_kraus"},
        {"kind": "teleport"},
        {"kind": "random_kraus", "kraus_count": 0},
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(InvalidInput):
        spec = ChannelSpec(**kwargs)
        build(spec)


def test_non_unitary_rejected():
    with pytest.raises(InvalidInput):
        build(ChannelSpec("unitary", unitary=np.diag([1.0, 2.0])))


def test_spec_json_roundtrip(rng):
    U = haar_unitary(2, rng)
    for spec in [
        ChannelSpec("depolarizing", p=0.2, dim=3),
        ChannelSpec("unitary", dim=2, unitary=U),
        ChannelSpec("explicit_kraus", dim=2, kraus=amplitude_damping(0.3).kraus_ops),
        ChannelSpec("random_kraus", dim=2, kraus_count=3, seed=17),
    ]:
        data = json.loads(json.dumps(spec.to_json()))
        back = ChannelSpec.from_json(data)
        X = random_matrix(spec.dim, rng)
        assert_allclose(build(back, 1).apply(X), build(spec, 1).apply(X), atol=1e-14)


def test_channel_json_roundtrip(rng):
    ch = random_isometry_kraus(2, 2, rng)
    back = KrausChannel.from_json(json.loads(json.dumps(ch.to_json())))
    for V, W in zip(ch.kraus_ops, back.kraus_ops):
        assert np.array_equal(V, W)


def test_mean_channel_is_convex_combination(rng):
    f, g = random_isometry_kraus(2, 2, rng), random_isometry_kraus(2, 1, rng)
    X = random_matrix(2, rng)
    m = mean_channel([f, g], [0.3, 0.7])
    assert_allclose(m.apply(X), 0.3 * f.apply(X) + 0.7 * g.apply(X), atol=1e-12)


def test_direct_sum_and_conjugate(rng):
    f, g = random_isometry_kraus(2, 2, rng), random_isometry_kraus(1, 1, rng)
    s = direct_sum(f, g)
    X = np.zeros((3, 3), dtype=complex)
    X[:2, :2] = random_state(2, rng)
    assert_allclose(s.apply(X)[:2, :2], f.apply(X[:2, :2]), atol=1e-12)
    U = haar_unitary(3, rng)
    c = conjugate(s, U, U.conj().T)
    assert_allclose(c.apply(U @ X @ U.conj().T), U @ s.apply(X) @ U.conj().T, atol=1e-12)


def test_family_batched_transfers_match_single_builds():
    fam = ChannelFamily(ChannelSpec("haar_random_unitary", dim=2, seed=3))
    syms = [0, 17, 2**31 + 5]
    batch = fam.transfers(syms)
    for T, s in zip(batch, syms):
        assert_allclose(T, fam[s].transfer, atol=1e-13)


# --- Haar sampler ------------------------------------------------------------------------------------------------------------


def test_haar_unitary_is_unitary(rng):
    U = haar_unitary(4, rng)
    assert_allclose(U.conj().T @ U, np.eye(4), atol=1e-12)


def test_haar_twirl_of_state_is_maximally_mixed():
    rho = np.diag([1.0, 0.0])
    rng = rng_for(1, 2)
    acc = np.zeros((2, 2), dtype=complex)
    for _ in range(10_000):
        U = haar_unitary(2, rng)
        acc += U @ rho @ U.conj().T
    assert matcore.trace_distance(acc / 10_000, np.eye(2) / 2) <= 0.05


def test_haar_left_invariance_moments():
    """U and VU agree in first and second entry moments (3 standard errors at 10^4 samples)."""
    V = haar_unitary(2, np.random.default_rng(99))
    rng_a, rng_b = rng_for(5, 0), rng_for(5, 1)
    N = 10_000
    A = np.stack([haar_unitary(2, rng_a) for _ in range(N)]).reshape(N, -1)
    B = np.stack([V @ haar_unitary(2, rng_b) for _ in range(N)]).reshape(N, -1)
    for f in (lambda Z: Z.real, lambda Z: Z.imag, lambda Z: np.abs(Z) ** 2):
        a, b = f(A), f(B)
        se = np.sqrt(a.var(axis=0) / N + b.var(axis=0) / N)
        assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 3 * se + 1e-12)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_random_kraus_is_isometric(d, k, seed):
    ch = random_isometry_kraus(d, k, np.random.default_rng(seed))
    S = sum(V.conj().T @ V for V in ch.kraus_ops)
    assert np.abs(S - np.eye(d)).max() < 1e-12
