import itertools

import numpy as np
import pytest

from conic_splitter.cones import ConeKind
from conic_splitter.exceptions import DimensionError, InputError, UsageError
from conic_splitter.solver import SolverOptions, Status, solve
from conic_splitter.stuffing import (Field, NetworkInstance, NetworkShape, Objective,
                                     achieved_sinr, build_template, complex_to_real, get_template,
                                     load_template, recover_beamformers, save_template, stuff)

from oracle import dense_standard_form


def random_instance(rng, shape, complex_field=True):
    H = rng.normal(size=(shape.K, shape.N))
    if complex_field:
        H = H + 1j * rng.normal(size=(shape.K, shape.N))
    return NetworkInstance(shape, H, rng.uniform(0.5, 3, shape.L), rng.uniform(0.2, 2, shape.K),
                           10 ** rng.uniform(-0.5, 1, shape.K))


def small_shapes():
    out = []
    for L, K in itertools.product(range(1, 5), range(1, 5)):
        for ants in itertools.product((1, 2), repeat=L):
            out.append(NetworkShape(L, K, ants))
    return out


def test_matches_dense_transcription():
    rng = np.random.default_rng(7)
    shapes = small_shapes()
    for shape in shapes:
        for complex_field in (False, True):
            for _ in range(50 if shape.L * shape.K <= 2 else 2):
                inst = random_instance(rng, shape, complex_field)
                t = get_template(shape, inst.field)
                p = stuff(t, inst)
                A, b, c, cones = dense_standard_form(shape, inst.channels, inst.P, inst.sigma,
                                                     inst.gamma, complex_field)
                np.testing.assert_array_equal(p.A.toarray(), A)
                np.testing.assert_array_equal(p.b, b)
                np.testing.assert_array_equal(p.c, c)
                assert all(k == ConeKind.SECOND_ORDER for k, _ in p.cone.blocks)
                assert [d for _, d in p.cone.blocks] == cones


def test_dimensions_formula():
    shape = NetworkShape(3, 4, (1, 2, 2))
    N, L, K = 5, 3, 4
    t = build_template(shape, Field.COMPLEX)
    assert t.n == 1 + L + K + 2 * N * K
    assert t.m == (L + K) + (2 * N * K + 1) + sum(2 * K * a + 1 for a in shape.antennas) \
        + K * (2 * K + 2)


def test_stuffing_reuses_pattern_and_keeps_zeros(rng):
    shape = NetworkShape.uniform(3, 3, 2)
    t = get_template(shape, Field.COMPLEX)
    inst = random_instance(rng, shape)
    inst.channels[0, 0] = 0.0
    p = stuff(t, inst)
    # the pattern arrays are views of the template's, not copies
    assert np.shares_memory(p.A.indices, t.skeleton.A.indices)
    assert np.shares_memory(p.A.indptr, t.skeleton.A.indptr)
    assert p.A.nnz == t.skeleton.A.nnz
    # template data is untouched
    assert not np.shares_memory(p.A.data, t.skeleton.A.data)


def test_template_cache():
    shape = NetworkShape.uniform(2, 2, 1)
    assert get_template(shape, Field.REAL) is get_template(shape, Field.REAL)
    assert get_template(shape, Field.REAL) is not get_template(shape, Field.COMPLEX)


def test_shape_mismatch(rng):
    t = get_template(NetworkShape.uniform(2, 2, 1), Field.COMPLEX)
    with pytest.raises(InputError):
        stuff(t, random_instance(rng, NetworkShape.uniform(2, 3, 1)))


def test_real_template_rejects_complex_channels(rng):
    t = get_template(NetworkShape.uniform(2, 2, 1), Field.REAL)
    with pytest.raises(InputError):
        stuff(t, random_instance(rng, NetworkShape.uniform(2, 2, 1)))


def test_group_norm_objective(rng):
    shape = NetworkShape(2, 2, (1, 2), Objective.GROUP_NORM)
    inst = random_instance(rng, shape)
    inst.omega = np.array([0.5, 2.0])
    t = build_template(shape, inst.field)
    p = stuff(t, inst)
    np.testing.assert_array_equal(p.c[t.weight_slots], [0.5, 2.0])
    assert p.c.sum() == 2.5


def test_complex_lift():
    h = np.array([1 + 2j, -3j])
    v = np.array([0.5 - 1j, 2 + 1j])
    lifted = complex_to_real(h).T @ np.concatenate([v.real, v.imag])
    z = np.vdot(h, v)
    np.testing.assert_allclose(lifted, [z.real, z.imag])


def test_recover_beamformers_single_user():
    # matched filter: power = gamma sigma^2 / |h|^2
    shape = NetworkShape.uniform(1, 1, 1)
    inst = NetworkInstance(shape, [[2.0 - 1.0j]], [10.0], [0.5], [4.0])
    t = get_template(shape, inst.field)
    r = solve(stuff(t, inst), SolverOptions(eps=1e-7, max_iters=100000))
    sol = recover_beamformers(t, inst, r)
    assert sol.total_power == pytest.approx(4.0 * 0.25 / 5.0, rel=1e-4)
    assert sol.sinr[0] == pytest.approx(4.0, rel=1e-3)


def test_recover_needs_optimal():
    shape = NetworkShape.uniform(1, 1, 1)
    inst = NetworkInstance(shape, [[1.0]], [0.1], [1.0], [1.0])
    t = get_template(shape, inst.field)
    r = solve(stuff(t, inst))
    assert r.status == Status.PRIMAL_INFEASIBLE
    with pytest.raises(UsageError):
        recover_beamformers(t, inst, r)


def test_achieved_sinr():
    H = np.array([[1.0, 0.0], [0.0, 2.0]])
    V = np.array([[1.0, 1.0], [0.0, 1.0]])
    # user 0: |1|^2 / (|0|^2 + 1); user 1: |2|^2 / (|2|^2 + 1)
    np.testing.assert_allclose(achieved_sinr(H, V, [1.0, 1.0]), [1.0, 0.8])


def test_template_save_load(tmp_path, rng):
    shape = NetworkShape(2, 3, (2, 1))
    t = build_template(shape, Field.COMPLEX)
    save_template(t, tmp_path / "t.cone")
    t2 = load_template(tmp_path / "t.cone")
    inst = random_instance(rng, shape)
    p1, p2 = stuff(t, inst), stuff(t2, inst)
    np.testing.assert_array_equal(p1.A.toarray(), p2.A.toarray())
    np.testing.assert_array_equal(p1.b, p2.b)
    assert p1.cone == p2.cone


def test_instance_validation():
    shape = NetworkShape.uniform(1, 2, 1)
    with pytest.raises(DimensionError):
        NetworkInstance(shape, np.ones((2, 2)), [1.0], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(InputError):
        NetworkInstance(shape, np.ones((2, 1)), [1.0], [1.0, 1.0], [1.0, -1.0])
    with pytest.raises(InputError):
        NetworkShape(2, 1, (1,))


def test_subnetwork_and_json(rng):
    shape = NetworkShape(3, 2, (1, 2, 1))
    inst = random_instance(rng, shape)
    sub = inst.subnetwork([2, 0])
    assert sub.shape.antennas == (1, 1)
    np.testing.assert_array_equal(sub.channels[:, 0], inst.channels[:, 0])
    np.testing.assert_array_equal(sub.channels[:, 1], inst.channels[:, 3])
    back = NetworkInstance.from_json(inst.to_json())
    np.testing.assert_array_equal(back.channels, inst.channels)
    np.testing.assert_array_equal(back.gamma, inst.gamma)
