import math

import numpy as np
import pytest

from conic_splitter.apps import (DEFAULT_OPTIONS, PROBE_OPTIONS, with_options, baseline_max_min, beam_directions, bisection_steps,
                                 group_sparse_beamforming, is_feasible, max_min_rate, min_power,
                                 normalize_instance, power_control_program, sinr_upper_bound)
from conic_splitter.exceptions import InputError
from conic_splitter.network import PowerModelConfig
from conic_splitter.solver import Status, solve
from conic_splitter.stuffing import NetworkInstance, NetworkShape, achieved_sinr

# bisection compares against closed forms, so probes must be tighter than the bisection step
TIGHT_PROBES = with_options(PROBE_OPTIONS, eps=1e-6, max_iters=100000)


def single_user(h, sigma, gamma, P):
    h = np.atleast_1d(np.asarray(h, dtype=complex))
    return NetworkInstance(NetworkShape(1, 1, (h.size,)), h[None, :], [P], [sigma], [gamma])


def orthogonal_pair(a=1.5, b=0.7, sigma=(0.3, 0.5), gamma=(2.0, 3.0), P=(5.0, 5.0)):
    """Two single-antenna RAUs, each user hears only its own."""
    H = np.array([[a, 0.0], [0.0, 1j * b]])
    return NetworkInstance(NetworkShape(2, 2, (1, 1)), H, list(P), list(sigma), list(gamma))


def test_single_user_closed_form(rng):
    for _ in range(5):
        h = rng.normal(size=3) + 1j * rng.normal(size=3)
        sigma, gamma = rng.uniform(0.2, 2), 10 ** rng.uniform(-1, 1)
        target = gamma * sigma ** 2 / np.sum(np.abs(h) ** 2)
        r = min_power(single_user(h, sigma, gamma, 3 * target))
        assert r.status == Status.OPTIMAL
        assert r.total_power == pytest.approx(target, rel=1e-2)
        # the beamformer is matched to the channel
        v = r.solution.beamformers[0]
        assert abs(np.vdot(h, v)) == pytest.approx(np.linalg.norm(h) * np.linalg.norm(v), rel=1e-3)


def test_single_user_infeasible():
    r = min_power(single_user([1.0, 1j], 1.0, 4.0, 1.0))
    assert r.status == Status.PRIMAL_INFEASIBLE
    assert r.certificate.valid
    assert r.solution is None and math.isnan(r.total_power)


def test_orthogonal_pair_closed_form():
    inst = orthogonal_pair()
    expected = 2.0 * 0.3 ** 2 / 1.5 ** 2 + 3.0 * 0.5 ** 2 / 0.7 ** 2
    r = min_power(inst)
    assert r.total_power == pytest.approx(expected, rel=1e-2)
    tight = min_power(inst, with_options(DEFAULT_OPTIONS, eps=1e-6, max_iters=100000))
    np.testing.assert_allclose(tight.solution.sinr, inst.gamma, rtol=1e-3)


def test_normalize_instance():
    inst = orthogonal_pair(P=(2.0, 8.0))
    n, scale = normalize_instance(inst)
    assert scale == 8.0
    np.testing.assert_array_equal(n.sigma, 1.0)
    np.testing.assert_allclose(n.P, [0.25, 1.0])
    # SINR of a beamformer is unchanged once it is mapped back by sqrt(scale)
    V = np.array([[0.3, 0.1j], [0.2, 0.5]])
    np.testing.assert_allclose(achieved_sinr(inst.channels, np.sqrt(scale) * V, inst.sigma),
                               achieved_sinr(n.channels, V, n.sigma))


def test_badly_scaled_single_user():
    # hundreds of watts and large noise solve like any unit-scale instance
    target = 11.08 * 2.948 ** 2 / 0.2666 ** 2
    r = min_power(single_user(0.2666, 2.948, 11.08, 7.35 * target))
    assert r.total_power == pytest.approx(target, rel=1e-2)
    np.testing.assert_allclose(r.solution.sinr, 11.08, rtol=2e-2)


def test_is_feasible_threshold():
    assert is_feasible(single_user(1.0, 1.0, 1.0, 1.1))[0]
    assert not is_feasible(single_user(1.0, 1.0, 1.0, 0.9))[0]


def test_bisection_steps_and_single_user_max_min():
    inst = single_user([1.0, 1.0], 1.0, 1.0, 2.0)       # gamma* = P |h|^2 / sigma^2 = 4
    hi, tol = 10.0, 0.01
    r = max_min_rate(inst, tol=tol, gamma_hi=hi, opts=TIGHT_PROBES)
    assert r.probes == bisection_steps(hi, tol) == math.ceil(math.log2(hi / tol))
    assert abs(r.gamma - 4.0) <= 2 * tol
    assert r.min_rate == pytest.approx(math.log2(1 + r.gamma))
    assert sinr_upper_bound(inst) == pytest.approx(4.0)


def test_orthogonal_max_min_schemes_agree():
    inst = orthogonal_pair()
    expected = min(5.0 * 1.5 ** 2 / 0.3 ** 2, 5.0 * 0.7 ** 2 / 0.5 ** 2)
    tol = 0.01
    opt = max_min_rate(inst, tol=tol, opts=TIGHT_PROBES)
    assert abs(opt.gamma - expected) <= 2 * tol
    for scheme in ("ZFBF", "RZF", "MRT"):
        base = baseline_max_min(inst, scheme, tol=tol, opts=TIGHT_PROBES)
        assert abs(base.gamma - expected) <= 2 * tol, scheme
        assert np.min(base.sinr) >= base.gamma * (1 - 1e-3)


def test_loose_probes_overshoot_high_targets():
    # at gamma ~ 10 the SINR rows barely move with gamma, so eps = 1e-3 lets
    # the bisection settle a few percent high; the tight run does not
    inst = orthogonal_pair()
    loose = max_min_rate(inst, tol=0.01)
    tight = max_min_rate(inst, tol=0.01, opts=TIGHT_PROBES)
    assert loose.gamma >= tight.gamma
    assert np.min(loose.sinr) < loose.gamma


def test_beam_directions():
    rng = np.random.default_rng(1)
    inst = NetworkInstance(NetworkShape.uniform(4, 3, 1), rng.normal(size=(3, 4)) + 0j,
                           np.ones(4), np.ones(3), np.ones(3))
    W = beam_directions(inst, "ZFBF")
    np.testing.assert_allclose(np.linalg.norm(W, axis=1), 1.0)
    cross = np.conj(inst.channels) @ W.T
    np.testing.assert_allclose(cross - np.diag(np.diag(cross)), 0.0, atol=1e-12)
    with pytest.raises(InputError):
        beam_directions(inst, "nope")
    wide = NetworkInstance(NetworkShape.uniform(2, 3, 1), np.ones((3, 2)) + 0j, np.ones(2),
                           np.ones(3), np.ones(3))
    with pytest.raises(InputError):
        beam_directions(wide, "ZFBF")


def test_power_control_program_orthogonal():
    inst = orthogonal_pair()
    W = beam_directions(inst, "MRT")
    r = solve(power_control_program(inst, W, 5.0), DEFAULT_OPTIONS)
    assert r.status == Status.OPTIMAL
    r = solve(power_control_program(inst, W, 1e3), DEFAULT_OPTIONS)
    assert r.status == Status.PRIMAL_INFEASIBLE
    with pytest.raises(InputError):
        power_control_program(inst, W, 0.0)


def test_group_sparse_switches_off_useless_rau():
    # RAU 2 barely reaches anyone; switching it off costs almost nothing
    H = np.array([[1.0, 0.2, 1e-3], [0.1, 1.0, 1e-3]], dtype=complex)
    inst = NetworkInstance(NetworkShape(3, 2, (1, 1, 1)), H, [4.0, 4.0, 4.0], [0.5, 0.5], [1.0, 1.0],
                           omega=[1.0, 1.0, 1.0])
    cfg = PowerModelConfig()
    rep = group_sparse_beamforming(inst, cfg)
    assert rep.status == Status.OPTIMAL
    assert 2 not in rep.active
    assert rep.trace[0].rau == 2 and rep.trace[0].feasible
    np.testing.assert_array_equal(rep.beamformers[:, 2], 0.0)
    assert rep.network_power == pytest.approx(cfg.network_power(rep.rau_power, [l in rep.active for l in range(3)]))
    assert 0 < rep.normalized_power < 1
    full = min_power(inst)
    assert rep.network_power < cfg.network_power(full.solution.rau_power, [True] * 3)


def test_group_sparse_infeasible():
    inst = single_user(1.0, 1.0, 10.0, 1.0)
    assert group_sparse_beamforming(inst).status == Status.PRIMAL_INFEASIBLE
