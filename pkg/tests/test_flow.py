import numpy as np
import pytest

from fieldflow.errors import ContractViolation
from fieldflow.flow import (
    FlowNetParams,
    flow_backward,
    flow_eval_times,
    flow_forward,
    flow_init,
    flow_rollout,
    flow_rollout_backward,
    load_flow_net,
    save_flow_net,
    schedule,
)
from fieldflow.nn import ParamBundle, grad_check, lstm_step, mlp_forward
from fieldflow.pod import ProjectedInputSequence, ProjectedState


def tiny_params(seed=0, r=3, hidden=8):
    rng = np.random.default_rng(seed)
    return flow_init(rng, r, hidden_dim=hidden, encoder_hidden=(10,),
                     decoder_hidden=(10,))


def tiny_seq(seed=1, r=3, k=6, delta=0.5):
    rng = np.random.default_rng(seed)
    return ProjectedInputSequence(delta=delta,
                                  coeff_profiles=rng.standard_normal((k, r)))


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def test_schedule_mid_interval():
    s = schedule(1.2, 0.5)
    assert s.k_t == 2
    assert np.allclose(s.taus, [1.0, 1.0, 0.4], atol=1e-12)


def test_schedule_zero_and_boundary():
    s0 = schedule(0.0, 0.5)
    assert s0.k_t == 0 and np.array_equal(s0.taus, [0.0])
    s1 = schedule(0.5, 0.5)
    assert s1.k_t == 1 and np.array_equal(s1.taus, [1.0, 0.0])


def test_schedule_invariants_on_random_times():
    rng = np.random.default_rng(2)
    for _ in range(20):
        t = float(rng.uniform(0, 10))
        s = schedule(t, 0.5)
        assert np.all(s.taus[:-1] == 1.0)
        assert 0.0 <= s.taus[-1] < 1.0 or (s.taus[-1] == 0.0 and len(s.taus) == 1)
        assert len(s.taus) == s.k_t + 1


def test_schedule_rejects_bad_arguments():
    with pytest.raises(ContractViolation):
        schedule(-0.1, 0.5)
    with pytest.raises(ContractViolation):
        schedule(1.0, 0.0)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def test_flow_init_default_reference_sizes():
    params = flow_init(np.random.default_rng(0), r=5)
    assert params.hidden_dim == 250
    from fieldflow.nn import mlp_widths
    assert mlp_widths(params.encoder) == [5, 500, 500, 250]
    assert mlp_widths(params.decoder) == [250, 250, 250, 250, 5]
    assert params.cell.shape("wx") == (1000, 6)
    assert params.r == 5


def test_flow_params_width_validation():
    rng = np.random.default_rng(1)
    good = tiny_params()
    with pytest.raises(ContractViolation):
        FlowNetParams(encoder=good.encoder, cell=good.cell,
                      decoder=flow_init(rng, 3, hidden_dim=9,
                                        encoder_hidden=(10,),
                                        decoder_hidden=(10,)).decoder)


# ---------------------------------------------------------------------------
# forward semantics
# ---------------------------------------------------------------------------

def test_flow_at_time_zero_is_decode_of_encode():
    params = tiny_params()
    seq = tiny_seq()
    a0 = ProjectedState(coeffs=np.array([0.3, -0.7, 1.1]))
    out = flow_forward(params, a0, seq, 0.0)
    z0, _ = mlp_forward(params.encoder, a0.coeffs[None, :])
    expected, _ = mlp_forward(params.decoder, z0)
    assert np.max(np.abs(out.coeffs - expected[0])) <= 1e-12


def test_flow_two_path_boundary_exactness():
    params = tiny_params()
    seq = tiny_seq()
    a0 = ProjectedState(coeffs=np.array([0.5, 0.2, -0.4]))
    out = flow_forward(params, a0, seq, seq.delta)  # k_t=1, tau=0 path
    # left-limit path: one cell step with full exposure, decode z_1
    z0, _ = mlp_forward(params.encoder, a0.coeffs[None, :])
    x = np.concatenate([seq.coeff_profiles[0], [1.0]])[None, :]
    z1, _, _ = lstm_step(params.cell, z0, np.zeros_like(z0), x)
    expected, _ = mlp_forward(params.decoder, z1)
    assert np.array_equal(out.coeffs, expected[0])


def test_flow_continuity_at_every_boundary():
    params = tiny_params(seed=3)
    seq = tiny_seq(seed=4)
    a0 = ProjectedState(coeffs=np.array([0.1, -0.2, 0.3]))
    for m in range(1, seq.n_profiles + 1):
        t = m * seq.delta
        left = flow_forward(params, a0, seq, t - 1e-9)
        right = flow_forward(params, a0, seq, t)
        assert np.max(np.abs(left.coeffs - right.coeffs)) <= 1e-6


def test_flow_causality_in_future_profiles():
    params = tiny_params(seed=5)
    seq = tiny_seq(seed=6)
    a0 = ProjectedState(coeffs=np.array([1.0, 0.0, -1.0]))
    base = flow_forward(params, a0, seq, 1.2)  # k_t=2, uses profiles 0..2
    edited = ProjectedInputSequence(
        delta=seq.delta,
        coeff_profiles=np.concatenate([seq.coeff_profiles[:3],
                                       99.0 * np.ones((3, 3))]))
    assert np.array_equal(base.coeffs,
                          flow_forward(params, a0, edited, 1.2).coeffs)


def test_flow_smooth_within_interval():
    params = tiny_params(seed=7)
    seq = tiny_seq(seed=8)
    a0 = ProjectedState(coeffs=np.array([0.4, 0.4, 0.4]))
    probe = np.linalg.norm(flow_forward(params, a0, seq, 1.35).coeffs
                           - flow_forward(params, a0, seq, 1.25).coeffs) / 0.1
    lipschitz = 3.0 * max(probe, 1e-6)
    for h in (1e-3, 1e-4):
        d = np.linalg.norm(flow_forward(params, a0, seq, 1.3 + h).coeffs
                           - flow_forward(params, a0, seq, 1.3).coeffs)
        assert d <= lipschitz * h


def test_flow_extrapolates_with_sufficient_coverage():
    params = tiny_params()
    seq = tiny_seq(k=12)
    a0 = ProjectedState(coeffs=np.zeros(3))
    out = flow_forward(params, a0, seq, 5.9)  # beyond a nominal T=3 horizon
    assert np.all(np.isfinite(out.coeffs))


def test_flow_insufficient_profiles_raises():
    params = tiny_params()
    seq = tiny_seq(k=2)
    a0 = ProjectedState(coeffs=np.zeros(3))
    flow_forward(params, a0, seq, 1.0)  # exactly the boundary: allowed
    with pytest.raises(ContractViolation):
        flow_forward(params, a0, seq, 1.01)
    with pytest.raises(ContractViolation):
        flow_forward(params, a0, seq, -0.5)


def test_flow_deterministic_and_stateless_across_queries():
    params = tiny_params(seed=9)
    seq = tiny_seq(seed=10)
    a0 = ProjectedState(coeffs=np.array([0.2, -0.6, 0.9]))
    first = flow_forward(params, a0, seq, 2.3)
    flow_forward(params, a0, seq, 0.7)  # unrelated queries in between
    flow_forward(params, a0, seq, 2.9)
    again = flow_forward(params, a0, seq, 2.3)
    assert np.array_equal(first.coeffs, again.coeffs)


def test_flow_eval_times_matches_per_query():
    params = tiny_params(seed=11)
    seq = tiny_seq(seed=12)
    a0 = ProjectedState(coeffs=np.array([0.3, 0.1, -0.5]))
    times = np.array([0.0, 0.25, 0.5, 1.2, 2.9, 3.0])
    batch = flow_eval_times(params, a0, seq, times)
    for i, t in enumerate(times):
        single = flow_forward(params, a0, seq, float(t))
        assert np.max(np.abs(batch[i] - single.coeffs)) <= 1e-12


def test_flow_rollout_heterogeneous_batch():
    params = tiny_params(seed=13)
    rng = np.random.default_rng(14)
    a0s = rng.standard_normal((3, 3))
    profs = rng.standard_normal((3, 4, 3))
    times = np.array([0.3, 1.7, 2.0])
    batch, _ = flow_rollout(params, a0s, profs, times, 0.5)
    for i in range(3):
        seq = ProjectedInputSequence(delta=0.5, coeff_profiles=profs[i])
        single = flow_forward(params, ProjectedState(coeffs=a0s[i]), seq,
                              float(times[i]))
        assert np.max(np.abs(batch[i] - single.coeffs)) <= 1e-12


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def _loss_through(params, module, bundle, a0s, profs, times, targets):
    parts = {"encoder": params.encoder, "cell": params.cell,
             "decoder": params.decoder}
    parts[module] = bundle
    p = FlowNetParams(**parts)
    out, cache = flow_rollout(p, a0s, profs, times, 0.5)
    diff = out - targets
    grads, _ = flow_rollout_backward(cache, diff)
    return 0.5 * float(np.sum(diff ** 2)), getattr(grads, module)


def test_flow_gradients_match_finite_differences():
    params = tiny_params(seed=15)
    rng = np.random.default_rng(16)
    a0s = rng.standard_normal((2, 3))
    profs = rng.standard_normal((2, 3, 3))
    times = np.array([1.2, 0.8])  # k_t = 2 and 1
    targets = rng.standard_normal((2, 3))
    for module in ("encoder", "cell", "decoder"):
        bundle = getattr(params, module)
        worst = grad_check(
            lambda p: _loss_through(params, module, p, a0s, profs, times, targets),
            bundle)
        assert worst <= 1e-6, module


def test_flow_initial_coefficient_gradient():
    params = tiny_params(seed=17)
    rng = np.random.default_rng(18)
    profs = rng.standard_normal((1, 3, 3))
    targets = rng.standard_normal((1, 3))

    def loss_fn(p):
        out, cache = flow_rollout(params, p["a0"][None, :], profs,
                                  np.array([1.2]), 0.5)
        diff = out - targets
        _, d_a0 = flow_rollout_backward(cache, diff)
        return 0.5 * float(np.sum(diff ** 2)), ParamBundle({"a0": d_a0[0]})

    assert grad_check(loss_fn, ParamBundle({"a0": rng.standard_normal(3)})) <= 1e-6


def test_flow_zero_upstream_gradient_gives_zero_grads():
    params = tiny_params(seed=19)
    rng = np.random.default_rng(20)
    out, cache = flow_rollout(params, rng.standard_normal((2, 3)),
                              rng.standard_normal((2, 3, 3)),
                              np.array([0.7, 1.1]), 0.5)
    grads = flow_backward(cache, np.zeros_like(out))
    assert np.all(grads.encoder.flat == 0.0)
    assert np.all(grads.cell.flat == 0.0)
    assert np.all(grads.decoder.flat == 0.0)


def test_flow_decoder_last_bias_gradient_is_ones():
    params = tiny_params(seed=21)
    rng = np.random.default_rng(22)
    out, cache = flow_rollout(params, rng.standard_normal((1, 3)),
                              rng.standard_normal((1, 3, 3)),
                              np.array([1.4]), 0.5)
    grads = flow_backward(cache, np.ones_like(out))
    assert np.array_equal(grads.decoder["b1"], np.ones(3))


def test_flow_stale_cache_detected():
    params = tiny_params(seed=23)
    rng = np.random.default_rng(24)
    out, cache = flow_rollout(params, rng.standard_normal((1, 3)),
                              rng.standard_normal((1, 3, 3)),
                              np.array([0.9]), 0.5)
    params.cell["b"] = np.ones(params.cell.shape("b")[0])
    with pytest.raises(ContractViolation):
        flow_rollout_backward(cache, np.zeros_like(out))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_flow_net_round_trip_bit_exact(tmp_path):
    params = tiny_params(seed=25)
    path = tmp_path / "flow.rxw"
    save_flow_net(path, params, {"delta": 0.5})
    loaded, meta = load_flow_net(path)
    assert meta["r"] == 3 and meta["hidden_dim"] == 8 and meta["delta"] == 0.5
    for module in ("encoder", "cell", "decoder"):
        assert np.array_equal(getattr(loaded, module).flat,
                              getattr(params, module).flat)
    seq = tiny_seq(seed=26)
    a0 = ProjectedState(coeffs=np.array([0.7, -0.3, 0.2]))
    assert np.array_equal(flow_forward(loaded, a0, seq, 1.7).coeffs,
                          flow_forward(params, a0, seq, 1.7).coeffs)


def test_load_flow_net_rejects_wrong_kind(tmp_path):
    from fieldflow.nn import save_params
    path = tmp_path / "bad.rxw"
    save_params(path, ParamBundle({"p": np.zeros(2)}), {"kind": "basis"})
    with pytest.raises(ContractViolation):
        load_flow_net(path)
