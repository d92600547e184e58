import numpy as np
import pytest

from dse import rng as rngmod
from dse.errors import ContractViolation, DivergenceError
from dse.metrics import consensus_distance_sq
from dse.optimizers import (
    AlgoParams,
    Constant,
    Decay,
    Halving,
    NodeState,
    SwarmState,
    communicate,
    draw_batch,
    local_step_mvr,
    mvr_update,
    run,
    run_dlsgd,
    run_dse_mvr,
    run_dse_sgd,
    run_dsgd,
    tau_prev,
)
from dse.problems import GradientOracle, LocalShard, Problem, build_problem, generate_synthetic, make_shards, sample_batch
from dse.theory import max_gamma_dse_mvr
from dse.topology import build_ring, metropolis_hastings_weights, uniform_average_matrix


# -- helpers -----------------------------------------------------------------

def central_gd(problem, x0, gamma, steps):
    """Plain gradient descent on F = mean_i f_i, written against the raw shards."""
    xs = [np.array(x0, dtype=float)]
    for _ in range(steps):
        x = xs[-1]
        g = np.zeros_like(x)
        for o in problem.oracles:
            a, y = o.shard.features, o.shard.labels
            g += a.T @ (a @ x - y) / len(y)
        xs.append(x - gamma * g / problem.n_nodes)
    return np.array(xs)


class Recorder:
    def __init__(self):
        self.events = []

    def __call__(self, ev):
        self.events.append(
            dict(
                t=ev.t,
                gamma=ev.gamma,
                xbar_prev=ev.x_prev.mean(axis=0),
                vbar_prev=ev.v_prev.mean(axis=0),
                x=ev.swarm.x.copy(),
                v=ev.swarm.v.copy(),
                y=ev.swarm.y.copy(),
                h=ev.swarm.h.copy(),
                x_ckpt=ev.swarm.x_ckpt.copy(),
                h_prev=ev.swarm.h_prev.copy(),
                y_prev=ev.swarm.y_prev.copy(),
                comm=ev.communicated,
                comm_rounds=ev.swarm.comm_rounds,
                swarm_t=ev.swarm.t,
            )
        )

    def xbars(self, x0):
        return np.array([x0] + [e["x"].mean(axis=0) for e in self.events])


@pytest.fixture(scope="module")
def ls_problem():
    return build_problem("least_squares", 4, 25, 10, 0.3, seed=5, label_noise=0.1)


@pytest.fixture(scope="module")
def sig_problem():
    return build_problem("sigmoid_regression", 4, 30, 6, 0.1, seed=2, label_noise=0.3)


# -- small operations ----------------------------------------------------------

@pytest.mark.parametrize("t,tau,out", [(5, 3, 3), (6, 3, 6), (0, 7, 0), (13, 1, 13)])
def test_tau_prev(t, tau, out):
    assert tau_prev(t, tau) == out


def _node(oracle, x, v):
    z = np.zeros_like(x)
    return NodeState(x, v, z, z, x.copy(), z, z)


def test_local_step_alpha_one_is_sgd(sig_problem):
    o = sig_problem.oracles[0]
    x = np.full(o.dim, 0.1)
    v = np.arange(o.dim, dtype=float)
    batch = [0, 3, 3]
    out = local_step_mvr(_node(o, x, v), o, 0.2, 1.0, batch)
    np.testing.assert_array_equal(out.x, x - 0.2 * v)
    np.testing.assert_array_equal(out.v, o.stochastic_gradient(out.x, batch))


def test_local_step_full_batch_identity(sig_problem):
    o = sig_problem.oracles[1]
    x = np.linspace(-0.5, 0.5, o.dim)
    v = o.full_gradient(x)
    out = local_step_mvr(_node(o, x, v), o, 0.3, 0.37, None)
    expected = o.full_gradient(out.x) + (1 - 0.37) * (v - o.full_gradient(x))
    np.testing.assert_allclose(out.v, expected, atol=1e-14, rtol=0)
    np.testing.assert_allclose(out.v, o.full_gradient(out.x), atol=1e-14, rtol=0)


def test_local_step_zero_gamma_shared_batch():
    a = np.array([[1.0, -1.0], [0.5, 2.0]])
    o = GradientOracle(LocalShard(0, a, np.array([0.0, 1.0])), "sigmoid_regression")
    x = np.array([0.3, -0.1])
    v = np.array([1.0, 2.0])
    out = local_step_mvr(_node(o, x, v), o, 0.0, 0.25, [1])
    g = o.stochastic_gradient(x, [1])
    np.testing.assert_array_equal(out.x, x)
    np.testing.assert_allclose(out.v, g + 0.75 * (v - g), atol=1e-15)


def test_params_reject_bad_horizon():
    with pytest.raises(ContractViolation, match="T mod tau"):
        AlgoParams(gamma=0.1, tau=2, T=101)


def test_schedules():
    h = Halving(0.8, 100)
    assert [h(0), h(49), h(50), h(74), h(75), h(99)] == [0.8, 0.8, 0.4, 0.4, 0.2, 0.2]
    d = Decay(0.5, 5, 0.99)
    assert d(4) == 0.5 and d(5) == pytest.approx(0.495) and d(12) == pytest.approx(0.5 * 0.99**2)
    assert Constant(3.0)(123) == 3.0


# -- communicate --------------------------------------------------------------

def _random_swarm(rng, n, d):
    s = SwarmState.initial(rng.standard_normal(d), n)
    s.x = s.x + rng.standard_normal((n, d))
    s.v = rng.standard_normal((n, d))
    return s


def test_first_communication_tracks_accumulated_descent(ls_problem):
    W = metropolis_hastings_weights(build_ring(4))
    tau = 3
    rec = Recorder()
    gammas = Halving(0.05, 6, (0.4,))  # varying gamma inside the first round
    params = AlgoParams(gamma=gammas, tau=tau, T=6, b=2, alpha=0.3)
    run_dse_mvr(ls_problem, W, params, seed=1, observer=rec)
    acc = sum(e["gamma"] * e["vbar_prev"] for e in rec.events[:tau])
    first = rec.events[tau - 1]
    assert first["comm"]
    np.testing.assert_allclose(first["y"].mean(axis=0), first["h"].mean(axis=0), atol=1e-12, rtol=0)
    np.testing.assert_allclose(first["h"].mean(axis=0), acc, atol=1e-12, rtol=0)


def test_communicate_with_average_matrix_reaches_consensus():
    rng = np.random.default_rng(0)
    s = _random_swarm(rng, 5, 3)
    communicate(s, uniform_average_matrix(5), 0.1)
    assert consensus_distance_sq(s.x) <= 1e-28
    assert s.comm_rounds == 1 and s.t == 1


def test_communicate_single_node_is_local_step():
    rng = np.random.default_rng(1)
    s = _random_swarm(rng, 1, 4)
    s.x_ckpt = s.x + rng.standard_normal((1, 4))
    # a single node always carries y = h from the previous round
    s.h_prev = rng.standard_normal((1, 4))
    s.y_prev = s.h_prev.copy()
    expected = s.x - 0.2 * s.v
    communicate(s, uniform_average_matrix(1), 0.2)
    np.testing.assert_allclose(s.x, expected, atol=1e-14, rtol=0)


def test_communicate_dimension_mismatch():
    s = _random_swarm(np.random.default_rng(0), 3, 2)
    with pytest.raises(ContractViolation):
        communicate(s, uniform_average_matrix(4), 0.1)


def test_communicate_reset_uses_full_gradient(ls_problem):
    s = _random_swarm(np.random.default_rng(2), 4, 10)
    communicate(s, metropolis_hastings_weights(build_ring(4)), 0.1, ls_problem.oracles)
    for i, o in enumerate(ls_problem.oracles):
        assert np.array_equal(s.v[i], o.full_gradient(s.x[i]))


def test_communicate_reads_snapshot():
    # mixing must not observe partially updated rows
    rng = np.random.default_rng(3)
    s = _random_swarm(rng, 4, 2)
    w = metropolis_hastings_weights(build_ring(4)).w
    half = s.x - 0.1 * s.v
    h = s.x_ckpt - half
    y = w @ (s.y_prev + h - s.h_prev)
    x = w @ (s.x_ckpt - y)
    communicate(s, w, 0.1)
    np.testing.assert_array_equal(s.x, x)
    np.testing.assert_array_equal(s.y, y)


# -- full runs ------------------------------------------------------------------

@pytest.mark.parametrize("algo", ["dse_mvr", "dse_sgd", "dsgd"])
def test_centralized_reduction(ls_problem, algo):
    gamma = 0.05
    params = AlgoParams(gamma=gamma, tau=1, T=100, b=1, alpha=0.5, full_batch=True)
    rec = Recorder()
    x0 = np.zeros(10)
    run(algo, ls_problem, uniform_average_matrix(4), params, seed=0, observer=rec)
    ref = central_gd(ls_problem, x0, gamma, 100)
    assert np.max(np.abs(rec.xbars(x0) - ref)) <= 1e-10


def test_dlsgd_identical_shards_matches_gd():
    data = generate_synthetic(3, 30, 5, "least_squares", 0.2)
    shards = make_shards(data, [np.arange(30)] * 4)
    p = Problem([GradientOracle(s, "least_squares") for s in shards], data)
    rec = Recorder()
    run_dlsgd(p, uniform_average_matrix(4), AlgoParams(gamma=0.1, tau=4, T=100, full_batch=True), seed=0, observer=rec)
    assert np.max(np.abs(rec.xbars(np.zeros(5)) - central_gd(p, np.zeros(5), 0.1, 100))) <= 1e-10


@pytest.mark.parametrize("algo", ["dse_mvr", "dse_sgd", "dsgd", "dlsgd"])
def test_zero_step_is_stationary(sig_problem, algo):
    W = metropolis_hastings_weights(build_ring(4))
    r = run(algo, sig_problem, W, AlgoParams(gamma=0.0, tau=3, T=30, b=2, alpha=0.4), seed=3)
    assert np.array_equal(r.swarm.x, np.zeros_like(r.swarm.x))
    assert r.rows[0].loss == r.rows[-1].loss


def test_dlsgd_tau_one_equals_dsgd(sig_problem):
    W = metropolis_hastings_weights(build_ring(4))
    p = AlgoParams(gamma=0.2, tau=1, T=60, b=3)
    a = run_dlsgd(sig_problem, W, p, seed=4)
    b = run_dsgd(sig_problem, W, p, seed=4)
    assert np.max(np.abs(a.swarm.x - b.swarm.x)) <= 1e-12
    assert a.swarm.comm_rounds == b.swarm.comm_rounds == 60


def test_mvr_degenerates_to_dse_sgd(sig_problem):
    W = metropolis_hastings_weights(build_ring(4))
    base = dict(gamma=0.2, tau=3, T=201 - 201 % 3, b=2)
    ra, rb = Recorder(), Recorder()
    run_dse_mvr(sig_problem, W, AlgoParams(alpha=1.0, reset=False, **base), seed=8, observer=ra)
    run_dse_sgd(sig_problem, W, AlgoParams(**base), seed=8, observer=rb)
    dev = max(np.max(np.abs(ea["x"] - eb["x"])) for ea, eb in zip(ra.events, rb.events))
    assert dev <= 1e-12


def test_single_node_dse_sgd_is_minibatch_sgd(sig_problem):
    o = sig_problem.oracles[2]
    p = Problem([o])
    T, gamma, b, seed = 50, 0.3, 3, 11
    r = run_dse_sgd(p, uniform_average_matrix(1), AlgoParams(gamma=gamma, tau=1, T=T, b=b), seed=seed)
    x = np.zeros(o.dim)
    g = o.stochastic_gradient(x, sample_batch(rngmod.stream(seed, 0, "batch", 0), o.n, b))
    for t in range(T):
        x = x - gamma * g
        g = o.stochastic_gradient(x, sample_batch(rngmod.stream(seed, 0, "batch", t + 1), o.n, b))
    assert np.max(np.abs(r.swarm.x[0] - x)) <= 1e-12


@pytest.mark.parametrize("algo", ["dse_mvr", "dse_sgd"])
def test_average_iterate_and_tracking_identities(sig_problem, algo):
    W = metropolis_hastings_weights(build_ring(4))
    rec = Recorder()
    run(algo, sig_problem, W, AlgoParams(gamma=0.3, tau=3, T=90, b=2, alpha=0.2), seed=6, observer=rec)
    for e in rec.events:
        step = e["xbar_prev"] - e["gamma"] * e["vbar_prev"]
        assert np.linalg.norm(e["x"].mean(axis=0) - step) <= 1e-10
        if e["comm"]:
            assert np.max(np.abs(e["y"].mean(axis=0) - e["h"].mean(axis=0))) <= 1e-12


def test_reset_exactness_and_checkpoint_coherence(sig_problem):
    W = metropolis_hastings_weights(build_ring(4))
    tau = 4
    rec = Recorder()
    run_dse_mvr(sig_problem, W, AlgoParams(gamma=0.2, tau=tau, T=40, b=2, alpha=0.3), seed=2, observer=rec)
    prev = None
    for e in rec.events:
        assert e["comm_rounds"] == e["swarm_t"] // tau
        if e["comm"]:
            for i, o in enumerate(sig_problem.oracles):
                assert np.array_equal(e["v"][i], o.full_gradient(e["x"][i]))
            np.testing.assert_array_equal(e["x_ckpt"], e["x"])
        elif prev is not None:
            for k in ("x_ckpt", "h_prev", "y_prev"):
                np.testing.assert_array_equal(e[k], prev[k])
        prev = e


def test_mvr_direction_conditional_unbiasedness(sig_problem):
    # E[v_{t+1}] = grad(x_{t+1}) + (1 - alpha)(v_t - grad(x_t)) at any frozen state
    W = metropolis_hastings_weights(build_ring(4))
    r = run_dse_mvr(sig_problem, W, AlgoParams(gamma=0.2, tau=5, T=10, b=2, alpha=0.3), seed=1)
    i, o = 1, sig_problem.oracles[1]
    x, v = r.swarm.x[i].copy(), r.swarm.v[i] + 0.05  # perturb so v != grad
    gamma, alpha, b, M = 0.2, 0.3, 2, 4000
    x_new = x - gamma * v
    gen = np.random.default_rng(0)
    draws = np.stack([mvr_update(o, x_new, x, v, alpha, gen.integers(0, o.n, size=b)) for _ in range(M)])
    target = o.full_gradient(x_new) + (1 - alpha) * (v - o.full_gradient(x))
    se = draws.std(axis=0, ddof=1) / np.sqrt(M)
    assert np.all(np.abs(draws.mean(axis=0) - target) <= 5 * se)


def test_consensus_stays_bounded_within_theory_step(ls_problem):
    W = metropolis_hastings_weights(build_ring(4))
    L = ls_problem.estimate_L()
    tau = 2
    gamma = max_gamma_dse_mvr(L, W.lam, tau)
    for seed in range(5):
        r = run_dse_mvr(ls_problem, W, AlgoParams(gamma=gamma, tau=tau, T=2000, b=2, alpha=0.5), seed=seed, cadence=10)
        cons = np.array([row.consensus_sq for row in r.rows])
        assert np.all(np.isfinite(cons))
        assert cons[len(cons) // 2 :].max() <= 10 * cons[: len(cons) // 2].max() + 1e-12


def test_divergence_reports_iteration(ls_problem):
    W = metropolis_hastings_weights(build_ring(4))
    with pytest.raises(DivergenceError) as exc:
        run_dsgd(ls_problem, W, AlgoParams(gamma=1e6, tau=1, T=500, b=1), seed=0)
    assert 1 <= exc.value.iteration <= 500


def test_metric_rows_follow_cadence_and_rounds(sig_problem):
    W = metropolis_hastings_weights(build_ring(4))
    r = run_dse_sgd(sig_problem, W, AlgoParams(gamma=0.1, tau=3, T=30, b=1), seed=0)
    ts = [row.t for row in r.rows]
    assert ts == list(range(31))
    assert all(row.comm_rounds == row.t // 3 for row in r.rows)
    r = run_dsgd(sig_problem, W, AlgoParams(gamma=0.1, tau=3, T=30, b=1), seed=0, cadence=7)
    assert [row.t for row in r.rows] == [0, 7, 14, 21, 28, 30]
    assert all(row.comm_rounds == row.t for row in r.rows)


def test_runs_are_deterministic(sig_problem):
    W = metropolis_hastings_weights(build_ring(4))
    p = AlgoParams(gamma=0.2, tau=3, T=30, b=2, alpha=Decay(0.5, 3))
    a = run_dse_mvr(sig_problem, W, p, seed=12)
    b = run_dse_mvr(sig_problem, W, p, seed=12)
    assert a.rows == b.rows
    assert a.swarm.x.tobytes() == b.swarm.x.tobytes()


def test_batches_shared_across_algorithms(sig_problem):
    o = sig_problem.oracles[0]
    a = draw_batch(o, 5, 0, 17, 4, False)
    b = draw_batch(o, 5, 0, 17, 4, False)
    np.testing.assert_array_equal(a, b)
    assert draw_batch(o, 5, 0, 17, 4, True) is None


def test_mvr_requires_alpha(sig_problem):
    with pytest.raises(ContractViolation):
        run_dse_mvr(sig_problem, metropolis_hastings_weights(build_ring(4)), AlgoParams(gamma=0.1, tau=1, T=3), seed=0)
