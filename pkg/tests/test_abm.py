import numpy as np
import pytest
from scipy import stats

from netepi.abm import (
    NetworkRealization,
    generate_network,
    replica_rng,
    run_ensemble,
    simulate_epidemic,
    summarize_trajectories,
)
from netepi.degree import from_weights, truncated_power_law
from netepi.errors import DomainError
from netepi.ode import EpidemicParams, StratifiedSIR, TreatmentSchedule, integrate

DIST30 = truncated_power_law(3, 1, 30)


def complete_graph(n):
    pairs = np.array([(i, j) for i in range(n) for j in range(i + 1, n)])
    return NetworkRealization(
        n=n, degrees=np.full(n, n - 1), edges_u=pairs[:, 0], edges_v=pairs[:, 1],
        node_state=np.zeros(n, dtype=np.int8))


class TestGenerateNetwork:
    def test_realized_degrees_bounded_by_targets(self):
        net = generate_network(DIST30, 5000, np.random.default_rng(0))
        assert np.all(net.realized_degrees() <= net.degrees)

    def test_adjacency_symmetric_no_self_loops(self):
        net = generate_network(DIST30, 300, np.random.default_rng(1))
        adj = net.adjacency()
        for u in range(net.n):
            assert u not in adj[u]
            for v in adj[u]:
                assert u in adj[v]

    def test_degree_one_mean_close_to_one(self):
        # with all-degree-1 stubs the only loss is the rare self-loop pair:
        # pairs ~ Binomial(n/2, 1/(n-1)), each costing 2/n of mean degree
        n = 10 ** 4
        net = generate_network(from_weights(1, [1.0]), n, np.random.default_rng(2))
        realized = net.realized_degrees().mean()
        mean_pairs = (n / 2) / (n - 1)
        sd_pairs = np.sqrt(mean_pairs)
        assert abs(realized - (1.0 - 2 * mean_pairs / n)) <= 3 * 2 * sd_pairs / n

    def test_two_nodes_single_edge(self):
        net = generate_network(from_weights(1, [1.0]), 2, np.random.default_rng(3))
        assert len(net.edges_u) == 1
        assert {int(net.edges_u[0]), int(net.edges_v[0])} == {0, 1}

    def test_degree_histogram_chi_square(self):
        n = 10 ** 4
        net = generate_network(DIST30, n, np.random.default_rng(4))
        observed = np.bincount(net.degrees, minlength=31)[1:].astype(float)
        expected = DIST30.pmf * n
        cut = int(np.searchsorted(expected < 5, True))
        if cut < len(expected):
            observed = np.concatenate([observed[:cut], [observed[cut:].sum()]])
            expected = np.concatenate([expected[:cut], [expected[cut:].sum()]])
        _, pvalue = stats.chisquare(observed, expected * observed.sum() / expected.sum())
        assert pvalue > 0.001

    def test_rejects_tiny_network(self):
        with pytest.raises(DomainError):
            generate_network(DIST30, 1, np.random.default_rng(0))


class TestSimulateEpidemic:
    def test_no_transmission_decay(self):
        params = EpidemicParams(lam=0.0, mu=0.1, rho0=0.2)
        traj = simulate_epidemic(DIST30, 5000, params, 40, rng=np.random.default_rng(5))
        assert traj.incidence[1:].max() == 0.0
        assert np.all(np.diff(traj.removed) >= 0)
        # geometric decay in expectation: prevalence ~ 0.2 * 0.9^t
        expected = 0.2 * 0.9 ** traj.times
        assert np.abs(traj.prevalence - expected).max() < 0.02

    def test_certain_transmission_on_complete_graph(self):
        params = EpidemicParams(lam=1.0, mu=0.0, rho0=0.2)
        traj = simulate_epidemic(
            from_weights(4, [1.0]), 5, params, 1, rewire="none",
            rng=np.random.default_rng(6), initial_network=complete_graph(5))
        assert traj.prevalence[1] == 1.0

    def test_deterministic_given_seed(self):
        params = EpidemicParams(lam=0.05, mu=0.05, rho0=0.01)
        a = simulate_epidemic(DIST30, 3000, params, 60, rng=replica_rng(9, 4))
        b = simulate_epidemic(DIST30, 3000, params, 60, rng=replica_rng(9, 4))
        assert np.array_equal(a.prevalence, b.prevalence)
        assert np.array_equal(a.incidence, b.incidence)
        assert np.array_equal(a.removed, b.removed)

    def test_integer_compartment_conservation(self):
        params = EpidemicParams(lam=0.08, mu=0.05, rho0=0.02)
        n = 2000
        traj = simulate_epidemic(DIST30, n, params, 50, rng=np.random.default_rng(7))
        for i in range(len(traj.times)):
            counts = np.round(np.array([
                traj.susceptible[i], traj.prevalence[i], traj.removed[i]]) * n)
            assert counts.sum() == n

    def test_one_step_matches_ode_within_4_sigma(self):
        params = EpidemicParams(lam=0.1, mu=0.05, rho0=0.05)
        n = 50000
        ode = integrate(StratifiedSIR(params, DIST30), (0, 1), 1.0, "euler")
        abm = simulate_epidemic(DIST30, n, params, 1, rng=np.random.default_rng(8))
        # binomial bound: new infections + removals are sums of n Bernoullis
        model = StratifiedSIR(params, DIST30)
        inflow = model.rhs_full(0, model.initial_state())[1]
        var = (inflow * (1 - inflow) + params.rho0 * params.mu * (1 - params.mu)) / n
        assert abs(abm.prevalence[1] - ode.prevalence[1]) <= 4 * np.sqrt(var)

    def test_rewire_none_keeps_edges_static(self):
        params = EpidemicParams(lam=0.0, mu=0.0, rho0=0.01)
        net = complete_graph(6)
        traj = simulate_epidemic(
            from_weights(5, [1.0]), 6, params, 3, rewire="none",
            rng=np.random.default_rng(10), initial_network=net)
        assert traj.susceptible[-1] == traj.susceptible[0]

    def test_demographic_replenishment(self):
        params = EpidemicParams(lam=0.2, mu=0.2, rho0=0.05, d=0.5)
        traj = simulate_epidemic(DIST30, 3000, params, 60, rng=np.random.default_rng(11))
        # susceptibles pulled back toward their initial share
        assert traj.susceptible[-1] > 0.5

    def test_treatment_schedule_slows_spread(self):
        params = EpidemicParams(lam=0.5, mu=0.05, rho0=0.02, treatment_efficacy=0.2)
        sched = TreatmentSchedule(epochs=(1.0,), coverages=(1.0,))
        base = simulate_epidemic(DIST30, 4000, params, 30, rng=replica_rng(12, 0))
        treated = simulate_epidemic(DIST30, 4000, params, 30, rng=replica_rng(12, 0),
                                    schedule=sched)
        assert treated.prevalence.max() < base.prevalence.max()

    def test_input_validation(self):
        params = EpidemicParams(lam=0.1, mu=0.1, rho0=0.01)
        with pytest.raises(DomainError):
            simulate_epidemic(DIST30, 100, params, 0)
        with pytest.raises(DomainError):
            simulate_epidemic(DIST30, 100, params, 5, rewire="partial")


class TestEnsemble:
    def test_identical_replicas_have_zero_variance(self):
        params = EpidemicParams(lam=0.05, mu=0.1, rho0=0.05)
        traj = simulate_epidemic(DIST30, 1000, params, 20, rng=replica_rng(1, 1))
        summary = summarize_trajectories([traj, traj])
        assert summary.var_prevalence.max() == 0.0
        assert summary.se_prevalence.max() == 0.0

    def test_se_definition(self):
        params = EpidemicParams(lam=0.05, mu=0.1, rho0=0.05)
        ens = run_ensemble(DIST30, 500, params, 15, replicas=8, base_seed=3)
        np.testing.assert_allclose(
            ens.se_prevalence, np.sqrt(ens.var_prevalence / 8), atol=1e-15)

    def test_se_shrinks_like_inverse_sqrt_replicas(self):
        params = EpidemicParams(lam=0.0, mu=0.1, rho0=0.2)
        scales = []
        for replicas in (25, 100, 400):
            ens = run_ensemble(DIST30, 400, params, 20, replicas=replicas, base_seed=17)
            scales.append(ens.se_prevalence[5:15].mean())
        slope = np.polyfit(np.log([25, 100, 400]), np.log(scales), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.15)

    def test_incidence_convention_matches_ode_stepping(self):
        # ensemble mean new infections per step should track the euler dt=1
        # inflow term point for point (same indexing convention)
        dist = truncated_power_law(3, 1, 30)
        params = EpidemicParams(lam=0.08, mu=0.05, rho0=0.05)
        ens = run_ensemble(dist, 20000, params, 25, replicas=30, base_seed=6)
        ode = integrate(StratifiedSIR(params, dist), (0, 25), 1.0, "euler")
        dev = np.abs(ode.incidence[1:] - ens.mean_incidence[1:])
        assert np.all(dev <= 4 * ens.se_incidence[1:] + 1e-4)

    def test_parallel_matches_serial(self):
        params = EpidemicParams(lam=0.05, mu=0.05, rho0=0.05)
        serial = run_ensemble(DIST30, 800, params, 15, replicas=6, base_seed=5, n_jobs=1)
        parallel = run_ensemble(DIST30, 800, params, 15, replicas=6, base_seed=5, n_jobs=3)
        assert np.array_equal(serial.mean_prevalence, parallel.mean_prevalence)
        assert np.array_equal(serial.se_incidence, parallel.se_incidence)

    def test_order_invariance(self):
        params = EpidemicParams(lam=0.05, mu=0.05, rho0=0.05)
        trajs = [
            simulate_epidemic(DIST30, 500, params, 10, rng=replica_rng(7, r))
            for r in range(4)
        ]
        forward = summarize_trajectories(trajs)
        backward = summarize_trajectories(trajs[::-1])
        np.testing.assert_allclose(forward.mean_prevalence, backward.mean_prevalence, atol=1e-15)
        np.testing.assert_allclose(forward.var_prevalence, backward.var_prevalence, atol=1e-15)

    def test_requires_two_replicas(self):
        params = EpidemicParams(lam=0.05, mu=0.05, rho0=0.05)
        with pytest.raises(DomainError):
            run_ensemble(DIST30, 500, params, 10, replicas=1)
