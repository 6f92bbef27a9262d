"""Agent-based Monte-Carlo simulation on configuration-model random graphs.

This is the stochastic oracle the ODE models are validated against.  Each
step mirrors the discrete-time process the euler dt=1 integration of the
stratified model approximates:

  1. every susceptible is infected through each link to an infected node
     independently with probability lambda (so a node with l infected
     neighbours converts with probability 1 - (1-lambda)^l),
  2. every node infected at the start of the step is removed with
     probability mu,
  3. removed nodes are deleted from the network,
  4. optional demographic replenishment adds susceptibles back toward their
     initial per-degree counts at rate d,
  5. with rewire="full" a fresh configuration-model pairing is drawn over
     the surviving nodes (their target degrees persist).

Infections are evaluated against the start-of-step state and removals only
hit previously infected nodes, which is what makes step counts comparable
to the ODE inflow term.

Self-loops are dropped and multi-edges collapsed when pairing stubs
("erased" configuration model), so realized degrees approximate the targets
from below; the distortion is o(1) at the population sizes used here and is
measured by the tests rather than assumed away.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .degree import DegreeDistribution, sample_degrees
from .errors import DomainError
from .ode import EpidemicParams, StratifiedState, Trajectory, TreatmentSchedule

# node compartment codes
SUSCEPTIBLE = 0
INFECTED = 1
INFECTED_TREATED = 2
REMOVED = 3


@dataclass
class NetworkRealization:
    """One realization of the contact network.

    ``edges_u``/``edges_v`` hold the current undirected edge list in
    canonical (u < v) order; ``degrees`` the per-node target degrees drawn
    from the distribution (realized degrees can only be lower, through
    stub discard).
    """

    n: int
    degrees: np.ndarray
    edges_u: np.ndarray
    edges_v: np.ndarray
    node_state: np.ndarray

    def adjacency(self) -> list[np.ndarray]:
        """Per-node neighbor arrays for the current step."""
        neighbors = [[] for _ in range(self.n)]
        for u, v in zip(self.edges_u, self.edges_v):
            neighbors[u].append(v)
            neighbors[v].append(u)
        return [np.array(sorted(nb), dtype=np.int64) for nb in neighbors]

    def realized_degrees(self) -> np.ndarray:
        counts = np.bincount(self.edges_u, minlength=self.n)
        counts += np.bincount(self.edges_v, minlength=self.n)
        return counts


def _pair_stubs(node_ids: np.ndarray, degrees: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """Uniform stub pairing with self-loops dropped and multi-edges collapsed.

    An odd stub count loses one stub (the shuffle makes it a uniformly
    random one).
    """
    stubs = np.repeat(node_ids, degrees)
    rng.shuffle(stubs)
    if stubs.size % 2:
        stubs = stubs[:-1]
    u, v = stubs[0::2], stubs[1::2]
    keep = u != v
    u, v = u[keep], v[keep]
    lo = np.minimum(u, v).astype(np.int64)
    hi = np.maximum(u, v).astype(np.int64)
    span = int(node_ids.max()) + 1 if node_ids.size else 1
    key = np.unique(lo * span + hi)
    return key // span, key % span


def generate_network(dist: DegreeDistribution, n: int, rng: np.random.Generator) -> NetworkRealization:
    """Configuration-model graph with degrees drawn from ``dist``."""
    if n < 2:
        raise DomainError(f"network needs at least 2 nodes, got {n}")
    degrees = sample_degrees(dist, n, rng)
    edges_u, edges_v = _pair_stubs(np.arange(n, dtype=np.int64), degrees, rng)
    return NetworkRealization(
        n=n, degrees=degrees, edges_u=edges_u, edges_v=edges_v,
        node_state=np.full(n, SUSCEPTIBLE, dtype=np.int8),
    )


def _coverage_at(schedule: TreatmentSchedule | None, t: float) -> float:
    if schedule is None:
        return 0.0
    coverage = schedule.initial_coverage
    for epoch, c in zip(schedule.epochs, schedule.coverages):
        if t >= epoch:
            coverage = c
    return coverage


def simulate_epidemic(
    dist: DegreeDistribution,
    n: int,
    params: EpidemicParams,
    steps: int,
    rewire: str = "full",
    rng: np.random.Generator | None = None,
    schedule: TreatmentSchedule | None = None,
    initial_network: NetworkRealization | None = None,
) -> Trajectory:
    """Run one stochastic epidemic for ``steps`` time steps.

    Fractions are reported relative to the initial population, so the output
    aligns point for point with an euler dt=1 integration of the matching
    ODE model.  ``initial_network`` substitutes a custom starting graph
    (useful with rewire="none"); demographically added nodes join isolated
    until the next full rewiring.
    """
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    if rewire not in ("full", "none"):
        raise DomainError(f"rewire must be 'full' or 'none', got {rewire!r}")
    rng = np.random.default_rng(rng)

    net = initial_network if initial_network is not None else generate_network(dist, n, rng)
    if net.n != n:
        raise DomainError("initial_network size does not match n")
    degrees = net.degrees.copy()
    state = net.node_state.copy()
    eff = params.treatment_efficacy

    n_seed = int(round(params.rho0 * n))
    seed_nodes = rng.choice(n, size=n_seed, replace=False)
    coverage = _coverage_at(schedule, 0.0)
    treated = rng.random(n_seed) < coverage
    state[seed_nodes] = np.where(treated, INFECTED_TREATED, INFECTED)

    edges_u, edges_v = net.edges_u, net.edges_v
    k_grid = dist.degrees
    nk = len(k_grid)
    s_k = np.zeros((steps + 1, nk))
    rho_k = np.zeros((steps + 1, nk))
    removed_k = np.zeros((steps + 1, nk))
    incidence = np.zeros(steps + 1)

    def tally(row):
        for code, out in ((SUSCEPTIBLE, s_k), (REMOVED, removed_k)):
            counts = np.bincount(degrees[state == code] - dist.k_min, minlength=nk)
            out[row] = counts / n
        infected = (state == INFECTED) | (state == INFECTED_TREATED)
        rho_k[row] = np.bincount(degrees[infected] - dist.k_min, minlength=nk) / n

    tally(0)

    for step in range(1, steps + 1):
        prev_coverage = coverage
        coverage = _coverage_at(schedule, step - 1)
        if schedule is not None and coverage != prev_coverage:
            # epoch switch: re-draw treated status of the standing infected
            infected_idx = np.flatnonzero((state == INFECTED) | (state == INFECTED_TREATED))
            treated = rng.random(infected_idx.size) < coverage
            state[infected_idx] = np.where(treated, INFECTED_TREATED, INFECTED)

        is_inf = (state == INFECTED) | (state == INFECTED_TREATED)
        start_infected = np.flatnonzero(is_inf)

        # (1) infections, one independent draw per susceptible-infected edge
        new_infected = []
        for src, dst in ((edges_v, edges_u), (edges_u, edges_v)):
            live = (state[dst] == SUSCEPTIBLE) & is_inf[src]
            if not np.any(live):
                continue
            lam_edge = np.where(state[src][live] == INFECTED_TREATED, eff * params.lam, params.lam)
            hits = rng.random(live.sum()) < lam_edge
            new_infected.append(dst[live][hits])
        new_infected = np.unique(np.concatenate(new_infected)) if new_infected else np.array([], dtype=np.int64)

        # (2) removal of start-of-step infected
        removed_now = start_infected[rng.random(start_infected.size) < params.mu]

        if new_infected.size:
            treated = rng.random(new_infected.size) < coverage
            state[new_infected] = np.where(treated, INFECTED_TREATED, INFECTED)
        state[removed_now] = REMOVED
        incidence[step] = new_infected.size / n

        # (4) demographic replenishment toward initial susceptible counts
        if params.d > 0:
            current = np.bincount(degrees[state == SUSCEPTIBLE] - dist.k_min, minlength=nk)
            deficit = np.maximum(np.round(s_k[0] * n).astype(np.int64) - current, 0)
            additions = rng.binomial(deficit, params.d)
            total_add = int(additions.sum())
            if total_add:
                new_deg = np.repeat(k_grid, additions)
                degrees = np.concatenate([degrees, new_deg])
                state = np.concatenate([state, np.full(total_add, SUSCEPTIBLE, dtype=np.int8)])

        # (3) + (5): removed nodes leave; optionally re-pair the survivors
        if rewire == "full":
            active = np.flatnonzero(state != REMOVED)
            edges_u, edges_v = _pair_stubs(active, degrees[active], rng)
        else:
            keep = (state[edges_u] != REMOVED) & (state[edges_v] != REMOVED)
            edges_u, edges_v = edges_u[keep], edges_v[keep]

        tally(step)

    times = np.arange(steps + 1, dtype=float)
    states = [
        StratifiedState(
            degrees=k_grid, s=s_k[i], rho=rho_k[i][None, :],
            r=float(removed_k[i].sum()), removed_k=removed_k[i],
        )
        for i in range(steps + 1)
    ]
    return Trajectory(
        times=times, states=states, derivs=None,
        susceptible=s_k.sum(axis=1), prevalence=rho_k.sum(axis=1),
        removed=removed_k.sum(axis=1), incidence=incidence,
    )


@dataclass
class EnsembleSummary:
    """Per-time-point statistics over independent simulation replicas."""

    times: np.ndarray
    replicas: int
    mean_prevalence: np.ndarray
    var_prevalence: np.ndarray
    se_prevalence: np.ndarray
    mean_incidence: np.ndarray
    var_incidence: np.ndarray
    se_incidence: np.ndarray
    mean_susceptible: np.ndarray
    var_susceptible: np.ndarray
    se_susceptible: np.ndarray


def summarize_trajectories(trajectories) -> EnsembleSummary:
    """Mean/variance/standard-error bands across replica trajectories.

    Order-invariant: the statistics do not depend on replica ordering.
    """
    if len(trajectories) < 2:
        raise DomainError("ensemble statistics need at least 2 replicas")
    times = trajectories[0].times
    for traj in trajectories[1:]:
        if traj.times.shape != times.shape or np.any(traj.times != times):
            raise DomainError("replica time grids differ")
    r = len(trajectories)
    out = {"times": times.copy(), "replicas": r}
    for name, attr in (("prevalence", "prevalence"), ("incidence", "incidence"),
                       ("susceptible", "susceptible")):
        stack = np.stack([getattr(t, attr) for t in trajectories])
        var = stack.var(axis=0, ddof=1)
        out[f"mean_{name}"] = stack.mean(axis=0)
        out[f"var_{name}"] = var
        out[f"se_{name}"] = np.sqrt(var / r)
    return EnsembleSummary(**out)


def replica_rng(base_seed: int, replica: int) -> np.random.Generator:
    """Stream for one replica, derived by hashing (base_seed, replica).

    Independent of execution order, so parallel runs reproduce serial ones.
    """
    return np.random.default_rng(np.random.SeedSequence([base_seed, replica]))


def _run_replica(args):
    dist, n, params, steps, rewire, schedule, base_seed, replica = args
    return simulate_epidemic(
        dist, n, params, steps, rewire=rewire,
        rng=replica_rng(base_seed, replica), schedule=schedule,
    )


def run_ensemble(
    dist: DegreeDistribution,
    n: int,
    params: EpidemicParams,
    steps: int,
    replicas: int,
    base_seed: int = 0,
    rewire: str = "full",
    schedule: TreatmentSchedule | None = None,
    n_jobs: int = 1,
) -> EnsembleSummary:
    """Run ``replicas`` independent simulations and summarize them.

    Replicas are embarrassingly parallel; results are merged in replica
    order so the summary is identical for any ``n_jobs``.
    """
    if replicas < 2:
        raise DomainError(f"replicas must be >= 2, got {replicas}")
    jobs = [(dist, n, params, steps, rewire, schedule, base_seed, r) for r in range(replicas)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            trajectories = list(pool.map(_run_replica, jobs, chunksize=max(1, replicas // (4 * n_jobs))))
    else:
        trajectories = [_run_replica(job) for job in jobs]
    return summarize_trajectories(trajectories)
