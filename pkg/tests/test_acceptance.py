"""End-to-end acceptance checks.

Each test here verifies one release gate: exact agreement with independent
oracles for the solver, the filter, and the learner; hard counts for the
driving domain; kernel weight properties on random libraries; the headline
transfer trends from a full default-config sweep run through the installed
command line; byte-level reproducibility of that sweep; and the always-stop
safety property.  Every test appends a single PASS/FAIL line with the
measured numbers; the lines are printed together after the run summary.

The two sweep-backed checks run `sweep` twice as subprocesses and take a few
minutes each; everything else finishes in seconds.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from tjunction.bench import (
    METHOD_EXPLICIT,
    METHOD_FILTER,
    METHOD_NEAREST,
    METHOD_POOLED,
    read_raw_csv,
    summarize_records,
)
from tjunction.domain import (
    N_ACTIONS,
    N_STATES,
    STOP,
    all_environment_states,
    build_pomdp_model,
    decode_state,
    encode_state,
)
from tjunction.learning import (
    DirichletPolicyParams,
    DirichletPrior,
    DirichletTransitionLearner,
    RivalChannel,
    ScenarioLog,
    learn_policy_params,
    make_tracking_model,
    mean_transition,
)
from tjunction.pomdp import belief_update, solve_qmdp
from tjunction.simulate import ScenarioConfig, run_scenario
from tjunction.transfer import ExperienceLibrary, KernelConfig, kernel_weights

from conftest import random_mdp, random_pomdp

METRIC_NAMES = ("collision_risk", "discomfort", "time_taken")
SWEEP_TIME_LIMIT_S = 900.0


def verdict(report, name, ok, detail):
    line = f"[{name}] {'PASS' if ok else 'FAIL'}: {detail}"
    report.append(line)
    print(line)
    assert ok, line


def policy_iteration_q(model):
    """Exact Q values via policy iteration with a linear-solve evaluation step."""
    transition, reward, gamma = model.transition, model.reward, model.discount
    n_states = model.n_states
    states = np.arange(n_states)
    policy = np.zeros(n_states, dtype=int)
    for _ in range(500):
        t_pi = transition[policy, states]
        r_pi = reward[states, policy]
        value = np.linalg.solve(np.eye(n_states) - gamma * t_pi, r_pi)
        q = reward + gamma * (transition @ value).T
        improved = q.argmax(axis=1)
        if np.array_equal(improved, policy):
            return q
        policy = improved
    raise AssertionError("policy iteration failed to settle")


def test_qmdp_matches_policy_iteration_oracle(acceptance_report):
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(25):
        n_states = int(rng.integers(2, 7))
        n_actions = int(rng.integers(1, 4))
        model = random_mdp(rng, n_states, n_actions, discount=0.9)
        got = solve_qmdp(model, tol=1e-10, max_iter=100_000)
        assert got.converged
        worst = max(worst, float(np.max(np.abs(got.q - policy_iteration_q(model)))))
    elapsed = time.perf_counter() - start
    verdict(
        acceptance_report,
        "1/8 solver vs policy iteration",
        worst <= 1e-6 and elapsed < 5.0,
        f"25 random MDPs, max |dQ| {worst:.2e} (tol 1e-06), {elapsed:.2f} s (limit 5 s)",
    )


def test_belief_update_matches_bayes_enumeration(acceptance_report):
    rng = np.random.default_rng(22)
    start = time.perf_counter()
    worst = 0.0
    checked = 0
    for _ in range(25):
        n_states = int(rng.integers(2, 6))
        n_actions = int(rng.integers(1, 4))
        n_obs = int(rng.integers(2, 6))
        model = random_pomdp(rng, n_states, n_actions, n_obs, discount=0.9)
        belief = rng.dirichlet(np.ones(n_states))
        for action in range(n_actions):
            for obs in range(n_obs):
                expected = np.zeros(n_states)
                for s_next in range(n_states):
                    mass = 0.0
                    for s in range(n_states):
                        mass += belief[s] * model.transition[action, s, s_next]
                    expected[s_next] = model.observation[action, s_next, obs] * mass
                total = expected.sum()
                if total <= 0.0:
                    continue
                expected /= total
                got = belief_update(belief, action, obs, model)
                worst = max(worst, float(np.max(np.abs(got - expected))))
                checked += 1
    elapsed = time.perf_counter() - start
    verdict(
        acceptance_report,
        "2/8 filter vs Bayes enumeration",
        worst <= 1e-12 and elapsed < 1.0,
        f"25 random POMDPs / {checked} updates, max |db| {worst:.2e} (tol 1e-12), "
        f"{elapsed:.2f} s (limit 1 s)",
    )


def test_triplet_learning_recovers_known_transitions(acceptance_report):
    n_states, n_actions = 6, 2
    t_true = np.zeros((n_actions, n_states, n_states))
    for a in range(n_actions):
        for s in range(n_states):
            t_true[a, s, (s + 1 + a) % n_states] = 0.95
            t_true[a, s, (s + 2 + a) % n_states] = 0.05

    rng = np.random.default_rng(707)
    start = time.perf_counter()
    state = 0
    triplets = []
    for _ in range(10_000):
        action = int(rng.integers(n_actions))
        nxt = int(rng.choice(n_states, p=t_true[action, state]))
        triplets.append((state, action, nxt))
        state = nxt
    log = ScenarioLog(scenario_id=0, duration=10_000, channels=[RivalChannel(0, triplets)])

    prior = DirichletPrior.uniform(n_states, n_actions, strength=1.0)
    identity_z = np.broadcast_to(np.eye(n_states), (n_actions, n_states, n_states)).copy()
    tracking = make_tracking_model(prior, identity_z, np.zeros((n_states, n_actions)), 0.9)
    learned = learn_policy_params([log], prior, tracking)
    row_l1 = float(np.abs(mean_transition(learned) - t_true).sum(axis=2).max())
    elapsed = time.perf_counter() - start
    verdict(
        acceptance_report,
        "3/8 learner recovers known T",
        row_l1 <= 0.05 and elapsed < 10.0,
        f"10,000 triplets, 6 states, noiseless sensing, uniform prior strength 1, "
        f"max row L1 {row_l1:.4f} (tol 0.05), {elapsed:.2f} s (limit 10 s)",
    )


def test_driving_domain_parameter_count(acceptance_report):
    flat = np.full((N_ACTIONS, N_STATES, N_STATES), 1.0 / N_STATES)
    learner = DirichletTransitionLearner(tracking_model=build_pomdp_model(flat), alpha=1.0)
    learner.fit([])
    roundtrip = all(encode_state(decode_state(i)) == i for i in range(N_STATES))
    ok = (
        N_STATES == 192
        and roundtrip
        and learner.params_.n_parameters == 110_592
        and learner.params_.params.shape == (192, 3, 192)
    )
    verdict(
        acceptance_report,
        "4/8 domain sizes",
        ok,
        f"state codec enumerates {N_STATES} states (expect 192, roundtrip "
        f"{'ok' if roundtrip else 'BROKEN'}), policy holds "
        f"{learner.params_.n_parameters} parameters (expect 110,592)",
    )


def test_kernel_weight_normalization_and_limits(acceptance_report):
    envs = all_environment_states()
    stub = DirichletPolicyParams(np.ones((2, 1, 2)))
    rng = np.random.default_rng(909)
    worst_sum = 0.0
    worst_nearest = 1.0
    sigma_exact = True
    for _ in range(1000):
        size = int(rng.integers(1, len(envs) + 1))
        picks = rng.choice(len(envs), size=size, replace=False)
        library = ExperienceLibrary([(envs[i], stub) for i in picks])
        query = rng.uniform(-0.25, 1.25, size=3)

        weights = kernel_weights(query, library)
        worst_sum = max(worst_sum, abs(float(weights.sum()) - 1.0))

        for sigma in (0.5, 2.0):
            same = kernel_weights(query, library, KernelConfig(sigma=sigma))
            sigma_exact = sigma_exact and np.array_equal(weights, same)

        sharp = kernel_weights(query, library, KernelConfig(lengthscale=1e-4))
        gaps = ((library.embeddings() - query) ** 2).sum(axis=1)
        worst_nearest = min(worst_nearest, float(sharp[np.argmin(gaps)]))
    ok = worst_sum <= 1e-12 and sigma_exact and worst_nearest > 1.0 - 1e-9
    verdict(
        acceptance_report,
        "5/8 kernel weight properties",
        ok,
        f"1,000 random queries over random libraries: max |sum-1| {worst_sum:.1e} "
        f"(tol 1e-12), amplitude invariance {'exact' if sigma_exact else 'BROKEN'}, "
        f"min nearest mass at lengthscale 1e-4 = {worst_nearest:.12f} (floor 1-1e-9)",
    )


@pytest.fixture(scope="session")
def sweep_runs(tmp_path_factory):
    """Run the default-config sweep twice through the installed CLI."""
    runs = []
    for name in ("sweep_first", "sweep_second"):
        out = tmp_path_factory.mktemp(name)
        start = time.perf_counter()
        proc = subprocess.run(
            [sys.executable, "-m", "tjunction.cli", "sweep", "--out", str(out)],
            capture_output=True,
            text=True,
            timeout=1800,
        )
        elapsed = time.perf_counter() - start
        assert proc.returncode == 0, f"sweep failed:\n{proc.stderr[-3000:]}"
        runs.append((out, elapsed))
    return runs


def test_default_sweep_transfer_trends(acceptance_report, sweep_runs):
    out, elapsed = sweep_runs[0]
    norms, by_cell = summarize_records(read_raw_csv(out / "results_raw.csv"))

    filt = {e: by_cell[(METHOD_FILTER, e)] for e in (9, 12, 15)}
    pooled = {e: by_cell[(METHOD_POOLED, e)] for e in (9, 12, 15)}
    nearest = by_cell[(METHOD_NEAREST, 15)]
    explicit = by_cell[(METHOD_EXPLICIT, 0)]

    cells = list(filt.values()) + list(pooled.values()) + [nearest, explicit]
    min_n = min(cell["n"] for cell in cells)

    beat_pooled = min(
        pooled[e][m]["mean"] - filt[e][m]["mean"]
        for e in (9, 12, 15)
        for m in ("discomfort", "time_taken")
    )
    explicit_dev = max(
        abs(filt[e][m]["mean"] - explicit[m]["mean"]) for e in (12, 15) for m in METRIC_NAMES
    )
    nearest_margin = nearest["discomfort"]["mean"] - filt[15]["discomfort"]["mean"]

    ok = (
        beat_pooled > 0.0
        and explicit_dev <= 0.10
        and nearest_margin >= 0.0
        and min_n >= 250
        and all(run_elapsed < SWEEP_TIME_LIMIT_S for _, run_elapsed in sweep_runs)
    )
    verdict(
        acceptance_report,
        "6/8 transfer quality trends",
        ok,
        f"filter beats pooled on discomfort and time at efforts 9/12/15 by >= "
        f"{beat_pooled:+.4f}; max gap to explicit training at efforts 12/15 "
        f"{explicit_dev:.4f} (tol 0.10); filter vs nearest discomfort at effort 15 "
        f"{nearest_margin:+.4f} (must be >= 0); min cell {min_n} trials (floor 250); "
        f"sweep {elapsed:.0f} s (limit {SWEEP_TIME_LIMIT_S:.0f} s)",
    )


def test_sweep_is_byte_reproducible(acceptance_report, sweep_runs):
    (first, _), (second, _) = sweep_runs
    blob_a = (first / "results_raw.csv").read_bytes()
    blob_b = (second / "results_raw.csv").read_bytes()
    verdict(
        acceptance_report,
        "7/8 sweep determinism",
        blob_a == blob_b,
        f"two sweeps with the same master seed: raw CSVs "
        f"{'byte-identical' if blob_a == blob_b else 'DIFFER'} ({len(blob_a)} bytes)",
    )


def test_always_stop_policy_never_collides(acceptance_report):
    envs = all_environment_states()
    flat = np.full((N_ACTIONS, N_STATES, N_STATES), 1.0 / N_STATES)
    model = build_pomdp_model(flat)
    q = np.zeros((N_STATES, N_ACTIONS))
    start = time.perf_counter()
    collisions = 0
    for i in range(1000):
        config = ScenarioConfig(env=envs[i % len(envs)], seed=10_000 + i, scenario_id=i)
        _, metrics = run_scenario(config, q, model, forced_action=STOP)
        collisions += int(metrics.collided)
    elapsed = time.perf_counter() - start
    verdict(
        acceptance_report,
        "8/8 always-stop safety",
        collisions == 0,
        f"{collisions} collisions in 1,000 scenarios across all 18 environments "
        f"(must be 0), {elapsed:.1f} s",
    )
