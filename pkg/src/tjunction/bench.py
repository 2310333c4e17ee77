"""Experiment harness: train per-environment policies, evaluate transfer.

Training runs a bootstrap controller (QMDP on the prior-mean model, with
sticky epsilon-greedy exploration so the logs cover all three actions) for a
fixed number of scenarios in each of the 18 environments, learns posterior
parameters per environment, and persists them as an experience library.

Evaluation draws training subsets of a given size (the "effort"), holds out
the rest, and compares four ways of producing a policy for a held-out
environment: kernel blending, pooling every subset environment's counts,
nearest neighbor, and training explicitly on the test environment itself.

Every stochastic job derives its seed from the master seed through a fixed
counter scheme: ``SeedSequence((master_seed, stream, *indices))`` where stream
0 is training (env, scenario), stream 1 is evaluation (env, trial), and
stream 2 is subset drawing (effort, draw).  Evaluation seeds depend only on
the environment and trial index, so every method and effort faces identical
traffic.
"""

import dataclasses
import json
import pathlib

import numpy as np

from .domain import (
    N_ACTIONS,
    N_STATES,
    EnvironmentState,
    NoiseConfig,
    RewardSpec,
    all_environment_states,
    build_observation_model,
    build_reward_model,
)
from .learning import (
    DirichletPolicyParams,
    DirichletPrior,
    TransitionCounts,
    learn_policy_params,
    make_tracking_model,
    mean_transition,
    write_scenario_logs,
)
from .pomdp import PomdpModel, solve_qmdp
from .simulate import RunMetrics, ScenarioConfig, SimParams, run_scenario, write_metrics_csv
from .transfer import (
    ExperienceLibrary,
    KernelConfig,
    filter_policy,
    load_library,
    nearest_neighbor_policy,
    pooled_policy,
    save_library,
)

__all__ = [
    "METHOD_FILTER",
    "METHOD_POOLED",
    "METHOD_NEAREST",
    "METHOD_EXPLICIT",
    "METHODS",
    "ExperimentPlan",
    "TrainedStore",
    "TrialRecord",
    "derive_seed",
    "draw_subset",
    "train_all",
    "load_store",
    "evaluate_method",
    "run_experiment",
    "summarize_records",
    "read_raw_csv",
    "RAW_HEADER",
]

METHOD_FILTER = "experience_filter"
METHOD_POOLED = "entire_dataset"
METHOD_NEAREST = "nearest_neighbor"
METHOD_EXPLICIT = "explicit_training"
METHODS = (METHOD_FILTER, METHOD_POOLED, METHOD_NEAREST, METHOD_EXPLICIT)

_STREAM_TRAIN = 0
_STREAM_EVAL = 1
_STREAM_SUBSET = 2

RAW_HEADER = (
    "method",
    "effort",
    "draw",
    "env_id",
    "trial",
    "seed",
    "collision_risk",
    "discomfort",
    "time_taken",
    "collided",
    "timeout",
)

_METRIC_NAMES = ("collision_risk", "discomfort", "time_taken")


@dataclasses.dataclass(frozen=True)
class ExperimentPlan:
    """Everything a sweep needs, bundled so one JSON file configures a run."""

    master_seed: int = 7
    training_efforts: tuple = (3, 6, 9, 12, 15)
    scenarios_per_env: int = 101
    eval_trials_per_env: int = 50
    subset_draws: int = 5
    explore_eps: float = 0.35
    explore_hold: float = 0.25
    prior_alpha: float = 0.02
    discount: float = 0.95
    solver_tol: float = 1e-6
    solver_max_iter: int = 10_000
    kernel: KernelConfig = dataclasses.field(default_factory=KernelConfig)
    rewards: RewardSpec = dataclasses.field(default_factory=RewardSpec)
    sim: SimParams = dataclasses.field(default_factory=SimParams)

    def __post_init__(self):
        n_envs = len(all_environment_states())
        efforts = tuple(int(e) for e in self.training_efforts)
        if not efforts:
            raise ValueError("training_efforts must not be empty")
        for effort in efforts:
            if not 1 <= effort <= n_envs - 1:
                raise ValueError(
                    f"each training effort must leave a held-out env: got {effort} of {n_envs}"
                )
        object.__setattr__(self, "training_efforts", efforts)
        if self.scenarios_per_env < 0 or self.eval_trials_per_env < 1 or self.subset_draws < 1:
            raise ValueError("scenario, trial, and draw counts must be positive")

    @property
    def noise(self):
        return self.sim.noise

    def to_dict(self):
        return {
            "master_seed": self.master_seed,
            "training_efforts": list(self.training_efforts),
            "scenarios_per_env": self.scenarios_per_env,
            "eval_trials_per_env": self.eval_trials_per_env,
            "subset_draws": self.subset_draws,
            "explore_eps": self.explore_eps,
            "explore_hold": self.explore_hold,
            "prior_alpha": self.prior_alpha,
            "discount": self.discount,
            "solver_tol": self.solver_tol,
            "solver_max_iter": self.solver_max_iter,
            "kernel": self.kernel.to_dict(),
            "rewards": self.rewards.to_dict(),
            "sim": self.sim.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "training_efforts" in data:
            data["training_efforts"] = tuple(data["training_efforts"])
        if "kernel" in data and isinstance(data["kernel"], dict):
            data["kernel"] = KernelConfig.from_dict(data["kernel"])
        if "rewards" in data and isinstance(data["rewards"], dict):
            data["rewards"] = RewardSpec.from_dict(data["rewards"])
        if "sim" in data and isinstance(data["sim"], dict):
            data["sim"] = SimParams.from_dict(data["sim"])
        return cls(**data)


def derive_seed(master_seed, stream, *indices):
    """Deterministic per-job seed from the master seed and a counter tuple."""
    entropy = (int(master_seed), int(stream)) + tuple(int(i) for i in indices)
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def draw_subset(plan, effort, draw):
    """Sorted tuple of training environment indices for one (effort, draw) cell."""
    if not 1 <= effort <= len(all_environment_states()) - 1:
        raise ValueError(f"effort must leave at least one held-out environment, got {effort}")
    seq = np.random.SeedSequence((int(plan.master_seed), _STREAM_SUBSET, int(effort), int(draw)))
    rng = np.random.default_rng(seq)
    chosen = rng.choice(len(all_environment_states()), size=effort, replace=False)
    return tuple(sorted(int(i) for i in chosen))


@dataclasses.dataclass
class TrainedStore:
    """Learned per-environment parameters plus the shared model pieces."""

    prior: DirichletPrior
    observation: np.ndarray
    reward: np.ndarray
    discount: float
    kernel: KernelConfig
    entries: list  # [(EnvironmentState, DirichletPolicyParams)] in canonical order

    def __post_init__(self):
        self._by_index = {env.index: (env, params) for env, params in self.entries}

    def params_for(self, env):
        return self._by_index[env.index][1]

    def library(self, env_indices=None):
        if env_indices is None:
            return ExperienceLibrary(self.entries)
        return ExperienceLibrary([self._by_index[i] for i in env_indices])

    def counts_for(self, env):
        """Recover integer tallies from stored posterior parameters."""
        raw = self.params_for(env).params - self.prior.alpha
        counts = np.rint(raw).astype(np.int64)
        if np.max(np.abs(raw - counts)) > 1e-6:
            raise ValueError(f"stored parameters for {env.label} are not prior plus counts")
        return TransitionCounts(counts)


def _bootstrap(plan):
    prior = DirichletPrior.uniform(N_STATES, N_ACTIONS, plan.prior_alpha)
    observation = build_observation_model(plan.noise)
    reward = build_reward_model(plan.rewards)
    tracking = make_tracking_model(prior, observation, reward, plan.discount)
    return prior, observation, reward, tracking


def train_all(plan, out_dir=None):
    """Run training scenarios in all 18 environments and learn per-env parameters.

    When ``out_dir`` is given, persists the experience library (params files
    plus manifest), the raw scenario logs, and a per-run metrics CSV under it.
    """
    prior, observation, reward, tracking = _bootstrap(plan)
    q_boot = solve_qmdp(tracking, tol=plan.solver_tol, max_iter=plan.solver_max_iter)
    entries = []
    metrics_rows = []
    logs_by_env = {}
    for env in all_environment_states():
        logs = []
        for k in range(plan.scenarios_per_env):
            seed = derive_seed(plan.master_seed, _STREAM_TRAIN, env.index, k)
            config = ScenarioConfig(env=env, seed=seed, scenario_id=k, params=plan.sim)
            log, metrics = run_scenario(
                config,
                q_boot,
                tracking,
                explore_eps=plan.explore_eps,
                explore_hold=plan.explore_hold,
            )
            logs.append(log)
            metrics_rows.append((env.label, seed, metrics))
        params = learn_policy_params(logs, prior, tracking, env=env)
        entries.append((env, params))
        logs_by_env[env.label] = logs
    store = TrainedStore(
        prior=prior,
        observation=observation,
        reward=reward,
        discount=plan.discount,
        kernel=plan.kernel,
        entries=entries,
    )
    if out_dir is not None:
        out_dir = pathlib.Path(out_dir)
        save_library(out_dir / "store", store.library(), plan.kernel)
        logs_dir = out_dir / "logs"
        logs_dir.mkdir(parents=True, exist_ok=True)
        for label, logs in logs_by_env.items():
            write_scenario_logs(logs_dir / f"{label}.csv", logs)
        write_metrics_csv(out_dir / "train_metrics.csv", metrics_rows)
    return store


def load_store(directory, plan):
    """Rebuild a :class:`TrainedStore` from a persisted library directory."""
    library, kernel = load_library(pathlib.Path(directory))
    prior = DirichletPrior.uniform(N_STATES, N_ACTIONS, plan.prior_alpha)
    observation = build_observation_model(plan.noise)
    reward = build_reward_model(plan.rewards)
    entries = sorted(library.entries, key=lambda item: item[0].index)
    return TrainedStore(
        prior=prior,
        observation=observation,
        reward=reward,
        discount=plan.discount,
        kernel=kernel,
        entries=entries,
    )


def _method_params(method, test_env, subset_indices, store, plan):
    if method == METHOD_EXPLICIT:
        return store.params_for(test_env)
    if not subset_indices:
        raise ValueError("non-explicit methods need a non-empty training subset")
    if test_env.index in subset_indices:
        raise ValueError(
            f"test environment {test_env.label} leaked into the training subset"
        )
    sub_library = store.library(subset_indices)
    if method == METHOD_FILTER:
        return filter_policy(test_env, sub_library, plan.kernel)
    if method == METHOD_NEAREST:
        return nearest_neighbor_policy(test_env, sub_library)
    if method == METHOD_POOLED:
        count_sets = [
            (store.prior, store.counts_for(env)) for env in sub_library.environments
        ]
        return pooled_policy(count_sets)
    raise ValueError(f"unknown method {method!r}")


def evaluate_method(method, test_env, training_subset, store, plan):
    """Evaluate one method on one held-out environment.

    Returns a list of ``(trial, seed, RunMetrics)``.  Evaluation seeds depend
    only on (environment, trial), so methods face identical traffic.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    params = _method_params(method, test_env, training_subset, store, plan)
    model = PomdpModel(
        transition=mean_transition(params),
        observation=store.observation,
        reward=store.reward,
        discount=store.discount,
    )
    q = solve_qmdp(model, tol=plan.solver_tol, max_iter=plan.solver_max_iter)
    results = []
    for trial in range(plan.eval_trials_per_env):
        seed = derive_seed(plan.master_seed, _STREAM_EVAL, test_env.index, trial)
        config = ScenarioConfig(env=test_env, seed=seed, scenario_id=trial, params=plan.sim)
        _, metrics = run_scenario(config, q, model)
        results.append((trial, seed, metrics))
    return results


@dataclasses.dataclass(frozen=True)
class TrialRecord:
    method: str
    effort: int
    draw: int
    env_label: str
    trial: int
    seed: int
    metrics: RunMetrics


def _fmt(value):
    return format(float(value), ".12g")


def write_raw_csv(path, records):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(RAW_HEADER) + "\n")
        for r in records:
            m = r.metrics
            handle.write(
                f"{r.method},{r.effort},{r.draw},{r.env_label},{r.trial},{r.seed},"
                f"{_fmt(m.collision_risk)},{_fmt(m.discomfort)},{_fmt(m.time_taken)},"
                f"{int(m.collided)},{int(m.timeout)}\n"
            )


def read_raw_csv(path):
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline().strip().split(",")
        if tuple(header) != RAW_HEADER:
            raise ValueError(f"unexpected raw results header: {header!r}")
        for line in handle:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            records.append(
                TrialRecord(
                    method=parts[0],
                    effort=int(parts[1]),
                    draw=int(parts[2]),
                    env_label=parts[3],
                    trial=int(parts[4]),
                    seed=int(parts[5]),
                    metrics=RunMetrics(
                        collision_risk=float(parts[6]),
                        discomfort=float(parts[7]),
                        time_taken=float(parts[8]),
                        collided=bool(int(parts[9])),
                        timeout=bool(int(parts[10])),
                    ),
                )
            )
    return records


def _metric_array(records):
    return np.array(
        [
            [r.metrics.collision_risk, r.metrics.discomfort, r.metrics.time_taken]
            for r in records
        ]
    )


def summarize_records(records):
    """Normalize by each metric's global max and aggregate.

    Returns ``(norms, by_cell)`` where ``norms`` maps metric name to the
    normalization constant and ``by_cell`` maps ``(method, effort)`` to a dict
    with per-metric normalized mean, standard error, and the trial count.
    Explicit-training trials are stored under effort 0 and replicated across
    every effort by the callers that need effort-aligned rows.
    """
    if not records:
        raise ValueError("no records to summarize")
    values = _metric_array(records)
    norms = values.max(axis=0)
    if np.any(norms <= 0.0):
        norms = np.where(norms <= 0.0, 1.0, norms)
    normalized = values / norms
    cells = {}
    for row, record in zip(normalized, records):
        cells.setdefault((record.method, record.effort), []).append(row)
    by_cell = {}
    for key, rows in cells.items():
        arr = np.stack(rows)
        n = arr.shape[0]
        means = arr.mean(axis=0)
        ses = arr.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(3)
        by_cell[key] = {
            "n": n,
            **{
                name: {"mean": float(means[i]), "se": float(ses[i])}
                for i, name in enumerate(_METRIC_NAMES)
            },
        }
    return dict(zip(_METRIC_NAMES, (float(v) for v in norms))), by_cell


def _aggregate_by_draw(records):
    """Normalized per-(method, effort, draw) rows for the aggregate CSV."""
    values = _metric_array(records)
    norms = values.max(axis=0)
    norms = np.where(norms <= 0.0, 1.0, norms)
    normalized = values / norms
    cells = {}
    for row, record in zip(normalized, records):
        cells.setdefault((record.method, record.effort, record.draw), []).append(row)
    rows = []
    for (method, effort, draw), data in sorted(cells.items()):
        arr = np.stack(data)
        n = arr.shape[0]
        means = arr.mean(axis=0)
        ses = arr.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(3)
        rows.append((method, effort, draw, n, means, ses))
    return rows


def _write_aggregate_csv(path, records, efforts):
    rows = _aggregate_by_draw(records)
    explicit = [r for r in rows if r[0] == METHOD_EXPLICIT]
    others = [r for r in rows if r[0] != METHOD_EXPLICIT]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(
            "method,effort,draw,n_trials,"
            "collision_risk_mean,collision_risk_se,discomfort_mean,discomfort_se,"
            "time_taken_mean,time_taken_se\n"
        )

        def emit(method, effort, draw, n, means, ses):
            handle.write(
                f"{method},{effort},{draw},{n},"
                f"{_fmt(means[0])},{_fmt(ses[0])},{_fmt(means[1])},{_fmt(ses[1])},"
                f"{_fmt(means[2])},{_fmt(ses[2])}\n"
            )

        for method, effort, draw, n, means, ses in others:
            emit(method, effort, draw, n, means, ses)
        # Explicit training does not depend on effort; replicate its single
        # aggregate into every effort row with a sentinel draw of -1.
        for method, _, _, n, means, ses in explicit:
            for effort in efforts:
                emit(method, effort, -1, n, means, ses)


def _write_summary_md(path, plan, norms, by_cell):
    methods = (METHOD_FILTER, METHOD_POOLED, METHOD_NEAREST)
    lines = []
    lines.append("# Transfer benchmark summary")
    lines.append("")
    lines.append(
        f"Master seed {plan.master_seed}; {plan.scenarios_per_env} training scenarios per "
        f"environment; {plan.eval_trials_per_env} evaluation trials per held-out environment; "
        f"{plan.subset_draws} subset draws per effort."
    )
    lines.append("")
    lines.append(
        "Metrics are normalized by the largest value observed over all evaluation "
        "trials: collision_risk / {0}, discomfort / {1}, time_taken / {2}.".format(
            *(format(norms[name], ".6g") for name in _METRIC_NAMES)
        )
    )
    lines.append("")
    lines.append("| method | effort | collision risk | discomfort | time taken |")
    lines.append("|---|---|---|---|---|")

    def cell_text(cell):
        return " | ".join(
            f"{cell[name]['mean']:.4f} ± {cell[name]['se']:.4f}" for name in _METRIC_NAMES
        )

    for method in methods:
        for effort in plan.training_efforts:
            cell = by_cell.get((method, effort))
            if cell is None:
                continue
            lines.append(f"| {method} | {effort} | {cell_text(cell)} |")
    explicit = by_cell.get((METHOD_EXPLICIT, 0))
    if explicit is not None:
        lines.append(f"| {METHOD_EXPLICIT} | - | {cell_text(explicit)} |")
    lines.append("")
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines))


@dataclasses.dataclass
class ExperimentResult:
    records: list
    norms: dict
    by_cell: dict
    raw_csv: pathlib.Path
    aggregate_csv: pathlib.Path
    summary_md: pathlib.Path


def run_experiment(plan, out_dir, store=None):
    """Full sweep: train (unless a store is supplied), evaluate, write outputs.

    Writes ``results_raw.csv`` (one row per trial, raw metric values),
    ``results_by_draw.csv`` (normalized per-draw aggregates),
    ``summary.md`` (normalized per-method table), ``subsets.json`` (the drawn
    training subsets), and ``plan.json`` (the configuration echo).
    """
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "plan.json", "w", encoding="utf-8") as handle:
        json.dump(plan.to_dict(), handle, indent=2, sort_keys=True)
    if store is None:
        store = train_all(plan, out_dir)
    envs = all_environment_states()
    records = []
    for env in envs:
        for trial, seed, metrics in evaluate_method(METHOD_EXPLICIT, env, None, store, plan):
            records.append(
                TrialRecord(METHOD_EXPLICIT, 0, 0, env.label, trial, seed, metrics)
            )
    subsets = {}
    for effort in plan.training_efforts:
        for draw in range(plan.subset_draws):
            subset = draw_subset(plan, effort, draw)
            subsets[f"effort={effort},draw={draw}"] = [envs[i].label for i in subset]
            held_out = [env for env in envs if env.index not in subset]
            for env in held_out:
                for method in (METHOD_FILTER, METHOD_POOLED, METHOD_NEAREST):
                    for trial, seed, metrics in evaluate_method(
                        method, env, subset, store, plan
                    ):
                        records.append(
                            TrialRecord(method, effort, draw, env.label, trial, seed, metrics)
                        )
    with open(out_dir / "subsets.json", "w", encoding="utf-8") as handle:
        json.dump(subsets, handle, indent=2, sort_keys=True)
    raw_csv = out_dir / "results_raw.csv"
    write_raw_csv(raw_csv, records)
    aggregate_csv = out_dir / "results_by_draw.csv"
    _write_aggregate_csv(aggregate_csv, records, plan.training_efforts)
    norms, by_cell = summarize_records(records)
    summary_md = out_dir / "summary.md"
    _write_summary_md(summary_md, plan, norms, by_cell)
    return ExperimentResult(
        records=records,
        norms=norms,
        by_cell=by_cell,
        raw_csv=raw_csv,
        aggregate_csv=aggregate_csv,
        summary_md=summary_md,
    )
