"""Learning tabular transition models from logged observation triplets.

Driving logs record, for each rival vehicle, a time-ordered channel of
``(o_t, a_t, o_t+1)`` triplets.  A Bayes filter tracks a belief along each
channel using a fixed tracking model (known observation channel plus the
prior-mean transition), and the most likely state before and after each step
is tallied as a pseudo-count.  With a Dirichlet prior over every transition
row, the posterior is simply prior plus counts, and its mean is the learned
transition model.
"""

import csv
import dataclasses
import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .domain import EnvironmentState
from .pomdp import PomdpModel, uniform_belief
from .validation import check_index, check_positive

__all__ = [
    "DegenerateRowError",
    "DirichletPrior",
    "TransitionCounts",
    "RivalChannel",
    "ScenarioLog",
    "DirichletPolicyParams",
    "ingest_scenario",
    "posterior",
    "mean_transition",
    "learn_policy_params",
    "make_tracking_model",
    "write_scenario_logs",
    "read_scenario_logs",
    "save_policy_params",
    "load_policy_params",
    "DirichletTransitionLearner",
]

logger = logging.getLogger(__name__)

_LOG_HEADER = ("scenario_id", "channel_id", "t", "o_t", "a_t", "o_t+1")


class DegenerateRowError(ValueError):
    """A transition row has zero total mass and cannot be normalized."""


@dataclasses.dataclass(frozen=True, eq=False)
class DirichletPrior:
    """Dirichlet concentration parameters, one row per (state, action) pair.

    ``alpha[s, a, s']`` is the pseudo-count for the transition ``s -> s'``
    under action ``a``.  Every row must carry some mass.
    """

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if alpha.ndim != 3 or alpha.shape[0] != alpha.shape[2]:
            raise ValueError(f"alpha must have shape (S, A, S), got {alpha.shape}")
        if np.any(alpha < 0.0) or not np.all(np.isfinite(alpha)):
            raise ValueError("alpha entries must be finite and non-negative")
        if np.any(alpha.sum(axis=2) <= 0.0):
            raise ValueError("every (state, action) row of alpha needs positive total mass")
        alpha.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)

    @property
    def n_states(self):
        return self.alpha.shape[0]

    @property
    def n_actions(self):
        return self.alpha.shape[1]

    @classmethod
    def uniform(cls, n_states, n_actions, strength=1.0):
        """Flat prior with ``strength`` pseudo-counts on every entry."""
        strength = check_positive(strength, "strength")
        return cls(np.full((n_states, n_actions, n_states), strength))


@dataclasses.dataclass(frozen=True, eq=False)
class TransitionCounts:
    """Integer transition tallies with the same layout as the prior."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m)
        if not np.issubdtype(m.dtype, np.integer):
            raise ValueError(f"counts must be integers, got dtype {m.dtype}")
        m = m.astype(np.int64)
        if m.ndim != 3 or m.shape[0] != m.shape[2]:
            raise ValueError(f"counts must have shape (S, A, S), got {m.shape}")
        if np.any(m < 0):
            raise ValueError("counts must be non-negative")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def zeros(cls, n_states, n_actions):
        return cls(np.zeros((n_states, n_actions, n_states), dtype=np.int64))

    @property
    def total(self):
        return int(self.m.sum())


@dataclasses.dataclass
class RivalChannel:
    """One rival's observation stream within a scenario."""

    channel_id: int
    triplets: list

    def validate(self, n_states, n_actions):
        previous = None
        for step, (o_t, a_t, o_next) in enumerate(self.triplets):
            check_index(o_t, n_states, f"channel {self.channel_id} o_t[{step}]")
            check_index(a_t, n_actions, f"channel {self.channel_id} a_t[{step}]")
            check_index(o_next, n_states, f"channel {self.channel_id} o_t+1[{step}]")
            if previous is not None and o_t != previous:
                raise ValueError(
                    f"channel {self.channel_id} is not contiguous at step {step}: "
                    f"{o_t} != previous successor {previous}"
                )
            previous = o_next


@dataclasses.dataclass
class ScenarioLog:
    """All rival channels recorded during one scenario."""

    scenario_id: int
    duration: int
    channels: list

    def validate(self, n_states, n_actions):
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        for channel in self.channels:
            channel.validate(n_states, n_actions)

    @property
    def n_triplets(self):
        return sum(len(channel.triplets) for channel in self.channels)


@dataclasses.dataclass(frozen=True, eq=False)
class DirichletPolicyParams:
    """Posterior Dirichlet parameters defining a learned policy.

    For the 192-state intersection domain this is 192 * 3 * 192 = 110,592
    numbers.  ``env`` optionally tags the environment the data came from.
    """

    params: np.ndarray
    env: EnvironmentState | None = None

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        if params.ndim != 3 or params.shape[0] != params.shape[2]:
            raise ValueError(f"params must have shape (S, A, S), got {params.shape}")
        if np.any(params < 0.0) or not np.all(np.isfinite(params)):
            raise ValueError("params must be finite and non-negative")
        params.flags.writeable = False
        object.__setattr__(self, "params", params)

    @property
    def n_states(self):
        return self.params.shape[0]

    @property
    def n_actions(self):
        return self.params.shape[1]

    @property
    def n_parameters(self):
        return int(self.params.size)


def _filtered_argmax_states(channel, model):
    """Yield ``(s_from, a, s_to)`` tuples for one channel under the tracking model.

    The carried belief advances once per triplet with ``(a_t, o_t)``; the
    successor state comes from a one-step lookahead with ``(a_t, o_t+1)`` that
    is not carried forward.  Zero-likelihood updates reset to uniform.
    """
    transition = model.transition
    observation = model.observation
    n_states = model.n_states
    belief = uniform_belief(n_states)
    resets = 0
    for o_t, a_t, o_next in channel.triplets:
        predicted = belief @ transition[a_t]
        numerator = predicted * observation[a_t, :, o_t]
        total = numerator.sum()
        if total > 0.0:
            belief = numerator / total
        else:
            belief = uniform_belief(n_states)
            resets += 1
        s_from = int(np.argmax(belief))
        predicted = belief @ transition[a_t]
        numerator = predicted * observation[a_t, :, o_next]
        total = numerator.sum()
        if total > 0.0:
            lookahead = numerator / total
        else:
            lookahead = uniform_belief(n_states)
            resets += 1
        s_to = int(np.argmax(lookahead))
        yield s_from, a_t, s_to
    if resets:
        logger.warning("channel %d hit %d zero-likelihood resets", channel.channel_id, resets)


def ingest_scenario(log, prior, tracking_model, counts):
    """Add one scenario's worth of pseudo-counts and return the new tallies.

    The input ``counts`` object is left untouched.  The tracking model is the
    filter used to decode states from observations; in the bootstrap setting
    its transition is the prior mean and its observation channel is the known
    sensor model.
    """
    n_states, n_actions = prior.n_states, prior.n_actions
    if (tracking_model.n_states, tracking_model.n_actions) != (n_states, n_actions):
        raise ValueError("tracking model and prior disagree on state or action count")
    if (counts.m.shape[0], counts.m.shape[1]) != (n_states, n_actions):
        raise ValueError("counts and prior disagree on state or action count")
    log.validate(n_states, n_actions)
    m = counts.m.copy()
    for channel in log.channels:
        for s_from, a_t, s_to in _filtered_argmax_states(channel, tracking_model):
            m[s_from, a_t, s_to] += 1
    return TransitionCounts(m)


def posterior(prior, counts):
    """Dirichlet posterior parameters: prior concentration plus counts."""
    if prior.alpha.shape != counts.m.shape:
        raise ValueError(
            f"prior shape {prior.alpha.shape} does not match counts shape {counts.m.shape}"
        )
    return DirichletPolicyParams(prior.alpha + counts.m)


def mean_transition(params):
    """Posterior-mean transition array shaped (A, S, S) for :class:`PomdpModel`.

    Each ``(s, a)`` row of the parameters is normalized to a distribution.
    Raises :class:`DegenerateRowError` when a row has zero total mass.
    """
    totals = params.params.sum(axis=2, keepdims=True)
    if np.any(totals <= 0.0):
        where = np.argwhere(totals[..., 0] <= 0.0)
        raise DegenerateRowError(f"zero-mass transition rows at (state, action) {where[:5].tolist()}")
    mean = params.params / totals
    return np.transpose(mean, (1, 0, 2))


def learn_policy_params(dataset, prior, tracking_model, env=None):
    """Fold a dataset of scenario logs into posterior parameters."""
    counts = TransitionCounts.zeros(prior.n_states, prior.n_actions)
    for log in dataset:
        counts = ingest_scenario(log, prior, tracking_model, counts)
    post = posterior(prior, counts)
    if env is not None:
        post = DirichletPolicyParams(post.params, env=env)
    return post


def make_tracking_model(prior, observation, reward, discount):
    """Bootstrap model whose transition is the prior mean."""
    mean = mean_transition(DirichletPolicyParams(prior.alpha))
    return PomdpModel(transition=mean, observation=observation, reward=reward, discount=discount)


def write_scenario_logs(path, logs):
    """Write scenario logs as one-triplet-per-line CSV with a header row."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_LOG_HEADER)
        for log in logs:
            for channel in log.channels:
                for t, (o_t, a_t, o_next) in enumerate(channel.triplets):
                    writer.writerow([log.scenario_id, channel.channel_id, t, o_t, a_t, o_next])


def read_scenario_logs(path):
    """Read logs written by :func:`write_scenario_logs`, grouped by scenario."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != _LOG_HEADER:
            raise ValueError(f"unexpected scenario log header: {header!r}")
        for row in reader:
            if not row:
                continue
            rows.append(tuple(int(value) for value in row))
    scenarios = {}
    for scenario_id, channel_id, t, o_t, a_t, o_next in rows:
        channels = scenarios.setdefault(scenario_id, {})
        channels.setdefault(channel_id, []).append((t, o_t, a_t, o_next))
    logs = []
    for scenario_id in sorted(scenarios):
        channels = []
        duration = 0
        for channel_id in sorted(scenarios[scenario_id]):
            steps = sorted(scenarios[scenario_id][channel_id])
            duration = max(duration, steps[-1][0] + 1 if steps else 0)
            channels.append(RivalChannel(channel_id, [step[1:] for step in steps]))
        logs.append(ScenarioLog(scenario_id=scenario_id, duration=duration, channels=channels))
    return logs


def save_policy_params(path, params):
    """Persist parameters as a flat array plus shape header, with an env tag."""
    payload = {
        "params": params.params.reshape(-1),
        "shape": np.asarray(params.params.shape, dtype=np.int64),
    }
    if params.env is not None:
        payload["env"] = np.asarray([params.env.visibility, params.env.density, params.env.behavior])
    np.savez(path, **payload)


def load_policy_params(path):
    with np.load(path, allow_pickle=False) as data:
        shape = tuple(int(v) for v in data["shape"])
        flat = np.asarray(data["params"], dtype=np.float64)
        env = None
        if "env" in data:
            env = EnvironmentState(*(str(v) for v in data["env"]))
    return DirichletPolicyParams(flat.reshape(shape), env=env)


class DirichletTransitionLearner(BaseEstimator):
    """Estimator wrapper around the counting pipeline.

    Follows the scikit-learn protocol: constructor arguments are stored
    verbatim, ``fit`` takes a sequence of :class:`ScenarioLog` and returns
    ``self``, and fitted state lives in trailing-underscore attributes.
    ``partial_fit`` accumulates further logs, which is exact because counts
    are additive across scenarios.
    """

    def __init__(self, tracking_model=None, alpha=1.0):
        self.tracking_model = tracking_model
        self.alpha = alpha

    def _check_model(self):
        if self.tracking_model is None:
            raise ValueError("tracking_model must be provided before fitting")
        return self.tracking_model

    def fit(self, X, y=None):
        """Learn from an iterable of scenario logs."""
        model = self._check_model()
        self.prior_ = DirichletPrior.uniform(model.n_states, model.n_actions, self.alpha)
        self.counts_ = TransitionCounts.zeros(model.n_states, model.n_actions)
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        model = self._check_model()
        if not hasattr(self, "counts_"):
            self.prior_ = DirichletPrior.uniform(model.n_states, model.n_actions, self.alpha)
            self.counts_ = TransitionCounts.zeros(model.n_states, model.n_actions)
        for log in X:
            self.counts_ = ingest_scenario(log, self.prior_, model, self.counts_)
        self.params_ = posterior(self.prior_, self.counts_)
        self.transition_ = mean_transition(self.params_)
        return self

    def learned_model(self):
        """Tracking model with its transition replaced by the learned mean."""
        check_is_fitted(self, "transition_")
        base = self._check_model()
        return PomdpModel(
            transition=self.transition_,
            observation=base.observation,
            reward=base.reward,
            discount=base.discount,
        )
