"""Tabular POMDP models, discrete Bayes belief filtering, and QMDP solving.

A model is a dense tabular tuple (transition, observation, reward, discount).
Beliefs are plain probability vectors over states.  The solver computes the
QMDP value matrix: value iteration on the fully observable MDP, with actions
chosen at runtime by weighting Q rows by the current belief.
"""

import dataclasses
import json
import logging

import numpy as np

from .validation import as_float_array, check_belief, check_index, check_row_stochastic

__all__ = [
    "ZeroLikelihoodError",
    "PomdpModel",
    "QMatrix",
    "uniform_belief",
    "belief_update",
    "belief_update_or_reset",
    "most_likely_state",
    "solve_qmdp",
    "best_action",
]

logger = logging.getLogger(__name__)

_JSON_KEYS = ("n_states", "n_actions", "n_observations", "transition", "observation", "reward", "discount")


class ZeroLikelihoodError(ValueError):
    """Raised when an observation has zero probability under the predicted belief."""


@dataclasses.dataclass(frozen=True, eq=False)
class PomdpModel:
    """Dense tabular POMDP.

    Parameters
    ----------
    transition : ndarray of shape (n_actions, n_states, n_states)
        ``transition[a, s, s']`` is the probability of moving to ``s'`` when
        taking action ``a`` in state ``s``.  Rows over ``s'`` are stochastic.
    observation : ndarray of shape (n_actions, n_states, n_observations)
        ``observation[a, s', o]`` is the probability of observing ``o`` after
        action ``a`` lands in state ``s'``.  Rows over ``o`` are stochastic.
    reward : ndarray of shape (n_states, n_actions)
        Immediate reward for taking an action in a state.
    discount : float
        Discount factor in [0, 1].
    """

    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        transition = check_row_stochastic(self.transition, "transition")
        observation = check_row_stochastic(self.observation, "observation")
        reward = as_float_array(self.reward, "reward")
        if transition.ndim != 3 or transition.shape[1] != transition.shape[2]:
            raise ValueError(f"transition must have shape (A, S, S), got {transition.shape}")
        n_actions, n_states, _ = transition.shape
        if observation.ndim != 3 or observation.shape[:2] != (n_actions, n_states):
            raise ValueError(
                f"observation must have shape ({n_actions}, {n_states}, O), got {observation.shape}"
            )
        if reward.shape != (n_states, n_actions):
            raise ValueError(f"reward must have shape ({n_states}, {n_actions}), got {reward.shape}")
        discount = float(self.discount)
        if not 0.0 <= discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {discount!r}")
        for arr in (transition, observation, reward):
            arr.flags.writeable = False
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "observation", observation)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "discount", discount)

    @property
    def n_actions(self):
        return self.transition.shape[0]

    @property
    def n_states(self):
        return self.transition.shape[1]

    @property
    def n_observations(self):
        return self.observation.shape[2]

    def to_dict(self):
        """Return a JSON-compatible dict with nested row-major arrays."""
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_observations": self.n_observations,
            "transition": self.transition.tolist(),
            "observation": self.observation.tolist(),
            "reward": self.reward.tolist(),
            "discount": self.discount,
        }

    @classmethod
    def from_dict(cls, data):
        missing = [key for key in _JSON_KEYS if key not in data]
        if missing:
            raise ValueError(f"model dict is missing keys: {missing}")
        model = cls(
            transition=np.asarray(data["transition"], dtype=np.float64),
            observation=np.asarray(data["observation"], dtype=np.float64),
            reward=np.asarray(data["reward"], dtype=np.float64),
            discount=float(data["discount"]),
        )
        declared = (data["n_actions"], data["n_states"], data["n_observations"])
        actual = (model.n_actions, model.n_states, model.n_observations)
        if tuple(int(v) for v in declared) != actual:
            raise ValueError(f"declared sizes {declared} do not match arrays {actual}")
        return model

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle)

    @classmethod
    def load_json(cls, path):
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


@dataclasses.dataclass(frozen=True, eq=False)
class QMatrix:
    """Result of :func:`solve_qmdp`.

    ``q`` has shape (n_states, n_actions).  ``converged`` is False when the
    iteration limit was reached with a Bellman residual above tolerance; the
    matrix is still usable.
    """

    q: np.ndarray
    converged: bool
    iterations: int
    residual: float


def uniform_belief(n_states):
    """Uniform probability vector over ``n_states`` states."""
    if n_states <= 0:
        raise ValueError("n_states must be positive")
    return np.full(n_states, 1.0 / n_states)


def belief_update(belief, action, obs, model):
    """Discrete Bayes filter step.

    Computes ``b'(s') = Z(o | s', a) * sum_s T(s' | s, a) b(s)`` and
    normalizes.  Raises :class:`ZeroLikelihoodError` when the normalizer is
    zero, meaning the observation is impossible under the predicted belief.
    """
    b = check_belief(belief, model.n_states)
    action = check_index(action, model.n_actions, "action")
    obs = check_index(obs, model.n_observations, "obs")
    predicted = b @ model.transition[action]
    numerator = predicted * model.observation[action, :, obs]
    total = numerator.sum()
    if total <= 0.0:
        raise ZeroLikelihoodError(
            f"observation {obs} has zero likelihood after action {action}"
        )
    return numerator / total


def belief_update_or_reset(belief, action, obs, model):
    """Bayes step that falls back to the uniform belief on zero likelihood.

    Returns ``(new_belief, was_reset)``.  Resets are logged so that silent
    filter divergence is visible in long runs.
    """
    try:
        return belief_update(belief, action, obs, model), False
    except ZeroLikelihoodError:
        logger.warning(
            "belief reset to uniform: observation %d impossible after action %d", obs, action
        )
        return uniform_belief(model.n_states), True


def most_likely_state(belief):
    """Index of the largest belief entry; ties break to the lowest index."""
    b = check_belief(belief)
    return int(np.argmax(b))


def solve_qmdp(model, tol=1e-6, max_iter=10_000):
    """Value-iterate ``Q(s, a) = R(s, a) + gamma * sum_s' T(s'|s,a) max_a' Q(s', a')``.

    Iterates from an all-zero initialization until the sup-norm Bellman
    residual drops to ``tol`` or ``max_iter`` sweeps are done.  When the limit
    is hit first, the returned :class:`QMatrix` has ``converged=False``.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    transition = model.transition
    reward = model.reward
    gamma = model.discount
    q = np.zeros_like(reward)
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        value = q.max(axis=1)
        q_next = reward + gamma * (transition @ value).T
        residual = float(np.max(np.abs(q_next - q)))
        q = q_next
        if residual <= tol:
            break
    converged = residual <= tol
    if not converged:
        logger.warning(
            "QMDP did not converge: residual %.3e > tol %.3e after %d sweeps",
            residual, tol, iterations,
        )
    q.flags.writeable = False
    return QMatrix(q=q, converged=converged, iterations=iterations, residual=residual)


def best_action(q, belief):
    """Action maximizing the belief-weighted Q value, lowest index on ties."""
    matrix = q.q if isinstance(q, QMatrix) else np.asarray(q, dtype=np.float64)
    b = check_belief(belief, matrix.shape[0])
    return int(np.argmax(b @ matrix))
