"""T-intersection decision domain.

The world around one rival vehicle is abstracted into a factored state with
five components:

* ``pos_ego``   in (before, at, inside, after): ego progress through the box
* ``sgt_ego``   in (yes, no): whether the ego's sightline to the rival is clear
* ``pos_rival`` in (before, at, inside, after): rival progress along its road
* ``blk_rival`` in (yes, no): whether the rival's route blocks the ego's path
* ``aggr_rival`` in (cautious, normal, aggressive): rival driving style

That gives 4 * 2 * 4 * 2 * 3 = 192 states, indexed by a mixed-radix code with
``pos_ego`` as the most significant digit.  Observations share the same index
space: the ego observes its own components exactly and the rival's position
and style through a noisy channel.
"""

import dataclasses
import itertools

import numpy as np

from .pomdp import PomdpModel
from .validation import check_index, check_unit_interval

__all__ = [
    "EGO_POSITIONS",
    "SIGHTLINES",
    "RIVAL_POSITIONS",
    "BLOCKINGS",
    "AGGRESSIVENESS",
    "FACTOR_SIZES",
    "N_STATES",
    "ACTIONS",
    "N_ACTIONS",
    "STOP",
    "EDGE",
    "GO",
    "FactoredState",
    "encode_state",
    "decode_state",
    "all_states",
    "NoiseConfig",
    "RewardSpec",
    "is_collision_state",
    "build_observation_model",
    "build_reward_model",
    "build_pomdp_model",
    "VISIBILITY_LEVELS",
    "DENSITY_LEVELS",
    "BEHAVIOR_LEVELS",
    "EnvironmentState",
    "all_environment_states",
]

EGO_POSITIONS = ("before", "at", "inside", "after")
SIGHTLINES = ("yes", "no")
RIVAL_POSITIONS = ("before", "at", "inside", "after")
BLOCKINGS = ("yes", "no")
AGGRESSIVENESS = ("cautious", "normal", "aggressive")

FACTOR_SIZES = (
    len(EGO_POSITIONS),
    len(SIGHTLINES),
    len(RIVAL_POSITIONS),
    len(BLOCKINGS),
    len(AGGRESSIVENESS),
)
N_STATES = int(np.prod(FACTOR_SIZES))

ACTIONS = ("stop", "edge", "go")
N_ACTIONS = len(ACTIONS)
STOP, EDGE, GO = range(N_ACTIONS)

# Handy component indices.
POS_BEFORE, POS_AT, POS_INSIDE, POS_AFTER = range(4)
SGT_YES, SGT_NO = range(2)
BLK_YES, BLK_NO = range(2)
AGGR_CAUTIOUS, AGGR_NORMAL, AGGR_AGGRESSIVE = range(3)


@dataclasses.dataclass(frozen=True)
class FactoredState:
    """One rival's abstract situation; all fields are component indices."""

    pos_ego: int
    sgt_ego: int
    pos_rival: int
    blk_rival: int
    aggr_rival: int

    def __post_init__(self):
        for value, size, name in zip(self.astuple(), FACTOR_SIZES, self.field_names()):
            check_index(value, size, name)

    def astuple(self):
        return (self.pos_ego, self.sgt_ego, self.pos_rival, self.blk_rival, self.aggr_rival)

    @staticmethod
    def field_names():
        return ("pos_ego", "sgt_ego", "pos_rival", "blk_rival", "aggr_rival")

    def names(self):
        """Component values as human-readable strings."""
        tables = (EGO_POSITIONS, SIGHTLINES, RIVAL_POSITIONS, BLOCKINGS, AGGRESSIVENESS)
        return tuple(table[value] for table, value in zip(tables, self.astuple()))

    @classmethod
    def from_names(cls, pos_ego, sgt_ego, pos_rival, blk_rival, aggr_rival):
        return cls(
            EGO_POSITIONS.index(pos_ego),
            SIGHTLINES.index(sgt_ego),
            RIVAL_POSITIONS.index(pos_rival),
            BLOCKINGS.index(blk_rival),
            AGGRESSIVENESS.index(aggr_rival),
        )


def encode_state(state):
    """Mixed-radix index of a :class:`FactoredState`, ``pos_ego`` most significant."""
    index = 0
    for value, size in zip(state.astuple(), FACTOR_SIZES):
        index = index * size + value
    return index


def decode_state(index):
    """Inverse of :func:`encode_state`."""
    index = check_index(index, N_STATES, "state index")
    values = []
    for size in reversed(FACTOR_SIZES):
        index, digit = divmod(index, size)
        values.append(digit)
    return FactoredState(*reversed(values))


_DECODED = tuple(decode_state(i) for i in range(N_STATES))


def all_states():
    """All 192 factored states in index order."""
    return _DECODED


def is_collision_state(state):
    """Ego and a blocking rival simultaneously inside the intersection box."""
    return (
        state.pos_ego == POS_INSIDE
        and state.pos_rival == POS_INSIDE
        and state.blk_rival == BLK_YES
    )


@dataclasses.dataclass(frozen=True)
class NoiseConfig:
    """Sensing noise for the rival-facing observation channel.

    The ego reads its own components (``pos_ego``, ``sgt_ego``, ``blk_rival``)
    exactly.  The rival's position is read correctly with probability
    ``p_correct_pos``, scaled by ``occlusion_penalty`` when the sightline is
    blocked; its style is read correctly with probability ``p_correct_aggr``.
    Residual mass is spread uniformly over the wrong values of the same factor.
    """

    p_correct_pos: float = 0.9
    p_correct_aggr: float = 0.6
    occlusion_penalty: float = 0.6

    def __post_init__(self):
        for name in ("p_correct_pos", "p_correct_aggr", "occlusion_penalty"):
            object.__setattr__(self, name, check_unit_interval(getattr(self, name), name, low_open=True))

    @classmethod
    def noiseless(cls):
        return cls(p_correct_pos=1.0, p_correct_aggr=1.0, occlusion_penalty=1.0)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclasses.dataclass(frozen=True)
class RewardSpec:
    """Reward table parameters.

    A state counts as a collision when the ego and a blocking rival are both
    inside the box; those states earn ``r_collision`` regardless of the action.
    States with the ego past the box earn ``r_goal``.  Everything else pays the
    per-step cost, plus ``r_edge`` when creeping forward.
    """

    r_collision: float = -1000.0
    r_goal: float = 200.0
    r_step: float = -1.0
    r_edge: float = -2.0

    def __post_init__(self):
        if not self.r_collision < self.r_step < 0.0 < self.r_goal:
            raise ValueError("rewards must satisfy r_collision < r_step < 0 < r_goal")
        if self.r_edge > 0.0:
            raise ValueError("r_edge must be non-positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _confusion_row(size, true_index, p_correct):
    row = np.full(size, (1.0 - p_correct) / (size - 1))
    row[true_index] = p_correct
    return row


def _delta_row(size, true_index):
    row = np.zeros(size)
    row[true_index] = 1.0
    return row


def build_observation_model(noise=None):
    """Dense observation matrix of shape (n_actions, 192, 192).

    The channel is action-independent and factorizes over the five state
    components, so each state's row is a Kronecker product of per-factor
    distributions taken in index order.
    """
    noise = noise or NoiseConfig()
    single = np.zeros((N_STATES, N_STATES))
    for index, state in enumerate(all_states()):
        p_pos = noise.p_correct_pos
        if state.sgt_ego == SGT_NO:
            p_pos *= noise.occlusion_penalty
        row = _delta_row(FACTOR_SIZES[0], state.pos_ego)
        row = np.kron(row, _delta_row(FACTOR_SIZES[1], state.sgt_ego))
        row = np.kron(row, _confusion_row(FACTOR_SIZES[2], state.pos_rival, p_pos))
        row = np.kron(row, _delta_row(FACTOR_SIZES[3], state.blk_rival))
        row = np.kron(row, _confusion_row(FACTOR_SIZES[4], state.aggr_rival, noise.p_correct_aggr))
        single[index] = row
    return np.broadcast_to(single, (N_ACTIONS, N_STATES, N_STATES)).copy()


def build_reward_model(rewards=None):
    """Dense reward table of shape (192, n_actions)."""
    rewards = rewards or RewardSpec()
    table = np.zeros((N_STATES, N_ACTIONS))
    for index, state in enumerate(all_states()):
        if is_collision_state(state):
            table[index, :] = rewards.r_collision
        elif state.pos_ego == POS_AFTER:
            table[index, :] = rewards.r_goal
        else:
            table[index, :] = rewards.r_step
            table[index, EDGE] += rewards.r_edge
    return table


def build_pomdp_model(transition, noise=None, rewards=None, discount=0.95):
    """Assemble a :class:`PomdpModel` for this domain from a transition array."""
    return PomdpModel(
        transition=transition,
        observation=build_observation_model(noise),
        reward=build_reward_model(rewards),
        discount=discount,
    )


VISIBILITY_LEVELS = ("no", "yes")
DENSITY_LEVELS = ("low", "med", "high")
BEHAVIOR_LEVELS = ("cautious", "normal", "aggressive")


@dataclasses.dataclass(frozen=True)
class EnvironmentState:
    """Coarse description of one T-intersection.

    ``visibility`` says whether the ego can see down the crossing road from
    the stop line, ``density`` sets the traffic arrival rate, and ``behavior``
    sets the prevailing driving style of the traffic.
    """

    visibility: str
    density: str
    behavior: str

    def __post_init__(self):
        for value, table, name in (
            (self.visibility, VISIBILITY_LEVELS, "visibility"),
            (self.density, DENSITY_LEVELS, "density"),
            (self.behavior, BEHAVIOR_LEVELS, "behavior"),
        ):
            if value not in table:
                raise ValueError(f"{name} must be one of {table}, got {value!r}")

    @property
    def embedding(self):
        """Ordinal embedding with each axis scaled to [0, 1]."""
        return np.array(
            [
                VISIBILITY_LEVELS.index(self.visibility) / (len(VISIBILITY_LEVELS) - 1),
                DENSITY_LEVELS.index(self.density) / (len(DENSITY_LEVELS) - 1),
                BEHAVIOR_LEVELS.index(self.behavior) / (len(BEHAVIOR_LEVELS) - 1),
            ]
        )

    @property
    def index(self):
        """Canonical index in [0, 18), mixed radix over (visibility, density, behavior)."""
        return (
            VISIBILITY_LEVELS.index(self.visibility) * len(DENSITY_LEVELS)
            + DENSITY_LEVELS.index(self.density)
        ) * len(BEHAVIOR_LEVELS) + BEHAVIOR_LEVELS.index(self.behavior)

    @property
    def label(self):
        return f"{self.visibility}_{self.density}_{self.behavior}"

    @classmethod
    def from_label(cls, label):
        parts = label.split("_")
        if len(parts) != 3:
            raise ValueError(f"environment label must be vis_density_behavior, got {label!r}")
        return cls(*parts)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def all_environment_states():
    """All 18 environments in canonical index order."""
    return tuple(
        EnvironmentState(vis, den, beh)
        for vis, den, beh in itertools.product(VISIBILITY_LEVELS, DENSITY_LEVELS, BEHAVIOR_LEVELS)
    )
