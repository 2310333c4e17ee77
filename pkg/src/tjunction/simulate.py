"""Seeded kinematic T-intersection simulator.

The ego vehicle sits stopped at a stop line and must cross an 8 m conflict box
through which rival traffic flows on a perpendicular road.  Rivals arrive as a
Poisson process, track behavior-dependent target speeds with simple
gap-keeping, and either cross straight through (blocking the ego's path) or
turn off before the conflict zone.  Each live rival is tracked by its own
belief over the 192 abstract states; the executed action is the most
conservative of the per-rival recommendations.

Everything stochastic flows from a single scenario seed, split into separate
world, sensing, and exploration streams, so a scenario replays bit for bit.
"""

import dataclasses
import math

import numpy as np

from .domain import (
    AGGRESSIVENESS,
    BEHAVIOR_LEVELS,
    BLK_NO,
    BLK_YES,
    DENSITY_LEVELS,
    GO,
    N_ACTIONS,
    POS_AFTER,
    POS_AT,
    POS_BEFORE,
    POS_INSIDE,
    RIVAL_POSITIONS,
    SGT_NO,
    SGT_YES,
    STOP,
    EnvironmentState,
    FactoredState,
    NoiseConfig,
    encode_state,
)
from .learning import RivalChannel, ScenarioLog
from .pomdp import QMatrix

__all__ = [
    "ROUTE_CROSSING",
    "ROUTE_TURNING",
    "SimParams",
    "ScenarioConfig",
    "RivalVehicle",
    "WorldState",
    "make_world",
    "step_world",
    "true_factored_state",
    "abstract_observe",
    "safest_action",
    "Trajectory",
    "RunMetrics",
    "score_metrics",
    "run_scenario",
    "write_metrics_csv",
    "METRICS_HEADER",
]

ROUTE_CROSSING = "crossing"
ROUTE_TURNING = "turning_in"

METRICS_HEADER = ("env_id", "seed", "collision_risk", "discomfort", "time_taken", "collided", "timeout")


@dataclasses.dataclass(frozen=True)
class SimParams:
    """Geometry, kinematics, and traffic parameters.

    Distances are meters, speeds m/s, accelerations m/s^2.  The ego moves
    along y with the stop line at 0 and the conflict box spanning (0, box_len];
    rivals move along x at height ``lane_offset`` with the conflict zone at
    |x| <= ``conflict_half_width``.  Occluded environments hide rivals farther
    than ``occl_range`` from the conflict point until the ego has nosed past
    ``occl_clear_progress``, so creeping forward is how the ego buys sight.
    """

    dt: float = 0.25
    max_ticks: int = 240
    approach_len: float = 20.0
    box_len: float = 8.0
    exit_len: float = 15.0
    road_half_len: float = 60.0
    lane_offset: float = 4.0
    conflict_half_width: float = 2.0
    rival_at_dist: float = 12.0
    ego_at_band: float = 2.0
    occl_range: float = 12.0
    occl_clear_progress: float = 2.0
    v_edge: float = 1.5
    v_go: float = 8.0
    a_accel: float = 2.5
    a_brake: float = 4.0
    rival_speeds: tuple = (4.0, 7.0, 11.0)
    rival_accel: float = 2.0
    rival_brake: float = 6.0
    yield_dist: tuple = (18.0, 9.0, 0.0)
    car_length: float = 4.0
    gap_stop: float = 5.0
    gap_free: float = 15.0
    spawn_min_gap: float = 8.0
    p_turn: float = 0.25
    turn_x: float = -4.0
    arrival_rates: tuple = (0.04, 0.10, 0.18)
    behavior_mix: tuple = ((0.7, 0.25, 0.05), (0.2, 0.6, 0.2), (0.05, 0.25, 0.7))
    collision_dist: float = 2.0
    d_floor: float = 1.0
    d_cap: float = 50.0
    warmup_s: float = 20.0
    noise: NoiseConfig = dataclasses.field(default_factory=NoiseConfig)

    def to_dict(self):
        data = dataclasses.asdict(self)
        data["noise"] = self.noise.to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "noise" in data and isinstance(data["noise"], dict):
            data["noise"] = NoiseConfig.from_dict(data["noise"])
        for key in ("rival_speeds", "yield_dist", "arrival_rates"):
            if key in data:
                data[key] = tuple(data[key])
        if "behavior_mix" in data:
            data["behavior_mix"] = tuple(tuple(row) for row in data["behavior_mix"])
        return cls(**data)


@dataclasses.dataclass(frozen=True)
class ScenarioConfig:
    """One scenario: an environment, a seed, and the shared sim parameters."""

    env: EnvironmentState
    seed: int
    scenario_id: int = 0
    params: SimParams = dataclasses.field(default_factory=SimParams)

    @property
    def arrival_rate(self):
        return self.params.arrival_rates[DENSITY_LEVELS.index(self.env.density)]

    @property
    def behavior_mix(self):
        return self.params.behavior_mix[BEHAVIOR_LEVELS.index(self.env.behavior)]

    @property
    def occluded(self):
        return self.env.visibility == "no"


@dataclasses.dataclass(frozen=True)
class RivalVehicle:
    progress: float
    speed: float
    behavior: int
    route: str
    channel_id: int


@dataclasses.dataclass
class WorldState:
    """World snapshot; stepping returns a new snapshot but advances the shared rng."""

    ego_progress: float
    ego_speed: float
    rivals: list
    clock: float
    rng: np.random.Generator
    next_channel_id: int = 0


def _track(speed, target, a_up, a_down, dt):
    if speed < target:
        return min(speed + a_up * dt, target)
    if speed > target:
        return max(speed - a_down * dt, target)
    return speed


def make_world(config, rng=None):
    """Fresh world with the ego stopped at the line and pre-warmed traffic.

    The rival process runs alone for ``warmup_s`` so the road is already
    populated when the episode clock starts.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    world = WorldState(ego_progress=0.0, ego_speed=0.0, rivals=[], clock=0.0, rng=rng)
    warmup_ticks = int(round(config.params.warmup_s / config.params.dt))
    for _ in range(warmup_ticks):
        world = step_world(world, STOP, config)
    world.clock = 0.0
    return world


def step_world(world, ego_action, config):
    """Advance every vehicle by one tick and return the new world state.

    The ego tracks the action's target speed (0 for stop, creep speed for
    edge, road speed for go).  Rivals hold their style's target speed subject
    to gap-keeping behind slower traffic, and all but aggressive drivers brake
    for an ego that is already inside the box.  Poisson arrivals enter at the
    far end of the crossing road whenever the entry slot is clear.
    """
    p = config.params
    targets = (0.0, p.v_edge, p.v_go)
    ego_speed = _track(world.ego_speed, targets[ego_action], p.a_accel, p.a_brake, p.dt)
    ego_progress = world.ego_progress + ego_speed * p.dt

    ego_in_box = 0.0 < world.ego_progress <= p.box_len
    positions = [r.progress for r in world.rivals]
    rivals = []
    for rival in world.rivals:
        desired = p.rival_speeds[rival.behavior]
        gaps = [x - rival.progress for x in positions if x > rival.progress]
        if gaps:
            gap = min(gaps) - p.car_length
            desired *= min(max((gap - p.gap_stop) / (p.gap_free - p.gap_stop), 0.0), 1.0)
        if ego_in_box and rival.route == ROUTE_CROSSING and rival.progress < -p.conflict_half_width:
            if (-p.conflict_half_width - rival.progress) <= p.yield_dist[rival.behavior]:
                desired = 0.0
        speed = _track(rival.speed, desired, p.rival_accel, p.rival_brake, p.dt)
        progress = rival.progress + speed * p.dt
        if rival.route == ROUTE_TURNING and progress >= p.turn_x:
            continue
        if progress > p.road_half_len:
            continue
        rivals.append(dataclasses.replace(rival, progress=progress, speed=speed))

    next_channel_id = world.next_channel_id
    arrivals = world.rng.poisson(config.arrival_rate * p.dt)
    for _ in range(arrivals):
        entry = -p.road_half_len
        if all(r.progress > entry + p.spawn_min_gap for r in rivals):
            behavior = int(world.rng.choice(len(AGGRESSIVENESS), p=config.behavior_mix))
            route = ROUTE_TURNING if world.rng.random() < p.p_turn else ROUTE_CROSSING
            rivals.append(
                RivalVehicle(
                    progress=entry,
                    speed=p.rival_speeds[behavior],
                    behavior=behavior,
                    route=route,
                    channel_id=next_channel_id,
                )
            )
            next_channel_id += 1

    return WorldState(
        ego_progress=ego_progress,
        ego_speed=ego_speed,
        rivals=rivals,
        clock=world.clock + p.dt,
        rng=world.rng,
        next_channel_id=next_channel_id,
    )


def _ego_bucket(y, p):
    if y < -p.ego_at_band:
        return POS_BEFORE
    if y <= 0.0:
        return POS_AT
    if y <= p.box_len:
        return POS_INSIDE
    return POS_AFTER


def _rival_bucket(x, p):
    if x < -p.rival_at_dist:
        return POS_BEFORE
    if x < -p.conflict_half_width:
        return POS_AT
    if x <= p.conflict_half_width:
        return POS_INSIDE
    return POS_AFTER


def true_factored_state(world, rival, config):
    """Ground-truth abstract state for one rival."""
    p = config.params
    occluded = (
        config.occluded
        and world.ego_progress <= p.occl_clear_progress
        and abs(rival.progress) > p.occl_range
    )
    blocking = rival.route == ROUTE_CROSSING and rival.progress <= p.conflict_half_width
    return FactoredState(
        pos_ego=_ego_bucket(world.ego_progress, p),
        sgt_ego=SGT_NO if occluded else SGT_YES,
        pos_rival=_rival_bucket(rival.progress, p),
        blk_rival=BLK_YES if blocking else BLK_NO,
        aggr_rival=rival.behavior,
    )


def _confuse(rng, true_value, size, p_correct):
    if rng.random() < p_correct:
        return true_value
    wrong = int(rng.integers(size - 1))
    return wrong if wrong < true_value else wrong + 1


def abstract_observe(world, rival, config, rng):
    """Sample an observation index for one rival.

    The ego's own components and the blocking flag are read exactly.  The
    rival's position and style pass through the same confusion channel as the
    dense observation matrix built from this :class:`NoiseConfig`, including
    the occlusion penalty on position sensing when the sightline is blocked.
    """
    noise = config.params.noise
    state = true_factored_state(world, rival, config)
    p_pos = noise.p_correct_pos
    if state.sgt_ego == SGT_NO:
        p_pos *= noise.occlusion_penalty
    observed = FactoredState(
        pos_ego=state.pos_ego,
        sgt_ego=state.sgt_ego,
        pos_rival=_confuse(rng, state.pos_rival, len(RIVAL_POSITIONS), p_pos),
        blk_rival=state.blk_rival,
        aggr_rival=_confuse(rng, state.aggr_rival, len(AGGRESSIVENESS), noise.p_correct_aggr),
    )
    return encode_state(observed)


def safest_action(actions):
    """Most conservative of the per-rival recommendations.

    Actions are ordered stop < edge < go by increasing assertiveness, so the
    minimum index wins.  With no rivals under consideration the answer is go.
    """
    actions = list(actions)
    if not actions:
        return GO
    return int(min(actions))


def _rival_distance(world, rival, p):
    return math.hypot(rival.progress, p.lane_offset - world.ego_progress)


def _is_collision(world, rival, p):
    return (
        rival.route == ROUTE_CROSSING
        and abs(rival.progress) <= p.conflict_half_width
        and 0.0 < world.ego_progress <= p.box_len
        and _rival_distance(world, rival, p) < p.collision_dist
    )


@dataclasses.dataclass
class Trajectory:
    """Per-tick traces needed to score a run."""

    speeds: list
    min_dists: list
    collided: bool
    timeout: bool
    dt: float


@dataclasses.dataclass(frozen=True)
class RunMetrics:
    """Outcome of one scenario.

    ``collision_risk`` is the inverse of the closest approach to any rival,
    with the distance clamped to [d_floor, d_cap]; a collided run scores the
    maximum risk 1/d_floor exactly.  ``discomfort`` integrates absolute ego
    acceleration by the rectangle rule, which reduces to the summed absolute
    speed changes.  ``time_taken`` runs from the stop line to clearing the
    box; runs that never clear it (collision or timeout) score the full
    episode length, so ending early by crashing is never an advantage.
    """

    collision_risk: float
    discomfort: float
    time_taken: float
    collided: bool
    timeout: bool


def score_metrics(trajectory, params):
    speeds = np.asarray(trajectory.speeds, dtype=np.float64)
    finite = [d for d in trajectory.min_dists if d != math.inf]
    dmin = min(finite) if finite else math.inf
    if trajectory.collided:
        dmin = params.d_floor
    dmin = min(max(dmin, params.d_floor), params.d_cap)
    if trajectory.collided or trajectory.timeout:
        time_taken = params.max_ticks * trajectory.dt
    else:
        time_taken = (len(speeds) - 1) * trajectory.dt
    return RunMetrics(
        collision_risk=1.0 / dmin,
        discomfort=float(np.abs(np.diff(speeds)).sum()),
        time_taken=time_taken,
        collided=trajectory.collided,
        timeout=trajectory.timeout,
    )


def run_scenario(config, q, model, explore_eps=0.0, explore_hold=0.25, forced_action=None):
    """Run one scenario under belief-tracking control; returns (log, metrics).

    Per tick: each live rival's belief recommends an action through the Q
    matrix, the most conservative recommendation executes (optionally replaced
    by a sticky exploration action), the world steps, and every surviving
    rival's belief is updated with its newly sampled observation.  The log
    records one channel of (o_t, a_t, o_t+1) triplets per rival.  The run ends
    when the ego clears the box, a collision occurs, or ``max_ticks`` pass.

    ``forced_action`` pins the executed action on every tick, bypassing both
    the recommendations and exploration; fixed degenerate controllers (the
    always-stop safety probe) are not expressible through the arbitration
    layer because an empty road recommends go.
    """
    p = config.params
    q_matrix = q.q if isinstance(q, QMatrix) else np.asarray(q, dtype=np.float64)
    n_states = model.n_states
    if q_matrix.shape != (n_states, model.n_actions):
        raise ValueError(f"q has shape {q_matrix.shape}, expected ({n_states}, {model.n_actions})")
    transition = model.transition
    observation = model.observation
    uniform = np.full(n_states, 1.0 / n_states)

    def updated(belief, action, obs):
        numerator = (belief @ transition[action]) * observation[action, :, obs]
        total = numerator.sum()
        if total <= 0.0:
            return uniform.copy()
        return numerator / total

    root = np.random.SeedSequence(config.seed)
    world_seq, obs_seq, explore_seq = root.spawn(3)
    world = make_world(config, np.random.default_rng(world_seq))
    obs_rng = np.random.default_rng(obs_seq)
    explore_rng = np.random.default_rng(explore_seq)

    beliefs = {}
    last_obs = {}
    channels = {}
    for rival in world.rivals:
        obs = abstract_observe(world, rival, config, obs_rng)
        beliefs[rival.channel_id] = updated(uniform, STOP, obs)
        last_obs[rival.channel_id] = obs
        channels[rival.channel_id] = []

    speeds = [world.ego_speed]
    min_dists = []
    collided = False
    crossed = False
    override = 0
    hold = 0

    for _ in range(p.max_ticks):
        if forced_action is not None:
            action = int(forced_action)
        elif world.rivals:
            recommendations = [
                int(np.argmax(beliefs[r.channel_id] @ q_matrix)) for r in world.rivals
            ]
            action = safest_action(recommendations)
        else:
            action = safest_action([])
        if forced_action is None and explore_eps > 0.0:
            if hold > 0:
                action = override
                hold -= 1
            elif explore_rng.random() < explore_eps:
                override = int(explore_rng.integers(N_ACTIONS))
                hold = int(explore_rng.geometric(explore_hold)) - 1
                action = override

        world = step_world(world, action, config)
        speeds.append(world.ego_speed)

        tick_min = math.inf
        for rival in world.rivals:
            tick_min = min(tick_min, _rival_distance(world, rival, p))
            if _is_collision(world, rival, p):
                collided = True
        min_dists.append(tick_min)
        if collided:
            break
        if world.ego_progress > p.box_len:
            crossed = True
            break

        for rival in world.rivals:
            cid = rival.channel_id
            obs = abstract_observe(world, rival, config, obs_rng)
            if cid in beliefs:
                channels[cid].append((last_obs[cid], action, obs))
                beliefs[cid] = updated(beliefs[cid], action, obs)
            else:
                channels[cid] = []
                beliefs[cid] = updated(uniform, action, obs)
            last_obs[cid] = obs
        live = {r.channel_id for r in world.rivals}
        for cid in list(beliefs):
            if cid not in live:
                del beliefs[cid]
                del last_obs[cid]

    timeout = not collided and not crossed
    trajectory = Trajectory(
        speeds=speeds, min_dists=min_dists, collided=collided, timeout=timeout, dt=p.dt
    )
    log = ScenarioLog(
        scenario_id=config.scenario_id,
        duration=len(speeds) - 1,
        channels=[
            RivalChannel(cid, triplets) for cid, triplets in sorted(channels.items()) if triplets
        ],
    )
    return log, score_metrics(trajectory, p)


def write_metrics_csv(path, rows):
    """Per-run metrics CSV: one row per (env_id, seed) pair."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(METRICS_HEADER) + "\n")
        for env_id, seed, metrics in rows:
            handle.write(
                f"{env_id},{seed},{metrics.collision_risk:.12g},{metrics.discomfort:.12g},"
                f"{metrics.time_taken:.12g},{int(metrics.collided)},{int(metrics.timeout)}\n"
            )
