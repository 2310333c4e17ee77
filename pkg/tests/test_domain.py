import itertools

import numpy as np
import pytest

from tjunction.domain import (
    ACTIONS,
    AGGRESSIVENESS,
    BEHAVIOR_LEVELS,
    BLK_NO,
    BLK_YES,
    BLOCKINGS,
    DENSITY_LEVELS,
    EGO_POSITIONS,
    FACTOR_SIZES,
    N_ACTIONS,
    N_STATES,
    POS_AFTER,
    POS_INSIDE,
    RIVAL_POSITIONS,
    SGT_NO,
    SGT_YES,
    SIGHTLINES,
    VISIBILITY_LEVELS,
    EnvironmentState,
    FactoredState,
    NoiseConfig,
    RewardSpec,
    all_environment_states,
    all_states,
    build_observation_model,
    build_pomdp_model,
    build_reward_model,
    decode_state,
    encode_state,
    is_collision_state,
)


class TestStateCodec:
    def test_sizes(self):
        assert FACTOR_SIZES == (4, 2, 4, 2, 3)
        assert N_STATES == 192
        assert N_ACTIONS == 3
        assert ACTIONS == ("stop", "edge", "go")

    def test_corner_indices(self):
        assert encode_state(FactoredState(0, 0, 0, 0, 0)) == 0
        assert encode_state(FactoredState(3, 1, 3, 1, 2)) == 191

    def test_known_example(self):
        # (after, no, after, no, aggressive) sits at the top of the range.
        state = FactoredState.from_names("after", "no", "after", "no", "aggressive")
        assert encode_state(state) == 191
        assert decode_state(191) == state

    def test_bijection(self):
        seen = set()
        for idx in range(N_STATES):
            state = decode_state(idx)
            assert encode_state(state) == idx
            seen.add(state.astuple())
        assert len(seen) == N_STATES

    def test_enumeration_order_matches_mixed_radix(self):
        states = all_states()
        assert len(states) == N_STATES
        expected = [
            FactoredState(*combo)
            for combo in itertools.product(*(range(n) for n in FACTOR_SIZES))
        ]
        assert list(states) == expected

    def test_aggressiveness_is_fastest_axis(self):
        assert decode_state(0).aggr_rival == 0
        assert decode_state(1).aggr_rival == 1
        assert decode_state(2).aggr_rival == 2
        assert decode_state(3).aggr_rival == 0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            encode_state(FactoredState(4, 0, 0, 0, 0))
        with pytest.raises(ValueError):
            decode_state(192)
        with pytest.raises(ValueError):
            decode_state(-1)

    def test_names_roundtrip(self):
        state = FactoredState(2, 1, 1, 0, 1)
        assert FactoredState.from_names(*state.names()) == state
        with pytest.raises(ValueError):
            FactoredState.from_names("nowhere", "yes", "at", "no", "normal")


class TestCollisionPredicate:
    def test_exact_set(self):
        expected = {
            encode_state(FactoredState(POS_INSIDE, sgt, POS_INSIDE, BLK_YES, aggr))
            for sgt in range(len(SIGHTLINES))
            for aggr in range(len(AGGRESSIVENESS))
        }
        got = {idx for idx in range(N_STATES) if is_collision_state(decode_state(idx))}
        assert got == expected
        assert len(got) == 6

    def test_blocked_flag_required(self):
        assert not is_collision_state(FactoredState(POS_INSIDE, 0, POS_INSIDE, BLK_NO, 0))
        assert is_collision_state(FactoredState(POS_INSIDE, 0, POS_INSIDE, BLK_YES, 0))


def observation_row_oracle(state, noise):
    """Expected sensing distribution for one true state, built by enumeration."""
    p_pos = noise.p_correct_pos
    if state.sgt_ego == SGT_NO:
        p_pos *= noise.occlusion_penalty
    row = np.zeros(N_STATES)
    for obs in all_states():
        if (
            obs.pos_ego != state.pos_ego
            or obs.sgt_ego != state.sgt_ego
            or obs.blk_rival != state.blk_rival
        ):
            continue
        if obs.pos_rival == state.pos_rival:
            p = p_pos
        else:
            p = (1.0 - p_pos) / (len(RIVAL_POSITIONS) - 1)
        if obs.aggr_rival == state.aggr_rival:
            p *= noise.p_correct_aggr
        else:
            p *= (1.0 - noise.p_correct_aggr) / (len(AGGRESSIVENESS) - 1)
        row[encode_state(obs)] = p
    return row


class TestObservationModel:
    def test_noiseless_is_identity(self):
        matrix = build_observation_model(NoiseConfig.noiseless())
        assert matrix.shape == (N_ACTIONS, N_STATES, N_STATES)
        for action in range(N_ACTIONS):
            np.testing.assert_array_equal(matrix[action], np.eye(N_STATES))

    def test_rows_sum_to_one(self):
        matrix = build_observation_model(NoiseConfig())
        np.testing.assert_allclose(matrix.sum(axis=2), 1.0, atol=1e-12)
        assert np.all(matrix >= 0.0)

    def test_action_independent(self):
        matrix = build_observation_model(NoiseConfig())
        np.testing.assert_array_equal(matrix[0], matrix[1])
        np.testing.assert_array_equal(matrix[0], matrix[2])

    def test_rows_match_enumeration_oracle(self):
        noise = NoiseConfig(p_correct_pos=0.85, p_correct_aggr=0.55, occlusion_penalty=0.5)
        matrix = build_observation_model(noise)
        rng = np.random.default_rng(5)
        for idx in rng.choice(N_STATES, size=16, replace=False):
            state = decode_state(int(idx))
            np.testing.assert_allclose(
                matrix[0, idx], observation_row_oracle(state, noise), atol=1e-12
            )

    def test_occlusion_penalty_only_without_sightline(self):
        noise = NoiseConfig(p_correct_pos=0.9, p_correct_aggr=1.0, occlusion_penalty=0.5)
        matrix = build_observation_model(noise)
        seen = encode_state(FactoredState(0, SGT_YES, 0, 0, 0))
        hidden = encode_state(FactoredState(0, SGT_NO, 0, 0, 0))
        assert matrix[0, seen, seen] == pytest.approx(0.9)
        assert matrix[0, hidden, hidden] == pytest.approx(0.45)

    def test_ego_components_never_confused(self):
        matrix = build_observation_model(NoiseConfig())
        for idx in (0, 37, 100, 191):
            state = decode_state(idx)
            for obs_idx in np.nonzero(matrix[0, idx])[0]:
                obs = decode_state(int(obs_idx))
                assert obs.pos_ego == state.pos_ego
                assert obs.sgt_ego == state.sgt_ego
                assert obs.blk_rival == state.blk_rival

    def test_noise_validation(self):
        with pytest.raises(ValueError):
            NoiseConfig(p_correct_pos=0.0)
        with pytest.raises(ValueError):
            NoiseConfig(p_correct_aggr=1.5)
        with pytest.raises(ValueError):
            NoiseConfig(occlusion_penalty=-0.1)

    def test_noise_dict_roundtrip(self):
        noise = NoiseConfig(p_correct_pos=0.8, p_correct_aggr=0.7, occlusion_penalty=0.4)
        assert NoiseConfig.from_dict(noise.to_dict()) == noise


def reward_oracle(state, action, spec):
    if state.pos_ego == POS_INSIDE and state.pos_rival == POS_INSIDE and state.blk_rival == BLK_YES:
        return spec.r_collision
    if state.pos_ego == POS_AFTER:
        return spec.r_goal
    value = spec.r_step
    if ACTIONS[action] == "edge":
        value += spec.r_edge
    return value


class TestRewardModel:
    def test_full_table_matches_oracle(self):
        spec = RewardSpec()
        table = build_reward_model(spec)
        assert table.shape == (N_STATES, N_ACTIONS)
        for idx in range(N_STATES):
            state = decode_state(idx)
            for action in range(N_ACTIONS):
                assert table[idx, action] == reward_oracle(state, action, spec)

    def test_collision_dominates_everything(self):
        table = build_reward_model(RewardSpec())
        collision_rows = [i for i in range(N_STATES) if is_collision_state(decode_state(i))]
        assert np.all(table[collision_rows] == RewardSpec().r_collision)
        non_collision = np.delete(table, collision_rows, axis=0)
        assert non_collision.min() > RewardSpec().r_collision

    def test_validation(self):
        with pytest.raises(ValueError):
            RewardSpec(r_collision=1.0)
        with pytest.raises(ValueError):
            RewardSpec(r_goal=-5.0)
        with pytest.raises(ValueError):
            RewardSpec(r_edge=0.5)

    def test_dict_roundtrip(self):
        spec = RewardSpec(r_collision=-500.0, r_goal=50.0, r_step=-0.5, r_edge=-1.0)
        assert RewardSpec.from_dict(spec.to_dict()) == spec


class TestBuildPomdpModel:
    def test_assembles_and_validates(self, rng):
        transition = rng.dirichlet(np.ones(N_STATES), size=(N_ACTIONS, N_STATES))
        model = build_pomdp_model(transition, NoiseConfig(), RewardSpec(), discount=0.95)
        assert model.n_states == N_STATES
        assert model.n_actions == N_ACTIONS
        assert model.n_observations == N_STATES
        assert model.discount == 0.95


class TestEnvironmentState:
    def test_eighteen_environments(self):
        envs = all_environment_states()
        assert len(envs) == 18
        assert len({env.index for env in envs}) == 18
        assert [env.index for env in envs] == list(range(18))

    def test_axis_levels(self):
        assert VISIBILITY_LEVELS == ("no", "yes")
        assert DENSITY_LEVELS == ("low", "med", "high")
        assert BEHAVIOR_LEVELS == ("cautious", "normal", "aggressive")

    def test_embedding_values(self):
        env = EnvironmentState("no", "low", "cautious")
        np.testing.assert_array_equal(env.embedding, [0.0, 0.0, 0.0])
        env = EnvironmentState("yes", "high", "aggressive")
        np.testing.assert_array_equal(env.embedding, [1.0, 1.0, 1.0])
        env = EnvironmentState("yes", "med", "normal")
        np.testing.assert_array_equal(env.embedding, [1.0, 0.5, 0.5])

    def test_label_roundtrip(self):
        for env in all_environment_states():
            assert EnvironmentState.from_label(env.label) == env

    def test_rejects_unknown_levels(self):
        with pytest.raises(ValueError):
            EnvironmentState("fog", "low", "cautious")
        with pytest.raises(ValueError):
            EnvironmentState.from_label("not_a_label")

    def test_dict_roundtrip(self):
        env = EnvironmentState("no", "high", "normal")
        assert EnvironmentState.from_dict(env.to_dict()) == env
