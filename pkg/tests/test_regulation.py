import numpy as np
import pytest

from pressureloop.questions import MathQuestion
from pressureloop.regulation import (
    DELTA_TARGET_DEFAULT,
    OBS_DIM,
    RegulationConfig,
    RegulationEnv,
    RegulationTracker,
    end_reward,
    export_episode_log,
    observation_features,
)
from pressureloop.synthetic import SyntheticUser, SyntheticUserConfig


def make_env(n_trials=100, r_init=3.0, seed=0, noise=0.0, **user_kw):
    cfg = SyntheticUserConfig(rt_noise_s=noise, **user_kw)
    return RegulationEnv(lambda ep: SyntheticUser(cfg, seed=ep),
                         RegulationConfig(n_trials=n_trials),
                         r_init_s=r_init, seed=seed)


def test_end_reward_fixed_points():
    assert end_reward(DELTA_TARGET_DEFAULT, DELTA_TARGET_DEFAULT) == 0.0
    assert end_reward(0.0, DELTA_TARGET_DEFAULT) == pytest.approx(-1.0)
    assert end_reward(2 * DELTA_TARGET_DEFAULT, DELTA_TARGET_DEFAULT) == pytest.approx(1.0)
    assert end_reward(0.2108, 0.1054) == pytest.approx(1.0)


def test_step_reward_hand_evaluation():
    # R_init = 3.0, user answers in exactly 2.5 s -> r_s = 0.5
    cfg = SyntheticUserConfig(base_rt_s=2.5, rt_noise_s=0.0, fatigue_s_per_trial=0.0)
    env = RegulationEnv(lambda ep: SyntheticUser(cfg, seed=0),
                        RegulationConfig(n_trials=5), r_init_s=3.0)
    env.reset()
    _, reward, done, info = env.step(0)
    assert info["rt"] == pytest.approx(2.5)
    assert info["r_s"] == pytest.approx(0.5)
    assert info["r_e"] == 0.0 and not done


def test_end_reward_emitted_only_at_final_trial():
    env = make_env(n_trials=10)
    env.reset()
    for i in range(10):
        _, reward, done, info = env.step(0)
        if i < 9:
            assert info["r_e"] == 0.0 and not done
    assert done
    assert "delta_ru" in info


def test_episode_return_decomposition():
    env = make_env(n_trials=20, noise=0.3)
    env.reset()
    total = 0.0
    while True:
        _, reward, done, _ = env.step(1)
        total += reward
        if done:
            break
    parts = sum(t["r_s"] + t["r_e"] for t in env.trial_log)
    assert env.episode_return == pytest.approx(total)
    assert total == pytest.approx(parts)


def test_observation_features_hand_cases():
    # fresh buffer: running mean at baseline, no fast or elevated trials
    fresh = observation_features([3.0] * 10, 3.0, 3.0)
    assert fresh.shape == (OBS_DIM,)
    assert fresh == pytest.approx([1.0, 0, 0, 0, 0, 0, 0])
    # two recent fast trials (2.4/3 = 0.8 and 2.7/3 = 0.9, both below 0.92)
    obs = observation_features([3.0] * 8 + [2.4, 2.7], 2.9, 3.0)
    assert obs == pytest.approx([2.9 / 3.0, 1, 1, 2 / 5, 0, 0, 0], abs=1e-6)
    # elevated trials in positions -3 and -2 (1.2 and ~1.167, above 1.15)
    obs = observation_features([3.0] * 7 + [3.6, 3.5, 3.0], 3.1, 3.0)
    assert obs == pytest.approx([3.1 / 3.0, 0, 0, 0, 0, 1, 2 / 5], abs=1e-6)


def test_env_observation_derived_from_state():
    env = make_env(n_trials=50, r_init=3.0)
    obs = env.reset()
    assert obs["x"] == pytest.approx([1.0, 0, 0, 0, 0, 0, 0])
    env.step(1)
    obs2 = env._observation()
    expected = observation_features(env.state.r_buffer, env.state.r_hat, 3.0)
    assert obs2["x"] == pytest.approx(expected)


def test_buffer_strict_sliding_window():
    env = make_env(n_trials=30, noise=0.3)
    env.reset()
    for _ in range(15):
        env.step(0)
    rts = [t["rt"] for t in env.trial_log if t["valid"]]
    assert env.state.r_buffer == pytest.approx(rts[-10:])


def test_r_hat_matches_full_log_recomputation():
    env = make_env(n_trials=40, noise=0.3)
    env.reset()
    rng = np.random.default_rng(1)
    while True:
        _, _, done, _ = env.step(int(rng.random() < 0.5))
        if done:
            break
    valid_rts = [t["rt"] for t in env.trial_log if t["valid"]]
    assert env.state.r_hat == pytest.approx(np.mean(valid_rts), abs=1e-9)


def test_invalid_rts_logged_but_excluded():
    # base 1.0 with strong pressure drives rt to the 0.8 clamp, which is valid;
    # use a user whose noise-free rt exceeds 10 via anxiety to force invalid -> none
    # at clamp boundaries rts stay valid, so exercise the tracker directly instead
    tracker = RegulationTracker(r_init_s=3.0)
    assert tracker.record(2.0) is True
    assert tracker.record(0.5) is False
    assert tracker.record(11.0) is False
    assert tracker.r_hat == pytest.approx(2.0)
    assert tracker.r_buffer[-1] == pytest.approx(2.0)
    assert tracker.r_buffer[:-1] == pytest.approx([3.0] * 9)


def test_fresh_user_and_questions_each_episode():
    created = []

    def factory(ep):
        created.append(ep)
        return SyntheticUser(SyntheticUserConfig(rt_noise_s=0.0), seed=ep)

    env = RegulationEnv(factory, RegulationConfig(n_trials=3), r_init_s=3.0, seed=4)
    env.reset()
    for _ in range(3):
        env.step(0)
    env.reset()
    assert created == [0, 1]


def test_step_past_done_raises():
    env = make_env(n_trials=2)
    env.reset()
    env.step(0)
    env.step(0)
    with pytest.raises(RuntimeError):
        env.step(0)


def test_config_validation():
    with pytest.raises(ValueError):
        RegulationConfig(n_trials=0)
    with pytest.raises(ValueError):
        RegulationConfig(delta_target=0.0)
    with pytest.raises(ValueError):
        make_env(r_init=0.0)


def test_export_episode_log(tmp_path):
    env = make_env(n_trials=5)
    env.reset()
    for _ in range(5):
        env.step(1)
    path = tmp_path / "ep.csv"
    export_episode_log(path, env.trial_log)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "trial_index,action,rt,r_s,r_e,r_hat"
    assert len(lines) == 6


def test_tracker_observation_matches_env_shape():
    tracker = RegulationTracker(r_init_s=3.0)
    obs = tracker.observation()
    assert obs["x"].shape == (OBS_DIM,)
    assert obs["x"] == pytest.approx(
        observation_features(tracker.r_buffer, tracker.r_hat, 3.0))
