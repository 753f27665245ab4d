import unittest

import numpy as np

from csqbm.envs import (
    ContinuousBandit,
    EnvSpec,
    EpisodeDoneError,
    SteerLine,
    bandit_env,
    make_env,
    steering_env,
)


class EnvSpecTest(unittest.TestCase):
    def test_bounds_are_validated(self):
        with self.assertRaises(ValueError):
            EnvSpec("bad", 1, 1, (1.0,), (0.0,), 1)
        with self.assertRaises(ValueError):
            EnvSpec("bad", 1, 2, (0.0,), (1.0,), 1)
        with self.assertRaises(ValueError):
            EnvSpec("bad", 1, 1, (-np.inf,), (1.0,), 1)


class ContinuousBanditTest(unittest.TestCase):
    def test_optimal_action_has_zero_reward(self):
        env = bandit_env()
        s = env.reset(np.random.default_rng(0))
        self.assertEqual(env.spec.horizon, 1)
        self.assertTrue(-1.0 <= s[0] <= 1.0)
        result = env.step(env.optimal_action(s))
        self.assertEqual(result.r, 0.0)
        self.assertTrue(result.done)
        np.testing.assert_array_equal(result.s_next, s)

    def test_unit_offset_costs_one(self):
        env = bandit_env(slope=0.5)
        s = env.reset(np.random.default_rng(1))
        self.assertAlmostEqual(env.step(0.5 * s + 1.0).r, -1.0, places=12)

    def test_step_after_done_is_an_error(self):
        env = bandit_env()
        env.reset(np.random.default_rng(2))
        env.step([0.0])
        with self.assertRaises(EpisodeDoneError):
            env.step([0.0])

    def test_step_before_reset_is_an_error(self):
        with self.assertRaises(EpisodeDoneError):
            ContinuousBandit().step([0.0])

    def test_out_of_bound_actions_are_clipped_and_counted(self):
        env = bandit_env(action_bound=1.0)
        s = env.reset(np.random.default_rng(3))
        clipped = env.step([5.0])
        self.assertTrue(clipped.clipped)
        self.assertEqual(env.clip_count, 1)
        env.reset(np.random.default_rng(3))
        at_bound = env.step([1.0])
        self.assertEqual(clipped.r, at_bound.r)
        self.assertAlmostEqual(at_bound.r, -(1.0 - 0.5 * s[0]) ** 2, places=12)

    def test_seeded_stream_is_reproducible(self):
        def episode_stream(seed):
            env = bandit_env(noise_sigma=0.3)
            rng = np.random.default_rng(seed)
            rows = []
            for _ in range(20):
                s = env.reset(rng)
                rows.append((s[0], env.step([0.1]).r))
            return rows

        self.assertEqual(episode_stream(7), episode_stream(7))
        self.assertNotEqual(episode_stream(7), episode_stream(8))

    def test_negative_noise_is_rejected(self):
        with self.assertRaises(ValueError):
            bandit_env(noise_sigma=-0.1)

    def test_returns_respect_the_lower_bound(self):
        env = bandit_env()
        rng = np.random.default_rng(4)
        for _ in range(200):
            env.reset(rng)
            self.assertGreaterEqual(env.step(rng.uniform(-10, 10, size=1)).r, env.return_lower_bound())


class SteerLineTest(unittest.TestCase):
    def test_response_is_lower_triangular_and_halving(self):
        env = steering_env(n_segments=3, kick_gain=2.0)
        np.testing.assert_allclose(env.response, [[2.0, 0.0, 0.0], [1.0, 2.0, 0.0], [0.5, 1.0, 2.0]])

    def test_exact_correction_solves_in_one_step(self):
        env = steering_env(n_segments=2)
        s = env.reset(np.random.default_rng(0))
        result = env.step(env.optimal_action(s))
        np.testing.assert_allclose(result.s_next, 0.0, atol=1e-12)
        self.assertAlmostEqual(result.r, 0.0, places=20)
        self.assertTrue(result.done)

    def test_zero_action_keeps_state(self):
        env = steering_env(n_segments=2, horizon=5, threshold=0.0)
        s = env.reset(np.random.default_rng(1))
        result = env.step([0.0, 0.0])
        np.testing.assert_array_equal(result.s_next, s)
        self.assertAlmostEqual(result.r, -float(s @ s), places=12)
        self.assertFalse(result.done)

    def test_horizon_ends_episode(self):
        env = steering_env(horizon=3, threshold=0.0)
        env.reset(np.random.default_rng(2))
        done = [env.step([0.0]).done for _ in range(3)]
        self.assertEqual(done, [False, False, True])
        with self.assertRaises(EpisodeDoneError):
            env.step([0.0])

    def test_random_policy_is_worse_than_exact_correction(self):
        env = steering_env(n_segments=1, noise_sigma=0.0)
        rng = np.random.default_rng(3)

        def rollout(policy):
            total, done = 0.0, False
            s = env.reset(rng)
            while not done:
                result = env.step(policy(s))
                total += result.r
                done, s = result.done, result.s_next
            return total

        random_returns = [rollout(lambda s: rng.uniform(-2, 2, size=1)) for _ in range(200)]
        exact_returns = [rollout(env.optimal_action) for _ in range(200)]
        self.assertLess(np.mean(random_returns), np.mean(exact_returns))
        self.assertEqual(max(exact_returns), 0.0)

    def test_rejects_invalid_parameters(self):
        with self.assertRaises(ValueError):
            SteerLine(n_segments=0)
        with self.assertRaises(ValueError):
            SteerLine(kick_gain=0.0)


class RegistryTest(unittest.TestCase):
    def test_make_env_by_name(self):
        self.assertIsInstance(make_env("bandit", {"slope": 1.0}), ContinuousBandit)
        self.assertIsInstance(make_env("steerline"), SteerLine)
        with self.assertRaises(ValueError):
            make_env("cartpole")


if __name__ == "__main__":
    unittest.main()
