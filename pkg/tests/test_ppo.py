"""PPO learner: networks, advantage estimation, loss gradients, training."""

import math
from dataclasses import replace

import numpy as np
import pytest

from _oracles import finite_difference_grad, gae_bruteforce
from epimdp.config import from_synthetic
from epimdp.datagen import SyntheticSpec
from epimdp.env import EnvConfig, SchoolClosureEnv
from epimdp.errors import ConfigError, DataError
from epimdp.ppo import (
    ActorCritic,
    Adam,
    ImprovementDistribution,
    Mlp,
    NetPolicy,
    PpoHyper,
    RolloutBatch,
    SchedulePolicy,
    _bernoulli_entropy,
    _bernoulli_log_prob,
    _sigmoid,
    clip_grads,
    compute_loss,
    evaluate_policy,
    forward,
    gae,
    global_grad_norm,
    load_checkpoint,
    ppo_update,
    run_trials,
    sample_action,
    save_checkpoint,
    train,
    write_learning_curve,
)

TOY = PpoHyper(hidden_units=2)


def _toy_nets(obs_size=3, n_actions=2, seed=0, hyper=TOY):
    return ActorCritic(obs_size, n_actions, hyper, np.random.default_rng(seed))


def _toy_batch(nets, size=16, seed=1, logp_jitter=0.4):
    rng = np.random.default_rng(seed)
    obs = rng.random((size, nets.obs_size))
    actions = rng.integers(0, 2, size=(size, nets.n_actions))
    logits = nets.policy_logits(obs)
    logp_old = _bernoulli_log_prob(logits, actions)
    if logp_jitter:
        logp_old = logp_old + rng.uniform(-logp_jitter, logp_jitter, size)
    adv = rng.standard_normal(size)
    returns = rng.standard_normal(size)
    return obs, actions, logp_old, adv, returns


def _env(districts=1, budget=6, seed=4, **over):
    spec = SyntheticSpec(districts=districts, density=0.5, flux_mean=4e-4)
    over.setdefault("arrival_inoculum", 10.0)
    model = from_synthetic(spec, seed=seed, **over)
    config = EnvConfig(
        model=model, controlled=tuple(range(districts)), budget_weeks=budget
    )
    return SchoolClosureEnv(config)


class TestHyper:
    def test_defaults_are_valid(self):
        h = PpoHyper()
        assert h.local_steps == 1024
        assert h.minibatch == 128
        assert h.epochs == 24
        assert h.entropy_coef == 0.0059

    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            PpoHyper(clip=1.0)
        with pytest.raises(ConfigError):
            PpoHyper(discount=0.0)
        with pytest.raises(ConfigError):
            PpoHyper(learning_rate=-1e-3)
        with pytest.raises(ConfigError):
            PpoHyper(minibatch=2048)


class TestNetworks:
    def test_zero_weights_give_half_probs_and_zero_value(self):
        nets = _toy_nets()
        nets.set_parameters([np.zeros_like(p) for p in nets.parameters()])
        probs, value = forward(nets, np.array([0.3, 0.7, 0.1]))
        assert probs.tolist() == [0.5, 0.5]
        assert value == 0.0

    def test_forward_is_reproducible(self):
        nets = _toy_nets(seed=3)
        obs = np.array([0.2, 0.9, 0.5])
        first = forward(nets, obs)
        second = forward(nets, obs)
        assert first[0].tolist() == second[0].tolist()
        assert first[1] == second[1]

    def test_outputs_finite_and_bounded(self):
        nets = _toy_nets(seed=5)
        rng = np.random.default_rng(0)
        for _ in range(20):
            probs, value = forward(nets, rng.random(3))
            assert np.isfinite(probs).all() and np.isfinite(value)
            assert ((probs > 0) & (probs < 1)).all()

    def test_shape_mismatch_rejected(self):
        nets = _toy_nets()
        with pytest.raises(ConfigError):
            forward(nets, np.zeros(5))
        with pytest.raises(ConfigError):
            nets.value(np.zeros((2, 7)))

    def test_hidden_init_is_orthogonal(self):
        nets = ActorCritic(17, 3, PpoHyper(), np.random.default_rng(1))
        w = nets.policy.weights[0]  # (20, 17): orthonormal columns, gain sqrt(2)
        assert np.allclose(w.T @ w, 2.0 * np.eye(17), atol=1e-12)

    def test_set_parameters_validates(self):
        nets = _toy_nets()
        other = _toy_nets(seed=9)
        nets.set_parameters(other.parameters())
        assert forward(nets, np.zeros(3))[1] == forward(other, np.zeros(3))[1]
        with pytest.raises(ConfigError):
            nets.set_parameters(other.parameters()[:-1])


class TestSampling:
    def test_half_probability_logp(self):
        actions, logp = sample_action(np.array([0.5]), np.random.default_rng(0))
        assert actions[0] in (0, 1)
        assert logp == math.log(0.5)

    def test_near_certain_close(self):
        probs = np.full(4, 1.0 - 1e-12)
        actions, logp = sample_action(probs, np.random.default_rng(1))
        assert actions.tolist() == [1, 1, 1, 1]
        assert abs(logp) < 1e-9

    def test_empirical_frequency(self):
        rng = np.random.default_rng(7)
        draws = np.array(
            [sample_action(np.array([0.3]), rng)[0][0] for _ in range(100_000)]
        )
        assert draws.mean() == pytest.approx(0.3, abs=0.005)

    def test_matches_logit_form(self):
        rng = np.random.default_rng(2)
        probs = np.array([0.2, 0.6, 0.9])
        logits = np.log(probs / (1.0 - probs))
        for _ in range(10):
            actions, logp = sample_action(probs, rng)
            assert logp == pytest.approx(
                float(_bernoulli_log_prob(logits, actions)), abs=1e-12
            )


class TestGae:
    def test_single_terminal_step(self):
        adv, ret = gae([1.0], [0.0], [1.0], last_value=5.0, gamma=0.99, lam=0.95)
        assert adv[0] == 1.0
        assert ret[0] == 1.0

    def test_lambda_zero_reduces_to_td_residual(self):
        rng = np.random.default_rng(3)
        r, v = rng.standard_normal(20), rng.standard_normal(20)
        d = (rng.random(20) < 0.2).astype(float)
        last = 0.4
        adv, _ = gae(r, v, d, last, gamma=0.9, lam=0.0)
        v_next = np.append(v[1:], last)
        deltas = r + 0.9 * v_next * (1.0 - d) - v
        assert np.allclose(adv, deltas, atol=1e-14)

    def test_matches_bruteforce_sum(self):
        rng = np.random.default_rng(11)
        r, v = rng.standard_normal(50), rng.standard_normal(50)
        d = (rng.random(50) < 0.15).astype(float)
        adv, ret = gae(r, v, d, last_value=0.3, gamma=0.99, lam=0.95)
        expect = gae_bruteforce(r, v, d, 0.3, 0.99, 0.95)
        assert np.abs(adv - expect).max() < 1e-10
        assert np.allclose(ret, adv + v)

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ConfigError):
            gae([1.0, 2.0], [0.0], [0.0, 1.0], 0.0, 0.99, 0.95)


class TestLossAndGradients:
    def test_entropy_at_half_is_ln_two(self):
        assert _bernoulli_entropy(np.zeros((1, 1)))[0] == math.log(2.0)

    def test_on_policy_first_pass_identities(self):
        nets = _toy_nets(seed=4)
        obs, actions, _, adv, returns = _toy_batch(nets, logp_jitter=0.0)
        logp_exact = _bernoulli_log_prob(nets.policy_logits(obs), actions)
        _, _, stats = compute_loss(nets, obs, actions, logp_exact, adv, returns, TOY)
        assert stats["policy_loss"] == -adv.mean()
        assert stats["approx_kl"] == 0.0
        assert stats["clip_fraction"] == 0.0

    def test_clip_inert_when_ratios_inside_window(self):
        nets = _toy_nets(seed=6)
        obs, actions, logp_old, adv, returns = _toy_batch(nets, logp_jitter=0.01)
        loss_stats = compute_loss(nets, obs, actions, logp_old, adv, returns, TOY)[2]
        ratio = np.exp(
            _bernoulli_log_prob(nets.policy_logits(obs), actions) - logp_old
        )
        assert (np.abs(ratio - 1.0) < TOY.clip).all()
        unclipped = -np.mean(ratio * adv)
        assert abs(loss_stats["policy_loss"] - unclipped) <= 1e-12

    def test_zero_advantage_grads_ignore_actions(self):
        nets = _toy_nets(seed=8)
        obs, actions, logp_old, _, returns = _toy_batch(nets)
        zero_adv = np.zeros(len(obs))
        _, g1, stats = compute_loss(nets, obs, actions, logp_old, zero_adv,
                                    returns, TOY)
        _, g2, _ = compute_loss(nets, obs, 1 - actions, logp_old, zero_adv,
                                returns, TOY)
        assert stats["policy_loss"] == 0.0
        for a, b in zip(g1, g2):
            assert np.allclose(a, b, atol=1e-12)

    def test_mlp_backward_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        net = Mlp([3, 4, 4, 2], rng, out_gain=1.0)
        x = rng.random((6, 3))

        def loss_fn(_params):
            out, _ = net.forward(x)
            return float(np.sum(out**2))

        out, acts = net.forward(x)
        layer_grads = net.backward(acts, 2.0 * out)
        analytic = []
        for dw, db in layer_grads:
            analytic.extend((dw, db))
        numeric = finite_difference_grad(loss_fn, net.parameters())
        for a, n in zip(analytic, numeric):
            err = np.abs(a - n).max() / max(np.abs(n).max(), 1e-8)
            assert err < 1e-6

    def test_full_loss_gradient_matches_finite_differences(self):
        nets = _toy_nets(seed=21)
        obs, actions, logp_old, adv, returns = _toy_batch(nets, seed=22)

        def loss_fn(_params):
            return compute_loss(nets, obs, actions, logp_old, adv, returns,
                                TOY, with_grads=False)[0]

        _, analytic, _ = compute_loss(nets, obs, actions, logp_old, adv,
                                      returns, TOY)
        numeric = finite_difference_grad(loss_fn, nets.parameters())
        worst = 0.0
        for a, n in zip(analytic, numeric):
            scale = max(np.abs(n).max(), 1e-8)
            worst = max(worst, float(np.abs(a - n).max() / scale))
        assert worst < 1e-4


class TestAdamAndClipping:
    def test_clip_rescales_to_max_norm(self):
        grads = [np.array([3.0]), np.array([4.0])]
        norm = clip_grads(grads, 1.0)
        assert norm == 5.0
        assert global_grad_norm(grads) == pytest.approx(1.0)

    def test_small_gradients_untouched(self):
        grads = [np.array([0.3]), np.array([0.4])]
        clip_grads(grads, 1.0)
        assert grads[0][0] == 0.3 and grads[1][0] == 0.4

    def test_first_step_is_learning_rate_sized(self):
        p = [np.array([0.0])]
        opt = Adam(p, lr=0.01)
        opt.step(p, [np.array([2.5])])
        assert p[0][0] == pytest.approx(-0.01, rel=1e-6)

    def test_minimizes_quadratic(self):
        p = [np.array([1.0])]
        opt = Adam(p, lr=0.05)
        for _ in range(500):
            opt.step(p, [p[0].copy()])
        assert abs(p[0][0]) < 1e-2

    def test_state_round_trip(self):
        p = [np.array([1.0])]
        opt = Adam(p, lr=0.1)
        opt.step(p, [np.array([1.0])])
        saved = opt.state_copy()
        opt.step(p, [np.array([1.0])])
        opt.restore(saved)
        assert opt.t == 1
        assert opt.m[0][0] == pytest.approx(0.1)


class TestPpoUpdate:
    def _batch(self, nets, steps=32, seed=2):
        rng = np.random.default_rng(seed)
        obs = rng.random((steps, nets.obs_size))
        actions = rng.integers(0, 2, size=(steps, nets.n_actions))
        logp = _bernoulli_log_prob(nets.policy_logits(obs), actions)
        rewards = rng.standard_normal(steps)
        values = nets.value(obs)
        dones = np.zeros(steps)
        dones[15] = 1.0
        adv, ret = gae(rewards, values, dones, 0.0, 0.99, 0.95)
        return RolloutBatch(obs, actions, logp, rewards, values, dones, adv, ret)

    def test_update_moves_parameters(self):
        hyper = replace(TOY, local_steps=32, minibatch=16, epochs=3)
        nets = _toy_nets(hyper=hyper)
        before = [p.copy() for p in nets.parameters()]
        diag = ppo_update(nets, self._batch(nets), hyper, Adam(nets.parameters(),
                          hyper.learning_rate), np.random.default_rng(0))
        assert not diag["aborted"]
        assert all(np.isfinite(v) for k, v in diag.items() if k != "aborted")
        assert any((a != b).any() for a, b in zip(before, nets.parameters()))

    def test_update_is_deterministic(self):
        hyper = replace(TOY, local_steps=32, minibatch=16, epochs=3)
        outs = []
        for _ in range(2):
            nets = _toy_nets(seed=5, hyper=hyper)
            ppo_update(nets, self._batch(nets), hyper,
                       Adam(nets.parameters(), hyper.learning_rate),
                       np.random.default_rng(42))
            outs.append([p.copy() for p in nets.parameters()])
        for a, b in zip(*outs):
            assert (a == b).all()

    def test_non_finite_loss_rolls_back(self, caplog):
        hyper = replace(TOY, local_steps=32, minibatch=16, epochs=3)
        nets = _toy_nets(hyper=hyper)
        batch = self._batch(nets)
        batch.returns[:] = 1e200  # squared error overflows to inf
        before = [p.copy() for p in nets.parameters()]
        with caplog.at_level("WARNING"), np.errstate(over="ignore"):
            diag = ppo_update(nets, batch, hyper,
                              Adam(nets.parameters(), hyper.learning_rate),
                              np.random.default_rng(0))
        assert diag["aborted"]
        assert any("rolled back" in r.message for r in caplog.records)
        for a, b in zip(before, nets.parameters()):
            assert (a == b).all()

    def test_advantage_normalization_preserves_greedy_actions(self):
        # with a vanishing learning rate the update cannot flip any
        # probability across 1/2, normalized advantages or not
        hyper = replace(TOY, local_steps=32, minibatch=16, epochs=2,
                        learning_rate=1e-12)
        nets = _toy_nets(seed=7, hyper=hyper)
        batch = self._batch(nets)
        greedy_before = nets.greedy_actions(batch.observations)
        ppo_update(nets, batch, hyper, Adam(nets.parameters(), hyper.learning_rate),
                   np.random.default_rng(1))
        assert (nets.greedy_actions(batch.observations) == greedy_before).all()

    def test_batch_validation(self):
        nets = _toy_nets()
        with pytest.raises(ConfigError):
            RolloutBatch(np.zeros((4, 3)), np.zeros((3, 2)), np.zeros(4),
                         np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4),
                         np.zeros(4))


class TestTraining:
    HYPER = replace(PpoHyper(), local_steps=32, minibatch=16, epochs=2,
                    hidden_units=8)

    def test_fixed_seed_reproduces_learning_curve(self):
        env = _env(horizon_weeks=8, budget=2)
        first = train(env, self.HYPER, episodes=10, seed=123)
        second = train(env, self.HYPER, episodes=10, seed=123)
        assert first.returns == second.returns
        assert len(first.returns) == 10
        for a, b in zip(first.nets.parameters(), second.nets.parameters()):
            assert (a == b).all()

    def test_different_seeds_differ(self):
        env = _env(horizon_weeks=8, budget=2)
        a = train(env, self.HYPER, episodes=10, seed=1)
        b = train(env, self.HYPER, episodes=10, seed=2)
        assert a.returns != b.returns

    def test_disease_free_env_learns_flat_zero(self):
        env = _env(horizon_weeks=8, budget=2, initial_infected=0.0)
        result = train(env, self.HYPER, episodes=8, seed=0)
        assert result.returns == [0.0] * 8
        assert result.final_score == 0.0

    def test_diagnostics_and_checkpoints(self, tmp_path):
        env = _env(horizon_weeks=8, budget=2)
        result = train(env, self.HYPER, episodes=10, seed=3,
                       checkpoint_every=1, checkpoint_dir=tmp_path)
        assert result.diagnostics and not any(
            d["aborted"] for d in result.diagnostics
        )
        saved = sorted(tmp_path.glob("checkpoint_*.bin"))
        assert saved
        nets, hyper, _ = load_checkpoint(saved[-1])
        assert hyper == self.HYPER
        assert nets.obs_size == env.config.obs_size

    def test_run_trials_spawns_distinct_seeds(self):
        env = _env(horizon_weeks=8, budget=2)
        results = run_trials(env, self.HYPER, episodes=6, trials=2, seed=9)
        assert len(results) == 2
        assert results[0].returns != results[1].returns


class TestCheckpointFormat:
    def test_round_trip(self, tmp_path):
        nets = _toy_nets(seed=17)
        path = tmp_path / "policy.bin"
        save_checkpoint(path, nets, TOY, seed=99)
        loaded, hyper, seed = load_checkpoint(path)
        assert hyper == TOY and seed == 99
        for a, b in zip(nets.parameters(), loaded.parameters()):
            assert (a == b).all()
        obs = np.array([0.1, 0.5, 0.9])
        assert forward(nets, obs)[0].tolist() == forward(loaded, obs)[0].tolist()

    def test_rejects_foreign_and_truncated_files(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError):
            load_checkpoint(bad)
        nets = _toy_nets()
        path = tmp_path / "cut.bin"
        save_checkpoint(path, nets, TOY, seed=1)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError):
            load_checkpoint(path)


class TestEvaluation:
    def test_schedule_policy_replays_bits(self):
        policy = SchedulePolicy("101", n_actions=2)
        assert policy.act(None, 0).tolist() == [0, 0]
        assert policy.act(None, 1).tolist() == [1, 1]
        assert policy.act(None, 2).tolist() == [0, 0]
        assert policy.act(None, 9).tolist() == [0, 0]  # beyond schedule: open

    def test_net_policy_takes_mode_actions(self):
        nets = _toy_nets()
        params = [np.zeros_like(p) for p in nets.parameters()]
        params[3] = np.array([10.0, -10.0])  # policy head bias
        nets.set_parameters(params)
        actions = NetPolicy(nets).act(np.zeros(3), week=0)
        assert actions.tolist() == [1, 0]

    def test_all_open_against_itself_is_exactly_zero(self):
        env = _env(horizon_weeks=10, budget=4)
        policy = SchedulePolicy.all_open(10, 1)
        dist = evaluate_policy(env, policy, n=5, seed=0)
        assert dist.samples.tolist() == [0.0] * 5

    def test_identical_seeds_give_identical_distributions(self):
        env = _env(horizon_weeks=10, budget=4)
        nets = ActorCritic(env.config.obs_size, 1, TOY, np.random.default_rng(0))
        d1 = evaluate_policy(env, nets, n=4, seed=5)
        d2 = evaluate_policy(env, nets, n=4, seed=5)
        assert d1.samples.tolist() == d2.samples.tolist()

    def test_closures_yield_positive_improvement(self):
        env = _env(budget=6, r0=1.8)
        closed_mid = SchedulePolicy("1" * 3 + "0" * 6 + "1" * 34, n_actions=1)
        dist = evaluate_policy(env, closed_mid, n=10, seed=2)
        assert dist.mean > 0.0
        assert dist.summary()["p95"] >= dist.summary()["p5"]

    def test_summary_fields(self):
        dist = ImprovementDistribution(samples=np.arange(11, dtype=float))
        assert dist.median == 5.0
        assert dist.percentile(50) == 5.0
        assert "median" in dist.to_json()


class TestLearningCurveCsv:
    def test_rolling_mean(self, tmp_path):
        path = tmp_path / "curve.csv"
        write_learning_curve(path, [1.0, 2.0, 3.0])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "episode,return,rolling_mean_100"
        assert lines[1].split(",")[1:] == ["1.0", "1.0"]
        assert lines[2].split(",")[2] == "1.5"
        assert lines[3].split(",")[2] == "2.0"
