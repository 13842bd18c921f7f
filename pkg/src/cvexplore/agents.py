"""Soft actor-critic and its two visitation-based exploration variants.

All three agents share one loop; they differ only in the intrinsic reward
fed to the critic:

* ``sac``      no intrinsic reward, only the policy-entropy terms;
* ``opac-cv``  relative entropy of the learned conditional visitation of features;
* ``opac-mv``  relative entropy of a marginal feature model refitted every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .intrinsic import (
    FeatureChannel,
    MarginalVisitationModel,
    intrinsic_reward,
    marginal_intrinsic_reward,
    position_channel,
    sample_features,
)
from .mdp import ReplayBuffer, trajectory_segments, sample_trajectory
from .metrics import mc_discounted_feature_entropy, mc_expected_return
from .nnet import Adam, Mlp, TargetPair, log_softmax, one_hot_blocks, save_arrays, load_arrays
from .visitation import FactoredVisitationNet, _sample_rows, sample_geometric, visitation_update

METRIC_COLUMNS = (
    "seed",
    "iteration",
    "return_estimate",
    "entropy_estimate",
    "visitation_loss",
    "critic_loss",
    "actor_loss",
)


class Actor:
    def __init__(self, block_sizes, n_actions, rng, hidden=256, layers=2, lr=1e-5, lambda_sac=0.002):
        self.block_sizes = tuple(block_sizes)
        self.n_actions = n_actions
        self.net = Mlp([sum(block_sizes)] + [hidden] * layers + [n_actions], rng)
        self.optimizer = Adam(lr)
        self.lambda_sac = lambda_sac

    def logits(self, comps, params=None) -> np.ndarray:
        return self.net(one_hot_blocks(comps, self.block_sizes), params)

    def log_probs(self, comps, params=None) -> np.ndarray:
        return log_softmax(self.logits(comps, params))

    def __call__(self, comps) -> np.ndarray:
        return np.exp(self.log_probs(comps))

    def state_policy(self, env):
        """Per-state policy for rollouts, memoised on the component tuple."""
        cache: dict = {}

        def policy(state):
            comps = env.components(state)
            if comps not in cache:
                cache[comps] = self([comps])[0]
            return cache[comps]

        return policy


class Critic:
    def __init__(self, block_sizes, n_actions, rng, hidden=256, layers=2, lr=1e-4, tau=0.1):
        self.block_sizes = tuple(block_sizes)
        self.n_actions = n_actions
        self.net = Mlp([sum(block_sizes) + n_actions] + [hidden] * layers + [1], rng)
        self.pair = TargetPair(self.net, tau)
        self.optimizer = Adam(lr)

    def inputs(self, comps, actions) -> np.ndarray:
        actions = np.atleast_1d(np.asarray(actions, dtype=int))
        act = np.zeros((len(actions), self.n_actions))
        act[np.arange(len(actions)), actions] = 1.0
        return np.concatenate([one_hot_blocks(comps, self.block_sizes), act], axis=1)

    def q(self, comps, actions, use_target: bool = False) -> np.ndarray:
        net = self.pair.target if use_target else self.net
        return net(self.inputs(comps, actions))[:, 0]


@dataclass
class Batch:
    """The head transitions of a batch of N-step segments."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    done: np.ndarray
    segments: list = field(repr=False, default_factory=list)

    @classmethod
    def from_segments(cls, segments) -> "Batch":
        return cls(
            np.array([s.states[0] for s in segments], dtype=int),
            np.array([s.actions[0] for s in segments], dtype=int),
            np.array([s.reward for s in segments], dtype=float),
            np.array([s.states[1] for s in segments], dtype=int),
            np.array([s.done for s in segments], dtype=bool),
            list(segments),
        )


# losses


def critic_targets(batch: Batch, actor: Actor, critic: Critic, r_int, lam: float, gamma: float, rng, extrinsic: float = 1.0) -> np.ndarray:
    """``y = R + lam R_int + gamma (Q'(s', a') - lambda_sac log pi(a'|s'))`` with ``a' ~ pi(.|s')``.

    The bootstrap term is dropped when ``s'`` is absorbing.
    """
    logp = actor.log_probs(batch.next_states)
    a_next = _sample_rows(np.exp(logp), rng)
    q_next = critic.q(batch.next_states, a_next, use_target=True)
    soft = q_next - actor.lambda_sac * logp[np.arange(len(a_next)), a_next]
    return extrinsic * batch.rewards + lam * np.asarray(r_int) + gamma * np.where(batch.done, 0.0, soft)


def critic_loss(critic: Critic, states, actions, y, params=None, with_grad: bool = True):
    """Mean squared error to fixed targets ``y`` and its parameter gradient."""
    out, cache = critic.net.forward(critic.inputs(states, actions), params)
    err = out[:, 0] - y
    loss = float(np.mean(err**2))
    if not with_grad:
        return loss
    grad, _ = critic.net.backward(cache, (2.0 * err / len(err))[:, None], params)
    return loss, grad


def actor_samples(actor: Actor, critic: Critic, states, rng, baseline: bool = False):
    """Fresh actions ``a' ~ pi(.|s)`` and ``A = Q(s, a') - lambda_sac log pi(a'|s)`` (held constant).

    With ``baseline`` the soft state value ``sum_a pi(a|s) A(s, a)`` is
    subtracted; the expected gradient is unchanged, its variance is not.
    """
    logp = actor.log_probs(states)
    a = _sample_rows(np.exp(logp), rng)
    adv = critic.q(states, a) - actor.lambda_sac * logp[np.arange(len(a)), a]
    if baseline:
        B, A = logp.shape
        q_all = critic.q(np.repeat(states, A, axis=0), np.tile(np.arange(A), B)).reshape(B, A)
        adv = adv - np.sum(np.exp(logp) * (q_all - actor.lambda_sac * logp), axis=1)
    return a, adv


def actor_loss(actor: Actor, states, actions, adv, params=None, with_grad: bool = True):
    """Score-function surrogate ``-mean(log pi(a|s) * A)``."""
    logits, cache = actor.net.forward(one_hot_blocks(states, actor.block_sizes), params)
    logp = log_softmax(logits)
    rows = np.arange(len(actions))
    loss = float(-np.mean(logp[rows, actions] * adv))
    if not with_grad:
        return loss
    g = np.exp(logp)
    g[rows, actions] -= 1.0
    g *= (adv / len(actions))[:, None]
    grad, _ = actor.net.backward(cache, g, params)
    return loss, grad


# intrinsic rewards per agent


def cv_intrinsic(batch: Batch, channel: FeatureChannel, visitation, actor: Actor, rng) -> np.ndarray:
    z, log_q = sample_features(channel, visitation, actor, batch.states, batch.actions, rng)
    return intrinsic_reward(channel, z, log_q)


def mv_future_features(batch: Batch, channel: FeatureChannel, gamma: float, rng) -> np.ndarray:
    """Feature of a geometrically discounted future step inside each window.

    The offset is drawn from the geometric law restricted to the steps the
    window actually holds; past an absorbing state the absorbing state is used.
    """
    out = np.empty(len(batch.segments), dtype=int)
    for i, seg in enumerate(batch.segments):
        limit = seg.valid_steps
        d = int(sample_geometric(gamma, rng))
        while d > limit and seg.absorbed_at is None:
            d = int(sample_geometric(gamma, rng))
        d = min(d, seg.absorbed_at) if seg.absorbed_at is not None else d
        out[i] = channel.feature(seg.states[d])
    return out


def fit_marginal(marginal: MarginalVisitationModel, buffer: ReplayBuffer, channel: FeatureChannel, gamma: float) -> None:
    """Discounted histogram of head features, weight ``(1 - gamma) gamma**t``."""
    feats, weights = [], []
    for seg in buffer.segments:
        z = channel.feature(seg.states[0])
        if z is not None:
            feats.append(z)
            weights.append((1 - gamma) * gamma**seg.t)
    if feats:
        marginal.fit(feats, weights)


# training loop


@dataclass
class TrainedArtifacts:
    config: ExperimentConfig
    actor: Actor
    critic: Critic
    visitation: FactoredVisitationNet | None
    marginal: MarginalVisitationModel | None
    channel: FeatureChannel | None
    rng_state: dict

    def save(self, path) -> None:
        arrays = {
            "actor": self.actor.net.params,
            "critic": self.critic.net.params,
            "critic_target": self.critic.pair.target.params,
        }
        if self.visitation is not None:
            arrays["visitation"] = self.visitation.net.params
            arrays["visitation_target"] = self.visitation.target.params
        if self.marginal is not None:
            arrays["marginal"] = self.marginal.probs
        save_arrays(path, arrays, {"config": self.config.to_dict(), "rng_state": self.rng_state})


def load_artifacts(path, env) -> TrainedArtifacts:
    arrays, meta = load_arrays(path)
    config = ExperimentConfig.from_dict(meta["config"])
    actor, critic, visitation, marginal, channel = build_learners(config, env, [np.random.default_rng(0)] * 3)
    actor.net.params[:] = arrays["actor"]
    critic.net.params[:] = arrays["critic"]
    critic.pair.target.params[:] = arrays["critic_target"]
    if visitation is not None and "visitation" in arrays:
        visitation.net.params[:] = arrays["visitation"]
        visitation.target.params[:] = arrays["visitation_target"]
    if marginal is not None and "marginal" in arrays:
        marginal.probs = arrays["marginal"]
    return TrainedArtifacts(config, actor, critic, visitation, marginal, channel, meta["rng_state"])


def build_learners(config: ExperimentConfig, env, init_rngs):
    actor = Actor(env.block_sizes, env.n_actions, init_rngs[0], config.hidden, config.layers_policy, config.lr_policy, config.lambda_sac)
    critic = Critic(env.block_sizes, env.n_actions, init_rngs[1], config.hidden, config.layers_critic, config.lr_critic, config.tau_critic)
    visitation = marginal = channel = None
    active = config.agent != "sac" and config.lam > 0
    if active:
        channel = position_channel(env, config.lam, "cv-position" if config.agent == "opac-cv" else "mv-position")
        if config.agent == "opac-cv":
            visitation = FactoredVisitationNet(
                env.block_sizes, env.n_actions, init_rngs[2], config.hidden, config.layers_visitation, config.lr_visitation, config.tau_visitation
            )
        else:
            marginal = MarginalVisitationModel(channel.n_features, config.mv_smoothing)
    return actor, critic, visitation, marginal, channel


def evaluate(env, actor: Actor, config: ExperimentConfig, rng, feature=None, explore_env=None) -> tuple[float, float]:
    """MC expected return on ``env`` and discounted position-visitation entropy on ``explore_env``."""
    explore_env = explore_env or env
    policy = actor.state_policy(env)
    feature = feature or (lambda s: s.agent_pos)
    ret = mc_expected_return(env, policy, config.eval_rollouts, rng, config.gamma, config.max_steps)
    ent = mc_discounted_feature_entropy(explore_env, policy, feature, config.eval_rollouts, rng, config.gamma, config.max_steps)
    return ret, ent


def training_env(env, config: ExperimentConfig):
    """Exploration runs (no task reward) roll out where the goal does not end the episode."""
    variant = getattr(env, "exploration_variant", None)
    return variant() if not config.extrinsic and variant is not None else env


def _collect(env, actor: Actor, buffer: ReplayBuffer, config: ExperimentConfig, rng, n: int, policy=None) -> None:
    policy = policy or actor.state_policy(env)
    for _ in range(n):
        traj = sample_trajectory(env, policy, config.max_steps, rng)
        buffer.extend(trajectory_segments(env, traj, config.horizon))


def train(config: ExperimentConfig, env, seed: int, feature=None, callback=None):
    """Run one seed. Returns ``(artifacts, metric rows)``.

    Per iteration: collect on-policy trajectories; visitation-model steps;
    critic steps with intrinsic rewards; actor steps; target updates.
    Independent random streams are spawned from ``seed`` for network
    initialisation, learning and evaluation, so switching the exploration
    channel off does not perturb the other streams.

    With ``config.extrinsic`` off, rollouts use ``training_env(env)``;
    returns are still measured on ``env``.
    """
    config.validate()
    task_env, env = env, training_env(env, config)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]
    init_rngs, rng, eval_rng = streams[:3], streams[3], streams[4]
    actor, critic, visitation, marginal, channel = build_learners(config, env, init_rngs)
    buffer = ReplayBuffer(config.buffer_size)
    uniform = lambda s: np.full(env.n_actions, 1.0 / env.n_actions)
    _collect(env, actor, buffer, config, rng, config.init_trajectories, uniform)

    rows = []
    for it in range(1, config.iterations + 1):
        _collect(env, actor, buffer, config, rng, config.trajectories_per_iteration)

        v_loss = 0.0
        if visitation is not None:
            for _ in range(config.visitation_steps):
                v_loss = visitation_update(visitation, buffer.sample(config.batch_size, rng), actor, config.gamma, rng)
        if marginal is not None:
            fit_marginal(marginal, buffer, channel, config.gamma)

        c_loss = 0.0
        for _ in range(config.critic_steps):
            batch = Batch.from_segments(buffer.sample(config.batch_size, rng))
            if visitation is not None:
                r_int = cv_intrinsic(batch, channel, visitation, actor, rng)
            elif marginal is not None:
                r_int = marginal_intrinsic_reward(channel, marginal, mv_future_features(batch, channel, config.gamma, rng))
            else:
                r_int = np.zeros(len(batch.rewards))
            lam = channel.weight if channel is not None else 0.0
            y = critic_targets(batch, actor, critic, r_int, lam, config.gamma, rng, float(config.extrinsic))
            c_loss, grad = critic_loss(critic, batch.states, batch.actions, y)
            critic.optimizer.step(critic.net.params, grad)

        for _ in range(config.actor_steps):
            batch = Batch.from_segments(buffer.sample(config.batch_size, rng))
            a, adv = actor_samples(actor, critic, batch.states, rng, config.actor_baseline)
            a_loss, grad = actor_loss(actor, batch.states, a, adv)
            actor.optimizer.step(actor.net.params, grad)

        critic.pair.update()
        if visitation is not None:
            visitation.sync_target()

        if it % config.eval_every == 0 or it == config.iterations:
            ret, ent = evaluate(task_env, actor, config, eval_rng, feature, env)
            row = dict(zip(METRIC_COLUMNS, (seed, it, ret, ent, float(v_loss), float(c_loss), float(a_loss))))
            rows.append(row)
            if callback is not None:
                callback(row)

    artifacts = TrainedArtifacts(config, actor, critic, visitation, marginal, channel, rng.bit_generator.state)
    return artifacts, rows


def train_opac_cv(config: ExperimentConfig, env, seed: int, **kw):
    return train(config.replace(agent="opac-cv"), env, seed, **kw)


def train_opac_mv(config: ExperimentConfig, env, seed: int, **kw):
    return train(config.replace(agent="opac-mv"), env, seed, **kw)


def train_sac(config: ExperimentConfig, env, seed: int, **kw):
    return train(config.replace(agent="sac"), env, seed, **kw)
