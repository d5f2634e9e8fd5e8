"""
Latent enhancement by soft actor-critic.

ClusterEnv rescales each classifier parameter group by one scalar per step
(T_i <- a_i * T_i) and pays k * S_c + b, with S_c := -1 when the classifier
collapses into a single non-empty cluster. SacAgent is a squashed-Gaussian
actor with twin critics, Polyak-averaged target critics and an
automatically tuned entropy temperature.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .clustering import assign_clusters, pairwise_distances, silhouette_score
from .errors import ContractError, SingleClusterError
from .models import LatentBatch, ParamGroup, SacTransition, TrajectoryRow
from .optim import Adam
from .seq2seq import classify
from .tensor import (
    Tensor, add, backward, clip, concat, constant, exp, log, matmul, minimum,
    mul, no_grad, reduce_mean, reduce_sum, relu, square, sub, tanh,
    uniform_bias, xavier_uniform,
)

logger = logging.getLogger(__name__)

SINGLE_CLUSTER_SILHOUETTE = -1.0
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
SQUASH_EPS = 1e-6


def silhouette_reward(silhouette: float, k: float, b: float) -> float:
    return k * silhouette + b


# ── environment ────────────────────────────────────────────────────────────

class ClusterEnv:

    def __init__(self, points: np.ndarray, classifier: ParamGroup, k: float = 100.0,
                 b: float = 25.0, target: float = 0.55, episode_steps: int = 50,
                 action_low: float = 0.5, action_high: float = 1.5):
        self.points = np.asarray(points, dtype=np.float64)
        self.distances = pairwise_distances(self.points)
        self.snapshot = classifier.clone()
        self.snapshot.freeze()
        self.classifier = self.snapshot.clone()
        self.k = k
        self.b = b
        self.target = target
        self.episode_steps = episode_steps
        self.action_low = action_low
        self.action_high = action_high
        self.n_clusters = classifier['W2'].shape[1]
        self.group_keys = list(classifier.params)
        self._inputs = constant(self.points.astype(classifier['W1'].dtype))

        self.step_count = 0
        self.clipped_actions = 0
        self.silhouette = SINGLE_CLUSTER_SILHOUETTE
        self.assignments = np.zeros(len(self.points), dtype=np.int64)

    @property
    def action_dim(self) -> int:
        return len(self.group_keys)

    @property
    def observation_dim(self) -> int:
        return 1 + self.n_clusters + 2 * self.action_dim

    def reset(self) -> np.ndarray:
        for key in self.group_keys:
            self.classifier[key].data[...] = self.snapshot[key].data
        self.step_count = 0
        return self._observe()

    def step(self, action) -> Tuple[np.ndarray, float, bool]:
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (self.action_dim,):
            raise ContractError(f"action must have {self.action_dim} components, got {action.shape}")
        if np.any(action < self.action_low) or np.any(action > self.action_high):
            self.clipped_actions += 1
            logger.warning(f"action {np.round(action, 4).tolist()} outside "
                           f"[{self.action_low}, {self.action_high}], clipped")
            action = np.clip(action, self.action_low, self.action_high)
        for key, scale in zip(self.group_keys, action):
            tensor = self.classifier[key]
            tensor.data *= tensor.dtype.type(scale)
        self.step_count += 1
        observation = self._observe()
        reward = silhouette_reward(self.silhouette, self.k, self.b)
        done = self.silhouette >= self.target or self.step_count >= self.episode_steps
        return observation, reward, done

    def _observe(self) -> np.ndarray:
        with no_grad():
            probs = classify(self._inputs, self.classifier).data
        self.assignments = assign_clusters(probs)
        batch = LatentBatch(self.points, self.assignments, self.n_clusters)
        try:
            self.silhouette = silhouette_score(batch, self.distances).mean
        except SingleClusterError:
            self.silhouette = SINGLE_CLUSTER_SILHOUETTE
        stats = []
        for key in self.group_keys:
            data = self.classifier[key].data
            stats.extend([float(np.mean(data)), float(np.std(data))])
        return np.concatenate([[self.silhouette], batch.occupancy(), stats])

    def to_env_action(self, squashed: np.ndarray) -> np.ndarray:
        return self.action_low + (np.asarray(squashed) + 1.0) * 0.5 * (self.action_high - self.action_low)


# ── replay buffer ──────────────────────────────────────────────────────────

class ReplayBuffer:

    def __init__(self, capacity: int, observation_dim: int, action_dim: int):
        self.capacity = capacity
        self.observations = np.zeros((capacity, observation_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_observations = np.zeros((capacity, observation_dim))
        self.dones = np.zeros(capacity)
        self.position = 0
        self.size = 0

    def add(self, transition: SacTransition):
        i = self.position
        self.observations[i] = transition.observation
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.next_observations[i] = transition.next_observation
        self.dones[i] = float(transition.done)
        self.position = (self.position + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[SacTransition]:
        idx = rng.integers(0, self.size, size=batch_size)
        return [SacTransition(self.observations[i], self.actions[i], float(self.rewards[i]),
                              self.next_observations[i], bool(self.dones[i])) for i in idx]

    def __len__(self):
        return self.size


# ── networks ───────────────────────────────────────────────────────────────

def init_mlp(rng: np.random.Generator, name: str, sizes: List[int]) -> ParamGroup:
    group = ParamGroup(name)
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        group.add(f'W{layer}', xavier_uniform(rng, fan_in, fan_out))
        group.add(f'b{layer}', uniform_bias(rng, fan_in, fan_out))
    return group


def mlp_trunk(x: Tensor, group: ParamGroup, layers: int) -> Tensor:
    for layer in range(layers):
        x = relu(add(matmul(x, group[f'W{layer}']), group[f'b{layer}']))
    return x


def q_value(group: ParamGroup, observations: Tensor, actions: Tensor) -> Tensor:
    hidden = mlp_trunk(concat([observations, actions], axis=-1), group, 2)
    return add(matmul(hidden, group['W2']), group['b2'])


def init_policy(rng: np.random.Generator, observation_dim: int, action_dim: int,
                hidden: int) -> ParamGroup:
    group = init_mlp(rng, 'policy', [observation_dim, hidden, hidden])
    group.add('W_mu', xavier_uniform(rng, hidden, action_dim))
    group.add('b_mu', np.zeros(action_dim))
    group.add('W_ls', xavier_uniform(rng, hidden, action_dim))
    group.add('b_ls', np.zeros(action_dim))
    return group


def policy_heads(group: ParamGroup, observations: Tensor) -> Tuple[Tensor, Tensor]:
    hidden = mlp_trunk(observations, group, 2)
    mean = add(matmul(hidden, group['W_mu']), group['b_mu'])
    log_std = clip(add(matmul(hidden, group['W_ls']), group['b_ls']), LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def sample_action(group: ParamGroup, observations: Tensor,
                  rng: np.random.Generator) -> Tuple[Tensor, Tensor]:
    """Reparameterised tanh-Gaussian sample -> (action in [-1, 1], log-probability [B])."""
    mean, log_std = policy_heads(group, observations)
    noise = rng.standard_normal(mean.shape)
    pre = add(mean, mul(exp(log_std), constant(noise)))
    action = tanh(pre)
    gaussian = sub(constant(-0.5 * noise * noise - 0.5 * math.log(2.0 * math.pi)), log_std)
    squash = log(add(sub(1.0, square(action)), SQUASH_EPS))
    log_prob = reduce_sum(sub(gaussian, squash), axis=-1)
    return action, log_prob


@dataclass
class SacDiagnostics:
    q_loss: float
    policy_loss: float
    alpha_loss: float
    alpha: float
    entropy: float


class SacAgent:

    def __init__(self, observation_dim: int, action_dim: int, rng: np.random.Generator,
                 hidden: int = 64, lr: float = 3e-4, batch_size: int = 64,
                 buffer_size: int = 10_000, gamma: float = 0.99, tau: float = 0.005,
                 init_alpha: float = 0.2):
        self.rng = rng
        self.action_dim = action_dim
        self.batch_size = batch_size
        self.gamma = gamma
        self.tau = tau
        self.lr = lr
        self.target_entropy = -float(action_dim)

        self.policy = init_policy(rng, observation_dim, action_dim, hidden)
        self.q1 = init_mlp(rng, 'q1', [observation_dim + action_dim, hidden, hidden, 1])
        self.q2 = init_mlp(rng, 'q2', [observation_dim + action_dim, hidden, hidden, 1])
        self.q1_target = self.q1.clone('q1_target')
        self.q2_target = self.q2.clone('q2_target')
        self.q1_target.freeze()
        self.q2_target.freeze()
        self.temperature = ParamGroup('temperature')
        self.temperature.add('log_alpha', np.array([math.log(init_alpha)]))

        self.policy_optimizer = Adam([self.policy], lr=lr)
        self.q_optimizer = Adam([self.q1, self.q2], lr=lr)
        self.alpha_optimizer = Adam([self.temperature], lr=lr)
        self.buffer = ReplayBuffer(buffer_size, observation_dim, action_dim)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.temperature['log_alpha'].data[0]))

    def act(self, observation: np.ndarray, deterministic: bool = False) -> np.ndarray:
        obs = constant(np.asarray(observation, dtype=np.float64)[None, :])
        with no_grad():
            if deterministic:
                mean, _ = policy_heads(self.policy, obs)
                return np.tanh(mean.data[0])
            action, _ = sample_action(self.policy, obs, self.rng)
        return action.data[0]

    def remember(self, transition: SacTransition):
        self.buffer.add(transition)

    def ready(self) -> bool:
        return len(self.buffer) >= self.batch_size

    def update(self) -> SacDiagnostics:
        return sac_update(self, self.buffer.sample(self.batch_size, self.rng))


def _polyak(target: ParamGroup, online: ParamGroup, tau: float):
    for key, tensor in online.items():
        target[key].data *= (1.0 - tau)
        target[key].data += tau * tensor.data


def sac_update(agent: SacAgent, batch: List[SacTransition]) -> SacDiagnostics:
    if not batch:
        raise ContractError("sac_update needs a non-empty batch")
    obs = constant(np.stack([t.observation for t in batch]))
    actions = constant(np.stack([t.action for t in batch]))
    rewards = np.array([t.reward for t in batch])
    next_obs = constant(np.stack([t.next_observation for t in batch]))
    dones = np.array([float(t.done) for t in batch])
    alpha = agent.alpha

    with no_grad():
        next_actions, next_log_prob = sample_action(agent.policy, next_obs, agent.rng)
        q_next = np.minimum(q_value(agent.q1_target, next_obs, next_actions).data[:, 0],
                            q_value(agent.q2_target, next_obs, next_actions).data[:, 0])
        targets = rewards + agent.gamma * (1.0 - dones) * (q_next - alpha * next_log_prob.data)
    y = constant(targets[:, None])

    agent.q_optimizer.zero_grad()
    q_loss = add(reduce_mean(square(sub(q_value(agent.q1, obs, actions), y))),
                 reduce_mean(square(sub(q_value(agent.q2, obs, actions), y))))
    backward(q_loss)
    agent.q_optimizer.step()

    agent.policy_optimizer.zero_grad()
    new_actions, log_prob = sample_action(agent.policy, obs, agent.rng)
    q_new = minimum(q_value(agent.q1, obs, new_actions), q_value(agent.q2, obs, new_actions))
    policy_loss = reduce_mean(sub(mul(log_prob, alpha), q_new.sum(axis=-1)))
    backward(policy_loss)
    agent.policy_optimizer.step()
    agent.q_optimizer.zero_grad()

    agent.alpha_optimizer.zero_grad()
    entropy_gap = constant(log_prob.data + agent.target_entropy)
    alpha_loss = -reduce_mean(mul(agent.temperature['log_alpha'], entropy_gap))
    backward(alpha_loss)
    agent.alpha_optimizer.step()

    # with lr=0 the targets stay bit-identical too
    if agent.lr > 0:
        _polyak(agent.q1_target, agent.q1, agent.tau)
        _polyak(agent.q2_target, agent.q2, agent.tau)
    agent.updates += 1
    return SacDiagnostics(q_loss.item(), policy_loss.item(), alpha_loss.item(),
                          agent.alpha, float(-np.mean(log_prob.data)))


# ── enhancement loop ───────────────────────────────────────────────────────

@dataclass
class EnhancementResult:
    classifier: ParamGroup
    initial_silhouette: float
    best_silhouette: float
    reached_target: bool
    trajectory: List[TrajectoryRow] = field(default_factory=list)
    clipped_actions: int = 0
    best_assignments: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return len(self.trajectory)


def enhance_classifier(env: ClusterEnv, agent: SacAgent, max_steps: int = 500,
                       warmup_steps: int = 64, reward_scale: float = 0.01,
                       log_every: int = 50) -> EnhancementResult:
    """
    Episodes of at most env.episode_steps steps, each starting from the
    snapshot, until the target is reached or max_steps env steps are spent.
    Returns the classifier with the best observed S_c; the snapshot itself
    is the initial best.
    """
    env.reset()
    best = env.silhouette
    result = EnhancementResult(
        classifier=env.snapshot.clone('C'),
        initial_silhouette=best,
        best_silhouette=best,
        reached_target=best >= env.target,
        best_assignments=env.assignments.copy(),
    )

    step, episode = 0, 0
    while step < max_steps and not result.reached_target:
        observation = env.reset()
        episode += 1
        done = False
        while not done and step < max_steps:
            if step < warmup_steps:
                squashed = agent.rng.uniform(-1.0, 1.0, size=env.action_dim)
            else:
                squashed = agent.act(observation)
            env_action = env.to_env_action(squashed)
            next_observation, reward, done = env.step(env_action)
            step += 1
            terminal = env.silhouette >= env.target
            agent.remember(SacTransition(observation, squashed, reward_scale * reward,
                                         next_observation, terminal))
            if env.silhouette > result.best_silhouette:
                result.best_silhouette = env.silhouette
                for key in env.group_keys:
                    result.classifier[key].data[...] = env.classifier[key].data
                result.best_assignments = env.assignments.copy()
            result.trajectory.append(TrajectoryRow(
                step=step, episode=episode, episode_step=env.step_count,
                silhouette=env.silhouette, reward=reward, done=done,
                best_silhouette=result.best_silhouette, action=[float(a) for a in env_action],
            ))
            if agent.ready():
                agent.update()
            if log_every and step % log_every == 0:
                logger.info(f"RL step {step}/{max_steps}  S_c={env.silhouette:.4f}  "
                            f"best={result.best_silhouette:.4f}  alpha={agent.alpha:.4f}")
            observation = next_observation
            if terminal:
                result.reached_target = True

    result.clipped_actions = env.clipped_actions
    if not result.reached_target and max_steps > 0:
        logger.info(f"target S_c {env.target} not reached in {step} steps; "
                    f"best {result.best_silhouette:.4f}")
    return result
