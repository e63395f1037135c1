#!/usr/bin/env python3
"""
DDPG module for the IAB lab.

Actor and critic MLPs in plain numpy with hand-derived backpropagation, a ring
replay buffer, soft-updated target networks and Adam.
"""

import json
import logging
from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
SIMPLEX_TOLERANCE = 1e-6


class AgentError(Exception):
    """Custom exception for agent-related errors."""
    pass


class ReplayUnderfullError(AgentError):
    """The replay buffer holds fewer transitions than a batch needs."""
    pass


@dataclass(frozen=True)
class AgentConfig:
    """
    DDPG hyperparameters.

    Attributes:
        learning_rate: Adam step size for both networks
        batch_size: Transitions per update
        discount_gamma: Discount factor in [0, 1)
        soft_update_tau: Target tracking rate in (0, 1]
        buffer_capacity: Replay ring size
        hidden_width: Units in each of the two hidden layers
    """
    learning_rate: float = 1e-4
    batch_size: int = 256
    discount_gamma: float = 0.95
    soft_update_tau: float = 0.005
    buffer_capacity: int = 100_000
    hidden_width: int = 256
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise AgentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise AgentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.discount_gamma < 1.0:
            raise AgentError(f"discount_gamma must be within [0, 1), got {self.discount_gamma}")
        if not 0.0 < self.soft_update_tau <= 1.0:
            raise AgentError(f"soft_update_tau must be within (0, 1], got {self.soft_update_tau}")
        if self.buffer_capacity < self.batch_size:
            raise AgentError(f"buffer_capacity ({self.buffer_capacity}) must be >= batch_size ({self.batch_size})")
        if self.hidden_width < 1:
            raise AgentError(f"hidden_width must be >= 1, got {self.hidden_width}")


@dataclass
class MlpParameters:
    """Weights are stored (fan_in, fan_out) so a layer is x @ W + b."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise AgentError("an MLP needs one bias per weight matrix and at least one layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise AgentError(f"layer {l}: weight {w.shape} and bias {b.shape} are inconsistent")
            if l and self.weights[l - 1].shape[1] != w.shape[0]:
                raise AgentError(f"layer {l}: fan-in {w.shape[0]} != previous fan-out {self.weights[l - 1].shape[1]}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def tensors(self) -> List[np.ndarray]:
        return [t for pair in zip(self.weights, self.biases) for t in pair]

    @classmethod
    def from_tensors(cls, tensors: Sequence[np.ndarray]) -> "MlpParameters":
        return cls(weights=[np.array(t, dtype=float) for t in tensors[0::2]],
                   biases=[np.array(t, dtype=float) for t in tensors[1::2]])

    def copy(self) -> "MlpParameters":
        return MlpParameters.from_tensors(self.tensors())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, zero_last: bool = False) -> MlpParameters:
    """Uniform +-1/sqrt(fan_in) per layer; zero_last zeroes the output layer."""
    weights, biases = [], []
    for l, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if zero_last and l == len(sizes) - 2:
            weights.append(np.zeros((fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
            continue
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParameters(weights, biases)


def _as_batch(x: np.ndarray, width: int, name: str) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != width:
        raise AgentError(f"{name} must have trailing dimension {width}, got shape {x.shape}")
    return batch, single


def _mlp_forward(params: MlpParameters, x: np.ndarray):
    inputs, pre = [], []
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if l < last else z
    return h, (inputs, pre)


def _mlp_backward(params: MlpParameters, cache, grad_out: np.ndarray) -> Tuple[MlpParameters, np.ndarray]:
    inputs, pre = cache
    last = len(params.weights) - 1
    grad_w: List[np.ndarray] = [None] * len(params.weights)
    grad_b: List[np.ndarray] = [None] * len(params.weights)
    g = grad_out
    for l in range(last, -1, -1):
        if l < last:
            g = g * (pre[l] > 0.0)
        grad_w[l] = inputs[l].T @ g
        grad_b[l] = g.sum(axis=0)
        g = g @ params.weights[l].T
    return MlpParameters(grad_w, grad_b), g


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def actor_forward(params: MlpParameters, state: np.ndarray) -> np.ndarray:
    """Map a state (4N) or a batch of states to simplex actions via a softmax head."""
    batch, single = _as_batch(state, params.input_dim, "state")
    logits, _ = _mlp_forward(params, batch)
    action = _softmax(logits)
    return action[0] if single else action


def critic_forward(params: MlpParameters, state: np.ndarray, action: np.ndarray):
    """Q-value of (state, action); scalar for a single pair, vector for a batch."""
    state = np.asarray(state, dtype=float)
    action = np.asarray(action, dtype=float)
    single = state.ndim == 1
    joint = np.concatenate([np.atleast_2d(state), np.atleast_2d(action)], axis=1)
    batch, _ = _as_batch(joint, params.input_dim, "state+action")
    q, _ = _mlp_forward(params, batch)
    return float(q[0, 0]) if single else q[:, 0]


def critic_loss_and_grads(critic: MlpParameters, states: np.ndarray, actions: np.ndarray,
                          targets: np.ndarray) -> Tuple[float, MlpParameters]:
    """Mean squared TD error and its gradient with respect to the critic parameters."""
    joint, _ = _as_batch(np.concatenate([states, actions], axis=1), critic.input_dim, "state+action")
    q, cache = _mlp_forward(critic, joint)
    error = q[:, 0] - np.asarray(targets, dtype=float)
    loss = float(np.mean(error ** 2))
    grads, _ = _mlp_backward(critic, cache, (2.0 / len(error)) * error[:, None])
    return loss, grads


def actor_objective_and_grads(actor: MlpParameters, critic: MlpParameters,
                              states: np.ndarray) -> Tuple[float, MlpParameters]:
    """
    J = mean Q(s, actor(s)) and dJ/d(actor parameters), the critic held fixed.

    The gradient points uphill; callers minimizing with Adam negate it.
    """
    batch, _ = _as_batch(states, actor.input_dim, "state")
    logits, actor_cache = _mlp_forward(actor, batch)
    actions = _softmax(logits)
    q, critic_cache = _mlp_forward(critic, np.concatenate([batch, actions], axis=1))
    objective = float(np.mean(q))
    _, grad_joint = _mlp_backward(critic, critic_cache, np.full_like(q, 1.0 / len(q)))
    grad_action = grad_joint[:, batch.shape[1]:]
    grad_logits = actions * (grad_action - np.sum(grad_action * actions, axis=1, keepdims=True))
    grads, _ = _mlp_backward(actor, actor_cache, grad_logits)
    return objective, grads


def soft_update(target: MlpParameters, online: MlpParameters, tau: float) -> MlpParameters:
    """target <- tau * online + (1 - tau) * target, elementwise."""
    target_tensors, online_tensors = target.tensors(), online.tensors()
    if len(target_tensors) != len(online_tensors) or any(
            t.shape != o.shape for t, o in zip(target_tensors, online_tensors)):
        raise AgentError("soft_update needs target and online networks of identical shapes")
    return MlpParameters.from_tensors([tau * o + (1.0 - tau) * t for t, o in zip(target_tensors, online_tensors)])


@dataclass
class AdamState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: MlpParameters, beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> "AdamState":
        tensors = params.tensors()
        return cls([np.zeros_like(t) for t in tensors], [np.zeros_like(t) for t in tensors], 0, beta1, beta2, epsilon)


def adam_step(state: AdamState, params: MlpParameters, grads: MlpParameters,
              lr: float) -> Tuple[MlpParameters, AdamState]:
    """
    One bias-corrected Adam update; inputs are left untouched.

    Raises:
        AgentError: On a non-finite gradient or mismatched shapes
    """
    p_tensors, g_tensors = params.tensors(), grads.tensors()
    if len(p_tensors) != len(g_tensors) or any(p.shape != g.shape for p, g in zip(p_tensors, g_tensors)):
        raise AgentError("gradient shapes do not match parameter shapes")
    if not grads.is_finite():
        raise AgentError("non-finite gradient")
    step = state.step + 1
    first, second, updated = [], [], []
    for p, g, m, v in zip(p_tensors, g_tensors, state.first_moment, state.second_moment):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** step)
        v_hat = v / (1.0 - state.beta2 ** step)
        updated.append(p - lr * m_hat / (np.sqrt(v_hat) + state.epsilon))
        first.append(m)
        second.append(v)
    return (MlpParameters.from_tensors(updated),
            AdamState(first, second, step, state.beta1, state.beta2, state.epsilon))


class Transition(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise AgentError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.size = 0
        self.position = 0

    def __len__(self) -> int:
        return self.size

    def push(self, transition: Transition) -> None:
        """
        Store one transition, evicting the oldest when full.

        Raises:
            AgentError: On non-finite entries or an off-simplex action
        """
        state, action, reward, next_state = transition
        action = np.asarray(action, dtype=float)
        if not (np.all(np.isfinite(state)) and np.all(np.isfinite(action)) and np.isfinite(reward)
                and np.all(np.isfinite(next_state))):
            raise AgentError("transition contains non-finite entries")
        if np.any(action < -SIMPLEX_TOLERANCE) or abs(float(action.sum()) - 1.0) > SIMPLEX_TOLERANCE:
            raise AgentError(f"transition action is off the simplex (sum {float(action.sum())!r})")
        i = self.position
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.position = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """
        Raises:
            ReplayUnderfullError: If fewer than batch_size transitions are stored
        """
        if self.size < batch_size:
            raise ReplayUnderfullError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx])


class DdpgAgent:
    """
    One MBS agent: actor, critic, their targets, Adam states, replay and a private generator.

    Args:
        state_dim: Length of the encoded state (4N)
        action_dim: Number of SBSs (N)
        config: Hyperparameters
        seed: Seed of the agent's generator (init and replay sampling)
    """

    def __init__(self, state_dim: int, action_dim: int, config: Optional[AgentConfig] = None, seed: int = 0):
        self.config = config or AgentConfig()
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.rng = np.random.default_rng(seed)
        hidden = self.config.hidden_width
        self.actor = init_mlp([state_dim, hidden, hidden, action_dim], self.rng, zero_last=True)
        self.critic = init_mlp([state_dim + action_dim, hidden, hidden, 1], self.rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_optimizer = self._fresh_adam(self.actor)
        self.critic_optimizer = self._fresh_adam(self.critic)
        self.buffer = ReplayBuffer(self.config.buffer_capacity, state_dim, action_dim)
        self.updates = 0

    def _fresh_adam(self, params: MlpParameters) -> AdamState:
        return AdamState.zeros_like(params, self.config.adam_beta1, self.config.adam_beta2, self.config.adam_epsilon)

    def act(self, state: np.ndarray) -> np.ndarray:
        return actor_forward(self.actor, state)

    def remember(self, state: np.ndarray, action: np.ndarray, reward: float, next_state: np.ndarray) -> None:
        self.buffer.push(Transition(np.asarray(state, dtype=float), action, float(reward),
                                    np.asarray(next_state, dtype=float)))

    def learn(self) -> Optional[Tuple[float, float]]:
        """One update from a replay batch; None while the buffer is underfull."""
        try:
            batch = self.buffer.sample(self.config.batch_size, self.rng)
        except ReplayUnderfullError:
            return None
        return train_step(self, batch)

    def save(self, path: str) -> None:
        """Write a versioned .npz checkpoint of networks, optimizers, replay and generator state."""
        arrays = {
            "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
            "config": np.array(json.dumps(asdict(self.config), sort_keys=True)),
            "dims": np.array([self.state_dim, self.action_dim]),
            "updates": np.array(self.updates),
            "rng_state": np.array(json.dumps(self.rng.bit_generator.state)),
            "buffer_meta": np.array([self.buffer.size, self.buffer.position]),
            "buffer_states": self.buffer.states[:self.buffer.size],
            "buffer_actions": self.buffer.actions[:self.buffer.size],
            "buffer_rewards": self.buffer.rewards[:self.buffer.size],
            "buffer_next_states": self.buffer.next_states[:self.buffer.size],
        }
        for name in ("actor", "critic", "actor_target", "critic_target"):
            for i, tensor in enumerate(getattr(self, name).tensors()):
                arrays[f"{name}_{i}"] = tensor
        for name in ("actor_optimizer", "critic_optimizer"):
            optimizer = getattr(self, name)
            arrays[f"{name}_step"] = np.array(optimizer.step)
            for i, (m, v) in enumerate(zip(optimizer.first_moment, optimizer.second_moment)):
                arrays[f"{name}_m_{i}"] = m
                arrays[f"{name}_v_{i}"] = v
        with open(path, "wb") as f:
            np.savez(f, **arrays)
        logger.info(f"Agent checkpoint written to {path}")

    @classmethod
    def load(cls, path: str) -> "DdpgAgent":
        """
        Restore an agent written by save.

        Raises:
            AgentError: On an unknown format version or a missing entry
        """
        with np.load(path, allow_pickle=False) as data:
            try:
                version = int(data["format_version"])
                if version != CHECKPOINT_FORMAT_VERSION:
                    raise AgentError(f"unsupported checkpoint format {version} in {path}")
                config = AgentConfig(**json.loads(str(data["config"])))
                state_dim, action_dim = (int(v) for v in data["dims"])
                agent = cls(state_dim, action_dim, config)
                tensor_count = 2 * 3
                for name in ("actor", "critic", "actor_target", "critic_target"):
                    setattr(agent, name, MlpParameters.from_tensors(
                        [data[f"{name}_{i}"] for i in range(tensor_count)]))
                for name in ("actor_optimizer", "critic_optimizer"):
                    setattr(agent, name, AdamState(
                        [np.array(data[f"{name}_m_{i}"]) for i in range(tensor_count)],
                        [np.array(data[f"{name}_v_{i}"]) for i in range(tensor_count)],
                        int(data[f"{name}_step"]), config.adam_beta1, config.adam_beta2, config.adam_epsilon))
                size, position = (int(v) for v in data["buffer_meta"])
                agent.buffer.states[:size] = data["buffer_states"]
                agent.buffer.actions[:size] = data["buffer_actions"]
                agent.buffer.rewards[:size] = data["buffer_rewards"]
                agent.buffer.next_states[:size] = data["buffer_next_states"]
                agent.buffer.size, agent.buffer.position = size, position
                agent.rng.bit_generator.state = json.loads(str(data["rng_state"]))
                agent.updates = int(data["updates"])
            except KeyError as e:
                raise AgentError(f"checkpoint {path} is missing {e}")
        logger.info(f"Agent checkpoint loaded from {path}")
        return agent


def train_step(agent: DdpgAgent, batch: Batch) -> Tuple[float, float]:
    """
    One DDPG update: critic towards r + gamma * Q'(s', mu'(s')), actor up the critic,
    Adam on both, then soft target updates.

    Returns:
        (critic_loss, actor_objective)

    Raises:
        AgentError: If the batch size differs from the configured one
    """
    config = agent.config
    if len(batch.rewards) != config.batch_size:
        raise AgentError(f"batch has {len(batch.rewards)} transitions, expected {config.batch_size}")
    next_actions = actor_forward(agent.actor_target, batch.next_states)
    targets = batch.rewards + config.discount_gamma * critic_forward(agent.critic_target, batch.next_states,
                                                                     next_actions)
    critic_loss, critic_grads = critic_loss_and_grads(agent.critic, batch.states, batch.actions, targets)
    agent.critic, agent.critic_optimizer = adam_step(agent.critic_optimizer, agent.critic, critic_grads,
                                                     config.learning_rate)

    objective, actor_grads = actor_objective_and_grads(agent.actor, agent.critic, batch.states)
    ascent = MlpParameters.from_tensors([-g for g in actor_grads.tensors()])
    agent.actor, agent.actor_optimizer = adam_step(agent.actor_optimizer, agent.actor, ascent,
                                                   config.learning_rate)

    agent.actor_target = soft_update(agent.actor_target, agent.actor, config.soft_update_tau)
    agent.critic_target = soft_update(agent.critic_target, agent.critic, config.soft_update_tau)
    agent.updates += 1
    return critic_loss, objective
