"""Actor-critic recommender and its composition loop: the tracing model
supplies the mastery state, the prerequisite-graph navigation supplies the
candidate mask, and a shared-trunk policy/value network picks the next item.
Also hosts the candidate-restricted random, mastery-weighted, and Monte
Carlo search baselines.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .dkt import DKTModel, Interaction, KtState
from .graph import PrereqGraph, candidates_with_fallback, fallback_focus
from .seeding import named_rng


@dataclass
class AgentConfig:
    gamma: float = 0.99
    alpha: float = 1.0            # weight of the advantage-scaled policy term
    beta: float = 0.1             # weight of the return-scaled enhancement term
    path_length: int = 20
    lr: float = 1e-4
    entropy_weight: float = 0.0
    batch_episodes: int = 16
    hidden1: int = 128
    hidden2: int = 32
    k_hops: int = 2
    clip_norm: float = 5.0
    eval_mode: str = "sample"     # or "argmax"

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.path_length < 1:
            raise ValueError("path_length must be >= 1")


def build_state(knowledge: np.ndarray, target: Sequence[int], num_items: int) -> np.ndarray:
    """Concatenate the mastery vector with the one-hot target encoding."""
    knowledge = np.asarray(knowledge, dtype=np.float64)
    if knowledge.shape != (num_items,):
        raise ValueError(f"knowledge must have shape ({num_items},)")
    onehot = np.zeros(num_items)
    for t in target:
        if not (0 <= t < num_items):
            raise ValueError(f"target item {t} out of range")
        onehot[t] = 1.0
    return np.concatenate([knowledge, onehot])


class PolicyValueNet:
    """Two shared dense layers feeding a policy head (one logit per item)
    and a scalar value head."""

    def __init__(self, num_items: int, hidden1: int = 128, hidden2: int = 32,
                 rng: np.random.Generator | None = None, store: nn.ParamStore | None = None):
        self.num_items = num_items
        if store is not None:
            self.store = store
        else:
            self.store = nn.ParamStore()
            self.store.add("w1", nn.xavier_init(2 * num_items, hidden1, rng))
            self.store.add("b1", np.zeros(hidden1))
            self.store.add("w2", nn.xavier_init(hidden1, hidden2, rng))
            self.store.add("b2", np.zeros(hidden2))
            self.store.add("w_pi", nn.xavier_init(hidden2, num_items, rng))
            self.store.add("b_pi", np.zeros(num_items))
            self.store.add("w_v", nn.xavier_init(hidden2, 1, rng))
            self.store.add("b_v", np.zeros(1))

    @classmethod
    def from_checkpoint(cls, path) -> "PolicyValueNet":
        store, _ = nn.ParamStore.load(path)
        return cls(num_items=store["w_pi"].data.shape[1], store=store)

    def save(self, path, header: dict[str, str] | None = None) -> None:
        meta = {"kind": "policy_value", "num_items": str(self.num_items)}
        meta.update(header or {})
        self.store.save(path, meta)

    def forward(self, state: np.ndarray) -> tuple[nn.Tensor, nn.Tensor]:
        """(policy logits, value estimate) for one state vector."""
        s = self.store
        x = nn.Tensor(state)
        h1 = nn.dense(x, s["w1"], s["b1"], "tanh")
        h2 = nn.dense(h1, s["w2"], s["b2"], "tanh")
        logits = nn.dense(h2, s["w_pi"], s["b_pi"], "identity")
        value = nn.pick(nn.dense(h2, s["w_v"], s["b_v"], "identity"), 0)
        return logits, value


def act(net: PolicyValueNet, state: np.ndarray, candidates, rng: np.random.Generator,
        mode: str = "sample") -> tuple[int, nn.Tensor, nn.Tensor]:
    """Pick an item from the candidate-masked policy.

    Returns (action, log-probability tensor, value tensor).  `sample` draws
    from the masked softmax; `argmax` takes the most probable candidate with
    lowest-id tie-break.
    """
    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise ValueError("empty candidate set; apply the navigation fallback first")
    logits, value = net.forward(state)
    probs = nn.masked_softmax(logits, cands).data[cands]
    if mode == "sample":
        action = cands[int(rng.choice(len(cands), p=probs))]
    elif mode == "argmax":
        action = cands[int(np.argmax(probs))]
    else:
        raise ValueError(f"unknown action mode {mode!r}")
    log_prob = nn.masked_log_prob(logits, cands, action)
    return action, log_prob, value


def compute_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Discounted returns R_i = sum_{j>=i} gamma^(j-i) r_j."""
    r = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(r)
    acc = 0.0
    for i in range(len(r) - 1, -1, -1):
        acc = r[i] + gamma * acc
        out[i] = acc
    return out


@dataclass
class Trajectory:
    """One episode's data: enough to replay the policy forward for updates."""

    states: list[np.ndarray]
    candidates: list[tuple[int, ...]]
    actions: list[int]
    scores: list[int]
    rewards: np.ndarray
    returns: np.ndarray
    target: tuple[int, ...]
    e_s: float
    e_e: float
    e_p: float
    focuses: list[int] = field(default_factory=list)
    history: tuple[Interaction, ...] = ()

    def __len__(self):
        return len(self.actions)


def trajectory_loss(net: PolicyValueNet, traj: Trajectory, alpha: float, beta: float,
                    entropy_weight: float = 0.0) -> tuple[nn.Tensor, dict[str, float]]:
    """Replay the trajectory through the network and assemble the per-step
    loss: squared value error, advantage-weighted negative log-likelihood
    (advantage uses the value estimate as a constant), and a return-weighted
    enhancement term; averaged over steps."""
    value_sum = nn.Tensor(0.0)
    policy_sum = nn.Tensor(0.0)
    enhance_sum = nn.Tensor(0.0)
    entropy_sum = nn.Tensor(0.0)
    n = len(traj)
    for state, cands, action, ret in zip(traj.states, traj.candidates, traj.actions, traj.returns):
        logits, value = net.forward(state)
        log_prob = nn.masked_log_prob(logits, cands, action)
        advantage = float(ret - value.data)  # critic estimate detached
        diff = value - float(ret)
        value_sum = value_sum + diff * diff
        policy_sum = policy_sum + (-(log_prob * advantage))
        enhance_sum = enhance_sum + (-(log_prob * float(ret)))
        if entropy_weight != 0.0:
            entropy_sum = entropy_sum + nn.masked_entropy(logits, cands)
    scale = 1.0 / n
    value_loss = value_sum * scale
    policy_loss = policy_sum * scale
    enhance_loss = enhance_sum * scale
    entropy = entropy_sum * scale
    total = value_loss + policy_loss * alpha + enhance_loss * beta
    if entropy_weight != 0.0:
        total = total + entropy * (-entropy_weight)
    parts = {
        "value_loss": value_loss.item(),
        "policy_loss": policy_loss.item(),
        "enhance_loss": enhance_loss.item(),
        "entropy": entropy.item(),
    }
    return total, parts


# -- policies ----------------------------------------------------------------


@dataclass
class StepContext:
    """Everything a per-step chooser may need."""

    state: np.ndarray
    knowledge: np.ndarray
    candidates: tuple[int, ...]
    target: tuple[int, ...]
    step_index: int
    path_length: int
    kt_state: KtState


class NullTracer:
    """Tracing stand-in for methods that ignore the knowledge level
    (candidate-restricted random choice needs no mastery estimate)."""

    def __init__(self, num_items: int):
        self.num_items = num_items

    def initial_state(self):
        return None

    def fold(self, records):
        return None

    def advance(self, state, rec):
        return None

    def knowledge_from_state(self, state) -> np.ndarray:
        return np.full(self.num_items, 0.5)


class NetPolicy:
    """Samples (or argmaxes) from the candidate-masked policy network."""

    def __init__(self, net: PolicyValueNet, mode: str = "sample"):
        self.net = net
        self.mode = mode

    def choose(self, ctx: StepContext, rng: np.random.Generator) -> int:
        action, _, _ = act(self.net, ctx.state, ctx.candidates, rng, self.mode)
        return action


class CnRandomPolicy:
    """Uniform choice among the navigation candidates."""

    def choose(self, ctx: StepContext, rng: np.random.Generator) -> int:
        return baseline_cn_random(ctx.candidates, rng)


class CogPolicy:
    """Weighted choice among candidates, inversely proportional to mastery."""

    def choose(self, ctx: StepContext, rng: np.random.Generator) -> int:
        return baseline_cog(ctx.candidates, ctx.knowledge, rng)


class McsPolicy:
    """Monte Carlo search over random continuations scored by the tracing model."""

    def __init__(self, kt_model: DKTModel, rollouts: int):
        self.kt_model = kt_model
        self.rollouts = rollouts

    def choose(self, ctx: StepContext, rng: np.random.Generator) -> int:
        remaining = ctx.path_length - ctx.step_index - 1
        return _mcs_next_item(self.kt_model, ctx.kt_state, ctx.target,
                              remaining, self.rollouts, rng)


def baseline_cn_random(candidates, rng: np.random.Generator) -> int:
    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise ValueError("empty candidate set")
    return cands[int(rng.integers(len(cands)))]


def baseline_cog(candidates, knowledge: np.ndarray, rng: np.random.Generator) -> int:
    """Sample with weight (1 - mastery); uniform when every weight is zero."""
    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise ValueError("empty candidate set")
    weights = np.clip(1.0 - np.asarray(knowledge)[cands], 0.0, None)
    total = weights.sum()
    if total <= 0.0:
        return cands[int(rng.integers(len(cands)))]
    return cands[int(rng.choice(len(cands), p=weights / total))]


def _mcs_next_item(kt_model: DKTModel, state: KtState, target: Sequence[int],
                   remaining: int, rollouts: int, rng: np.random.Generator) -> int:
    """Pick the item whose assumed-correct rollouts promise the largest mean
    promotion of the target mastery; ties go to the lowest item id."""
    tgt = list(target)
    num_items = kt_model.num_items
    current = float(kt_model.knowledge_from_state(state)[tgt].mean())
    best_item, best_score = 0, -np.inf
    for item in range(num_items):
        after_item = kt_model.advance(state, Interaction(item, 1))
        total = 0.0
        for _ in range(rollouts):
            s = after_item
            for _ in range(remaining):
                s = kt_model.advance(s, Interaction(int(rng.integers(num_items)), 1))
            total += float(kt_model.knowledge_from_state(s)[tgt].mean()) - current
        score = total / rollouts
        if score > best_score:
            best_item, best_score = item, score
    return best_item


def baseline_mcs(kt_model: DKTModel, prereq_graph: PrereqGraph, target: Sequence[int],
                 history: Sequence[Interaction], rollouts: int, path_length: int,
                 rng: np.random.Generator) -> list[int]:
    """Plan a full path by repeated rollout search, assuming each planned
    item is answered correctly."""
    if rollouts < 1:
        raise ValueError("rollouts must be >= 1")
    state = kt_model.fold(history)
    path: list[int] = []
    for step in range(path_length):
        item = _mcs_next_item(kt_model, state, target, path_length - step - 1, rollouts, rng)
        path.append(item)
        state = kt_model.advance(state, Interaction(item, 1))
    return path


# -- episode loop, training, evaluation ---------------------------------------


def run_episode(env, prereq_graph: PrereqGraph, kt_model: DKTModel, policy,
                config: AgentConfig, rng_env: np.random.Generator,
                rng_agent: np.random.Generator, use_cn: bool = True) -> Trajectory:
    """One full session: reset, N recommend/answer steps, final exam.

    The mastery state is traced over the episode's visible history plus the
    observed interactions so far.  The focus starts at the last historical
    item (or the lowest-id source that reaches the target when there is no
    history) and then follows the recommended items.
    """
    target, e_s, e_sup, history = env.reset(rng_env)
    kt_state = kt_model.fold(history)
    focus = history[-1].item if history else fallback_focus(prereq_graph, target)
    num_items = prereq_graph.num_items
    all_items = tuple(range(num_items))
    states, cand_list, actions, scores, focuses = [], [], [], [], []
    for i in range(config.path_length):
        knowledge = kt_model.knowledge_from_state(kt_state)
        state = build_state(knowledge, target, num_items)
        if use_cn:
            cands = tuple(sorted(candidates_with_fallback(prereq_graph, focus, target, config.k_hops)))
        else:
            cands = all_items
        ctx = StepContext(state=state, knowledge=knowledge, candidates=cands,
                          target=target, step_index=i, path_length=config.path_length,
                          kt_state=kt_state)
        action = policy.choose(ctx, rng_agent)
        if action not in cands:
            raise RuntimeError(f"policy chose {action} outside its candidate set")
        score = env.step(action, rng_env)
        kt_state = kt_model.advance(kt_state, Interaction(action, score))
        states.append(state)
        cand_list.append(cands)
        actions.append(action)
        scores.append(score)
        focuses.append(focus)
        focus = action
    e_e, e_p = env.end_session()
    rewards = np.zeros(config.path_length)
    rewards[-1] = e_p
    returns = compute_returns(rewards, config.gamma)
    return Trajectory(states=states, candidates=cand_list, actions=actions,
                      scores=scores, rewards=rewards, returns=returns,
                      target=tuple(target), e_s=e_s, e_e=e_e, e_p=e_p,
                      focuses=focuses, history=tuple(history))


def train_agent(net: PolicyValueNet, env, prereq_graph: PrereqGraph, kt_model: DKTModel,
                config: AgentConfig, seed: int, epochs: int,
                use_cn: bool = True) -> list[dict]:
    """Batched on-policy training; one optimizer update per epoch of
    `batch_episodes` fresh episodes.  Returns the learning curve with the
    mean session effectiveness and loss components per epoch."""
    rng_env = named_rng(seed, "agent.train.env")
    rng_act = named_rng(seed, "agent.train.act")
    opt = nn.OptimizerState("adam", lr=config.lr)
    policy = NetPolicy(net, "sample")
    curve: list[dict] = []
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        trajectories = [
            run_episode(env, prereq_graph, kt_model, policy, config, rng_env, rng_act, use_cn)
            for _ in range(config.batch_episodes)
        ]
        total = nn.Tensor(0.0)
        parts_sum = {"value_loss": 0.0, "policy_loss": 0.0, "enhance_loss": 0.0, "entropy": 0.0}
        for traj in trajectories:
            loss, parts = trajectory_loss(net, traj, config.alpha, config.beta, config.entropy_weight)
            total = total + loss
            for key in parts_sum:
                parts_sum[key] += parts[key]
        total = total * (1.0 / len(trajectories))
        total.backward()
        nn.clip_gradients(net.store, config.clip_norm)
        nn.optimizer_step(net.store, opt)
        entry = {
            "epoch": epoch,
            "mean_return": float(np.mean([t.e_p for t in trajectories])),
            "loss": total.item(),
        }
        for key, value in parts_sum.items():
            entry[key] = value / len(trajectories)
        entry["wall_time_s"] = time.perf_counter() - started
        curve.append(entry)
    return curve


def evaluate(env, prereq_graph: PrereqGraph, kt_model: DKTModel, policy,
             config: AgentConfig, seed: int, episodes: int, use_cn: bool = True,
             episode_indices: Sequence[int] | None = None) -> list[dict]:
    """Per-episode evaluation rows under a common seed protocol: episode i
    always sees the same environment draw regardless of the method."""
    indices = range(episodes) if episode_indices is None else episode_indices
    rows = []
    for i in indices:
        rng_env = named_rng(seed, f"eval.env.{i}")
        rng_agent = named_rng(seed, f"eval.agent.{i}")
        traj = run_episode(env, prereq_graph, kt_model, policy, config, rng_env, rng_agent, use_cn)
        rows.append({
            "episode": int(i),
            "e_p": traj.e_p,
            "e_s": traj.e_s,
            "e_e": traj.e_e,
            "target": list(traj.target),
        })
    return rows


def bootstrap_ci(values: Sequence[float], rng: np.random.Generator,
                 n_boot: int = 2000, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap confidence interval for the mean."""
    arr = np.asarray(values, dtype=np.float64)
    means = np.empty(n_boot)
    n = len(arr)
    for b in range(n_boot):
        means[b] = arr[rng.integers(0, n, size=n)].mean()
    lo = (1.0 - level) / 2.0
    return float(np.quantile(means, lo)), float(np.quantile(means, 1.0 - lo))


def summarize_eval(rows: Sequence[dict], seed: int) -> dict:
    values = [row["e_p"] for row in rows]
    arr = np.asarray(values)
    lo, hi = bootstrap_ci(values, named_rng(seed, "eval.bootstrap"))
    stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return {
        "episodes": len(values),
        "mean_ep": float(arr.mean()),
        "stderr": stderr,
        "ci95_low": lo,
        "ci95_high": hi,
    }
