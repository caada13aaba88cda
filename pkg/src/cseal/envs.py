"""Learner simulators used as training/evaluation environments.

KssEnv is rule-based: hidden per-item mastery grows under a prerequisite
gate and answers are scored with the 3-parameter logistic IRT model.
KesEnv is data-driven: a trained tracing model plays the learner and its
predicted correctness doubles as mastery.  Both expose the same session
protocol: reset -> N x step -> end_session, with the session's effectiveness
(exam promotion normalized by headroom) as the terminal reward.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import KesEpisodeSpec, SessionLog
from .dkt import DKTModel, Interaction, KtState
from .graph import PrereqGraph, load_graph, longest_path_depths, topological_order
from .nn import sigmoid_np

IRT_SCALE = 1.7  # classical scaling constant of the logistic IRT model

# 10-item, 12-edge default prerequisite graph for the rule-based simulator
DEFAULT_KSS_EDGES: tuple[tuple[int, int], ...] = (
    (0, 1), (0, 2), (1, 3), (2, 3), (1, 4), (3, 5),
    (4, 5), (2, 6), (6, 7), (5, 8), (7, 8), (8, 9),
)


def default_kss_graph() -> PrereqGraph:
    return load_graph(DEFAULT_KSS_EDGES, 10)


@dataclass(frozen=True)
class IrtItemParams:
    """3PL item parameters: discrimination a, difficulty b, pseudo-guessing c."""

    a: float = 1.0
    b: float = 0.0
    c: float = 0.1

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("discrimination a must be positive")
        if not (0.0 <= self.c < 1.0):
            raise ValueError("pseudo-guessing c must be in [0, 1)")


def irt_prob(theta: float, params: IrtItemParams) -> float:
    """P(correct) = c + (1-c) / (1 + exp(-1.7 a (theta - b)))."""
    z = np.clip(IRT_SCALE * params.a * (theta - params.b), -500.0, 500.0)
    return params.c + (1.0 - params.c) / (1.0 + float(np.exp(-z)))


def ep_score(e_s: float, e_e: float, e_sup: float) -> float:
    """Session effectiveness: exam promotion normalized by remaining headroom."""
    if e_sup <= e_s:
        raise ValueError("session already at full score; should have been skipped")
    return (e_e - e_s) / (e_sup - e_s)


def ability_from_mastery(mastery: float) -> float:
    """Map mastery in [0,1] onto the conventional [-3, 3] ability scale."""
    return 6.0 * mastery - 3.0


def depth_based_item_params(graph: PrereqGraph, a: float = 1.0, c: float = 0.1) -> list[IrtItemParams]:
    """Difficulty grows linearly with longest-path depth: deeper items are harder."""
    depths = longest_path_depths(graph)
    max_depth = max(depths)
    params = []
    for d in depths:
        b = -3.0 + 6.0 * d / max_depth if max_depth > 0 else 0.0
        params.append(IrtItemParams(a=a, b=b, c=c))
    return params


def sample_initial_mastery(graph: PrereqGraph, rng: np.random.Generator,
                           upper: float = 0.6) -> np.ndarray:
    """Novice mastery consistent with the structure: an item never exceeds
    its weakest prerequisite."""
    raw = rng.random(graph.num_items) * upper
    theta = np.zeros(graph.num_items)
    for v in topological_order(graph):
        value = raw[v]
        for u in graph.pred[v]:
            value = min(value, theta[u])
        theta[v] = value
    return theta


@dataclass
class KssLearner:
    """Simulator-side ground truth, hidden from the recommending agent."""

    mastery: np.ndarray


class SessionStateError(RuntimeError):
    """step/end_session called outside the reset -> step* -> end protocol."""


class KssEnv:
    """Rule-based learner environment on a prerequisite DAG.

    Practicing an item raises its mastery by g_max * gate * (1 - mastery),
    where the gate opens linearly with the weakest prerequisite's mastery
    and saturates at tau.  Exams are deterministic expected scores; per-step
    answers are sampled.
    """

    def __init__(self, prereq_graph: PrereqGraph | None = None,
                 item_params: Sequence[IrtItemParams] | None = None,
                 g_max: float = 0.3, tau: float = 0.6,
                 skip_threshold: float = 0.9,
                 target_sizes: Sequence[int] = (1, 2, 3),
                 init_upper: float = 0.6):
        self.graph = prereq_graph if prereq_graph is not None else default_kss_graph()
        topological_order(self.graph)  # DAG required
        self.item_params = list(item_params) if item_params is not None else depth_based_item_params(self.graph)
        if len(self.item_params) != self.graph.num_items:
            raise ValueError("one IrtItemParams per item required")
        self.g_max = g_max
        self.tau = tau
        self.skip_threshold = skip_threshold
        self.target_sizes = tuple(target_sizes)
        self.init_upper = init_upper
        self.learner: KssLearner | None = None
        self.target: tuple[int, ...] = ()
        self.e_s = 0.0
        self.e_sup = 0.0
        self.steps = 0
        self.done = True

    @property
    def num_items(self) -> int:
        return self.graph.num_items

    def exam(self, learner: KssLearner, targets: Iterable[int]) -> float:
        """Deterministic exam: summed correctness probabilities over the targets."""
        return float(sum(
            irt_prob(ability_from_mastery(learner.mastery[t]), self.item_params[t])
            for t in targets))

    def reset(self, rng: np.random.Generator, target: Sequence[int] | None = None,
              ) -> tuple[tuple[int, ...], float, float, tuple[Interaction, ...]]:
        """Draw a fresh learner and target; redraw while the learner already
        masters the target (begin-exam ratio >= skip_threshold)."""
        for _ in range(10000):
            learner = KssLearner(sample_initial_mastery(self.graph, rng, self.init_upper))
            if target is None:
                size = int(rng.choice(self.target_sizes))
                tgt = tuple(sorted(int(t) for t in rng.choice(self.num_items, size=size, replace=False)))
            else:
                tgt = tuple(sorted(int(t) for t in target))
                if not tgt:
                    raise ValueError("target must be non-empty")
            e_sup = float(len(tgt))
            e_s = self.exam(learner, tgt)
            if e_s / e_sup < self.skip_threshold:
                self.learner, self.target = learner, tgt
                self.e_s, self.e_sup = e_s, e_sup
                self.steps, self.done = 0, False
                return tgt, e_s, e_sup, ()
        raise RuntimeError("could not draw a non-mastered learner/target pair")

    def step(self, item: int, rng: np.random.Generator) -> int:
        """Answer `item` (sampled via 3PL) and apply the gated mastery gain."""
        if self.done or self.learner is None:
            raise SessionStateError("step after session end")
        if not (0 <= item < self.num_items):
            raise ValueError(f"item {item} out of range")
        score = self.practice_outcome(self.learner, item, rng)
        self.steps += 1
        return score

    def end_session(self) -> tuple[float, float]:
        """Final exam and normalized promotion; the session is closed afterwards."""
        if self.done or self.learner is None:
            raise SessionStateError("end_session called twice or before reset")
        e_e = self.exam(self.learner, self.target)
        self.done = True
        return e_e, ep_score(self.e_s, e_e, self.e_sup)

    def practice_outcome(self, learner: KssLearner, item: int, rng: np.random.Generator) -> int:
        """Score-and-learn for one practice event on the given learner."""
        p = irt_prob(ability_from_mastery(learner.mastery[item]), self.item_params[item])
        score = 1 if rng.random() < p else 0
        prereqs = self.graph.pred[item]
        gate = 1.0 if not prereqs else min(1.0, min(learner.mastery[u] for u in prereqs) / self.tau)
        learner.mastery[item] += self.g_max * gate * (1.0 - learner.mastery[item])
        return score


def generate_synthetic_logs(env: KssEnv, n_sessions: int, max_len: int,
                            rng: np.random.Generator) -> list[SessionLog]:
    """Practice logs from fresh simulated learners taking uniformly random
    items, with session lengths uniform in [5, max_len]."""
    if n_sessions < 1:
        raise ValueError("need at least one session")
    if max_len < 5:
        raise ValueError("max_len must be >= 5")
    sessions = []
    for s in range(n_sessions):
        learner = KssLearner(sample_initial_mastery(env.graph, rng, env.init_upper))
        length = int(rng.integers(5, max_len + 1))
        records = []
        for _ in range(length):
            item = int(rng.integers(env.num_items))
            records.append(Interaction(item, env.practice_outcome(learner, item, rng)))
        sessions.append(SessionLog(session_id=f"s{s:05d}", records=records))
    return sessions


@dataclass
class KesLearner:
    """Tracing-model-simulated learner: history plus folded LSTM state."""

    history: list[Interaction]
    state: KtState


def kes_reset(env_model: DKTModel, init_records: Sequence[Interaction],
              target: Sequence[int], skip_threshold: float = 0.9,
              ) -> tuple[KesLearner, float, float, bool]:
    """Seed a learner from its initial records.  Returns (learner, begin-exam
    score, full score, skip) where skip flags an already-mastered target."""
    records = tuple(Interaction(int(i), int(s)) for i, s in init_records)
    if not records:
        raise ValueError("KES requires a non-empty initialization record")
    tgt = tuple(sorted(int(t) for t in target))
    if not tgt:
        raise ValueError("target must be non-empty")
    state = env_model.fold(records)
    knowledge = env_model.knowledge_from_state(state)
    e_s = float(knowledge[list(tgt)].sum())
    e_sup = float(len(tgt))
    return KesLearner(list(records), state), e_s, e_sup, e_s / e_sup >= skip_threshold


def kes_step(env_model: DKTModel, learner: KesLearner, item: int,
             rng: np.random.Generator) -> int:
    """Sample an answer from the model's predicted correctness, then fold the
    new interaction into the learner."""
    p = float(env_model.knowledge_from_state(learner.state)[item])
    score = 1 if rng.random() < p else 0
    rec = Interaction(int(item), score)
    learner.history.append(rec)
    learner.state = env_model.advance(learner.state, rec)
    return score


class KesEnv:
    """Data-driven learner environment over a pool of episode specs."""

    def __init__(self, env_model: DKTModel, episode_specs: Sequence[KesEpisodeSpec],
                 skip_threshold: float = 0.9):
        if not episode_specs:
            raise ValueError("KES needs at least one episode spec")
        self.model = env_model
        self.specs = list(episode_specs)
        self.skip_threshold = skip_threshold
        self.learner: KesLearner | None = None
        self.target: tuple[int, ...] = ()
        self.e_s = 0.0
        self.e_sup = 0.0
        self.steps = 0
        self.done = True

    @property
    def num_items(self) -> int:
        return self.model.num_items

    def reset(self, rng: np.random.Generator,
              ) -> tuple[tuple[int, ...], float, float, tuple[Interaction, ...]]:
        for _ in range(max(100, 10 * len(self.specs))):
            spec = self.specs[int(rng.integers(len(self.specs)))]
            learner, e_s, e_sup, skip = kes_reset(
                self.model, spec.init_records, spec.target, self.skip_threshold)
            if not skip:
                self.learner, self.target = learner, tuple(spec.target)
                self.e_s, self.e_sup = e_s, e_sup
                self.steps, self.done = 0, False
                return self.target, e_s, e_sup, spec.init_records
        raise RuntimeError("every episode spec starts already mastered")

    def step(self, item: int, rng: np.random.Generator) -> int:
        if self.done or self.learner is None:
            raise SessionStateError("step after session end")
        if not (0 <= item < self.num_items):
            raise ValueError(f"item {item} out of range")
        score = kes_step(self.model, self.learner, item, rng)
        self.steps += 1
        return score

    def end_session(self) -> tuple[float, float]:
        if self.done or self.learner is None:
            raise SessionStateError("end_session called twice or before reset")
        knowledge = self.model.knowledge_from_state(self.learner.state)
        e_e = float(knowledge[list(self.target)].sum())
        self.done = True
        return e_e, ep_score(self.e_s, e_e, self.e_sup)
