"""Recurrent knowledge tracing: (item, score) interactions are embedded,
run through an LSTM, and projected to a per-item sigmoid mastery vector.
Training minimizes next-answer binary cross entropy with early stopping.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import nn
from .seeding import named_rng


class Interaction(NamedTuple):
    """One learning event: which item was practiced and the binary outcome."""

    item: int
    score: int


def encode_interaction(rec: Interaction, num_items: int) -> int:
    """Flatten (item, score) to a single index: item + score * num_items."""
    item, score = int(rec[0]), int(rec[1])
    if not (0 <= item < num_items):
        raise ValueError(f"item {item} out of range [0, {num_items})")
    if score not in (0, 1):
        raise ValueError(f"score must be 0 or 1, got {score}")
    return item + score * num_items


@dataclass
class DktConfig:
    num_items: int
    embed_dim: int = 15
    hidden_dim: int = 20
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 3
    dropout_embed: float = 0.2
    dropout_output: float = 0.5
    clip_norm: float = 5.0


class KtState(NamedTuple):
    """Hidden/cell pair of the tracing LSTM for one learner."""

    h: np.ndarray
    c: np.ndarray


class DKTModel:
    """Embedding (2M x d) -> LSTM (H) -> sigmoid dense (M) tracing model."""

    def __init__(self, config: DktConfig, rng: np.random.Generator | None = None,
                 store: nn.ParamStore | None = None):
        self.config = config
        m, d, h = config.num_items, config.embed_dim, config.hidden_dim
        if store is not None:
            self.store = store
        else:
            self.store = nn.ParamStore()
            self.store.add("emb", nn.xavier_init(2 * m, d, rng))
            nn.LstmParams.create(self.store, "lstm.", d, h, rng)
            self.store.add("w_out", nn.xavier_init(h, m, rng))
            self.store.add("b_out", np.zeros(m))
        self.lstm = nn.LstmParams(**{name: self.store[f"lstm.{name}"] for name in (
            "w_xi", "w_hi", "b_i", "w_xf", "w_hf", "b_f",
            "w_xo", "w_ho", "b_o", "w_xc", "w_hc", "b_c")})
        self.forward_steps = 0  # LSTM advances, for search-budget accounting

    @property
    def num_items(self) -> int:
        return self.config.num_items

    @classmethod
    def from_checkpoint(cls, path) -> "DKTModel":
        store, header = nn.ParamStore.load(path)
        two_m, d = store["emb"].data.shape
        h = store["w_out"].data.shape[0]
        return cls(DktConfig(num_items=two_m // 2, embed_dim=d, hidden_dim=h), store=store)

    def save(self, path, header: dict[str, str] | None = None) -> None:
        meta = {"kind": "dkt", "num_items": str(self.num_items)}
        meta.update(header or {})
        self.store.save(path, meta)

    # -- inference (fast numpy path; equality with the tape path is tested) --

    def initial_state(self) -> KtState:
        h = self.config.hidden_dim
        return KtState(np.zeros(h), np.zeros(h))

    def advance(self, state: KtState, rec: Interaction) -> KtState:
        """Fold one interaction into the LSTM state."""
        x = self.store["emb"].data[encode_interaction(rec, self.num_items)]
        h_prev, c_prev = state
        p = self.lstm
        i = nn.sigmoid_np(x @ p.w_xi.data + h_prev @ p.w_hi.data + p.b_i.data)
        f = nn.sigmoid_np(x @ p.w_xf.data + h_prev @ p.w_hf.data + p.b_f.data)
        o = nn.sigmoid_np(x @ p.w_xo.data + h_prev @ p.w_ho.data + p.b_o.data)
        g = np.tanh(x @ p.w_xc.data + h_prev @ p.w_hc.data + p.b_c.data)
        c_t = f * c_prev + i * g
        h_t = o * np.tanh(c_t)
        self.forward_steps += 1
        return KtState(h_t, c_t)

    def fold(self, records: Sequence[Interaction]) -> KtState:
        state = self.initial_state()
        for rec in records:
            state = self.advance(state, rec)
        return state

    def knowledge_from_state(self, state: KtState) -> np.ndarray:
        """Mastery vector in (0,1)^M for the given LSTM state."""
        return nn.sigmoid_np(state.h @ self.store["w_out"].data + self.store["b_out"].data)

    def cold_knowledge(self) -> np.ndarray:
        """Mastery before any interaction: the zero state through the output layer."""
        return self.knowledge_from_state(self.initial_state())

    def trace(self, records: Sequence[Interaction]) -> list[np.ndarray]:
        """Mastery vector after each prefix of the interaction sequence."""
        if not records:
            raise ValueError("trace requires at least one interaction")
        out = []
        state = self.initial_state()
        for rec in records:
            state = self.advance(state, rec)
            out.append(self.knowledge_from_state(state))
        return out

    def predict_next_correct(self, history: Sequence[Interaction], item: int) -> float:
        """Probability the next answer on `item` is correct given the history."""
        if not (0 <= item < self.num_items):
            raise ValueError(f"item {item} out of range")
        state = self.fold(history)
        return float(self.knowledge_from_state(state)[item])

    # -- training graph ------------------------------------------------------

    def unroll_loss(self, sessions: Sequence[Sequence[Interaction]], mode: str = "train",
                    rng: np.random.Generator | None = None) -> tuple[nn.Tensor, int]:
        """Next-answer BCE over a batch of sessions, built on the gradient tape.

        For each session and step t >= 1 the mastery after records 0..t-1 is
        scored against record t.  Padded positions are masked out of the loss.
        Returns (mean loss tensor, number of predictions).
        """
        m = self.num_items
        batch = [s for s in sessions if len(s) >= 2]
        if not batch:
            raise ValueError("no session with >= 2 records in batch")
        b, length = len(batch), max(len(s) for s in batch)
        enc = np.zeros((b, length), dtype=np.intp)
        items = np.zeros((b, length), dtype=np.intp)
        scores = np.zeros((b, length))
        valid = np.zeros((b, length))
        for row, session in enumerate(batch):
            for t, rec in enumerate(session):
                enc[row, t] = encode_interaction(rec, m)
                items[row, t] = rec.item
                scores[row, t] = rec.score
                valid[row, t] = 1.0
        n_pred = int(valid[:, 1:].sum())
        h = nn.Tensor(np.zeros((b, self.config.hidden_dim)))
        c = nn.Tensor(np.zeros((b, self.config.hidden_dim)))
        cfg = self.config
        total = nn.Tensor(0.0)
        for t in range(length - 1):
            x = nn.embedding_lookup(self.store["emb"], enc[:, t])
            x = nn.dropout(x, cfg.dropout_embed, mode, rng)
            h, c = nn.lstm_cell(x, h, c, self.lstm)
            h_out = nn.dropout(h, cfg.dropout_output, mode, rng)
            s_t = nn.dense(h_out, self.store["w_out"], self.store["b_out"], "sigmoid")
            preds = nn.select_columns(s_t, items[:, t + 1])
            losses = nn.bce_loss(preds, scores[:, t + 1]) * nn.Tensor(valid[:, t + 1])
            total = total + losses.sum()
        return total * (1.0 / n_pred), n_pred


def next_step_pairs(model: DKTModel, sessions: Sequence[Sequence[Interaction]]) -> tuple[np.ndarray, np.ndarray]:
    """Pooled (prediction, label) pairs for next-answer evaluation."""
    preds: list[float] = []
    labels: list[int] = []
    for session in sessions:
        state = model.initial_state()
        for t, rec in enumerate(session):
            if t >= 1:
                preds.append(float(model.knowledge_from_state(state)[rec.item]))
                labels.append(rec.score)
            state = model.advance(state, rec)
    return np.asarray(preds), np.asarray(labels, dtype=np.intp)


def auc_score(preds: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC with tie-averaged ranks."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(preds, kind="mergesort")
    ranks = np.empty(len(preds))
    sorted_preds = preds[order]
    i = 0
    while i < len(preds):
        j = i
        while j + 1 < len(preds) and sorted_preds[j + 1] == sorted_preds[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def validation_metrics(model: DKTModel, sessions) -> tuple[float, float]:
    """(mean BCE, AUC) of next-answer predictions on held-out sessions."""
    preds, labels = next_step_pairs(model, sessions)
    p = np.clip(preds, nn.BCE_EPS, 1.0 - nn.BCE_EPS)
    bce = float(-(labels * np.log(p) + (1 - labels) * np.log1p(-p)).mean())
    return bce, auc_score(preds, labels)


def train_dkt(train_sessions, val_sessions, config: DktConfig, seed: int) -> tuple[DKTModel, list[dict]]:
    """Train a tracing model with minibatch Adam, dropout, gradient clipping,
    and early stopping on validation loss (best parameters restored)."""
    if not train_sessions:
        raise ValueError("empty training dataset")
    trainable = [list(s) for s in train_sessions if len(s) >= 2]
    if not trainable:
        raise ValueError("no training session has >= 2 records")
    model = DKTModel(config, named_rng(seed, "dkt.init"))
    shuffle_rng = named_rng(seed, "dkt.shuffle")
    drop_rng = named_rng(seed, "dkt.dropout")
    opt = nn.OptimizerState("adam", lr=config.lr)
    best_loss = np.inf
    best_state = model.store.state_dict()
    bad_epochs = 0
    history: list[dict] = []
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(trainable))
        epoch_loss = 0.0
        epoch_preds = 0
        for start in range(0, len(order), config.batch_size):
            batch = [trainable[i] for i in order[start:start + config.batch_size]]
            loss, n_pred = model.unroll_loss(batch, "train", drop_rng)
            loss.backward()
            nn.clip_gradients(model.store, config.clip_norm)
            nn.optimizer_step(model.store, opt)
            epoch_loss += loss.item() * n_pred
            epoch_preds += n_pred
        val_loss, val_auc = validation_metrics(model, val_sessions)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / max(epoch_preds, 1),
            "val_loss": val_loss,
            "val_auc": val_auc,
        })
        if val_loss < best_loss - 1e-9:
            best_loss = val_loss
            best_state = model.store.state_dict()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    model.store.load_state_dict(best_state)
    return model, history
