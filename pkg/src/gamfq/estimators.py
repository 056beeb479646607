"""Neighbourhood mean-action estimators.

* :func:`global_mean` averages the one-hot actions of observed neighbours.
* :func:`dirichlet_mean` averages ``U`` draws from a Dirichlet posterior over
  action frequencies (the POMFQ(FOR) estimator).
* :class:`GraphAttentionNet` with :func:`edge_select` and
  :func:`masked_mean` selects influential neighbours with graph attention and
  hard Gumbel-Softmax, then averages only the selected actions (GAMFQ).

The numpy functions are used at acting time; :func:`gamfq_mean_action`
builds the same pipeline on a tape so a TD loss can train it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gamfq.nncore import autodiff as ad
from gamfq.nncore.autodiff import Tape, Tensor
from gamfq.nncore.layers import GUMBEL_TEMPERATURE, fc_forward, gat_layer, gumbel_softmax, lstm_cell, mlp
from gamfq.nncore.params import BoundParams, ParamStore

SELECT = 1  # Gumbel class index meaning "neighbour influences the centre agent"
PREFIX = "graph_attention"


class EstimatorError(ValueError):
    pass


def uniform(n_actions: int) -> np.ndarray:
    return np.full(n_actions, 1.0 / n_actions)


def _as_actions(actions, n_actions: int | None) -> np.ndarray:
    if isinstance(actions, np.ndarray):
        arr = actions.astype(np.float64, copy=False)
        if arr.size == 0:
            width = n_actions if n_actions is not None else (arr.shape[1] if arr.ndim == 2 else 0)
            if not width:
                raise EstimatorError("n_actions is required for an empty neighbourhood")
            return np.zeros((0, width))
        if arr.ndim != 2:
            raise EstimatorError("actions must be a [k, L] array")
    else:
        rows = [np.asarray(a, dtype=np.float64) for a in actions]
        if not rows:
            if n_actions is None:
                raise EstimatorError("n_actions is required for an empty neighbourhood")
            return np.zeros((0, n_actions))
        if len({r.shape for r in rows}) != 1 or rows[0].ndim != 1:
            raise EstimatorError("inconsistent action vector lengths")
        arr = np.stack(rows)
    if n_actions is not None and arr.shape[1] != n_actions:
        raise EstimatorError(f"action vectors have length {arr.shape[1]}, expected {n_actions}")
    return arr


def _average(mask: np.ndarray, acts: np.ndarray) -> np.ndarray:
    total = mask.sum()
    if acts.shape[0] == 0 or total == 0:
        return uniform(acts.shape[1])
    return (acts * mask[:, None]).sum(axis=0) / total


def global_mean(actions, n_actions: int | None = None) -> np.ndarray:
    """Component-wise average of one-hot actions; uniform when there are none."""
    acts = _as_actions(actions, n_actions)
    return _average(np.ones(acts.shape[0]), acts)


def masked_mean(mask, actions, n_actions: int | None = None) -> np.ndarray:
    """Average of the actions whose mask entry is 1; uniform if nothing is selected."""
    acts = _as_actions(actions, n_actions)
    mask = np.asarray(mask, dtype=np.float64).reshape(-1)
    if mask.shape[0] != acts.shape[0]:
        raise EstimatorError(f"mask length {mask.shape[0]} != {acts.shape[0]} neighbours")
    return _average(mask, acts)


def one_hot(indices, n_actions: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    out = np.zeros((idx.size, n_actions))
    out[np.arange(idx.size), idx] = 1.0
    return out


# ------------------------------------------------------------------ Dirichlet

@dataclass
class DirichletState:
    counts: np.ndarray
    eta: float = 1.0
    samples: int = 100

    @classmethod
    def from_actions(cls, action_ids, n_actions: int, eta: float = 1.0, samples: int = 100) -> "DirichletState":
        counts = np.bincount(np.asarray(action_ids, dtype=np.int64), minlength=n_actions).astype(np.float64)
        return cls(counts, eta, samples)


def dirichlet_mean(state: DirichletState, rng: np.random.Generator) -> np.ndarray:
    return dirichlet_mean_batch(state.counts[None], rng, state.eta, state.samples)[0]


def dirichlet_mean_batch(counts: np.ndarray, rng: np.random.Generator, eta: float = 1.0,
                         samples: int = 100) -> np.ndarray:
    """Average of ``samples`` normalised-Gamma Dirichlet draws per row of ``counts``."""
    counts = np.asarray(counts, dtype=np.float64)
    if samples < 1:
        raise EstimatorError("need at least one Dirichlet sample")
    alpha = eta + counts
    if (alpha <= 0).any():
        raise EstimatorError("Dirichlet concentration must be positive")
    g = rng.standard_gamma(np.broadcast_to(alpha[:, None, :], (alpha.shape[0], samples, alpha.shape[1])))
    draws = g / g.sum(axis=-1, keepdims=True)
    return draws.mean(axis=1)


# ------------------------------------------------------------ graph attention

class GraphAttentionNet:
    """Observation encoder + LSTM + message FC + GAT + edge MLP, all in one store."""

    def __init__(self, obs_dim: int, rng: np.random.Generator, hidden: int = 64,
                 store: ParamStore | None = None):
        self.obs_dim = obs_dim
        self.hidden = hidden
        if store is None:
            store = ParamStore()
            store.init_fc(f"{PREFIX}/encoder", obs_dim, hidden, rng)
            store.init_lstm(f"{PREFIX}/lstm", hidden, hidden, rng)
            store.init_fc(f"{PREFIX}/message", hidden, hidden, rng)
            store.init_gat(f"{PREFIX}/gat", hidden, rng)
            store.init_fc(f"{PREFIX}/edge1", 2 * hidden, hidden, rng)
            store.init_fc(f"{PREFIX}/edge2", hidden, 2, rng)
        self.store = store

    def initial_state(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((n, self.hidden)), np.zeros((n, self.hidden))


def encode_obs(net: GraphAttentionNet, obs, state, p: BoundParams | None = None):
    """One recurrent step: ``h, c <- LSTM(FC(o), h, c)``; message ``m = FC(h)``.

    Returns ``(message, (h, c))`` as tensors when ``p`` is taped, arrays otherwise.
    """
    untaped = p is None
    if untaped:
        p = net.store.bind()
    obs_t = obs if isinstance(obs, Tensor) else ad.constant(obs)
    if obs_t.shape[-1] != net.obs_dim:
        raise EstimatorError(f"observation width {obs_t.shape[-1]} != {net.obs_dim}")
    h, c = (s if isinstance(s, Tensor) else ad.constant(s) for s in state)
    x = fc_forward(p, f"{PREFIX}/encoder", obs_t, activation="relu")
    h, c = lstm_cell(p, f"{PREFIX}/lstm", x, h, c)
    m = fc_forward(p, f"{PREFIX}/message", h)
    if untaped:
        return m.data, (h.data, c.data)
    return m, (h, c)


def star_adjacency(offsets: np.ndarray, radius: float, size: int | None = None) -> np.ndarray:
    """Observability graph over the centre (node 0) and its neighbours.

    ``offsets`` are neighbour centre deltas relative to the centre agent. Node
    pairs within ``radius`` of each other are connected; the result is padded
    to ``size`` nodes with self-loops only.
    """
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    k = offsets.shape[0]
    size = k + 1 if size is None else size
    pos = np.vstack([np.zeros((1, 2)), offsets])
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
    adj = np.eye(size, dtype=bool)
    adj[: k + 1, : k + 1] = d2 <= radius * radius + 1e-9
    return adj


def edge_logits(p: BoundParams, messages: Tensor, adjacency: np.ndarray) -> Tensor:
    """``[B, n-1, 2]`` edge logits for each neighbour (nodes 1..n-1) of centre node 0."""
    B, n, D = messages.shape
    e = gat_layer(p, f"{PREFIX}/gat", messages, adjacency)
    centre = ad.tile(ad.take(e, 1, 0, 1), 1, n - 1)
    pairs = ad.concat([ad.take(e, 1, 1, n), centre], axis=-1)  # E_ij = (e_i || e_j)
    flat = ad.reshape(pairs, (B * (n - 1), 2 * D))
    logits = mlp(p, [f"{PREFIX}/edge1", f"{PREFIX}/edge2"], flat)
    return ad.reshape(logits, (B, n - 1, 2))


def edge_select(net: GraphAttentionNet, messages: np.ndarray, adjacency: np.ndarray,
                rng: np.random.Generator | None = None, hard: bool = True,
                noise: np.ndarray | None = None) -> np.ndarray:
    """Selection mask over the neighbours of one centre agent (row 0 of ``messages``)."""
    messages = np.asarray(messages, dtype=np.float64)
    k = messages.shape[0] - 1
    if k <= 0:
        return np.zeros(0)
    logits = edge_logits(net.store.bind(), ad.constant(messages[None]), np.asarray(adjacency)[None])
    y = gumbel_softmax(logits, GUMBEL_TEMPERATURE, hard, rng=rng, noise=None if noise is None else noise[None])
    return y.data[0, :, SELECT]


def edge_select_batch(net: GraphAttentionNet, messages: np.ndarray, adjacency: np.ndarray,
                      rng: np.random.Generator, hard: bool = True) -> np.ndarray:
    """Masks for ``B`` padded star graphs at once: returns ``[B, n-1]``."""
    if messages.shape[1] <= 1:
        return np.zeros((messages.shape[0], 0))
    logits = edge_logits(net.store.bind(), ad.constant(messages), adjacency)
    return gumbel_softmax(logits, GUMBEL_TEMPERATURE, hard, rng=rng).data[..., SELECT]


def masked_mean_tensor(mask: Tensor, valid: np.ndarray, actions: np.ndarray) -> Tensor:
    """Differentiable masked mean over ``[B, k]`` masks and ``[B, k, L]`` one-hot actions."""
    B, k, L = actions.shape
    gv = ad.mul(mask, ad.constant(valid.astype(np.float64)))
    num = ad.reshape(ad.matmul(ad.reshape(gv, (B, 1, k)), ad.constant(actions)), (B, L))
    total = ad.sum_axis(gv, 1)
    has = total.data > 0
    safe = ad.add(total, ad.constant(np.where(has, 0.0, 1.0)))
    return ad.select_rows(has, ad.div_rows(num, safe), np.full((B, L), 1.0 / L))


def gamfq_mean_action(p: BoundParams, net: GraphAttentionNet, node_obs: np.ndarray, node_h: np.ndarray,
                      node_c: np.ndarray, adjacency: np.ndarray, valid: np.ndarray, actions: np.ndarray,
                      noise: np.ndarray, hard: bool = True, node_index: np.ndarray | None = None) -> Tensor:
    """Full GAMFQ estimator on a batch of padded star graphs.

    Shapes: ``node_obs [B, n, F]``, ``node_h/node_c [B, n, H]``, ``adjacency
    [B, n, n]``, ``valid [B, n-1]`` (real neighbours), ``actions [B, n-1, L]``,
    ``noise [B, n-1, 2]``. Node 0 of each graph is the centre agent.

    With ``node_index [B, n]`` the node arrays are instead ``[U, F]`` / ``[U, H]``
    rows shared between graphs, ``-1`` marking padding nodes; each row is
    encoded once.
    """
    B, n = adjacency.shape[:2]
    H = net.hidden
    if node_index is None:
        F = node_obs.shape[-1]
        m, _ = encode_obs(net, ad.constant(node_obs.reshape(B * n, F)),
                          (node_h.reshape(B * n, H), node_c.reshape(B * n, H)), p)
    else:
        u, _ = encode_obs(net, ad.constant(node_obs), (node_h, node_c), p)
        m = ad.gather_rows(u, node_index.reshape(-1))
    m = ad.reshape(m, (B, n, H))
    y = gumbel_softmax(edge_logits(p, m, adjacency), GUMBEL_TEMPERATURE, hard, noise=noise)
    g = ad.reshape(ad.take(y, -1, SELECT, SELECT + 1), (B, n - 1))
    return masked_mean_tensor(g, valid, actions)
