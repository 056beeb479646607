"""Layer primitives built from autodiff ops.

Each layer reads its weights from a :class:`BoundParams` under a name
prefix, so the same code serves taped training passes and untaped acting.
"""

from __future__ import annotations

import numpy as np

from gamfq.nncore import autodiff as ad
from gamfq.nncore.autodiff import Tensor
from gamfq.nncore.params import BoundParams

LEAKY_SLOPE = 0.2
GUMBEL_TEMPERATURE = 0.5


def fc_forward(p: BoundParams, name: str, x: Tensor, activation: str | None = None) -> Tensor:
    W, b = p[f"{name}/W"], p[f"{name}/b"]
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"{name}: input width {x.shape[-1]} != {W.shape[0]}")
    y = ad.add_bias(ad.matmul(x, W), b)
    if activation == "relu":
        y = ad.relu(y)
    elif activation is not None:
        raise ValueError(f"unknown activation {activation!r}")
    return y


def mlp(p: BoundParams, names: list[str], x: Tensor) -> Tensor:
    """FC stack with ReLU between layers and a linear head."""
    for i, name in enumerate(names):
        x = fc_forward(p, name, x, activation="relu" if i < len(names) - 1 else None)
    return x


def lstm_cell(p: BoundParams, name: str, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """Standard LSTM step; gate layout in the packed weights is (i, f, g, o)."""
    Wx, Wh, b = p[f"{name}/Wx"], p[f"{name}/Wh"], p[f"{name}/b"]
    H = Wh.shape[0]
    if x.shape[-1] != Wx.shape[0] or h.shape != c.shape or h.shape[-1] != H:
        raise ValueError(f"{name}: shape mismatch x{x.shape} h{h.shape} c{c.shape}")
    z = ad.add_bias(ad.add(ad.matmul(x, Wx), ad.matmul(h, Wh)), b)
    i = ad.sigmoid(ad.take(z, -1, 0, H))
    f = ad.sigmoid(ad.take(z, -1, H, 2 * H))
    g = ad.tanh(ad.take(z, -1, 2 * H, 3 * H))
    o = ad.sigmoid(ad.take(z, -1, 3 * H, 4 * H))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def gat_attention(p: BoundParams, name: str, messages: Tensor, adjacency: np.ndarray) -> tuple[Tensor, Tensor]:
    """Single-head graph attention; returns ``(node_features, alpha)``.

    ``messages`` is ``[n, D]`` or batched ``[B, n, D]``. ``adjacency[..., j, i]``
    says node ``j`` observes node ``i``; the diagonal is always treated as set.
    ``alpha[..., j, i]`` is the weight of source ``i`` in target ``j``'s update.
    """
    adjacency = np.asarray(adjacency, dtype=bool)
    batched = messages.data.ndim == 3
    if not batched:
        messages = ad.reshape(messages, (1,) + messages.shape)
        adjacency = adjacency[None]
    B, n, D = messages.shape
    if n == 0:
        raise ValueError(f"{name}: empty graph")
    if adjacency.shape != (B, n, n):
        raise ValueError(f"{name}: adjacency {adjacency.shape} is not square over {n} nodes")
    adjacency = adjacency | np.eye(n, dtype=bool)[None]

    W, a = p[f"{name}/W"], p[f"{name}/a"]
    wm = ad.matmul(messages, W)                                   # [B, n, D]
    src = ad.reshape(ad.matmul(wm, ad.take(a, 0, 0, D)), (B, n))  # contribution of source i
    dst = ad.reshape(ad.matmul(wm, ad.take(a, 0, D, 2 * D)), (B, n))
    scores = ad.leaky_relu(ad.pair_add(dst, src), LEAKY_SLOPE)    # [B, j, i]
    alpha = ad.softmax(scores, mask=adjacency)
    out = ad.elu(ad.matmul(alpha, wm))
    if not batched:
        out = ad.reshape(out, (n, D))
        alpha = ad.reshape(alpha, (n, n))
    return out, alpha


def gat_layer(p: BoundParams, name: str, messages: Tensor, adjacency: np.ndarray) -> Tensor:
    return gat_attention(p, name, messages, adjacency)[0]


def sample_gumbel(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.gumbel(size=shape)


def gumbel_softmax(
    logits: Tensor,
    temperature: float = GUMBEL_TEMPERATURE,
    hard: bool = True,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> Tensor:
    """Relaxed categorical sample over the last axis.

    With ``hard`` the forward value is one-hot while gradients follow the
    relaxed softmax. Pass ``noise`` to reuse specific Gumbel draws.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_softmax needs rng or explicit noise")
        noise = sample_gumbel(rng, logits.shape)
    y = ad.softmax(ad.scale(ad.add(logits, ad.constant(noise)), 1.0 / temperature))
    return ad.straight_through(y) if hard else y
