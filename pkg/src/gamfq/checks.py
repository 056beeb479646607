"""Standard gradient-check suite for every trainable layer.

Each check projects the layer output onto fixed random weights so the
scalar loss exercises every output coordinate.
"""

from __future__ import annotations

import numpy as np

from gamfq import estimators as est
from gamfq.nncore import autodiff as ad
from gamfq.nncore.gradcheck import GradCheckReport, grad_check
from gamfq.nncore.layers import fc_forward, gat_layer, lstm_cell, mlp
from gamfq.nncore.params import ParamStore

TOLERANCE = 1e-4
EPS = 1e-6


def _project(out, w):
    return ad.sum_all(ad.mul(out, ad.constant(w)))


def _fc(seed: int):
    rng = np.random.default_rng(seed)
    s = ParamStore()
    s.init_fc("fc", 6, 4, rng)
    x = rng.normal(size=(5, 6))
    w = rng.normal(size=(5, 4))
    return [s], lambda tape: _project(fc_forward(s.bind(tape), "fc", ad.constant(x), "relu"), w)


def _lstm(seed: int):
    rng = np.random.default_rng(seed)
    s = ParamStore()
    s.init_lstm("lstm", 4, 3, rng)
    x, h, c = rng.normal(size=(5, 4)), rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    wh, wc = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))

    def loss(tape):
        hn, cn = lstm_cell(s.bind(tape), "lstm", ad.constant(x), ad.constant(h), ad.constant(c))
        return ad.add(_project(hn, wh), _project(cn, wc))

    return [s], loss


def _gat(seed: int):
    rng = np.random.default_rng(seed)
    s = ParamStore()
    s.init_gat("gat", 4, rng)
    m = rng.normal(size=(2, 5, 4))
    adj = rng.random((2, 5, 5)) < 0.6
    w = rng.normal(size=(2, 5, 4))
    return [s], lambda tape: _project(gat_layer(s.bind(tape), "gat", ad.constant(m), adj), w)


def _edge_mlp(seed: int):
    rng = np.random.default_rng(seed)
    s = ParamStore()
    s.init_fc("edge1", 8, 5, rng)
    s.init_fc("edge2", 5, 2, rng)
    x = rng.normal(size=(6, 8))
    w = rng.normal(size=(6, 2))
    return [s], lambda tape: _project(mlp(s.bind(tape), ["edge1", "edge2"], ad.constant(x)), w)


def _estimator(seed: int):
    rng = np.random.default_rng(seed)
    F, H, B, n, L = 7, 5, 3, 4, 4
    net = est.GraphAttentionNet(F, rng, hidden=H)
    obs = rng.normal(size=(B, n, F))
    h, c = rng.normal(size=(B, n, H)), rng.normal(size=(B, n, H))
    adj = rng.random((B, n, n)) < 0.7
    valid = np.ones((B, n - 1))
    acts = np.eye(L)[rng.integers(L, size=(B, n - 1))]
    noise = rng.gumbel(size=(B, n - 1, 2))
    w = rng.normal(size=(B, L))

    def loss(tape):
        mean = est.gamfq_mean_action(net.store.bind(tape), net, obs, h, c, adj, valid, acts, noise, hard=False)
        return _project(mean, w)

    return [net.store], loss


CHECKS = {
    "fc": _fc,
    "lstm_cell": _lstm,
    "gat_layer": _gat,
    "edge_mlp": _edge_mlp,
    "gamfq_estimator": _estimator,
}


def run_gradchecks(seeds=range(5), tolerance: float = TOLERANCE, eps: float = EPS) -> list[GradCheckReport]:
    reports = []
    for seed in seeds:
        for label, build in CHECKS.items():
            reports.append(grad_check(lambda: build(seed), tolerance, eps, label=f"{label} seed={seed}"))
    return reports
