"""Gradient verification suite: every differentiable op, the fused graph ops,
and the full combined training loss, all checked against central finite
differences at random probe points.

Probe points near activation kinks (|x| < 10h for LeakyReLU) are resampled so
the finite-difference quotient stays valid.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import contrastive as cl
from . import graph_encoder as ge
from . import text_encoder as te
from .autodiff import GradCheckReport

H = 1e-4
KINK_MARGIN = 10 * H


def _away_from_kink(rng, shape):
    x = rng.normal(size=shape)
    while np.any(np.abs(x) < KINK_MARGIN):
        bad = np.abs(x) < KINK_MARGIN
        x[bad] = rng.normal(size=int(bad.sum()))
    return x


def _op_cases(rng):
    a = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="a")
    b = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="b")
    w = ad.Tensor(rng.normal(size=(4, 2)), requires_grad=True, name="w")
    pos = ad.Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True, name="pos")
    kinked = ad.Tensor(_away_from_kink(rng, (3, 4)), requires_grad=True, name="kinked")
    vec = ad.Tensor(rng.normal(size=(6,)), requires_grad=True, name="vec")
    idx = rng.integers(0, 3, size=5)
    nz = ad.Tensor(rng.normal(size=(4, 3)) + np.sign(rng.normal(size=(4, 3))) * 0.1,
                   requires_grad=True, name="nz")
    weights = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="weights")
    feats = ad.Tensor(rng.normal(size=(5, 3)), requires_grad=True, name="feats")
    neigh = rng.integers(0, 5, size=(3, 4))
    neigh[0, 3] = -1  # padding slot
    mask = rng.integers(0, 2, size=(3, 4)).astype(np.float64)
    mask[:, 0] = 1.0  # keep every row non-empty
    probe_nz = ad.constant(rng.normal(size=(4, 3)))
    probe_nws = ad.constant(rng.normal(size=(3, 3)))

    return [
        ("add", lambda: ad.sum_(ad.mul(ad.add(a, b), ad.add(a, b))), [a, b]),
        ("mul", lambda: ad.sum_(ad.mul(a, b)), [a, b]),
        ("matmul", lambda: ad.sum_(ad.mul(ad.matmul(a, w), ad.matmul(a, w))), [a, w]),
        ("transpose", lambda: ad.sum_(ad.mul(ad.transpose(a), ad.transpose(b))), [a]),
        ("reshape", lambda: ad.sum_(ad.mul(ad.reshape(a, (4, 3)), ad.reshape(b, (4, 3)))), [a]),
        ("sum_axis", lambda: ad.sum_(ad.mul(ad.sum_(a, axis=1), ad.sum_(b, axis=1))), [a]),
        ("mean", lambda: ad.mul(ad.mean_(ad.mul(a, a)), ad.constant(3.0)), [a]),
        ("exp", lambda: ad.sum_(ad.exp(ad.mul(a, ad.constant(0.3)))), [a]),
        ("log", lambda: ad.sum_(ad.log(pos)), [pos]),
        ("tanh", lambda: ad.sum_(ad.mul(ad.tanh(a), b)), [a, b]),
        ("elu", lambda: ad.sum_(ad.mul(ad.elu(a), b)), [a, b]),
        ("leaky_relu", lambda: ad.sum_(ad.mul(ad.leaky_relu(kinked, 0.2), b)), [kinked]),
        ("gather_rows", lambda: ad.sum_(ad.mul(ad.gather_rows(a, idx),
                                               ad.gather_rows(b, idx))), [a]),
        ("slice1d", lambda: ad.sum_(ad.mul(ad.slice1d(vec, 1, 4),
                                           ad.slice1d(vec, 3, 6))), [vec]),
        ("concat", lambda: ad.sum_(ad.mul(ad.concat([a, b], axis=1),
                                          ad.concat([b, a], axis=1))), [a, b]),
        ("l2_normalize_rows",
         lambda: ad.sum_(ad.mul(ad.l2_normalize_rows(nz), probe_nz)), [nz]),
        ("neighbor_weighted_sum",
         lambda: ad.sum_(ad.mul(ad.neighbor_weighted_sum(weights, feats, neigh),
                                probe_nws)),
         [weights, feats]),
        ("logsumexp_rows", lambda: ad.sum_(ad.logsumexp_rows(a, mask)), [a]),
        ("loss_el", lambda: te.loss_el(ad.matmul(a, ad.transpose(b))), [a, b]),
    ]


def check_ops(probes: int = 25, tolerance: float = 1e-4, seed: int = 0) -> list[GradCheckReport]:
    """Every registered op at ``probes`` random probe points."""
    worst: dict[str, GradCheckReport] = {}
    for probe in range(probes):
        rng = np.random.default_rng([seed, probe])
        for name, fn, tensors in _op_cases(rng):
            rep = ad.grad_check(fn, tensors, tolerance=tolerance, h=H, op_name=name)
            prev = worst.get(name)
            if prev is None or rep.max_rel_error > prev.max_rel_error:
                worst[name] = rep
    return list(worst.values())


def _composite_loss(rng, weight_a=1.0, weight_b=1.0, weight_c=1.0, tau=0.5):
    """A small full-objective instance: in-batch EL loss plus both cross-graph
    contrastive losses, all flowing through one parameter store."""
    vocab_size, d, m, hidden, proj = 12, 4, 6, 4, 3
    n_nodes, batch = 6, 3
    store = ad.ParameterStore()
    te.encoder_params(store, "mention", vocab_size, d, rng)
    te.encoder_params(store, "entity", vocab_size, d, rng)
    ge.graph_params(store, m, hidden, proj, rng)
    store.add("fuse.W", (2 * proj, d), rng)
    features = ad.Tensor(rng.normal(size=(n_nodes, m)), requires_grad=True,
                         name="features")

    mention_seqs = [te.TokenSequence(tuple(int(t) for t in rng.integers(0, vocab_size, 5)))
                    for _ in range(batch)]
    entity_seqs = [te.TokenSequence(tuple(int(t) for t in rng.integers(0, vocab_size, 5)))
                   for _ in range(batch)]
    gold_ids = np.arange(batch)
    rel_lists = [rng.permutation(n_nodes)[:3] for _ in range(n_nodes)]
    feat_lists = [rng.permutation(n_nodes)[:2] for _ in range(n_nodes)]
    anchor_nodes = np.arange(batch)
    pos_lists = [np.array([(i + 1) % n_nodes]) for i in range(batch)]
    neg_lists = [np.array([(i + 2) % n_nodes, (i + 3) % n_nodes]) for i in range(batch)]

    def fn():
        y_m = te.encode_batch(mention_seqs, store, "mention", vocab_size)
        y_text = te.encode_batch(entity_seqs, store, "entity", vocab_size)
        all_ids = np.arange(n_nodes)
        z_r = ge.attend_aggregate(all_ids, rel_lists, features, store)
        z_f = ge.attend_aggregate(all_ids, feat_lists, features, store)
        z_rp = ge.project(z_r, store)
        z_fp = ge.project(z_f, store)
        fused = ad.matmul(ad.concat([ad.gather_rows(z_rp, gold_ids),
                                     ad.gather_rows(z_fp, gold_ids)], axis=1),
                          store["fuse.W"])
        scores = ad.matmul(y_m, ad.transpose(ad.add(y_text, fused)))
        l_e = te.loss_el(scores)
        l_f, _ = cl.batched_contrastive_loss(ad.gather_rows(z_fp, anchor_nodes), z_rp,
                                             pos_lists, neg_lists, tau)
        l_r, _ = cl.batched_contrastive_loss(ad.gather_rows(z_rp, anchor_nodes), z_fp,
                                             pos_lists, neg_lists, tau)
        return ad.add(ad.add(ad.mul(l_e, ad.constant(weight_a)),
                             ad.mul(l_f, ad.constant(weight_b))),
                      ad.mul(l_r, ad.constant(weight_c)))

    return fn, store.tensors() + [features]


def _probe_point_valid(loss_root: ad.Tensor) -> bool:
    """Reject probe points where finite differences are unreliable: inputs near
    the LeakyReLU kink or nearly zero-norm rows entering normalization."""
    stack, seen = [loss_root], set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.name == "leaky_relu":
            if np.abs(node._parents[0].values).min() < 50 * H:
                return False
        if node.name == "l2_normalize_rows":
            if np.linalg.norm(node._parents[0].values, axis=1).min() < 0.05:
                return False
        stack.extend(node._parents)
    return True


def check_composite(probes: int = 25, tolerance: float = 1e-4,
                    seed: int = 1) -> GradCheckReport:
    """The full combined objective at ``probes`` random parameter draws."""
    worst = GradCheckReport("composite_objective", 0.0, tolerance, True)
    for probe in range(probes):
        fn = tensors = None
        for attempt in range(50):
            rng = np.random.default_rng([seed, probe, attempt])
            fn, tensors = _composite_loss(rng)
            if _probe_point_valid(fn()):
                break
        rep = ad.grad_check(fn, tensors, tolerance=tolerance, h=H,
                            op_name="composite_objective")
        if rep.max_rel_error > worst.max_rel_error:
            worst = rep
    return worst


def run_suite(probes: int = 25, tolerance: float = 1e-4) -> list[GradCheckReport]:
    reports = check_ops(probes=probes, tolerance=tolerance)
    reports.append(check_composite(probes=probes, tolerance=tolerance))
    return reports
