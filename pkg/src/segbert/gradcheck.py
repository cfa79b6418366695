"""Finite-difference validation of the model's gradients.

A fixed 5-node toy graph runs through the full network in eval mode
(dropout is the identity there, keeping the loss a deterministic
function of the parameters). The loss sums the classification
cross-entropy with both pre-training losses so every parameter group,
heads included, receives gradient. Each parameter entry is then
perturbed by a central step and compared against the tape's analytic
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .dataset import GraphInstance
from .features import build_bundles
from .model import (
    ModelConfig,
    ModelParams,
    build_batch,
    encode,
    init_params,
    prepare_graph,
    reconstruct_attributes,
    recover_structure,
    structure_target,
)
from .unify import Strategy, UnifyPlan

__all__ = ["GradCheckReport", "model_gradcheck", "relative_error", "toy_graph"]

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-3


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max entrywise |a-b| / max(|a|+|b|, 1e-6)."""
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def toy_graph(attr_dim: int = 3) -> GraphInstance:
    """Five nodes, a path with two chords, deterministic tags/attrs."""
    pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 3)]
    arcs = sorted({(i, j, 1.0) for i, j in pairs} | {(j, i, 1.0) for i, j in pairs})
    g = GraphInstance(node_count=5, edges=list(arcs), label=1)
    g.node_tags = [0, 1, 2, 0, 1]
    if attr_dim > 0:
        g.node_attributes = (np.arange(5 * attr_dim, dtype=np.float64)
                             .reshape(5, attr_dim) % 7) / 7.0
    return g


@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def lines(self) -> list:
        out = []
        for name, err in self.errors.items():
            flag = "ok" if err < self.tolerance else "FAIL"
            out.append(f"{name:40s} rel_err {err:.3e} {flag}")
        return out


def model_gradcheck(residual_mode: str = "none", hidden_dim: int = 32,
                    head_count: int = 2, layer_count: int = 2,
                    intermediate_dim: int = 32, attr_dim: int = 3,
                    seed: int = 0, step: float = DEFAULT_STEP,
                    tolerance: float = DEFAULT_TOLERANCE) -> GradCheckReport:
    """Check every parameter group of a small model; returns a report."""
    g = toy_graph(attr_dim)
    cfg = ModelConfig(
        hidden_dim=hidden_dim,
        head_count=head_count,
        layer_count=layer_count,
        intermediate_dim=intermediate_dim,
        dropout_hidden=0.5,  # irrelevant in eval mode, kept at defaults
        dropout_attention=0.3,
        residual_mode=residual_mode,
        class_count=2,
        attr_dim=attr_dim,
        use_tags=True,
        n_adj=5,
        segment_k=5,
    )
    params = init_params(cfg, seed=seed)
    plan = UnifyPlan(Strategy.FULL_INPUT, 5)
    gi = prepare_graph(g, build_bundles(g, n_adj=5), plan, cfg)
    batch = build_batch([gi], cfg.class_count)
    onehot = batch.labels_onehot
    target_w = structure_target(gi)
    raw_target = batch.raw[batch.real_slot_lists[0]]

    def run_loss(tape: Tape) -> Tensor:
        h = encode(tape, params, cfg, batch, training=False)
        h_final = tape.take_rows(h, batch.real_slot_lists[0])
        z = tape.mean_rows(h_final)
        logits = tape.add(tape.matmul(z, params["classifier.weight"]),
                          params["classifier.bias"])
        ce = tape.cross_entropy(logits, onehot)
        recon = tape.mse(reconstruct_attributes(tape, params, h_final), raw_target)
        struct = tape.mse(recover_structure(tape, h_final), target_w)
        return tape.add_n([ce, recon, struct])

    tape = Tape()
    loss = run_loss(tape)
    tape.backward(loss)
    analytic = {name: t.grad.copy() if t.grad is not None else np.zeros_like(t.value)
                for name, t in params.items()}

    def loss_value() -> float:
        return float(run_loss(Tape()).value[0, 0])

    errors = {}
    for name, t in params.items():
        numeric = np.zeros_like(t.value)
        it = np.nditer(t.value, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = t.value[idx]
            t.value[idx] = orig + step
            hi = loss_value()
            t.value[idx] = orig - step
            lo = loss_value()
            t.value[idx] = orig
            numeric[idx] = (hi - lo) / (2.0 * step)
            it.iternext()
        errors[name] = relative_error(analytic[name], numeric)
    return GradCheckReport(errors=errors, tolerance=tolerance)
