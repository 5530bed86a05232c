"""Inverse layer-wise training: backward target transmission, backward stage,
forward relearning stage.

The backward stage trains W_n against the raw targets on inputs computed from
the frozen initial weights, then walks down to W_1, deriving each layer's
targets by inverting the activation of the layer above and multiplying by the
pseudoinverse of its freshly trained weights. The forward stage retrains
W_2..W_n on inputs recomputed from the already-relearned prefix. Every layer
is trained with the one-layer law; hidden activations must be invertible,
which is why this algorithm pairs with modified softplus rather than ReLU.

Targets that fall outside an activation's invertible range are clamped before
inversion (the distortion the method is known for); the clamped fraction per
layer is recorded in the history.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import LwdlError, UnsupportedActivationError
from .network import Mlfn
from .numerics import pinv
from .updates import GainState, one_layer_step

HISTORY_COLUMNS = ("stage", "layer", "loop", "mean_sq_error", "clip_fraction")


def _default_gains():
    # Requested gain far above any cap: the per-sample bound from the gain
    # condition is what actually gets applied.
    return GainState(L=1e9, auto_adjust=True)


@dataclass
class InverseLwConfig:
    loops_per_layer: int = 20
    gains: GainState = field(default_factory=_default_gains)
    clip_inverse: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.loops_per_layer < 0:
            raise ValueError("loops_per_layer must be >= 0")


def backward_target(y_next, w_next_trained, kind_next, clip=True):
    """Target for the layer below: pinv(W) applied to the inverted activation."""
    if not kind_next.invertible:
        raise UnsupportedActivationError(
            f"backward transmission needs an invertible activation, got {kind_next.name}")
    return pinv(w_next_trained) @ kind_next.inverse(np.asarray(y_next, dtype=float), clip=clip)


def _backward_targets_batch(y_next, w_next_trained, kind_next, clip):
    """Batched backward_target over rows; also counts clamped components."""
    if not kind_next.invertible:
        raise UnsupportedActivationError(
            f"backward transmission needs an invertible activation, got {kind_next.name}")
    y_next = np.asarray(y_next, dtype=float)
    lo, hi = kind_next.clip_range()
    n_clipped = int(np.sum((y_next < lo) | (y_next > hi)))
    inv = kind_next.inverse(y_next, clip=clip)
    return inv @ pinv(w_next_trained).T, n_clipped / max(y_next.size, 1)


def _train_layer(w, inputs, targets, kind, cfg, stage, layer, clip_frac, history):
    """loops_per_layer passes of the one-layer law over (inputs, targets)."""
    n = len(inputs)
    for loop in range(cfg.loops_per_layer):
        order = np.random.default_rng(
            [cfg.seed & 0x7FFFFFFF, 61, layer, loop, 0 if stage == "backward" else 1]
        ).permutation(n)
        sq_sum = 0.0
        for k in order:
            try:
                w, trace = one_layer_step(w, inputs[k], targets[k], kind, cfg.gains)
            except LwdlError as exc:
                raise type(exc)(f"layer {layer} ({stage}): {exc}") from exc
            sq_sum += float(np.dot(trace.error, trace.error))
        history.append((stage, layer, loop + 1, sq_sum / max(n, 1), clip_frac))
    return w


def run_inverse_layerwise(net, dataset, cfg):
    """Run the full two-stage algorithm; returns (trained net, history rows).

    History rows follow HISTORY_COLUMNS, one per (stage, layer, loop).
    """
    net = net.copy()
    initial = net.copy()
    n = net.n_layers
    history = []

    # Layer inputs from the frozen initial weights, shared by the whole
    # backward stage.
    star_inputs = {j: initial.forward_to(j, dataset.inputs) for j in range(1, n + 1)}

    # Backward stage: W_n down to W_1. Targets for layer j-1 are derived once
    # layer j has finished training; they are reused by the forward stage
    # (downstream weights are unchanged at the time W_j is relearned).
    targets_by_layer = {n: dataset.targets}
    clip_frac_by_layer = {n: 0.0}
    for j in range(n, 0, -1):
        kind = net.kind_of_layer(j)
        net.weights[j - 1] = _train_layer(
            net.weights[j - 1], star_inputs[j], targets_by_layer[j], kind, cfg,
            "backward", j, clip_frac_by_layer[j], history)
        if j > 1:
            targets, clip_frac = _backward_targets_batch(
                targets_by_layer[j], net.weights[j - 1], kind, cfg.clip_inverse)
            if not np.all(np.isfinite(targets)):
                raise LwdlError(f"layer {j - 1}: non-finite backward targets")
            targets_by_layer[j - 1] = targets
            clip_frac_by_layer[j - 1] = clip_frac

    # Forward stage: relearn W_2..W_n on inputs from the relearned prefix.
    for j in range(2, n + 1):
        inputs_j = net.forward_to(j, dataset.inputs)
        kind = net.kind_of_layer(j)
        net.weights[j - 1] = _train_layer(
            net.weights[j - 1], inputs_j, targets_by_layer[j], kind, cfg,
            "forward", j, 0.0, history)
    return net, history


def write_history_csv(history, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for stage, layer, loop, mse, clip_frac in history:
            writer.writerow([stage, layer, loop, f"{mse:.17g}", f"{clip_frac:.17g}"])
