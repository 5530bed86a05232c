"""Forward progressive learning: grow the network one hidden layer at a time.

Each new hidden layer j lives inside an SLFN whose input is the training data
pushed through the frozen, already-trained prefix. The SLFN is pre-trained
(one-layer law on the pseudo output weights, identity output) and then
fine-tuned (two-layer law on both matrices, real output activation, gain
governor every step). The hidden weights are kept; the pseudo output weights
are discarded, except for the last SLFN whose output weights become the real
output layer.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import activations
from .data import Dataset
from .errors import LwdlError
from .network import Mlfn, init_random_slfn, _apply_layer
from .updates import GainState, one_layer_step, two_layer_step

HISTORY_COLUMNS = ("net_index", "phase", "loop", "train_error",
                   "train_accuracy", "test_accuracy", "mean_gain")


@dataclass
class FplConfig:
    pretrain_loops: int = 2
    finetune_loops: int = 28
    gains: GainState = field(default_factory=lambda: GainState(L=0.01))
    gain_decay: float = 0.9      # multiplies the gain diagonal after each loop
    pretrain_gain: float = None  # None: derive from the one-layer condition
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_loops < 0 or self.finetune_loops < 0:
            raise ValueError("loop counts must be >= 0")
        if not 0.0 < self.gain_decay <= 1.0:
            raise ValueError("gain_decay must lie in (0, 1]")


def _order(cfg, salt, loop, n):
    return np.random.default_rng(
        [cfg.seed & 0x7FFFFFFF, 71, salt, loop]).permutation(n)


def pretrain_slfn(slfn, dataset, cfg, history=None, net_index=0, eval_fn=None):
    """Train only the output weights (one-layer law, identity output)."""
    slfn = slfn.copy()
    if cfg.pretrain_gain is None:
        gains = GainState(L=1e9, auto_adjust=True, safety=cfg.gains.safety)
    else:
        gains = GainState(L=cfg.pretrain_gain, auto_adjust=cfg.gains.auto_adjust,
                          safety=cfg.gains.safety)
    hidden_all = slfn.hidden(dataset.inputs)
    for loop in range(cfg.pretrain_loops):
        sq_sum = 0.0
        gain_sum = 0.0
        for k in _order(cfg, net_index * 2, loop, len(dataset)):
            slfn.output_weights, trace = one_layer_step(
                slfn.output_weights, hidden_all[k], dataset.targets[k],
                activations.IDENTITY, gains)
            sq_sum += float(np.dot(trace.error, trace.error))
            gain_sum += float(np.mean(trace.applied_L))
        if history is not None:
            tr_acc, te_acc = eval_fn(slfn) if eval_fn else (float("nan"),) * 2
            history.append((net_index, "pretrain", loop + 1,
                            sq_sum / max(len(dataset), 1), tr_acc, te_acc,
                            gain_sum / max(len(dataset), 1)))
    return slfn


def finetune_slfn(slfn, dataset, cfg, history=None, net_index=0, eval_fn=None):
    """Two-layer law on both matrices; gain decays per loop, halvings persist."""
    slfn = slfn.copy()
    gains = cfg.gains.with_l(cfg.gains.l_vector(slfn.output_weights.shape[0]))
    for loop in range(cfg.finetune_loops):
        sq_sum = 0.0
        gain_sum = 0.0
        for k in _order(cfg, net_index * 2 + 1, loop, len(dataset)):
            try:
                slfn, trace = two_layer_step(slfn, dataset.inputs[k],
                                             dataset.targets[k], gains)
            except LwdlError as exc:
                raise type(exc)(
                    f"net {net_index} loop {loop + 1} sample {k}: {exc}") from exc
            if trace.gain_clipped:
                gains = gains.with_l(trace.applied_L)
            sq_sum += float(np.dot(trace.error, trace.error))
            gain_sum += float(np.mean(trace.applied_L))
        gains = gains.with_l(gains.l_vector(slfn.output_weights.shape[0]) * cfg.gain_decay)
        if history is not None:
            tr_acc, te_acc = eval_fn(slfn) if eval_fn else (float("nan"),) * 2
            history.append((net_index, "finetune", loop + 1,
                            sq_sum / max(len(dataset), 1), tr_acc, te_acc,
                            gain_sum / max(len(dataset), 1)))
    return slfn


def classification_accuracy(outputs, targets):
    """Fraction of argmax matches; ties resolve to the lowest index."""
    return float(np.mean(np.argmax(outputs, axis=1) == np.argmax(targets, axis=1)))


def run_fpl(dims, hidden_kinds, output_kind, dataset, cfg, test_data=None):
    """Grow and train the full network; returns (Mlfn, history rows).

    `dims` is the full network architecture [m, h_1, ..., h_{n-1}, p]; the
    SLFNs trained are (m, h_1, p), (h_1, h_2, p), ..., (h_{n-2}, h_{n-1}, p).
    History rows follow HISTORY_COLUMNS; accuracies are computed through the
    frozen prefix plus the current SLFN when targets are one-hot-like, and are
    NaN otherwise.
    """
    dims = [int(d) for d in dims]
    n = len(dims) - 1
    if n < 2:
        raise ValueError("forward progressive learning needs at least 2 weight layers")
    if isinstance(hidden_kinds, activations.Activation):
        hidden_kinds = [hidden_kinds] * (n - 1)
    p = dims[-1]
    history = []
    kept_weights = []
    z_train = dataset.inputs
    z_test = test_data.inputs if test_data is not None else None
    classify = _looks_one_hot(dataset.targets)

    slfn = None
    for j in range(1, n):
        sub = Dataset(z_train, dataset.targets)
        slfn = init_random_slfn(dims[j - 1], dims[j], p, hidden_kinds[j - 1],
                                output_kind, cfg.seed * 1000 + j)

        def eval_fn(s, _zt=z_train, _zte=z_test):
            if not classify:
                return float("nan"), float("nan")
            tr = classification_accuracy(s.forward(_zt), dataset.targets)
            te = (classification_accuracy(s.forward(_zte), test_data.targets)
                  if _zte is not None else float("nan"))
            return tr, te

        slfn = pretrain_slfn(slfn, sub, cfg, history, j, eval_fn)
        slfn = finetune_slfn(slfn, sub, cfg, history, j, eval_fn)
        kept_weights.append(slfn.input_weights.copy())
        z_train = _apply_layer(slfn.input_weights, hidden_kinds[j - 1], z_train)
        if z_test is not None:
            z_test = _apply_layer(slfn.input_weights, hidden_kinds[j - 1], z_test)

    kept_weights.append(slfn.output_weights.copy())
    net = Mlfn(dims, kept_weights, list(hidden_kinds), output_kind)
    return net, history


def _looks_one_hot(targets):
    return (targets.shape[1] > 1
            and np.all((targets >= 0.0) & (targets <= 1.0))
            and np.allclose(np.sum(targets, axis=1), 1.0))


def write_history_csv(history, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row[0], row[1], row[2]] +
                            [f"{v:.17g}" for v in row[3:]])


def max_test_accuracy(history, net_index):
    """Paper-style reported figure: best per-loop test accuracy of one net."""
    vals = [row[5] for row in history
            if row[0] == net_index and row[1] == "finetune" and not np.isnan(row[5])]
    return max(vals) if vals else float("nan")
