"""Plain per-sample gradient-descent baseline for the CLI comparisons.

Backpropagation of the squared error 1/2 ||y - y_hat||^2, batch size 1, on
the same Mlfn value type, so accuracy comparisons isolate the training law.
The learning rate is halved after 50% of the epochs and quartered after 75%.
"""

import numpy as np

from .errors import NumericError


def sgd_epoch_lr(lr0, epoch, n_epochs):
    if epoch >= int(0.75 * n_epochs):
        return lr0 / 4.0
    if epoch >= int(0.5 * n_epochs):
        return lr0 / 2.0
    return lr0


def backprop_step(net, z, y, lr):
    """One SGD step in place; returns squared output error."""
    acts = [np.asarray(z, dtype=float)]
    preacts = []
    for j, w in enumerate(net.weights):
        pre = w @ acts[-1]
        preacts.append(pre)
        acts.append(net.kind_of_layer(j + 1).apply(pre))
    e = np.asarray(y, dtype=float) - acts[-1]
    grad = -e * net.output_kind.derivative(preacts[-1])
    for j in range(net.n_layers - 1, -1, -1):
        w = net.weights[j]
        gw = np.outer(grad, acts[j])
        if j > 0:
            grad = (w.T @ grad) * net.hidden_kinds[j - 1].derivative(preacts[j - 1])
        net.weights[j] = w - lr * gw
    if not np.all(np.isfinite(net.weights[0])):
        raise NumericError("sgd produced non-finite weights", state=net.weights[0])
    return float(np.dot(e, e))


def train_sgd(net, dataset, epochs, lr0, seed, epoch_callback=None):
    """Train in place for `epochs` passes; returns per-epoch mean squared error."""
    errs = []
    for epoch in range(epochs):
        lr = sgd_epoch_lr(lr0, epoch, epochs)
        order = np.random.default_rng([seed & 0x7FFFFFFF, 81, epoch]).permutation(len(dataset))
        sq = 0.0
        for k in order:
            sq += backprop_step(net, dataset.inputs[k], dataset.targets[k], lr)
        errs.append(sq / max(len(dataset), 1))
        if epoch_callback:
            epoch_callback(epoch, net, errs[-1])
    return errs
