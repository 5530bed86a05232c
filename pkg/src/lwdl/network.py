"""Multilayer feedforward network values and forward evaluation.

A network with dims [h0, h1, ..., hn] holds n weight matrices W_j of shape
(h_j, h_{j-1}); there are no bias terms (augment inputs with a constant
component at the dataset level if one is wanted). `forward_to(j, z)` returns
the input seen by layer j, which is z itself for j=1.

Forward ops accept a single sample (1-D, shape (h0,)) or a batch of samples
as rows (2-D, shape (n_samples, h0)).
"""

import json
from dataclasses import dataclass

import numpy as np

from . import activations
from .errors import FormatError, ShapeError
from .numerics import require_finite

CHECKPOINT_MAGIC = b"LWDLNET1\n"


def _rng(seed, *salts):
    return np.random.default_rng([int(seed) & 0x7FFFFFFF, *salts])


def _apply_layer(w, kind, x):
    """kind(W x) for a sample or a batch of row samples."""
    if x.ndim == 1:
        return kind.apply(w @ x)
    return kind.apply(x @ w.T)


@dataclass
class Mlfn:
    """n-layer feedforward network: weights plus per-layer activations."""

    dims: list
    weights: list
    hidden_kinds: list          # one Activation per hidden layer (n-1 entries)
    output_kind: activations.Activation

    def __post_init__(self):
        if len(self.dims) < 2:
            raise ShapeError("need at least one weight layer")
        expect = [(self.dims[j + 1], self.dims[j]) for j in range(len(self.dims) - 1)]
        got = [w.shape for w in self.weights]
        if got != expect:
            raise ShapeError(f"weight shapes {got} do not chain over dims {self.dims}")
        if len(self.hidden_kinds) != self.n_layers - 1:
            raise ShapeError("need one hidden activation per hidden layer")

    @property
    def n_layers(self):
        return len(self.weights)

    def kind_of_layer(self, j):
        """Activation applied after layer j (1-based)."""
        return self.output_kind if j == self.n_layers else self.hidden_kinds[j - 1]

    def forward(self, z):
        """Network output phi_n(W_n ... phi_1(W_1 z))."""
        a = self.forward_to(self.n_layers, z)
        return _apply_layer(self.weights[-1], self.output_kind, a)

    def forward_to(self, j, z):
        """Input of layer j: z for j=1, else phi_{j-1}(W_{j-1} ... phi_1(W_1 z))."""
        if not 1 <= j <= self.n_layers:
            raise ShapeError(f"layer index {j} outside 1..{self.n_layers}")
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dims[0]:
            raise ShapeError(f"input dim {z.shape[-1]} != {self.dims[0]}")
        a = z
        for l in range(j - 1):
            a = _apply_layer(self.weights[l], self.hidden_kinds[l], a)
        return a

    def copy(self):
        return Mlfn(list(self.dims), [w.copy() for w in self.weights],
                    list(self.hidden_kinds), self.output_kind)


@dataclass
class Slfn:
    """Single-hidden-layer network; the unit of forward progressive learning."""

    input_weights: np.ndarray    # (h, m)
    output_weights: np.ndarray   # (p, h)
    hidden_kind: activations.Activation
    output_kind: activations.Activation

    def __post_init__(self):
        if self.input_weights.shape[0] != self.output_weights.shape[1]:
            raise ShapeError("input/output weight shapes do not chain")

    def hidden(self, z):
        return _apply_layer(self.input_weights, self.hidden_kind, np.asarray(z, dtype=float))

    def forward(self, z):
        return _apply_layer(self.output_weights, self.output_kind, self.hidden(z))

    def copy(self):
        return Slfn(self.input_weights.copy(), self.output_weights.copy(),
                    self.hidden_kind, self.output_kind)

    def as_mlfn(self):
        m = self.input_weights.shape[1]
        h, p = self.output_weights.shape[1], self.output_weights.shape[0]
        return Mlfn([m, h, p], [self.input_weights.copy(), self.output_weights.copy()],
                    [self.hidden_kind], self.output_kind)


def random_weights(rows, cols, rng):
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] to keep pre-activations O(1)."""
    bound = 1.0 / np.sqrt(cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_random(dims, hidden_kinds, output_kind, seed):
    """Randomly initialized Mlfn; deterministic under seed.

    `hidden_kinds` may be a single Activation (used for every hidden layer)
    or a list with one entry per hidden layer.
    """
    dims = [int(d) for d in dims]
    if any(d <= 0 for d in dims):
        raise ShapeError("all dims must be positive")
    n = len(dims) - 1
    if isinstance(hidden_kinds, activations.Activation):
        hidden_kinds = [hidden_kinds] * (n - 1)
    weights = []
    for j in range(n):
        rng = _rng(seed, 11, j)
        weights.append(random_weights(dims[j + 1], dims[j], rng))
    return Mlfn(dims, weights, list(hidden_kinds), output_kind)


def init_random_slfn(m, h, p, hidden_kind, output_kind, seed):
    rng_in = _rng(seed, 21, 0)
    rng_out = _rng(seed, 21, 1)
    return Slfn(random_weights(h, m, rng_in), random_weights(p, h, rng_out),
                hidden_kind, output_kind)


# --- checkpoint format ------------------------------------------------------
# Line 1: magic b"LWDLNET1\n".
# Line 2: JSON header {"dims", "hidden", "output"} + b"\n".
# Then the raw little-endian float64 bytes of each W_j, row-major, in order.
# Raw float bytes round-trip bit-exactly.

def save_checkpoint(net, path):
    header = {
        "dims": [int(d) for d in net.dims],
        "hidden": [k.name for k in net.hidden_kinds],
        "output": net.output_kind.name,
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for w in net.weights:
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
        try:
            header = json.loads(f.readline().decode())
            dims = [int(d) for d in header["dims"]]
            hidden = [activations.get(n) for n in header["hidden"]]
            output = activations.get(header["output"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: bad checkpoint header: {exc}") from exc
        weights = []
        for j in range(len(dims) - 1):
            shape = (dims[j + 1], dims[j])
            raw = f.read(8 * shape[0] * shape[1])
            if len(raw) != 8 * shape[0] * shape[1]:
                raise FormatError(f"{path}: truncated weights for layer {j + 1}")
            weights.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after weights")
    net = Mlfn(dims, weights, hidden, output)
    for w in net.weights:
        require_finite(w, "checkpoint weights")
    return net
