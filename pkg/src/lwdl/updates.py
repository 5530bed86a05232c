"""Incremental learning laws and the gain governor.

One-layer law (single weight matrix W, regressor phi, monotone output kind):

    W(k+1) = W(k) + L e(k) phi(k)^T,   e = y - kind(W phi)

with L a positive diagonal gain. The error converges whenever

    (2/f) L - sum_i phi_i^2 L^T L > 0        (f = derivative bound of kind)

which for diagonal L reduces to l < 2 / (f * sum phi^2) per entry; the
governor caps each requested gain at `safety` times that bound.

Two-layer law (SLFN with input weights W, output weights Wout):

    Wout(k+1) = Wout(k) + a1 L e phihat^T
    W(k+1)    = W(k)    + a0 Theta^T Wout^T L e z^T

where phihat = hidden(W z), Theta = diag of hidden derivative at W z, and
both right-hand sides read the pre-update state. The complete gain condition
is the positive definiteness of

    M = (2/f) L - a1 sum(phihat^2) L^T L
              - a0 sum(z^2) L^T Wout Theta Theta^T Wout^T L

checked every step; the governor halves L (uniformly) until M is PD.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import GainExhaustedError, NumericError
from .network import Slfn

MAX_HALVINGS = 60


@dataclass
class GainState:
    """Learning gains plus the governor switches.

    L may be a positive scalar (uniform diagonal) or a 1-D array of per-output
    gains. `safety` in (0,1) is the margin kept below the one-layer bound;
    `auto_adjust` turns the governor on.
    """

    L: object
    alpha0: float = 1.0
    alpha1: float = 1.0
    safety: float = 0.9
    auto_adjust: bool = True

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.L, dtype=float))
        if np.any(arr <= 0):
            raise ValueError("gain diagonal must be strictly positive")
        if not 0.0 < self.safety < 1.0:
            raise ValueError("safety must lie in (0,1)")
        if self.alpha0 <= 0 or self.alpha1 <= 0:
            raise ValueError("alpha0 and alpha1 must be positive")

    def l_vector(self, p):
        """Gain diagonal broadcast to p outputs."""
        arr = np.atleast_1d(np.asarray(self.L, dtype=float))
        if arr.size == 1:
            return np.full(p, arr[0])
        if arr.size != p:
            raise ValueError(f"gain diagonal has size {arr.size}, expected {p}")
        return arr.copy()

    def with_l(self, new_l):
        return replace(self, L=np.asarray(new_l, dtype=float))


@dataclass
class StepTrace:
    """Observability record of one update step."""

    error: np.ndarray
    gain_clipped: bool
    applied_L: np.ndarray
    halvings: int = 0
    check_ok: bool = True


def one_layer_gain_cap(phi_in, f_phi, l_requested, safety=0.9):
    """Cap each diagonal gain at safety * 2 / (f_phi * sum phi^2).

    A zero regressor leaves the request unchanged (the update is a no-op).
    """
    ss = float(np.dot(phi_in, phi_in))
    l_requested = np.atleast_1d(np.asarray(l_requested, dtype=float))
    if ss == 0.0:
        return l_requested.copy()
    return np.minimum(l_requested, safety * 2.0 / (f_phi * ss))


def one_layer_step(w_hat, phi_in, target, kind, gains):
    """One increment of the one-layer law; returns (new W, trace)."""
    phi_in = np.asarray(phi_in, dtype=float)
    target = np.asarray(target, dtype=float)
    y_hat = kind.apply(w_hat @ phi_in)
    e = target - y_hat
    l_req = gains.l_vector(w_hat.shape[0])
    if gains.auto_adjust:
        l_used = one_layer_gain_cap(phi_in, kind.derivative_bound, l_req, gains.safety)
    else:
        l_used = l_req
    w_new = w_hat + np.outer(l_used * e, phi_in)
    if not np.all(np.isfinite(w_new)):
        raise NumericError("one_layer_step produced non-finite weights", state=w_hat)
    clipped = bool(np.any(l_used < l_req))
    return w_new, StepTrace(error=e, gain_clipped=clipped, applied_L=l_used)


def objective_v(w_true, w_hat):
    """Squared Frobenius distance between teacher and student weights."""
    d = np.asarray(w_true, dtype=float) - np.asarray(w_hat, dtype=float)
    return float(np.sum(d * d))


def delta_v_closed_form(w_true, w_hat, phi_in, kind, gains):
    """Closed-form V(k+1) - V(k) for a one-layer step with the same gains.

    Equals -delta^T L e - e^T L^T delta + sum(phi^2) e^T L^T L e, with
    delta = (W_true - W_hat) phi.
    """
    phi_in = np.asarray(phi_in, dtype=float)
    target = kind.apply(np.asarray(w_true, dtype=float) @ phi_in)
    e = target - kind.apply(np.asarray(w_hat, dtype=float) @ phi_in)
    delta = (np.asarray(w_true) - np.asarray(w_hat)) @ phi_in
    l_req = gains.l_vector(np.asarray(w_hat).shape[0])
    if gains.auto_adjust:
        l_used = one_layer_gain_cap(phi_in, kind.derivative_bound, l_req, gains.safety)
    else:
        l_used = l_req
    le = l_used * e
    ss = float(np.dot(phi_in, phi_in))
    return float(-2.0 * np.dot(delta, le) + ss * np.dot(le, le))


def theta_diag(kind, preact):
    """Diagonal entries of the hidden-derivative matrix at the pre-activation."""
    return kind.derivative(np.asarray(preact, dtype=float))


def two_layer_gain_check(w_out_hat, phi_hat, z_in, theta, kind_out, gains):
    """Test the complete two-layer gain condition; halve L until it holds.

    Returns (ok, scaled_L). With auto_adjust the gain is halved uniformly up
    to MAX_HALVINGS times; exhausting the budget raises GainExhaustedError.
    Without auto_adjust the untouched gain is returned with ok as measured.
    """
    w_out_hat = np.asarray(w_out_hat, dtype=float)
    p = w_out_hat.shape[0]
    l_vec = gains.l_vector(p)
    f = kind_out.derivative_bound
    ss_phi = float(np.dot(phi_hat, phi_hat))
    ss_z = float(np.dot(z_in, z_in))
    a = w_out_hat * np.asarray(theta, dtype=float)[None, :]   # Wout Theta
    g = a @ a.T

    def positive_definite(l_v):
        m = (2.0 / f) * np.diag(l_v)
        m -= gains.alpha1 * ss_phi * np.diag(l_v * l_v)
        m -= gains.alpha0 * ss_z * (l_v[:, None] * g * l_v[None, :])
        try:
            np.linalg.cholesky(m)
            return True
        except np.linalg.LinAlgError:
            return False

    if positive_definite(l_vec):
        return True, l_vec
    if not gains.auto_adjust:
        return False, l_vec
    for _ in range(MAX_HALVINGS):
        l_vec = l_vec / 2.0
        if positive_definite(l_vec):
            return True, l_vec
    raise GainExhaustedError(
        f"gain condition unsatisfied after {MAX_HALVINGS} halvings")


def two_layer_step(slfn, z_in, target, gains):
    """One increment of the two-layer law; returns (new Slfn, trace).

    Both weight updates read the same pre-update output weights and Theta
    (simultaneous update); the governor runs first when auto_adjust is on.
    """
    z_in = np.asarray(z_in, dtype=float)
    target = np.asarray(target, dtype=float)
    w_in, w_out = slfn.input_weights, slfn.output_weights
    preact = w_in @ z_in
    phi_hat = slfn.hidden_kind.apply(preact)
    y_hat = slfn.output_kind.apply(w_out @ phi_hat)
    e = target - y_hat
    theta = theta_diag(slfn.hidden_kind, preact)

    l_req = gains.l_vector(w_out.shape[0])
    ok, l_used = two_layer_gain_check(w_out, phi_hat, z_in, theta,
                                      slfn.output_kind, gains)
    halvings = int(np.round(np.log2(l_req[0] / l_used[0]))) if l_used[0] > 0 else 0

    le = l_used * e
    w_out_new = w_out + gains.alpha1 * np.outer(le, phi_hat)
    w_in_new = w_in + gains.alpha0 * np.outer(theta * (w_out.T @ le), z_in)
    if not (np.all(np.isfinite(w_out_new)) and np.all(np.isfinite(w_in_new))):
        raise NumericError("two_layer_step produced non-finite weights",
                           state=(w_in, w_out))
    new = Slfn(w_in_new, w_out_new, slfn.hidden_kind, slfn.output_kind)
    clipped = bool(np.any(l_used < l_req))
    return new, StepTrace(error=e, gain_clipped=clipped, applied_L=l_used,
                          halvings=halvings, check_ok=ok)
