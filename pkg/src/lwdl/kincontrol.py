"""Simulated 3-DOF arm, Jacobian-approximating network, and the online
resolved-rate control loop that trains it from feedback error.

The arm (base rotation plus two pitch joints) is the simulation oracle: its
forward kinematics and analytic Jacobian stand in for the physical robot and
are never visible to the learner. The learner sees only joint states and
task-space measurements.

The network represents the 3x3 Jacobian through shared hidden features
phi(q) and one column head per joint:

    Jhat(q) = [ W1 phi(q) | W2 phi(q) | W3 phi(q) ],   xdot_hat = Jhat(q) qdot

Stacking the heads as Wcat = [W1 W2 W3] makes xdot_hat = Wcat (qdot kron phi),
so the one-layer law applies verbatim with regressor psi = qdot kron phi, and
the two-layer law applies with the per-sample effective output weights
B(qdot) = sum_l qdot_l Wl and Theta from the hidden derivative. Output
activation is identity throughout (f_sigma = 1).

The control law is resolved-rate: qdot = pinv(Jhat) (xdot_d - alpha dx); the
online training error is eps = d(dx)/dt + alpha dx, which equals
(J - Jhat) qdot whenever Jhat is full rank.
"""

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import activations
from .data import Dataset
from .errors import FormatError, LwdlError, ShapeError
from .network import random_weights
from .numerics import pinv
from .updates import (GainState, one_layer_step, theta_diag,
                      two_layer_gain_check)

log = logging.getLogger(__name__)

N_JOINTS = 3
KINLOG_COLUMNS = ("t", "q1", "q2", "q3", "qd1", "qd2", "qd3",
                  "x1", "x2", "x3", "xd1", "xd2", "xd3",
                  "ex1", "ex2", "ex3", "eps_norm", "gain_event")
JAC_MAGIC = b"LWDLJAC1\n"


# --- arm oracle ---------------------------------------------------------------

@dataclass
class ArmModel:
    """Ground-truth kinematics; link lengths chosen so C1/C2 sit inside the
    workspace. Joint limits clamp with a logged warning rather than fail."""

    l1: float = 0.1625
    l2: float = 0.425
    l3: float = 0.3922
    limit: float = 2.0 * np.pi

    def clamp(self, q):
        q = np.asarray(q, dtype=float)
        clamped = np.clip(q, -self.limit, self.limit)
        if np.any(clamped != q):
            log.warning("joint limit hit: %s clamped to %s", q, clamped)
        return clamped

    def fk(self, q):
        q1, q2, q3 = self.clamp(q)
        r = self.l2 * np.cos(q2) + self.l3 * np.cos(q2 + q3)
        h = self.l2 * np.sin(q2) + self.l3 * np.sin(q2 + q3)
        return np.array([np.cos(q1) * r, np.sin(q1) * r, self.l1 + h])

    def jacobian(self, q):
        q1, q2, q3 = self.clamp(q)
        c1, s1 = np.cos(q1), np.sin(q1)
        r = self.l2 * np.cos(q2) + self.l3 * np.cos(q2 + q3)
        h = self.l2 * np.sin(q2) + self.l3 * np.sin(q2 + q3)
        dr3 = -self.l3 * np.sin(q2 + q3)
        dh3 = self.l3 * np.cos(q2 + q3)
        return np.array([
            [-s1 * r, -c1 * h, c1 * dr3],
            [c1 * r, -s1 * h, s1 * dr3],
            [0.0, r, dh3],
        ])

    def ik(self, x_target, q_guess, iters=200, tol=1e-10):
        """Damped-least-squares inverse kinematics (simulation setup only)."""
        q = np.asarray(q_guess, dtype=float).copy()
        for _ in range(iters):
            err = np.asarray(x_target, dtype=float) - self.fk(q)
            if np.linalg.norm(err) < tol:
                break
            j = self.jacobian(q)
            q = q + np.linalg.solve(j.T @ j + 1e-9 * np.eye(3), j.T @ err)
        return q


# --- desired trajectory -------------------------------------------------------

@dataclass
class TrajectorySpec:
    """3D circle with a 5-phase speed plan: rest, ramp up, full speed,
    ramp down, rest. The angle is the closed-form integral of the phase
    speed, so velocity is continuous at phase boundaries."""

    center: np.ndarray
    cos_coef: np.ndarray
    sin_coef: np.ndarray
    omega_full: float = 2.0 * np.pi / 30.0
    direction: float = 1.0
    rest1: float = 5.0
    ramp_up: float = 30.0
    full: float = 90.0
    ramp_down: float = 30.0
    rest2: float = 5.0

    @classmethod
    def c1(cls, speedup=1.0):
        """Training circle: center [-0.4, 0, 0.5], 2 rpm at full speed."""
        return cls(center=np.array([-0.4, 0.0, 0.5]),
                   cos_coef=np.array([-0.06, 0.2, 0.02]),
                   sin_coef=np.array([-0.18, -0.02, 0.06]),
                   omega_full=speedup * 2.0 * np.pi / 30.0)

    @classmethod
    def c2(cls, speedup=1.0):
        """Generalization circle: radius 0.15 (scale 0.75), plane 0.1 lower
        on x3, 3 rpm, opposite direction."""
        return cls(center=np.array([-0.4, 0.0, 0.4]),
                   cos_coef=0.75 * np.array([-0.06, 0.2, 0.02]),
                   sin_coef=0.75 * np.array([-0.18, -0.02, 0.06]),
                   omega_full=speedup * 2.0 * np.pi / 20.0,
                   direction=-1.0)

    @property
    def duration(self):
        return self.rest1 + self.ramp_up + self.full + self.ramp_down + self.rest2

    def full_speed_window(self):
        return self.rest1 + self.ramp_up, self.rest1 + self.ramp_up + self.full

    def angle_speed(self, t):
        """(theta, omega) at time t; theta is the integral of the phase plan."""
        w = self.omega_full
        t1 = self.rest1
        t2 = t1 + self.ramp_up
        t3 = t2 + self.full
        t4 = t3 + self.ramp_down
        if t < t1:
            theta, omega = 0.0, 0.0
        elif t < t2:
            u = t - t1
            theta = 0.5 * w * u * u / self.ramp_up
            omega = w * u / self.ramp_up
        elif t < t3:
            theta = 0.5 * w * self.ramp_up + w * (t - t2)
            omega = w
        elif t < t4:
            u = t - t3
            theta = (0.5 * w * self.ramp_up + w * self.full
                     + w * u - 0.5 * w * u * u / self.ramp_down)
            omega = w * (1.0 - u / self.ramp_down)
        else:
            theta = 0.5 * w * self.ramp_up + w * self.full + 0.5 * w * self.ramp_down
            omega = 0.0
        return self.direction * theta, self.direction * omega

    def desired_state(self, t):
        """(x_d, xdot_d) at time t."""
        theta, omega = self.angle_speed(t)
        c, s = np.cos(theta), np.sin(theta)
        x_d = self.center + self.cos_coef * c + self.sin_coef * s
        xdot_d = (-self.cos_coef * s + self.sin_coef * c) * omega
        return x_d, xdot_d


# --- Jacobian network ---------------------------------------------------------

@dataclass
class JacobianNet:
    """Hidden stack on q plus stacked column heads Wcat (3 x N_JOINTS*h)."""

    hidden_weights: list               # [W1 (h1 x 3)] or [W1, W2]
    hidden_kinds: list                 # Activation per hidden layer
    heads: np.ndarray                  # (3, N_JOINTS * h_last)

    def __post_init__(self):
        h_last = self.hidden_weights[-1].shape[0]
        if self.heads.shape != (3, N_JOINTS * h_last):
            raise ShapeError(f"heads shape {self.heads.shape} "
                             f"!= (3, {N_JOINTS * h_last})")

    @property
    def h_last(self):
        return self.hidden_weights[-1].shape[0]

    def heads3(self):
        """Heads viewed as (3 outputs, N_JOINTS, h_last)."""
        return self.heads.reshape(3, N_JOINTS, self.h_last)

    def slfn_input(self, q):
        """Input of the trainable (last) hidden layer: q, or the frozen
        first-layer features after growth."""
        z = np.asarray(q, dtype=float)
        for w, kind in zip(self.hidden_weights[:-1], self.hidden_kinds[:-1]):
            z = kind.apply(w @ z)
        return z

    def features(self, q):
        z = self.slfn_input(q)
        return self.hidden_kinds[-1].apply(self.hidden_weights[-1] @ z)

    def copy(self):
        return JacobianNet([w.copy() for w in self.hidden_weights],
                           list(self.hidden_kinds), self.heads.copy())


def init_jacobian_net(hidden_units=12, seed=0, hidden_kind=None):
    kind = hidden_kind or activations.MODIFIED_SOFTPLUS
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, 91])
    w1 = random_weights(hidden_units, N_JOINTS, rng)
    heads = random_weights(3, N_JOINTS * hidden_units, rng)
    return JacobianNet([w1], [kind], heads)


def jacobian_from_net(net, q):
    """Assemble the 3x3 Jacobian estimate from the column heads."""
    phi = net.features(q)
    return net.heads3() @ phi        # (3, N_JOINTS)


def predict_xdot(net, q, qdot):
    return jacobian_from_net(net, q) @ np.asarray(qdot, dtype=float)


def effective_output_weights(net, qdot):
    """B(qdot) = sum_l qdot_l Wl; d xdot_hat / d phi."""
    return np.einsum("olh,l->oh", net.heads3(), np.asarray(qdot, dtype=float))


def save_jacobian_net(net, path):
    header = {"hidden_dims": [w.shape[0] for w in net.hidden_weights],
              "hidden": [k.name for k in net.hidden_kinds]}
    with open(path, "wb") as f:
        f.write(JAC_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for w in net.hidden_weights:
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(net.heads, dtype="<f8").tobytes())


def load_jacobian_net(path):
    with open(path, "rb") as f:
        if f.read(len(JAC_MAGIC)) != JAC_MAGIC:
            raise FormatError(f"{path}: bad jacobian checkpoint magic")
        header = json.loads(f.readline().decode())
        dims = [N_JOINTS] + [int(d) for d in header["hidden_dims"]]
        kinds = [activations.get(n) for n in header["hidden"]]
        weights = []
        for j in range(1, len(dims)):
            raw = f.read(8 * dims[j] * dims[j - 1])
            if len(raw) != 8 * dims[j] * dims[j - 1]:
                raise FormatError(f"{path}: truncated hidden weights")
            weights.append(np.frombuffer(raw, dtype="<f8").reshape(dims[j], dims[j - 1]).copy())
        raw = f.read(8 * 3 * N_JOINTS * dims[-1])
        heads = np.frombuffer(raw, dtype="<f8").reshape(3, N_JOINTS * dims[-1]).copy()
    return JacobianNet(weights, kinds, heads)


# --- configuration and logging -------------------------------------------------

@dataclass
class KinConfig:
    alpha: float = 4.0               # task-space feedback gain
    dt: float = 0.07                 # sampling period (s)
    qdot_limit: float = 3.0          # per-joint clamp (rad/s)
    gains: GainState = field(default_factory=lambda: GainState(L=0.05))
    update: str = "two_layer"        # none | last_layer | two_layer
    pretrain_loops: int = 2
    finetune_loops: int = 10
    noise_std: float = 0.0           # additive noise on manual xdot samples
    blowup_norm: float = 0.5         # |dx| beyond this the episode is lost
    seed: int = 0


@dataclass
class KinLog:
    """Time-indexed record of one control episode."""

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    x: np.ndarray
    x_d: np.ndarray
    err: np.ndarray                  # x - x_d
    eps_norm: np.ndarray
    gain_event: np.ndarray           # governor halvings applied that step
    xdot: np.ndarray                 # true task velocity (for data reuse)
    diverged: bool = False

    def full_speed_mask(self, traj):
        lo, hi = traj.full_speed_window()
        return (self.t >= lo) & (self.t < hi)

    def rms_error(self, mask=None):
        e = self.err if mask is None else self.err[mask]
        if len(e) == 0:
            return float("nan")
        return float(np.sqrt(np.mean(np.sum(e * e, axis=1))))

    def peak_error(self, mask=None):
        e = self.err if mask is None else self.err[mask]
        if len(e) == 0:
            return float("nan")
        return float(np.max(np.linalg.norm(e, axis=1)))

    def as_dataset(self):
        """(q, qdot) -> xdot samples for offline reuse."""
        return Dataset(np.hstack([self.q, self.qdot]), self.xdot)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(KINLOG_COLUMNS)
            for i in range(len(self.t)):
                row = ([f"{self.t[i]:.17g}"]
                       + [f"{v:.17g}" for v in self.q[i]]
                       + [f"{v:.17g}" for v in self.qdot[i]]
                       + [f"{v:.17g}" for v in self.x[i]]
                       + [f"{v:.17g}" for v in self.x_d[i]]
                       + [f"{v:.17g}" for v in self.err[i]]
                       + [f"{self.eps_norm[i]:.17g}", int(self.gain_event[i])])
                writer.writerow(row)


# --- control and training -------------------------------------------------------

def control_step(net, q, x, t, traj, alpha, qdot_limit=3.0):
    """Resolved-rate command qdot = pinv(Jhat) (xdot_d - alpha dx), clamped."""
    x_d, xdot_d = traj.desired_state(t)
    dx = np.asarray(x, dtype=float) - x_d
    j_hat = jacobian_from_net(net, q)
    qdot = pinv(j_hat) @ (xdot_d - alpha * dx)
    clipped = np.clip(qdot, -qdot_limit, qdot_limit)
    if np.any(clipped != qdot):
        log.warning("qdot clamped at t=%.2f: %s", t, qdot)
    return clipped


def _head_step(net, q, qdot, eps, gains):
    """One-layer law on the stacked heads with error eps; returns halvings=0."""
    psi = np.kron(np.asarray(qdot, dtype=float), net.features(q))
    pred = net.heads @ psi
    net.heads, trace = one_layer_step(net.heads, psi, pred + eps,
                                      activations.IDENTITY, gains)
    return trace


def _two_layer_jac_step(net, q, qdot, eps, gains):
    """Two-layer law on (last hidden, heads) with error eps.

    Returns (trace-like tuple): (applied_L, halvings, ok). Both updates read
    the pre-update heads, mirroring the simultaneous two-layer update.
    """
    qdot = np.asarray(qdot, dtype=float)
    z = net.slfn_input(q)
    w_hid = net.hidden_weights[-1]
    preact = w_hid @ z
    kind = net.hidden_kinds[-1]
    phi = kind.apply(preact)
    theta = theta_diag(kind, preact)
    psi = np.kron(qdot, phi)
    b_eff = effective_output_weights(net, qdot)

    l_req = gains.l_vector(3)
    ok, l_used = two_layer_gain_check(b_eff, psi, z, theta,
                                      activations.IDENTITY, gains)
    halvings = int(np.round(np.log2(l_req[0] / l_used[0]))) if l_used[0] > 0 else 0

    le = l_used * eps
    new_heads = net.heads + gains.alpha1 * np.outer(le, psi)
    new_hidden = w_hid + gains.alpha0 * np.outer(theta * (b_eff.T @ le), z)
    if not (np.all(np.isfinite(new_heads)) and np.all(np.isfinite(new_hidden))):
        raise LwdlError("two-layer jacobian step produced non-finite weights")
    net.heads = new_heads
    net.hidden_weights[-1] = new_hidden
    return l_used, halvings, ok


def collect_manual_data(arm, traj, cfg):
    """Guided episode with the ground-truth Jacobian; samples (q, qdot) -> xdot.

    Stands in for manually moving the robot around the desired path; optional
    Gaussian noise on xdot emulates camera differentiation.
    """
    rng = np.random.default_rng([cfg.seed & 0x7FFFFFFF, 101])
    q = arm.ik(traj.desired_state(0.0)[0], np.array([2.0, 0.6, 1.2]))
    inputs, targets = [], []
    n_steps = int(np.ceil(traj.duration / cfg.dt))
    for i in range(n_steps):
        t = i * cfg.dt
        x = arm.fk(q)
        x_d, xdot_d = traj.desired_state(t)
        qdot = pinv(arm.jacobian(q)) @ (xdot_d - cfg.alpha * (x - x_d))
        qdot = np.clip(qdot, -cfg.qdot_limit, cfg.qdot_limit)
        xdot = arm.jacobian(q) @ qdot
        if cfg.noise_std > 0.0:
            xdot = xdot + rng.normal(scale=cfg.noise_std, size=3)
        inputs.append(np.concatenate([q, qdot]))
        targets.append(xdot)
        q = q + qdot * cfg.dt
    return Dataset(np.array(inputs), np.array(targets))


def train_jacobian_offline(net, dataset, cfg):
    """One-layer pre-training of the heads then two-layer fine-tuning."""
    net = net.copy()
    pre_gains = GainState(L=1e9, auto_adjust=True)
    for loop in range(cfg.pretrain_loops):
        order = np.random.default_rng(
            [cfg.seed & 0x7FFFFFFF, 111, loop]).permutation(len(dataset))
        for k in order:
            q, qdot = dataset.inputs[k, :3], dataset.inputs[k, 3:]
            eps = dataset.targets[k] - predict_xdot(net, q, qdot)
            _head_step(net, q, qdot, eps, pre_gains)
    gains = cfg.gains.with_l(cfg.gains.l_vector(3))
    for loop in range(cfg.finetune_loops):
        order = np.random.default_rng(
            [cfg.seed & 0x7FFFFFFF, 112, loop]).permutation(len(dataset))
        for k in order:
            q, qdot = dataset.inputs[k, :3], dataset.inputs[k, 3:]
            eps = dataset.targets[k] - predict_xdot(net, q, qdot)
            l_used, halvings, _ = _two_layer_jac_step(net, q, qdot, eps, gains)
            if halvings:
                gains = gains.with_l(l_used)
    return net


def offline_residual(net, dataset):
    """Mean ||xdot - Jhat qdot|| over a dataset."""
    errs = [np.linalg.norm(dataset.targets[k]
                           - predict_xdot(net, dataset.inputs[k, :3], dataset.inputs[k, 3:]))
            for k in range(len(dataset))]
    return float(np.mean(errs)) if errs else float("nan")


def simulate_online(arm, net, traj, cfg, start_q=None):
    """Closed-loop episode; returns (trained net, KinLog).

    Per step: measure x, issue the resolved-rate command, form the online
    feedback error eps = d(dx) + alpha dx, update weights per cfg.update,
    Euler-integrate the joints. Divergence (non-finite state, pinv failure,
    or |dx| beyond cfg.blowup_norm) ends the episode with the flag set
    rather than raising.
    """
    net = net.copy()
    if start_q is None:
        q = arm.ik(traj.desired_state(0.0)[0], np.array([2.0, 0.6, 1.2]))
    else:
        q = np.asarray(start_q, dtype=float).copy()
    gains = cfg.gains.with_l(cfg.gains.l_vector(3))
    n_steps = int(np.ceil(traj.duration / cfg.dt))
    rows = {k: [] for k in ("t", "q", "qdot", "x", "x_d", "err", "eps", "gain", "xdot")}
    diverged = False
    for i in range(n_steps):
        t = i * cfg.dt
        x = arm.fk(q)
        x_d, xdot_d = traj.desired_state(t)
        dx = x - x_d
        halvings = 0
        try:
            if not np.all(np.isfinite(q)) or np.linalg.norm(dx) > cfg.blowup_norm:
                raise LwdlError("state blow-up")
            qdot = control_step(net, q, x, t, traj, cfg.alpha, cfg.qdot_limit)
            xdot = arm.jacobian(q) @ qdot
            eps = (xdot - xdot_d) + cfg.alpha * dx
            if cfg.update == "last_layer":
                trace = _head_step(net, q, qdot, eps, gains)
                if trace.gain_clipped:
                    halvings = 1
            elif cfg.update == "two_layer":
                l_used, halvings, _ = _two_layer_jac_step(net, q, qdot, eps, gains)
                if halvings:
                    gains = gains.with_l(l_used)
            elif cfg.update != "none":
                raise ValueError(f"unknown update mode {cfg.update!r}")
        except (LwdlError, np.linalg.LinAlgError) as exc:
            log.warning("episode diverged at t=%.2f: %s", t, exc)
            diverged = True
            break
        rows["t"].append(t)
        rows["q"].append(q.copy())
        rows["qdot"].append(qdot)
        rows["x"].append(x)
        rows["x_d"].append(x_d)
        rows["err"].append(dx)
        rows["eps"].append(float(np.linalg.norm(eps)))
        rows["gain"].append(halvings)
        rows["xdot"].append(xdot)
        q = q + qdot * cfg.dt

    def arr3(key):
        return np.array(rows[key], dtype=float).reshape(-1, 3)

    return net, KinLog(
        t=np.array(rows["t"]), q=arr3("q"), qdot=arr3("qdot"),
        x=arr3("x"), x_d=arr3("x_d"), err=arr3("err"),
        eps_norm=np.array(rows["eps"]), gain_event=np.array(rows["gain"], dtype=int),
        xdot=arr3("xdot"), diverged=diverged)


def mix_datasets(manual, online, seed):
    """Half of each dataset, shuffled together, for post-growth retraining."""
    half_m = manual.shuffled(seed).subset(len(manual) // 2)
    half_o = online.shuffled(seed + 1).subset(len(online) // 2)
    merged = Dataset(np.vstack([half_m.inputs, half_o.inputs]),
                     np.vstack([half_m.targets, half_o.targets]))
    return merged.shuffled(seed + 2)


def grow_second_hidden_layer(net, manual_data, online_data, cfg, hidden_units=12):
    """Freeze the first hidden layer, stack a fresh one, retrain offline on the
    50/50 manual+online mix. The subsequent online phase is simulate_online."""
    if len(net.hidden_weights) != 1:
        raise ShapeError("growth expects a single-hidden-layer jacobian net")
    rng = np.random.default_rng([cfg.seed & 0x7FFFFFFF, 121])
    kind = net.hidden_kinds[-1]
    h_prev = net.h_last
    w2 = random_weights(hidden_units, h_prev, rng)
    heads = random_weights(3, N_JOINTS * hidden_units, rng)
    grown = JacobianNet([net.hidden_weights[0].copy(), w2],
                        [net.hidden_kinds[0], kind], heads)
    mix = mix_datasets(manual_data, online_data, cfg.seed)
    return train_jacobian_offline(grown, mix, cfg)
