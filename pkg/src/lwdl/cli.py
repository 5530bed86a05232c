"""Experiment driver: train/evaluate classifiers, run robot simulations.

Commands
--------
train    --method fpl|inverse|sgd, dataset flags, --repeat for seed sweeps
eval     accuracy / error statistics of a checkpoint on a dataset
robot    collect | offline | online | grow | test-c2 pipeline
fixture  digits | features: generate offline dataset fixtures

Options may come from a flat key=value config file (--config); command-line
flags override file entries, and every run writes its resolved configuration
next to its outputs. Identical config + seed reproduces byte-identical CSVs.
The environment variable LWDL_THREADS caps evaluation worker threads.
"""

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import activations, baselines, data, fpl, inverse_layerwise, kincontrol, network
from .errors import LwdlError
from .updates import GainState


def _eval_outputs(net, inputs):
    """Batch forward, fanned out over LWDL_THREADS worker threads."""
    threads = max(1, int(os.environ.get("LWDL_THREADS", "4")))
    if threads == 1 or len(inputs) < 256:
        return net.forward(inputs)
    chunks = np.array_split(np.arange(len(inputs)), threads)
    out = [None] * len(chunks)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(net.forward, inputs[c]): i
                   for i, c in enumerate(chunks) if len(c)}
        for fut, i in futures.items():
            out[i] = fut.result()
    return np.vstack([o for o in out if o is not None])


def evaluate(net, dataset):
    """(accuracy, mean squared error) of a network on a dataset."""
    outputs = _eval_outputs(net, dataset.inputs)
    mse = float(np.mean(np.sum((outputs - dataset.targets) ** 2, axis=1)))
    acc = fpl.classification_accuracy(outputs, dataset.targets)
    return acc, mse


def _load_config_file(path):
    cfg = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise LwdlError(f"{path}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def _resolve(args, file_keys):
    """Merge config file entries under argparse flags (flags win)."""
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        for key, value in file_cfg.items():
            dest = key.replace("-", "_")
            if dest not in file_keys:
                raise LwdlError(f"unknown config key {key!r}")
            if getattr(args, dest, None) is None:
                default = file_keys[dest]
                setattr(args, dest, type_of(default)(value) if default is not None else value)
    for dest, default in file_keys.items():
        if getattr(args, dest, None) is None and default is not None:
            setattr(args, dest, default)
    return args


def type_of(default):
    if isinstance(default, bool):
        return lambda s: s.lower() in ("1", "true", "yes", "on")
    return type(default)


def _write_resolved_config(args, out_dir, keys):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved-config.txt"), "w") as f:
        for key in sorted(keys):
            f.write(f"{key}={getattr(args, key)}\n")


def _load_train_test(args):
    if not (args.features or args.data_dir or args.train_images):
        raise LwdlError("no dataset given: use --features, --data-dir, "
                        "or --train-images/--train-labels/--test-images/--test-labels")
    if args.features:
        full = data.load_feature_table(args.features)
        n_test = int(args.test_fraction * len(full))
        shuffled = full.shuffled(args.seed + 7)
        return shuffled.subset(np.arange(n_test, len(shuffled))), shuffled.subset(n_test)
    if args.data_dir:
        train, test = data.load_idx_dir(args.data_dir)
    else:
        train = data.load_idx(args.train_images, args.train_labels)
        test = data.load_idx(args.test_images, args.test_labels)
    if args.train_limit:
        train = train.subset(int(args.train_limit))
    return train, test


def _parse_dims(text):
    return [int(d) for d in text.split(",")]


TRAIN_KEYS = {
    "method": "fpl", "dims": "784,300,100,50,10", "hidden": "relu",
    "output": "sigmoid", "gain": 0.01, "gain_decay": 0.9, "alpha0": 1.0,
    "alpha1": 1.0, "safety": 0.9, "governor": True, "loops": 28,
    "pretrain_loops": 2, "epochs": 20, "lr": 0.05, "seed": 0, "repeat": 1,
    "train_limit": 0, "test_fraction": 0.2, "out": "runs/train",
    "data_dir": None, "train_images": None, "train_labels": None,
    "test_images": None, "test_labels": None, "features": None,
}


def _gains(args, p=None):
    return GainState(L=float(args.gain), alpha0=float(args.alpha0),
                     alpha1=float(args.alpha1), safety=float(args.safety),
                     auto_adjust=bool(args.governor))


def _train_once(args, seed, train, test, out_dir):
    dims = _parse_dims(args.dims)
    hidden = activations.get(args.hidden)
    output = activations.get(args.output)
    if args.method == "fpl":
        cfg = fpl.FplConfig(pretrain_loops=int(args.pretrain_loops),
                            finetune_loops=int(args.loops), gains=_gains(args),
                            gain_decay=float(args.gain_decay), seed=seed)
        net, history = fpl.run_fpl(dims, hidden, output, train, cfg, test)
        fpl.write_history_csv(history, os.path.join(out_dir, f"history-seed{seed}.csv"))
        reported = fpl.max_test_accuracy(history, len(dims) - 2)
    elif args.method == "inverse":
        cfg = inverse_layerwise.InverseLwConfig(
            loops_per_layer=int(args.loops), gains=_gains(args), seed=seed)
        init = network.init_random(dims, hidden, output, seed)
        net, history = inverse_layerwise.run_inverse_layerwise(init, train, cfg)
        inverse_layerwise.write_history_csv(
            history, os.path.join(out_dir, f"history-seed{seed}.csv"))
        reported = None
    elif args.method == "sgd":
        net = network.init_random(dims, hidden, output, seed)
        rows = []

        def cb(epoch, current, err):
            acc_tr, _ = evaluate(current, train)
            acc_te, _ = evaluate(current, test)
            rows.append((epoch + 1, err, acc_tr, acc_te))

        baselines.train_sgd(net, train, int(args.epochs), float(args.lr), seed, cb)
        with open(os.path.join(out_dir, f"history-seed{seed}.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(("epoch", "train_error", "train_accuracy", "test_accuracy"))
            for row in rows:
                writer.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])
        reported = max(r[3] for r in rows) if rows else None
    else:
        raise LwdlError(f"unknown method {args.method!r}")

    train_acc, train_mse = evaluate(net, train)
    test_acc, test_mse = evaluate(net, test)
    if reported is None or np.isnan(reported):
        reported = test_acc
    network.save_checkpoint(net, os.path.join(out_dir, f"checkpoint-seed{seed}.lwnet"))
    return {"seed": seed, "train_accuracy": train_acc, "test_accuracy": test_acc,
            "reported_test_accuracy": reported, "train_mse": train_mse,
            "test_mse": test_mse}


def cmd_train(args):
    args = _resolve(args, TRAIN_KEYS)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    _write_resolved_config(args, out_dir, TRAIN_KEYS)
    train, test = _load_train_test(args)
    results = []
    for r in range(int(args.repeat)):
        results.append(_train_once(args, int(args.seed) + r, train, test, out_dir))
    fields = ["seed", "train_accuracy", "test_accuracy",
              "reported_test_accuracy", "train_mse", "test_mse"]
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(fields)
        for row in results:
            writer.writerow([row["seed"]] + [f"{row[k]:.17g}" for k in fields[1:]])
        if len(results) > 1:
            writer.writerow(["mean"] + [
                f"{np.mean([row[k] for row in results]):.17g}" for k in fields[1:]])
    best = results[-1]
    print(f"method={args.method} test_accuracy={best['test_accuracy']:.4f} "
          f"reported={best['reported_test_accuracy']:.4f}")
    return 0


EVAL_KEYS = {"checkpoint": None, "data_dir": None, "train_images": None,
             "train_labels": None, "test_images": None, "test_labels": None,
             "features": None, "split": "test", "seed": 0,
             "train_limit": 0, "test_fraction": 0.2}


def cmd_eval(args):
    args = _resolve(args, EVAL_KEYS)
    net = network.load_checkpoint(args.checkpoint)
    train, test = _load_train_test(args)
    dataset = test if args.split == "test" else train
    if dataset.input_dim != net.dims[0]:
        raise LwdlError(f"checkpoint expects {net.dims[0]} inputs, "
                        f"dataset has {dataset.input_dim}")
    acc, mse = evaluate(net, dataset)
    print(f"split,accuracy,mse\n{args.split},{acc:.17g},{mse:.17g}")
    return 0


ROBOT_KEYS = {
    "out": "runs/robot", "seed": 0, "alpha": 4.0, "dt": 0.07, "gain": 0.05,
    "governor": True, "update": "two_layer", "speedup": 1.0, "circle": "c1",
    "pretrain_loops": 2, "finetune_loops": 10, "noise": 0.0, "qdot_limit": 3.0,
    "checkpoint": None, "net_out": None, "samples": None, "online_samples": None,
    "hidden_units": 12,
}


def _kin_cfg(args):
    return kincontrol.KinConfig(
        alpha=float(args.alpha), dt=float(args.dt),
        qdot_limit=float(args.qdot_limit),
        gains=GainState(L=float(args.gain), auto_adjust=bool(args.governor)),
        update=args.update, pretrain_loops=int(args.pretrain_loops),
        finetune_loops=int(args.finetune_loops), noise_std=float(args.noise),
        seed=int(args.seed))


def _traj(args):
    maker = kincontrol.TrajectorySpec.c1 if args.circle == "c1" else kincontrol.TrajectorySpec.c2
    return maker(speedup=float(args.speedup))


def cmd_robot(args):
    args = _resolve(args, ROBOT_KEYS)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    _write_resolved_config(args, out_dir, ROBOT_KEYS)
    arm = kincontrol.ArmModel()
    cfg = _kin_cfg(args)
    traj = _traj(args)

    def samples_csv(dataset, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(("q1", "q2", "q3", "qd1", "qd2", "qd3",
                             "xd1", "xd2", "xd3"))
            for i in range(len(dataset)):
                writer.writerow([f"{v:.17g}" for v in
                                 np.concatenate([dataset.inputs[i], dataset.targets[i]])])

    def samples_from_csv(path):
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return data.Dataset(table[:, :6], table[:, 6:])

    needs = {"offline": ("samples",), "online": ("checkpoint",),
             "test-c2": ("checkpoint",),
             "grow": ("checkpoint", "samples", "online_samples")}
    for attr in needs.get(args.subcommand, ()):
        if not getattr(args, attr):
            raise LwdlError(f"robot {args.subcommand} needs --{attr.replace('_', '-')}")

    if args.subcommand == "collect":
        dataset = kincontrol.collect_manual_data(arm, traj, cfg)
        samples_csv(dataset, os.path.join(out_dir, "manual_samples.csv"))
        print(f"collected {len(dataset)} samples")
    elif args.subcommand == "offline":
        dataset = samples_from_csv(args.samples)
        net = kincontrol.init_jacobian_net(int(args.hidden_units), seed=int(args.seed))
        net = kincontrol.train_jacobian_offline(net, dataset, cfg)
        kincontrol.save_jacobian_net(net, args.net_out or os.path.join(out_dir, "jacnet.lwjac"))
        print(f"offline residual {kincontrol.offline_residual(net, dataset):.6f}")
    elif args.subcommand in ("online", "test-c2"):
        net = kincontrol.load_jacobian_net(args.checkpoint)
        if args.subcommand == "test-c2":
            traj = kincontrol.TrajectorySpec.c2(speedup=float(args.speedup))
            start = arm.ik(kincontrol.TrajectorySpec.c1().desired_state(0.0)[0],
                           np.array([2.0, 0.6, 1.2]))
        else:
            start = None
        net, klog = kincontrol.simulate_online(arm, net, traj, cfg, start_q=start)
        klog.to_csv(os.path.join(out_dir, "kinlog.csv"))
        if len(klog.t):
            samples_csv(klog.as_dataset(), os.path.join(out_dir, "online_samples.csv"))
        if args.net_out:
            kincontrol.save_jacobian_net(net, args.net_out)
        mask = klog.full_speed_mask(traj)
        with open(os.path.join(out_dir, "episode_summary.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(("diverged", "rms_error_full_speed", "peak_error_full_speed"))
            writer.writerow([int(klog.diverged), f"{klog.rms_error(mask):.17g}",
                             f"{klog.peak_error(mask):.17g}"])
        print(f"diverged={klog.diverged} rms_full_speed={klog.rms_error(mask):.6f}")
    elif args.subcommand == "grow":
        net = kincontrol.load_jacobian_net(args.checkpoint)
        manual = samples_from_csv(args.samples)
        online = samples_from_csv(args.online_samples)
        net = kincontrol.grow_second_hidden_layer(net, manual, online, cfg,
                                                  hidden_units=int(args.hidden_units))
        kincontrol.save_jacobian_net(net, args.net_out or os.path.join(out_dir, "jacnet2.lwjac"))
        print("grown to two hidden layers")
    else:
        raise LwdlError(f"unknown robot subcommand {args.subcommand!r}")
    return 0


FIXTURE_KEYS = {"out": "data/fixtures", "kind": "digits", "n_train": 12000,
                "n_test": 10000, "seed": 0}


def cmd_fixture(args):
    args = _resolve(args, FIXTURE_KEYS)
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "digits":
        paths = data.make_digits_idx(args.out, int(args.n_train),
                                     int(args.n_test), int(args.seed))
        print("\n".join(paths))
    elif args.kind == "features":
        train, test = data.synth_feature_table(int(args.n_train), int(args.n_test),
                                               int(args.seed))
        data.save_feature_table(train, os.path.join(args.out, "features-train.csv"))
        data.save_feature_table(test, os.path.join(args.out, "features-test.csv"))
        print(os.path.join(args.out, "features-train.csv"))
    else:
        raise LwdlError(f"unknown fixture kind {args.kind!r}")
    return 0


def _add_common(sub, keys):
    sub.add_argument("--config", default=None, help="flat key=value config file")
    for dest, default in keys.items():
        flag = "--" + dest.replace("_", "-")
        if isinstance(default, bool):
            sub.add_argument(flag, default=None,
                             type=lambda s: s.lower() in ("1", "true", "yes", "on"),
                             help=f"default {default}")
        else:
            sub.add_argument(flag, default=None, help=f"default {default}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lwdl",
        description="Layer-wise deep learning with convergence-guaranteed updates.")
    subs = parser.add_subparsers(dest="command", required=True)

    train = subs.add_parser("train", help="train a classifier")
    _add_common(train, TRAIN_KEYS)
    train.set_defaults(func=cmd_train)

    ev = subs.add_parser("eval", help="evaluate a checkpoint")
    _add_common(ev, EVAL_KEYS)
    ev.set_defaults(func=cmd_eval)

    robot = subs.add_parser("robot", help="kinematic control pipeline")
    robot.add_argument("subcommand",
                       choices=["collect", "offline", "online", "grow", "test-c2"])
    _add_common(robot, ROBOT_KEYS)
    robot.set_defaults(func=cmd_robot)

    fixture = subs.add_parser("fixture", help="generate offline dataset fixtures")
    _add_common(fixture, FIXTURE_KEYS)
    fixture.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (LwdlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
