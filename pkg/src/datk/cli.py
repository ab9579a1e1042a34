"""Command-line entry point: ``datk <command> [flags]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import attacks, gradcheck, io
from .attacks import AttackConfig
from .errors import ConfigurationError, ContractError, DatkError, FormatError, NumericalError
from .experiments import (
    MotivationConfig,
    SyntheticSpec,
    Theorem1Task,
    evaluate_accuracy,
    make_synthetic_dataset,
    motivation_experiment,
    theorem1_experiment,
)
from .models import SmallConvNet
from .trainer import make_generator, train

log = logging.getLogger("datk")

COMMANDS = ("train", "evaluate", "motivation", "theorem1", "gradcheck", "synth-data")
CHECKPOINT = "checkpoint.datk"
# flag -> TrainConfig field
TRAIN_FLAGS = {
    "method": "method",
    "epochs": "epochs",
    "epsilon": "epsilon",
    "alpha": "alpha",
    "steps": "steps",
    "beta": "beta",
    "omega": "omega",
    "lambda_max": "lambda_max",
    "ae_mode": "ae_mode",
    "aag_input": "aag_input_mode",
    "aag_with": "aag_with",
    "seed": "seed",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="datk", description="Dual adversarial training toolkit")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--method")
    p.add_argument("--epochs", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--lambda-max", dest="lambda_max", type=float)
    p.add_argument("--ae-mode", dest="ae_mode")
    p.add_argument("--aag-input", dest="aag_input")
    p.add_argument("--aag-with", dest="aag_with")
    p.add_argument("--out")
    return p


def resolve_config(args) -> io.RunConfig:
    """Defaults, then DATK_SEED, then the config file, then flags."""
    cfg = io.RunConfig()
    env_seed = os.environ.get("DATK_SEED")
    if env_seed is not None:
        try:
            cfg.train.seed = int(env_seed)
        except ValueError:
            raise ConfigurationError(f"DATK_SEED must be an integer, got {env_seed!r}") from None
    if args.config:
        cfg = io.read_config(args.config, cfg)
    for flag, key in TRAIN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg.train, key, value)
    if args.out:
        cfg.out = args.out
    return cfg.validate()


def _synthetic_spec(cfg: io.RunConfig) -> SyntheticSpec:
    return SyntheticSpec(classes=cfg.synth_classes, image_shape=(3, cfg.synth_size, cfg.synth_size), noise=cfg.synth_noise)


def _load_source(source: str, split: str):
    if source.endswith(".npz"):
        with np.load(source) as f:
            return f[f"x_{split}"].astype(np.float64), f[f"y_{split}"].astype(np.int64)
    return io.load_cifar_files([s for s in source.split(",") if s], split)


def load_data(cfg: io.RunConfig):
    """((x_train, y_train), (x_test, y_test))."""
    if cfg.data == "synthetic":
        spec = _synthetic_spec(cfg)
        train_set = make_synthetic_dataset(spec, cfg.synth_train_per_class, cfg.synth_seed)
        test_set = make_synthetic_dataset(spec, cfg.synth_test_per_class, cfg.synth_seed + 1)
        return train_set, test_set
    train_set = _load_source(cfg.data, "train")
    test_set = _load_source(cfg.test_data, "test") if cfg.test_data else train_set
    if len(train_set[0]) == 0:
        raise ConfigurationError(f"no training samples in {cfg.data!r}")
    return train_set, test_set


def _num_classes(*sets):
    return int(max(int(np.max(s[1])) for s in sets if len(s[1])) + 1)


def _provenance(cfg: io.RunConfig, command: str):
    os.makedirs(cfg.out, exist_ok=True)
    line = f"command={command} seed={cfg.train.seed} config=" + ";".join(
        ln for ln in io.serialize_config(cfg).splitlines() if not ln.startswith("#")
    )
    with open(os.path.join(cfg.out, "provenance.txt"), "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
    log.info("%s", line)


def _models(cfg, train_set, test_set):
    classes = _num_classes(train_set, test_set)
    shape = train_set[0].shape[1:]
    net = SmallConvNet(shape[0], classes, seed=cfg.train.seed)
    gen = None
    if cfg.train.method == "dat" or cfg.train.aag_with != "dat":
        gen = make_generator(cfg.train, shape, classes)
    return net, gen


def cmd_train(cfg: io.RunConfig) -> int:
    train_set, test_set = load_data(cfg)
    _provenance(cfg, "train")
    io.write_config(cfg, os.path.join(cfg.out, "config.txt"))
    net, gen = _models(cfg, train_set, test_set)
    n = min(cfg.eval_samples, len(test_set[0]))
    metrics_path = os.path.join(cfg.out, "metrics.csv")
    io.write_metrics([], metrics_path, "truncate")

    def on_epoch(m):
        io.write_metrics(io.epoch_rows("train", [m], cfg.train.seed), metrics_path, "append")
        print(f"epoch {m.epoch} loss {m.train_loss:.4f} natural {m.natural_acc} pgd {m.pgd_acc}", flush=True)

    result = train(train_set, net, cfg.train, gen=gen, eval_data=(test_set[0][:n], test_set[1][:n]), on_epoch=on_epoch)
    io.save_checkpoint(io.model_records(result.net, result.gen, result.scale), os.path.join(cfg.out, CHECKPOINT))
    return 0


def cmd_evaluate(cfg: io.RunConfig) -> int:
    train_set, test_set = load_data(cfg)
    _provenance(cfg, "evaluate")
    net, _ = _models(cfg, train_set, test_set)
    io.restore_models(io.load_checkpoint(os.path.join(cfg.out, CHECKPOINT)), net)
    n = min(cfg.eval_samples, len(test_set[0]))
    data = (test_set[0][:n], test_set[1][:n])
    t = cfg.train
    start = time.perf_counter()
    acc = {
        "natural": evaluate_accuracy(net, data),
        "fgsm": evaluate_accuracy(net, (attacks.fgsm(data[0], data[1], net, t.epsilon), data[1])),
        "pgd": evaluate_accuracy(net, data, AttackConfig(t.epsilon, t.alpha, t.steps, init="uniform-eps"), rng=np.random.default_rng(t.seed)),
    }
    wall = time.perf_counter() - start
    rows = [
        {"run_id": "evaluate", "epoch": -1, "split": "test", "metric_name": k, "value": v, "seed": t.seed, "wall_seconds": wall}
        for k, v in acc.items()
    ]
    io.write_metrics(rows, os.path.join(cfg.out, "eval.csv"), "truncate")
    for k, v in acc.items():
        print(f"{k}\t{v:.4f}")
    return 0


def cmd_motivation(cfg: io.RunConfig) -> int:
    train_set, test_set = load_data(cfg)
    _provenance(cfg, "motivation")
    t = cfg.train
    mcfg = MotivationConfig(train=t, eval_attack=AttackConfig(t.epsilon, t.alpha, t.eval_steps), seed=t.seed)
    table = motivation_experiment(train_set, test_set, mcfg)
    rows = []
    print("model\tnatural\td_ae\td_amp\td_pha")
    for model, cols in table.items():
        print(model + "\t" + "\t".join(f"{cols[c]:.4f}" for c in ("natural", "d_ae", "d_amp", "d_pha")))
        rows += [
            {"run_id": "motivation", "epoch": t.epochs, "split": k, "metric_name": f"{model}_acc", "value": v, "seed": t.seed, "wall_seconds": 0.0}
            for k, v in cols.items()
        ]
    io.write_metrics(rows, os.path.join(cfg.out, "motivation.csv"), "truncate")
    return 0


def cmd_theorem1(cfg: io.RunConfig) -> int:
    _provenance(cfg, "theorem1")
    rows = []
    print("variance_ratio\tnorm_ratio")
    for ratio in (1, 10, 100):
        task = Theorem1Task(sigma_a=Theorem1Task.sigma_p * np.sqrt(ratio), seed=cfg.train.seed)
        r = theorem1_experiment(task)
        print(f"{ratio}\t{r:.6f}")
        rows.append({"run_id": "theorem1", "epoch": -1, "split": f"var{ratio}", "metric_name": "norm_ratio", "value": r, "seed": cfg.train.seed, "wall_seconds": 0.0})
    io.write_metrics(rows, os.path.join(cfg.out, "theorem1.csv"), "truncate")
    return 0


def cmd_gradcheck(cfg: io.RunConfig) -> int:
    seed = cfg.train.seed
    results = gradcheck.run(seeds=range(seed, seed + 20))
    worst = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.rel_error)
    for name, err in worst.items():
        print(f"{'ok  ' if err <= gradcheck.TOLERANCE else 'FAIL'} {name:24s} max rel err {err:.3e}")
    return 0 if all(r.passed for r in results) else 1


def cmd_synth_data(cfg: io.RunConfig) -> int:
    train_set, test_set = load_data(cfg) if cfg.data == "synthetic" else (None, None)
    if train_set is None:
        raise ConfigurationError("synth-data needs data=synthetic")
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "synthetic.npz")
    np.savez(path, x_train=train_set[0], y_train=train_set[1], x_test=test_set[0], y_test=test_set[1])
    print(path)
    return 0


HANDLERS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "motivation": cmd_motivation,
    "theorem1": cmd_theorem1,
    "gradcheck": cmd_gradcheck,
    "synth-data": cmd_synth_data,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DATK_LOG", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"datk: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg)
    except (ConfigurationError, ContractError, NumericalError) as exc:
        print(f"datk: {exc}", file=sys.stderr)
        return 1
    except (OSError, FormatError) as exc:
        print(f"datk: {exc}", file=sys.stderr)
        return 2
    except DatkError as exc:
        print(f"datk: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
