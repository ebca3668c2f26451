"""Command-line entry point: ``python3 -m graspfusion <command> [--config FILE] [--key value ...]``.

Every setting can come from a ``key = value`` config file or a flag; flags
win.  Unknown config keys are rejected.  Exit codes: 0 success, 1 usage or
config error, 2 file IO or format error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from typing import Callable

import numpy as np

from . import formats
from .data import DataConfig, generate_dataset, generate_scenes
from .formats import FormatError
from .fusion import VARIANTS, BackboneConfig, FusionConfig, FusionModel
from .gan import (GanTrainConfig, PairDataset, generate_paired_toy, identity_generator, mean_ssim, train_gan,
                  train_test_split, translate)
from .layers import named_parameters
from .training import (ABLATION_ROWS, LIFT_THRESHOLD, ModelPredictor, TrainConfig, ablation_suite, evaluate,
                       fixed_force_success, metrics_rows, oracle_predictor, quantize_float32, run_policy, train,
                       write_metrics_csv)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() == "none" else int(s)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"{s!r} is not one of {', '.join(options)}")
        return s
    return parse


REQUIRED = object()

_MODEL = {
    "variant": (_choice(*VARIANTS), "full"),
    "d": (int, 32),
    "heads": (int, 4),
    "layers": (int, 4),
}
_TRAIN = {
    "epochs": (int, 30),
    "lr": (float, 1e-3),
    "batch_size": (int, 32),
    "resize": (_opt_int, 20),
    "crop": (_opt_int, 16),
}
_GAN_SPLIT = {"train_fraction": (float, 0.8)}

SETTINGS: dict[str, dict[str, tuple]] = {
    "gen-data": {"n": (int, 2000), "seed": (int, 0), "out": (str, REQUIRED)},
    "gen-pairs": {"n": (int, 500), "seed": (int, 0), "out": (str, REQUIRED),
                  "corruption": (_choice("fixed", "none"), "fixed")},
    "train": {"data": (str, REQUIRED), "out": (str, REQUIRED), "metrics": (str, None), "seed": (int, 0),
              **_MODEL, **_TRAIN},
    "eval": {"checkpoint": (str, REQUIRED), "data": (str, REQUIRED), "threshold": (float, 0.5), "seed": (int, 0)},
    "ablate": {"data": (str, REQUIRED), "test": (str, None), "folds": (int, 3), "metrics": (str, None),
               "seed": (int, 0), **_MODEL, **_TRAIN},
    "train-gan": {"data": (str, REQUIRED), "out": (str, REQUIRED), "seed": (int, 0), "epochs": (int, 20),
                  "lr": (float, 2e-4), "batch_size": (int, 10), "lambda_bce": (float, 10.0), "width": (int, 16),
                  "beta1": (float, 0.5), **_GAN_SPLIT},
    "eval-gan": {"data": (str, REQUIRED), "checkpoint": (str, None),
                 "generator": (_choice("trained", "identity"), "trained"),
                 "split": (_choice("test", "all"), "test"), "seed": (int, 0), **_GAN_SPLIT},
    "policy-demo": {"checkpoint": (str, None), "predictor": (_choice("model", "oracle"), "model"),
                    "grasps": (int, 20), "seed": (int, 0), "f_min": (float, 10.0), "f_max": (float, 30.0),
                    "step": (float, 1.0), "lift_threshold": (float, LIFT_THRESHOLD), "out": (str, None)},
}


def parse_config_file(path: str) -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def resolve(command: str, file_values: dict[str, str], flag_values: dict[str, str | None]) -> dict:
    settings = SETTINGS[command]
    unknown = sorted(set(file_values) - set(settings))
    if unknown:
        raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    resolved = {}
    for key, (parse, default) in settings.items():
        raw = flag_values.get(key)
        if raw is None:
            raw = file_values.get(key)
        if raw is None:
            if default is REQUIRED:
                raise UsageError(f"{command}: missing required setting '{key}'")
            resolved[key] = default
            continue
        try:
            resolved[key] = parse(raw)
        except ValueError as e:
            raise UsageError(f"{command}: bad value for '{key}': {e}") from None
    return resolved


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graspfusion", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command, options in SETTINGS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", help="key = value settings file")
        for key, (_, default) in options.items():
            shown = "required" if default is REQUIRED else f"default {default}"
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="VALUE", help=shown)
    return parser


def _echo(command: str, cfg: dict) -> None:
    print(f"# {command}")
    for k, v in cfg.items():
        print(f"# {k} = {v}")


def _model_config(cfg: dict) -> FusionConfig:
    bb = BackboneConfig(d=cfg["d"])
    return FusionConfig(d=cfg["d"], n_heads=cfg["heads"], n_layers=cfg["layers"], variant=cfg["variant"],
                        visual_backbone=bb, tactile_backbone=bb)


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(learning_rate=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                       seed=cfg["seed"], resize=cfg["resize"], crop=cfg["crop"])


def _open_out(path: str | None):
    return open(path, "w", newline="", encoding="utf-8") if path else contextlib.nullcontext(sys.stdout)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: dict) -> None:
    ds = generate_dataset(DataConfig(), cfg["n"], cfg["seed"])
    formats.write_dataset(cfg["out"], ds)
    print(f"samples {len(ds)}")
    print(f"positive_fraction {float(ds.positive_fraction)!r}")


def cmd_gen_pairs(cfg: dict) -> None:
    pairs = generate_paired_toy(cfg["n"], cfg["seed"])
    if cfg["corruption"] == "none":
        pairs = PairDataset(pairs.sim.copy(), pairs.sim)
    formats.write_pairs(cfg["out"], pairs)
    print(f"pairs {len(pairs)}")


def cmd_train(cfg: dict) -> None:
    ds = formats.read_dataset(cfg["data"])
    model = FusionModel.create(_model_config(cfg), seed=cfg["seed"])
    tcfg = _train_config(cfg)
    history = train(model, ds, tcfg)
    quantize_float32(model)
    final = evaluate(model, ds, tcfg)
    formats.save_model(cfg["out"], model, tcfg)
    with _open_out(cfg["metrics"]) as out:
        write_metrics_csv(out, metrics_rows(cfg["variant"], 0, history, final))
    print(f"train_accuracy {float(final.accuracy)!r}")


def _print_metrics(m) -> None:
    print(f"accuracy {float(m.accuracy)!r}")
    print(f"precision {'null' if m.precision is None else repr(m.precision)}")
    print(f"recall {'null' if m.recall is None else repr(m.recall)}")
    print(f"confusion tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn}")


def cmd_eval(cfg: dict) -> None:
    model, tcfg = formats.load_model(cfg["checkpoint"])
    ds = formats.read_dataset(cfg["data"])
    _print_metrics(evaluate(model, ds, tcfg, cfg["threshold"]))


def _fmt_stat(stat: tuple[float, float] | None) -> str:
    return "null" if stat is None else f"{100 * stat[0]:.2f} ± {100 * stat[1]:.2f}"


def cmd_ablate(cfg: dict) -> None:
    ds = formats.read_dataset(cfg["data"])
    test = formats.read_dataset(cfg["test"]) if cfg["test"] else None
    tcfg = _train_config(cfg)
    results = ablation_suite(ds, _model_config(cfg), tcfg, cfg["folds"], test)
    scope = "test" if test is not None else "held-out"
    print(f"method,{scope}_accuracy,precision,recall")
    for name, _ in ABLATION_ROWS:
        s = results[name].test if test is not None else results[name].held_out
        print(f"{name},{_fmt_stat(s.accuracy)},{_fmt_stat(s.precision)},{_fmt_stat(s.recall)}")
    if cfg["metrics"]:
        with open(cfg["metrics"], "w", newline="", encoding="utf-8") as out:
            write_metrics_csv(out, [])
            for name, res in results.items():
                for f in res.folds:
                    write_metrics_csv(out, metrics_rows(name, f.fold, f.history, f.test or f.held_out),
                                      header=False)


def cmd_train_gan(cfg: dict) -> None:
    pairs = formats.read_pairs(cfg["data"])
    train_split, test_split = train_test_split(pairs, cfg["train_fraction"], cfg["seed"])
    gcfg = GanTrainConfig(lambda_bce=cfg["lambda_bce"], learning_rate=cfg["lr"], batch_size=cfg["batch_size"],
                          epochs=cfg["epochs"], seed=cfg["seed"], beta1=cfg["beta1"], width=cfg["width"])
    G, D, history = train_gan(train_split, gcfg)
    # report on the weights exactly as the checkpoint stores them
    for net in (G, D):
        for _, p in named_parameters(net):
            p.data = p.data.astype(np.float32).astype(np.float64)
    formats.save_gan(cfg["out"], G, D, cfg["width"], pairs.real.shape[1])
    print("epoch,loss_d,loss_g")
    for i, (ld, lg) in enumerate(zip(history.loss_d, history.loss_g), 1):
        print(f"{i},{float(ld)!r},{float(lg)!r}")
    if len(test_split):
        print(f"test_mean_ssim {float(mean_ssim(translate(G, test_split.real), test_split.sim)[0])!r}")


def cmd_eval_gan(cfg: dict) -> None:
    pairs = formats.read_pairs(cfg["data"])
    if cfg["split"] == "test":
        pairs = train_test_split(pairs, cfg["train_fraction"], cfg["seed"])[1]
    if len(pairs) == 0:
        raise UsageError("evaluation split is empty")
    if cfg["generator"] == "identity":
        generator = identity_generator
    else:
        if not cfg["checkpoint"]:
            raise UsageError("eval-gan needs 'checkpoint' unless generator = identity")
        generator = formats.load_gan(cfg["checkpoint"])[0]
    mean, scores = mean_ssim(translate(generator, pairs.real), pairs.sim)
    print("pair,ssim")
    for i, s in enumerate(scores):
        print(f"{i},{float(s)!r}")
    print(f"mean_ssim {float(mean)!r}")


def cmd_policy_demo(cfg: dict) -> None:
    if cfg["grasps"] <= 0:
        raise UsageError("grasps must be positive")
    scenes = generate_scenes(DataConfig(), cfg["grasps"], cfg["seed"])[0]
    if cfg["predictor"] == "oracle":
        predictor = oracle_predictor
    else:
        if not cfg["checkpoint"]:
            raise UsageError("policy-demo needs 'checkpoint' unless predictor = oracle")
        if not 0.0 < cfg["lift_threshold"] < 1.0:
            raise UsageError("lift_threshold must lie strictly between 0 and 1")
        # a comma-separated list averages several checkpoints, e.g. the fold models
        loaded = [formats.load_model(path.strip()) for path in cfg["checkpoint"].split(",")]
        tcfg = loaded[0][1] or TrainConfig()
        predictor = ModelPredictor([m for m, _ in loaded], DataConfig(), tcfg, seed=cfg["seed"],
                                   threshold=cfg["lift_threshold"])
    rows = run_policy(predictor, scenes, cfg["f_min"], cfg["f_max"], cfg["step"])
    with _open_out(cfg["out"]) as out:
        out.write("grasp,chosen_force,predicted,actual\n")
        for r in rows:
            out.write(f"{r.grasp},{float(r.chosen_force)!r},{int(r.predicted)},{int(r.actual)}\n")
    forces = np.array([r.chosen_force for r in rows])
    print(f"# policy mean_force {forces.mean():.3f} success {np.mean([r.actual for r in rows]):.3f}")
    for f in (cfg["f_min"], cfg["f_max"]):
        print(f"# fixed {f:g}N mean_force {f:.3f} success {fixed_force_success(scenes, f):.3f}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "gen-pairs": cmd_gen_pairs,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "train-gan": cmd_train_gan,
    "eval-gan": cmd_eval_gan,
    "policy-demo": cmd_policy_demo,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        file_values = parse_config_file(args.config) if args.config else {}
        cfg = resolve(args.command, file_values, {k: getattr(args, k) for k in SETTINGS[args.command]})
        _echo(args.command, cfg)
        COMMANDS[args.command](cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
