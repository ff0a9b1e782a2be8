"""Command-line interface: train, eval, ablate, gradcheck, synth.

Configuration is a flat key=value namespace: defaults, then an optional
config file (one ``key=value`` per line, ``#`` comments), then command-line
flags, later sources winning. Unknown keys are rejected. Every command
echoes the fully resolved configuration before doing any work.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file
format error, 3 verification failure.

Setting ``LGEST_DETERMINISTIC=1`` pins BLAS/OpenMP thread pools to one
thread before numpy loads, so repeated runs are byte-identical even across
machines with different core counts. Only stdlib modules may be imported at
module scope here; everything numeric loads lazily after that hook runs.
"""

from __future__ import annotations

import argparse
import os
import re
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3

DEFAULTS: dict = {
    "cube": "",
    "labels": "",
    "checkpoint": "",
    "out_dir": ".",
    "synthetic": False,
    "synth_classes": 4,
    "synth_width": 32,
    "synth_height": 32,
    "synth_bands": 16,
    "synth_noise": 0.05,
    "synth_seed": 7,
    "patch_size": 9,
    "train_fraction": 0.3,
    "eval_split": "all",
    "seed": 0,
    "epochs": 100,
    "batch_size": 100,
    "lr": 0.001,
    "lambda": 1.0,
    "beta": 0.5,
    "stem_channels": 64,
    "depth": 2,
    "fpn_levels": 4,
    "rmoe_experts": 4,
    "lges_experts": 4,
    "repeats": 3,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); route to exit code 1
        raise _UsageError(message)


def _apply_determinism_env() -> None:
    if os.environ.get("LGEST_DETERMINISTIC") != "1":
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, "1")


def _dest(key: str) -> str:
    return "lambda_" if key == "lambda" else key


def _coerce(key: str, raw: str):
    from .errors import ConfigError

    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError("key %s expects a boolean, got %r" % (key, raw))
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError("key %s expects an integer, got %r" % (key, raw)) from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError("key %s expects a number, got %r" % (key, raw)) from None
    return raw


def _parse_config_file(path: str) -> dict:
    from .errors import ConfigError

    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError("cannot read config file %s: %s" % (path, exc)) from None
    for lineno, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("config line %d is not key=value: %r" % (lineno, line.strip()))
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError("unknown config key %r (line %d)" % (key, lineno))
        out[key] = _coerce(key, raw)
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_parse_config_file(args.config))
    for key in DEFAULTS:
        val = getattr(args, _dest(key), None)
        if val is not None:
            cfg[key] = val
    return cfg


def _echo_config(cfg: dict) -> None:
    for key in sorted(cfg):
        print("config %s=%r" % (key, cfg[key]))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    for key, default in DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            p.add_argument(flag, dest=_dest(key), action="store_const", const=True)
        elif isinstance(default, int):
            p.add_argument(flag, dest=_dest(key), type=int)
        elif isinstance(default, float):
            p.add_argument(flag, dest=_dest(key), type=float)
        else:
            p.add_argument(flag, dest=_dest(key))


def build_parser() -> _Parser:
    parser = _Parser(prog="lgest", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("train", "train a model and write a checkpoint"),
        ("eval", "evaluate a checkpoint: metrics report and class map"),
        ("ablate", "sweep one hyperparameter axis, repeated seeds per point"),
        ("gradcheck", "finite-difference verification of all backward rules"),
        ("synth", "generate a synthetic labeled scene on disk"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_config_flags(p)
        if name == "ablate":
            p.add_argument("--axis", choices=("experts", "patch", "fraction"))
            p.add_argument("--grid", help="grid for --axis")
            p.add_argument("--experts-grid", help='expert grid, e.g. "[2,2],[4,4]"')
            p.add_argument("--patch-grid", help='patch sizes, e.g. "9,11,13"')
            p.add_argument("--fraction-grid", help='training fractions, e.g. "0.05,0.1"')
    return parser


# ---------------------------------------------------------------------------
# command bodies (heavy imports stay inside functions; see module docstring)


def _load_scene(cfg: dict):
    from .errors import ConfigError
    from .hsi import load_dataset, normalize, synth_cube

    if cfg["synthetic"]:
        cube, labels = synth_cube(
            n_class=cfg["synth_classes"],
            width=cfg["synth_width"],
            height=cfg["synth_height"],
            bands=cfg["synth_bands"],
            noise_sigma=cfg["synth_noise"],
            seed=cfg["synth_seed"],
        )
    else:
        if not cfg["cube"] or not cfg["labels"]:
            raise ConfigError("need --cube and --labels, or --synthetic")
        cube, labels = load_dataset(cfg["cube"], cfg["labels"])
    return normalize(cube), labels


def _model_config(cfg: dict, bands: int, n_class: int, seed: int):
    from .model import LgestConfig

    return LgestConfig(
        in_channels=bands,
        n_class=n_class,
        stem_channels=cfg["stem_channels"],
        depth=cfg["depth"],
        fpn_levels=cfg["fpn_levels"],
        rmoe_experts=cfg["rmoe_experts"],
        lges_experts=cfg["lges_experts"],
        lambda_=cfg["lambda"],
        beta=cfg["beta"],
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        seed=seed,
    )


def _checkpoint_path(cfg: dict) -> str:
    return cfg["checkpoint"] or os.path.join(cfg["out_dir"], "model.lgw")


def cmd_train(cfg: dict) -> int:
    from .hsi import extract_patches, split_train_test
    from .model import LgestModel, fit, save_checkpoint
    from .rng import Rng

    os.makedirs(cfg["out_dir"], exist_ok=True)
    cube, label_map = _load_scene(cfg)
    batch = extract_patches(cube, label_map, cfg["patch_size"])
    train, test, warnings = split_train_test(
        batch, cfg["train_fraction"], cfg["seed"], label_map.n_class
    )
    for w in warnings:
        print("warning: %s" % w)
    print("train_samples=%d test_samples=%d" % (train.labels.size, test.labels.size))

    mcfg = _model_config(cfg, cube.bands, label_map.n_class, cfg["seed"])
    rng = Rng(cfg["seed"])
    model = LgestModel(mcfg, rng)
    report = fit(model, train.patches, train.labels, mcfg, rng)

    ckpt = _checkpoint_path(cfg)
    save_checkpoint(ckpt, model.state_items())
    loss_path = os.path.join(cfg["out_dir"], "loss.csv")
    with open(loss_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(report.losses, 1):
            fh.write("%d,%r\n" % (i, loss))
    final = report.losses[-1] if report.losses else float("nan")
    print("steps=%d final_loss=%r seconds=%.2f" % (report.steps, final, report.seconds))
    print("checkpoint=%s" % ckpt)
    print("loss_curve=%s" % loss_path)
    return EXIT_OK


def _select_split(cfg: dict, batch, n_class: int):
    from .errors import ConfigError
    from .hsi import split_train_test

    which = cfg["eval_split"]
    if which == "all":
        return batch
    if which not in ("train", "test"):
        raise ConfigError("eval_split must be all, train, or test")
    train, test, _ = split_train_test(batch, cfg["train_fraction"], cfg["seed"], n_class)
    return train if which == "train" else test


def cmd_eval(cfg: dict) -> int:
    import numpy as np

    from .errors import DataError
    from .hsi import extract_patches
    from .metrics import compute_metrics, render_class_map
    from .model import LgestModel, load_checkpoint, predict

    os.makedirs(cfg["out_dir"], exist_ok=True)
    cube, label_map = _load_scene(cfg)
    batch = extract_patches(cube, label_map, cfg["patch_size"])
    subset = _select_split(cfg, batch, label_map.n_class)
    if subset.labels.size == 0:
        raise DataError("eval split %r selected no samples" % cfg["eval_split"])

    model = LgestModel(_model_config(cfg, cube.bands, label_map.n_class, cfg["seed"]))
    model.load_state_items(load_checkpoint(_checkpoint_path(cfg)))

    preds = predict(model, subset.patches, cfg["batch_size"])
    report = compute_metrics(subset.labels, preds, label_map.n_class)
    sys.stdout.write(report.text())

    metrics_path = os.path.join(cfg["out_dir"], "metrics.txt")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(report.text())
    grid = np.zeros(label_map.labels.shape, dtype=np.uint16)
    grid[subset.centers[:, 0], subset.centers[:, 1]] = preds.astype(np.uint16) + 1
    map_path = os.path.join(cfg["out_dir"], "classmap.ppm")
    with open(map_path, "wb") as fh:
        fh.write(render_class_map(grid))
    print("metrics=%s" % metrics_path)
    print("classmap=%s" % map_path)
    return EXIT_OK


def _parse_experts_grid(raw: str) -> list[tuple[int, int]]:
    from .errors import ConfigError

    pairs = re.findall(r"\[\s*(\d+)\s*,\s*(\d+)\s*\]", raw)
    if not pairs or re.sub(r"[\[\]\d,\s]", "", raw):
        raise ConfigError("experts grid must look like [2,2],[4,4]; got %r" % raw)
    return [(int(a), int(b)) for a, b in pairs]


def _ablate_axis(args) -> tuple[str, str]:
    from .errors import ConfigError

    picks = [
        ("experts", args.experts_grid),
        ("patch", args.patch_grid),
        ("fraction", args.fraction_grid),
    ]
    if args.axis:
        picks.append((args.axis, args.grid or ""))
    chosen = [(axis, grid) for axis, grid in picks if grid]
    if args.axis and not any(axis == args.axis and grid for axis, grid in chosen):
        defaults = {
            "experts": "[2,2],[4,4],[8,8],[16,16]",
            "patch": "9,11,13,15,17",
            "fraction": "0.05,0.1,0.2",
        }
        chosen.append((args.axis, defaults[args.axis]))
    if len(chosen) != 1:
        raise ConfigError("pick exactly one ablation axis (grid flag or --axis)")
    return chosen[0]


def cmd_ablate(cfg: dict, args) -> int:
    import numpy as np

    from .errors import ConfigError
    from .hsi import extract_patches, split_train_test
    from .model import LgestModel, fit, predict
    from .metrics import compute_metrics
    from .rng import Rng

    axis, grid_raw = _ablate_axis(args)
    if axis == "experts":
        points = _parse_experts_grid(grid_raw)
        labels_for_points = ["%dx%d" % p for p in points]
    elif axis == "patch":
        points = [int(v) for v in grid_raw.split(",") if v.strip()]
        labels_for_points = [str(p) for p in points]
    else:
        points = [float(v) for v in grid_raw.split(",") if v.strip()]
        labels_for_points = [repr(p) for p in points]
    if not points:
        raise ConfigError("empty ablation grid")

    os.makedirs(cfg["out_dir"], exist_ok=True)
    cube, label_map = _load_scene(cfg)

    rows = []
    header = "%s,repeats,n_params,oa_mean,oa_std,aa_mean,aa_std,kappa_mean,kappa_std" % axis
    print(header)
    for point, point_label in zip(points, labels_for_points):
        point_cfg = dict(cfg)
        if axis == "experts":
            point_cfg["rmoe_experts"], point_cfg["lges_experts"] = point
        elif axis == "patch":
            point_cfg["patch_size"] = point
        else:
            point_cfg["train_fraction"] = point
        batch = extract_patches(cube, label_map, point_cfg["patch_size"])

        oas, aas, kappas = [], [], []
        n_params = 0
        for rep in range(cfg["repeats"]):
            seed_r = cfg["seed"] + rep
            train, test, _ = split_train_test(
                batch, point_cfg["train_fraction"], seed_r, label_map.n_class
            )
            mcfg = _model_config(point_cfg, cube.bands, label_map.n_class, seed_r)
            rng = Rng(seed_r)
            model = LgestModel(mcfg, rng)
            n_params = sum(p.data.size for _, p in model.parameters())
            fit(model, train.patches, train.labels, mcfg, rng)
            held_out = test if test.labels.size else train
            preds = predict(model, held_out.patches, cfg["batch_size"])
            report = compute_metrics(held_out.labels, preds, label_map.n_class)
            oas.append(report.oa)
            aas.append(report.aa)
            kappas.append(report.kappa)
        row = "%s,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f" % (
            point_label,
            cfg["repeats"],
            n_params,
            np.mean(oas),
            np.std(oas),
            np.mean(aas),
            np.std(aas),
            np.mean(kappas),
            np.std(kappas),
        )
        rows.append(row)
        print(row)

    csv_path = os.path.join(cfg["out_dir"], "ablation_%s.csv" % axis)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")
    print("table=%s" % csv_path)
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    from .gradcheck import run_all

    results = run_all()
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print("%-22s max_rel_err=%.3e tol=%.0e %s" % (r.name, r.max_rel_err, r.tol, status))
        failed += 0 if r.passed else 1
    print("checks=%d failed=%d" % (len(results), failed))
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_synth(cfg: dict) -> int:
    from .hsi import save_cube, save_labels, synth_cube

    os.makedirs(cfg["out_dir"], exist_ok=True)
    cube, label_map = synth_cube(
        n_class=cfg["synth_classes"],
        width=cfg["synth_width"],
        height=cfg["synth_height"],
        bands=cfg["synth_bands"],
        noise_sigma=cfg["synth_noise"],
        seed=cfg["synth_seed"],
    )
    cube_path = cfg["cube"] or os.path.join(cfg["out_dir"], "synthetic.hsic")
    labels_path = cfg["labels"] or os.path.join(cfg["out_dir"], "synthetic.hsil")
    save_cube(cube_path, cube)
    save_labels(labels_path, label_map)
    print("cube=%s (%dx%d, %d bands)" % (cube_path, cube.width, cube.height, cube.bands))
    print("labels=%s (%d classes)" % (labels_path, label_map.n_class))
    return EXIT_OK


def main(argv=None) -> int:
    _apply_determinism_env()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        _echo_config(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg, args)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        return cmd_synth(cfg)
    except _UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - single mapping point to exit codes
        from .errors import ConfigError, DimensionError

        if isinstance(exc, (ConfigError, DimensionError)):
            print("config error: %s" % exc, file=sys.stderr)
            return EXIT_USAGE
        from .errors import LgestError

        if isinstance(exc, (LgestError, OSError)):
            print("data error: %s" % exc, file=sys.stderr)
            return EXIT_DATA
        raise


def entry() -> None:
    sys.exit(main())
