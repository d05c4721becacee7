"""Command line entry point: ``structpose <command> [flags]``.

Exit status: 0 success, 2 config error, 3 data error, 4 numeric failure,
1 anything else. Outputs are staged in a temporary directory and moved into
place only after every file has been written.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("structpose")


@contextlib.contextmanager
def staged_output(out: Path):
    """Yield a scratch directory; on success move its entries into ``out``."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", suffix=".tmp", dir=out.parent))
    try:
        yield tmp
        out.mkdir(exist_ok=True)
        for entry in sorted(tmp.iterdir()):
            target = out / entry.name
            if target.is_dir() and not target.is_symlink():
                shutil.rmtree(target)
            os.replace(entry, target)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _apply_overrides(cfg, sets):
    from .config import ConfigError, parse_config

    if not sets:
        return cfg
    by_section: dict[str, list[str]] = {}
    for item in sets:
        key, eq, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not eq or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        by_section.setdefault(section, []).append(f"{name} = {value}")
    text = "\n".join(f"[{s}]\n" + "\n".join(lines) for s, lines in by_section.items())
    return parse_config(text, base=cfg, name=cfg.name)


def _load_run_config(args):
    from .config import load_config

    return _apply_overrides(load_config(args.config), getattr(args, "set", None))


def _sidecar_path(ckpt: Path) -> Path:
    return ckpt.with_suffix(".json")


def _load_model(ckpt: Path):
    """Rebuild the model from a checkpoint and its JSON sidecar."""
    import numpy as np

    from .config import parse_config
    from .inference import PairwiseParams
    from .model import PoseNet, load_checkpoint
    from .synth import DataError

    side = _sidecar_path(ckpt)
    if not ckpt.is_file():
        raise DataError(f"checkpoint not found: {ckpt}")
    if not side.is_file():
        raise DataError(f"checkpoint sidecar not found: {side}")
    try:
        meta = json.loads(side.read_text())
        cfg = parse_config(meta["config"], name=meta.get("name", "checkpoint"))
        pw = PairwiseParams(np.asarray(meta["pairwise"]["offsets"], float), tuple(meta["pairwise"]["weights"]))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed checkpoint sidecar {side}: {exc}") from None
    model = load_checkpoint(PoseNet(cfg.model, 0), ckpt)
    return cfg, model, pw


# ---------------------------------------------------------------------------
# commands


def cmd_print_config(args) -> int:
    from .config import dump_config

    text = dump_config(_load_run_config(args))
    if args.out:
        with staged_output(Path(args.out).parent) as tmp:
            (tmp / Path(args.out).name).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_rf_report(args) -> int:
    from .structured import format_rf_table

    cfg = _load_run_config(args)
    table = format_rf_table(cfg.rf_rows()) + "\n"
    if args.out:
        with staged_output(Path(args.out).parent) as tmp:
            (tmp / Path(args.out).name).write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    import dataclasses

    from .synth import generate_dataset, write_dataset

    cfg = _load_run_config(args)
    spec = cfg.data.skeleton
    if args.multi_figure is not None:
        if not 0 <= args.multi_figure <= 1:
            from .config import ConfigError

            raise ConfigError("--multi-figure must lie in [0, 1]")
        spec = dataclasses.replace(spec, multi_figure_prob=args.multi_figure)
    count = cfg.data.count if args.count is None else args.count
    seed = cfg.data.seed if args.seed is None else args.seed
    ds = generate_dataset(spec, count, seed)
    with staged_output(Path(args.out)) as tmp:
        write_dataset(ds, tmp)
    log.info("wrote %d samples to %s", count, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    import dataclasses

    import numpy as np

    from .config import dump_config
    from .inference import estimate_pairwise_params
    from .model import PoseNet, save_checkpoint, train
    from .synth import cluster_mixtures, read_dataset, with_mixtures

    cfg = _load_run_config(args)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    tree = cfg.model.joint_tree
    data = read_dataset(args.data, tree)
    val = read_dataset(args.val, tree) if args.val else None
    if cfg.model.mixtures > 1:
        _, labels = cluster_mixtures(data, cfg.model.mixtures, cfg.train.seed)
        data = with_mixtures(data, labels)
    pw = estimate_pairwise_params(data.joints, tree, cfg.model.downsample, cfg.infer.weights)
    model = PoseNet(cfg.model, cfg.train.seed)
    res = train(model, data, cfg.train, val=val, pairwise=pw)
    meta = {
        "name": cfg.name,
        "config": dump_config(cfg),
        "pairwise": {"offsets": np.asarray(pw.offsets).tolist(), "weights": list(pw.weights)},
        "joint_names": list(tree.names),
    }
    with staged_output(Path(args.out)) as tmp:
        save_checkpoint(model, tmp / "model.ckpt")
        (tmp / "model.json").write_text(json.dumps(meta, indent=1) + "\n")
        (tmp / "loss.csv").write_text(res.loss_csv())
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np

    from .inference import default_limbs, estimates_csv, pcp_csv, pcp_strict, pdj_csv, pdj_curve
    from .model import predict
    from .synth import read_dataset

    cfg, model, pw = _load_model(Path(args.checkpoint))
    mode = args.mode or cfg.infer.mode
    data = read_dataset(args.data, model.tree)
    ests, _ = predict(model, data, pw, mode, cfg.infer.batch_size)
    coords = np.stack([e.coords for e in ests]) if ests else np.zeros((0, model.tree.K, 2))
    pcp = pcp_strict(coords, data.joints, default_limbs(model.tree))
    pdj = pdj_curve(coords, data.joints, cfg.infer.pdj_thresholds)
    with staged_output(Path(args.out)) as tmp:
        (tmp / "pcp.csv").write_text(pcp_csv(pcp))
        (tmp / "pdj.csv").write_text(pdj_csv(pdj, cfg.infer.pdj_thresholds, model.tree.names))
        (tmp / "estimates.csv").write_text(estimates_csv(ests, model.tree.names))
    print(f"mean strict PCP ({mode}): {pcp.mean:.2f}")
    return EXIT_OK


def normalized_pgm(values):
    """Scale one map to 0..255; returns (uint8 image, min, max)."""
    import numpy as np

    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    scaled = np.zeros(values.shape) if span == 0 else (values - lo) / span
    return np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8), lo, hi


def cmd_predict(args) -> int:
    import numpy as np

    from .inference import ScoreMapSet, decode_unary, estimates_csv
    from .synth import DataError, read_pgm, write_pgm
    from .tensor import check_finite

    cfg, model, pw = _load_model(Path(args.checkpoint))
    mode = args.mode or cfg.infer.mode
    image = read_pgm(args.image)
    size = cfg.model.input_size
    if image.shape != (size, size):
        raise DataError(f"image {args.image} is {image.shape[1]}x{image.shape[0]}, model expects {size}x{size}")
    scores = model.score_maps(image[None, None].astype(model.dtype) / model.dtype(255.0))[0]
    check_finite(scores, "score maps")
    sm = ScoreMapSet(scores, model.tree.K, cfg.model.mixtures, cfg.model.downsample)
    unary = sm.joint_unary(cfg.infer.normalize)
    est = decode_unary(unary, pw, model.tree, mode, cfg.model.downsample)
    maps = {name: unary[k] for k, name in enumerate(model.tree.names)}
    lp = sm.log_probs() if cfg.infer.normalize else scores
    maps["background"] = lp[-1]
    with staged_output(Path(args.out)) as tmp:
        (tmp / "estimates.csv").write_text(estimates_csv([est], model.tree.names, ids=[Path(args.image).stem]))
        sdir = tmp / "scoremaps"
        sdir.mkdir()
        ranges = ["map,min,max"]
        for name, values in maps.items():
            img, lo, hi = normalized_pgm(values)
            write_pgm(sdir / f"{name}.pgm", img)
            ranges.append(f"{name},{lo!r},{hi!r}")
            if args.raw:
                (sdir / f"{name}.f32").write_bytes(np.ascontiguousarray(values, dtype="<f4").tobytes())
        (sdir / "ranges.csv").write_text("\n".join(ranges) + "\n")
    return EXIT_OK


def demo_kernels(k: int = 7):
    """Offset deltas plus one asymmetric smear; returns [(name, kernel, (dx, dy) or None)]."""
    import numpy as np

    c = k // 2
    out = []
    for dx, dy in ((3, 0), (-3, 0), (0, 3), (0, -2), (2, 2), (-1, 3)):
        w = np.zeros((k, k))
        w[c - dy, c - dx] = 1.0
        out.append((f"shift_{dx:+d}_{dy:+d}", w, (dx, dy)))
    smear = np.zeros((k, k))
    for t in range(c + 1):  # weight trail towards the lower right
        smear[c - t, c - t] = 1.0 / (c + 1)
    out.append(("smear_diag", smear, None))
    return out


def cmd_demo_shift(args) -> int:
    import numpy as np

    from .structured import TransformKernelStack, apply_kernel_stack
    from .synth import write_pgm
    from .tensor import ConvParams, Param

    n, sigma = args.size, args.sigma
    if n < 9 or sigma <= 0:
        from .config import ConfigError

        raise ConfigError("--size must be >= 9 and --sigma positive")
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    c = (n - 1) / 2
    blob = np.exp(-((xs - c) ** 2 + (ys - c) ** 2) / (2 * sigma**2))

    def to_pgm(a):
        return np.clip(np.rint(a * 255), 0, 255).astype(np.uint8)

    with staged_output(Path(args.out)) as tmp:
        write_pgm(tmp / "input.pgm", to_pgm(blob))
        rows = ["name,dx,dy"]
        for name, w, shift in demo_kernels():
            k = w.shape[0]
            stack = TransformKernelStack((0, 1), [ConvParams(Param(w[None, None]), Param(np.zeros(1)), 1, k // 2)])
            out, _ = apply_kernel_stack(blob[None, None], stack)
            write_pgm(tmp / f"kernel_{name}.pgm", to_pgm(w / w.max()))
            write_pgm(tmp / f"output_{name}.pgm", to_pgm(out[0, 0]))
            rows.append(f"{name},{shift[0] if shift else ''},{shift[1] if shift else ''}")
        (tmp / "kernels.csv").write_text("\n".join(rows) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="structpose", description="Structured feature learning for pose estimation.")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=False):
        sp.add_argument("--config", required=required, help="INI file or preset name (default, small, vgg16-fcn)")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")

    sp = sub.add_parser("print-config", help="dump the fully resolved configuration")
    with_config(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_print_config)

    sp = sub.add_parser("rf-report", help="receptive-field table of a configuration")
    with_config(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_rf_report)

    sp = sub.add_parser("gen-data", help="render a synthetic dataset")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--count", type=int)
    sp.add_argument("--multi-figure", type=float, help="probability of a second, unlabeled figure")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model on a dataset directory")
    with_config(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--val")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="strict PCP and PDJ of a checkpoint on a dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=("argmax", "tree_dp", "gdt"))
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="decode one PGM image")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=("argmax", "tree_dp", "gdt"))
    sp.add_argument("--raw", action="store_true", help="also dump raw little-endian float32 maps")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("demo-shift", help="blob convolved with asymmetric transform kernels")
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=33)
    sp.add_argument("--sigma", type=float, default=2.5)
    sp.set_defaults(func=cmd_demo_shift)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("structpose: error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        # only effective when numpy has not been imported yet
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    from .config import ConfigError
    from .model import CheckpointError
    from .synth import DataError
    from .tensor import NonFiniteError

    try:
        return args.func(args)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        code, msg = EXIT_DATA, f"data error: {exc}"
    except (NonFiniteError, FloatingPointError) as exc:
        code, msg = EXIT_NUMERIC, f"numeric failure: {exc}"
    except OSError as exc:
        code, msg = EXIT_DATA, f"i/o error: {exc}"
    except Exception as exc:  # single-line diagnostic instead of a traceback
        code, msg = EXIT_OTHER, f"{type(exc).__name__}: {exc}"
    print(f"structpose: {' '.join(msg.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
