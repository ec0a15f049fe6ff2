"""Command-line front end: gen-data / train / denoise / evaluate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
abort. DCSW_THREADS caps BLAS worker threads (0 or unset = automatic);
it must be applied before numpy loads, which is why the heavy imports
live inside the command functions.
"""

import argparse
import os
import sys


def _apply_thread_cap():
    cap = os.environ.get("DCSW_THREADS", "0")
    try:
        n = int(cap)
    except ValueError:
        raise SystemExit(f"DCSW_THREADS must be an integer, got {cap!r}")
    if n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(n))


def build_parser():
    p = argparse.ArgumentParser(
        prog="ctdenoise",
        description="Synthetic low-dose CT denoising: data, training, inference, metrics.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a paired NDCT/LDCT dataset")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--slices", type=int, default=8)
    g.add_argument("--size", type=int, default=512)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--i0-full", type=float, default=None,
                   help="full-dose photons per ray")
    g.add_argument("--i0-low", type=float, default=None,
                   help="low-dose photons per ray (default: i0-full / 4)")
    g.add_argument("--angles", type=int, default=None)
    g.add_argument("--fov", type=float, default=None, help="field of view, mm")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a denoiser on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--mode", choices=["l1", "wgan", "joint"], default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--config", default=None, help="INI config file")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--n-critic", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--patch-size", type=int, default=None)
    t.add_argument("--patch-count", type=int, default=None)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--resume", action="store_true",
                   help="continue from the run directory's checkpoint")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("denoise", help="denoise every slice in a directory")
    d.add_argument("--ckpt", required=True, help="generator checkpoint (generator.dcsw)")
    d.add_argument("--in", dest="in_dir", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--tile", type=int, default=None)
    d.add_argument("--overlap", type=int, default=None)
    d.add_argument("--config", default=None, help="INI config file (model section)")
    d.add_argument("--png", action="store_true",
                   help="also write PNGs under the [-160, 240] HU display window")
    d.set_defaults(func=cmd_denoise)

    e = sub.add_parser("evaluate", help="PSNR/SSIM/RMSE report for matched slices")
    e.add_argument("--denoised", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--out", required=True, help="report CSV path")
    e.set_defaults(func=cmd_evaluate)
    return p


def cmd_gen_data(args):
    from .config import apply_overrides, load_config
    from .ctdata import generate_dataset

    cfg = load_config(None)
    apply_overrides(cfg, {
        ("data", "slices"): args.slices,
        ("data", "size"): args.size,
        ("data", "seed"): args.seed,
        ("data", "i0_full"): args.i0_full,
        ("data", "n_angles"): args.angles,
        ("data", "fov_mm"): args.fov,
    })
    d = cfg["data"]
    i0_low = args.i0_low if args.i0_low is not None else d["i0_full"] / 4.0
    ids = generate_dataset(
        args.out, d["slices"], d["size"], d["seed"], d["i0_full"], i0_low,
        d["n_angles"] or None, d["n_detectors"] or None, d["fov_mm"],
        (d["complexity_lo"], d["complexity_hi"]),
    )
    print(f"wrote {len(ids)} slice pairs to {args.out}")
    return 0


def cmd_train(args):
    from .config import (apply_overrides, critic_config, generator_config,
                         load_config, train_config, write_config)
    from .ctdata import load_patch_arrays
    from .rng import RngStream
    from .training import CHECKPOINT_NAME, train_loop

    base = args.config
    if args.resume and base is None:
        base = os.path.join(args.out, "config.ini")
    cfg = load_config(base)
    apply_overrides(cfg, {
        ("train", "mode"): args.mode,
        ("train", "steps"): args.steps,
        ("train", "batch_size"): args.batch_size,
        ("train", "n_critic"): args.n_critic,
        ("train", "seed"): args.seed,
        ("train", "lr"): args.lr,
        ("train", "patch_size"): args.patch_size,
        ("train", "patch_count"): args.patch_count,
        ("train", "checkpoint_every"): args.checkpoint_every,
    })
    tcfg = train_config(cfg)
    gen_cfg = generator_config(cfg)
    critic_cfg = critic_config(cfg) if tcfg.mode != "l1" else None

    os.makedirs(args.out, exist_ok=True)
    write_config(cfg, os.path.join(args.out, "config.ini"))
    patch_rng = RngStream(tcfg.seed).stream("dataset")
    x, y = load_patch_arrays(args.data, cfg["train"]["patch_count"],
                             cfg["train"]["patch_size"], patch_rng)
    resume_from = None
    if args.resume:
        resume_from = os.path.join(args.out, CHECKPOINT_NAME)
    trainer = train_loop(x, y, gen_cfg, critic_cfg, tcfg, args.out, resume_from)
    print(f"trained to step {trainer.gstep}; run directory: {args.out}")
    return 0


def cmd_denoise(args):
    import numpy as np

    from .config import load_config
    from .ctdata import (DISPLAY_WINDOW, TRAIN_WINDOW, export_png, hu_scale,
                         hu_unscale, read_ctf, write_ctf)
    from .errors import DataError
    from .inference import DEFAULT_OVERLAP, DEFAULT_TILE, denoise_slice
    from .training import load_generator_params

    cfg = load_config(args.config)
    tile = args.tile if args.tile is not None else cfg["eval"]["tile"] or DEFAULT_TILE
    overlap = (args.overlap if args.overlap is not None
               else cfg["eval"]["overlap"] or DEFAULT_OVERLAP)

    from .config import generator_config
    store = load_generator_params(args.ckpt, generator_config(cfg))

    if not os.path.isdir(args.in_dir):
        raise DataError(f"input directory {args.in_dir} does not exist")
    names = sorted(n for n in os.listdir(args.in_dir) if n.endswith(".ctf"))
    low = [n for n in names if n.endswith("_low.ctf")]
    names = low if low else names
    if not names:
        raise DataError(f"no .ctf slices in {args.in_dir}")
    os.makedirs(args.out, exist_ok=True)
    for name in names:
        values, unit = read_ctf(os.path.join(args.in_dir, name))
        as_unit = hu_scale(values, TRAIN_WINDOW) if unit == "hu" else values
        den = np.clip(denoise_slice(store, as_unit, tile, overlap), 0.0, 1.0)
        out_hu = hu_unscale(den, TRAIN_WINDOW)
        if unit == "hu":
            write_ctf(os.path.join(args.out, name), out_hu, "hu")
        else:
            write_ctf(os.path.join(args.out, name), den, "unit")
        if args.png:
            export_png(os.path.join(args.out, name[: -len(".ctf")] + ".png"),
                       out_hu, DISPLAY_WINDOW)
    print(f"denoised {len(names)} slices into {args.out}")
    return 0


def cmd_evaluate(args):
    from .metrics import evaluate_run

    report = evaluate_run(args.denoised, args.reference, out_csv=args.out)
    mean = report.mean
    print(f"pairs={len(report.ids)} mean psnr={mean[0]:.3f} dB "
          f"ssim={mean[1]:.4f} rmse={mean[2]:.5f}")
    return 0


def main(argv=None):
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import ConfigError, DataError, NumericsError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericsError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
