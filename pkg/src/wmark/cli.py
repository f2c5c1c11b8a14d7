"""Command-line interface.

Subcommands: gen-corpus, train, embed, detect, calibrate, evaluate, ablate.
Flags override config-file values; ``--seed`` reseeds every subsystem at once;
``--json`` switches stdout to one machine-readable object. Report-writing
commands emit CSV files next to rendered PNG figures.

Exit codes: 0 success, 1 runtime failure (diagnostic on stderr), 2 usage
error.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from ._rng import NS_SMOOTHING, rng_stream
from .artifact import artifact_model, load_model, make_artifact, save_model
from .augment import default_pool
from .certify import (
    SmoothingConfig,
    calibrate,
    decide,
    load_calibration,
    save_calibration,
)
from .configfile import AppConfig, load_config
from .corpus import CorpusSpec, generate, ingest_dir
from .errors import ConfigError, InfeasibleAlphaError, WmarkError
from .harness import PgdL2, run_ablations, run_fpr_suite, run_robustness_suite
from .imaging import load_image, psnr, save_png
from .reports import (
    format_robustness_table,
    render_ablation_curves,
    render_fpr_plot,
    render_robustness_bars,
    render_train_curves,
    write_ablation_csv,
    write_fpr_csv,
    write_metrics_csv,
    write_robustness_csv,
    write_train_csv,
)
from .training import train_joint
from .watermark import embed

_DETECT_STREAM = 3


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        _limit_threads(args.threads)
    try:
        return args.func(args)
    except InfeasibleAlphaError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (WmarkError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - unexpected failure path
        print(f"internal error: {e!r}", file=sys.stderr)
        return 1


def _limit_threads(n: int) -> None:
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        print("warning: threadpoolctl unavailable; --threads ignored", file=sys.stderr)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wmark", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run-configuration file")
        sp.add_argument("--seed", type=int, help="master seed for every subsystem")
        sp.add_argument("--threads", type=int, help="cap BLAS thread count")
        sp.add_argument("--json", action="store_true", help="machine-readable stdout")

    g = sub.add_parser("gen-corpus", help="write a synthetic image corpus")
    common(g)
    g.add_argument("--out", required=True, help="output directory for PNG files")
    g.add_argument("--n", type=int, help="number of images")
    g.add_argument("--height", type=int)
    g.add_argument("--width", type=int)
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train", help="train watermark and verifier jointly")
    common(t)
    t.add_argument("--corpus-dir", help="train on images from this directory")
    t.add_argument("--synthetic", type=int, help="train on N synthetic images")
    t.add_argument("--heldout-n", type=int, default=0, help="extra held-out images")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--mu", type=float)
    t.add_argument("--nu", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--c1", type=float)
    t.add_argument("--c2", type=float)
    t.add_argument("--height", type=int)
    t.add_argument("--width", type=int)
    t.add_argument("--fixed-watermark", action="store_true",
                   help="freeze the watermark at initialization")
    t.add_argument("--out", default="model.rawm", help="model artifact path")
    t.add_argument("--report-dir", help="directory for train report CSV and figure")
    t.add_argument("--stable-timing", action="store_true",
                   help="zero wall-clock columns for byte-stable reports")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="embed the watermark into an image")
    common(e)
    e.add_argument("--model", required=True)
    e.add_argument("--input", required=True)
    e.add_argument("--output", required=True)
    e.set_defaults(func=cmd_embed)

    d = sub.add_parser("detect", help="decide whether an image is watermarked")
    common(d)
    d.add_argument("--model", required=True)
    d.add_argument("--calibration", required=True)
    d.add_argument("--input", required=True)
    d.set_defaults(func=cmd_detect)

    c = sub.add_parser("calibrate", help="select the certified decision threshold")
    common(c)
    c.add_argument("--model", required=True)
    c.add_argument("--corpus-dir", help="calibration originals from this directory")
    c.add_argument("--n", type=int, help="number of synthetic calibration images")
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--delta", type=float, default=0.05)
    c.add_argument("--gamma", type=float, default=0.001)
    c.add_argument("--sigma", type=float)
    c.add_argument("--n-mc", type=int)
    c.add_argument("--offset-mode", choices=("conservative", "literal"),
                   default="conservative")
    c.add_argument("--out", default="calibration.txt")
    c.set_defaults(func=cmd_calibrate)

    v = sub.add_parser("evaluate", help="robustness and certified-FPR report")
    common(v)
    v.add_argument("--model", required=True)
    v.add_argument("--corpus-dir", help="test originals from this directory")
    v.add_argument("--synthetic", type=int, help="test on N synthetic images")
    v.add_argument("--calibration", help="also run the certified-FPR table")
    v.add_argument("--pgd-radius", type=float, default=0.001)
    v.add_argument("--pgd-steps", type=int, default=10)
    v.add_argument("--alphas", default="0.05,0.1")
    v.add_argument("--fpr-n", type=int, help="fresh watermarked images for the FPR table")
    v.add_argument("--report-dir", default="reports")
    v.add_argument("--stable-timing", action="store_true")
    v.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="paired ablation training runs")
    common(a)
    a.add_argument("--n-seeds", type=int, default=1)
    a.add_argument("--report-dir", default="reports")
    a.add_argument("--stable-timing", action="store_true")
    a.set_defaults(func=cmd_ablate)

    return p


# --- configuration plumbing ---------------------------------------------------

def _app_config(args) -> AppConfig:
    cfg = load_config(args.config) if args.config else AppConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
        cfg.smoothing = replace(cfg.smoothing, seed=args.seed)
        cfg.corpus = replace(cfg.corpus, seed=args.seed)
    return cfg


def _override_run(cfg: AppConfig, args, names) -> None:
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.run, name, value)
    cfg.run.__post_init__()


def _emit(args, payload: dict, human: str = "") -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    elif human:
        print(human)


def _smoothing_from(args, cfg: AppConfig) -> SmoothingConfig:
    sm = cfg.smoothing
    if getattr(args, "sigma", None) is not None:
        sm = replace(sm, sigma=args.sigma)
    if getattr(args, "n_mc", None) is not None:
        sm = replace(sm, n_mc=args.n_mc)
    return sm


def _test_images(args, cfg: AppConfig, n_default: int, seed_offset: int) -> np.ndarray:
    """Evaluation/calibration originals from a directory or the generator."""
    run = cfg.run
    if getattr(args, "corpus_dir", None):
        return ingest_dir(args.corpus_dir, run.height, run.width, run.channels)
    n = getattr(args, "synthetic", None) or getattr(args, "n", None) or n_default
    spec = replace(
        cfg.corpus,
        n_images=n,
        height=run.height,
        width=run.width,
        channels=run.channels,
        seed=cfg.corpus.seed + seed_offset,
    )
    return generate(spec)


# --- subcommands ----------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    cfg = _app_config(args)
    spec = cfg.corpus
    if args.n is not None:
        spec = replace(spec, n_images=args.n)
    if args.height is not None:
        spec = replace(spec, height=args.height)
    if args.width is not None:
        spec = replace(spec, width=args.width)
    images = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    width = len(str(len(images) - 1))
    for i, img in enumerate(images):
        save_png(img, os.path.join(args.out, f"img_{i:0{width}d}.png"))
    _emit(
        args,
        {"out": args.out, "n_images": len(images), "seed": spec.seed,
         "height": spec.height, "width": spec.width},
        f"wrote {len(images)} images to {args.out}",
    )
    return 0


def cmd_train(args) -> int:
    cfg = _app_config(args)
    _override_run(cfg, args, ("epochs", "batch_size", "mu", "nu", "momentum",
                              "c1", "c2", "height", "width"))
    if args.fixed_watermark:
        cfg.run.update_watermark = False
    run = cfg.run

    heldout_n = args.heldout_n
    if args.corpus_dir:
        images = ingest_dir(args.corpus_dir, run.height, run.width, run.channels)
    else:
        n_train = args.synthetic or cfg.corpus.n_images
        spec = replace(cfg.corpus, n_images=n_train + heldout_n,
                       height=run.height, width=run.width, channels=run.channels)
        images = generate(spec)
    if heldout_n:
        if heldout_n >= len(images):
            raise ConfigError("heldout-n leaves no training images")
        corpus_images, heldout = images[:-heldout_n], images[-heldout_n:]
    else:
        corpus_images, heldout = images, None

    params, wm, report = train_joint(run, corpus_images, heldout=heldout)
    save_model(make_artifact(params, wm), args.out)

    payload = {"model": args.out, "epochs": run.epochs, "seed": run.seed,
               "n_train": len(corpus_images)}
    if report.epochs:
        last = report.epochs[-1]
        payload.update(loss_total=last.loss_total, train_acc=last.train_acc,
                       heldout_acc=last.heldout_acc)
    if args.report_dir:
        os.makedirs(args.report_dir, exist_ok=True)
        csv_path = os.path.join(args.report_dir, "train_report.csv")
        write_train_csv(report, csv_path, stable_timing=args.stable_timing)
        fig_path = os.path.join(args.report_dir, "train_curves.png")
        render_train_curves(report, fig_path)
        payload["report_csv"] = csv_path
        payload["report_figure"] = fig_path
    _emit(args, payload, f"trained model written to {args.out}")
    return 0


def cmd_embed(args) -> int:
    params, wm = artifact_model(load_model(args.model))
    img = load_image(args.input, channels=wm.shape[0])
    if img.shape != wm.shape:
        raise ConfigError(
            f"image shape {img.shape} does not match model {wm.shape}; "
            f"resize the input or retrain"
        )
    marked = embed(img, wm)
    save_png(marked, args.output)
    _emit(
        args,
        {"input": args.input, "output": args.output,
         "psnr_db": psnr(marked, img)},
        f"embedded watermark: {args.output} (PSNR {psnr(marked, img):.2f} dB)",
    )
    return 0


def cmd_detect(args) -> int:
    params, wm = artifact_model(load_model(args.model))
    cal = load_calibration(args.calibration)
    img = load_image(args.input, channels=wm.shape[0])
    seed = args.seed if args.seed is not None else cal.seed
    sm = SmoothingConfig(sigma=cal.sigma, n_mc=cal.n_mc, clamp_eps=cal.clamp_eps, seed=seed)
    rng = rng_stream(seed, NS_SMOOTHING, _DETECT_STREAM, 0)
    verdict, score = decide(params, cal, img, sm, rng)
    _emit(
        args,
        {"input": args.input, "smoothed_score": score, "threshold": cal.tau,
         "verdict": verdict},
        f"smoothed score {score:.6f}  threshold {cal.tau:.6f}  verdict: {verdict}",
    )
    return 0


def cmd_calibrate(args) -> int:
    cfg = _app_config(args)
    params, wm = artifact_model(load_model(args.model))
    cfg.run.channels, cfg.run.height, cfg.run.width = wm.shape
    originals = _test_images(args, cfg, n_default=2000, seed_offset=101)
    sm = _smoothing_from(args, cfg)
    cal = calibrate(params, wm, originals, args.alpha, args.delta, args.gamma,
                    sm, offset_mode=args.offset_mode)
    save_calibration(cal, args.out)
    _emit(
        args,
        {"calibration": args.out, "tau": cal.tau, "alpha": cal.alpha,
         "delta": cal.delta, "gamma": cal.gamma, "sigma": cal.sigma,
         "n": cal.n, "correction": cal.correction},
        f"threshold {cal.tau:.6f} at alpha={cal.alpha:g} "
        f"(correction {cal.correction:.5f}, n={cal.n}) -> {args.out}",
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _app_config(args)
    params, wm = artifact_model(load_model(args.model))
    cfg.run.channels, cfg.run.height, cfg.run.width = wm.shape
    test_set = _test_images(args, cfg, n_default=1000, seed_offset=202)
    sm = cfg.smoothing
    manips = list(cfg.run.pool) or list(default_pool())
    if args.pgd_radius > 0:
        manips.append(PgdL2(radius=args.pgd_radius, steps=args.pgd_steps))
    report = run_robustness_suite(params, wm, test_set, manips, sm)

    os.makedirs(args.report_dir, exist_ok=True)
    write_robustness_csv(report, os.path.join(args.report_dir, "robustness.csv"))
    write_metrics_csv(report, os.path.join(args.report_dir, "metrics.csv"),
                      stable_timing=args.stable_timing)
    with open(os.path.join(args.report_dir, "robustness.txt"), "w") as f:
        f.write(format_robustness_table(report))
    render_robustness_bars(report, os.path.join(args.report_dir, "robustness.png"))

    payload = {
        "cells": {c.name: c.auroc for c in report.cells},
        "mean_psnr_db": report.mean_psnr,
        "out_of_scope": list(report.out_of_scope),
        "report_dir": args.report_dir,
    }
    if not args.stable_timing:
        payload["embed_images_per_second"] = report.throughput_ips

    if args.calibration:
        cal = load_calibration(args.calibration)
        sm_cal = SmoothingConfig(sigma=cal.sigma, n_mc=cal.n_mc,
                                 clamp_eps=cal.clamp_eps, seed=cal.seed)
        alphas = [float(a) for a in args.alphas.split(",") if a]
        n_fresh = args.fpr_n or min(1000, len(test_set))
        fresh = embed_batch_cli(test_set[:n_fresh], wm)
        rows = run_fpr_suite(params, wm, cal, fresh, cal.gamma, sm_cal,
                             alphas=alphas, attack_steps=args.pgd_steps)
        write_fpr_csv(rows, os.path.join(args.report_dir, "fpr.csv"))
        render_fpr_plot(rows, os.path.join(args.report_dir, "fpr.png"))
        report.fpr_rows = rows
        payload["fpr"] = {
            repr(r.alpha): {"clean": r.fpr_clean, "attacked": r.fpr_attacked}
            for r in rows
        }

    failures = _check_thresholds(report, cfg.thresholds)
    _emit(args, payload, format_robustness_table(report))
    if failures:
        for f_ in failures:
            print(f"threshold missed: {f_}", file=sys.stderr)
        return 1
    return 0


def embed_batch_cli(images, wm):
    from .watermark import embed_batch

    return embed_batch(images, wm)


def _check_thresholds(report, thresholds: dict[str, float]) -> list[str]:
    failures = []
    manip = report.manipulation_cells()
    if "min_clean_auroc" in thresholds and report.clean_auroc < thresholds["min_clean_auroc"]:
        failures.append(
            f"clean AUROC {report.clean_auroc:.4f} < {thresholds['min_clean_auroc']}"
        )
    if "min_mean_auroc" in thresholds and manip:
        mean = float(np.mean([c.auroc for c in manip]))
        if mean < thresholds["min_mean_auroc"]:
            failures.append(f"mean AUROC {mean:.4f} < {thresholds['min_mean_auroc']}")
    if "min_cell_auroc" in thresholds:
        for c in manip:
            if c.auroc < thresholds["min_cell_auroc"]:
                failures.append(
                    f"cell {c.name} AUROC {c.auroc:.4f} < {thresholds['min_cell_auroc']}"
                )
    return failures


def cmd_ablate(args) -> int:
    cfg = _app_config(args)
    run = cfg.run
    spec = replace(cfg.corpus, height=run.height, width=run.width,
                   channels=run.channels)
    n_heldout = max(1, spec.n_images // 5)
    images = generate(replace(spec, n_images=spec.n_images + n_heldout))
    corpus_images, heldout = images[: spec.n_images], images[spec.n_images :]

    results = {}
    for i in range(args.n_seeds):
        seed = run.seed + i
        run_i = replace(run, seed=seed)
        results[seed] = run_ablations(run_i, corpus_images, heldout=heldout)

    os.makedirs(args.report_dir, exist_ok=True)
    csv_path = os.path.join(args.report_dir, "ablation.csv")
    write_ablation_csv(results, csv_path, stable_timing=args.stable_timing)
    first = results[min(results)]
    fig_path = os.path.join(args.report_dir, "ablation_curves.png")
    render_ablation_curves(first, fig_path)

    summary = {}
    for seed, res in results.items():
        summary[str(seed)] = {
            "joint_final_heldout_acc": res.final("joint", "heldout_acc"),
            "fixed_final_heldout_acc": res.final("fixed", "heldout_acc"),
            "spatial_full_noise_acc": res.final("spatial_full", "heldout_acc"),
            "spatial_none_noise_acc": res.final("spatial_none", "heldout_acc"),
            "joint_final_loss": res.final("joint", "loss_total"),
            "fixed_final_loss": res.final("fixed", "loss_total"),
        }
    _emit(
        args,
        {"seeds": summary, "report_csv": csv_path, "report_figure": fig_path},
        "\n".join(
            f"seed {s}: joint acc {v['joint_final_heldout_acc']:.3f} vs "
            f"fixed {v['fixed_final_heldout_acc']:.3f}; noise view with spatial "
            f"{v['spatial_full_noise_acc']:.3f} vs without {v['spatial_none_noise_acc']:.3f}"
            for s, v in summary.items()
        ),
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
