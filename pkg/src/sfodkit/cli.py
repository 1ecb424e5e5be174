"""Command-line front end.

Subcommands: gen-data, pretrain, adapt, eval, ablate, sweep,
diagnose-bins, diagnose-slide, gradcheck. Every command reads a flat
key=value config file plus `--set key=value` overrides, writes CSVs
(stamped with the run-manifest hash) and rendered figures under the
output directory, and fails with a single-line `error: <kind>: <detail>`
on stderr — exit 2 for usage/config problems, 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import adapt as adapt_mod
from . import experiments, losses, metrics, plots, reports
from .config import Config, ConfigError, RunManifest, load_config, make_manifest
from .detector import forward, init_params, load_checkpoint, save_checkpoint
from .rng import child_rng
from .synthworld import load_dataset, save_dataset

OUT_ENV = "SFODKIT_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line machine-parseable usage errors
        raise UsageError(message)


def _parse_seeds(spec: str) -> list[int]:
    spec = spec.strip()
    try:
        if "," in spec:
            return [int(tok) for tok in spec.split(",") if tok.strip() != ""]
        count = int(spec)
    except ValueError:
        raise UsageError(f"--seeds expects a count or comma list, got {spec!r}") from None
    if count < 1:
        raise UsageError("--seeds count must be >= 1")
    return list(range(count))


def _out_dir(args) -> Path:
    root = args.out or os.environ.get(OUT_ENV) or "runs"
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args) -> Config:
    return load_config(args.config, args.set or [])


def _dataset(cfg: Config, args):
    if getattr(args, "data", None):
        return load_dataset(args.data)
    return experiments.build_dataset(cfg, cfg.seed)


def _input_hashes(args) -> dict[str, str]:
    hashes = {}
    if getattr(args, "checkpoint", None):
        ck = Path(args.checkpoint)
        if not ck.exists():
            raise UsageError(f"missing checkpoint: {ck}")
        from .config import hash_file
        hashes["checkpoint"] = hash_file(ck)
    if getattr(args, "data", None):
        from .config import hash_file
        data = Path(args.data)
        if not data.is_dir():
            raise UsageError(f"missing dataset directory: {data}")
        for f in sorted(data.iterdir()):
            if f.is_file():
                hashes[f"data/{f.name}"] = hash_file(f)
    return hashes


def _manifest(cfg: Config, seeds: list[int], out: Path, args) -> RunManifest:
    manifest = make_manifest(cfg, seeds, out)
    manifest.input_hashes = _input_hashes(args)
    manifest.write(out)
    return manifest


def _eval_csv(result: metrics.EvalResult, path: Path, manifest_hash: str) -> None:
    rows = [[str(cat), result.ap[cat], result.n_gt[cat], result.n_det[cat]]
            for cat in sorted(result.ap)]
    rows.append(["mAP", result.map, sum(result.n_gt.values()), sum(result.n_det.values())])
    reports.write_csv(path, ["category", "AP", "n_gt", "n_det"], rows, manifest_hash)


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    dataset = experiments.build_dataset(cfg, cfg.seed)
    target = out / "dataset"
    save_dataset(dataset, target)
    _manifest(cfg, [cfg.seed], out, args)
    print(f"dataset: {len(dataset.source)} source / {len(dataset.target)} target / "
          f"{len(dataset.eval)} eval scenes -> {target}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    dataset = _dataset(cfg, args)
    manifest = _manifest(cfg, [cfg.seed], out, args)
    params = adapt_mod.pretrain_source(dataset.world, dataset.source, cfg, cfg.seed)
    ckpt = out / "source.ckpt"
    save_checkpoint(params, ckpt)
    result = metrics.evaluate_model(
        params, dataset.world, dataset.eval, n_jitter=cfg.n_jitter,
        n_random=cfg.n_random, jitter_sigma=cfg.jitter_sigma, nms_iou=cfg.nms_iou)
    _eval_csv(result, out / "eval.csv", manifest.manifest_hash)
    print(f"source checkpoint -> {ckpt}; target-eval mAP {result.map:.4f}")
    return 0


def cmd_adapt(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    source = load_checkpoint(args.checkpoint)
    dataset = _dataset(cfg, args)
    manifest = _manifest(cfg, [cfg.seed], out, args)
    config_id = manifest.manifest_hash[:12]
    result = adapt_mod.adapt_target(
        source, dataset.world, dataset.target, dataset.eval, cfg, cfg.seed,
        config_id=config_id)
    save_checkpoint(result.student, out / "student.ckpt")
    save_checkpoint(result.teacher, out / "teacher.ckpt")
    header = adapt_mod.epoch_log_header(dataset.world.num_categories)
    rows = [[row[col] for col in header] for row in result.epoch_log]
    reports.write_csv(out / "epochs.csv", header, rows, manifest.manifest_hash)
    if result.epoch_log:
        plots.plot_epoch_curves(result.epoch_log, out / "epochs.png")
    final = metrics.evaluate_model(
        result.teacher, dataset.world, dataset.eval, n_jitter=cfg.n_jitter,
        n_random=cfg.n_random, jitter_sigma=cfg.jitter_sigma, nms_iou=cfg.nms_iou)
    _eval_csv(final, out / "eval.csv", manifest.manifest_hash)
    print(f"adapted teacher mAP {result.final_map:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    params = load_checkpoint(args.checkpoint)
    dataset = _dataset(cfg, args)
    manifest = _manifest(cfg, [cfg.seed], out, args)
    result = metrics.evaluate_model(
        params, dataset.world, dataset.eval, n_jitter=cfg.n_jitter,
        n_random=cfg.n_random, jitter_sigma=cfg.jitter_sigma, nms_iou=cfg.nms_iou)
    _eval_csv(result, out / "eval.csv", manifest.manifest_hash)
    print(f"mAP {result.map:.4f} over {len(dataset.eval)} eval scenes")
    return 0


def _write_study(study, out: Path, stem: str, manifest_hash: str) -> None:
    reports.write_csv(out / f"{stem}.csv", study.summary_header, study.summary_rows,
                      manifest_hash)
    reports.write_csv(out / f"{stem}_seeds.csv", study.seed_header, study.seed_rows,
                      manifest_hash)


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    seeds = _parse_seeds(args.seeds)
    manifest = _manifest(cfg, seeds, out, args)
    study = experiments.run_ablation(cfg, seeds, workers=args.workers)
    _write_study(study, out, "ablate", manifest.manifest_hash)
    names = [row[0] for row in study.summary_rows]
    means = [row[3] for row in study.summary_rows]
    stds = [row[4] for row in study.summary_rows]
    plots.plot_study_bars(names, means, stds, out / "ablate.png",
                          title=f"LPU ablation over {len(seeds)} seeds")
    for name, mean in zip(names, means):
        print(f"{name}: mAP {mean:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    seeds = _parse_seeds(args.seeds)
    values = [v for v in args.values.split(",") if v.strip() != ""]
    if not values:
        raise UsageError("--values must list at least one value")
    manifest = _manifest(cfg, seeds, out, args)
    study = experiments.run_sweep(cfg, seeds, args.param, values, workers=args.workers)
    _write_study(study, out, "sweep", manifest.manifest_hash)
    means = [row[3] for row in study.summary_rows]
    stds = [row[4] for row in study.summary_rows]
    try:
        xs = [float(v) for v in values]
        plots.plot_sweep_curve(xs, means, stds, args.param, out / "sweep.png")
    except ValueError:  # non-numeric sweep (e.g. mixup_strategy): bars instead
        plots.plot_study_bars(values, means, stds, out / "sweep.png",
                              title=f"mAP by {args.param}")
    for v, mean in zip(values, means):
        print(f"{args.param}={v}: mAP {mean:.4f}")
    return 0


def cmd_diagnose_bins(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    params = load_checkpoint(args.checkpoint)
    dataset = _dataset(cfg, args)
    manifest = _manifest(cfg, [cfg.seed], out, args)
    bins = metrics.assignment_accuracy_bins(
        params, dataset.world, dataset.eval, n_jitter=cfg.n_jitter,
        n_random=cfg.n_random, jitter_sigma=cfg.jitter_sigma,
        fg_iou_threshold=cfg.fg_iou_threshold, nms_iou=cfg.nms_iou)
    rows = [[b.lo, b.hi, b.n, b.accuracy] for b in bins]
    reports.write_csv(out / "bins.csv", ["bin_lo", "bin_hi", "n", "accuracy"], rows,
                      manifest.manifest_hash)
    plots.plot_bins(bins, out / "bins.png")
    filled = [(i, b.accuracy) for i, b in enumerate(bins) if b.n > 0]
    if len(filled) >= 3:
        from scipy.stats import spearmanr
        rho = spearmanr([i for i, _ in filled], [a for _, a in filled]).statistic
        print(f"bins: {len(filled)} non-empty, Spearman(bin, accuracy) = {rho:.3f}")
    else:
        print(f"bins: only {len(filled)} non-empty bins")
    return 0


def cmd_diagnose_slide(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    params = load_checkpoint(args.checkpoint)
    dataset = _dataset(cfg, args)
    manifest = _manifest(cfg, [cfg.seed], out, args)
    scene = dataset.eval[0]
    gt_box = scene.objects[0][1]
    end_box = metrics.slide_end_box(gt_box)
    curve = metrics.slide_diagnostic(params, dataset.world, scene, gt_box, end_box,
                                     steps=args.steps)
    reports.write_csv(out / "slide.csv", ["step", "offset", "max_prob"],
                      [list(pt) for pt in curve], manifest.manifest_hash)
    plots.plot_slide(curve, out / "slide.png")
    print(f"slide: prob {curve[0][2]:.3f} at GT -> {curve[-1][2]:.3f} at IoU-0.5 offset")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    rng = child_rng(cfg.seed, "gradcheck")
    reports_text: list[str] = []
    ok = True
    for name, check in gradcheck_suite(cfg, rng):
        rep = check()
        reports_text.append(f"== {name} ==\n{rep.format_report()}")
        ok = ok and rep.passed
    text = "\n\n".join(reports_text) + "\n"
    (out / "gradcheck.txt").write_text(text)
    print(text, end="")
    print(f"gradcheck: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def gradcheck_suite(cfg: Config, rng: np.random.Generator):
    """Deterministic probe instances for every differentiated objective."""
    from .geometry import BBox

    d, h, c = cfg.feature_dim, cfg.hidden_dim, cfg.num_categories
    params = init_params(d, h, c, rng, scale=0.5)
    teacher = init_params(d, h, c, rng, scale=0.5)
    n, n_rows = 12, 6
    x = rng.normal(0.0, 2.0, (n, d))
    labels = rng.integers(0, c + 1, n)
    rows = np.arange(n_rows, dtype=np.intp)
    t_out = forward(teacher, x)
    p_t = t_out.probs[rows]
    f_t = t_out.embeddings[rows]
    # clustered boxes so some pairs overlap and others do not
    boxes = []
    for i in range(n_rows):
        cx, cy = rng.uniform(20, 80, 2)
        if i % 2 == 1:  # near-duplicate of the previous box -> high IoU pair
            prev = boxes[-1]
            cx, cy = (prev.x1 + prev.x2) / 2 + rng.uniform(-4, 4), (prev.y1 + prev.y2) / 2
        w, hgt = rng.uniform(14, 30, 2)
        boxes.append(BBox(cx - w / 2, cy - hgt / 2, cx + w / 2, cy + hgt / 2))

    def check_high():
        def vag(p):
            return losses.grad_loss_high(p, forward(p, x), labels)
        return losses.grad_check(vag, params)

    def check_pst():
        def vag(p):
            return losses.grad_loss_pst(p, forward(p, x), rows, p_t)
        return losses.grad_check(vag, params)

    def make_lscl(strategy: str, normalized: bool):
        f_t_used = f_t / np.linalg.norm(f_t, axis=1, keepdims=True) if normalized else f_t

        def vag(p):
            out = forward(p, x)
            f_s = out.embeddings[rows]
            if normalized:
                f_s = f_s / np.linalg.norm(f_s, axis=1, keepdims=True)
            batch = losses.build_proposal_batch(
                boxes, f_s, f_t_used, out.probs[rows], p_t, strategy=strategy)
            return losses.grad_loss_lscl(p, out, rows, batch, cfg.tau,
                                         normalized=normalized)
        return lambda: losses.grad_check(vag, params)

    yield "loss_high", check_high
    yield "loss_pst", check_pst
    yield "loss_lscl[iou]", make_lscl("iou", False)
    yield "loss_lscl[iou-]", make_lscl("iou-", False)
    yield "loss_lscl[cls]", make_lscl("cls", False)
    yield "loss_lscl[iou,normalized]", make_lscl("iou", True)


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="sfodkit",
                     description="Source-free detector adaptation sandbox")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, seeds=False, data=True):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--out", default=None,
                       help=f"output directory (default ${OUT_ENV} or ./runs)")
        if data:
            p.add_argument("--data", default=None,
                           help="dataset directory from gen-data (default: regenerate)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="model checkpoint path")
        if seeds:
            p.add_argument("--seeds", default="5",
                           help="seed count or comma list (default 5)")
            p.add_argument("--workers", type=int, default=1,
                           help="parallel seed workers (default 1)")

    common(sub.add_parser("gen-data", help="write a synthetic dataset"), data=False)
    common(sub.add_parser("pretrain", help="train the source model"))
    common(sub.add_parser("adapt", help="source-free adaptation"), checkpoint=True)
    common(sub.add_parser("eval", help="evaluate a checkpoint"), checkpoint=True)
    common(sub.add_parser("ablate", help="objective ablation matrix"), seeds=True)
    p_sweep = sub.add_parser("sweep", help="sweep one config parameter")
    common(p_sweep, seeds=True)
    p_sweep.add_argument("--param", required=True, help="config key to sweep")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    common(sub.add_parser("diagnose-bins", help="confidence-bin assignment accuracy"),
           checkpoint=True)
    p_slide = sub.add_parser("diagnose-slide", help="sliding-box confidence probe")
    common(p_slide, checkpoint=True)
    p_slide.add_argument("--steps", type=int, default=10)
    common(sub.add_parser("gradcheck", help="finite-difference gradient verification"),
           data=False)
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "diagnose-bins": cmd_diagnose_bins,
    "diagnose-slide": cmd_diagnose_slide,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        key = f"{exc.key}: " if exc.key else ""
        print(f"error: config: {key}{exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: usage: missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except adapt_mod.AdaptError as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
