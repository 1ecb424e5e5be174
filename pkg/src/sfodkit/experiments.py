"""Multi-seed experiment matrices: ablation, threshold and mixup studies,
plus single-parameter sweeps.

Each seed is a fully independent replicate — its own world, dataset and
source model — and every variant within a seed shares those, so variant
comparisons are paired. Seeds may run in parallel worker processes;
result rows are always emitted in seed order, making outputs
byte-identical regardless of worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adapt import adapt_target, pretrain_source
from .config import Config, _convert
from .metrics import evaluate_model
from .synthworld import generate_dataset, make_world

# Config keys that change the world or dataset (shared across variants unless touched).
WORLD_KEYS = (
    "num_categories", "feature_dim", "prototype_scale", "domain_offset_scale",
    "offset_span_mix",
    "feature_noise_sigma", "weak_aug_sigma", "strong_aug_sigma", "scene_extent",
    "min_objects", "max_objects", "min_box_size", "max_box_size",
    "max_object_overlap", "n_source", "n_target", "n_eval",
)
# Keys that additionally change the pretrained source model.
PRETRAIN_KEYS = (
    "hidden_dim", "init_scale", "pretrain_epochs", "lr", "momentum",
    "n_jitter", "n_random", "jitter_sigma", "fg_iou_threshold",
)


@dataclass
class VariantOutcome:
    seed: int
    variant: str
    final_map: float
    source_map: float


def _eval_kwargs(cfg: Config) -> dict:
    return dict(n_jitter=cfg.n_jitter, n_random=cfg.n_random,
                jitter_sigma=cfg.jitter_sigma, nms_iou=cfg.nms_iou)


def build_world(cfg: Config, seed: int):
    return make_world(
        seed,
        num_categories=cfg.num_categories, feature_dim=cfg.feature_dim,
        prototype_scale=cfg.prototype_scale,
        domain_offset_scale=cfg.domain_offset_scale,
        offset_span_mix=cfg.offset_span_mix,
        feature_noise_sigma=cfg.feature_noise_sigma,
        weak_aug_sigma=cfg.weak_aug_sigma, strong_aug_sigma=cfg.strong_aug_sigma,
        scene_extent=(cfg.scene_extent, cfg.scene_extent),
        min_objects=cfg.min_objects, max_objects=cfg.max_objects,
        min_box_size=cfg.min_box_size, max_box_size=cfg.max_box_size,
        max_object_overlap=cfg.max_object_overlap,
    )


def build_dataset(cfg: Config, seed: int):
    world = build_world(cfg, seed)
    return generate_dataset(world, cfg.n_source, cfg.n_target, seed, n_eval=cfg.n_eval)


def run_seed_job(
    base_cfg: Config, seed: int, variants: list[tuple[str, dict]]
) -> dict[str, VariantOutcome]:
    """All variants for one seed, sharing world/data/source-model where possible."""
    worlds: dict[tuple, tuple] = {}
    sources: dict[tuple, tuple] = {}
    out: dict[str, VariantOutcome] = {}
    for name, overrides in variants:
        cfg = base_cfg.with_overrides(**overrides)
        wkey = tuple(getattr(cfg, k) for k in WORLD_KEYS)
        if wkey not in worlds:
            dataset = build_dataset(cfg, seed)
            worlds[wkey] = (dataset.world, dataset)
        world, dataset = worlds[wkey]
        pkey = wkey + tuple(getattr(cfg, k) for k in PRETRAIN_KEYS)
        if pkey not in sources:
            source = pretrain_source(world, dataset.source, cfg, seed)
            source_map = evaluate_model(source, world, dataset.eval, **_eval_kwargs(cfg)).map
            sources[pkey] = (source, source_map)
        source, source_map = sources[pkey]
        result = adapt_target(source, world, dataset.target, dataset.eval, cfg, seed,
                              config_id=name)
        out[name] = VariantOutcome(seed=seed, variant=name,
                                   final_map=result.final_map, source_map=source_map)
    return out


def run_study(
    base_cfg: Config,
    seeds: list[int],
    variants: list[tuple[str, dict]],
    workers: int = 1,
) -> list[dict[str, VariantOutcome]]:
    """Run every (seed, variant) pair; returns per-seed outcome maps in seed order."""
    if workers <= 1:
        return [run_seed_job(base_cfg, s, variants) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {s: pool.submit(run_seed_job, base_cfg, s, variants) for s in seeds}
        return [futures[s].result() for s in seeds]


# ---------------------------------------------------------------------------
# Study definitions
# ---------------------------------------------------------------------------

def ablation_variants(cfg: Config) -> list[tuple[str, dict]]:
    """Baseline and the three objective combinations; the baseline collapses
    the thresholds so no low band exists."""
    return [
        ("mt", {"enable_pst": False, "enable_lscl": False, "sigma_l": cfg.sigma_h}),
        ("mt+pst", {"enable_pst": True, "enable_lscl": False}),
        ("mt+lscl", {"enable_pst": False, "enable_lscl": True}),
        ("mt+pst+lscl", {"enable_pst": True, "enable_lscl": True}),
    ]


def threshold_variants(cfg: Config) -> list[tuple[str, dict]]:
    """Single-threshold baselines vs dual-threshold configurations."""
    off = {"enable_pst": False, "enable_lscl": False}
    lo, hi = cfg.sigma_l, cfg.sigma_h
    return [
        (f"single-{lo:g}", {**off, "sigma_h": lo, "sigma_l": lo}),
        (f"single-{hi:g}", {**off, "sigma_h": hi, "sigma_l": hi}),
        (f"split-1-{lo:g}", {"enable_pst": True, "enable_lscl": True,
                             "sigma_h": 1.0, "sigma_l": lo}),
        (f"split-{hi:g}-{lo:g}", {"enable_pst": True, "enable_lscl": True,
                                  "sigma_h": hi, "sigma_l": lo}),
    ]


def mixup_variants(strategies: list[str]) -> list[tuple[str, dict]]:
    return [(s, {"enable_pst": True, "enable_lscl": True, "mixup_strategy": s})
            for s in strategies]


def sweep_variants(param: str, raw_values: list[str]) -> list[tuple[str, dict]]:
    if not hasattr(Config(), param):
        from .config import ConfigError
        raise ConfigError(param, f"unknown sweep parameter {param!r}")
    out = []
    for raw in raw_values:
        value = _convert(param, raw)
        out.append((f"{param}={raw}", {param: value}))
    return out


# ---------------------------------------------------------------------------
# CSV-ready tabulation
# ---------------------------------------------------------------------------

@dataclass
class StudyResult:
    summary_header: list[str]
    summary_rows: list[list]
    seed_header: list[str]
    seed_rows: list[list]
    outcomes: list[dict[str, VariantOutcome]]

    def mean_map(self, variant: str) -> float:
        return float(np.mean([o[variant].final_map for o in self.outcomes]))


def _fmt_override(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return f"{value}"


def tabulate_study(
    outcomes: list[dict[str, VariantOutcome]], variants: list[tuple[str, dict]]
) -> StudyResult:
    summary_header = ["variant", "overrides", "n_seeds", "map_mean", "map_std",
                      "source_map_mean"]
    seed_header = ["variant", "seed", "mAP", "source_mAP"]
    summary_rows, seed_rows = [], []
    for name, overrides in variants:
        maps = [o[name].final_map for o in outcomes]
        src = [o[name].source_map for o in outcomes]
        desc = ";".join(f"{k}={_fmt_override(v)}" for k, v in sorted(overrides.items()))
        summary_rows.append([
            name, desc, len(maps), float(np.mean(maps)), float(np.std(maps)),
            float(np.mean(src)),
        ])
        for o in outcomes:
            v = o[name]
            seed_rows.append([name, v.seed, v.final_map, v.source_map])
    return StudyResult(summary_header, summary_rows, seed_header, seed_rows, outcomes)


def run_ablation(cfg: Config, seeds: list[int], workers: int = 1) -> StudyResult:
    variants = ablation_variants(cfg)
    return tabulate_study(run_study(cfg, seeds, variants, workers), variants)


def run_thresholds(cfg: Config, seeds: list[int], workers: int = 1) -> StudyResult:
    variants = threshold_variants(cfg)
    return tabulate_study(run_study(cfg, seeds, variants, workers), variants)


def run_mixup(cfg: Config, seeds: list[int], strategies: list[str],
              workers: int = 1) -> StudyResult:
    variants = mixup_variants(strategies)
    return tabulate_study(run_study(cfg, seeds, variants, workers), variants)


def run_sweep(cfg: Config, seeds: list[int], param: str, values: list[str],
              workers: int = 1) -> StudyResult:
    variants = sweep_variants(param, values)
    outcomes = run_study(cfg, seeds, variants, workers)
    result = tabulate_study(outcomes, variants)
    # sweep gets explicit param/value columns for easy curve plotting
    result.summary_header = ["param", "value", "n_seeds", "map_mean", "map_std",
                             "source_map_mean"]
    result.summary_rows = [
        [param, name.split("=", 1)[1]] + row[2:]
        for (name, _), row in zip(variants, result.summary_rows)
    ]
    result.seed_header = ["param", "value", "seed", "mAP", "source_mAP"]
    result.seed_rows = [
        [param, variant.split("=", 1)[1], seed, m, sm]
        for variant, seed, m, sm in result.seed_rows
    ]
    return result
