"""Command-line driver: gen-data, train, sample, translate, eval, sweep.

Exit codes: 0 success, 1 validation problem (bad flags, mismatched configs,
malformed inputs), 2 runtime failure. Every command echoes its resolved
configuration to the output directory, and all outputs are deterministic
functions of (config, seed).
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from . import diffusion, metrics, plots, scenegen, translation
from .denoiser import Denoiser, load_parameter_tensors
from .errors import ValidationError
from .formats import (
    Dataset,
    FORMAT_VERSION,
    label_file,
    range_file,
    read_checkpoint,
    read_sgt,
    write_manifest,
    write_sgt,
)
from .geometry import (
    NormalizedImage,
    RangeImage,
    SemanticMap,
    SensorSpec,
    denormalize,
    normalize,
    project,
    unproject,
    write_ply,
)
from .rng import derive_key
from .training import ArrayDataset, TrainConfig, fit
from .translation import TranslationConfig


class _Parser(argparse.ArgumentParser):
    # argparse usage errors are validation problems -> exit code 1
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _echo_config(cfg: cfgmod.RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(cfgmod.config_text(cfg) + "\n")


def _load_run_config(args, **overrides) -> cfgmod.RunConfig:
    all_overrides = {}
    if getattr(args, "seed", None) is not None:
        all_overrides["seed"] = args.seed
    if getattr(args, "preset", None) is not None:
        all_overrides["sensor_preset"] = args.preset
    all_overrides.update(overrides)
    return cfgmod.load_config(getattr(args, "config", None), all_overrides)


def _build_model(cfg: cfgmod.RunConfig) -> Denoiser:
    model = Denoiser(cfg.denoiser)
    model.init_parameters(cfg.seed)
    return model


def _schedule(cfg: cfgmod.RunConfig) -> diffusion.NoiseSchedule:
    return diffusion.linear_schedule(
        cfg.schedule.T, cfg.schedule.beta_1, cfg.schedule.beta_T
    )


def load_model_checkpoint(
    ckpt_path: str | Path,
) -> tuple[Denoiser, cfgmod.RunConfig, int]:
    """Rebuild the model from a checkpoint + its config echo sidecar.

    The sidecar's model subset must hash to the digest stored in the
    checkpoint header; a mismatch is a hard error.
    """
    ckpt_path = Path(ckpt_path)
    sidecar = Path(str(ckpt_path) + ".json")
    if not ckpt_path.exists():
        raise ValidationError(f"checkpoint {ckpt_path} does not exist")
    if not sidecar.exists():
        raise ValidationError(
            f"missing config echo {sidecar} next to the checkpoint"
        )
    cfg = cfgmod.from_dict(json.loads(sidecar.read_text()))
    digest, tensors = read_checkpoint(ckpt_path)
    expected = cfgmod.core_digest(cfg)
    if digest != expected:
        raise ValidationError(
            f"{ckpt_path}: config digest mismatch (archive {digest:#018x}, "
            f"sidecar implies {expected:#018x})"
        )
    model = Denoiser(cfg.denoiser)
    load_parameter_tensors(
        model,
        {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")},
    )
    model.eval()
    step_arr = np.asarray(tensors.get("train.step", np.float32(0.0))).reshape(-1)
    return model, cfg, int(step_arr[0])


def _check_dataset_matches(ds: Dataset, cfg: cfgmod.RunConfig, what: str) -> None:
    sensor = ds.manifest.get("sensor", {})
    if (
        sensor.get("width") != cfg.sensor.width
        or sensor.get("height") != cfg.sensor.height
    ):
        raise ValidationError(
            f"{what}: dataset grid "
            f"({sensor.get('height')}x{sensor.get('width')}) does not match "
            f"configured sensor {cfg.sensor.height}x{cfg.sensor.width}"
        )
    if ds.num_classes != cfg.num_classes:
        raise ValidationError(
            f"{what}: dataset has {ds.num_classes} classes, config expects "
            f"{cfg.num_classes}"
        )


def _prepare_out_dir(path: str | Path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ValidationError(
            f"output directory {out} is not empty (use --force to overwrite)"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    cfg = _load_run_config(args)
    if args.domain not in cfg.domains:
        raise ValidationError(
            f"unknown domain {args.domain!r}; choose from {sorted(cfg.domains)}"
        )
    out = _prepare_out_dir(args.out, args.force)
    _echo_config(cfg, out)
    domain_cfg = cfg.domains[args.domain]
    sensor = cfg.sensor

    samples = []
    for i in range(args.count):
        sample_seed = derive_key(cfg.seed, "gen", i)[0] % (2**63)
        scene = scenegen.sample_scene(sample_seed, domain_cfg)
        cloud = scenegen.raycast(scene, sensor, domain_cfg, sample_seed)
        if len(cloud) == 0:
            img = RangeImage(
                np.zeros(sensor.shape, np.float32), np.zeros(sensor.shape, bool)
            )
            sem = SemanticMap(np.zeros(sensor.shape, np.int32), cfg.num_classes)
        else:
            img, sem = project(cloud, sensor, cfg.num_classes)
        write_sgt(out / range_file(i), img.range)
        write_sgt(out / label_file(i), sem.classes.astype(np.float32))
        samples.append(
            {
                "index": i,
                "range": range_file(i),
                "label": label_file(i),
                "seed": sample_seed,
            }
        )

    write_manifest(
        out,
        {
            "format_version": FORMAT_VERSION,
            "kind": "sglidar-dataset",
            "sensor": cfgmod._plain(sensor),
            "num_classes": cfg.num_classes,
            "domain": args.domain,
            "count": args.count,
            "global_seed": cfg.seed,
            "samples": samples,
        },
    )
    print(f"wrote {args.count} samples to {out}")
    return 0


# ------------------------------------------------------------------- train


def cmd_train(args) -> int:
    overrides = {}
    if args.steps is not None:
        overrides["train.steps"] = args.steps
    if args.p_uncon is not None:
        overrides["train.p_uncon"] = args.p_uncon
    if args.batch_size is not None:
        overrides["train.batch_size"] = args.batch_size
    if args.lr is not None:
        overrides["train.lr"] = args.lr
    if args.no_sa:
        overrides["train.sa_enabled"] = False
    if args.checkpoint_every is not None:
        overrides["train.checkpoint_every"] = args.checkpoint_every
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    cfg = _load_run_config(args, **overrides)

    ds = Dataset(args.data)
    _check_dataset_matches(ds, cfg, str(args.data))
    data = ArrayDataset.from_dataset(ds, cfg.sensor.r_max)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)
    model = _build_model(cfg)
    sched = _schedule(cfg)
    digest = cfgmod.core_digest(cfg)

    def log_fn(state):
        print(
            f"step {state.step}/{cfg.train.steps} "
            f"mse {state.ddpm_running:.4f} sa {state.sa_running:.4f}",
            flush=True,
        )

    ckpt = fit(
        data,
        model,
        sched,
        cfg.train,
        out,
        digest,
        config_echo=cfgmod.config_text(cfg) + "\n",
        resume=args.resume,
        log_fn=log_fn if args.verbose else None,
    )
    plots.save_loss_curves(out / "loss.csv", out / "loss.png")
    print(f"checkpoint written to {ckpt}")
    return 0


# ------------------------------------------------------------------ sample


def _load_conditions(args, cfg: cfgmod.RunConfig) -> tuple[np.ndarray, list[int]]:
    """Semantic maps to condition on: (N, H, W) int32 class grids."""
    if args.semantic is not None:
        classes = read_sgt(args.semantic).astype(np.int32)
        if classes.ndim != 2:
            raise ValidationError(f"{args.semantic}: expected a 2D class grid")
        maps = np.repeat(classes[None], args.count, axis=0)
        return maps, list(range(args.count))
    if args.data is None:
        raise ValidationError("need either --semantic FILE or --data DIR")
    ds = Dataset(args.data)
    _check_dataset_matches(ds, cfg, str(args.data))
    idx0 = args.index
    if idx0 < 0 or idx0 + args.count > len(ds):
        raise ValidationError(
            f"--index {idx0} with --count {args.count} exceeds dataset size {len(ds)}"
        )
    maps = np.stack(
        [ds.load_arrays(idx0 + i)[1] for i in range(args.count)]
    )
    return maps, list(range(args.count))


def _onehot_batch(maps: np.ndarray, num_classes: int) -> np.ndarray:
    k = np.arange(num_classes, dtype=np.int32)
    return (maps[:, None] == k[None, :, None, None]).astype(np.float32)


def generate_images(
    model: Denoiser,
    cfg: cfgmod.RunConfig,
    sampler: diffusion.SamplerConfig,
    maps: np.ndarray,
    context_tag: str = "sample",
) -> np.ndarray:
    """Sample normalized images for each semantic map; returns (N, 2, H, W)."""
    sched = _schedule(cfg)
    h, w = cfg.sensor.shape
    outs = []
    for start in range(0, len(maps), sampler.batch_size):
        chunk = maps[start : start + sampler.batch_size]
        cond = torch.from_numpy(_onehot_batch(chunk, cfg.num_classes))
        x = diffusion.sample(
            model,
            cond,
            sched,
            sampler,
            (len(chunk), 2, h, w),
            noise_context=(context_tag, start),
        )
        outs.append(x.numpy().astype(np.float64))
    return np.concatenate(outs, axis=0)


def _validate_maps(maps: np.ndarray, cfg: cfgmod.RunConfig) -> None:
    if maps.shape[1:] != cfg.sensor.shape:
        raise ValidationError(
            f"semantic maps have shape {maps.shape[1:]}, sensor expects "
            f"{cfg.sensor.shape}"
        )
    if maps.max() >= cfg.num_classes or maps.min() < 0:
        raise ValidationError(
            f"semantic map class ids exceed configured num_classes={cfg.num_classes}"
        )


def cmd_sample(args) -> int:
    model, cfg, _ = load_model_checkpoint(args.ckpt)
    if args.seed is not None:
        cfg = cfgmod.from_dict({**cfgmod.to_dict(cfg), "seed": args.seed})
    sampler = diffusion.SamplerConfig(
        kind=args.sampler,
        ddim_steps=args.steps,
        guidance_w=args.cfg_scale - 1.0,
        seed=cfg.seed if args.seed is None else args.seed,
        batch_size=cfg.sampler.batch_size,
    )
    if args.cfg_scale < 1.0:
        raise ValidationError("--cfg-scale is w+1 and must be >= 1.0")
    maps, indices = _load_conditions(args, cfg)
    _validate_maps(maps, cfg)

    out = _prepare_out_dir(args.out, args.force)
    _echo_config(cfg, out)
    images = generate_images(model, cfg, sampler, maps)

    samples = []
    for pos, (i, img64) in enumerate(zip(indices, images)):
        img = denormalize(NormalizedImage(img64), cfg.sensor)
        sem = SemanticMap(maps[pos], cfg.num_classes)
        write_sgt(out / range_file(i), img.range)
        write_sgt(out / label_file(i), sem.classes.astype(np.float32))
        if args.ply:
            cloud = unproject(img, sem, cfg.sensor)
            if len(cloud):
                write_ply(cloud, out / f"{i:06d}.ply")
        samples.append(
            {
                "index": i,
                "range": range_file(i),
                "label": label_file(i),
                "seed": sampler.seed,
            }
        )
    write_manifest(
        out,
        {
            "format_version": FORMAT_VERSION,
            "kind": "sglidar-dataset",
            "sensor": cfgmod._plain(cfg.sensor),
            "num_classes": cfg.num_classes,
            "domain": "generated",
            "count": len(samples),
            "global_seed": sampler.seed,
            "samples": samples,
            "sampler": {
                "kind": sampler.kind,
                "ddim_steps": sampler.ddim_steps,
                "guidance_scale": sampler.guidance_scale,
            },
        },
    )
    first = denormalize(NormalizedImage(images[0]), cfg.sensor)
    plots.save_range_panel(
        first.range, maps[0], out / "preview.png",
        title=f"generated (scale {args.cfg_scale:g})", r_max=cfg.sensor.r_max,
    )
    print(f"wrote {len(samples)} generated samples to {out}")
    return 0


# --------------------------------------------------------------- translate


def cmd_translate(args) -> int:
    model, cfg, _ = load_model_checkpoint(args.ckpt)
    seed = args.seed if args.seed is not None else cfg.seed
    sampler = diffusion.SamplerConfig(
        kind=args.sampler,
        ddim_steps=args.steps,
        guidance_w=args.cfg_scale - 1.0,
        seed=seed,
        batch_size=cfg.sampler.batch_size,
    )
    tcfg = TranslationConfig(fraction=args.fraction, sampler=sampler)
    src = Dataset(args.src)
    _check_dataset_matches(src, cfg, str(args.src))
    out = _prepare_out_dir(args.out, args.force)
    _echo_config(cfg, out)
    sched = _schedule(cfg)
    manifest = translation.translate_dataset(
        args.src, model, sched, tcfg, out, cfg.sensor, seed,
        batch_size=sampler.batch_size,
    )
    print(
        f"translated {manifest['count']} samples at fraction "
        f"{args.fraction:g} (t*={manifest['t_star']}) into {out}"
    )
    return 0


# -------------------------------------------------------------------- eval


def _dataset_clouds(
    ds: Dataset, sensor: SensorSpec, limit: int | None
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """(point clouds, normalized images) for up to limit samples."""
    n = len(ds) if limit is None else min(limit, len(ds))
    clouds, images = [], []
    for i in range(n):
        rng_arr, lab = ds.load_arrays(i)
        img = RangeImage(rng_arr, rng_arr > 0)
        sem = SemanticMap(lab, ds.num_classes)
        cloud = unproject(img, sem, sensor)
        clouds.append(cloud.points)
        images.append(normalize(img, sem, sensor)[0].data)
    return clouds, images


def evaluate_sets(
    gen: tuple[list[np.ndarray], list[np.ndarray]],
    ref: tuple[list[np.ndarray], list[np.ndarray]],
    which: list[str],
    model: Denoiser | None = None,
    extractor_id: str = "",
    voxel_spec: metrics.VoxelSpec = metrics.VoxelSpec(),
) -> metrics.MetricsReport:
    gen_clouds, gen_images = gen
    ref_clouds, ref_images = ref
    if not gen_clouds or not ref_clouds:
        raise ValidationError("evaluation requires non-empty sample sets")
    report = metrics.MetricsReport()
    report.provenance.update(
        {
            "gen_count": len(gen_clouds),
            "ref_count": len(ref_clouds),
            "voxel_bounds_min": voxel_spec.bounds_min,
            "voxel_bounds_max": voxel_spec.bounds_max,
            "voxel_resolution": voxel_spec.resolution,
            "mmd_center_cap": 4096,
        }
    )
    if "cd" in which:
        pairs = min(len(gen_clouds), len(ref_clouds))
        sums, means = [], []
        for i in range(pairs):
            if len(gen_clouds[i]) and len(ref_clouds[i]):
                sums.append(metrics.chamfer(gen_clouds[i], ref_clouds[i]))
                means.append(metrics.chamfer_mean(gen_clouds[i], ref_clouds[i]))
        if not sums:
            raise ValidationError("no non-empty index-matched pairs for cd")
        report.cd_mean = statistics.fmean(sums)
        report.cd_median = statistics.median(sums)
        report.cd_mean_normalized = statistics.fmean(means)
        report.provenance["cd_pairs"] = len(sums)
    if "jsd" in which:
        report.jsd = metrics.jsd(gen_clouds, ref_clouds, voxel_spec)
    if "mmd" in which:
        report.mmd = metrics.mmd(gen_clouds, ref_clouds, voxel_spec)
    if "ffd" in which:
        if model is None:
            raise ValidationError("ffd requested but no checkpoint given")
        f_gen = metrics.extract_features(
            model, np.stack(gen_images).astype(np.float32), extractor_id=extractor_id
        )
        f_ref = metrics.extract_features(
            model, np.stack(ref_images).astype(np.float32), extractor_id=extractor_id
        )
        report.ffd = metrics.frechet_distance(f_gen, f_ref)
        report.provenance["feature_extractor"] = extractor_id or "checkpoint"
        report.provenance["feature_dim"] = f_gen.vectors.shape[1]
    return report


def _write_report(report: metrics.MetricsReport, out: Path) -> None:
    rows = report.rows()
    (out / "report.txt").write_text("".join(f"{k}={v}\n" for k, v in rows))
    lines = ["metric,value"]
    lines += [f"{k},{v}" for k, v in rows if not k.startswith("provenance.")]
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    plots.save_metrics_figure(rows, out / "metrics.png")


def cmd_eval(args) -> int:
    which = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(which) - {"cd", "jsd", "mmd", "ffd"}
    if unknown:
        raise ValidationError(f"unknown metric(s) {sorted(unknown)}")
    model = None
    extractor_id = ""
    if "ffd" in which:
        if args.ckpt is None:
            raise ValidationError("--ckpt is required when ffd is requested")
        model, cfg, _ = load_model_checkpoint(args.ckpt)
        extractor_id = f"{cfgmod.core_digest(cfg):#018x}"
    else:
        cfg = _load_run_config(args)

    gen_ds = Dataset(args.gen)
    ref_ds = Dataset(args.ref)
    _check_dataset_matches(gen_ds, cfg, str(args.gen))
    _check_dataset_matches(ref_ds, cfg, str(args.ref))
    out = _prepare_out_dir(args.out, args.force)
    _echo_config(cfg, out)

    gen = _dataset_clouds(gen_ds, cfg.sensor, args.max_samples)
    ref = _dataset_clouds(ref_ds, cfg.sensor, args.max_samples)
    report = evaluate_sets(gen, ref, which, model, extractor_id)
    report.provenance["gen_dir"] = str(args.gen)
    report.provenance["ref_dir"] = str(args.ref)
    _write_report(report, out)
    for key, val in report.rows():
        if not key.startswith("provenance."):
            print(f"{key} = {val}")
    print(f"report written to {out}")
    return 0


# ------------------------------------------------------------------- sweep

SWEEP_KEYS = ("cfg-scale", "p-uncon", "fraction")


def cmd_sweep(args) -> int:
    if args.grid not in SWEEP_KEYS:
        raise ValidationError(
            f"unknown grid key {args.grid!r}; valid keys: {', '.join(SWEEP_KEYS)}"
        )
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValidationError("--values must list at least one value")

    out = _prepare_out_dir(args.out, args.force)
    ref_limit = args.count

    rows: list[dict] = []
    if args.grid == "p-uncon":
        ckpts = [c.strip() for c in (args.ckpts or "").split(",") if c.strip()]
        if len(ckpts) != len(values):
            raise ValidationError(
                "p-uncon sweeps need --ckpts with one trained checkpoint per value"
            )
        for val, ck in zip(values, ckpts):
            model, cfg, _ = load_model_checkpoint(ck)
            ref_ds = Dataset(args.ref)
            _check_dataset_matches(ref_ds, cfg, str(args.ref))
            ref = _dataset_clouds(ref_ds, cfg.sensor, ref_limit)
            maps = np.stack(
                [ref_ds.load_arrays(i)[1] for i in range(min(ref_limit, len(ref_ds)))]
            )
            sampler = diffusion.SamplerConfig(
                kind=cfg.sampler.kind,
                ddim_steps=cfg.sampler.ddim_steps,
                guidance_w=cfg.sampler.guidance_w,
                seed=cfg.seed,
                batch_size=cfg.sampler.batch_size,
            )
            rows.append(
                _sweep_row(val, model, cfg, sampler, maps, ref, extractor=model)
            )
            _echo_config(cfg, out)
    else:
        model, cfg, _ = load_model_checkpoint(args.ckpt)
        _echo_config(cfg, out)
        ref_ds = Dataset(args.ref)
        _check_dataset_matches(ref_ds, cfg, str(args.ref))
        ref = _dataset_clouds(ref_ds, cfg.sensor, ref_limit)
        maps = np.stack(
            [ref_ds.load_arrays(i)[1] for i in range(min(ref_limit, len(ref_ds)))]
        )
        sched = _schedule(cfg)
        for val in values:
            if args.grid == "cfg-scale":
                if val < 1.0:
                    raise ValidationError("cfg-scale values must be >= 1.0")
                sampler = diffusion.SamplerConfig(
                    kind=cfg.sampler.kind,
                    ddim_steps=cfg.sampler.ddim_steps,
                    guidance_w=val - 1.0,
                    seed=cfg.seed,
                    batch_size=cfg.sampler.batch_size,
                )
                rows.append(
                    _sweep_row(val, model, cfg, sampler, maps, ref, extractor=model)
                )
            else:  # fraction
                if args.src is None:
                    raise ValidationError("fraction sweeps need --src DIR")
                src_ds = Dataset(args.src)
                _check_dataset_matches(src_ds, cfg, str(args.src))
                sampler = diffusion.SamplerConfig(
                    kind=cfg.sampler.kind,
                    ddim_steps=cfg.sampler.ddim_steps,
                    guidance_w=cfg.sampler.guidance_w,
                    seed=cfg.seed,
                    batch_size=cfg.sampler.batch_size,
                )
                tcfg = TranslationConfig(fraction=val, sampler=sampler)
                gen = _translated_set(src_ds, model, cfg, tcfg, ref_limit)
                report = evaluate_sets(gen, ref, ["cd", "jsd", "mmd", "ffd"], model)
                rows.append(_report_row(val, report))

    csv_path = out / "sweep.csv"
    keys = ["value", "cd_mean", "jsd", "mmd", "ffd", "valid_rate"]
    lines = [args.grid.replace("-", "_") + "," + ",".join(keys[1:])]
    for row in rows:
        lines.append(
            ",".join(
                [repr(row["value"])]
                + [repr(row[k]) if row.get(k) is not None else "" for k in keys[1:]]
            )
        )
    csv_path.write_text("\n".join(lines) + "\n")
    plots.save_sweep_figure(values, rows, args.grid, out / "sweep.png")
    print(f"sweep table written to {csv_path}")
    return 0


def _report_row(value: float, report: metrics.MetricsReport, valid_rate=None) -> dict:
    return {
        "value": value,
        "cd_mean": report.cd_mean,
        "jsd": report.jsd,
        "mmd": report.mmd,
        "ffd": report.ffd,
        "valid_rate": valid_rate,
    }


def _sweep_row(value, model, cfg, sampler, maps, ref, extractor) -> dict:
    images = generate_images(model, cfg, sampler, maps, context_tag="sweep")
    gen_clouds, gen_images, valid = [], [], []
    for i, img64 in enumerate(images):
        img = denormalize(NormalizedImage(img64), cfg.sensor)
        sem = SemanticMap(maps[i], cfg.num_classes)
        cloud = unproject(img, sem, cfg.sensor)
        gen_clouds.append(cloud.points)
        gen_images.append(normalize(img, sem, cfg.sensor)[0].data)
        valid.append(float(img.valid.mean()))
    report = evaluate_sets(
        (gen_clouds, gen_images), ref, ["cd", "jsd", "mmd", "ffd"], extractor
    )
    return _report_row(value, report, valid_rate=statistics.fmean(valid))


def _translated_set(src_ds, model, cfg, tcfg, limit):
    sched = _schedule(cfg)
    n = min(limit, len(src_ds))
    clouds, images = [], []
    for start in range(0, n, tcfg.sampler.batch_size):
        idx = list(range(start, min(start + tcfg.sampler.batch_size, n)))
        xs, conds, labs = [], [], []
        for i in idx:
            rng_arr, lab = src_ds.load_arrays(i)
            img = RangeImage(rng_arr, rng_arr > 0)
            sem = SemanticMap(lab, src_ds.num_classes)
            norm, onehot = normalize(img, sem, cfg.sensor)
            xs.append(norm.data.astype(np.float32))
            conds.append(onehot)
            labs.append(lab)
        res = translation.translate(
            torch.from_numpy(np.stack(xs)),
            torch.from_numpy(np.stack(conds)),
            model,
            sched,
            tcfg,
            noise_context=("sweep-translate", start),
        )
        for j, i in enumerate(idx):
            img = denormalize(
                NormalizedImage(res.x0[j].numpy().astype(np.float64)), cfg.sensor
            )
            sem = SemanticMap(labs[j], cfg.num_classes)
            clouds.append(unproject(img, sem, cfg.sensor).points)
            images.append(normalize(img, sem, cfg.sensor)[0].data)
    return clouds, images


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sglidar",
        description=__doc__,
        epilog="Config keys (JSON file via --config; defaults shown):\n"
        + cfgmod.default_key_listing(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config file")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--force", action="store_true", help="overwrite outputs")

    p = sub.add_parser("gen-data", help="generate a synthetic labeled dataset")
    common(p)
    p.add_argument("--preset", choices=sorted(cfgmod.SENSOR_PRESETS), default=None)
    p.add_argument("--count", type=int, default=128)
    p.add_argument("--domain", default="domain-A")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the denoiser on a dataset")
    common(p)
    p.add_argument("--preset", choices=sorted(cfgmod.SENSOR_PRESETS), default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument(
        "--p-uncon", type=float, default=None,
        help="probability of the unconditional/alignment branch (default 0.2)",
    )
    p.add_argument(
        "--no-sa", action="store_true",
        help="disable the semantic alignment loss (guidance-only ablation)",
    )
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--resume", action="store_true", help="continue from checkpoint.sgc")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate scans from semantic maps")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--semantic", help="a single .sgt class grid to condition on")
    p.add_argument("--data", help="dataset to take condition maps from")
    p.add_argument("--index", type=int, default=0, help="first condition index")
    p.add_argument("--count", type=int, default=1)
    p.add_argument(
        "--cfg-scale", type=float, default=2.0,
        help="guidance scale (= w + 1); 1.0 disables guidance",
    )
    p.add_argument("--sampler", choices=("ddim", "ddpm"), default="ddim")
    p.add_argument("--steps", type=int, default=50, help="ddim step count")
    p.add_argument("--out", required=True)
    p.add_argument("--ply", action="store_true", help="also export .ply point clouds")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("translate", help="move a dataset toward the model's domain")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--cfg-scale", type=float, default=2.0)
    p.add_argument("--sampler", choices=("ddim", "ddpm"), default="ddim")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("eval", help="compare a generated set against a reference")
    common(p)
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument(
        "--metrics", default="cd,jsd,mmd,ffd",
        help="comma list from cd,jsd,mmd,ffd (ffd needs --ckpt)",
    )
    p.add_argument("--ckpt")
    p.add_argument("--max-samples", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="ablation grid over one knob")
    common(p)
    p.add_argument("--grid", required=True, help="one of cfg-scale, p-uncon, fraction")
    p.add_argument("--values", required=True, help="comma-separated grid values")
    p.add_argument("--ckpt", help="trained checkpoint (cfg-scale, fraction)")
    p.add_argument("--ckpts", help="per-value checkpoints (p-uncon)")
    p.add_argument("--ref", required=True, help="reference dataset")
    p.add_argument("--src", help="source dataset (fraction sweeps)")
    p.add_argument("--count", type=int, default=32, help="samples per grid value")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    except ValidationError as exc:
        print(f"sglidar: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"sglidar: runtime error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
