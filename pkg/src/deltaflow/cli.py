"""Command-line front end: train / edit / oracle / memest / bench / metrics / dataset-gen.

Every command is a pure function of (config, seed): outputs land in the
configured directory together with a manifest listing checksums of every
artifact. Exit codes: 0 ok, 2 config problem, 3 geometry mismatch, 4
nothing to do, 5 oracle unavailable for the selected model.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, tensorio
from .baselines import dds_edit, inversion_edit
from .config import (
    ParsedConfig,
    arch_specs_from_config,
    load_config,
    parse_means,
    schedule_from_config,
)
from .costmodel import REFERENCE_ARCHS, CallCounter, RunHandle, measure_efficiency, memory_table
from .datasets import make_toy_dataset
from .denoiser import ToyDiT, load_checkpoint, save_checkpoint, set_torch_threads, train_denoiser
from .editing import AvgPool2xCodec, EditOptions, IdentityCodec, edit_step, init_edit, run_edit
from .errors import ConfigError, DeltaFlowError, GeometryError
from .masks import GuidanceMask
from .metrics import VideoPair, frame_consistency, masked_psnr, psnr
from .models import AnalyticGaussianModel
from .rng import NoiseStream
from .sampling import sample_pf_ode
from .schedules import Schedule

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GEOMETRY = 3
EXIT_NOOP = 4
EXIT_NO_ORACLE = 5


# ---------------------------------------------------------------------------
# manifest


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def write_manifest(out_dir: Path, cfg: ParsedConfig, seed: int,
                   volatile: tuple[str, ...] = ()) -> Path:
    """Checksum every artifact in out_dir; volatile files are flagged.

    Volatile files (wall-clock columns) are excluded from the
    reproducibility contract; everything else is byte-stable under a fixed
    (config, seed).
    """
    lines = [
        f"version=deltaflow {__version__}",
        f"config_path={cfg.path}",
        f"config_sha256={hashlib.sha256(cfg.text.encode()).hexdigest()}",
        f"seed={seed}",
    ]
    for path in sorted(out_dir.rglob("*")):
        if path.is_dir() or path.name == "manifest.txt":
            continue
        rel = path.relative_to(out_dir).as_posix()
        lines.append(f"file.{rel}=sha256:{_sha256(path)}")
        if rel in volatile:
            lines.append(f"volatile.{rel}=true")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _out_dir(cfg: ParsedConfig, out_override: str | None) -> Path:
    directory = out_override or cfg.get_str("output.directory")
    if directory is None:
        raise ConfigError("missing output directory", key="output.directory")
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _seed(cfg: ParsedConfig, key: str, seed_override: int | None) -> int:
    if seed_override is not None:
        return seed_override
    return cfg.get_int(key, required=True)


# ---------------------------------------------------------------------------
# model assembly


def _model_geometry(cfg: ParsedConfig) -> tuple[int, int, int, int]:
    return (
        cfg.get_int("model.frames", 8),
        cfg.get_int("model.height", 16),
        cfg.get_int("model.width", 16),
        cfg.get_int("model.channels", 1),
    )


def build_model(cfg: ParsedConfig, sched: Schedule):
    kind = cfg.get_str("model.kind", "analytic")
    if kind == "analytic":
        dims = _model_geometry(cfg)
        means_spec = cfg.get_str("model.means", required=True)
        means = parse_means(means_spec, dims)
        variance = cfg.get_float("model.data_variance", 1.0)
        return AnalyticGaussianModel(sched, means, variance)
    if kind == "toydit":
        set_torch_threads(cfg.get_int("model.threads", 1))
        checkpoint = cfg.get_str("model.checkpoint")
        if checkpoint:
            if not Path(checkpoint).exists():
                raise ConfigError(f"checkpoint not found: {checkpoint}", key="model.checkpoint")
            return load_checkpoint(checkpoint)
        f, h, w, c = _model_geometry(cfg)
        return ToyDiT(
            frames=f, height=h, width=w, channels=c,
            embed_dim=cfg.get_int("model.embed_dim", 32),
            blocks=cfg.get_int("model.blocks", 2),
            n_text=cfg.get_int("model.n_text", 2),
            n_conditions=cfg.get_int("model.n_conditions", 2),
            family=sched.family,
            horizon=sched.horizon,
            init_seed=cfg.get_int("model.init_seed", 0),
        )
    raise ConfigError(f"unknown model kind {kind!r}", key="model.kind")


def _load_external_mask(cfg: ParsedConfig, geometry) -> GuidanceMask | None:
    path = cfg.get_str("edit.external_mask")
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"external mask not found: {path}", key="edit.external_mask")
    f, h, w, _ = geometry
    if p.is_dir():
        frames = sorted(p.glob("*.pgm"))
        if len(frames) != f:
            raise GeometryError(f"mask dir has {len(frames)} frames, need {f}")
        values = np.stack([tensorio.read_mask_pgm(fr) for fr in frames])
    else:
        grid = tensorio.read_grid(p)
        if grid.shape != (f, h, w):
            raise GeometryError(f"mask grid {grid.shape} does not match {(f, h, w)}")
        values = grid >= 0.5
    return GuidanceMask(values, provenance="external")


# ---------------------------------------------------------------------------
# commands


def cmd_dataset_gen(cfg: ParsedConfig, seed_override, out_override) -> int:
    out = _out_dir(cfg, out_override)
    kind = cfg.get_str("dataset.kind", required=True)
    count = cfg.get_int("dataset.count", 4)
    seed = _seed(cfg, "dataset.seed", seed_override)
    clips = make_toy_dataset(
        kind, count, NoiseStream(seed),
        frames=cfg.get_int("dataset.frames", 8),
        height=cfg.get_int("dataset.height", 16),
        width=cfg.get_int("dataset.width", 16),
        square_size=cfg.get_int("dataset.square_size", 4),
        disc_radius=cfg.get_float("dataset.disc_radius", 2.5),
    )
    rows = []
    for i, clip in enumerate(clips):
        name = f"clip_{i:03d}.dfvt"
        tensorio.write_grid(out / name, clip.video)
        rows.append([name, clip.label, clip.start[0], clip.start[1],
                     clip.velocity[0], clip.velocity[1]])
    _write_csv(out / "labels.csv",
               ["file", "label", "start_r", "start_c", "vel_r", "vel_c"], rows)
    write_manifest(out, cfg, seed)
    return EXIT_OK


def cmd_train(cfg: ParsedConfig, seed_override, out_override) -> int:
    out = _out_dir(cfg, out_override)
    seed = _seed(cfg, "train.seed", seed_override)
    kinds_spec = cfg.get_str("train.dataset", required=True)
    kinds = [k.strip() for k in kinds_spec.split(",") if k.strip()]
    if not kinds:
        raise ConfigError("no dataset kinds listed", key="train.dataset")
    sched = schedule_from_config(cfg)
    count = cfg.get_int("train.count", 16)
    f, h, w, c = _model_geometry(cfg)
    stream = NoiseStream(seed, stream=7)
    clips = []
    for j, kind in enumerate(kinds):
        clips.extend(make_toy_dataset(kind, count, stream.spawn(7 + j),
                                      frames=f, height=h, width=w))
    set_torch_threads(cfg.get_int("model.threads", 1))
    model = ToyDiT(
        frames=f, height=h, width=w, channels=c,
        embed_dim=cfg.get_int("model.embed_dim", 32),
        blocks=cfg.get_int("model.blocks", 2),
        n_text=cfg.get_int("model.n_text", 2),
        n_conditions=cfg.get_int("model.n_conditions", 2),
        family=sched.family,
        horizon=sched.horizon,
        init_seed=cfg.get_int("model.init_seed", 0),
    )
    result = train_denoiser(
        model, clips, sched,
        epochs=cfg.get_int("train.epochs", 40),
        lr=cfg.get_float("train.lr", 2e-3),
        seed=seed,
        batch_size=cfg.get_int("train.batch_size", 8),
        t_min_frac=cfg.get_float("train.t_min_frac", 0.05),
    )
    save_checkpoint(model, out / "checkpoint")
    _write_csv(out / "loss.csv", ["epoch", "loss"],
               [[i, f"{loss:.8g}"] for i, loss in enumerate(result.epoch_losses)])
    summary = out / "train_summary.txt"
    summary.write_text(
        f"baseline_loss={result.baseline_loss:.8g}\n"
        f"final_loss={result.final_loss:.8g}\n"
        f"steps={result.steps}\n"
    )
    write_manifest(out, cfg, seed)
    return EXIT_OK


def _export_frames(out: Path, video: np.ndarray, stem: str) -> None:
    frames_dir = out / f"{stem}_frames"
    frames_dir.mkdir(exist_ok=True)
    f, _, _, c = video.shape
    for i in range(f):
        if c == 1:
            tensorio.write_pgm(frames_dir / f"frame_{i:03d}.pgm", video[i, :, :, 0])
        elif c == 3:
            tensorio.write_ppm(frames_dir / f"frame_{i:03d}.ppm", video[i])
        else:
            for ch in range(c):
                tensorio.write_pgm(frames_dir / f"frame_{i:03d}_c{ch}.pgm", video[i, :, :, ch])


def cmd_edit(cfg: ParsedConfig, seed_override, out_override) -> int:
    out = _out_dir(cfg, out_override)
    seed = _seed(cfg, "edit.seed", seed_override)
    sched = schedule_from_config(cfg)
    model = build_model(cfg, sched)

    source_path = cfg.get_str("edit.source", required=True)
    if not Path(source_path).exists():
        raise ConfigError(f"source video not found: {source_path}", key="edit.source")
    source = tensorio.read_grid(source_path)
    if source.ndim != 4:
        raise GeometryError(f"source must be (F, H, W, C), got shape {source.shape}")

    codec_name = cfg.get_str("edit.codec", "identity")
    codec = IdentityCodec() if codec_name == "identity" else AvgPool2xCodec()
    latent_geometry = codec.latent_geometry(source.shape)
    model_geometry = getattr(model, "geometry", None)
    if model_geometry is None:  # analytic model: mean grids define the geometry
        model_geometry = next(iter(model.means.values())).shape
    if tuple(latent_geometry) != tuple(model_geometry):
        raise GeometryError(
            f"latent geometry {latent_geometry} does not match model {model_geometry}"
        )

    mask_mode = cfg.get_str("edit.mask_mode", "none")
    external = _load_external_mask(cfg, latent_geometry)
    if mask_mode == "scheduled" and external is None:
        print("warning: no external mask configured; falling back to attention masks",
              file=sys.stderr)
    c0 = cfg.get_int("edit.c0", required=True)
    c1 = cfg.get_int("edit.c1", required=True)
    baseline = cfg.get_str("edit.baseline", "none")

    counter = CallCounter(model)
    union_mask = None
    if baseline == "none":
        options = EditOptions(
            seed=seed,
            gamma=cfg.get_float("edit.gamma", 0.0),
            target_token=cfg.get_int("edit.target_token", 0),
            mask_mode=mask_mode,
            mask_policy=cfg.get_str("edit.mask_policy", "quantile"),
            mask_level=cfg.get_float("edit.mask_level", 0.85),
            mask_dilation=cfg.get_int("edit.mask_dilation", 1),
            external_mask=external,
            shared_noise=cfg.get_bool("edit.shared_noise", True),
        )
        result = run_edit(source, c0, c1, counter, sched, options, codec=codec)
        edited = result.video
        union_mask = result.union_mask
        rows = []
        for i, rec in enumerate(result.records):
            rows.append([
                rec.step, f"{rec.time:.8g}",
                f"{np.sqrt(np.sum(rec.dv**2)):.8g}",
                f"{np.max(np.abs(rec.dv)):.8g}",
                f"{rec.masked_fraction:.6g}",
                counter.batch_sizes[i] if i < len(counter.batch_sizes) else 2,
                f"{rec.millis:.4g}",
            ])
        _write_csv(out / "transcript.csv",
                   ["step", "t", "dv_l2", "dv_maxabs", "masked_fraction",
                    "model_calls", "millis"], rows)
    elif baseline == "inversion":
        edited_latent = inversion_edit(codec.encode(source), c0, c1, counter, sched)
        edited = codec.decode(edited_latent)
        _write_csv(out / "transcript.csv", ["phase", "model_calls"],
                   [["invert+sample", counter.calls]])
    elif baseline == "dds":
        res = dds_edit(
            codec.encode(source), c0, c1, counter, sched, NoiseStream(seed),
            step_size=cfg.get_float("edit.dds_step_size", 1.0),
            max_iters=cfg.get_int("edit.dds_max_iters", 500),
            tol=cfg.get_float("edit.dds_tol", 2e-3),
        )
        edited = codec.decode(res.video)
        _write_csv(out / "transcript.csv",
                   ["iteration", "rms_change", "converged"],
                   [[i + 1, f"{chg:.8g}", res.converged]
                    for i, chg in enumerate(res.changes)])
    else:
        raise ConfigError(f"unknown baseline {baseline!r}", key="edit.baseline")

    tensorio.write_grid(out / "edited.dfvt", edited)
    display = np.clip(edited, 0.0, 1.0)
    if cfg.get_bool("output.emit_frames", True):
        _export_frames(out, display, "edited")
    if union_mask is not None:
        tensorio.write_grid(out / "union_mask.dfvt", union_mask.as_float())
    if cfg.get_bool("output.emit_metrics", True):
        pair = VideoPair(np.clip(source, 0.0, 1.0), display)
        row = [Path(source_path).stem, f"{psnr(pair):.6g}"]
        row.append(f"{masked_psnr(pair, union_mask):.6g}" if union_mask is not None else "")
        row.append(f"{frame_consistency(display):.6g}" if source.shape[0] >= 2 else "")
        _write_csv(out / "metrics.csv",
                   ["clip_id", "psnr", "masked_psnr", "frame_consistency"], [row])
    write_manifest(out, cfg, seed, volatile=("transcript.csv",))
    return EXIT_OK


def cmd_oracle(cfg: ParsedConfig, seed_override, out_override) -> int:
    out = _out_dir(cfg, out_override)
    seed = _seed(cfg, "oracle.seed", seed_override)
    if cfg.get_str("model.kind", "analytic") != "analytic":
        print("error: the oracle needs closed-form scores (model.kind=analytic)",
              file=sys.stderr)
        return EXIT_NO_ORACLE
    base = schedule_from_config(cfg)
    dims = tuple(cfg.get_int_list("oracle.dims", [2, 2, 2, 1]))
    means = parse_means(cfg.get_str("model.means", required=True), dims)
    c0 = cfg.get_int("oracle.c0", required=True)
    c1 = cfg.get_int("oracle.c1", required=True)
    sweep = cfg.get_int_list("oracle.sweep", []) or []
    all_steps = [base.steps] + [n for n in sweep if n != base.steps]

    from .editing import delta_flow_oracle

    summary_rows = []
    for idx, steps in enumerate(all_steps):
        sched = Schedule(base.family, base.beta_min, base.beta_max, base.horizon, steps)
        model = AnalyticGaussianModel(sched, means, cfg.get_float("model.data_variance", 1.0))
        zT = NoiseStream(seed).normal_at(0, dims)
        oracle = delta_flow_oracle(model, sched, zT, c0, c1)
        z0 = NoiseStream(seed).normal_at(1, dims) * 0.25
        state = init_edit(z0, sched, seed)
        per_step = []
        while not state.exhausted:
            k = state.step
            state, rec, _ = edit_step(state, model, c0, c1)
            err = np.sqrt(np.sum((rec.dv - oracle.dvs[k]) ** 2))
            ref = np.sqrt(np.sum(oracle.dvs[k] ** 2))
            per_step.append([k, f"{rec.time:.8g}", f"{err:.8g}",
                             f"{(err / ref if ref > 0 else 0.0):.8g}"])
        shift_exact = (model.mean(c1) - model.mean(c0)) * (
            1.0 - np.sqrt(sched.alpha_bar(sched.horizon))
        ) if sched.family == "vp-sde" else None
        realized = state.target_clean - z0
        if shift_exact is not None:
            abs_err = float(np.sqrt(np.sum((realized - shift_exact) ** 2)))
            scale = float(np.sqrt(np.sum(shift_exact**2)))
            rel_err = abs_err / scale if scale > 0 else 0.0
        else:
            abs_err = float("nan")
            rel_err = float("nan")
        summary_rows.append([steps, f"{abs_err:.8g}", f"{rel_err:.8g}"])
        if idx == 0:
            _write_csv(out / "oracle.csv",
                       ["step", "t", "dv_err_l2", "dv_err_rel"], per_step)
    _write_csv(out / "oracle_summary.csv",
               ["steps", "endpoint_abs_err", "endpoint_rel_err"], summary_rows)
    write_manifest(out, cfg, seed)
    return EXIT_OK


def _format_table(rows) -> str:
    header = ["model", "estimated GiB", "reference GB", "rel err", "verdict"]
    cells = [header]
    for r in rows:
        cells.append([
            r.name,
            "-" if r.estimated_gib is None else f"{r.estimated_gib:.1f}",
            "-" if r.reference_gb is None else f"{r.reference_gb:.0f}",
            "-" if r.relative_error is None else f"{100 * r.relative_error:.1f}%",
            r.verdict,
        ])
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip()
             for row in cells]
    return "\n".join(lines)


def cmd_memest(cfg: ParsedConfig, seed_override, out_override) -> int:
    out = _out_dir(cfg, out_override)
    specs = arch_specs_from_config(cfg)
    if not specs:
        specs = list(REFERENCE_ARCHS)
    if all(s.multi_scale for s in specs):
        print("error: every row is multi-scale; nothing to estimate", file=sys.stderr)
        return EXIT_NOOP
    rows = memory_table(specs)
    csv_rows = [[r.name,
                 "" if r.estimated_gib is None else f"{r.estimated_gib:.6g}",
                 "" if r.reference_gb is None else f"{r.reference_gb:.6g}",
                 "" if r.relative_error is None else f"{r.relative_error:.6g}",
                 r.verdict] for r in rows]
    _write_csv(out / "memory.csv",
               ["model", "estimated_gib", "reference_gb", "relative_error", "verdict"],
               csv_rows)
    table = _format_table(rows)
    (out / "memory.txt").write_text(table + "\n")
    print(table)
    write_manifest(out, cfg, seed_override if seed_override is not None else 0)
    return EXIT_OK


def cmd_bench(cfg: ParsedConfig, seed_override, out_override) -> int:
    out = _out_dir(cfg, out_override)
    seed = _seed(cfg, "bench.seed", seed_override)
    sched = schedule_from_config(cfg)
    if cfg.get_str("model.kind", "toydit") != "toydit" or not cfg.get_str("model.checkpoint"):
        raise ConfigError("bench needs a trained checkpoint", key="model.checkpoint")
    model = build_model(cfg, sched)
    geometry = model.geometry
    stream = NoiseStream(seed)
    source = np.clip(0.5 + 0.25 * stream.normal_at(0, geometry), 0.0, 1.0)
    zT = stream.normal_at(1, geometry)
    c0 = cfg.get_int("edit.c0", 0)
    c1 = cfg.get_int("edit.c1", 1)

    def edit_fn(counter, ledger):
        run_edit(source, c0, c1, counter, sched,
                 EditOptions(seed=seed, mask_mode="none"), ledger=ledger)

    def sample_fn(counter, ledger):
        sample_pf_ode(sched, counter, c1, zT, ledger=ledger)

    report = measure_efficiency(
        RunHandle("edit", edit_fn, model, sched, geometry),
        RunHandle("sample", sample_fn, model, sched, geometry),
        repeats=cfg.get_int("bench.repeats", 3),
    )
    _write_csv(out / "bench.csv",
               ["model_calls_edit", "model_calls_sample", "rows_edit", "rows_sample",
                "wall_millis_edit", "wall_millis_sample", "peak_bytes_edit",
                "peak_bytes_sample", "latency_ratio", "memory_ratio"],
               [[report.model_calls_edit, report.model_calls_sample,
                 report.rows_edit, report.rows_sample,
                 f"{report.wall_millis_edit:.4g}", f"{report.wall_millis_sample:.4g}",
                 report.peak_bytes_edit, report.peak_bytes_sample,
                 f"{report.latency_ratio:.4g}", f"{report.memory_ratio:.4g}"]])
    write_manifest(out, cfg, seed, volatile=("bench.csv",))
    return EXIT_OK


def cmd_metrics(cfg: ParsedConfig, seed_override, out_override) -> int:
    out = _out_dir(cfg, out_override)
    source = tensorio.read_grid(cfg.get_str("metrics.source", required=True))
    edited = tensorio.read_grid(cfg.get_str("metrics.edited", required=True))
    pair = VideoPair(np.clip(source, 0.0, 1.0), np.clip(edited, 0.0, 1.0))
    mask_path = cfg.get_str("metrics.mask")
    row = [cfg.get_str("metrics.clip_id", "clip"), f"{psnr(pair):.6g}"]
    if mask_path:
        mask = tensorio.read_grid(mask_path)
        row.append(f"{masked_psnr(pair, mask):.6g}")
    else:
        row.append("")
    row.append(f"{frame_consistency(pair.edited):.6g}" if source.shape[0] >= 2 else "")
    _write_csv(out / "metrics.csv",
               ["clip_id", "psnr", "masked_psnr", "frame_consistency"], [row])
    write_manifest(out, cfg, seed_override if seed_override is not None else 0)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "edit": cmd_edit,
    "oracle": cmd_oracle,
    "memest": cmd_memest,
    "bench": cmd_bench,
    "metrics": cmd_metrics,
    "dataset-gen": cmd_dataset_gen,
}


def _run_one(command: str, config_path: str, seed: int | None, out: str | None) -> int:
    try:
        cfg = load_config(config_path)
        return COMMANDS[command](cfg, seed, out)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_GEOMETRY
    except DeltaFlowError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="deltaflow",
        description="Flow-based latent video editing lab",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", nargs="+", required=True, metavar="PATH")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--out", default=None, help="overrides output.directory")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallelize across independent config files")
    args = parser.parse_args(argv)

    if len(args.config) == 1 or args.jobs <= 1:
        code = 0
        for path in args.config:
            code = max(code, _run_one(args.command, path, args.seed, args.out))
        return code
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        codes = list(pool.map(
            _run_one,
            [args.command] * len(args.config),
            args.config,
            [args.seed] * len(args.config),
            [args.out] * len(args.config),
        ))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
