"""Command implementations behind the CLI.

Each cmd_* function performs one pipeline stage: analyze -> train ->
generate/enhance -> evaluate -> assemble. They raise UsageError, DataError,
or NumericError; the CLI maps those to exit codes. All randomness flows from
one master seed through a documented per-stage derivation, so a rerun with
the same seed writes bit-identical artifacts (run manifests carry wall-clock
timestamps and are the one exception).
"""

from __future__ import annotations

import dataclasses
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import bias, dataset, enhance, ergan, metrics, skin_gan
from .checkpoint import (CheckpointMeta, capture_training_state, load_checkpoint,
                         restore_training_state, save_checkpoint)
from .config import PipelineConfig, derive_seed
from .errors import DataError, UsageError
from .imagecore import Image, RangeTag, load_image, resize_bilinear, save_image, to_model_range
from .tensorutil import images_to_batch, batch_to_unit_images
from .version import TOOL_VERSION

STAGE_NAMES = ("split", "train-skin", "train-ergan", "train-enhance",
               "generate", "enhance", "evaluate", "assemble")

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclasses.dataclass
class RunContext:
    cfg: PipelineConfig
    out_dir: Path
    seed: int
    checkpoint: Path | None = None
    override_hash: bool = False


def make_context(cfg: PipelineConfig, seed: int | None = None, out: str | None = None,
                 checkpoint: str | None = None, override_hash: bool = False) -> RunContext:
    return RunContext(
        cfg=cfg,
        out_dir=Path(out if out is not None else cfg.out_dir),
        seed=cfg.seed if seed is None else seed,
        checkpoint=Path(checkpoint) if checkpoint is not None else None,
        override_hash=override_hash,
    )


def _write_run_manifest(ctx: RunContext, command: str, started: str, outcome: str) -> None:
    lines = [
        f"tool_version = {TOOL_VERSION}",
        f"command = {command}",
        f"config_hash = {ctx.cfg.hash}",
        f"master_seed = {ctx.seed}",
    ]
    for stage in STAGE_NAMES:
        lines.append(f"seed.{stage} = {derive_seed(ctx.seed, stage)}")
    lines.append(f"started = {started}")
    lines.append(f"finished = {datetime.now(timezone.utc).isoformat()}")
    lines.append(f"outcome = {outcome}")
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    (ctx.out_dir / f"run_{command}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _list_image_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES)


def _as_rgb(img: Image) -> Image:
    if img.channels == 3:
        return img
    return Image(np.repeat(img.pixels, 3, axis=2), img.range_tag)


def _load_manifest(ctx: RunContext) -> dataset.AttributeManifest:
    if not ctx.cfg.manifest:
        raise UsageError("this command requires 'manifest' in the config")
    path = Path(ctx.cfg.manifest)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    manifest = dataset.parse_attribute_manifest(path.read_text(encoding="utf-8"))
    if len(manifest) == 0:
        raise DataError(f"empty manifest: {path}")
    return manifest


def _training_ids(ctx: RunContext) -> list[str]:
    """Training pool: the train split of the manifest when one is configured,
    otherwise every image file in dataset_dir."""
    if ctx.cfg.manifest:
        manifest = _load_manifest(ctx)
        split = dataset.split_dataset(manifest, ctx.cfg.split_seed)
        return list(split.train_ids)
    return [p.name for p in _list_image_files(Path(ctx.cfg.dataset_dir))]


def _load_pool(ctx: RunContext, size: int) -> list[Image]:
    root = Path(ctx.cfg.dataset_dir)
    ids = _training_ids(ctx)
    if not ids:
        raise DataError(f"no training images under {root}")
    pool = []
    for rec_id in ids:
        path = root / rec_id
        if not path.is_file():
            raise DataError(f"image for record '{rec_id}' not found under {root}")
        img = _as_rgb(load_image(path))
        if (img.height, img.width) != (size, size):
            img = resize_bilinear(img, size, size)
        pool.append(img)
    return pool


def _pool_sampler(pool: torch.Tensor):
    n = pool.shape[0]

    def sample(batch: int, rng: torch.Generator) -> torch.Tensor:
        idx = torch.randint(n, (batch,), generator=rng)
        return pool[idx]

    return sample


def _check_hash(ctx: RunContext, meta: CheckpointMeta) -> None:
    if meta.config_hash != ctx.cfg.hash:
        if ctx.override_hash:
            print(f"warning: checkpoint config hash {meta.config_hash} differs from "
                  f"current config {ctx.cfg.hash}; proceeding under --override-hash",
                  file=sys.stderr)
        else:
            raise DataError(
                f"checkpoint was trained under config hash {meta.config_hash}, current "
                f"config hashes to {ctx.cfg.hash}; pass --override-hash to proceed anyway")


def _print_diag(diag: dict) -> None:
    for key, value in diag.items():
        print(f"{key}={value}")


# ---------------------------------------------------------------- analyze


def cmd_analyze(ctx: RunContext) -> int:
    started = _now()
    manifest = _load_manifest(ctx)
    report = bias.analyze_dataset(manifest, ctx.cfg.dataset_dir, ctx.cfg.bias_threshold)
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    bias.write_bias_report_text(report, ctx.out_dir / "bias_report.txt")
    bias.write_attribute_csv(report.stats, ctx.out_dir / "attribute_stats.csv")
    print(f"total_records={report.stats.total}")
    print(f"flagged_attributes={','.join(name for name, _ in report.flagged_attributes)}")
    print(f"flagged_tone_bins={','.join(str(b) for b in report.flagged_tone_bins)}")
    print(f"bias_report={ctx.out_dir / 'bias_report.txt'}")
    _write_run_manifest(ctx, "analyze", started, "ok")
    return 0


# ---------------------------------------------------------------- training


def _resume_if_requested(ctx: RunContext, model_name: str, modules: dict, adams: dict,
                         rng: torch.Generator) -> dict[str, int]:
    if ctx.checkpoint is None:
        return {}
    payload, meta = load_checkpoint(ctx.checkpoint)
    if meta.model != model_name:
        raise DataError(f"checkpoint {ctx.checkpoint} holds a '{meta.model}' model, "
                        f"expected '{model_name}'")
    _check_hash(ctx, meta)
    return restore_training_state(payload, modules, adams, rng)


def cmd_train_skin(ctx: RunContext) -> int:
    started = _now()
    cfg = ctx.cfg
    stage_seed = derive_seed(ctx.seed, "train-skin")
    skin_cfg = dataclasses.replace(cfg.skin, seed=stage_seed)
    pool_imgs = _load_pool(ctx, skin_cfg.image_size)
    pool = images_to_batch([to_model_range(im) for im in pool_imgs])
    state = skin_gan.init_train_state(skin_cfg, _pool_sampler(pool))
    modules = {"generator": state.generator, "critic": state.critic}
    adams = {"adam_g": state.adam_g, "adam_d": state.adam_d}
    counters = _resume_if_requested(ctx, "skin", modules, adams, state.rng)
    state.critic_steps = counters.get("critic_steps", 0)
    state.gen_steps = counters.get("gen_steps", 0)
    ckpt_path = ctx.out_dir / "skin_ckpt.pt"
    diag = {"loss_critic": math.nan, "loss_generator": math.nan, "grad_norm_mean": math.nan}

    def save(d: dict) -> None:
        payload = capture_training_state(
            modules, adams, state.rng,
            {"critic_steps": state.critic_steps, "gen_steps": state.gen_steps})
        save_checkpoint(ckpt_path, payload, CheckpointMeta(
            "skin", stage_seed, state.gen_steps, cfg.hash,
            d["loss_critic"], d["loss_generator"]))

    for i in range(cfg.train_steps):
        diag = skin_gan.train_step(state)
        if (i + 1) % cfg.checkpoint_every == 0:
            save(diag)
    save(diag)
    _print_diag(diag)
    print(f"steps={state.gen_steps}")
    print(f"checkpoint={ckpt_path}")
    _write_run_manifest(ctx, "train-skin", started, "ok")
    return 0


def cmd_train_ergan(ctx: RunContext) -> int:
    started = _now()
    cfg = ctx.cfg
    stage_seed = derive_seed(ctx.seed, "train-ergan")
    ergan_cfg = dataclasses.replace(cfg.ergan, seed=stage_seed)
    size = ergan_cfg.image_size
    pool_imgs = _load_pool(ctx, size)
    clean = images_to_batch([to_model_range(im) for im in pool_imgs])
    glasses = images_to_batch([
        to_model_range(dataset.composite_glasses(im, derive_seed(stage_seed, f"composite:{i}")))
        for i, im in enumerate(pool_imgs)
    ])
    n = clean.shape[0]

    def sample_pairs(batch: int, rng: torch.Generator):
        idx = torch.randint(n, (batch,), generator=rng)
        return glasses[idx], clean[idx]

    band = dataset.eye_band_rows(size) if ergan_cfg.w_mask > 0 else None
    state = ergan.init_ergan_state(ergan_cfg, sample_pairs, eye_band=band)
    modules = {"generator": state.generator, "discriminator": state.discriminator}
    adams = {"adam_g": state.adam_g, "adam_d": state.adam_d}
    counters = _resume_if_requested(ctx, "ergan", modules, adams, state.rng)
    state.steps = counters.get("steps", 0)
    ckpt_path = ctx.out_dir / "ergan_ckpt.pt"
    diag = {"loss_d": math.nan, "loss_g": math.nan}

    def save(d: dict) -> None:
        payload = capture_training_state(modules, adams, state.rng, {"steps": state.steps})
        save_checkpoint(ckpt_path, payload, CheckpointMeta(
            "ergan", stage_seed, state.steps, cfg.hash, d["loss_d"], d["loss_g"]))

    for i in range(cfg.train_steps):
        diag = ergan.ergan_train_step(state)
        if (i + 1) % cfg.checkpoint_every == 0:
            save(diag)
    save(diag)
    _print_diag(diag)
    print(f"steps={state.steps}")
    print(f"checkpoint={ckpt_path}")
    _write_run_manifest(ctx, "train-ergan", started, "ok")
    return 0


def cmd_train_enhance(ctx: RunContext) -> int:
    started = _now()
    cfg = ctx.cfg
    stage_seed = derive_seed(ctx.seed, "train-enhance")
    enh_cfg = dataclasses.replace(cfg.enhance, seed=stage_seed)
    pool_imgs = _load_pool(ctx, enh_cfg.work_size)
    pre = [enhance.preprocess_image(enh_cfg, im) for im in pool_imgs]
    pool = images_to_batch([to_model_range(im) for im in pre])
    state = enhance.init_enhance_state(enh_cfg, _pool_sampler(pool))
    modules = {"tails": state.tails, "d1": state.d1, "d2": state.d2}
    adams = {"adam_g": state.adam_g, "adam_d1": state.adam_d1, "adam_d2": state.adam_d2}
    counters = _resume_if_requested(ctx, "enhance", modules, adams, state.rng)
    state.steps = counters.get("steps", 0)
    ckpt_path = ctx.out_dir / "enhance_ckpt.pt"
    diag = {"loss_d1": math.nan, "loss_d2": math.nan, "loss_g": math.nan}

    def save(d: dict) -> None:
        payload = capture_training_state(modules, adams, state.rng, {"steps": state.steps})
        save_checkpoint(ckpt_path, payload, CheckpointMeta(
            "enhance", stage_seed, state.steps, cfg.hash,
            d["loss_d1"] + d["loss_d2"], d["loss_g"]))

    for i in range(cfg.train_steps):
        diag = enhance.enhance_train_step(state)
        if (i + 1) % cfg.checkpoint_every == 0:
            save(diag)
    save(diag)
    _print_diag(diag)
    print(f"steps={state.steps}")
    print(f"checkpoint={ckpt_path}")
    _write_run_manifest(ctx, "train-enhance", started, "ok")
    return 0


# ---------------------------------------------------------------- inference


def _input_files(ctx: RunContext) -> list[Path]:
    if not ctx.cfg.input_dir:
        raise UsageError("this command requires 'generate.input_dir' or "
                         "'enhance.input_dir' in the config")
    files = _list_image_files(Path(ctx.cfg.input_dir))
    if not files:
        raise DataError(f"no input images under {ctx.cfg.input_dir}")
    return files


def cmd_generate(ctx: RunContext) -> int:
    started = _now()
    cfg = ctx.cfg
    ckpt = ctx.checkpoint if ctx.checkpoint is not None else ctx.out_dir / "skin_ckpt.pt"
    payload, meta = load_checkpoint(ckpt)
    _check_hash(ctx, meta)
    files = _input_files(ctx)
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    if meta.model == "skin":
        generator = skin_gan.SkinGenerator(
            cfg.skin.image_size, z_dim=cfg.skin.z_dim, cond_dim=cfg.skin.cond_dim,
            literal_concat=cfg.skin.literal_concat)
        generator.load_state_dict(payload["modules"]["generator"])
        for path in files:
            img = _as_rgb(load_image(path))
            out = skin_gan.recolor(generator, img, derive_seed(ctx.seed, f"generate:{path.name}"))
            save_image(out, ctx.out_dir / f"{path.stem}_skin.png")
    elif meta.model == "ergan":
        generator = ergan.ErganGenerator()
        generator.load_state_dict(payload["modules"]["generator"])
        size = cfg.ergan.image_size
        for path in files:
            img = _as_rgb(load_image(path))
            work = img if (img.height, img.width) == (size, size) \
                else resize_bilinear(img, size, size)
            x = images_to_batch([to_model_range(work)])
            with torch.no_grad():
                y, mask = ergan.ergan_forward(generator, x)
            out = batch_to_unit_images(y)[0]
            mask_img = Image(mask[0].numpy().transpose(1, 2, 0).astype(np.float32),
                             RangeTag.UNIT)
            if (img.height, img.width) != (size, size):
                out = resize_bilinear(out, img.height, img.width)
                mask_img = resize_bilinear(mask_img, img.height, img.width)
            save_image(out, ctx.out_dir / f"{path.stem}_noglasses.png")
            save_image(mask_img, ctx.out_dir / f"{path.stem}_mask.png")
    else:
        raise UsageError(f"checkpoint holds model '{meta.model}'; "
                         "use the 'enhance' command for enhancement models")
    print(f"generated={len(files)}")
    print(f"out_dir={ctx.out_dir}")
    _write_run_manifest(ctx, "generate", started, "ok")
    return 0


def cmd_enhance(ctx: RunContext) -> int:
    started = _now()
    cfg = ctx.cfg
    ckpt = ctx.checkpoint if ctx.checkpoint is not None else ctx.out_dir / "enhance_ckpt.pt"
    payload, meta = load_checkpoint(ckpt)
    if meta.model != "enhance":
        raise DataError(f"checkpoint {ckpt} holds a '{meta.model}' model, expected 'enhance'")
    _check_hash(ctx, meta)
    tails = enhance.EnhanceGenerator()
    tails.load_state_dict(payload["modules"]["tails"])
    files = _input_files(ctx)
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    for path in files:
        img = _as_rgb(load_image(path))
        out = enhance.enhance_image(cfg.enhance, tails, img)
        save_image(out, ctx.out_dir / path.name)
    print(f"enhanced={len(files)}")
    print(f"out_dir={ctx.out_dir}")
    _write_run_manifest(ctx, "enhance", started, "ok")
    return 0


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(ctx: RunContext) -> int:
    started = _now()
    if not ctx.cfg.pairs:
        raise UsageError("evaluate requires 'evaluate.pairs' in the config")
    pairs_path = Path(ctx.cfg.pairs)
    if not pairs_path.is_file():
        raise DataError(f"pairs manifest not found: {pairs_path}")
    base = pairs_path.parent
    entries = []
    for lineno, raw in enumerate(pairs_path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise DataError(f"line {lineno}: expected 'generated,reference,category', got {line!r}")
        gen_path, ref_path, category = parts
        gp = Path(gen_path) if Path(gen_path).is_absolute() else base / gen_path
        rp = Path(ref_path) if Path(ref_path).is_absolute() else base / ref_path
        if not gp.is_file():
            raise DataError(f"line {lineno}: generated image not found: {gp}")
        if not rp.is_file():
            raise DataError(f"line {lineno}: reference image not found: {rp}")
        gen_img, ref_img = load_image(gp), load_image(rp)
        if gen_img.pixels.shape != ref_img.pixels.shape:
            raise DataError(f"line {lineno}: shape mismatch {gen_img.pixels.shape} "
                            f"vs {ref_img.pixels.shape}")
        entries.append((gen_img, ref_img, category))
    if not entries:
        raise DataError(f"pairs manifest has no entries: {pairs_path}")
    report = metrics.aggregate(entries)
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    out_path = ctx.out_dir / "metrics_report.csv"
    metrics.write_report_csv(report, out_path)
    for e in report.entries:
        print(f"{e.metric}.{e.category}={e.mean:.6f} (n={e.count}, excluded={e.excluded_infinite})")
    print(f"report={out_path}")
    _write_run_manifest(ctx, "evaluate", started, "ok")
    return 0


# ---------------------------------------------------------------- assemble


def _minimal_additions(positives: int, total: int, rate: float) -> int:
    """Smallest k with (positives + k) / (total + k) >= rate. None if
    unreachable (rate = 1 with any negative present)."""
    if total > 0 and positives / total >= rate:
        return 0
    if rate >= 1.0:
        return None if positives < total else 0
    return max(0, math.ceil((rate * total - positives) / (1.0 - rate)))


def cmd_assemble(ctx: RunContext) -> int:
    started = _now()
    cfg = ctx.cfg
    if not cfg.bias_report:
        raise UsageError("assemble requires 'assemble.bias_report' in the config")
    report_path = Path(cfg.bias_report)
    if not report_path.is_file():
        raise DataError(f"bias report not found: {report_path}")
    flagged = bias.read_bias_report_flags(report_path)
    manifest = _load_manifest(ctx)
    names = manifest.attribute_names
    for attr in flagged:
        if attr not in names:
            raise DataError(f"bias report flags unknown attribute '{attr}'")
    ctx.out_dir.mkdir(parents=True, exist_ok=True)

    synth_root = Path(cfg.synthetic_dir) if cfg.synthetic_dir else None
    supply: dict[str, list[Path]] = {}
    for attr in flagged:
        attr_dir = synth_root / attr if synth_root is not None else None
        supply[attr] = _list_image_files(attr_dir) if attr_dir is not None and attr_dir.is_dir() else []

    ids = list(manifest.ids)
    values = [list(row) for row in manifest.values]
    added: dict[str, int] = {attr: 0 for attr in flagged}

    def positives(attr: str) -> int:
        col = names.index(attr)
        return sum(1 for row in values if row[col] > 0)

    progress = True
    while progress:
        progress = False
        for attr in flagged:
            need = _minimal_additions(positives(attr), len(ids), cfg.target_rate)
            if need is None:
                need = len(supply[attr])  # target rate 1 is unreachable; use everything
            take = min(need, len(supply[attr]))
            if take == 0:
                continue
            col = names.index(attr)
            for path in supply[attr][:take]:
                # ids stay relative to the output manifest so reruns into
                # different directories produce identical bytes
                rec_id = Path(os.path.relpath(path, ctx.out_dir)).as_posix()
                ids.append(rec_id)
                row = [-1] * len(names)
                row[col] = 1
                values.append(row)
            supply[attr] = supply[attr][take:]
            added[attr] += take
            progress = True

    out_manifest = dataset.AttributeManifest(
        attribute_names=names,
        ids=ids,
        values=np.array(values, dtype=np.int8).reshape(len(ids), len(names)),
    )
    out_path = ctx.out_dir / "balanced_manifest.txt"
    out_path.write_text(dataset.serialize_attribute_manifest(out_manifest), encoding="utf-8")

    summary_lines = [f"target_rate = {cfg.target_rate!r}",
                     f"total_records = {len(ids)}"]
    for attr in flagged:
        rate = positives(attr) / len(ids)
        if rate < cfg.target_rate:
            print(f"warning: attribute '{attr}' remains below target "
                  f"({rate:.6f} < {cfg.target_rate}); not enough synthetic images",
                  file=sys.stderr)
        summary_lines.append(f"added.{attr} = {added[attr]}")
        summary_lines.append(f"rate.{attr} = {rate:.6f}")
        print(f"added.{attr}={added[attr]}")
        print(f"rate.{attr}={rate:.6f}")
    (ctx.out_dir / "assembly_report.txt").write_text(
        "\n".join(summary_lines) + "\n", encoding="utf-8")
    print(f"balanced_manifest={out_path}")
    _write_run_manifest(ctx, "assemble", started, "ok")
    return 0
