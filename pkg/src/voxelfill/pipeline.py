"""End-to-end orchestration behind the CLI subcommands.

Everything here is deterministic for a fixed config + seed: model init and
per-step randomness come from keyed Philox streams, checkpoints carry both
parameters and optimizer moments, and training resumed from a checkpoint
continues bit-identically to an uninterrupted run.
"""

import csv
import json
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import diffusion as diff
from .checkpoint import load_checkpoint, save_checkpoint
from .config import config_hash
from .errors import ConfigError, EmptyMask, IoFailure, MissingPair, ZeroVariance
from .metrics import aggregate, evaluate_sample, render_table, report_csv_rows
from .models import (
    ART_BOTTLENECK,
    RESIDUAL_BOTTLENECK,
    DenoiserConfig,
    Generator,
    GeneratorConfig,
    LossWeights,
    PatchDiscriminator,
    PatchDiscriminatorConfig,
    PerceptualExtractor,
    PerceptualExtractorConfig,
    TrainBatch,
    UNet3D,
    gan_train_step,
)
from .montage import write_montage
from .nn import Grid, no_grad
from .nn.optim import adam_init, adam_step, load_state_arrays, state_arrays
from .phantom import PhantomSpec, generate_dataset, load_dataset, save_dataset
from .preprocess import (
    MaskedSample,
    compose_output,
    crop_about_mask,
    extract_slices,
    paste_crop,
    prepare_diffusion_sample,
    prepare_gan_sample,
    reassemble_slices,
    zscore_invert,
)
from .rng import (
    STREAM_INIT_DENOISER,
    STREAM_INIT_DISC,
    STREAM_INIT_GEN,
    STREAM_SAMPLE,
    STREAM_TRAIN,
    rng_stream,
)
from .volume_io import Volume, read_mask, read_rawvol, read_volume, write_rawvol, write_volume

GAN_MODELS = ("pgan", "resvit")


def phantom_spec_from(cfg: dict) -> PhantomSpec:
    p = cfg["phantom"]
    return PhantomSpec(
        dims=tuple(p["dims"]),
        semi_axes_range=tuple(p["semi_axes_range"]),
        texture_sigma=p["texture_sigma"],
        tumor_radius_range=tuple(p["tumor_radius_range"]),
    )


def cmd_phantom(cfg: dict) -> Path:
    """Generate the synthetic dataset under data_dir."""
    out = Path(cfg["data_dir"])
    spec = phantom_spec_from(cfg)
    _, manifest = generate_dataset(cfg["phantom"]["n"], cfg["seed"], spec)
    save_dataset(out, manifest, spec)
    return out


# ------------------------------------------------------------- preprocessing

def _preproc_dir(cfg: dict) -> Path:
    return Path(cfg["out_dir"]) / "preproc"


def cmd_preprocess(cfg: dict) -> Path:
    """Write per-model-family training artifacts + inversion sidecars."""
    data_dir = Path(cfg["data_dir"])
    if not (data_dir / "manifest.json").exists():
        raise MissingPair(f"no dataset manifest under {data_dir}")
    samples, manifest = load_dataset(data_dir)
    out = _preproc_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    axis = cfg["preprocess"]["slice_axis"]
    domain = cfg["preprocess"]["norm_domain"]

    for entry, raw in zip(manifest["samples"], samples):
        sid = entry["id"]
        d = out / sid
        d.mkdir(exist_ok=True)
        try:
            if cfg["model"] in GAN_MODELS:
                scan = _diseased_volume(raw)
                prepped = prepare_gan_sample(scan, raw.mask, raw.target, domain)
                _write_slice_set(d, sid, prepped, axis)
            else:
                scan = _diseased_volume(raw)
                prepped = prepare_diffusion_sample(
                    scan, raw.mask, raw.target,
                    tuple(cfg["preprocess"]["crop_size"]), domain)
                _write_crop_set(d, sid, prepped)
        except (ZeroVariance, EmptyMask) as exc:
            raise type(exc)(f"{sid}: {exc}") from exc
    return out


def _diseased_volume(raw: MaskedSample) -> Volume:
    # stored image is the voided scan; the void region stays 0 through
    # normalization, so it serves directly as the model-facing input
    return raw.image


def _write_slice_set(d: Path, sid: str, s: MaskedSample, axis: int) -> None:
    names = []
    img_slices = extract_slices(s.image, axis)
    mask_slices = extract_slices(s.mask, axis)
    tgt_slices = extract_slices(s.target, axis)
    for k, (im, mk, tg) in enumerate(zip(img_slices, mask_slices, tgt_slices)):
        write_rawvol(d / f"image_{k:03d}.rawvol", im)
        write_rawvol(d / f"mask_{k:03d}.rawvol", mk)
        write_rawvol(d / f"target_{k:03d}.rawvol", tg)
        names.append(f"{k:03d}")
    index = {
        "source": sid,
        "axis": axis,
        "count": len(names),
        "order": names,
        "stats": {"kind": "zscore", **asdict(s.stats)},
        "shape": list(s.image.shape),
    }
    (d / "index.json").write_text(json.dumps(index, indent=2) + "\n")


def _write_crop_set(d: Path, sid: str, s: MaskedSample) -> None:
    write_rawvol(d / "crop_image.rawvol", s.image.data)
    write_rawvol(d / "crop_mask.rawvol", s.mask.data)
    write_rawvol(d / "crop_target.rawvol", s.target.data)
    meta = {
        "source": sid,
        "window": asdict(s.window),
        "stats": {"kind": "minmax", **asdict(s.stats)},
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_slice_pool(preproc_dir: Path):
    """All slices of all samples as one (image, mask, target) triple list."""
    pool = []
    for d in sorted(preproc_dir.iterdir()):
        if not (d / "index.json").exists():
            continue
        index = json.loads((d / "index.json").read_text())
        for k in index["order"]:
            pool.append(tuple(
                read_rawvol(d / f"{kind}_{k}.rawvol")[0]
                for kind in ("image", "mask", "target")))
    if not pool:
        raise MissingPair(f"no preprocessed slices under {preproc_dir}")
    return pool


def load_crop_pool(preproc_dir: Path):
    """All diffusion crops as (image, mask, target) array triples."""
    pool = []
    for d in sorted(preproc_dir.iterdir()):
        if not (d / "meta.json").exists():
            continue
        pool.append(tuple(
            read_rawvol(d / f"crop_{kind}.rawvol")[0]
            for kind in ("image", "mask", "target")))
    if not pool:
        raise MissingPair(f"no preprocessed crops under {preproc_dir}")
    return pool


# ------------------------------------------------------------------ training

def build_gan(cfg: dict, dtype=np.float32):
    g = cfg["generator"]
    gen_cfg = GeneratorConfig(
        in_channels=2,
        base_width=g["base_width"],
        depth=g["depth"],
        bottleneck=ART_BOTTLENECK if cfg["model"] == "resvit" else RESIDUAL_BOTTLENECK,
        blocks=g["blocks"],
        token_dim=g["token_dim"],
        heads=g["heads"],
        patch=g["patch"],
    )
    gen = Generator(gen_cfg, rng_stream(cfg["seed"], STREAM_INIT_GEN), dtype=dtype)
    d = cfg["discriminator"]
    disc = PatchDiscriminator(
        PatchDiscriminatorConfig(layers=d["layers"], base_width=d["base_width"]),
        rng_stream(cfg["seed"], STREAM_INIT_DISC), dtype=dtype)
    extractor = None
    if cfg["model"] == "pgan":
        e = cfg["extractor"]
        extractor = PerceptualExtractor(PerceptualExtractorConfig(
            widths=tuple(e["widths"]), taps=tuple(e["taps"]), seed=e["seed"]),
            dtype=dtype)
    return gen, disc, extractor


def build_denoiser(cfg: dict, dtype=np.float32) -> UNet3D:
    d = cfg["diffusion"]
    return UNet3D(
        DenoiserConfig(base_width=d["base_width"], depth=d["depth"],
                       embed_dim=d["embed_dim"]),
        rng_stream(cfg["seed"], STREAM_INIT_DENOISER), dtype=dtype)


def schedule_from(cfg: dict) -> diff.NoiseSchedule:
    d = cfg["diffusion"]
    return diff.make_schedule(d["timesteps"], d["beta_start"], d["beta_end"])


def loss_weights_from(cfg: dict) -> LossWeights:
    w = cfg["loss_weights"]
    return LossWeights(pix=w["pix"], per=w["per"], adv=w["adv"])


def _ckpt_path(out_dir: Path, step: int) -> Path:
    return out_dir / f"ckpt_step{step:06d}.zip"


def latest_checkpoint(out_dir: Path):
    found = sorted(Path(out_dir).glob("ckpt_step*.zip"))
    return found[-1] if found else None


class _TrainLock:
    """One training process per checkpoint directory."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".train.lock"

    def __enter__(self):
        try:
            self.path.touch(exist_ok=False)
        except FileExistsError:
            raise IoFailure(f"training lock {self.path} already held") from None
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def cmd_train(cfg: dict, resume: bool = False) -> Path:
    """Train the configured model; returns the final checkpoint path."""
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg["model"] in GAN_MODELS:
        return _train_gan(cfg, out_dir, resume)
    return _train_diffusion(cfg, out_dir, resume)


def _gan_arrays(gen, disc, opt_g, opt_d) -> dict:
    arrays = {}
    for prefix, model in (("gen", gen), ("disc", disc)):
        for name, p in model.parameters().items():
            arrays[f"{prefix}.param.{name}"] = p.data
    arrays.update(state_arrays(opt_g, "gen.opt"))
    arrays.update(state_arrays(opt_d, "disc.opt"))
    return arrays


def _load_gan_arrays(gen, disc, opt_g, opt_d, arrays: dict, step: int) -> None:
    gen.load_state({k[len("gen.param."):]: v for k, v in arrays.items()
                    if k.startswith("gen.param.")})
    disc.load_state({k[len("disc.param."):]: v for k, v in arrays.items()
                     if k.startswith("disc.param.")})
    load_state_arrays(opt_g, "gen.opt", arrays, step)
    load_state_arrays(opt_d, "disc.opt", arrays, step)


def _open_loss_log(out_dir: Path, columns, resume: bool):
    path = out_dir / "loss_log.csv"
    fresh = not (resume and path.exists())
    f = open(path, "w" if fresh else "a", newline="")
    writer = csv.writer(f)
    if fresh:
        writer.writerow(columns)
    return f, writer


def _train_gan(cfg: dict, out_dir: Path, resume: bool) -> Path:
    pool = load_slice_pool(_preproc_dir(cfg))
    gen, disc, extractor = build_gan(cfg)
    opt = cfg["optimizer"]
    opt_g = adam_init(gen.parameters(), opt["lr"], opt["beta1"], opt["beta2"], opt["eps"])
    opt_d = adam_init(disc.parameters(), opt["lr"], opt["beta1"], opt["beta2"], opt["eps"])
    weights = loss_weights_from(cfg)
    chash = config_hash(cfg)

    start = 0
    if resume:
        ckpt = latest_checkpoint(out_dir)
        if ckpt is not None:
            manifest, arrays = load_checkpoint(ckpt, cfg["model"], chash)
            start = manifest["step"]
            _load_gan_arrays(gen, disc, opt_g, opt_d, arrays, start)

    steps = cfg["train"]["steps"]
    batch_size = cfg["train"]["batch_size"]
    interval = cfg["train"]["checkpoint_interval"]
    log, writer = _open_loss_log(
        out_dir, ["step", "pix", "per", "adv", "disc", "total", "wall_time"], resume)
    final = _ckpt_path(out_dir, start)
    if start == 0:
        save_checkpoint(final, cfg["model"], _gan_arrays(gen, disc, opt_g, opt_d),
                        0, chash)
    with _TrainLock(out_dir):
        for step in range(start + 1, steps + 1):
            rng = rng_stream(cfg["seed"], STREAM_TRAIN, step)
            picks = rng.integers(0, len(pool), size=batch_size)
            batch = TrainBatch(
                masked=np.stack([pool[i][0] for i in picks])[:, None],
                mask=np.stack([pool[i][1] for i in picks])[:, None],
                target=np.stack([pool[i][2] for i in picks])[:, None],
            )
            report = gan_train_step(gen, disc, extractor, batch, weights,
                                    opt_g, opt_d, cfg["adversarial"])
            writer.writerow([step, f"{report['pix']:.8e}", f"{report['per']:.8e}",
                             f"{report['adv']:.8e}", f"{report['disc']:.8e}",
                             f"{report['total']:.8e}", f"{time.time():.3f}"])
            if step % interval == 0 or step == steps:
                final = _ckpt_path(out_dir, step)
                save_checkpoint(final, cfg["model"],
                                _gan_arrays(gen, disc, opt_g, opt_d), step, chash)
    log.close()
    return final


def _denoiser_arrays(model, opt) -> dict:
    arrays = {f"param.{name}": p.data for name, p in model.parameters().items()}
    arrays.update(state_arrays(opt, "opt"))
    return arrays


def _train_diffusion(cfg: dict, out_dir: Path, resume: bool) -> Path:
    pool = load_crop_pool(_preproc_dir(cfg))
    model = build_denoiser(cfg)
    opt_cfg = cfg["optimizer"]
    opt = adam_init(model.parameters(), opt_cfg["lr"], opt_cfg["beta1"],
                    opt_cfg["beta2"], opt_cfg["eps"])
    schedule = schedule_from(cfg)
    chash = config_hash(cfg)

    start = 0
    if resume:
        ckpt = latest_checkpoint(out_dir)
        if ckpt is not None:
            manifest, arrays = load_checkpoint(ckpt, cfg["model"], chash)
            start = manifest["step"]
            model.load_state({k[len("param."):]: v for k, v in arrays.items()
                              if k.startswith("param.")})
            load_state_arrays(opt, "opt", arrays, start)

    steps = cfg["train"]["steps"]
    batch_size = cfg["train"]["batch_size"]
    interval = cfg["train"]["checkpoint_interval"]
    log, writer = _open_loss_log(out_dir, ["step", "loss", "wall_time"], resume)
    final = _ckpt_path(out_dir, start)
    if start == 0:
        save_checkpoint(final, cfg["model"], _denoiser_arrays(model, opt), 0, chash)
    with _TrainLock(out_dir):
        for step in range(start + 1, steps + 1):
            rng = rng_stream(cfg["seed"], STREAM_TRAIN, step)
            picks = rng.integers(0, len(pool), size=batch_size)
            x0 = np.stack([pool[i][2] for i in picks])[:, None]
            cond = (np.stack([pool[i][0] for i in picks])[:, None],
                    np.stack([pool[i][1] for i in picks])[:, None])
            loss = diff.diffusion_train_step(model, opt, x0, cond, schedule, rng)
            writer.writerow([step, f"{loss:.8e}", f"{time.time():.3f}"])
            if step % interval == 0 or step == steps:
                final = _ckpt_path(out_dir, step)
                save_checkpoint(final, cfg["model"],
                                _denoiser_arrays(model, opt), step, chash)
    log.close()
    return final


# ----------------------------------------------------------------- inference

def _infer_gan(cfg: dict, arrays: dict, scan: Volume, mask: Volume) -> Volume:
    gen, disc, _ = build_gan(cfg)
    _load_gan_arrays_gen_only(gen, arrays)
    del disc
    prepped = prepare_gan_sample(scan, mask, None, cfg["preprocess"]["norm_domain"])
    axis = cfg["preprocess"]["slice_axis"]
    img = np.stack(extract_slices(prepped.image, axis))[:, None]
    msk = np.stack(extract_slices(prepped.mask, axis))[:, None]
    pred = np.empty_like(img)
    with no_grad():
        for lo in range(0, img.shape[0], 8):
            hi = min(lo + 8, img.shape[0])
            pred[lo:hi] = gen(Grid(img[lo:hi]), Grid(msk[lo:hi])).data
    pred_vol = reassemble_slices(list(pred[:, 0]), axis, like=scan)
    return zscore_invert(pred_vol, prepped.stats)


def _load_gan_arrays_gen_only(gen, arrays: dict) -> None:
    gen.load_state({k[len("gen.param."):]: v for k, v in arrays.items()
                    if k.startswith("gen.param.")})


def _infer_diffusion(cfg: dict, arrays: dict, scan: Volume, mask: Volume) -> Volume:
    model = build_denoiser(cfg)
    model.load_state({k[len("param."):]: v for k, v in arrays.items()
                      if k.startswith("param.")})
    prepped = prepare_diffusion_sample(scan, mask, None,
                                       tuple(cfg["preprocess"]["crop_size"]),
                                       cfg["preprocess"]["norm_domain"])
    schedule = schedule_from(cfg)
    rng = rng_stream(cfg["seed"], STREAM_SAMPLE)
    cond = (prepped.image.data[None, None], prepped.mask.data[None, None])
    sampled = diff.sample(model, cond, schedule, rng)[0, 0]
    pred_crop = prepped.image.with_data(prepped.stats.invert(sampled))
    return paste_crop(scan, pred_crop, prepped.window)


def window_interior_mask(mask: Volume, window) -> Volume:
    """Mask voxels that fall inside the crop window's interior."""
    interior = np.zeros(mask.shape, dtype=np.float32)
    origin = np.array(window.origin)
    size = np.array(window.size)
    lo = np.maximum(origin, 0)
    hi = np.minimum(origin + size, np.array(mask.shape))
    interior[tuple(slice(a, b) for a, b in zip(lo, hi))] = 1.0
    return mask.with_data(mask.data * interior)


def cmd_infer(cfg: dict, checkpoint_path, image_path, mask_path, out_path) -> Volume:
    """Inpaint one volume with a trained checkpoint and write it as NIfTI."""
    scan = read_volume(image_path)
    mask = read_mask(mask_path)
    manifest, arrays = load_checkpoint(checkpoint_path, cfg["model"], config_hash(cfg))
    del manifest
    if cfg["model"] in GAN_MODELS:
        pred = _infer_gan(cfg, arrays, scan, mask)
        effective_mask = mask
    else:
        pred = _infer_diffusion(cfg, arrays, scan, mask)
        # voxels outside the crop window cannot be inpainted; leave them alone
        _, _, window = crop_about_mask(scan, mask, tuple(cfg["preprocess"]["crop_size"]))
        effective_mask = window_interior_mask(mask, window)
    composed = compose_output(scan, effective_mask, pred)
    write_volume(composed, out_path)
    return composed


# ---------------------------------------------------------------- evaluation

def cmd_evaluate(cfg: dict, pred_dir, ref_dir, out_dir) -> Path:
    """Score predictions against dataset references; write CSV + text table."""
    pred_dir, ref_dir = Path(pred_dir), Path(ref_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = ref_dir / "manifest.json"
    if not manifest_path.exists():
        raise MissingPair(f"no dataset manifest under {ref_dir}")
    manifest = json.loads(manifest_path.read_text())

    ids, results = [], []
    for entry in manifest["samples"]:
        sid = entry["id"]
        pred_path = None
        for ext in (".nii", ".nii.gz", ".rawvol"):
            cand = pred_dir / f"{sid}{ext}"
            if cand.exists():
                pred_path = cand
                break
        if pred_path is None:
            raise MissingPair(f"no prediction for {sid} under {pred_dir}")
        pred = read_volume(pred_path)
        ref, _ = read_rawvol(ref_dir / sid / "healthy.rawvol")
        mask, _ = read_rawvol(ref_dir / sid / "mask.rawvol")
        results.append(evaluate_sample(pred, Volume(ref), Volume(mask)))
        ids.append(sid)

    report = aggregate(results, cfg["model"], ids)
    table = render_table([report])
    (out / "report.txt").write_text(table)
    with open(out / "report.csv", "w", newline="") as f:
        csv.writer(f).writerows(report_csv_rows(report))
    return out


def cmd_montage(volume_paths, index: int, axis: int, out_path) -> None:
    volumes = [read_volume(p) for p in volume_paths]
    write_montage(volumes, index, axis, out_path)
