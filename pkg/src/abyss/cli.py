"""Operator command suite: prepare / encode / transmit-sim / sendrecv /
compare / train-psnr / train-gan / evaluate.

Exit codes: 0 success, 1 operational failure, 2 usage error. Every command is
deterministic for identical inputs and seeds; `--report <path>` additionally
writes a machine-readable key<TAB>value file.
"""

from __future__ import annotations

import logging
from pathlib import Path

import click
import numpy as np

from . import channel as channel_mod
from . import checkpoint as ckpt_io
from . import dataset as dataset_mod
from . import imaging
from . import training as training_mod
from .imaging import ImageU8
from .model import DiscriminatorConfig, GeneratorConfig

GRID_GUTTER = 4  # pixels of white between tiles in comparison grids


def _write_report(path: str | None, entries: dict) -> None:
    if path is None:
        return
    lines = [f"{k}\t{v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _hr_reference(img: ImageU8) -> ImageU8:
    """Center square crop, then bicubic to the 256x256 working resolution."""
    side = min(img.width, img.height)
    x0 = (img.width - side) // 2
    y0 = (img.height - side) // 2
    square = ImageU8(img.data[y0 : y0 + side, x0 : x0 + side])
    if side == dataset_mod.HR_SIZE:
        return square
    return imaging.bicubic_resize(square, dataset_mod.HR_SIZE, dataset_mod.HR_SIZE)


def _super_resolve(ckpt_path: str, lr: ImageU8) -> ImageU8:
    import torch

    ckpt = ckpt_io.load(ckpt_path)
    g = ckpt_io.build_generator(ckpt)
    g.eval()
    with torch.no_grad():
        out = g(training_mod.image_to_tensor(imaging.to_float(lr)).unsqueeze(0))[0]
    return training_mod.tensor_to_u8(out)


def _link_from_flags(rate, loss, latency, seed, packet_size, overhead):
    return channel_mod.LinkConfig(
        rate=rate,
        latency=latency,
        packet_size=packet_size,
        per_packet_overhead=overhead,
        packet_loss_prob=loss,
        seed=seed,
    )


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Image transmission over ultra-low-bandwidth links with learned x8
    super-resolution on the receiving side."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("corpus_root", envvar="ABYSS_DATA_DIR",
                type=click.Path(file_okay=False))
@click.option("--stride", default=25, show_default=True,
              help="Record every stride-th frame of each session.")
@click.option("--ratio", default=0.8, show_default=True,
              help="Train fraction of the session-disjoint split.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_manifest", required=True,
              type=click.Path(dir_okay=False), help="Manifest output path.")
@click.option("--report", type=click.Path(dir_okay=False))
def prepare(corpus_root, stride, ratio, seed, out_manifest, report):
    """Scan a corpus (one directory per session) into a split manifest."""
    try:
        records, warnings = dataset_mod.sample_frames(corpus_root, stride)
        for w in warnings:
            click.echo(f"warning: {w}", err=True)
        manifest = dataset_mod.split_by_session(records, ratio, seed)
    except (ValueError, OSError) as exc:
        raise _fail(str(exc))
    dataset_mod.save_manifest(manifest, out_manifest)
    sessions = {r.session_id for r in records}
    click.echo(
        f"{len(records)} frames from {len(sessions)} sessions -> "
        f"{len(manifest.train)} train / {len(manifest.test)} test "
        f"({out_manifest})"
    )
    _write_report(report, {
        "frames": len(records),
        "sessions": len(sessions),
        "train_frames": len(manifest.train),
        "test_frames": len(manifest.test),
        "warnings": len(warnings),
        "manifest": out_manifest,
    })


@main.command()
@click.argument("image_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--budget", default=1024, show_default=True,
              help="Byte budget for the JPEG payload.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False))
def encode(image_path, budget, out_path, report):
    """JPEG-encode an image at the best quality that fits the byte budget."""
    img = imaging.read_image(image_path)
    try:
        payload = imaging.encode_budget_jpeg(img, budget)
    except imaging.BudgetInfeasibleError as exc:
        raise _fail(str(exc))
    imaging.write_payload(payload, out_path)
    click.echo(
        f"{len(payload.data)} bytes at quality {payload.quality} "
        f"(budget {budget}) -> {out_path}"
    )
    _write_report(report, {
        "bytes": len(payload.data),
        "quality": payload.quality,
        "budget": budget,
        "payload": out_path,
    })


@main.command("transmit-sim")
@click.option("--payload", "payload_path", type=click.Path(exists=True, dir_okay=False),
              help="File whose bytes are transmitted.")
@click.option("--bytes", "n_bytes", type=int, help="Synthetic payload size instead.")
@click.option("--rate", default=50_000.0, show_default=True, help="Link rate, bit/s.")
@click.option("--loss", default=0.0, show_default=True, help="Packet loss probability.")
@click.option("--latency", default=0.0, show_default=True, help="One-way latency, s.")
@click.option("--seed", default=0, show_default=True)
@click.option("--packet-size", default=256, show_default=True)
@click.option("--overhead", default=16, show_default=True)
@click.option("--report", type=click.Path(dir_okay=False))
def transmit_sim(payload_path, n_bytes, rate, loss, latency, seed,
                 packet_size, overhead, report):
    """Simulate one transfer over the acoustic link and print the report."""
    if (payload_path is None) == (n_bytes is None):
        raise click.UsageError("give exactly one of --payload or --bytes")
    data = Path(payload_path).read_bytes() if payload_path else bytes(n_bytes)
    try:
        link = _link_from_flags(rate, loss, latency, seed, packet_size, overhead)
        _, rep = channel_mod.transmit(data, link)
    except ValueError as exc:
        raise _fail(str(exc))
    fps = channel_mod.max_fps(link, len(data))
    click.echo(rep.as_record())
    click.echo(f"max_fps={fps:.2f}")
    _write_report(report, {
        "payload_bytes": rep.payload_bytes,
        "packets_sent": rep.packets_sent,
        "packets_lost_then_retransmitted": rep.packets_lost_then_retransmitted,
        "total_time": repr(rep.total_time),
        "delivered": str(rep.delivered).lower(),
        "max_fps": f"{fps:.4f}",
    })


@main.command()
@click.argument("image_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--budget", default=1024, show_default=True)
@click.option("--rate", default=50_000.0, show_default=True)
@click.option("--loss", default=0.0, show_default=True)
@click.option("--latency", default=0.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--packet-size", default=256, show_default=True)
@click.option("--overhead", default=16, show_default=True)
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--report", type=click.Path(dir_okay=False))
def sendrecv(image_path, budget, rate, loss, latency, seed, packet_size,
             overhead, ckpt, out_dir, report):
    """Full pipeline: shrink, encode under budget, transmit, reconstruct.

    Writes lr.jpg (the payload) and sr.png (the 256x256 reconstruction) to
    the output directory and prints payload size, timing and PSNR against
    the 256x256 reference.
    """
    img = imaging.read_image(image_path)
    if img.width < dataset_mod.HR_SIZE or img.height < dataset_mod.HR_SIZE:
        raise _fail(f"input must be at least 256x256, got {img.width}x{img.height}")
    hr = _hr_reference(img)
    lr = imaging.bicubic_resize(hr, dataset_mod.LR_SIZE, dataset_mod.LR_SIZE)
    try:
        payload = imaging.encode_budget_jpeg(lr, budget)
        link = _link_from_flags(rate, loss, latency, seed, packet_size, overhead)
        delivered, rep = channel_mod.transmit(payload, link)
        received = imaging.EncodedPayload(
            data=delivered, codec=payload.codec, quality=payload.quality,
            source_dims=payload.source_dims, budget=payload.budget)
        lr_rx = imaging.decode_jpeg(received)
        sr = _super_resolve(ckpt, lr_rx)
    except (imaging.BudgetInfeasibleError, imaging.JpegDecodeError,
            ckpt_io.CheckpointError, ValueError) as exc:
        raise _fail(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    imaging.write_payload(payload, out / "lr.jpg")
    imaging.write_png(sr, out / "sr.png")
    psnr_model = imaging.psnr(sr, hr)
    bic = imaging.bicubic_resize(lr_rx, dataset_mod.HR_SIZE, dataset_mod.HR_SIZE)
    psnr_bicubic = imaging.psnr(bic, hr)
    click.echo(f"payload {len(payload.data)} bytes at quality {payload.quality}")
    click.echo(rep.as_record())
    click.echo(f"psnr_model={psnr_model:.2f} dB  psnr_bicubic={psnr_bicubic:.2f} dB")
    _write_report(report, {
        "payload_bytes": len(payload.data),
        "quality": payload.quality,
        "total_time": repr(rep.total_time),
        "packets_sent": rep.packets_sent,
        "psnr_model": f"{psnr_model:.6f}",
        "psnr_bicubic": f"{psnr_bicubic:.6f}",
        "lr_jpg": str(out / "lr.jpg"),
        "sr_png": str(out / "sr.png"),
    })


def _parse_crop(value: str) -> tuple[int, int, int, int]:
    try:
        x, y, w, h = (int(v) for v in value.split(","))
    except ValueError:
        raise click.UsageError(f"--crop expects x,y,w,h integers, got {value!r}")
    if w < 1 or h < 1:
        raise click.UsageError("crop width/height must be positive")
    return x, y, w, h


def _zoom(img: ImageU8, crop: tuple[int, int, int, int]) -> ImageU8:
    x, y, w, h = crop
    if x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise _fail(f"crop {crop} outside the {img.width}x{img.height} tile")
    region = ImageU8(img.data[y : y + h, x : x + w])
    return imaging.bicubic_resize(region, dataset_mod.HR_SIZE, dataset_mod.HR_SIZE)


def _assemble_grid(rows: list[list[ImageU8]]) -> ImageU8:
    tile = dataset_mod.HR_SIZE
    n_rows, n_cols = len(rows), len(rows[0])
    height = n_rows * tile + (n_rows - 1) * GRID_GUTTER
    width = n_cols * tile + (n_cols - 1) * GRID_GUTTER
    canvas = np.full((height, width, 3), 255, np.uint8)
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            y0 = r * (tile + GRID_GUTTER)
            x0 = c * (tile + GRID_GUTTER)
            canvas[y0 : y0 + tile, x0 : x0 + tile] = img.data
    return ImageU8(canvas)


@main.command()
@click.argument("image_paths", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_png", required=True, type=click.Path(dir_okay=False))
@click.option("--crop", "crops", multiple=True,
              help="x,y,w,h zoom region (repeatable; adds one zoom row each).")
@click.option("--budget", default=1024, show_default=True,
              help="JPEG budget applied to the thumbnail before reconstruction.")
@click.option("--report", type=click.Path(dir_okay=False))
def compare(image_paths, ckpt, out_png, crops, budget, report):
    """Emit an HR | bicubic | model comparison grid as one PNG."""
    crop_list = [_parse_crop(c) for c in crops]
    rows: list[list[ImageU8]] = []
    for path in image_paths:
        img = imaging.read_image(path)
        if img.width < dataset_mod.HR_SIZE or img.height < dataset_mod.HR_SIZE:
            raise _fail(f"{path}: input must be at least 256x256")
        hr = _hr_reference(img)
        lr = imaging.bicubic_resize(hr, dataset_mod.LR_SIZE, dataset_mod.LR_SIZE)
        try:
            lr = imaging.decode_jpeg(imaging.encode_budget_jpeg(lr, budget))
            sr = _super_resolve(ckpt, lr)
        except (imaging.BudgetInfeasibleError, imaging.JpegDecodeError,
                ckpt_io.CheckpointError) as exc:
            raise _fail(str(exc))
        bic = imaging.bicubic_resize(lr, dataset_mod.HR_SIZE, dataset_mod.HR_SIZE)
        rows.append([hr, bic, sr])
        for crop in crop_list:
            rows.append([_zoom(hr, crop), _zoom(bic, crop), _zoom(sr, crop)])
    grid = _assemble_grid(rows)
    imaging.write_png(grid, out_png)
    click.echo(f"{len(rows)}x3 grid ({grid.width}x{grid.height}) -> {out_png}")
    _write_report(report, {
        "rows": len(rows),
        "cols": 3,
        "width": grid.width,
        "height": grid.height,
        "out": out_png,
    })


def _gen_cfg_from_flags(n_rrdb, base_channels, growth_channels, scale):
    return GeneratorConfig(n_rrdb=n_rrdb, base_channels=base_channels,
                           growth_channels=growth_channels, scale=scale)


_train_options = [
    click.option("--manifest", "manifest_path", required=True,
                 type=click.Path(exists=True, dir_okay=False)),
    click.option("--steps", required=True, type=int,
                 help="Total optimization steps (resume-aware)."),
    click.option("--out-dir", required=True, type=click.Path(file_okay=False)),
    click.option("--lr", "learning_rate", default=1e-4, show_default=True),
    click.option("--batch-size", default=8, show_default=True),
    click.option("--beta1", default=0.9, show_default=True),
    click.option("--beta2", default=0.999, show_default=True),
    click.option("--seed", default=0, show_default=True),
    click.option("--checkpoint-every", default=0, show_default=True),
    click.option("--degrade/--no-degrade", default=True, show_default=True,
                 help="Train on JPEG-round-tripped thumbnails."),
    click.option("--budget", default=1024, show_default=True),
    click.option("--n-rrdb", default=16, show_default=True),
    click.option("--base-channels", default=64, show_default=True),
    click.option("--growth-channels", default=32, show_default=True),
    click.option("--scale", default=8, show_default=True),
]


def _with_train_options(fn):
    for opt in reversed(_train_options):
        fn = opt(fn)
    return fn


@main.command("train-psnr")
@_with_train_options
@click.option("--resume", "resume_path", type=click.Path(exists=True, dir_okay=False),
              help="Stage-one checkpoint to continue from.")
def train_psnr_cmd(manifest_path, steps, out_dir, learning_rate, batch_size,
                   beta1, beta2, seed, checkpoint_every, degrade, budget,
                   n_rrdb, base_channels, growth_channels, scale, resume_path):
    """Stage one: pretrain the generator on the pixel L1 loss."""
    cfg = training_mod.TrainConfig(
        learning_rate=learning_rate, adam_beta1=beta1, adam_beta2=beta2,
        batch_size=batch_size, stage=training_mod.STAGE_PSNR, max_steps=steps,
        seed=seed, checkpoint_every=checkpoint_every, degrade_lr=degrade,
        jpeg_budget=budget)
    try:
        manifest = dataset_mod.load_manifest(manifest_path)
        init = ckpt_io.load(resume_path) if resume_path else None
        final = training_mod.train_psnr(
            cfg, manifest,
            gen_cfg=_gen_cfg_from_flags(n_rrdb, base_channels, growth_channels, scale),
            out_dir=out_dir, init=init)
    except (ValueError, OSError, ckpt_io.CheckpointError,
            training_mod.TrainingDivergedError) as exc:
        raise _fail(str(exc))
    click.echo(f"stage-one checkpoint at step {final.step}: {out_dir}/final.ckpt")


@main.command("train-gan")
@_with_train_options
@click.option("--init", "init_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Stage-one checkpoint to initialize the generator from.")
@click.option("--lambda", "gan_lambda", default=1e-2, show_default=True,
              help="Adversarial weighting factor.")
@click.option("--d-channels", default="64,128,256,512", show_default=True,
              help="Discriminator channel schedule.")
def train_gan_cmd(manifest_path, steps, out_dir, learning_rate, batch_size,
                  beta1, beta2, seed, checkpoint_every, degrade, budget,
                  n_rrdb, base_channels, growth_channels, scale,
                  init_path, gan_lambda, d_channels):
    """Stage two: adversarial fine-tuning of (G, D) from a stage-one model."""
    cfg = training_mod.TrainConfig(
        learning_rate=learning_rate, adam_beta1=beta1, adam_beta2=beta2,
        batch_size=batch_size, gan_lambda=gan_lambda,
        stage=training_mod.STAGE_GAN, max_steps=steps, seed=seed,
        checkpoint_every=checkpoint_every, degrade_lr=degrade,
        jpeg_budget=budget)
    try:
        schedule = tuple(int(c) for c in d_channels.split(","))
        manifest = dataset_mod.load_manifest(manifest_path)
        init = ckpt_io.load(init_path)
        final = training_mod.train_gan(
            cfg, init, manifest,
            disc_cfg=DiscriminatorConfig(channel_schedule=schedule),
            out_dir=out_dir)
    except (ValueError, OSError, ckpt_io.CheckpointError,
            training_mod.TrainingDivergedError) as exc:
        raise _fail(str(exc))
    click.echo(f"stage-two checkpoint at step {final.step}: {out_dir}/final.ckpt")


@main.command("evaluate")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--degrade/--no-degrade", default=True, show_default=True,
              help="Evaluate on JPEG-round-tripped thumbnails.")
@click.option("--budget", default=1024, show_default=True)
@click.option("--report", type=click.Path(dir_okay=False))
def evaluate_cmd(ckpt, manifest_path, degrade, budget, report):
    """Mean PSNR of the model vs the bicubic baseline on the test split."""
    try:
        manifest = dataset_mod.load_manifest(manifest_path)
        rep = training_mod.evaluate(ckpt_io.load(ckpt), manifest, degrade, budget)
    except (ValueError, OSError, ckpt_io.CheckpointError) as exc:
        raise _fail(str(exc))
    for row in rep.rows:
        click.echo(f"{row.image_id}\t{row.psnr_model:.3f}\t{row.psnr_bicubic:.3f}")
    click.echo(
        f"mean over {rep.image_count} images: model {rep.mean_psnr_model:.3f} dB, "
        f"bicubic {rep.mean_psnr_bicubic:.3f} dB"
    )
    entries = {
        "images": rep.image_count,
        "mean_psnr_model": f"{rep.mean_psnr_model:.6f}",
        "mean_psnr_bicubic": f"{rep.mean_psnr_bicubic:.6f}",
        "degrade": str(degrade).lower(),
    }
    for row in rep.rows:
        entries[f"psnr_model.{row.image_id}"] = f"{row.psnr_model:.6f}"
        entries[f"psnr_bicubic.{row.image_id}"] = f"{row.psnr_bicubic:.6f}"
    _write_report(report, entries)


if __name__ == "__main__":
    main()
