"""Two-stage training: L1-only generator pretraining, then adversarial
fine-tuning of (G, D) initialized from stage one; plus evaluation.

Data order is a pure function of (seed, step): each epoch draws a fresh
seeded permutation of the train records and steps slice it into mini-batches,
so an interrupted run resumed from a checkpoint replays the exact batch
sequence of an uninterrupted one. Random crops derive their seeds from
(seed, step, slot) the same way.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint
from .dataset import HR_SIZE, SplitManifest, load_frame, make_pair
from .imaging import ImageF, ImageU8, bicubic_resize, psnr, to_float, to_u8
from .losses import (
    GanWeights,
    RelativisticScores,
    full_objective,
    gan_loss_d,
    gan_loss_g,
    l1_loss,
)
from .model import (
    DiscriminatorConfig,
    GeneratorConfig,
    init_discriminator,
    init_generator,
)

logger = logging.getLogger(__name__)

STAGE_PSNR = "psnr"
STAGE_GAN = "gan"


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; a diagnostic checkpoint was written if possible."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 8  # per device; single-device semantics here
    gan_lambda: float = 1e-2
    stage: str = STAGE_PSNR
    max_steps: int = 0
    seed: int = 0
    checkpoint_every: int = 0  # 0: only the final checkpoint
    degrade_lr: bool = True  # train on JPEG-round-tripped thumbnails
    jpeg_budget: int = 1024

    def __post_init__(self):
        if self.stage not in (STAGE_PSNR, STAGE_GAN):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.max_steps < 0 or self.checkpoint_every < 0:
            raise ValueError("step counts must be non-negative")
        if self.gan_lambda < 0:
            raise ValueError("gan_lambda must be non-negative")


@dataclass(frozen=True)
class TrainingBatch:
    x: torch.Tensor  # B x 3 x 32 x 32 LR inputs in [0, 1]
    y: torch.Tensor  # B x 3 x 256 x 256 HR targets in [0, 1]

    def __post_init__(self):
        bx, _, hx, wx = self.x.shape
        by, _, hy, wy = self.y.shape
        if bx != by or hy % hx or wy % wx or hy // hx != wy // wx:
            raise ValueError(
                f"HR dims {(hy, wy)} are not an integer multiple of LR dims {(hx, wx)}"
            )


@dataclass(frozen=True)
class EvalRow:
    image_id: str
    psnr_model: float
    psnr_bicubic: float


@dataclass(frozen=True)
class EvalReport:
    mean_psnr_model: float
    mean_psnr_bicubic: float
    rows: tuple[EvalRow, ...]
    image_count: int


def image_to_tensor(img: ImageF) -> torch.Tensor:
    """(h, w, 3) float image to a 3 x h x w tensor."""
    return torch.from_numpy(img.data).permute(2, 0, 1).contiguous()


def tensor_to_u8(t: torch.Tensor) -> ImageU8:
    """3 x h x w tensor to an 8-bit image: clamp to [0, 1] and quantize."""
    arr = np.ascontiguousarray(t.detach().permute(1, 2, 0).numpy(), dtype=np.float32)
    return to_u8(ImageF(arr))


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Deterministic mini-batch membership for a given step.

    Epochs are seeded permutations of the record list; steps slice them.
    When the batch is larger than the record list the permutation is tiled.
    """
    steps_per_epoch = max(n // batch_size, 1)
    epoch, pos = divmod(step, steps_per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    if batch_size >= n:
        reps = -(-batch_size // n)
        return np.tile(perm, reps)[:batch_size]
    return perm[pos * batch_size : (pos + 1) * batch_size]


def _build_batch(
    records, idxs: np.ndarray, cfg: TrainConfig, step: int
) -> TrainingBatch:
    xs, ys = [], []
    for slot, ridx in enumerate(idxs):
        frame = load_frame(records[int(ridx)])
        pair = make_pair(
            frame,
            crop_seed=_derived_seed(cfg.seed, step, slot),
            degrade=cfg.degrade_lr,
            budget=cfg.jpeg_budget,
        )
        xs.append(image_to_tensor(to_float(pair.lr)))
        ys.append(image_to_tensor(to_float(pair.hr)))
    return TrainingBatch(x=torch.stack(xs), y=torch.stack(ys))


class _TrainLog:
    """Append-only training log: one `step<TAB>stage<TAB>loss_name<TAB>value`
    line per recorded loss."""

    def __init__(self, out_dir: Path | None):
        self._fh = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            self._fh = open(out_dir / "train.log", "a", encoding="utf-8")

    def write(self, step: int, stage: str, name: str, value: float) -> None:
        logger.debug("step %d %s %s=%g", step, stage, name, value)
        if self._fh is not None:
            self._fh.write(f"{step}\t{stage}\t{name}\t{value!r}\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _psnr_checkpoint(
    step: int, cfg: TrainConfig, gen_cfg: GeneratorConfig, model, opt
) -> Checkpoint:
    opt_g, adam_step = ckpt_io.adam_arrays(model, opt)
    return Checkpoint(
        step=step,
        stage=STAGE_PSNR,
        gen_config=gen_cfg,
        generator=ckpt_io.state_arrays(model),
        opt_g=opt_g or None,
        adam_step_g=adam_step,
        train_config=dataclasses.asdict(cfg),
    )


def _gan_checkpoint(
    step: int, cfg: TrainConfig, gen_cfg, disc_cfg, g, d, g_opt, d_opt
) -> Checkpoint:
    opt_g, step_g = ckpt_io.adam_arrays(g, g_opt)
    opt_d, step_d = ckpt_io.adam_arrays(d, d_opt)
    return Checkpoint(
        step=step,
        stage=STAGE_GAN,
        gen_config=gen_cfg,
        generator=ckpt_io.state_arrays(g),
        disc_config=disc_cfg,
        discriminator=ckpt_io.state_arrays(d),
        opt_g=opt_g or None,
        opt_d=opt_d or None,
        adam_step_g=step_g,
        adam_step_d=step_d,
        train_config=dataclasses.asdict(cfg),
    )


def _adam(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        params, lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2)
    )


def _save_snapshot(ck: Checkpoint, out_dir: Path | None, name: str) -> None:
    if out_dir is not None:
        ckpt_io.save(ck, out_dir / name)


def train_psnr(
    cfg: TrainConfig,
    manifest: SplitManifest,
    gen_cfg: GeneratorConfig | None = None,
    out_dir: str | Path | None = None,
    init: Checkpoint | None = None,
) -> Checkpoint:
    """Stage one: Adam on the pixel L1 loss over seeded-shuffled patch pairs.

    `init` resumes an earlier stage-one checkpoint (weights, optimizer state
    and step counter); `max_steps` is the total step target, so resuming a
    k-step checkpoint with max_steps=2k runs k more steps.
    """
    if cfg.stage != STAGE_PSNR:
        raise ValueError(f"train_psnr requires stage={STAGE_PSNR!r}")
    records = manifest.train
    if not records:
        raise ValueError("train split is empty")
    out_dir = Path(out_dir) if out_dir is not None else None

    if init is not None:
        gen_cfg = init.gen_config
        model = ckpt_io.build_generator(init)
        opt = _adam(model.parameters(), cfg)
        if init.opt_g:
            ckpt_io.restore_adam(model, opt, init.opt_g, init.adam_step_g)
        start = init.step
    else:
        gen_cfg = gen_cfg or GeneratorConfig()
        model = init_generator(gen_cfg, cfg.seed)
        opt = _adam(model.parameters(), cfg)
        start = 0

    log = _TrainLog(out_dir)
    try:
        for step in range(start, cfg.max_steps):
            batch = _build_batch(records, _batch_indices(
                len(records), cfg.batch_size, cfg.seed, step), cfg, step)
            opt.zero_grad()
            loss = l1_loss(model(batch.x), batch.y)
            if not torch.isfinite(loss):
                _save_snapshot(
                    _psnr_checkpoint(step, cfg, gen_cfg, model, opt),
                    out_dir, f"diverged_{step:08d}.ckpt")
                raise TrainingDivergedError(f"non-finite L1 loss at step {step}")
            loss.backward()
            opt.step()
            log.write(step, STAGE_PSNR, "l1", loss.item())
            done = step + 1
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                _save_snapshot(_psnr_checkpoint(done, cfg, gen_cfg, model, opt),
                               out_dir, f"step_{done:08d}.ckpt")
    finally:
        log.close()
    final = _psnr_checkpoint(max(cfg.max_steps, start), cfg, gen_cfg, model, opt)
    _save_snapshot(final, out_dir, "final.ckpt")
    return final


def train_gan(
    cfg: TrainConfig,
    init: Checkpoint,
    manifest: SplitManifest,
    disc_cfg: DiscriminatorConfig | None = None,
    out_dir: str | Path | None = None,
) -> Checkpoint:
    """Stage two: alternating D then G updates per mini-batch.

    G starts from the stage-one checkpoint (weights only, fresh optimizer);
    D starts fresh unless `init` is itself a stage-two checkpoint, in which
    case everything resumes. In each step the generated batch is detached for
    the D update and the real score map is a constant for the G update; with
    gan_lambda == 0 the adversarial terms vanish and the G update degenerates
    to the stage-one L1 graph exactly.
    """
    if cfg.stage != STAGE_GAN:
        raise ValueError(f"train_gan requires stage={STAGE_GAN!r}")
    if init is None:
        raise ValueError("GAN stage requires an init checkpoint")
    records = manifest.train
    if not records:
        raise ValueError("train split is empty")
    out_dir = Path(out_dir) if out_dir is not None else None

    gen_cfg = init.gen_config
    g = ckpt_io.build_generator(init)
    g_opt = _adam(g.parameters(), cfg)
    if init.stage == STAGE_GAN and init.discriminator is not None:
        disc_cfg = init.disc_config
        d = ckpt_io.build_discriminator(init)
        d_opt = _adam(d.parameters(), cfg)
        if init.opt_g:
            ckpt_io.restore_adam(g, g_opt, init.opt_g, init.adam_step_g)
        if init.opt_d:
            ckpt_io.restore_adam(d, d_opt, init.opt_d, init.adam_step_d)
        start = init.step
    else:
        disc_cfg = disc_cfg or DiscriminatorConfig()
        d = init_discriminator(disc_cfg, cfg.seed + 1)
        d_opt = _adam(d.parameters(), cfg)
        start = 0

    weights = GanWeights(cfg.gan_lambda) if cfg.gan_lambda > 0 else None
    log = _TrainLog(out_dir)

    def snapshot(step: int) -> Checkpoint:
        return _gan_checkpoint(step, cfg, gen_cfg, disc_cfg, g, d, g_opt, d_opt)

    try:
        for step in range(start, cfg.max_steps):
            batch = _build_batch(records, _batch_indices(
                len(records), cfg.batch_size, cfg.seed, step), cfg, step)

            if weights is not None:
                # D update on detached generator output.
                with torch.no_grad():
                    fake = g(batch.x)
                d_opt.zero_grad()
                scores = RelativisticScores.from_score_maps(d(batch.y), d(fake))
                ld = gan_loss_d(scores)
                d_obj, _ = full_objective(l1_loss(fake, batch.y), ld,
                                          gan_loss_g(scores), weights)
                d_obj.backward()
                d_opt.step()
                log.write(step, STAGE_GAN, "gan_d", ld.item())
                log.write(step, STAGE_GAN, "d_objective", d_obj.item())

            # G update against the freshly updated D.
            g_opt.zero_grad()
            fake = g(batch.x)
            l1 = l1_loss(fake, batch.y)
            if weights is None:
                if not torch.isfinite(l1):
                    _save_snapshot(snapshot(step), out_dir, f"diverged_{step:08d}.ckpt")
                    raise TrainingDivergedError(f"non-finite L1 loss at step {step}")
                g_obj = l1
            else:
                with torch.no_grad():
                    real_scores = d(batch.y)
                scores = RelativisticScores.from_score_maps(real_scores, d(fake))
                lg = gan_loss_g(scores)
                _, g_obj = full_objective(l1, gan_loss_d(scores), lg, weights)
                log.write(step, STAGE_GAN, "gan_g", lg.item())
            g_obj.backward()
            g_opt.step()
            log.write(step, STAGE_GAN, "l1", l1.item())
            log.write(step, STAGE_GAN, "g_objective", g_obj.item())

            done = step + 1
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                _save_snapshot(snapshot(done), out_dir, f"step_{done:08d}.ckpt")
    except FloatingPointError as exc:
        _save_snapshot(snapshot(step), out_dir, f"diverged_{step:08d}.ckpt")
        raise TrainingDivergedError(str(exc)) from exc
    finally:
        log.close()
    final = snapshot(max(cfg.max_steps, start))
    _save_snapshot(final, out_dir, "final.ckpt")
    return final


def evaluate(
    ckpt: Checkpoint,
    manifest: SplitManifest,
    degrade: bool,
    budget: int = 1024,
) -> EvalReport:
    """PSNR of the model reconstruction and of plain bicubic up-sampling,
    per test image and averaged. Crops are seeded by record position, so the
    report is deterministic for a given manifest."""
    if not manifest.test:
        raise ValueError("test split is empty")
    g = ckpt_io.build_generator(ckpt)
    g.eval()
    rows = []
    with torch.no_grad():
        for i, rec in enumerate(manifest.test):
            pair = make_pair(load_frame(rec), crop_seed=i, degrade=degrade,
                             budget=budget)
            out = g(image_to_tensor(to_float(pair.lr)).unsqueeze(0))[0]
            sr = tensor_to_u8(out)
            up = bicubic_resize(pair.lr, HR_SIZE, HR_SIZE)
            rows.append(EvalRow(
                image_id=f"{rec.session_id}:{Path(rec.source_path).name}"
                         f":{rec.frame_index}",
                psnr_model=psnr(sr, pair.hr),
                psnr_bicubic=psnr(up, pair.hr),
            ))
    return EvalReport(
        mean_psnr_model=float(np.mean([r.psnr_model for r in rows])),
        mean_psnr_bicubic=float(np.mean([r.psnr_bicubic for r in rows])),
        rows=tuple(rows),
        image_count=len(rows),
    )
