"""Versioned checkpoint container.

A checkpoint is a single ``.npz`` file holding shape-tagged float arrays under
canonical dotted names plus a JSON metadata block:

    g.head.weight, g.rrdb.3.dense.1.conv.2.bias, ...   generator weights
    d.conv.0.weight, ...                               discriminator weights
    opt.g.<param>.m / opt.g.<param>.v                  Adam first/second moments
    opt.d.<param>.m / opt.d.<param>.v

The metadata block records the format version, the step counter, the stage,
the architecture configs, and the Adam step counts. Loading into a model
refuses on any name or shape mismatch.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .model import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
)

FORMAT_VERSION = 1
_META_KEY = "__meta__"


class CheckpointError(Exception):
    """Checkpoint file malformed or incompatible with the requested model."""


@dataclass
class Checkpoint:
    step: int
    stage: str  # "psnr" or "gan"
    gen_config: GeneratorConfig
    generator: dict[str, np.ndarray]
    disc_config: DiscriminatorConfig | None = None
    discriminator: dict[str, np.ndarray] | None = None
    opt_g: dict[str, np.ndarray] | None = None
    opt_d: dict[str, np.ndarray] | None = None
    adam_step_g: int = 0
    adam_step_d: int = 0
    train_config: dict | None = None


def state_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    """Module weights as float numpy arrays under the module's dotted names."""
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def adam_arrays(module: torch.nn.Module, opt: torch.optim.Adam) -> tuple[dict[str, np.ndarray], int]:
    """Adam moment arrays keyed by parameter name, plus the shared step count."""
    out: dict[str, np.ndarray] = {}
    step = 0
    for name, param in module.named_parameters():
        state = opt.state.get(param)
        if not state:
            continue
        out[f"{name}.m"] = state["exp_avg"].detach().cpu().numpy().copy()
        out[f"{name}.v"] = state["exp_avg_sq"].detach().cpu().numpy().copy()
        step = int(state["step"])
    return out, step


def restore_adam(module: torch.nn.Module, opt: torch.optim.Adam,
                 arrays: dict[str, np.ndarray], step: int) -> None:
    """Install saved Adam moments so a resumed run continues the trajectory."""
    for name, param in module.named_parameters():
        m = arrays.get(f"{name}.m")
        v = arrays.get(f"{name}.v")
        if m is None or v is None:
            raise CheckpointError(f"missing Adam state for parameter {name!r}")
        opt.state[param] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.from_numpy(m.copy()),
            "exp_avg_sq": torch.from_numpy(v.copy()),
        }


def save(ckpt: Checkpoint, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for key, arr in ckpt.generator.items():
        arrays[f"g.{key}"] = arr
    if ckpt.discriminator is not None:
        for key, arr in ckpt.discriminator.items():
            arrays[f"d.{key}"] = arr
    if ckpt.opt_g is not None:
        for key, arr in ckpt.opt_g.items():
            arrays[f"opt.g.{key}"] = arr
    if ckpt.opt_d is not None:
        for key, arr in ckpt.opt_d.items():
            arrays[f"opt.d.{key}"] = arr
    meta = {
        "format_version": FORMAT_VERSION,
        "step": ckpt.step,
        "stage": ckpt.stage,
        "gen_config": dataclasses.asdict(ckpt.gen_config),
        "disc_config": dataclasses.asdict(ckpt.disc_config) if ckpt.disc_config else None,
        "has_discriminator": ckpt.discriminator is not None,
        "has_opt_g": ckpt.opt_g is not None,
        "has_opt_d": ckpt.opt_d is not None,
        "adam_step_g": ckpt.adam_step_g,
        "adam_step_d": ckpt.adam_step_d,
        "train_config": ckpt.train_config,
    }
    arrays[_META_KEY] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load(path: str | Path) -> Checkpoint:
    try:
        with np.load(path) as zf:
            arrays = {k: zf[k] for k in zf.files}
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if _META_KEY not in arrays:
        raise CheckpointError(f"{path} has no metadata block")
    meta = json.loads(arrays.pop(_META_KEY).tobytes().decode("utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {meta.get('format_version')}"
        )

    def collect(prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

    disc_cfg = meta["disc_config"]
    if disc_cfg is not None:
        disc_cfg["channel_schedule"] = tuple(disc_cfg["channel_schedule"])
    return Checkpoint(
        step=int(meta["step"]),
        stage=meta["stage"],
        gen_config=GeneratorConfig(**meta["gen_config"]),
        generator=collect("g."),
        disc_config=DiscriminatorConfig(**disc_cfg) if disc_cfg else None,
        discriminator=collect("d.") if meta["has_discriminator"] else None,
        opt_g=collect("opt.g.") if meta["has_opt_g"] else None,
        opt_d=collect("opt.d.") if meta["has_opt_d"] else None,
        adam_step_g=int(meta.get("adam_step_g", 0)),
        adam_step_d=int(meta.get("adam_step_d", 0)),
        train_config=meta.get("train_config"),
    )


def _load_state(module: torch.nn.Module, arrays: dict[str, np.ndarray], kind: str) -> None:
    expected = {k: tuple(v.shape) for k, v in module.state_dict().items()}
    got = {k: tuple(v.shape) for k, v in arrays.items()}
    if expected.keys() != got.keys():
        missing = sorted(expected.keys() - got.keys())
        extra = sorted(got.keys() - expected.keys())
        raise CheckpointError(
            f"{kind} weight names do not match: missing {missing}, unexpected {extra}"
        )
    for key in expected:
        if expected[key] != got[key]:
            raise CheckpointError(
                f"{kind} weight {key!r} has shape {got[key]}, expected {expected[key]}"
            )
    module.load_state_dict(
        {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}, strict=True
    )


def build_generator(ckpt: Checkpoint) -> Generator:
    """Instantiate the generator from the config block and load its weights."""
    model = Generator(ckpt.gen_config)
    _load_state(model, ckpt.generator, "generator")
    return model


def build_discriminator(ckpt: Checkpoint) -> Discriminator:
    if ckpt.disc_config is None or ckpt.discriminator is None:
        raise CheckpointError("checkpoint carries no discriminator")
    model = Discriminator(ckpt.disc_config)
    _load_state(model, ckpt.discriminator, "discriminator")
    return model
