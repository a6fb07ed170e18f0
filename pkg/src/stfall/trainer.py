"""Adversarial one-class training of an autoencoder against a discriminator.

Each batch takes one discriminator step and then one generator step:

* discriminator: binary cross-entropy, originals labelled real and
  (detached) reconstructions labelled fake; plain SGD.
* generator: reconstruction loss + ``lam`` * adversarial loss; Adadelta.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import __version__
from .ingest import FrameSequence, InputError, make_windows
from .nets import FAMILIES, ModelHandle, NetworkSpec, SpecNet, build_family

log = logging.getLogger(__name__)

EPS = 1e-7
HISTORY_COLUMNS = ("epoch", "recon_loss", "gen_adv_loss", "disc_loss", "d_real", "d_fake")
COLLAPSE_LEVEL = 0.95
COLLAPSE_PATIENCE = 10


class PreconditionError(ValueError):
    """Training data violates the one-class (ADL only) contract."""


@dataclass(frozen=True)
class TrainConfig:
    family: str = "3dcae-an"
    T: int = 8
    stride: int = 1
    lam: float = 1.0
    disc_lr: float = 2e-4
    max_epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    width: float = 1.0            # channel multiplier; 1.0 = reference architecture
    checkpoint_every: int = 50
    adversarial_form: str = "non_saturating"  # or "saturating"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")
        if self.T < 1 or self.stride < 1 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("T, stride and batch_size must be positive, max_epochs non-negative")
        if self.width <= 0:
            raise ValueError("width must be positive")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be positive")
        if self.adversarial_form not in ("non_saturating", "saturating"):
            raise ValueError("adversarial_form must be 'non_saturating' or 'saturating'")

    @property
    def windowed(self) -> bool:
        return self.family == "3dcae-an"

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EpochRecord:
    epoch: int
    recon_loss: float
    gen_adv_loss: float
    disc_loss: float
    d_real: float
    d_fake: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    disc_steps: int = 0
    gen_steps: int = 0
    collapse_warned: bool = False

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]

    def write_csv(self, path) -> None:
        """Loss columns only; wall-clock time goes to :meth:`write_timing`."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:]])

    def write_timing(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, f"{r.seconds:.3f}"])


# --------------------------------------------------------------------------
# losses


def reconstruction_loss(inputs: torch.Tensor, outputs: torch.Tensor) -> torch.Tensor:
    """Batch mean of the per-sample summed squared error."""
    if inputs.shape != outputs.shape:
        raise InputError(f"shape mismatch: {tuple(inputs.shape)} vs {tuple(outputs.shape)}")
    return (inputs - outputs).pow(2).flatten(1).sum(dim=1).mean()


def adversarial_losses(d_real: torch.Tensor, d_fake: torch.Tensor,
                       form: str = "non_saturating") -> tuple[torch.Tensor, torch.Tensor]:
    """(discriminator loss, generator adversarial loss) from discriminator probabilities."""
    d_real = d_real.clamp(EPS, 1 - EPS)
    d_fake = d_fake.clamp(EPS, 1 - EPS)
    disc = -torch.log(d_real).mean() - torch.log1p(-d_fake).mean()
    if form == "non_saturating":
        gen = -torch.log(d_fake).mean()
    else:
        gen = torch.log1p(-d_fake).mean()
    return disc, gen


def generator_objective(gen: ModelHandle, disc: ModelHandle, x: torch.Tensor, lam: float,
                        form: str = "non_saturating"):
    """Return (total, reconstruction term, adversarial term, reconstruction)."""
    recon = gen(x)
    l_r = reconstruction_loss(x, recon)
    _, adv = adversarial_losses(torch.ones(1, dtype=x.dtype), disc(recon), form)
    return l_r + lam * adv, l_r, adv, recon


# --------------------------------------------------------------------------
# data


@dataclass
class _Units:
    """Training units (windows or single frames) addressed lazily."""

    sources: list[np.ndarray]
    index: np.ndarray  # (K, 2): source, start
    length: int        # frames per unit; 0 means a bare frame

    def __len__(self) -> int:
        return len(self.index)

    def gather(self, ids: np.ndarray) -> np.ndarray:
        if self.length:
            return np.stack([self.sources[s][t:t + self.length] for s, t in self.index[ids]])
        return np.stack([self.sources[s][t] for s, t in self.index[ids]])


def _training_units(data: Sequence[FrameSequence], cfg: TrainConfig) -> _Units:
    if not data:
        raise InputError("no training data")
    for seq in data:
        if seq.has_falls:
            raise PreconditionError(f"{seq.video_id}: training data contains fall frames")
    sources, index = [], []
    for k, seq in enumerate(data):
        sources.append(seq.frames)
        if cfg.windowed:
            ws = make_windows(seq, cfg.T, cfg.stride)
            index += [(k, int(s)) for s in ws.window_start]
        else:
            index += [(k, j) for j in range(len(seq))]
    return _Units(sources, np.asarray(index, dtype=np.int64), cfg.T if cfg.windowed else 0)


# --------------------------------------------------------------------------
# checkpoints


def _atomic_torch_save(obj, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    torch.save(obj, tmp)
    os.replace(tmp, path)


def _atomic_json(obj, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def model_hash(handle: ModelHandle) -> str:
    h = hashlib.sha256()
    for name, t in sorted(handle.module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()[:16]


def save_models(out_dir, gen: ModelHandle, disc: ModelHandle, cfg: TrainConfig,
                history: Optional[TrainHistory] = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_torch_save(gen.module.state_dict(), out_dir / "generator.pt")
    _atomic_torch_save(disc.module.state_dict(), out_dir / "discriminator.pt")
    meta = {
        "family": cfg.family,
        "train_config": asdict(cfg),
        "config_hash": cfg.config_hash(),
        "generator": {"spec": gen.spec.to_dict(), "seed": gen.seed, "hash": model_hash(gen)},
        "discriminator": {"spec": disc.spec.to_dict(), "seed": disc.seed, "hash": model_hash(disc)},
        "epochs_completed": len(history.records) if history else None,
        "version": __version__,
    }
    _atomic_json(meta, out_dir / "model.json")
    return meta


def load_models(model_dir) -> tuple[ModelHandle, ModelHandle, TrainConfig]:
    model_dir = Path(model_dir)
    meta_path = model_dir / "model.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"missing model metadata: {meta_path}")
    meta = json.loads(meta_path.read_text())
    cfg = TrainConfig(**meta["train_config"])
    handles = []
    for role in ("generator", "discriminator"):
        spec = NetworkSpec.from_dict(meta[role]["spec"])
        weights = model_dir / f"{role}.pt"
        if not weights.is_file():
            raise FileNotFoundError(f"missing weights: {weights}")
        module = SpecNet(spec)
        module.load_state_dict(torch.load(weights, weights_only=True))
        module.eval()
        handles.append(ModelHandle(spec, module, meta[role]["seed"], {"hash": meta[role]["hash"]}))
    return handles[0], handles[1], cfg


# --------------------------------------------------------------------------
# training loop


def train(data: Sequence[FrameSequence], cfg: TrainConfig, out_dir=None,
          on_batch: Optional[Callable[[dict], None]] = None,
          models: Optional[tuple[ModelHandle, ModelHandle]] = None,
          ) -> tuple[ModelHandle, ModelHandle, TrainHistory]:
    """Train a (generator, discriminator) pair on ADL-only sequences.

    ``on_batch`` receives a dict with the scalar losses of every stepped
    batch. When ``out_dir`` is given, checkpoints are written every
    ``cfg.checkpoint_every`` epochs, and the final weights, ``model.json``
    and ``history.csv`` at the end.
    """
    units = _training_units(data, cfg)
    if models is None:
        gen, disc = build_family(cfg.family, cfg.seed, cfg.width, cfg.T)
    else:
        gen, disc = models
    gen_opt = torch.optim.Adadelta(gen.module.parameters())
    disc_opt = torch.optim.SGD(disc.module.parameters(), lr=cfg.disc_lr)
    dtype = next(gen.module.parameters()).dtype

    history = TrainHistory()
    ckpt_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    collapse_run = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        gen.module.train()
        disc.module.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(units))
        sums = dict.fromkeys(("recon_loss", "gen_adv_loss", "disc_loss", "d_real", "d_fake"), 0.0)
        n_batches = 0
        for b in range(0, len(order), cfg.batch_size):
            ids = order[b:b + cfg.batch_size]
            if len(ids) < 2 and len(order) > 1:
                # batch norm needs two samples; fold a lone straggler away
                continue
            x = torch.from_numpy(units.gather(ids)).to(dtype)

            recon = gen(x)
            d_real = disc(x)
            d_fake = disc(recon.detach())
            disc_loss, _ = adversarial_losses(d_real, d_fake, cfg.adversarial_form)
            disc_opt.zero_grad()
            disc_loss.backward()
            disc_opt.step()
            history.disc_steps += 1

            l_r = reconstruction_loss(x, recon)
            _, adv = adversarial_losses(torch.ones(1, dtype=dtype), disc(recon), cfg.adversarial_form)
            total = l_r + cfg.lam * adv
            gen_opt.zero_grad()
            total.backward()
            gen_opt.step()
            history.gen_steps += 1

            stats = {
                "epoch": epoch, "batch": n_batches, "recon_loss": l_r.item(),
                "gen_adv_loss": adv.item(), "gen_loss": total.item(), "disc_loss": disc_loss.item(),
                "d_real": d_real.mean().item(), "d_fake": d_fake.mean().item(), "lam": cfg.lam,
            }
            if on_batch is not None:
                on_batch(stats)
            for k in sums:
                sums[k] += stats[k]
            n_batches += 1

        means = {k: v / max(n_batches, 1) for k, v in sums.items()}
        rec = EpochRecord(epoch=epoch, seconds=time.perf_counter() - t0, **means)
        history.records.append(rec)
        log.info("epoch %d  L_R=%.4f  adv=%.4f  disc=%.4f  D(x)=%.3f  D(R(x))=%.3f",
                 epoch, rec.recon_loss, rec.gen_adv_loss, rec.disc_loss, rec.d_real, rec.d_fake)

        collapse_run = collapse_run + 1 if rec.d_fake > COLLAPSE_LEVEL else 0
        if collapse_run >= COLLAPSE_PATIENCE and not history.collapse_warned:
            history.collapse_warned = True
            warnings.warn(
                f"D(R(x)) above {COLLAPSE_LEVEL} for {COLLAPSE_PATIENCE} consecutive epochs "
                f"(epoch {epoch}); possible mode collapse, consider a smaller lambda",
                RuntimeWarning, stacklevel=2,
            )

        if ckpt_dir is not None and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.max_epochs):
            _atomic_torch_save(
                {"epoch": epoch, "generator": gen.module.state_dict(),
                 "discriminator": disc.module.state_dict()},
                ckpt_dir / f"epoch_{epoch:04d}.pt",
            )

    if out_dir is not None:
        save_models(out_dir, gen, disc, cfg, history)
        history.write_csv(out_dir / "history.csv")
        history.write_timing(out_dir / "timing.csv")
    gen.module.eval()
    disc.module.eval()
    return gen, disc, history
