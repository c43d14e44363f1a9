"""Joint conditional/unconditional denoiser training with semantic alignment.

Each training sample draws its own step t, noise, and branch coin: with
probability 1 - p_uncon the model sees the one-hot condition and only the
noise MSE is optimized; otherwise the condition is nulled and a cosine
alignment loss between the projected bottleneck and the downscaled semantic
map is added, weighted by lambda = 1 - t/T so alignment fades out at high
noise levels.

All per-step randomness is a pure function of (seed, step index), so resumed
runs continue bit-identically and reruns reproduce the loss trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .denoiser import Denoiser, parameter_tensors, load_parameter_tensors
from .diffusion import NoiseSchedule, q_sample
from .errors import ValidationError
from .formats import Dataset, write_checkpoint, read_checkpoint
from .rng import generator


@dataclass
class TrainConfig:
    p_uncon: float = 0.2
    batch_size: int = 8
    steps: int = 10000
    lr: float = 2e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    sa_enabled: bool = True
    checkpoint_every: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.p_uncon < 1.0:
            raise ValidationError("p_uncon must be in [0, 1)")
        if min(self.batch_size, self.steps, self.checkpoint_every) < 1 or self.lr <= 0:
            raise ValidationError("batch_size, steps, checkpoint_every, lr must be positive")


@dataclass
class LossRecord:
    step: int
    ddpm_loss: float
    sa_loss: float
    lambda_mean: float


@dataclass
class TrainState:
    model: Denoiser
    optimizer: torch.optim.Adam
    step: int = 0
    ddpm_running: float = 0.0
    sa_running: float = 0.0

    def update_running(self, rec: LossRecord, horizon: int = 100):
        w = 1.0 / min(self.step + 1, horizon)
        self.ddpm_running += w * (rec.ddpm_loss - self.ddpm_running)
        self.sa_running += w * (rec.sa_loss - self.sa_running)


def make_state(model: Denoiser, cfg: TrainConfig) -> TrainState:
    opt = torch.optim.Adam(
        model.parameters(), lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps
    )
    return TrainState(model, opt)


def downscale_semantic(onehot: torch.Tensor, factor: int = 4) -> torch.Tensor:
    """Average-pool a (…, K, H, W) one-hot map by the encoder stride.

    Output pixels are probability vectors (they sum to 1 for one-hot input).
    """
    if factor < 1:
        raise ValidationError("factor must be >= 1")
    if onehot.shape[-1] % factor or onehot.shape[-2] % factor:
        raise ValidationError(
            f"H and W must be divisible by {factor}, got {tuple(onehot.shape[-2:])}"
        )
    if factor == 1:
        return onehot
    squeeze = onehot.ndim == 3
    x = onehot[None] if squeeze else onehot
    pooled = F.avg_pool2d(x, factor)
    return pooled[0] if squeeze else pooled


def sa_loss(sem_pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Negative mean per-pixel cosine between prediction and semantic target.

    The denominator is guarded by 1e-8 so zero-vector predictions count as
    cosine 0 instead of dividing by zero.
    """
    if sem_pred.shape != target.shape:
        raise ValidationError(
            f"shape mismatch: {tuple(sem_pred.shape)} vs {tuple(target.shape)}"
        )
    cos = _pixel_cosine(sem_pred, target)
    return -cos.mean()


def _pixel_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # channel axis is -3 for both (K, H, W) and (B, K, H, W)
    dot = (a * b).sum(dim=-3)
    denom = a.norm(dim=-3) * b.norm(dim=-3) + 1e-8
    return dot / denom


def draw_step_randomness(
    seed: int, step: int, batch: int, shape: tuple[int, ...], T: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-step (t, u, eps) draws, a pure function of (seed, step)."""
    rng = generator(seed, "step", step)
    t = rng.integers(1, T + 1, size=batch)
    u = rng.random(batch)
    eps = rng.standard_normal((batch,) + tuple(shape)).astype(np.float32)
    return t, u, eps


def train_step(
    state: TrainState,
    batch: tuple[torch.Tensor, torch.Tensor],
    sched: NoiseSchedule,
    cfg: TrainConfig,
) -> LossRecord:
    """One optimizer update over a (x0, onehot) batch. Returns the loss record."""
    x0, onehot = batch
    if x0.shape[0] != onehot.shape[0]:
        raise ValidationError("x0 and onehot batch sizes differ")
    model = state.model
    b = x0.shape[0]
    t_np, u, eps_np = draw_step_randomness(
        cfg.seed, state.step, b, tuple(x0.shape[1:]), sched.T
    )
    t = torch.from_numpy(t_np)
    eps = torch.from_numpy(eps_np).to(x0.dtype)
    sa_branch = torch.from_numpy(u >= 1.0 - cfg.p_uncon)

    cond = onehot.clone()
    cond[sa_branch] = 0.0
    x_t = q_sample(x0, t, eps, sched)
    out = model(x_t, t, cond)

    mse = ((eps - out.eps) ** 2).reshape(b, -1).mean(dim=1)
    lam = (1.0 - t.to(x0.dtype) / sched.T)
    sa_vals = torch.zeros_like(mse)
    if cfg.sa_enabled and bool(sa_branch.any()):
        target = downscale_semantic(onehot, model.config.downsample_factor)
        cos = _pixel_cosine(out.semantic, target.to(out.semantic.dtype))
        sa_all = -cos.reshape(b, -1).mean(dim=1)
        sa_vals = torch.where(sa_branch, sa_all, torch.zeros_like(sa_all))
    loss = (mse + lam * sa_vals).mean()

    if not torch.isfinite(loss):
        raise RuntimeError(f"non-finite loss at step {state.step}")

    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    state.optimizer.step()

    n_sa = int(sa_branch.sum())
    rec = LossRecord(
        step=state.step,
        ddpm_loss=float(mse.detach().mean()),
        sa_loss=float(sa_vals.detach().sum() / n_sa) if n_sa else 0.0,
        lambda_mean=float(lam[sa_branch].mean()) if n_sa else 0.0,
    )
    state.step += 1
    state.update_running(rec)
    return rec


def batch_indices(seed: int, step: int, n: int, batch: int) -> np.ndarray:
    """Sample indices for one step under per-epoch shuffling.

    The global sample counter step*batch is mapped onto per-epoch Philox
    permutations, so the order is a pure function of (seed, step) and
    resuming at any step continues the identical schedule.
    """
    start = step * batch
    out = np.empty(batch, dtype=np.int64)
    filled = 0
    while filled < batch:
        epoch, offset = divmod(start + filled, n)
        perm = generator(seed, "shuffle", epoch).permutation(n)
        take = min(batch - filled, n - offset)
        out[filled : filled + take] = perm[offset : offset + take]
        filled += take
    return out


class ArrayDataset:
    """In-memory dataset of range/label grids with batch assembly."""

    def __init__(
        self,
        ranges: np.ndarray,
        labels: np.ndarray,
        num_classes: int,
        r_max: float,
    ):
        if ranges.shape != labels.shape or ranges.ndim != 3:
            raise ValidationError("ranges and labels must be (N, H, W)")
        if len(ranges) == 0:
            raise ValidationError("dataset is empty")
        self.ranges = np.asarray(ranges, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int32)
        self.num_classes = num_classes
        self.r_max = float(r_max)

    @classmethod
    def from_dataset(cls, ds: Dataset, r_max: float) -> "ArrayDataset":
        if len(ds) == 0:
            raise ValidationError(f"{ds.dir}: dataset is empty")
        pairs = [ds.load_arrays(i) for i in range(len(ds))]
        return cls(
            np.stack([p[0] for p in pairs]),
            np.stack([p[1] for p in pairs]),
            ds.num_classes,
            r_max,
        )

    def __len__(self) -> int:
        return len(self.ranges)

    def batch(self, indices: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
        """(x0 (B,2,H,W), onehot (B,K,H,W)) float32 tensors for the indices."""
        r = self.ranges[indices].astype(np.float64)
        valid = r > 0
        c0 = np.where(valid, 2.0 * r / self.r_max - 1.0, -1.0)
        c1 = np.where(valid, 1.0, -1.0)
        x0 = np.stack([c0, c1], axis=1).astype(np.float32)
        lab = self.labels[indices]
        k = np.arange(self.num_classes, dtype=np.int32)
        onehot = (lab[:, None, :, :] == k[None, :, None, None]).astype(np.float32)
        return torch.from_numpy(x0), torch.from_numpy(onehot)


def _scalar(arr: np.ndarray) -> float:
    return float(np.asarray(arr).reshape(-1)[0])


def checkpoint_tensors(state: TrainState) -> dict[str, np.ndarray]:
    tensors = {
        f"model.{k}": v for k, v in parameter_tensors(state.model).items()
    }
    for name, p in state.model.named_parameters():
        st = state.optimizer.state.get(p)
        if not st:
            continue
        tensors[f"opt.{name}.exp_avg"] = st["exp_avg"].numpy().astype(np.float32)
        tensors[f"opt.{name}.exp_avg_sq"] = st["exp_avg_sq"].numpy().astype(np.float32)
        tensors[f"opt.{name}.step"] = np.asarray(float(st["step"]), dtype=np.float32)
    tensors["train.step"] = np.asarray(float(state.step), dtype=np.float32)
    return tensors


def save_train_checkpoint(path: str | Path, digest: int, state: TrainState) -> None:
    write_checkpoint(path, digest, checkpoint_tensors(state))


def restore_train_state(
    state: TrainState, tensors: dict[str, np.ndarray]
) -> TrainState:
    load_parameter_tensors(
        state.model,
        {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")},
    )
    for name, p in state.model.named_parameters():
        key = f"opt.{name}.exp_avg"
        if key not in tensors:
            continue
        state.optimizer.state[p] = {
            "step": torch.tensor(_scalar(tensors[f"opt.{name}.step"])),
            "exp_avg": torch.from_numpy(tensors[key].copy()),
            "exp_avg_sq": torch.from_numpy(tensors[f"opt.{name}.exp_avg_sq"].copy()),
        }
    state.step = int(_scalar(tensors["train.step"]))
    return state


CSV_HEADER = "step,ddpm_loss,sa_loss,lambda_mean"


def fit(
    data: ArrayDataset,
    model: Denoiser,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    out_dir: str | Path,
    digest: int,
    config_echo: str | None = None,
    resume: bool = False,
    log_fn=None,
) -> Path:
    """Run the optimizer loop; returns the checkpoint path.

    Writes checkpoint.sgc (periodically and at the end), loss.csv, and the
    config echo sidecar. On divergence the last good checkpoint stays on
    disk and a RuntimeError propagates.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.sgc"
    csv_path = out_dir / "loss.csv"

    state = make_state(model, cfg)
    if resume:
        saved_digest, tensors = read_checkpoint(ckpt_path)
        if saved_digest != digest:
            raise ValidationError(
                f"{ckpt_path}: config digest mismatch "
                f"({saved_digest:#x} != {digest:#x})"
            )
        restore_train_state(state, tensors)
    if config_echo is not None:
        Path(str(ckpt_path) + ".json").write_text(config_echo)

    mode = "a" if (resume and csv_path.exists()) else "w"
    with open(csv_path, mode) as csv:
        if mode == "w":
            csv.write(CSV_HEADER + "\n")
        while state.step < cfg.steps:
            idx = batch_indices(cfg.seed, state.step, len(data), cfg.batch_size)
            try:
                rec = train_step(state, data.batch(idx), sched, cfg)
            except RuntimeError:
                csv.flush()
                raise
            csv.write(
                f"{rec.step},{rec.ddpm_loss!r},{rec.sa_loss!r},{rec.lambda_mean!r}\n"
            )
            if log_fn is not None and (
                state.step % 100 == 0 or state.step == cfg.steps
            ):
                log_fn(state)
            if state.step % cfg.checkpoint_every == 0 or state.step == cfg.steps:
                csv.flush()
                save_train_checkpoint(ckpt_path, digest, state)
    return ckpt_path
