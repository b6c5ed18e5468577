"""Synthetic pixel-regression benchmark: datasets, a small residual net,
training, and A/B comparison between attention variants.

Determinism contract: everything is derived from the run seed through named
RNG streams.  Parameter values depend only on (seed, parameter name), so a
baseline net and an attention-augmented net built from the same seed share
bit-identical weights for their common layers; datasets depend only on
(seed, dataset role), so all variants see identical data.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import core, cost
from .attention import ATTENTION_KINDS, make_attention
from .core import ParamInit, Tape, Tensor
from .cost import ConfigError

VARIANTS = ("baseline",) + ATTENTION_KINDS


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    task: str = "heatmap"            # heatmap (MSE + PCK) | mask (BCE + mIoU)
    variant: str = "baseline"        # baseline or an attention kind
    seed: int = 0
    image_size: int = 24
    keypoints: int = 4
    sigma: float = 1.5
    decoys: int = 3
    noise: float = 0.05
    classes: int = 3
    max_shapes: int = 4
    train_samples: int = 512
    val_samples: int = 128
    width: int = 16
    depth: int = 3
    epochs: int = 10
    batch_size: int = 8
    lr: float = 2e-3
    optimizer: str = "adam"          # adam | sgd
    pck_radius: int = 2

    def validate(self) -> "TrainConfig":
        if self.task not in ("heatmap", "mask"):
            raise ConfigError(f"task must be heatmap or mask, got {self.task!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        positive = ["image_size", "keypoints", "sigma", "classes", "max_shapes",
                    "train_samples", "val_samples", "width", "depth", "epochs",
                    "batch_size", "lr"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise < 0 or self.decoys < 0 or self.pck_radius < 0:
            raise ConfigError("noise, decoys and pck_radius must be non-negative")
        margin = int(math.ceil(2 * self.sigma))
        if self.image_size <= 2 * margin + 1:
            raise ConfigError(
                f"image_size {self.image_size} too small for sigma {self.sigma} "
                f"(needs > {2 * margin + 1})"
            )
        return self


@dataclass
class Sample:
    image: np.ndarray                 # [3,H,W] in [0,1]
    target: np.ndarray                # [K,H,W]
    keypoints: np.ndarray | None = None  # [K,2] integer (row, col)


_PALETTE = np.array([
    [0.95, 0.25, 0.20],
    [0.20, 0.80, 0.30],
    [0.25, 0.35, 0.95],
    [0.90, 0.80, 0.20],
    [0.80, 0.25, 0.85],
    [0.20, 0.85, 0.85],
    [0.95, 0.55, 0.20],
    [0.60, 0.95, 0.40],
])


def _blob(size: int, row: float, col: float, sig: float) -> np.ndarray:
    rr = np.arange(size)[:, None]
    cc = np.arange(size)[None, :]
    return np.exp(-((rr - row) ** 2 + (cc - col) ** 2) / (2.0 * sig * sig))


def gen_keypoint_dataset(n: int, image_size: int, keypoints: int, sigma: float,
                         seed: int, decoys: int = 3, noise: float = 0.05) -> list[Sample]:
    """Colored-blob keypoint images with per-keypoint Gaussian heatmaps.

    Every keypoint owns a palette color and one target map whose peak value
    is exactly 1 at the (integer) keypoint pixel.  Decoy blobs in blended
    off-palette colors add clutter that local filters cannot simply key on.
    """
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 101])
    margin = int(math.ceil(2 * sigma))
    lo, hi = margin, image_size - 1 - margin
    samples = []
    for _ in range(n):
        img = np.zeros((3, image_size, image_size))
        kps = np.zeros((keypoints, 2), dtype=np.int64)
        target = np.zeros((keypoints, image_size, image_size))
        for k in range(keypoints):
            r = int(rng.integers(lo, hi + 1))
            c = int(rng.integers(lo, hi + 1))
            kps[k] = (r, c)
            target[k] = _blob(image_size, r, c, sigma)
            color = _PALETTE[k % len(_PALETTE)]
            img += color[:, None, None] * _blob(image_size, r, c, sigma)
        for _ in range(decoys):
            r, c = rng.uniform(0, image_size - 1, size=2)
            pair = rng.choice(len(_PALETTE), size=2, replace=False)
            color = 0.5 * (_PALETTE[pair[0]] + _PALETTE[pair[1]])
            amp = rng.uniform(0.6, 1.0)
            img += amp * color[:, None, None] * _blob(image_size, r, c, sigma)
        img += rng.uniform(0.0, noise, size=img.shape)
        samples.append(Sample(np.clip(img, 0.0, 1.0), target, kps))
    return samples


def gen_mask_dataset(n: int, image_size: int, classes: int, seed: int,
                     max_shapes: int = 4, noise: float = 0.05) -> list[Sample]:
    """Random disks/rectangles, one class each, painter's order; the target
    is a one-hot stack (a pixel belongs to the last shape drawn on it)."""
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 202])
    samples = []
    for _ in range(n):
        owner = np.zeros((image_size, image_size), dtype=np.int64)  # 0 = background
        n_shapes = int(rng.integers(1, max_shapes + 1))
        for _ in range(n_shapes):
            cls = int(rng.integers(1, classes + 1))
            if rng.uniform() < 0.5:
                r, c = rng.uniform(2, image_size - 3, size=2)
                rad = rng.uniform(2, image_size / 3)
                rr = np.arange(image_size)[:, None]
                cc = np.arange(image_size)[None, :]
                inside = (rr - r) ** 2 + (cc - c) ** 2 <= rad * rad
            else:
                r0, c0 = rng.integers(0, image_size - 2, size=2)
                r1 = int(rng.integers(r0 + 1, image_size))
                c1 = int(rng.integers(c0 + 1, image_size))
                inside = np.zeros((image_size, image_size), dtype=bool)
                inside[r0:r1 + 1, c0:c1 + 1] = True
            owner[inside] = cls
        target = np.stack([(owner == c + 1).astype(np.float64) for c in range(classes)])
        img = np.full((3, image_size, image_size), 0.1)
        for c in range(classes):
            color = _PALETTE[c % len(_PALETTE)]
            img += color[:, None, None] * target[c]
        img += rng.uniform(0.0, noise, size=img.shape)
        samples.append(Sample(np.clip(img, 0.0, 1.0), target, None))
    return samples


# ---------------------------------------------------------------------------
# toy network


class ToyNet:
    """3x3 stem -> `depth` basic residual blocks -> 1x1 head.

    An attention block (if any) sits after the first 3x3 convolution of every
    residual block, before its relu.
    """

    def __init__(self, width: int, depth: int, out_channels: int, seed: int,
                 variant: str = "baseline", in_channels: int = 3):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        init = ParamInit(seed)
        self.width = width
        self.depth = depth
        self.out_channels = out_channels
        self.in_channels = in_channels
        self.variant = variant
        self._params: list[core.Parameter] = []

        def conv_p(name, c_out, c_in, k):
            w = init.conv_weight(f"{name}.w", (c_out, c_in, k, k), fan_in=c_in * k * k)
            b = init.zeros(f"{name}.b", (c_out,))
            self._params.extend([w, b])
            return w, b

        self.stem = conv_p("stem", width, in_channels, 3)
        self.blocks = []
        for i in range(depth):
            conv1 = conv_p(f"block{i}.conv1", width, width, 3)
            conv2 = conv_p(f"block{i}.conv2", width, width, 3)
            attn = None
            if variant != "baseline":
                attn = make_attention(variant, width, init, prefix=f"block{i}.attn")
                self._params.extend(attn.parameters())
            self.blocks.append((conv1, conv2, attn))
        wh = init.conv_weight("head.w", (out_channels, width), fan_in=width)
        bh = init.zeros("head.b", (out_channels,))
        self._params.extend([wh, bh])
        self.head = (wh, bh)

    def parameters(self) -> list[core.Parameter]:
        return list(self._params)

    def n_params(self) -> int:
        return sum(p.value.data.size for p in self._params)

    def forward(self, x: Tensor) -> Tensor:
        w, b = self.stem
        h = core.relu(core.conv2d(x, w.value, b.value, stride=1, pad=1))
        for (w1, b1), (w2, b2), attn in self.blocks:
            y = core.conv2d(h, w1.value, b1.value, stride=1, pad=1)
            if attn is not None:
                y = attn.forward(y)
            y = core.relu(y)
            y = core.conv2d(y, w2.value, b2.value, stride=1, pad=1)
            h = core.relu(core.add(y, h))
        wh, bh = self.head
        return core.conv1x1(h, wh.value, bh.value)

    def descriptor(self, image_size: int) -> cost.ModelDescriptor:
        return cost.toy_net_descriptor(
            width=self.width, depth=self.depth, in_channels=self.in_channels,
            out_channels=self.out_channels, image_size=image_size,
            attention=None if self.variant == "baseline" else self.variant,
        )


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, params: list[core.Parameter], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.value.data -= self.lr * p.grad


class Adam:
    def __init__(self, params: list[core.Parameter], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.value.shape) for p in params]
        self.v = [np.zeros(p.value.shape) for p in params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** self.t)
            vhat = self.v[i] / (1 - self.b2 ** self.t)
            p.value.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, params: list[core.Parameter], lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ConfigError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# metrics


def pck_at_r(pred_maps: np.ndarray, keypoints: np.ndarray, radius: float) -> float:
    """Fraction of maps whose argmax lies within Euclidean `radius` of the
    true keypoint."""
    k = pred_maps.shape[0]
    hits = 0
    for i in range(k):
        flat = int(np.argmax(pred_maps[i]))
        r, c = divmod(flat, pred_maps.shape[2])
        dr, dc = r - keypoints[i, 0], c - keypoints[i, 1]
        if math.hypot(dr, dc) <= radius:
            hits += 1
    return hits / k


def mean_iou(pred_logits: np.ndarray, target: np.ndarray) -> float:
    """Mean over classes of intersection-over-union at threshold 0.5 on the
    sigmoid (ties count as foreground); classes with an empty union are
    skipped; returns 1.0 if every class is skipped."""
    ious = []
    for c in range(target.shape[0]):
        pred = pred_logits[c] >= 0.0  # sigmoid(z) >= 0.5  <=>  z >= 0
        true = target[c] >= 0.5
        union = np.logical_or(pred, true).sum()
        if union == 0:
            continue
        inter = np.logical_and(pred, true).sum()
        ious.append(inter / union)
    return float(np.mean(ious)) if ious else 1.0


# ---------------------------------------------------------------------------
# training


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    val_loss: float
    metric: float

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "metric": self.metric,
        }


@dataclass
class TrainResult:
    config: TrainConfig
    history: list[MetricsRecord]
    net: ToyNet
    train_data: list[Sample] = field(repr=False, default_factory=list)
    val_data: list[Sample] = field(repr=False, default_factory=list)

    @property
    def final(self) -> MetricsRecord:
        return self.history[-1]


def _make_datasets(cfg: TrainConfig) -> tuple[list[Sample], list[Sample]]:
    if cfg.task == "heatmap":
        train = gen_keypoint_dataset(cfg.train_samples, cfg.image_size, cfg.keypoints,
                                     cfg.sigma, seed=cfg.seed, decoys=cfg.decoys,
                                     noise=cfg.noise)
        val = gen_keypoint_dataset(cfg.val_samples, cfg.image_size, cfg.keypoints,
                                   cfg.sigma, seed=cfg.seed + 7919, decoys=cfg.decoys,
                                   noise=cfg.noise)
    else:
        train = gen_mask_dataset(cfg.train_samples, cfg.image_size, cfg.classes,
                                 seed=cfg.seed, max_shapes=cfg.max_shapes, noise=cfg.noise)
        val = gen_mask_dataset(cfg.val_samples, cfg.image_size, cfg.classes,
                               seed=cfg.seed + 7919, max_shapes=cfg.max_shapes,
                               noise=cfg.noise)
    return train, val


def _sample_loss(net: ToyNet, sample: Sample, task: str) -> Tensor:
    pred = net.forward(Tensor(sample.image))
    target = Tensor(sample.target)
    if task == "heatmap":
        return core.mse_loss(pred, target)
    return core.bce_with_logits(pred, target)


def _evaluate(net: ToyNet, data: list[Sample], cfg: TrainConfig) -> tuple[float, float]:
    """Mean loss and task metric over a dataset, without recording."""
    losses, metrics = [], []
    for sample in data:
        pred = net.forward(Tensor(sample.image))
        if cfg.task == "heatmap":
            losses.append(float(np.mean((pred.data - sample.target) ** 2)))
            metrics.append(pck_at_r(pred.data, sample.keypoints, cfg.pck_radius))
        else:
            z = pred.data
            per = np.maximum(z, 0.0) - z * sample.target + np.log1p(np.exp(-np.abs(z)))
            losses.append(float(per.mean()))
            metrics.append(mean_iou(pred.data, sample.target))
    return float(np.mean(losses)), float(np.mean(metrics))


def train(cfg: TrainConfig, epoch_callback=None) -> TrainResult:
    """Run one training job; raises TrainingDiverged on non-finite loss."""
    cfg.validate()
    out_ch = cfg.keypoints if cfg.task == "heatmap" else cfg.classes
    net = ToyNet(cfg.width, cfg.depth, out_ch, seed=cfg.seed, variant=cfg.variant)
    train_data, val_data = _make_datasets(cfg)
    opt = make_optimizer(cfg.optimizer, net.parameters(), cfg.lr)

    history: list[MetricsRecord] = []
    n = len(train_data)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed & 0xFFFFFFFF, 303, epoch]).permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            batch = [train_data[i] for i in order[start:start + cfg.batch_size]]
            for p in net.parameters():
                p.zero_grad()
            with Tape() as tape:
                total = _sample_loss(net, batch[0], cfg.task)
                for sample in batch[1:]:
                    total = core.add(total, _sample_loss(net, sample, cfg.task))
                loss = core.scale(total, 1.0 / len(batch))
            value = float(loss.data[0])
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite training loss at epoch {epoch}, batch start {start}"
                )
            tape.backward(loss)
            opt.step()
            epoch_losses.append(value)
        val_loss, metric = _evaluate(net, val_data, cfg)
        rec = MetricsRecord(epoch=epoch, train_loss=float(np.mean(epoch_losses)),
                            val_loss=val_loss, metric=metric)
        history.append(rec)
        if epoch_callback is not None:
            epoch_callback(rec)
    return TrainResult(config=cfg, history=history, net=net,
                       train_data=train_data, val_data=val_data)


# ---------------------------------------------------------------------------
# A/B comparison


@dataclass
class ABResult:
    rows: list[dict]
    summary: dict

    def to_json_dict(self) -> dict:
        return {"rows": self.rows, "summary": self.summary}


def ab_compare(cfg_a: TrainConfig, cfg_b: TrainConfig, seeds: list[int],
               progress=None) -> ABResult:
    """Train both configs across seeds and compare medians.

    The two configs must be identical apart from the attention variant.
    """
    da, db = dataclasses.asdict(cfg_a), dataclasses.asdict(cfg_b)
    da.pop("variant"), db.pop("variant")
    if da != db:
        diff = [k for k in da if da[k] != db[k]]
        raise ConfigError(f"configs differ beyond the variant field: {diff}")
    if not seeds:
        raise ConfigError("need at least one seed")

    rows = []
    for seed in seeds:
        for cfg in (cfg_a, cfg_b):
            run_cfg = dataclasses.replace(cfg, seed=seed)
            result = train(run_cfg)
            row = {
                "seed": seed,
                "variant": cfg.variant,
                "val_loss": result.final.val_loss,
                "metric": result.final.metric,
            }
            rows.append(row)
            if progress is not None:
                progress(row)

    def med(variant, key):
        return float(np.median([r[key] for r in rows if r["variant"] == variant]))

    summary = {
        "seeds": list(seeds),
        "variant_a": cfg_a.variant,
        "variant_b": cfg_b.variant,
        "median_val_loss_a": med(cfg_a.variant, "val_loss"),
        "median_val_loss_b": med(cfg_b.variant, "val_loss"),
        "median_metric_a": med(cfg_a.variant, "metric"),
        "median_metric_b": med(cfg_b.variant, "metric"),
    }
    summary["val_loss_improvement"] = summary["median_val_loss_a"] - summary["median_val_loss_b"]
    summary["metric_gain"] = summary["median_metric_b"] - summary["median_metric_a"]
    return ABResult(rows=rows, summary=summary)
