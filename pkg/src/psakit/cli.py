"""Command surface: config parsing, weights container, metrics stream, CLI.

Subcommands
-----------
- ``gradcheck``   run the finite-difference gradient suite; exit 0 only if
  every primitive and every attention block passes the 1e-4 bound.
- ``cost``        cost reports for a single block (``--kind``), a model
  (``--model``), or scaling exponents over a size grid (``--grid``).
- ``train``       train one toy network from a JSON config.
- ``compare``     multi-seed A/B comparison between two variants.
- ``descriptors`` list or dump the built-in model descriptors.

Exit codes: 0 success, 1 a check or run failed, 2 usage/config error.

Config files are JSON objects. Unknown keys are rejected; missing keys take
defaults. Every parse error carries a machine-readable ``code``
("malformed-json", "unknown-key", "out-of-range") plus a human message.

Weights container (extension ``.psaw``), all integers little-endian:

    magic   4 bytes  b"PSAW"
    version u32      currently 1
    count   u32      number of entries
    entry   repeated:
        name_len u32, name UTF-8
        dtype    u8   0 = float64 (the only code)
        rank     u8
        dims     u64 * rank
        payload  raw little-endian float64, 8 * prod(dims) bytes

Load errors (each with its own ``code``): bad magic, version above the
supported one, truncated payload, and — when binding to a network — a
name or shape mismatch naming the offending entry. All file writes go
through a temp file in the same directory followed by an atomic rename.

The environment variable ``PSA_SEED`` overrides the config seed (an
explicit ``--seed`` flag still wins over both).
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import os
import struct
import sys
import tempfile
import time

import numpy as np

from . import core, cost, figures, harness
from .attention import ATTENTION_KINDS, make_attention
from .core import ParamInit, Tensor, finite_diff_gradcheck
from .harness import TrainConfig, TrainingDiverged

GRADCHECK_TOL = 1e-4
WEIGHTS_MAGIC = b"PSAW"
WEIGHTS_VERSION = 1


class ConfigParseError(ValueError):
    """Config rejection with a machine-readable ``code`` and a human message."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class WeightsFormatError(ValueError):
    """Weights-container rejection with a machine-readable ``code``."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config parsing


@dataclasses.dataclass
class RunConfig:
    """Everything a train or compare run needs, beyond command-line flags."""

    train: TrainConfig
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    variant_a: str = "baseline"
    variant_b: str = "psa-parallel"
    out: str | None = None


_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_EXTRA_KEYS = {"seeds", "variant_a", "variant_b", "out"}


def parse_config(text: str) -> RunConfig:
    """Parse a JSON config into a RunConfig, filling defaults.

    Raises ConfigParseError with code "malformed-json" (not JSON / not an
    object), "unknown-key" (naming the key), or "out-of-range" (bad type or
    value, including everything TrainConfig.validate rejects).
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError("malformed-json", f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigParseError(
            "malformed-json", f"config must be a JSON object, got {type(raw).__name__}"
        )
    for key in raw:
        if key not in _TRAIN_KEYS and key not in _EXTRA_KEYS:
            raise ConfigParseError("unknown-key", f"unknown config key: {key!r}")

    train_kwargs = {k: v for k, v in raw.items() if k in _TRAIN_KEYS}
    try:
        train_cfg = TrainConfig(**train_kwargs)
        train_cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigParseError("out-of-range", f"bad config value: {exc}") from exc

    seeds = raw.get("seeds", (0, 1, 2, 3, 4))
    if (
        not isinstance(seeds, (list, tuple))
        or len(seeds) == 0
        or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds)
    ):
        raise ConfigParseError("out-of-range", f"seeds must be a non-empty list of ints: {seeds!r}")
    variant_a = raw.get("variant_a", "baseline")
    variant_b = raw.get("variant_b", "psa-parallel")
    for name, value in (("variant_a", variant_a), ("variant_b", variant_b)):
        if value not in harness.VARIANTS:
            raise ConfigParseError("out-of-range", f"{name} must be one of {harness.VARIANTS}, got {value!r}")
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigParseError("out-of-range", f"out must be a string path, got {out!r}")
    return RunConfig(train=train_cfg, seeds=tuple(seeds), variant_a=variant_a,
                     variant_b=variant_b, out=out)


# ---------------------------------------------------------------------------
# atomic writes and the weights container


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def pack_weights(arrays: dict[str, np.ndarray]) -> bytes:
    """Serialize named float64 arrays to the container byte format."""
    chunks = [WEIGHTS_MAGIC, struct.pack("<I", WEIGHTS_VERSION), struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BB", 0, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes(order="C"))
    return b"".join(chunks)


def unpack_weights(payload: bytes) -> dict[str, np.ndarray]:
    """Parse container bytes back into an ordered name -> array mapping."""
    view = memoryview(payload)
    offset = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal offset
        if offset + n > len(view):
            raise WeightsFormatError(
                "truncated", f"container truncated reading {what}: "
                f"need {n} bytes at offset {offset}, have {len(view) - offset}"
            )
        piece = view[offset:offset + n]
        offset += n
        return piece

    magic = bytes(take(4, "magic"))
    if magic != WEIGHTS_MAGIC:
        raise WeightsFormatError("bad-magic", f"not a weights container (magic {magic!r})")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version > WEIGHTS_VERSION:
        raise WeightsFormatError(
            "unsupported-version",
            f"container version {version} is newer than supported version {WEIGHTS_VERSION}",
        )
    (count,) = struct.unpack("<I", take(4, "entry count"))
    arrays: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<I", take(4, f"entry {i} name length"))
        name = bytes(take(name_len, f"entry {i} name")).decode("utf-8")
        dtype_code, rank = struct.unpack("<BB", take(2, f"entry {name!r} dtype/rank"))
        if dtype_code != 0:
            raise WeightsFormatError(
                "unsupported-version", f"entry {name!r} has unknown dtype code {dtype_code}"
            )
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, f"entry {name!r} dims"))
        n_bytes = 8 * int(np.prod(dims, dtype=np.int64)) if rank else 8
        raw = take(n_bytes, f"entry {name!r} payload")
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    if offset != len(view):
        raise WeightsFormatError(
            "truncated", f"{len(view) - offset} trailing bytes after last entry"
        )
    return arrays


def save_weights(params, path: str) -> None:
    """Save parameters (a list of Parameter or a name -> array dict)."""
    if isinstance(params, dict):
        arrays = params
    else:
        arrays = {p.name: p.value.data for p in params}
    atomic_write_bytes(path, pack_weights(arrays))


def load_weights(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return unpack_weights(fh.read())


def bind_weights(params, arrays: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into parameters, matching strictly by name/shape."""
    by_name = {p.name: p for p in params}
    missing = sorted(set(by_name) - set(arrays))
    if missing:
        raise WeightsFormatError(
            "name-mismatch", f"container has no entry for parameter {missing[0]!r}"
        )
    extra = sorted(set(arrays) - set(by_name))
    if extra:
        raise WeightsFormatError(
            "name-mismatch", f"container entry {extra[0]!r} matches no parameter"
        )
    for name, param in by_name.items():
        arr = arrays[name]
        if arr.shape != param.value.data.shape:
            raise WeightsFormatError(
                "shape-mismatch",
                f"entry {name!r} has shape {arr.shape}, parameter expects "
                f"{param.value.data.shape}",
            )
    for name, param in by_name.items():
        param.value.data[...] = arrays[name]


def save_dataset(samples, path: str) -> None:
    """Cache a dataset to disk using the weights container format."""
    arrays: dict[str, np.ndarray] = {}
    for i, s in enumerate(samples):
        arrays[f"sample{i}.image"] = s.image
        arrays[f"sample{i}.target"] = s.target
        if s.keypoints is not None:
            arrays[f"sample{i}.keypoints"] = s.keypoints.astype(np.float64)
    save_weights(arrays, path)


def load_dataset(path: str):
    arrays = load_weights(path)
    count = sum(1 for name in arrays if name.endswith(".image"))
    samples = []
    for i in range(count):
        kp = arrays.get(f"sample{i}.keypoints")
        samples.append(harness.Sample(
            image=arrays[f"sample{i}.image"],
            target=arrays[f"sample{i}.target"],
            keypoints=None if kp is None else kp.astype(np.int64),
        ))
    return samples


# ---------------------------------------------------------------------------
# metrics stream


def emit_metrics(history, stream) -> None:
    """Write one JSON object per line: epoch, train_loss, val_loss, metric."""
    for record in history:
        stream.write(json.dumps(record.as_dict()) + "\n")


def read_metrics(stream) -> list[dict]:
    return [json.loads(line) for line in stream if line.strip()]


# ---------------------------------------------------------------------------
# gradient suite


def _primitive_cases(seed: int):
    """Named scalar-valued functions of one array, for finite differencing."""
    rng = np.random.default_rng(seed)
    k = {
        "m": rng.standard_normal((4, 3)),
        "w1x1": rng.standard_normal((5, 3)),
        "b5": rng.standard_normal(5),
        "w3x3": rng.standard_normal((4, 3, 3, 3)) * 0.5,
        "w7x7": rng.standard_normal((2, 3, 7, 7)) * 0.2,
        "gamma": rng.uniform(0.5, 1.5, 3),
        "beta": rng.standard_normal(3),
        "mate": rng.standard_normal((3, 5, 6)),
        "row": rng.standard_normal((1, 5, 6)),
        "col": rng.standard_normal((3, 1, 1)),
        "target": rng.standard_normal((3, 5, 6)),
        "labels": (rng.uniform(size=(3, 5, 6)) > 0.5).astype(float),
    }

    def total(t):
        return core.reduce_sum(t)

    def sq_total(t):
        return core.reduce_sum(core.mul(t, t))

    return {
        "reshape": lambda t: sq_total(core.reshape(t, (6, 15))),
        "transpose2d": lambda t: sq_total(core.transpose2d(core.reshape(t, (9, 10)))),
        "matmul": lambda t: sq_total(core.matmul(Tensor(k["m"]), core.reshape(t, (3, 30)))),
        "conv1x1": lambda t: sq_total(core.conv1x1(t, Tensor(k["w1x1"]), Tensor(k["b5"]))),
        "conv3x3": lambda t: sq_total(core.conv2d(t, Tensor(k["w3x3"]), stride=1)),
        "conv7x7": lambda t: sq_total(core.conv2d(t, Tensor(k["w7x7"]), stride=1)),
        "conv3x3_stride2": lambda t: sq_total(core.conv2d(t, Tensor(k["w3x3"]), stride=2)),
        "global_avg_pool": lambda t: sq_total(core.global_avg_pool(t)),
        "global_max_pool": lambda t: sq_total(core.global_max_pool(t)),
        "channel_mean": lambda t: sq_total(core.channel_mean(t)),
        "channel_max": lambda t: sq_total(core.channel_max(t)),
        "softmax_channels": lambda t: sq_total(core.softmax(t, axis=0)),
        "softmax_pixels": lambda t: sq_total(core.softmax(core.reshape(t, (3, 30)), axis=1)),
        "sigmoid": lambda t: sq_total(core.sigmoid(t)),
        "relu": lambda t: sq_total(core.relu(core.add(t, Tensor(np.full(t.data.shape, 0.05))))),
        "add_broadcast_row": lambda t: sq_total(core.add(t, Tensor(k["row"]))),
        "mul_broadcast_col": lambda t: sq_total(core.mul(t, Tensor(k["col"]))),
        "scale": lambda t: sq_total(core.scale(t, -1.75)),
        "concat_channels": lambda t: sq_total(core.concat_channels(t, Tensor(k["mate"]))),
        "stack_select": lambda t: sq_total(core.select0(core.stack0([t, Tensor(k["mate"])]), 0)),
        "layer_norm": lambda t: sq_total(
            core.layer_norm(core.global_avg_pool(t), Tensor(k["gamma"]), Tensor(k["beta"]))
        ),
        "mse_loss": lambda t: core.mse_loss(t, Tensor(k["target"])),
        "bce_with_logits": lambda t: core.bce_with_logits(t, Tensor(k["labels"])),
    }


def _randomize_block(block, seed: int) -> None:
    # Move every parameter (biases and norm affines included) off its
    # symmetric init so finite differences see generic curvature and stay
    # clear of relu kinks at exactly zero.
    rng = np.random.default_rng(seed)
    for p in block.parameters():
        p.value.data[...] = rng.uniform(-0.5, 0.5, size=p.value.data.shape)


def _block_gradcheck(kind: str, channels: int = 4, h: int = 5, w: int = 6,
                     seed: int = 0) -> float:
    """Max finite-difference error over the input and every parameter."""
    init = ParamInit(seed=seed)
    block = make_attention(kind, channels, init)
    _randomize_block(block, seed + 1)
    rng = np.random.default_rng(seed + 2)
    x0 = Tensor(rng.standard_normal((channels, h, w)))

    worst = finite_diff_gradcheck(lambda t: core.reduce_sum(block(t)), x0)
    for param in block.parameters():
        def wrt_param(t, _param=param):
            old = _param.value
            _param.value = t
            try:
                return core.reduce_sum(block(x0))
            finally:
                _param.value = old

        worst = max(worst, finite_diff_gradcheck(wrt_param, param.value))
    return worst


def gradient_suite(seed: int = 0) -> dict[str, float]:
    """Finite-difference errors for every primitive and every block kind."""
    results: dict[str, float] = {}
    rng = np.random.default_rng(seed)
    for case_seed in (seed, seed + 1):
        x0 = Tensor(rng.standard_normal((3, 5, 6)))
        for name, fn in _primitive_cases(case_seed).items():
            err = finite_diff_gradcheck(fn, x0)
            key = f"primitive:{name}"
            results[key] = max(results.get(key, 0.0), err)
    for kind in ATTENTION_KINDS:
        results[f"block:{kind}"] = _block_gradcheck(kind, seed=seed)
    return results


# ---------------------------------------------------------------------------
# subcommand bodies


def _parse_dims(text: str, n: int, what: str) -> tuple[int, ...]:
    parts = text.lower().split("x")
    if len(parts) != n or not all(p.isdigit() and int(p) > 0 for p in parts):
        raise argparse.ArgumentTypeError(
            f"{what} must look like {'x'.join(['N'] * n)}, got {text!r}"
        )
    return tuple(int(p) for p in parts)


def _cmd_gradcheck(args) -> int:
    started = time.perf_counter()
    results = gradient_suite(seed=args.seed if args.seed is not None else 0)
    failed = False
    for name, err in results.items():
        ok = err < GRADCHECK_TOL
        failed = failed or not ok
        print(f"{name:32s} max_err {err:.3e}  {'ok' if ok else 'FAIL'}")
    elapsed = time.perf_counter() - started
    print(f"gradcheck: {len(results)} checks in {elapsed:.1f}s, "
          f"{'all passed' if not failed else 'FAILURES above'}")
    return 1 if failed else 0


def _cmd_cost(args) -> int:
    if args.grid:
        if not args.kind:
            raise ConfigParseError("out-of-range", "--grid requires --kind")
        hw_grid = [_parse_dims(g, 2, "--grid entry") for g in args.grid.split(",")]
        report = cost.scaling_check(args.kind, hw_grid=hw_grid, c=args.channels,
                                    component=args.component)
        print(json.dumps(report, indent=2))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            atomic_write_text(os.path.join(args.out, "scaling.json"),
                              json.dumps(report, indent=2) + "\n")
            series = {}
            for kind in (args.kind, "nl") if args.kind != "nl" else ("nl",):
                xs = [h * w for h, w in hw_grid]
                ys = [cost.cost_of_attention_block(kind, args.channels, h, w).flops
                      for h, w in hw_grid]
                series[kind] = (xs, ys)
            figures.save_scaling_curves(series, os.path.join(args.out, "scaling.png"))
            print(f"wrote {args.out}/scaling.json and scaling.png")
        return 0
    if args.model:
        desc = cost.builtin_descriptors(args.model)
        if args.input_shape:
            desc = dataclasses.replace(desc, input_shape=_parse_dims(args.input_shape, 3,
                                                                     "--input-shape"))
        report = cost.cost_of_model(desc)
        print(f"model {desc.name}  input {'x'.join(map(str, desc.input_shape))}")
        print(f"params ≈ {report.params / 1e6:.1f}M ({report.params:,})")
        print(f"flops  ≈ {report.flops / 1e9:.1f}G ({report.flops:,})")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            atomic_write_text(os.path.join(args.out, "cost.json"), report.to_json() + "\n")
            print(f"wrote {args.out}/cost.json")
        return 0
    if args.kind:
        h, w = _parse_dims(args.hw, 2, "--hw")
        report = cost.cost_of_attention_block(args.kind, args.channels, h, w)
        print(f"block {args.kind}  channels {args.channels}  hw {h}x{w}")
        print(f"params {report.params:,}  flops {report.flops:,}  "
              f"peak_activation {report.peak_activation:,}")
        for comp in report.breakdown:
            print(f"  {comp.name:16s} flops {comp.flops:12,}  params {comp.params:8,}")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            atomic_write_text(os.path.join(args.out, "cost.json"), report.to_json() + "\n")
            print(f"wrote {args.out}/cost.json")
        return 0
    raise ConfigParseError("out-of-range", "cost needs one of --kind, --model, --grid")


def _load_run_config(args) -> RunConfig:
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigParseError("malformed-json", f"cannot read config: {exc}") from exc
    else:
        text = "{}"
    run_cfg = parse_config(text)
    seed = None
    if os.environ.get("PSA_SEED"):
        try:
            seed = int(os.environ["PSA_SEED"])
        except ValueError as exc:
            raise ConfigParseError("out-of-range",
                                   f"PSA_SEED must be an int: {os.environ['PSA_SEED']!r}") from exc
    if args.seed is not None:
        seed = args.seed
    if seed is not None:
        run_cfg = dataclasses.replace(
            run_cfg, train=dataclasses.replace(run_cfg.train, seed=seed), seeds=(seed,)
        )
    if args.out:
        run_cfg = dataclasses.replace(run_cfg, out=args.out)
    return run_cfg


def _cmd_train(args) -> int:
    run_cfg = _load_run_config(args)
    cfg = run_cfg.train

    def progress(record):
        print(json.dumps(record.as_dict()), flush=True)

    result = harness.train(cfg, epoch_callback=progress)
    final = result.final
    print(f"done: val_loss {final.val_loss:.6f}  metric {final.metric:.4f}")
    if run_cfg.out:
        os.makedirs(run_cfg.out, exist_ok=True)
        atomic_write_text(os.path.join(run_cfg.out, "config.json"),
                          json.dumps(dataclasses.asdict(cfg), indent=2) + "\n")
        buf = io.StringIO()
        emit_metrics(result.history, buf)
        atomic_write_text(os.path.join(run_cfg.out, "metrics.jsonl"), buf.getvalue())
        save_weights(result.net.parameters(), os.path.join(run_cfg.out, "weights.psaw"))
        figures.save_training_curves(result.history,
                                     os.path.join(run_cfg.out, "curves.png"))
        print(f"wrote {run_cfg.out}/config.json, metrics.jsonl, weights.psaw, curves.png")
    return 0


def _cmd_compare(args) -> int:
    run_cfg = _load_run_config(args)
    cfg_a = dataclasses.replace(run_cfg.train, variant=run_cfg.variant_a)
    cfg_b = dataclasses.replace(run_cfg.train, variant=run_cfg.variant_b)

    def progress(row):
        print(json.dumps(row), flush=True)

    result = harness.ab_compare(cfg_a, cfg_b, seeds=run_cfg.seeds, progress=progress)
    print(json.dumps(result.summary, indent=2))
    if run_cfg.out:
        os.makedirs(run_cfg.out, exist_ok=True)
        rows_text = "".join(json.dumps(r) + "\n" for r in result.rows)
        atomic_write_text(os.path.join(run_cfg.out, "runs.jsonl"), rows_text)
        atomic_write_text(os.path.join(run_cfg.out, "summary.json"),
                          json.dumps(result.summary, indent=2) + "\n")
        figures.save_ab_comparison(result, os.path.join(run_cfg.out, "compare.png"))
        print(f"wrote {run_cfg.out}/runs.jsonl, summary.json, compare.png")
    improved = result.summary["val_loss_improvement"] > 0
    return 0 if improved else 1


def _cmd_descriptors(args) -> int:
    if args.name:
        desc = cost.builtin_descriptors(args.name)
        report = cost.cost_of_model(desc)
        chain = cost.shape_chain(desc)
        print(f"{desc.name}  input {'x'.join(map(str, desc.input_shape))}")
        for (kind, shape) in chain:
            print(f"  {kind:24s} -> {'x'.join(map(str, shape))}")
        print(f"params {report.params:,}  flops {report.flops:,}")
        return 0
    for name in sorted(cost.builtin_descriptors()):
        print(name)
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psa", description="polarized-attention kernels, cost reports, toy benchmark"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("cost", help="FLOPs/params reports and scaling exponents")
    p.add_argument("--kind", choices=ATTENTION_KINDS, default=None)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--hw", default="64x64")
    p.add_argument("--model", default=None)
    p.add_argument("--input-shape", dest="input_shape", default=None)
    p.add_argument("--grid", default=None,
                   help="comma-separated HxW list, e.g. 32x32,64x64,128x128")
    p.add_argument("--component", default=None)
    p.add_argument("--out", default=None)

    for name in ("train", "compare"):
        p = sub.add_parser(name, help=f"{name} on the synthetic task")
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    p = sub.add_parser("descriptors", help="list or dump built-in model descriptors")
    p.add_argument("--name", default=None)

    return parser


def run(argv) -> int:
    """Parse argv and execute; returns the process exit code (0/1/2)."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "cost":
            return _cmd_cost(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "descriptors":
            return _cmd_descriptors(args)
        parser.print_usage(sys.stderr)
        return 2
    except (ConfigParseError, WeightsFormatError) as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except cost.ConfigError as exc:
        print(f"error[out-of-range]: {exc}", file=sys.stderr)
        return 2
    except argparse.ArgumentTypeError as exc:
        print(f"error[out-of-range]: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error[diverged]: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
