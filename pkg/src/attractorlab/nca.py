"""Deterministic Neural Cellular Automaton forward model.

The substrate is an H x W x 16 float64 grid (channels 0-2 RGB, 3 alpha,
4-15 hidden). The update rule is the two-layer residual network of the
growing-pattern NCA family: depthwise perception with fixed identity /
Sobel kernels, a 48 -> hidden -> 16 per-cell MLP, and alive-masking on the
max-pooled alpha channel. Every cell updates every step (no stochastic
update); weight files declaring any other update rate are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dynsys import SystemHandle
from .errors import (
    MalformedWeights,
    NumericalBlowup,
    UnsupportedUpdateRate,
    VersionMismatch,
)

N_CHANNELS = 16
ALPHA_CHANNEL = 3
ALIVE_THRESHOLD = 0.1
KERNEL_NORM = 0.125  # Sobel kernels are scaled by 1/8
PERCEPTION_CHANNELS = 3 * N_CHANNELS

NCAW_MAGIC = "NCAW"
NCAW_VERSION = 1

SOBEL_X = KERNEL_NORM * np.array(
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]
)
SOBEL_Y = SOBEL_X.T.copy()


@dataclass
class RuleWeights:
    """Parameters of the per-cell update MLP.

    Tensors are stored as float32 (the on-disk convention); the engine
    upcasts to float64 when stepping. ``w2`` may be all zero: that is the
    do-nothing rule.
    """

    w1: np.ndarray  # (48, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, 16)
    trained_h: int = 72
    trained_w: int = 72
    update_rate: float = 1.0
    kernel_norm: float = KERNEL_NORM
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float32)
        self.b1 = np.asarray(self.b1, dtype=np.float32)
        self.w2 = np.asarray(self.w2, dtype=np.float32)
        if self.w1.ndim != 2 or self.w1.shape[0] != PERCEPTION_CHANNELS:
            raise MalformedWeights(
                f"w1 must be ({PERCEPTION_CHANNELS}, hidden), got {self.w1.shape}"
            )
        hidden = self.w1.shape[1]
        if self.b1.shape != (hidden,):
            raise MalformedWeights(f"b1 must be ({hidden},), got {self.b1.shape}")
        if self.w2.shape != (hidden, N_CHANNELS):
            raise MalformedWeights(
                f"w2 must be ({hidden}, {N_CHANNELS}), got {self.w2.shape}"
            )
        if not (
            np.all(np.isfinite(self.w1))
            and np.all(np.isfinite(self.b1))
            and np.all(np.isfinite(self.w2))
        ):
            raise MalformedWeights("weights contain non-finite entries")

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]


def _check_substrate(grid) -> np.ndarray:
    s = np.asarray(grid, dtype=np.float64)
    if s.ndim != 3 or s.shape[2] != N_CHANNELS:
        raise ValueError(f"substrate must be (H, W, {N_CHANNELS}), got {s.shape}")
    return s


def perceive(grid: np.ndarray) -> np.ndarray:
    """Depthwise perception: identity, Sobel-x, Sobel-y per channel.

    Zero padding at the borders. Output channel order is
    [identity(0..C), sobelx(0..C), sobely(0..C)].
    """
    s = _check_substrate(grid)
    h, w, c = s.shape
    padded = np.zeros((h + 2, w + 2, c))
    padded[1:-1, 1:-1] = s
    out = np.empty((h, w, 3 * c))
    out[:, :, :c] = s
    for block, kernel in ((1, SOBEL_X), (2, SOBEL_Y)):
        acc = np.zeros((h, w, c))
        for dy in range(3):
            for dx in range(3):
                k = kernel[dy, dx]
                if k != 0.0:
                    acc += k * padded[dy : dy + h, dx : dx + w]
        out[:, :, block * c : (block + 1) * c] = acc
    return out


def living_mask(grid: np.ndarray) -> np.ndarray:
    """Boolean (H, W) mask: 3x3 max-pooled alpha strictly above 0.1."""
    s = _check_substrate(grid)
    h, w = s.shape[:2]
    alpha = s[:, :, ALPHA_CHANNEL]
    padded = np.full((h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1] = alpha
    pooled = padded[0:h, 0:w]
    for dy in range(3):
        for dx in range(3):
            if dy == 0 and dx == 0:
                continue
            pooled = np.maximum(pooled, padded[dy : dy + h, dx : dx + w])
    return pooled > ALIVE_THRESHOLD


def nca_step(grid: np.ndarray, weights: RuleWeights) -> np.ndarray:
    """One deterministic update of every cell.

    s' = s + w2' . relu(w1' . perceive(s) + b1), then cells that are alive
    neither before nor after the update (AND of pre/post living masks, as
    in the reference growing-pattern implementation) are zeroed.
    """
    s = _check_substrate(grid)
    h, w, c = s.shape
    pre_alive = living_mask(s)
    p = perceive(s).reshape(h * w, 3 * c)
    hid = p @ weights.w1.astype(np.float64)
    hid += weights.b1.astype(np.float64)
    np.maximum(hid, 0.0, out=hid)
    delta = hid @ weights.w2.astype(np.float64)
    out = s + delta.reshape(h, w, c)
    alive = pre_alive & living_mask(out)
    out *= alive[:, :, None]
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out.reshape(-1)))[0])
        raise NumericalBlowup(bad)
    return out


def seed_state(h: int, w: int) -> np.ndarray:
    """All-zero substrate with the center cell's alpha+hidden channels at 1."""
    if h < 3 or w < 3:
        raise ValueError("substrate must be at least 3x3")
    s = np.zeros((h, w, N_CHANNELS))
    s[h // 2, w // 2, ALPHA_CHANNEL:] = 1.0
    return s


def flatten_substrate(grid: np.ndarray) -> np.ndarray:
    """Row-major (H, W, C) flattening to a state vector."""
    return _check_substrate(grid).reshape(-1)


def unflatten_substrate(x: np.ndarray, h: int, w: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size != h * w * N_CHANNELS:
        raise ValueError(f"state size {x.size} != {h}*{w}*{N_CHANNELS}")
    return x.reshape(h, w, N_CHANNELS)


def as_system(weights: RuleWeights, h: int, w: int) -> SystemHandle:
    """Expose the NCA as a flat deterministic map of dimension H*W*16."""

    def step_fn(x):
        return nca_step(unflatten_substrate(x, h, w), weights).reshape(-1)

    return SystemHandle(
        name="nca",
        dim=h * w * N_CHANNELS,
        params={"H": h, "W": w, "hidden": weights.hidden},
        step_kind="nca",
        step_fn=step_fn,
        default_x0=flatten_substrate(seed_state(h, w)),
    )


# -- NCAW v1 weight files ----------------------------------------------------
#
# One line of JSON (utf-8, ends with '\n') followed by the tensors as raw
# little-endian float32, row-major, in declared order w1, b1, w2.

_HEADER_KEYS = ("magic", "version", "C", "hidden", "H", "W", "update_rate", "kernel_norm")


def save_weights(weights: RuleWeights, path):
    header = {
        "magic": NCAW_MAGIC,
        "version": NCAW_VERSION,
        "C": N_CHANNELS,
        "hidden": weights.hidden,
        "H": weights.trained_h,
        "W": weights.trained_w,
        "update_rate": weights.update_rate,
        "kernel_norm": weights.kernel_norm,
    }
    for key in sorted(weights.extra):
        header[key] = weights.extra[key]
    blob = json.dumps(header, separators=(", ", ": ")).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(blob)
        for tensor in (weights.w1, weights.b1, weights.w2):
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_weights(path) -> RuleWeights:
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise MalformedWeights(f"{path}: missing header line")
    try:
        header = json.loads(raw[: newline + 1].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedWeights(f"{path}: unparseable header ({exc})") from exc
    if not isinstance(header, dict) or header.get("magic") != NCAW_MAGIC:
        raise MalformedWeights(f"{path}: bad magic, expected {NCAW_MAGIC!r}")
    if header.get("version") != NCAW_VERSION:
        raise VersionMismatch(
            f"{path}: version {header.get('version')!r}, engine supports {NCAW_VERSION}"
        )
    if header.get("C") != N_CHANNELS:
        raise MalformedWeights(f"{path}: engine supports C={N_CHANNELS} only")
    rate = header.get("update_rate")
    if rate != 1.0:
        raise UnsupportedUpdateRate(
            f"{path}: update_rate={rate!r}; the engine only implements "
            "deterministic (100%) updates"
        )
    if header.get("kernel_norm") != KERNEL_NORM:
        raise MalformedWeights(
            f"{path}: kernel_norm={header.get('kernel_norm')!r} disagrees with the "
            f"engine's {KERNEL_NORM}"
        )
    hidden = header.get("hidden")
    if not isinstance(hidden, int) or hidden < 1:
        raise MalformedWeights(f"{path}: bad hidden size {hidden!r}")
    body = raw[newline + 1 :]
    sizes = (PERCEPTION_CHANNELS * hidden, hidden, hidden * N_CHANNELS)
    expected = 4 * sum(sizes)
    if len(body) != expected:
        raise MalformedWeights(
            f"{path}: tensor payload is {len(body)} bytes, expected {expected} "
            f"for hidden={hidden}"
        )
    flat = np.frombuffer(body, dtype="<f4")
    w1 = flat[: sizes[0]].reshape(PERCEPTION_CHANNELS, hidden)
    b1 = flat[sizes[0] : sizes[0] + sizes[1]]
    w2 = flat[sizes[0] + sizes[1] :].reshape(hidden, N_CHANNELS)
    extra = {k: v for k, v in header.items() if k not in _HEADER_KEYS}
    return RuleWeights(
        w1=w1,
        b1=b1,
        w2=w2,
        trained_h=header.get("H", 72),
        trained_w=header.get("W", 72),
        update_rate=rate,
        kernel_norm=header["kernel_norm"],
        extra=extra,
    )


def substrate_to_png(grid: np.ndarray, path):
    """Write channels 0-3 as RGBA, clamped to [0, 1]. Presentation only."""
    from PIL import Image

    s = _check_substrate(grid)
    rgba = np.clip(s[:, :, :4], 0.0, 1.0)
    img = (rgba * 255.0).round().astype(np.uint8)
    Image.fromarray(img, "RGBA").save(path)
