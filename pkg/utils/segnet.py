"""
Small fully convolutional segmentation network written directly in numpy.

The network is an encoder-decoder: each encoder stage runs two 3x3 convs
with ReLU and a 2x2 max-pool; each decoder stage upsamples by 2
(nearest neighbour), applies a learnable "up-conv", concatenates the
matching encoder features and applies one more conv. A final 1x1 conv
produces two logits per pixel (background, head). Training minimizes the
mean per-pixel softmax cross-entropy with Adam, random left-right flips and
early stopping on validation Dice.

Everything runs in float64 so analytic gradients can be checked against
finite differences.
"""

import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.errors import (
    DimensionNotDivisible,
    EmptyDataset,
    InvalidFileFormat,
    InvalidParams,
    OddDimension,
    ShapeMismatch,
)
from utils.imageio import GrayImage
from utils.raster import Mask, dice

logger = logging.getLogger(__name__)

CLINICAL_LEARNING_RATE = 1e-5
PARAMS_MAGIC = b'SEGN'
PARAMS_VERSION = 1
UPSAMPLE_MODES = ('nearest',)

Sample = Tuple[GrayImage, Mask]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArchitectureConfig:
    """Per-stage channel counts; the number of stages is the number of down-samplings."""
    channels: Tuple[int, ...] = (8, 16, 32)
    kernel_size: int = 3
    skip_connections: bool = True
    upsample_mode: str = 'nearest'
    in_channels: int = 1
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, 'channels', tuple(int(c) for c in self.channels))
        if not self.channels or any(c < 1 for c in self.channels):
            raise InvalidParams(f'channels must be positive, got {self.channels}')
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidParams(f'kernel size must be odd and positive, got {self.kernel_size}')
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise InvalidParams(f'unsupported upsample mode {self.upsample_mode!r}')
        if self.num_classes != 2:
            raise InvalidParams('the head/background network has exactly 2 output channels')
        if self.in_channels < 1:
            raise InvalidParams('in_channels must be positive')

    @property
    def stages(self) -> int:
        return len(self.channels)

    @property
    def divisor(self) -> int:
        return 2 ** self.stages

    def layer_shapes(self) -> List[Tuple[str, Tuple[int, int, int, int]]]:
        """(name, kernel shape) for every conv, in forward order."""
        k = self.kernel_size
        shapes = []
        prev = self.in_channels
        for i, c in enumerate(self.channels, start=1):
            shapes.append((f'enc{i}a', (c, prev, k, k)))
            shapes.append((f'enc{i}b', (c, c, k, k)))
            prev = c
        for i in range(self.stages, 0, -1):
            c = self.channels[i - 1]
            shapes.append((f'dec{i}up', (c, prev, k, k)))
            merge_in = 2 * c if self.skip_connections else c
            shapes.append((f'dec{i}merge', (c, merge_in, k, k)))
            prev = c
        shapes.append(('head', (self.num_classes, prev, 1, 1)))
        return shapes


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 20
    patience: int = 3
    batch_size: int = 5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise InvalidParams('epochs, patience and batch size must be positive')
        if self.patience > self.max_epochs:
            raise InvalidParams(f'patience {self.patience} exceeds max epochs {self.max_epochs}')
        if not self.learning_rate > 0 or not self.epsilon > 0:
            raise InvalidParams('learning rate and epsilon must be positive')
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise InvalidParams('Adam betas must lie in (0, 1)')
        if self.seed < 0:
            raise InvalidParams('seed must be non-negative')


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamBlock:
    name: str
    kernel: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class NetworkParams:
    arch: ArchitectureConfig
    blocks: Tuple[ParamBlock, ...]

    def __post_init__(self):
        expected = self.arch.layer_shapes()
        if len(expected) != len(self.blocks):
            raise ShapeMismatch(f'expected {len(expected)} parameter blocks, got {len(self.blocks)}')
        for (name, shape), block in zip(expected, self.blocks):
            if block.name != name or block.kernel.shape != shape or block.bias.shape != (shape[0],):
                raise ShapeMismatch(f'parameter block {block.name} does not match layer {name} {shape}')
            block.kernel.setflags(write=False)
            block.bias.setflags(write=False)

    def __getitem__(self, name: str) -> ParamBlock:
        for block in self.blocks:
            if block.name == name:
                return block
        raise KeyError(name)

    def arrays(self) -> List[np.ndarray]:
        out = []
        for block in self.blocks:
            out.extend((block.kernel, block.bias))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> 'NetworkParams':
        it = iter(arrays)
        blocks = tuple(ParamBlock(b.name, np.array(next(it), dtype=np.float64),
                                  np.array(next(it), dtype=np.float64)) for b in self.blocks)
        return NetworkParams(self.arch, blocks)

    def count(self) -> int:
        return sum(a.size for a in self.arrays())

    def equals(self, other: 'NetworkParams') -> bool:
        return self.arch == other.arch and all(
            np.array_equal(x, y) for x, y in zip(self.arrays(), other.arrays()))


def init_params(arch: ArchitectureConfig, seed: int = 0) -> NetworkParams:
    """He-uniform kernels, zero biases."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    blocks = []
    for name, shape in arch.layer_shapes():
        fan_in = shape[1] * shape[2] * shape[3]
        limit = math.sqrt(6.0 / fan_in)
        blocks.append(ParamBlock(name, rng.uniform(-limit, limit, size=shape),
                                 np.zeros(shape[0], dtype=np.float64)))
    return NetworkParams(arch, tuple(blocks))


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def _check_finite(t: np.ndarray, where: str) -> None:
    assert np.isfinite(t).all(), f'non-finite values after {where}'


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # n, c, h, w, kh, kw
    n, c, h, w = x.shape
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * kh * kw)


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 cross-correlation with zero 'same' padding."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch(f'expected 4-D input and kernel, got {x.shape} and {kernel.shape}')
    out_ch, in_ch, kh, kw = kernel.shape
    if x.shape[1] != in_ch:
        raise ShapeMismatch(f'input has {x.shape[1]} channels, kernel expects {in_ch}')
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatch(f'same padding needs odd kernels, got {kh}x{kw}')
    if bias.shape != (out_ch,):
        raise ShapeMismatch(f'bias shape {bias.shape} does not match {out_ch} output channels')
    n, _, h, w = x.shape
    cols = _im2col(x, kh, kw)
    y = cols @ kernel.reshape(out_ch, -1).T + bias
    return y.reshape(n, h, w, out_ch).transpose(0, 3, 1, 2)


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray,
                    kernel: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients with respect to input, kernel and bias."""
    out_ch, in_ch, kh, kw = kernel.shape
    n, _, h, w = x.shape
    if grad_out.shape != (n, out_ch, h, w):
        raise ShapeMismatch(f'gradient shape {grad_out.shape} does not match output {(n, out_ch, h, w)}')
    g2 = grad_out.transpose(0, 2, 3, 1).reshape(n * h * w, out_ch)
    grad_kernel = (g2.T @ _im2col(x, kh, kw)).reshape(kernel.shape)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    flipped = kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    grad_input = conv2d_forward(grad_out, np.ascontiguousarray(flipped), np.zeros(in_ch))
    return grad_input, grad_kernel, grad_bias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Subgradient 0 at x = 0."""
    return grad_out * (x > 0.0)


def maxpool2_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """2x2/2 max pooling; returns output and the row-major argmax per window."""
    if x.ndim != 4:
        raise ShapeMismatch(f'expected 4-D input, got {x.shape}')
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddDimension(f'max pooling needs even height and width, got {h}x{w}')
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    argmax = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return y, argmax


def maxpool2_backward(grad_out: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    if grad_out.shape != argmax.shape:
        raise ShapeMismatch(f'gradient shape {grad_out.shape} does not match pooled {argmax.shape}')
    n, c, h2, w2 = grad_out.shape
    windows = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(windows, argmax[..., None], grad_out[..., None], axis=-1)
    return windows.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)


def upsample2_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour x2; the learnable part of the up-conv is the following conv."""
    if x.ndim != 4:
        raise ShapeMismatch(f'expected 4-D input, got {x.shape}')
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = grad_out.shape
    if h % 2 or w % 2:
        raise OddDimension(f'upsampled gradient must have even size, got {h}x{w}')
    return grad_out.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Channel-wise softmax of (batch, classes, h, w) logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the true class and its gradient.

    ``labels`` is an integer array (batch, h, w) or a sequence of Masks.
    """
    labels = _label_array(labels)
    if logits.ndim != 4 or logits.shape[1] != 2:
        raise ShapeMismatch(f'logits must have shape (batch, 2, h, w), got {logits.shape}')
    if labels.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeMismatch(f'labels {labels.shape} do not match logits {logits.shape}')
    count = labels.size
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1)
    true_shifted = np.take_along_axis(shifted, labels[:, None], axis=1)[:, 0]
    loss = float(np.sum(np.log(total) - true_shifted) / count)

    probs = exp / total[:, None]
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, labels[:, None], 1.0, axis=1)
    return loss, (probs - onehot) / count


def _label_array(labels) -> np.ndarray:
    if isinstance(labels, np.ndarray):
        return labels.astype(np.intp)
    return np.stack([m.data if isinstance(m, Mask) else np.asarray(m) for m in labels]).astype(np.intp)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

def forward(params: NetworkParams, x: np.ndarray) -> Tuple[np.ndarray, Dict]:
    """Logits for input batch ``x`` (batch, in_channels, h, w) plus the tape for backward."""
    arch = params.arch
    if x.ndim != 4 or x.shape[1] != arch.in_channels:
        raise ShapeMismatch(f'input must have shape (batch, {arch.in_channels}, h, w), got {x.shape}')
    h, w = x.shape[2:]
    if h % arch.divisor or w % arch.divisor:
        raise DimensionNotDivisible(f'input {h}x{w} is not divisible by {arch.divisor}')

    tape: Dict = {}
    skips = []
    act = x
    for i in range(1, arch.stages + 1):
        act = _conv_relu(params, f'enc{i}a', act, tape)
        act = _conv_relu(params, f'enc{i}b', act, tape)
        skips.append(act)
        act, tape[f'pool{i}'] = maxpool2_forward(act)
    for i in range(arch.stages, 0, -1):
        act = _conv_relu(params, f'dec{i}up', upsample2_forward(act), tape)
        if arch.skip_connections:
            act = np.concatenate([act, skips[i - 1]], axis=1)
        act = _conv_relu(params, f'dec{i}merge', act, tape)
    head = params['head']
    tape['head'] = act
    logits = conv2d_forward(act, head.kernel, head.bias)
    _check_finite(logits, 'head')
    return logits, tape


def _conv_relu(params: NetworkParams, name: str, x: np.ndarray, tape: Dict) -> np.ndarray:
    block = params[name]
    pre = conv2d_forward(x, block.kernel, block.bias)
    _check_finite(pre, name)
    tape[name] = (x, pre)
    return relu_forward(pre)


def backward(params: NetworkParams, tape: Dict, grad_logits: np.ndarray) -> List[np.ndarray]:
    """Gradients for every parameter array, in the order of ``params.arrays()``."""
    arch = params.arch
    grads: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}

    g, gk, gb = conv2d_backward(grad_logits, tape['head'], params['head'].kernel)
    grads['head'] = (gk, gb)

    skip_grads = {}
    for i in range(1, arch.stages + 1):
        g = _conv_relu_backward(params, f'dec{i}merge', g, tape, grads)
        if arch.skip_connections:
            c = arch.channels[i - 1]
            g, skip_grads[i] = g[:, :c], g[:, c:]
        g = _conv_relu_backward(params, f'dec{i}up', g, tape, grads)
        g = upsample2_backward(g)
    for i in range(arch.stages, 0, -1):
        g = maxpool2_backward(g, tape[f'pool{i}'])
        if arch.skip_connections:
            g = g + skip_grads[i]
        g = _conv_relu_backward(params, f'enc{i}b', g, tape, grads)
        g = _conv_relu_backward(params, f'enc{i}a', g, tape, grads)

    out = []
    for block in params.blocks:
        out.extend(grads[block.name])
    return out


def _conv_relu_backward(params, name, grad, tape, grads):
    x, pre = tape[name]
    g_in, gk, gb = conv2d_backward(relu_backward(grad, pre), x, params[name].kernel)
    grads[name] = (gk, gb)
    return g_in


def loss_and_grads(params: NetworkParams, x: np.ndarray, labels) -> Tuple[float, List[np.ndarray]]:
    logits, tape = forward(params, x)
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    return loss, backward(params, tape, grad_logits)


def predict_batch(params: NetworkParams, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Head probability (batch, h, w) and binary masks; ties at 0.5 are background."""
    logits, _ = forward(params, x)
    prob = softmax(logits)[:, 1]
    return prob, (prob > 0.5).astype(np.uint8)


def predict(params: NetworkParams, img: GrayImage) -> Tuple[np.ndarray, Mask]:
    prob, masks = predict_batch(params, img.data[None, None])
    return prob[0], Mask(masks[0])


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> 'AdamState':
        return cls([np.zeros_like(a, dtype=np.float64) for a in arrays],
                   [np.zeros_like(a, dtype=np.float64) for a in arrays])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float, beta1: float, beta2: float, eps: float,
              t: int) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if t < 1:
        raise InvalidParams(f'Adam step counter starts at 1, got {t}')
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeMismatch('params, grads and optimizer state differ in length')
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeMismatch(f'shape mismatch in Adam update: {p.shape}, {g.shape}, {m.shape}')
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_params.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def augment_flip(img: GrayImage, mask: Mask, coin: int) -> Tuple[GrayImage, Mask]:
    """Mirror image and mask about the vertical axis when ``coin`` is 1."""
    if not coin:
        return img, mask
    return GrayImage(img.data[:, ::-1], img.s_xy), Mask(mask.data[:, ::-1])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_dice: float


@dataclass
class TrainingLog:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_csv(self) -> str:
        lines = ['epoch,train_loss,val_dice']
        lines += [f'{r.epoch},{r.train_loss!r},{r.val_dice!r}' for r in self.records]
        return '\n'.join(lines) + '\n'


class EarlyStopping:
    """Keeps the best-scoring parameters; signals a stop after ``patience``
    epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -math.inf
        self.best_epoch = 0
        self.best_params: Optional[NetworkParams] = None
        self.stale = 0

    def update(self, epoch: int, score: float, params: NetworkParams) -> bool:
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.best_params = params
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def mean_dice(params: NetworkParams, samples: Sequence[Sample], batch_size: int = 8) -> float:
    scores = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = np.stack([img.data for img, _ in chunk])[:, None]
        _, masks = predict_batch(params, x)
        scores.extend(dice(Mask(pred), truth) for pred, (_, truth) in zip(masks, chunk))
    return float(np.mean(scores))


def _check_dataset(samples: Sequence[Sample], what: str, arch: ArchitectureConfig):
    if not samples:
        raise EmptyDataset(f'{what} set is empty')
    shape = samples[0][0].data.shape
    for img, mask in samples:
        if img.data.shape != shape or mask.shape != shape:
            raise ShapeMismatch(f'{what} set mixes image sizes {shape} and {img.data.shape}/{mask.shape}')
    if shape[0] % arch.divisor or shape[1] % arch.divisor:
        raise DimensionNotDivisible(f'{what} images {shape[0]}x{shape[1]} not divisible by {arch.divisor}')
    return shape


def train(train_set: Sequence[Sample], validation_set: Sequence[Sample],
          arch: ArchitectureConfig = ArchitectureConfig(),
          cfg: TrainConfig = TrainConfig(),
          evaluate: Optional[Callable[[NetworkParams], float]] = None,
          on_epoch: Optional[Callable[[EpochRecord, NetworkParams], None]] = None,
          ) -> Tuple[NetworkParams, TrainingLog]:
    """Train from scratch and return the parameters of the best validation epoch.

    ``evaluate`` replaces the validation mean-Dice computation. Shuffling,
    flips and initialization all derive from ``cfg.seed``.
    """
    _check_dataset(train_set, 'train', arch)
    _check_dataset(validation_set, 'validation', arch)
    evaluate = evaluate or (lambda p: mean_dice(p, validation_set))

    rng = np.random.Generator(np.random.Philox(key=[cfg.seed, 1]))
    params = init_params(arch, cfg.seed)
    state = AdamState.zeros_like(params.arrays())
    stopper = EarlyStopping(cfg.patience)
    log = TrainingLog()
    step = 0
    logger.info('training %d parameters on %d images (%d validation)',
                params.count(), len(train_set), len(validation_set))

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        coins = rng.integers(0, 2, size=len(train_set)) if cfg.augment else np.zeros(len(train_set), dtype=int)
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [augment_flip(*train_set[i], coins[i]) for i in order[start:start + cfg.batch_size]]
            x = np.stack([img.data for img, _ in batch])[:, None]
            loss, grads = loss_and_grads(params, x, [m for _, m in batch])
            step += 1
            arrays, state = adam_step(params.arrays(), grads, state, cfg.learning_rate,
                                      cfg.beta1, cfg.beta2, cfg.epsilon, step)
            params = params.with_arrays(arrays)
            loss_sum += loss * len(batch)

        record = EpochRecord(epoch, loss_sum / len(train_set), float(evaluate(params)))
        log.records.append(record)
        stop = stopper.update(epoch, record.val_dice, params)
        logger.info('epoch %d: loss %.5f, val dice %.4f (best %d)',
                    epoch, record.train_loss, record.val_dice, stopper.best_epoch)
        if on_epoch:
            on_epoch(record, params)
        if stop:
            log.stopped_early = epoch < cfg.max_epochs
            break

    log.best_epoch = stopper.best_epoch
    return stopper.best_params, log


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def params_to_bytes(params: NetworkParams) -> bytes:
    arch = params.arch
    out = io.BytesIO()
    out.write(PARAMS_MAGIC)
    out.write(struct.pack('<I', PARAMS_VERSION))
    out.write(struct.pack('<IIIBB', arch.in_channels, arch.stages, arch.kernel_size,
                          int(arch.skip_connections), UPSAMPLE_MODES.index(arch.upsample_mode)))
    out.write(struct.pack(f'<{arch.stages}I', *arch.channels))
    arrays = params.arrays()
    out.write(struct.pack('<I', len(arrays)))
    for a in arrays:
        out.write(struct.pack('<I', a.ndim))
        out.write(struct.pack(f'<{a.ndim}I', *a.shape))
        out.write(np.ascontiguousarray(a, dtype='<f8').tobytes())
    return out.getvalue()


def params_from_bytes(data: bytes) -> NetworkParams:
    buf = io.BytesIO(data)

    def read(fmt):
        size = struct.calcsize(fmt)
        chunk = buf.read(size)
        if len(chunk) != size:
            raise InvalidFileFormat('truncated parameter file')
        return struct.unpack(fmt, chunk)

    if buf.read(4) != PARAMS_MAGIC:
        raise InvalidFileFormat('not a SEGN parameter file')
    (version,) = read('<I')
    if version != PARAMS_VERSION:
        raise InvalidFileFormat(f'unsupported parameter file version {version}')
    in_channels, stages, kernel_size, skip, mode = read('<IIIBB')
    if mode >= len(UPSAMPLE_MODES):
        raise InvalidFileFormat(f'unknown upsample mode code {mode}')
    channels = read(f'<{stages}I')
    arch = ArchitectureConfig(channels=channels, kernel_size=kernel_size, skip_connections=bool(skip),
                              upsample_mode=UPSAMPLE_MODES[mode], in_channels=in_channels)
    (count,) = read('<I')
    arrays = []
    for _ in range(count):
        (ndim,) = read('<I')
        shape = read(f'<{ndim}I')
        n = int(np.prod(shape)) if ndim else 1
        raw = buf.read(8 * n)
        if len(raw) != 8 * n:
            raise InvalidFileFormat('truncated parameter block')
        arrays.append(np.frombuffer(raw, dtype='<f8').astype(np.float64).reshape(shape))
    if buf.read(1):
        raise InvalidFileFormat('trailing bytes after parameter blocks')
    template = init_params(arch, 0)
    if len(arrays) != len(template.arrays()):
        raise InvalidFileFormat(f'expected {len(template.arrays())} arrays, found {len(arrays)}')
    try:
        return template.with_arrays(arrays)
    except ShapeMismatch as e:
        raise InvalidFileFormat(str(e)) from e


def save_params(path: Union[str, Path], params: NetworkParams) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path: Union[str, Path]) -> NetworkParams:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise InvalidFileFormat(f'{path}: {e}') from e
    return params_from_bytes(data)
