"""Four-stage selective-state-space image encoder.

Pipeline: non-overlapping patch embedding, then four stages of pre-norm
residual scan blocks over raster-flattened tokens, with a 2x2 strided
linear downsample (channel doubling) between stages.  Each scan block runs
a diagonal input-selective recurrence in one or two raster directions
(reverse direction scans the reversed sequence; outputs are averaged).
A linear head over the globally pooled last stage produces logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as T
from .tensor import ShapeMismatch, Tensor

LN_EPS = 1e-5
# discrete decay ~0.9 at delta = 1
A_LOG_INIT = float(np.log(0.105))


@dataclass
class EncoderConfig:
    num_classes: int
    in_channels: int = 3
    image_size: int = 32
    patch_size: int = 4
    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    state_dim: int = 8
    blocks_per_stage: int = 1
    scan_directions: int = 2

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ShapeMismatch("image_size must be divisible by patch_size")
        if (self.image_size // self.patch_size) % 8 != 0:
            raise ShapeMismatch("patch grid must be divisible by 8 for four stages")
        for a, b in zip(self.stage_channels, self.stage_channels[1:]):
            if b != 2 * a:
                raise ShapeMismatch("stage channels must double per stage")
        if self.scan_directions not in (1, 2):
            raise ValueError("scan_directions must be 1 or 2")

    def grid_size(self, stage: int) -> int:
        """Spatial side length H_i = W_i of stage ``stage`` (1-based)."""
        return (self.image_size // self.patch_size) >> (stage - 1)


@dataclass
class SSMBlockParams:
    """Per-block parameters: diagonal decay (stored as log of the negated
    continuous value), token->state projections, per-token step size, skip
    weight, and the pre-norm gain/bias."""

    a_log: Tensor
    w_b: Tensor
    w_c: Tensor
    w_delta: Tensor
    b_delta: Tensor
    d: Tensor
    ln_g: Tensor
    ln_b: Tensor


@dataclass
class StateEmbedding:
    f: Tensor  # B x C_i x H_i x W_i
    stage: int


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    """Token-wise normalization over the channel axis."""
    m = T.mean(x, axes=[-1], keepdims=True)
    centered = x - m
    var = T.mean(centered * centered, axes=[-1], keepdims=True)
    return centered / T.sqrt(var + LN_EPS) * g + b


def grid_to_tokens(f: Tensor) -> Tensor:
    """B,C,H,W -> B,H*W,C raster order."""
    b, c, h, w = f.shape
    return T.reshape(T.transpose(f, (0, 2, 3, 1)), (b, h * w, c))


def tokens_to_grid(tok: Tensor, h: int, w: int) -> Tensor:
    b, l, c = tok.shape
    if l != h * w:
        raise ShapeMismatch(f"{l} tokens cannot fill a {h}x{w} grid")
    return T.transpose(T.reshape(tok, (b, h, w, c)), (0, 3, 1, 2))


def _blockify(x: Tensor, block: int) -> Tensor:
    """B,C,H,W -> B, (H/bk * W/bk), C*bk*bk tokens of non-overlapping blocks."""
    b, c, h, w = x.shape
    if h % block or w % block:
        raise ShapeMismatch(f"spatial dims {h}x{w} not divisible by {block}")
    hb, wb = h // block, w // block
    x = T.reshape(x, (b, c, hb, block, wb, block))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    return T.reshape(x, (b, hb * wb, c * block * block))


def _scan_op(u: Tensor, delta: Tensor, a: Tensor, bm: Tensor, cm: Tensor,
             d: Tensor) -> Tensor:
    """Tape node around the scan kernels; backward runs the adjoint kernel."""
    args = tuple(np.ascontiguousarray(t.data) for t in (u, delta, a, bm, cm, d))
    y, hs = kernels.scan_forward(*args)

    def grad_fn(g):
        return kernels.scan_backward(np.ascontiguousarray(g), *args, hs)

    return T.from_op(y, (u, delta, a, bm, cm, d), grad_fn, "selective_scan")


def selective_scan(tokens: Tensor, params: SSMBlockParams) -> Tensor:
    """Input-selective diagonal recurrence over a token sequence.

    Step size, input and output coefficients are all computed from the
    current token; the discrete decay exp(delta * a) stays in (0, 1)
    because a = -exp(a_log) < 0 and delta = softplus(.) > 0.
    """
    if tokens.ndim != 3 or tokens.shape[1] < 1:
        raise ShapeMismatch(f"selective_scan expects B,L,C with L >= 1, got {tokens.shape}")
    delta = T.softplus(T.matmul(tokens, params.w_delta) + params.b_delta)
    bm = T.matmul(tokens, params.w_b)
    cm = T.matmul(tokens, params.w_c)
    a = -T.exp(params.a_log)
    return _scan_op(tokens, delta, a, bm, cm, params.d)


class Encoder:
    """Parameter container plus the forward pipeline."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        p = cfg.patch_size
        c1 = cfg.stage_channels[0]
        self._add("patch.w", _uniform(rng, (cfg.in_channels * p * p, c1),
                                      cfg.in_channels * p * p))
        self._add("patch.b", np.zeros(c1))
        self.blocks: list[list[SSMBlockParams]] = []
        n = cfg.state_dim
        for i, c in enumerate(cfg.stage_channels, start=1):
            stage_blocks = []
            for j in range(cfg.blocks_per_stage):
                pre = f"stage{i}.b{j}."
                blk = SSMBlockParams(
                    a_log=self._add(pre + "a_log", np.full((c, n), A_LOG_INIT)),
                    w_b=self._add(pre + "w_b", _uniform(rng, (c, n), c)),
                    w_c=self._add(pre + "w_c", _uniform(rng, (c, n), c)),
                    w_delta=self._add(pre + "w_delta", _uniform(rng, (c, c), c)),
                    b_delta=self._add(pre + "b_delta", np.zeros(c)),
                    d=self._add(pre + "d", np.ones(c)),
                    ln_g=self._add(pre + "ln_g", np.ones(c)),
                    ln_b=self._add(pre + "ln_b", np.zeros(c)),
                )
                stage_blocks.append(blk)
            self.blocks.append(stage_blocks)
        self.downs = []
        for i in range(3):
            c = cfg.stage_channels[i]
            w = self._add(f"down{i + 1}.w", _uniform(rng, (4 * c, 2 * c), 4 * c))
            b = self._add(f"down{i + 1}.b", np.zeros(2 * c))
            self.downs.append((w, b))
        c4 = cfg.stage_channels[3]
        # zero head: exact ln(K) loss at step 0, gradients arrive via the head
        self.head_w = self._add("head.w", np.zeros((c4, cfg.num_classes)))
        self.head_b = self._add("head.b", np.zeros(cfg.num_classes))

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def patchify(self, images: Tensor) -> Tensor:
        """B,3,H,W images -> stage-0 token grid B,C1,H1,W1."""
        cfg = self.cfg
        if images.ndim != 4 or images.shape[1] != cfg.in_channels:
            raise ShapeMismatch(f"expected B,{cfg.in_channels},H,W images, got {images.shape}")
        tok = _blockify(images, cfg.patch_size)
        tok = T.matmul(tok, self.params["patch.w"]) + self.params["patch.b"]
        g = cfg.grid_size(1)
        return tokens_to_grid(tok, g, g)

    def _block_forward(self, tok: Tensor, blk: SSMBlockParams) -> Tensor:
        xn = layer_norm(tok, blk.ln_g, blk.ln_b)
        y = selective_scan(xn, blk)
        if self.cfg.scan_directions == 2:
            yr = T.flip(selective_scan(T.flip(xn, 1), blk), 1)
            y = 0.5 * (y + yr)
        return tok + y

    def run_stage(self, stage: int, f: Tensor) -> Tensor:
        """Stage ``stage`` (1-based) output from the previous feature map
        (the patch grid for stage 1)."""
        if stage > 1:
            w, b = self.downs[stage - 2]
            tok = _blockify(f, 2)
            tok = T.matmul(tok, w) + b
        else:
            tok = grid_to_tokens(f)
        for blk in self.blocks[stage - 1]:
            tok = self._block_forward(tok, blk)
        g = self.cfg.grid_size(stage)
        return tokens_to_grid(tok, g, g)

    def encode(self, images: Tensor) -> list[StateEmbedding]:
        """All four stage outputs F^1..F^4."""
        f = self.patchify(images)
        out = []
        for i in range(1, 5):
            f = self.run_stage(i, f)
            out.append(StateEmbedding(f=f, stage=i))
        return out

    def classify(self, f4: Tensor) -> Tensor:
        """Global average pool over space, then the linear head."""
        if f4.shape[1] != self.cfg.stage_channels[3]:
            raise ShapeMismatch(f"stage-4 features must have {self.cfg.stage_channels[3]} channels")
        pooled = T.mean(f4, axes=[2, 3])
        return T.matmul(pooled, self.head_w) + self.head_b
