"""Pre-activation bottleneck ResNet for 32x32 inputs.

Depth d uses (d - 2) / 9 bottleneck blocks per stage across three stages
with base widths 16/32/64 (x4 at the block output). An attention module,
when configured, transforms the residual branch output of every block
immediately before the skip addition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import attention as att
from .attention import DecisionRecord, SemParams
from .rng import RngState
from .tensor import Tensor, add, affine, batch_norm, conv2d, global_avg_pool, relu, reshape

STAGE_WIDTHS = (16, 32, 64)
BLOCK_EXPANSION = 4
ATTENTION_MODES = ("none", "se", "eca", "ie", "sem", "random_single", "random_double")


def depth_to_blocks(depth: int) -> int:
    """Blocks per stage for a bottleneck depth: n = (depth - 2) / 9."""
    if depth < 11 or (depth - 2) % 9 != 0:
        lower = depth - (depth - 2) % 9
        if lower < 11:
            lower = 11
        raise ValueError(
            f"invalid depth {depth}: need (depth - 2) divisible by 9; "
            f"nearest valid depths are {lower} and {lower + 9}")
    return (depth - 2) // 9


def assign_random_operators(n_blocks: int, arity: int, seed: int) -> list[tuple[str, ...]]:
    """Uniform i.i.d. per-block operator choice, reproducible from the seed.

    Arity 1 draws one of the three operators; arity 2 draws one of the
    three unordered pairs.
    """
    if arity not in (1, 2):
        raise ValueError(f"arity must be 1 or 2, got {arity}")
    gen = RngState(seed, stream=arity).generator()
    if arity == 1:
        pool = [(op,) for op in att.ALL_OPERATORS]
    else:
        pool = [("fc", "cnn"), ("fc", "ie"), ("cnn", "ie")]
    picks = gen.integers(0, len(pool), size=n_blocks)
    return [pool[i] for i in picks]


@dataclass
class NetworkConfig:
    """Backbone depth/width/attention description."""

    depth: int = 20
    num_classes: int = 10
    attention: str = "none"
    operator_set: tuple[str, ...] = att.ALL_OPERATORS
    reduction: int = 16
    switch_activation: str = "sigmoid"
    unit_decision: bool = False     # drop the decision network (w = 1)
    attention_seed: int = 0         # random_single / random_double assignment
    dtype: object = np.float32

    def validate(self) -> "NetworkConfig":
        depth_to_blocks(self.depth)
        if self.attention not in ATTENTION_MODES:
            raise ValueError(
                f"unknown attention mode {self.attention!r}; valid: {ATTENTION_MODES}")
        self.operator_set = att.normalize_operator_set(self.operator_set)
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        return self


def sem_block_param_count(channels: int, n_operators: int = 3, reduction: int = 16) -> int:
    """Closed-form parameter overhead of one full attention layer:
    N*C for the decision network, 2*C*floor(C/r) for the bottleneck,
    k for the channel kernel, and 2 for the enhance scale/shift."""
    k = att.eca_kernel_size(channels)
    return (n_operators * channels + 2 * channels * (channels // reduction) + k + 2)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class _Conv:
    def __init__(self, cin: int, cout: int, k: int, stride: int, pad: int,
                 gen: np.random.Generator, dtype):
        fan_in = cin * k * k
        std = math.sqrt(2.0 / fan_in)
        self.weight = Tensor(gen.normal(0.0, std, size=(cout, cin, k, k)).astype(dtype),
                             requires_grad=True)
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, stride=self.stride, pad=self.pad)

    def named(self, prefix):
        yield prefix + ".weight", self.weight


class _BatchNorm:
    def __init__(self, channels: int, dtype):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(x, self.gamma, self.beta,
                          self.running_mean, self.running_var, training)

    def named(self, prefix):
        yield prefix + ".gamma", self.gamma
        yield prefix + ".beta", self.beta

    def named_buffers(self, prefix):
        yield prefix + ".running_mean", self.running_mean
        yield prefix + ".running_var", self.running_var


class _Linear:
    def __init__(self, cin: int, cout: int, gen: np.random.Generator, dtype):
        bound = 1.0 / math.sqrt(cin)
        self.weight = Tensor(gen.uniform(-bound, bound, size=(cout, cin)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)

    def named(self, prefix):
        yield prefix + ".weight", self.weight
        yield prefix + ".bias", self.bias


class _AttentionModule:
    """Per-block channel gate in one of the configured modes."""

    BASELINE = {"se": "fc", "eca": "cnn", "ie": "ie"}

    def __init__(self, channels: int, mode: str, operators: tuple[str, ...],
                 cfg: NetworkConfig, gen: np.random.Generator):
        self.mode = mode
        self.channels = channels
        with_decision = mode == "sem" and not cfg.unit_decision
        self.unit_decision = not with_decision
        self.params: SemParams = att.init_sem_params(
            channels, operators,
            reduction=cfg.reduction,
            switch_activation=cfg.switch_activation,
            rng=gen, dtype=cfg.dtype,
            with_decision=with_decision)

    def __call__(self, x: Tensor, capture: dict | None = None) -> Tensor:
        if self.mode in self.BASELINE:
            return att.baseline_forward(x, self.mode, self.params, capture=capture)
        return att.sem_forward(x, self.params,
                               force_unit_decision=self.unit_decision,
                               capture=capture)

    def named(self, prefix):
        yield from self.params.named_tensors(prefix + ".")


class _Bottleneck:
    """BN-ReLU-1x1 / BN-ReLU-3x3 / BN-ReLU-1x1 with pre-activation skip."""

    def __init__(self, cin: int, width: int, stride: int,
                 attention_module: _AttentionModule | None,
                 gen: np.random.Generator, dtype):
        cout = width * BLOCK_EXPANSION
        self.bn1 = _BatchNorm(cin, dtype)
        self.conv1 = _Conv(cin, width, 1, 1, 0, gen, dtype)
        self.bn2 = _BatchNorm(width, dtype)
        self.conv2 = _Conv(width, width, 3, stride, 1, gen, dtype)
        self.bn3 = _BatchNorm(width, dtype)
        self.conv3 = _Conv(width, cout, 1, 1, 0, gen, dtype)
        self.downsample = None
        if stride != 1 or cin != cout:
            self.downsample = _Conv(cin, cout, 1, stride, 0, gen, dtype)
        self.attention = attention_module
        self.out_channels = cout

    def __call__(self, x: Tensor, training: bool,
                 capture: dict | None = None,
                 attention_identity: bool = False) -> Tensor:
        pre = relu(self.bn1(x, training))
        residual = self.downsample(pre) if self.downsample is not None else x
        out = self.conv1(pre)
        out = self.conv2(relu(self.bn2(out, training)))
        out = self.conv3(relu(self.bn3(out, training)))
        if self.attention is not None and not attention_identity:
            out = self.attention(out, capture)
        return add(out, residual)

    def named(self, prefix):
        parts = [("bn1", self.bn1), ("conv1", self.conv1), ("bn2", self.bn2),
                 ("conv2", self.conv2), ("bn3", self.bn3), ("conv3", self.conv3)]
        if self.downsample is not None:
            parts.append(("downsample", self.downsample))
        if self.attention is not None:
            parts.append(("attention", self.attention))
        for name, layer in parts:
            yield from layer.named(f"{prefix}.{name}")

    def named_buffers(self, prefix):
        for name, bn in (("bn1", self.bn1), ("bn2", self.bn2), ("bn3", self.bn3)):
            yield from bn.named_buffers(f"{prefix}.{name}")


class Model:
    """Stem, three bottleneck stages, BN-ReLU head, linear classifier."""

    def __init__(self, cfg: NetworkConfig, rng: RngState):
        cfg.validate()
        self.cfg = cfg
        gen = rng.generator() if isinstance(rng, RngState) else rng
        dtype = cfg.dtype
        n = depth_to_blocks(cfg.depth)
        self.blocks_per_stage = n

        per_block_ops = self._operator_plan(n)
        self.stem = _Conv(3, STAGE_WIDTHS[0], 3, 1, 1, gen, dtype)
        self.stages: list[list[_Bottleneck]] = []
        cin = STAGE_WIDTHS[0]
        block_index = 0
        for stage_idx, width in enumerate(STAGE_WIDTHS):
            blocks = []
            for b in range(n):
                stride = 2 if stage_idx > 0 and b == 0 else 1
                module = None
                if cfg.attention != "none":
                    ops = per_block_ops[block_index]
                    module = _AttentionModule(width * BLOCK_EXPANSION, cfg.attention,
                                              ops, cfg, gen)
                blocks.append(_Bottleneck(cin, width, stride, module, gen, dtype))
                cin = width * BLOCK_EXPANSION
                block_index += 1
            self.stages.append(blocks)
        self.head_bn = _BatchNorm(cin, dtype)
        self.classifier = _Linear(cin, cfg.num_classes, gen, dtype)

    def _operator_plan(self, n: int) -> list[tuple[str, ...]]:
        total = 3 * n
        mode = self.cfg.attention
        if mode == "random_single":
            return assign_random_operators(total, 1, self.cfg.attention_seed)
        if mode == "random_double":
            return assign_random_operators(total, 2, self.cfg.attention_seed)
        if mode == "sem":
            return [self.cfg.operator_set] * total
        if mode in _AttentionModule.BASELINE:
            return [(_AttentionModule.BASELINE[mode],)] * total
        return [att.ALL_OPERATORS] * total  # "none": unused

    def forward(self, x: Tensor, training: bool = False,
                capture_decisions: list[DecisionRecord] | None = None,
                attention_identity: bool = False) -> Tensor:
        out = self.stem(x)
        layer_index = 0
        for stage_idx, blocks in enumerate(self.stages):
            for block in blocks:
                capture = None
                if capture_decisions is not None and block.attention is not None:
                    capture = {}
                out = block(out, training, capture, attention_identity)
                if capture is not None:
                    capture_decisions.append(DecisionRecord(
                        layer_index=layer_index,
                        stage=stage_idx + 1,
                        channels=block.out_channels,
                        operators=block.attention.params.operators,
                        weights=capture.get("decision")))
                layer_index += 1
        out = relu(self.head_bn(out, training))
        pooled = global_avg_pool(out)
        flat = reshape(pooled, (x.shape[0], pooled.shape[1]))
        return self.classifier(flat)

    def __call__(self, x: Tensor, training: bool = False, **kw) -> Tensor:
        return self.forward(x, training, **kw)

    # -- parameter and state plumbing ------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = list(self.stem.named("stem"))
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                out.extend(block.named(f"stage{s + 1}.block{b}"))
        out.extend(self.head_bn.named("head.bn"))
        out.extend(self.classifier.named("head.fc"))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                out.extend(block.named_buffers(f"stage{s + 1}.block{b}"))
        out.extend(self.head_bn.named_buffers("head.bn"))
        return out

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {name: t.data for name, t in self.named_parameters()}
        state.update({name: buf for name, buf in self.named_buffers()})
        return state

    def load_state_arrays(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        own = set(own_params) | set(own_buffers)
        missing = own - set(state)
        extra = set(state) - own
        if strict and (missing or extra):
            raise ValueError(f"state mismatch: missing={sorted(missing)} "
                             f"unexpected={sorted(extra)}")
        for name, arr in state.items():
            target = own_params.get(name)
            if target is not None:
                if target.data.shape != arr.shape:
                    raise ValueError(f"shape mismatch for {name}: "
                                     f"{target.data.shape} vs {arr.shape}")
                target.data[...] = arr.astype(target.data.dtype, copy=False)
            elif name in own_buffers:
                own_buffers[name][...] = arr.astype(own_buffers[name].dtype, copy=False)

    def attention_layer_info(self) -> list[tuple[int, int, int]]:
        """(layer_index, stage, channels) for every block carrying attention."""
        info = []
        idx = 0
        for s, blocks in enumerate(self.stages):
            for block in blocks:
                if block.attention is not None:
                    info.append((idx, s + 1, block.out_channels))
                idx += 1
        return info

    def locate_nonfinite(self, x: Tensor, training: bool) -> str | None:
        """Name the first layer whose output is non-finite, if any."""
        out = self.stem(x)
        if not np.isfinite(out.data).all():
            return "stem"
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                out = block(out, training)
                if not np.isfinite(out.data).all():
                    return f"stage{s + 1}.block{b}"
        out = relu(self.head_bn(out, training))
        if not np.isfinite(out.data).all():
            return "head.bn"
        pooled = global_avg_pool(out)
        logits = self.classifier(reshape(pooled, (x.shape[0], pooled.shape[1])))
        if not np.isfinite(logits.data).all():
            return "head.fc"
        return None


def build_network(cfg: NetworkConfig, rng: RngState) -> Model:
    """Construct the configured backbone with deterministic initialisation."""
    return Model(cfg, rng)
