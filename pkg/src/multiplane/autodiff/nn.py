"""Neural building blocks: convolution modules and the encoder-decoder Unet.

Architecture of `Unet` (documented here because it is the ground truth for
the parameter-count tests):

  stem    conv k (in -> base), leaky-relu
  down i  conv k stride 2 (ch -> 2ch), leaky-relu; conv k (2ch -> 2ch),
          leaky-relu                                   [i = 1..levels]
  up i    bilinear 2x upsample; conv k (ch -> ch/2), leaky-relu;
          channel-concat with the skip at that resolution;
          conv k (ch -> ch/2), leaky-relu              [i = levels..1]
  head    conv 1x1 (base -> out), linear

All activations are leaky-relu with slope 0.2 and there is no
normalization. Inputs whose spatial dims are not divisible by 2^levels are
reflect-padded on the bottom/right and the output is cropped back.

Initialization is fan-in-scaled uniform (He-style): U(-b, b) with
b = sqrt(6 / fan_in); biases start at zero.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class UnetSpec:
    in_channels: int
    out_channels: int
    base_channels: int = 64
    levels: int = 3
    kernel_size: int = 3

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")


class Conv2d:
    """Learnable convolution; weight (O, C, k, k), bias (O,)."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, rng=None, name="conv", dtype=np.float32):
        self.stride = stride
        self.name = name
        k = kernel_size
        fan_in = in_channels * k * k
        bound = np.sqrt(6.0 / fan_in)
        if rng is None:
            rng = np.random.default_rng(0)
        w = rng.uniform(-bound, bound, size=(out_channels, in_channels, k, k))
        self.weight = Tensor(w.astype(dtype), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride)

    def parameters(self):
        return [(self.weight.name, self.weight), (self.bias.name, self.bias)]

    @property
    def param_count(self):
        return self.weight.size + self.bias.size


class Unet:
    """Encoder-decoder with skip concatenations; see module docstring."""

    def __init__(self, spec, rng=None, name="unet", dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.spec = spec
        self.name = name
        k = spec.kernel_size
        b = spec.base_channels

        def conv(cin, cout, tag, stride=1, ksize=k):
            return Conv2d(cin, cout, ksize, stride=stride, rng=rng, name=f"{name}.{tag}", dtype=dtype)

        self.stem = conv(spec.in_channels, b, "stem")
        self.downs = []
        ch = b
        for i in range(spec.levels):
            self.downs.append((conv(ch, 2 * ch, f"down{i + 1}a", stride=2), conv(2 * ch, 2 * ch, f"down{i + 1}b")))
            ch *= 2
        self.ups = []
        for i in range(spec.levels):
            self.ups.append((conv(ch, ch // 2, f"up{i + 1}a"), conv(ch, ch // 2, f"up{i + 1}b")))
            ch //= 2
        self.head = conv(b, spec.out_channels, "head", ksize=1)

    def __call__(self, x):
        n, c, h, w = x.shape
        m = 1 << self.spec.levels
        pad_h = (-h) % m
        pad_w = (-w) % m
        if pad_h or pad_w:
            x = ops.pad_reflect2d(x, pad_h, pad_w)

        act = lambda t: ops.leaky_relu(t, LEAKY_SLOPE)
        feat = act(self.stem(x))
        skips = [feat]
        for conv_a, conv_b in self.downs:
            feat = act(conv_b(act(conv_a(feat))))
            skips.append(feat)
        for i, (conv_a, conv_b) in enumerate(self.ups):
            feat = act(conv_a(ops.upsample2x(feat)))
            skip = skips[-(i + 2)]
            feat = act(conv_b(ops.concat([feat, skip], axis=1)))
        out = self.head(feat)
        if pad_h or pad_w:
            out = ops.crop2d(out, h, w)
        return out

    def parameters(self):
        params = self.stem.parameters()
        for conv_a, conv_b in self.downs:
            params += conv_a.parameters() + conv_b.parameters()
        for conv_a, conv_b in self.ups:
            params += conv_a.parameters() + conv_b.parameters()
        params += self.head.parameters()
        return params

    @property
    def param_count(self):
        return sum(t.size for _, t in self.parameters())


def build_unet(spec, seed=0, name="unet", dtype=np.float32):
    """Construct a parameterized Unet with seeded initialization."""
    return Unet(spec, rng=np.random.default_rng(np.random.PCG64(seed)), name=name, dtype=dtype)


def collect_parameters(*modules):
    """Merge module parameter lists into one ordered name -> Tensor dict."""
    params = {}
    for mod in modules:
        for pname, tensor in mod.parameters():
            if pname in params:
                raise ValueError(f"duplicate parameter name {pname!r}")
            params[pname] = tensor
    return params
