"""Random small layers and inputs shared by the complexity and acceptance tests."""

import numpy as np

from mixfacenet.blocks import BlockSpec, GroupedPointwise, MixBlock, MixConv, MixConvSpec, SqueezeExcite
from mixfacenet.layers import BatchNorm2d, Conv2d, GlobalAvgPool, PReLU, Sigmoid, Swish

KINDS = ("conv", "dwconv", "mixconv", "pointwise", "se", "bn", "prelu", "swish", "sigmoid", "gap", "block")


def random_layer(rng, kind=None):
    """(module, input_shape) for a random small layer of ``kind``."""
    kind = kind or KINDS[rng.integers(len(KINDS))]
    hw = int(rng.integers(3, 8))
    n = int(rng.integers(1, 3))
    mk = np.random.default_rng(int(rng.integers(2**31)))
    if kind == "conv":
        g = int(rng.integers(1, 3))
        cin, cout = g * int(rng.integers(1, 4)), g * int(rng.integers(1, 4))
        k = int(rng.choice([1, 3, 5]))
        m = Conv2d(cin, cout, k, int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1)), g,
                   bias=bool(rng.integers(2)), rng=mk, dtype=np.float64)
        return m, (n, cin, hw, hw)
    if kind == "dwconv":
        c, k = int(rng.integers(1, 6)), int(rng.choice([3, 5, 7]))
        return Conv2d(c, c, k, int(rng.integers(1, 3)), k // 2, c, rng=mk, dtype=np.float64), (n, c, hw, hw)
    if kind == "mixconv":
        ks = tuple(int(k) for k in rng.choice([3, 5, 7], size=int(rng.integers(1, 4)), replace=False))
        c = int(rng.integers(len(ks), 9))
        return MixConv(MixConvSpec.even(c, ks, int(rng.integers(1, 3))), mk, np.float64), (n, c, hw, hw)
    if kind == "pointwise":
        g = int(rng.integers(1, 3))
        cin, cout = int(rng.integers(g, 8)), int(rng.integers(g, 8))
        return GroupedPointwise(cin, cout, g, mk, np.float64), (n, cin, hw, hw)
    if kind == "se":
        c = int(rng.integers(2, 9))
        act = "swish" if rng.integers(2) else "prelu"
        return SqueezeExcite(c, int(rng.integers(1, c)), act, mk, np.float64), (n, c, hw, hw)
    if kind == "block":
        cin = 2 * int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        cout = cin if stride == 1 and rng.integers(2) else 2 * int(rng.integers(1, 4))
        ks = (3, 5) if rng.integers(2) else (3,)
        exp = max(len(ks), cin * int(rng.integers(1, 4)))
        spec = BlockSpec(cin, cout, exp, MixConvSpec.even(exp, ks, stride),
                         se_channels=int(rng.integers(0, 3)),
                         activation="swish" if rng.integers(2) else "prelu",
                         shuffle=bool(rng.integers(2)),
                         shuffle_placement="mixconv" if exp % 2 == 0 and rng.integers(2) else "block")
        return MixBlock(spec, mk, np.float64).eval(), (n, cin, hw, hw)
    c = int(rng.integers(1, 6))
    shape = (n, c, hw, hw)
    if kind == "bn":
        m = BatchNorm2d(c, dtype=np.float64).eval()
        m.gamma.data = rng.uniform(0.5, 2, c)
        m.beta.data = rng.standard_normal(c)
        m.running_mean.data = rng.standard_normal(c)
        m.running_var.data = rng.uniform(0.5, 2, c)
        return m, shape
    if kind == "prelu":
        m = PReLU(c, dtype=np.float64)
        m.alpha.data = rng.uniform(0, 0.5, c)
        return m, shape
    return {"swish": Swish, "sigmoid": Sigmoid, "gap": GlobalAvgPool}[kind](), shape
