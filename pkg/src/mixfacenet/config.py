"""Declarative network configs, the MixFaceNet presets, and their text format.

Config text grammar (one ``key = value`` per line, ``#`` starts a comment)::

    name = mixfacenet-s
    input_size = 112 112
    stem_channels = 16
    width_multiplier = 1.0
    embedding_expand = 1024
    embed_dim = 512
    shuffle = false
    shuffle_placement = block
    head = in=16 out=16 kernels=3 expand=1 stride=1 act=prelu se=0
    stage = in=16 out=24 kernels=3 expand=6 stride=1 act=prelu se=0 expand_groups=2 project_groups=2
    stage = ... repeat=3

``head`` is the residual block following the stem conv; ``stage`` lines are
applied in order. ``se`` is the SE bottleneck width as a fraction of the
block's input channels; ``repeat`` stacks copies whose input is the stage's
output and whose stride is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .blocks import BlockSpec, MixConvSpec

CHANNEL_DIVISOR = 8


class ConfigError(ValueError):
    pass


def round_channels(c: float, divisor: int = CHANNEL_DIVISOR) -> int:
    """Nearest multiple of ``divisor`` (at least ``divisor``), never dropping more than 10%."""
    new_c = max(divisor, int(c + divisor / 2) // divisor * divisor)
    if new_c < 0.9 * c:
        new_c += divisor
    return new_c


@dataclass(frozen=True)
class StageSpec:
    in_channels: int
    out_channels: int
    kernel_sizes: tuple
    expand_ratio: int = 1
    stride: int = 1
    activation: str = "swish"
    se_ratio: float = 0.0
    expand_groups: int = 1
    project_groups: int = 1
    repeat: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        if self.repeat < 1:
            raise ConfigError("repeat must be at least 1")


@dataclass(frozen=True)
class NetworkConfig:
    name: str
    input_size: tuple = (112, 112)
    stem_channels: int = 16
    head: StageSpec = StageSpec(16, 16, (3,), 1, 1, "prelu")
    stages: tuple = ()
    embedding_expand: int = 1024
    embed_dim: int = 512
    width_multiplier: float = 1.0
    shuffle: bool = False
    shuffle_placement: str = "block"
    in_channels: int = 3
    gdc_size: int = 7

    def scaled(self, c: int) -> int:
        return c if self.width_multiplier == 1.0 else round_channels(c * self.width_multiplier)

    @property
    def embedding_input_channels(self) -> int:
        return self.scaled(self.stages[-1].out_channels if self.stages else self.head.out_channels)

    def _block(self, st: StageSpec, cin: int, cout: int, stride: int) -> BlockSpec:
        expansion = cin * st.expand_ratio
        se = st.se_ratio * cin
        if st.se_ratio and not float(se).is_integer():
            raise ConfigError(f"SE width {cin}*{st.se_ratio} is not an integer")
        return BlockSpec(
            in_channels=cin, out_channels=cout, expansion_channels=expansion,
            mixconv=MixConvSpec.even(expansion, st.kernel_sizes, stride),
            se_channels=int(se), activation=st.activation,
            shuffle=self.shuffle, shuffle_placement=self.shuffle_placement,
            expand_groups=st.expand_groups, project_groups=st.project_groups,
        )

    def head_block(self) -> BlockSpec:
        h = self.head
        if h.in_channels != self.stem_channels:
            raise ConfigError(f"head block input {h.in_channels} != stem channels {self.stem_channels}")
        c = self.scaled(h.in_channels)
        return self._block(h, c, self.scaled(h.out_channels), h.stride)

    def block_specs(self) -> list:
        """Resolved (width-scaled, repeat-expanded) block specs after the head."""
        self.validate()
        out = []
        for st in self.stages:
            cin, cout = self.scaled(st.in_channels), self.scaled(st.out_channels)
            out.append(self._block(st, cin, cout, st.stride))
            for _ in range(st.repeat - 1):
                out.append(self._block(st, cout, cout, 1))
        return out

    def validate(self) -> None:
        if self.width_multiplier <= 0:
            raise ConfigError("width_multiplier must be positive")
        if self.head.stride != 1 or self.head.in_channels != self.head.out_channels:
            raise ConfigError("head block must be residual (stride 1, in == out)")
        prev = self.head.out_channels
        for i, st in enumerate(self.stages):
            if st.in_channels != prev:
                raise ConfigError(
                    f"stage {i}: input channels {st.in_channels} do not chain from previous output {prev}")
            prev = st.out_channels

    def spatial_after_blocks(self) -> tuple:
        h, w = self.input_size
        h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1  # stem: k3 s2 p1
        for st in self.stages:
            h, w = (h - 1) // st.stride + 1, (w - 1) // st.stride + 1
        return h, w


def _row(cin, cout, ks, eg, pg, stride, expand, act, se):
    return StageSpec(cin, cout, tuple(ks), expand, stride, act, se, eg, pg)


# MixNet-S body; the first post-head block keeps stride 1 (no early downsampling).
_S_STAGES = (
    _row(16, 24, [3], 2, 2, 1, 6, "prelu", 0.0),
    _row(24, 24, [3], 2, 2, 1, 3, "prelu", 0.0),
    _row(24, 40, [3, 5, 7], 1, 1, 2, 6, "swish", 0.5),
    replace(_row(40, 40, [3, 5], 2, 2, 1, 6, "swish", 0.5), repeat=3),
    _row(40, 80, [3, 5, 7], 1, 2, 2, 6, "swish", 0.25),
    replace(_row(80, 80, [3, 5], 1, 2, 1, 6, "swish", 0.25), repeat=2),
    _row(80, 120, [3, 5, 7], 2, 2, 1, 6, "swish", 0.5),
    replace(_row(120, 120, [3, 5, 7, 9], 2, 2, 1, 3, "swish", 0.5), repeat=2),
    _row(120, 200, [3, 5, 7, 9, 11], 1, 1, 2, 6, "swish", 0.5),
    replace(_row(200, 200, [3, 5, 7, 9], 1, 2, 1, 6, "swish", 0.5), repeat=2),
)

# MixNet-M body, same substitutions.
_M_STAGES = (
    _row(24, 32, [3, 5, 7], 2, 2, 1, 6, "prelu", 0.0),
    _row(32, 32, [3], 2, 2, 1, 3, "prelu", 0.0),
    _row(32, 40, [3, 5, 7, 9], 1, 1, 2, 6, "swish", 0.5),
    replace(_row(40, 40, [3, 5], 2, 2, 1, 6, "swish", 0.5), repeat=3),
    _row(40, 80, [3, 5, 7], 1, 1, 2, 6, "swish", 0.25),
    replace(_row(80, 80, [3, 5, 7, 9], 2, 2, 1, 6, "swish", 0.25), repeat=3),
    _row(80, 120, [3], 1, 1, 1, 6, "swish", 0.5),
    replace(_row(120, 120, [3, 5, 7, 9], 2, 2, 1, 3, "swish", 0.5), repeat=3),
    _row(120, 200, [3, 5, 7, 9], 1, 1, 2, 6, "swish", 0.5),
    replace(_row(200, 200, [3, 5, 7, 9], 1, 2, 1, 6, "swish", 0.5), repeat=3),
)

_NANO_STAGES = (
    _row(8, 16, [3, 5], 1, 1, 2, 3, "swish", 0.5),
    _row(16, 24, [3, 5, 7], 1, 1, 2, 3, "swish", 0.5),
)

_BASE = {
    "mixfacenet-s": NetworkConfig("mixfacenet-s", stem_channels=16,
                                  head=_row(16, 16, [3], 1, 1, 1, 1, "prelu", 0.0), stages=_S_STAGES),
    "mixfacenet-xs": NetworkConfig("mixfacenet-xs", stem_channels=16,
                                   head=_row(16, 16, [3], 1, 1, 1, 1, "prelu", 0.0), stages=_S_STAGES,
                                   width_multiplier=0.5),
    "mixfacenet-m": NetworkConfig("mixfacenet-m", stem_channels=24,
                                  head=_row(24, 24, [3], 1, 1, 1, 1, "prelu", 0.0), stages=_M_STAGES),
    "mixfacenet-nano": NetworkConfig("mixfacenet-nano", input_size=(56, 56), stem_channels=8,
                                     head=_row(8, 8, [3], 1, 1, 1, 1, "prelu", 0.0), stages=_NANO_STAGES,
                                     embedding_expand=128, embed_dim=64),
}

PRESETS = tuple(list(_BASE) + ["shuffle" + k for k in _BASE])


def preset(name: str) -> NetworkConfig:
    """Config for a named preset; ``shuffle<name>`` enables channel shuffle."""
    key = name.lower()
    if key in _BASE:
        return _BASE[key]
    if key.startswith("shuffle") and key[len("shuffle"):] in _BASE:
        return replace(_BASE[key[len("shuffle"):]], name=key, shuffle=True)
    raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")


def _stage_to_text(st: StageSpec) -> str:
    parts = [f"in={st.in_channels}", f"out={st.out_channels}",
             "kernels=" + ",".join(str(k) for k in st.kernel_sizes),
             f"expand={st.expand_ratio}", f"stride={st.stride}", f"act={st.activation}",
             f"se={st.se_ratio:g}", f"expand_groups={st.expand_groups}",
             f"project_groups={st.project_groups}"]
    if st.repeat != 1:
        parts.append(f"repeat={st.repeat}")
    return " ".join(parts)


def to_text(cfg: NetworkConfig) -> str:
    lines = [
        f"name = {cfg.name}",
        f"input_size = {cfg.input_size[0]} {cfg.input_size[1]}",
        f"in_channels = {cfg.in_channels}",
        f"stem_channels = {cfg.stem_channels}",
        f"width_multiplier = {cfg.width_multiplier!r}",
        f"embedding_expand = {cfg.embedding_expand}",
        f"embed_dim = {cfg.embed_dim}",
        f"gdc_size = {cfg.gdc_size}",
        f"shuffle = {str(cfg.shuffle).lower()}",
        f"shuffle_placement = {cfg.shuffle_placement}",
        f"head = {_stage_to_text(cfg.head)}",
    ]
    lines += [f"stage = {_stage_to_text(st)}" for st in cfg.stages]
    return "\n".join(lines) + "\n"


_STAGE_KEYS = {"in": "in_channels", "out": "out_channels", "kernels": "kernel_sizes",
               "expand": "expand_ratio", "stride": "stride", "act": "activation",
               "se": "se_ratio", "expand_groups": "expand_groups",
               "project_groups": "project_groups", "repeat": "repeat"}


def _parse_stage(text: str, lineno: int) -> StageSpec:
    kw = {}
    for tok in text.split():
        key, sep, val = tok.partition("=")
        if not sep or key not in _STAGE_KEYS:
            raise ConfigError(f"line {lineno}: bad stage field {tok!r}")
        name = _STAGE_KEYS[key]
        try:
            if name == "kernel_sizes":
                kw[name] = tuple(int(v) for v in val.split(","))
            elif name == "activation":
                kw[name] = val
            elif name == "se_ratio":
                kw[name] = float(val)
            else:
                kw[name] = int(val)
        except ValueError:
            raise ConfigError(f"line {lineno}: cannot parse {tok!r}") from None
    for req in ("in_channels", "out_channels", "kernel_sizes"):
        if req not in kw:
            raise ConfigError(f"line {lineno}: stage is missing {req}")
    return StageSpec(**kw)


def from_text(text: str) -> NetworkConfig:
    fields: dict = {}
    stages = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        try:
            if key == "stage":
                stages.append(_parse_stage(val, lineno))
            elif key == "head":
                fields["head"] = _parse_stage(val, lineno)
            elif key == "name" or key == "shuffle_placement":
                fields[key] = val
            elif key == "input_size":
                h, w = val.split()
                fields[key] = (int(h), int(w))
            elif key in ("in_channels", "stem_channels", "embedding_expand", "embed_dim", "gdc_size"):
                fields[key] = int(val)
            elif key == "width_multiplier":
                fields[key] = float(val)
            elif key == "shuffle":
                if val not in ("true", "false"):
                    raise ConfigError(f"line {lineno}: shuffle must be true or false")
                fields[key] = val == "true"
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: cannot parse value {val!r} for {key}") from None
    if "name" not in fields:
        raise ConfigError("config needs a name")
    cfg = NetworkConfig(stages=tuple(stages), **fields)
    cfg.validate()
    return cfg
