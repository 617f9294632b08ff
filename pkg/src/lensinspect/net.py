"""Detection network: layer graph, forward pass, and conv+BN fusion.

The graph is the 24-row nano-scale layout (stem convs, C2f blocks, SPPF,
top-down/bottom-up neck, three-scale anchor-free head). Spatial sizes
assume a 640x640 input; only head channel counts depend on the class
count and the distance-bin count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .weights import MissingWeightError, ModelError, WeightShapeError, WeightStore

INPUT_SIZE = 640
STRIDES = (8, 16, 32)
SCALE_NAMES = ("p3", "p4", "p5")


@dataclass(frozen=True)
class ConvUnit:
    """One conv (+ optional BN + SiLU) parameter group inside a layer."""

    path: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    batchnorm: bool = True
    activation: bool = True

    @property
    def padding(self) -> int:
        return self.kernel // 2


@dataclass(frozen=True)
class LayerSpec:
    """One row of the architecture table."""

    name: str
    kind: str  # image | conv | c2f | sppf | upsample | concat | detect
    inputs: tuple[str, ...] = ()
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    repeat: int = 1
    shortcut: bool = False


@dataclass(frozen=True)
class FeaturePyramid:
    """Raw head outputs at strides 8/16/32, channels 4*reg_max + num_classes."""

    p3: np.ndarray
    p4: np.ndarray
    p5: np.ndarray

    def maps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.p3, self.p4, self.p5


@dataclass
class NetGraph:
    num_classes: int
    reg_max: int
    layers: tuple[LayerSpec, ...]
    channels: dict[str, int]
    units: dict[str, tuple[ConvUnit, ...]]
    output_sizes: dict[str, tuple[int, int]]

    @property
    def head_channels(self) -> int:
        return 4 * self.reg_max + self.num_classes

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def all_units(self) -> list[ConvUnit]:
        out: list[ConvUnit] = []
        for spec in self.layers:
            out.extend(self.units.get(spec.name, ()))
        return out


# name, kind, filters, kernel, stride, repeat, shortcut, inputs
_ROWS = (
    ("image",     "image",    0,   0, 1, 1, False, ()),
    ("conv0",     "conv",     16,  3, 2, 1, False, ("image",)),
    ("conv1",     "conv",     32,  3, 2, 1, False, ("conv0",)),
    ("c2f0",      "c2f",      32,  1, 1, 1, True,  ("conv1",)),
    ("conv2",     "conv",     64,  3, 2, 1, False, ("c2f0",)),
    ("c2f1",      "c2f",      64,  1, 1, 2, True,  ("conv2",)),
    ("conv3",     "conv",     128, 3, 2, 1, False, ("c2f1",)),
    ("c2f2",      "c2f",      128, 1, 1, 2, True,  ("conv3",)),
    ("conv4",     "conv",     256, 3, 2, 1, False, ("c2f2",)),
    ("c2f3",      "c2f",      256, 1, 1, 1, True,  ("conv4",)),
    ("sppf",      "sppf",     256, 5, 1, 1, False, ("c2f3",)),
    ("upsample0", "upsample", 0,   0, 1, 1, False, ("sppf",)),
    ("concat0",   "concat",   0,   0, 1, 1, False, ("upsample0", "c2f2")),
    ("c2f4",      "c2f",      128, 1, 1, 1, False, ("concat0",)),
    ("upsample1", "upsample", 0,   0, 1, 1, False, ("c2f4",)),
    ("concat1",   "concat",   0,   0, 1, 1, False, ("upsample1", "c2f1")),
    ("c2f5",      "c2f",      64,  1, 1, 1, False, ("concat1",)),
    ("conv5",     "conv",     64,  3, 2, 1, False, ("c2f5",)),
    ("concat2",   "concat",   0,   0, 1, 1, False, ("conv5", "c2f4")),
    ("c2f6",      "c2f",      128, 1, 1, 1, False, ("concat2",)),
    ("conv6",     "conv",     128, 3, 2, 1, False, ("c2f6",)),
    ("concat3",   "concat",   0,   0, 1, 1, False, ("conv6", "sppf")),
    ("c2f7",      "c2f",      256, 1, 1, 1, False, ("concat3",)),
    ("detect",    "detect",   0,   0, 1, 1, False, ("c2f5", "c2f6", "c2f7")),
)


def _c2f_units(name: str, in_ch: int, filters: int, repeat: int) -> list[ConvUnit]:
    hidden = filters // 2
    units = [ConvUnit(f"{name}.cv1", in_ch, 2 * hidden, kernel=1)]
    for i in range(repeat):
        units.append(ConvUnit(f"{name}.m{i}.cv1", hidden, hidden, kernel=3))
        units.append(ConvUnit(f"{name}.m{i}.cv2", hidden, hidden, kernel=3))
    units.append(ConvUnit(f"{name}.cv2", (2 + repeat) * hidden, filters, kernel=1))
    return units


def _detect_units(in_channels: tuple[int, int, int], num_classes: int,
                  reg_max: int) -> list[ConvUnit]:
    box_hidden = max(16, in_channels[0] // 4, 4 * reg_max)
    cls_hidden = max(in_channels[0], min(num_classes, 100))
    units = []
    for scale, c in zip(SCALE_NAMES, in_channels):
        units += [
            ConvUnit(f"detect.{scale}.box0", c, box_hidden, kernel=3),
            ConvUnit(f"detect.{scale}.box1", box_hidden, box_hidden, kernel=3),
            ConvUnit(f"detect.{scale}.box2", box_hidden, 4 * reg_max, kernel=1,
                     batchnorm=False, activation=False),
            ConvUnit(f"detect.{scale}.cls0", c, cls_hidden, kernel=3),
            ConvUnit(f"detect.{scale}.cls1", cls_hidden, cls_hidden, kernel=3),
            ConvUnit(f"detect.{scale}.cls2", cls_hidden, num_classes, kernel=1,
                     batchnorm=False, activation=False),
        ]
    return units


def build_graph(num_classes: int, reg_max: int = 16) -> NetGraph:
    """Assemble the 24-row detection graph for the given head geometry."""
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    if reg_max < 2:
        raise ValueError(f"reg_max must be >= 2, got {reg_max}")
    layers = []
    channels: dict[str, int] = {}
    units: dict[str, tuple[ConvUnit, ...]] = {}
    sizes: dict[str, tuple[int, int]] = {}
    for name, kind, filters, kernel, stride, repeat, shortcut, inputs in _ROWS:
        spec = LayerSpec(name=name, kind=kind, inputs=inputs, filters=filters,
                         kernel=kernel, stride=stride, repeat=repeat, shortcut=shortcut)
        layers.append(spec)
        if kind == "image":
            channels[name] = 3
            sizes[name] = (INPUT_SIZE, INPUT_SIZE)
            continue
        in_ch = [channels[src] for src in inputs]
        in_sizes = [sizes[src] for src in inputs]
        if kind == "conv":
            units[name] = (ConvUnit(name, in_ch[0], filters, kernel=kernel, stride=stride),)
            channels[name] = filters
            h, w = in_sizes[0]
            sizes[name] = (ops.conv_output_size(h, kernel, stride, kernel // 2),
                           ops.conv_output_size(w, kernel, stride, kernel // 2))
        elif kind == "c2f":
            units[name] = tuple(_c2f_units(name, in_ch[0], filters, repeat))
            channels[name] = filters
            sizes[name] = in_sizes[0]
        elif kind == "sppf":
            hidden = in_ch[0] // 2
            units[name] = (
                ConvUnit(f"{name}.cv1", in_ch[0], hidden, kernel=1),
                ConvUnit(f"{name}.cv2", 4 * hidden, filters, kernel=1),
            )
            channels[name] = filters
            sizes[name] = in_sizes[0]
        elif kind == "upsample":
            channels[name] = in_ch[0]
            sizes[name] = (2 * in_sizes[0][0], 2 * in_sizes[0][1])
        elif kind == "concat":
            if len(set(in_sizes)) != 1:
                raise ModelError(f"{name}: concat inputs disagree on size {in_sizes}")
            channels[name] = sum(in_ch)
            sizes[name] = in_sizes[0]
        elif kind == "detect":
            units[name] = tuple(_detect_units(tuple(in_ch), num_classes, reg_max))
            channels[name] = 4 * reg_max + num_classes
            sizes[name] = in_sizes[0]
        else:  # pragma: no cover - table is static
            raise ValueError(kind)
    return NetGraph(num_classes=num_classes, reg_max=reg_max, layers=tuple(layers),
                    channels=channels, units=units, output_sizes=sizes)


def parameter_shapes(graph: NetGraph) -> dict[str, tuple[int, ...]]:
    """Every entry a weight store must provide for this graph (unfused)."""
    shapes: dict[str, tuple[int, ...]] = {}
    for u in graph.all_units():
        shapes[f"{u.path}.conv.weight"] = (u.out_channels, u.in_channels, u.kernel, u.kernel)
        shapes[f"{u.path}.conv.bias"] = (u.out_channels,)
        if u.batchnorm:
            for key in ("gamma", "beta", "mean", "var"):
                shapes[f"{u.path}.bn.{key}"] = (u.out_channels,)
            shapes[f"{u.path}.bn.eps"] = (1,)
    return shapes


def validate_store(graph: NetGraph, store: WeightStore) -> None:
    """Check the store binds to the graph: header, presence, shapes, orphans."""
    if store.num_classes != graph.num_classes or store.reg_max != graph.reg_max:
        raise WeightShapeError(
            f"store header (num_classes={store.num_classes}, reg_max={store.reg_max}) "
            f"does not match graph (num_classes={graph.num_classes}, "
            f"reg_max={graph.reg_max})"
        )
    expected = parameter_shapes(graph)
    if store.fused:
        expected = {n: s for n, s in expected.items() if ".bn." not in n}
    for name, shape in expected.items():
        if name not in store:
            raise MissingWeightError(f"missing weight entry {name!r}")
        if store[name].shape != shape:
            raise WeightShapeError(
                f"entry {name!r} has shape {store[name].shape}, graph expects {shape}"
            )
    orphans = sorted(set(store.entries) - set(expected))
    if orphans:
        raise WeightShapeError(
            f"store has {len(orphans)} entries the graph does not use, "
            f"e.g. {orphans[0]!r} (batchnorm entries on a fused store, or a "
            f"mismatched architecture)"
        )


def _unit_forward(store: WeightStore, unit: ConvUnit, x: np.ndarray) -> np.ndarray:
    params = ops.ConvParams(
        store[f"{unit.path}.conv.weight"], store[f"{unit.path}.conv.bias"],
        stride=(unit.stride, unit.stride), padding=(unit.padding, unit.padding),
    )
    y = ops.conv2d(x, params)
    if unit.batchnorm and not store.fused:
        y = ops.batchnorm(
            y,
            store[f"{unit.path}.bn.gamma"], store[f"{unit.path}.bn.beta"],
            store[f"{unit.path}.bn.mean"], store[f"{unit.path}.bn.var"],
            float(store[f"{unit.path}.bn.eps"][0]),
        )
    if unit.activation:
        y = ops.silu(y)
    return y


def forward(graph: NetGraph, store: WeightStore, x: np.ndarray,
            trace: dict | None = None) -> FeaturePyramid:
    """Run the network on a (1, 3, 640, 640) float32 input in [0, 1].

    When `trace` is a dict it receives every layer's activation shape,
    keyed by layer name.
    """
    x = ops.as_tensor(x)
    if x.shape != (1, 3, INPUT_SIZE, INPUT_SIZE):
        raise ops.ShapeError(
            f"network input must be (1, 3, {INPUT_SIZE}, {INPUT_SIZE}), got {x.shape}"
        )
    validate_store(graph, store)
    units = {u.path: u for u in graph.all_units()}

    def run(path: str, t: np.ndarray) -> np.ndarray:
        return _unit_forward(store, units[path], t)

    acts: dict[str, np.ndarray] = {"image": x}
    head: list[np.ndarray] = []
    for spec in graph.layers[1:]:
        srcs = [acts[s] for s in spec.inputs]
        if spec.kind == "conv":
            y = run(spec.name, srcs[0])
        elif spec.kind == "c2f":
            hidden = spec.filters // 2
            t = run(f"{spec.name}.cv1", srcs[0])
            branches = ops.split_channels(t, [hidden, hidden])
            cur = branches[-1]
            for i in range(spec.repeat):
                b = run(f"{spec.name}.m{i}.cv2", run(f"{spec.name}.m{i}.cv1", cur))
                cur = ops.add(cur, b) if spec.shortcut else b
                branches.append(cur)
            y = run(f"{spec.name}.cv2", ops.concat_channels(branches))
        elif spec.kind == "sppf":
            t = run(f"{spec.name}.cv1", srcs[0])
            p1 = ops.maxpool2d(t, kernel=5, stride=1, padding=2)
            p2 = ops.maxpool2d(p1, kernel=5, stride=1, padding=2)
            p3 = ops.maxpool2d(p2, kernel=5, stride=1, padding=2)
            y = run(f"{spec.name}.cv2", ops.concat_channels([t, p1, p2, p3]))
        elif spec.kind == "upsample":
            y = ops.upsample_nearest2x(srcs[0])
        elif spec.kind == "concat":
            y = ops.concat_channels(srcs)
        elif spec.kind == "detect":
            for scale, src in zip(SCALE_NAMES, srcs):
                box = run(f"detect.{scale}.box2",
                          run(f"detect.{scale}.box1", run(f"detect.{scale}.box0", src)))
                cls = run(f"detect.{scale}.cls2",
                          run(f"detect.{scale}.cls1", run(f"detect.{scale}.cls0", src)))
                head.append(ops.concat_channels([box, cls]))
            y = head[-1]
        else:  # pragma: no cover
            raise ValueError(spec.kind)
        if not np.isfinite(y).all():
            raise ModelError(f"non-finite activation after layer {spec.name!r}")
        acts[spec.name] = y
        if trace is not None:
            trace[spec.name] = y.shape
    return FeaturePyramid(*head)


def fuse(graph: NetGraph, store: WeightStore) -> tuple[NetGraph, WeightStore]:
    """Fold every conv+BN pair into a single conv, preserving outputs.

    w' = w * gamma / sqrt(var + eps), b' = beta + (b - mean) * gamma / sqrt(var + eps).
    """
    if store.fused:
        raise ModelError("store is already fused: no batchnorm entries to fold")
    validate_store(graph, store)
    entries: dict[str, np.ndarray] = {}
    for u in graph.all_units():
        w = store[f"{u.path}.conv.weight"].astype(np.float64)
        b = store[f"{u.path}.conv.bias"].astype(np.float64)
        if u.batchnorm:
            gamma = store[f"{u.path}.bn.gamma"].astype(np.float64)
            beta = store[f"{u.path}.bn.beta"].astype(np.float64)
            mean = store[f"{u.path}.bn.mean"].astype(np.float64)
            var = store[f"{u.path}.bn.var"].astype(np.float64)
            eps = float(store[f"{u.path}.bn.eps"][0])
            scale = gamma / np.sqrt(var + eps)
            w = w * scale[:, None, None, None]
            b = beta + (b - mean) * scale
        entries[f"{u.path}.conv.weight"] = w.astype(np.float32)
        entries[f"{u.path}.conv.bias"] = b.astype(np.float32)
    fused_store = WeightStore(num_classes=store.num_classes, reg_max=store.reg_max,
                              fused=True, entries=entries)
    return graph, fused_store


def count_layers(graph: NetGraph, fused: bool) -> int:
    """Primitive-op count of the executed network (conv/BN/SiLU/pool/...)."""
    total = 0
    for u in graph.all_units():
        total += 1  # conv
        if u.batchnorm and not fused:
            total += 1
        if u.activation:
            total += 1
    for spec in graph.layers:
        if spec.kind == "c2f":
            total += 2  # split + concat
            if spec.shortcut:
                total += spec.repeat  # residual adds
        elif spec.kind == "sppf":
            total += 4  # three maxpools + concat
        elif spec.kind in ("upsample", "concat"):
            total += 1
        elif spec.kind == "detect":
            total += len(SCALE_NAMES)  # box/cls concat per scale
    return total


def gen_weights(graph: NetGraph, seed: int) -> WeightStore:
    """Seeded synthetic weights with stable activation magnitudes.

    Conv weights are He-scaled; BN statistics are mild perturbations of
    the identity so random networks keep finite, O(1) activations.
    """
    rng = np.random.default_rng(seed)
    entries: dict[str, np.ndarray] = {}
    for u in graph.all_units():
        fan_in = u.in_channels * u.kernel * u.kernel
        # unit gain, not He: random deep stacks with amplifying BN channels
        # can otherwise blow activations up by orders of magnitude
        std = np.sqrt(1.0 / fan_in)
        entries[f"{u.path}.conv.weight"] = rng.normal(
            0.0, std, (u.out_channels, u.in_channels, u.kernel, u.kernel)
        ).astype(np.float32)
        entries[f"{u.path}.conv.bias"] = rng.normal(0.0, 0.02, u.out_channels).astype(np.float32)
        if u.batchnorm:
            entries[f"{u.path}.bn.gamma"] = rng.uniform(0.9, 1.1, u.out_channels).astype(np.float32)
            entries[f"{u.path}.bn.beta"] = rng.normal(0.0, 0.05, u.out_channels).astype(np.float32)
            entries[f"{u.path}.bn.mean"] = rng.normal(0.0, 0.05, u.out_channels).astype(np.float32)
            entries[f"{u.path}.bn.var"] = rng.uniform(0.8, 1.25, u.out_channels).astype(np.float32)
            entries[f"{u.path}.bn.eps"] = np.array([1e-3], dtype=np.float32)
    return WeightStore(num_classes=graph.num_classes, reg_max=graph.reg_max,
                       fused=False, entries=entries)


def zero_weights(graph: NetGraph) -> WeightStore:
    """All-zero parameters (eps kept positive); the forward pass emits zeros."""
    entries = {
        name: np.full(shape, 1e-3, dtype=np.float32) if name.endswith(".eps")
        else np.zeros(shape, dtype=np.float32)
        for name, shape in parameter_shapes(graph).items()
    }
    return WeightStore(num_classes=graph.num_classes, reg_max=graph.reg_max,
                       fused=False, entries=entries)
