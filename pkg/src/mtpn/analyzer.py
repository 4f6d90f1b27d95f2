"""Closed-form cost model: parameters, model size, MACs and FLOPs.

The graph is walked symbolically from the configuration, propagating shapes
only. Nothing here executes or imports the network blocks, so agreement with
an instrumented forward pass is a genuine cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .network.arch import (
    MOBILENETV2_LAST,
    MOBILENETV2_SETTINGS,
    MOBILENETV2_STEM,
    MOBILENETV2_TAPS,
    RESNET50_STAGES,
    RESNET_EXPANSION,
    RESNET_STEM,
)
from .network.config import ModelConfig, check_resolution, model_label
from .errors import ShapeError
from .runtime.checkpoint import model_blob

BYTES_PER_PARAM = 4
# magic, version, config length, tensor count
_FIXED_HEADER = 4 + 4 + 4 + 4


@dataclass
class LayerCost:
    path: str
    params: int
    macs: int
    flops: int
    output_shape: tuple


@dataclass
class CostReport:
    model_label: str
    resolution: tuple
    per_layer: list = field(default_factory=list)
    total_params: int = 0
    total_macs: int = 0
    total_flops: int = 0
    est_model_size_bytes: int = 0

    def to_dict(self) -> dict:
        return {
            "model_label": self.model_label,
            "resolution": list(self.resolution),
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "total_flops": self.total_flops,
            "est_model_size_bytes": self.est_model_size_bytes,
            "per_layer": [
                {"path": l.path, "params": l.params, "macs": l.macs, "flops": l.flops, "output_shape": list(l.output_shape)}
                for l in self.per_layer
            ],
        }


class Walker:
    """Shape propagation with the engine's flop convention."""

    def __init__(self, n=1):
        self.n = n
        self.layers: list[LayerCost] = []
        self.tensors: list[tuple[str, int]] = []  # (name, rank) of every stored array
        self._seen: set[str] = set()

    def _emit(self, path, op, params, macs, flops, shape, tensors=()):
        if path in self._seen:
            params = 0
            tensors = ()
        self.layers.append(LayerCost(f"{path}/{op}", params, macs, flops, shape))
        self.tensors.extend(tensors)

    def conv(self, path, shape, cout, k, stride=1, groups=1, bias=False):
        n, cin, h, w = shape
        pad = k // 2
        ho = (h + 2 * pad - k) // stride + 1
        wo = (w + 2 * pad - k) // stride + 1
        macs = cout * (cin // groups) * k * k * ho * wo * n
        flops = 2 * macs + (cout * ho * wo * n if bias else 0)
        params = cout * (cin // groups) * k * k + (cout if bias else 0)
        tensors = [(f"{path}.weight", 4)] + ([(f"{path}.bias", 1)] if bias else [])
        out = (n, cout, ho, wo)
        self._emit(path, "conv2d", params, macs, flops, out, tensors)
        return out

    def bn(self, path, shape):
        c = shape[1]
        names = [(f"{path}.{p}", 1) for p in ("gamma", "beta", "running_mean", "running_var")]
        self._emit(path, "batchnorm", 4 * c, 0, 2 * _numel(shape), shape, names)
        return shape

    def pointwise(self, path, op, shape, per_elem):
        self._emit(path, op, 0, 0, per_elem * _numel(shape), shape)
        return shape

    def cba(self, path, shape, cout, k, stride=1, groups=1, act="relu"):
        shape = self.conv(f"{path}.conv", shape, cout, k, stride, groups)
        shape = self.bn(f"{path}.bn", shape)
        if act is not None:
            shape = self.pointwise(path, act, shape, 1)
        return shape

    def maxpool(self, path, shape, k, s, pad):
        n, c, h, w = shape
        out = (n, c, (h + 2 * pad - k) // s + 1, (w + 2 * pad - k) // s + 1)
        self._emit(path, "maxpool", 0, 0, k * k * _numel(out), out)
        return out

    def resize(self, path, shape, h, w):
        out = (shape[0], shape[1], h, w)
        self._emit(path, "resize_bilinear", 0, 0, 8 * _numel(out), out)
        return out

    def merge(self, path, shape, m):
        self._emit(path, "weighted_merge", m, 0, (2 * m - 1) * _numel(shape) + 3 * m, shape, [(f"{path}.merge_weight", 1)])
        return shape

    def concat(self, path, shapes):
        out = (shapes[0][0], sum(s[1] for s in shapes), shapes[0][2], shapes[0][3])
        self._emit(path, "concat_channels", 0, 0, 0, out)
        return out

    def finish_block(self, prefix):
        """Mark every path under ``prefix`` as already parameterised (shared weights)."""
        for l in self.layers:
            p = l.path.split("/", 1)[0]
            if p.startswith(prefix):
                self._seen.add(p)


def _numel(shape):
    n = 1
    for d in shape:
        n *= d
    return n


def _resnet50(wk, x):
    p = "backbone"
    x = wk.cba(f"{p}.stem", x, RESNET_STEM, 7, 2)
    x = wk.maxpool(f"{p}.pool", x, 3, 2, 1)
    feats = []
    for i, (blocks, width, stride) in enumerate(RESNET50_STAGES):
        for b in range(blocks):
            path = f"{p}.layer{i + 1}.{b}"
            s = stride if b == 0 else 1
            cout = width * RESNET_EXPANSION
            y = wk.cba(f"{path}.conv1", x, width, 1)
            y = wk.cba(f"{path}.conv2", y, width, 3, s)
            y = wk.cba(f"{path}.conv3", y, cout, 1, act=None)
            if s != 1 or x[1] != cout:
                wk.cba(f"{path}.down", x, cout, 1, s, act=None)
            wk.pointwise(path, "add", y, 1)
            x = wk.pointwise(path, "relu", y, 1)
        feats.append(x)
    return feats


def _mobilenetv2(wk, x):
    p = "backbone"
    x = wk.cba(f"{p}.stem", x, MOBILENETV2_STEM, 3, 2, act="relu6")
    taps = {}
    for r, (t, c, n, s) in enumerate(MOBILENETV2_SETTINGS):
        for i in range(n):
            path = f"{p}.block{r}.{i}"
            stride = s if i == 0 else 1
            cin = x[1]
            hidden = cin * t
            y = wk.cba(f"{path}.expand", x, hidden, 1, act="relu6") if t != 1 else x
            y = wk.cba(f"{path}.dw", y, hidden, 3, stride, groups=hidden, act="relu6")
            y = wk.cba(f"{path}.project", y, c, 1, act=None)
            if stride == 1 and cin == c:
                wk.pointwise(path, "add", y, 1)
            x = y
        if r in MOBILENETV2_TAPS:
            taps[MOBILENETV2_TAPS[r]] = x
    taps["c5"] = wk.cba(f"{p}.last", x, MOBILENETV2_LAST, 1, act="relu6")
    return [taps["c2"], taps["c3"], taps["c4"], taps["c5"]]


def _fusion(wk, cfg, c3, c4, c5):
    W = cfg.fusion_width
    p3 = wk.cba("fusion.lat3", c3, W, 1, act=None)
    p4 = wk.cba("fusion.lat4", c4, W, 1, act=None)
    p5 = wk.cba("fusion.lat5", c5, W, 1, act=None)

    def node(path, ref, m):
        wk.merge(path, ref, m)
        return wk.cba(f"{path}.conv", ref, W, 3)

    for r in range(cfg.fusion_repeats):
        rp = f"fusion.rep{r}"
        wk.resize(f"{rp}.up", p5, p4[2], p4[3])
        td4 = node(f"{rp}.td4", p4, 2)
        wk.resize(f"{rp}.up", td4, p3[2], p3[3])
        o3 = node(f"{rp}.out3", p3, 2)
        wk.maxpool(f"{rp}.down", o3, 3, 2, 1)
        o4 = node(f"{rp}.out4", p4, 3)
        wk.maxpool(f"{rp}.down", o4, 3, 2, 1)
        o5 = node(f"{rp}.out5", p5, 2)
        p3, p4, p5 = o3, o4, o5
    return p3, p4, p5


def _det_head(wk, cfg, x):
    W = cfg.fusion_width
    x = wk.cba("det_head.conv0", x, W, 3)
    x = wk.cba("det_head.conv1", x, W, 3)
    return wk.conv("det_head.pred", x, 3 * (5 + cfg.num_classes), 1, bias=True)


def _seg_head(wk, cfg, task, p3_up, c2, hw):
    path = f"seg_heads.{task}"
    skip = wk.cba(f"{path}.skip", c2, cfg.skip_width, 1)
    x = wk.concat(path, [p3_up, skip])
    x = wk.cba(f"{path}.conv0", x, cfg.seg_width, 3)
    x = wk.cba(f"{path}.conv1", x, cfg.seg_width, 3)
    x = wk.conv(f"{path}.pred", x, 2, 1, bias=True)
    return wk.resize(f"{path}.up", x, hw[0], hw[1])


def _walk(config: ModelConfig, resolution, n=1) -> Walker:
    h, w = resolution
    wk = Walker(n)
    x = (n, 3, h, w)
    feats = _resnet50(wk, x) if config.backbone == "resnet50" else _mobilenetv2(wk, x)
    c2, c3, c4, c5 = feats
    p3, p4, p5 = _fusion(wk, config, c3, c4, c5)
    for p in (p3, p4, p5):
        _det_head(wk, config, p)
        wk.finish_block("det_head")
    p3_up = wk.resize("seg_heads.p3_up", p3, c2[2], c2[3])
    for task in ("drivable", "lane"):
        _seg_head(wk, config, task, p3_up, c2, (h, w))
    return wk


def _report(config, resolution, wk) -> CostReport:
    rep = CostReport(model_label(config), tuple(resolution), wk.layers)
    rep.total_params = sum(l.params for l in wk.layers)
    rep.total_macs = sum(l.macs for l in wk.layers)
    rep.total_flops = sum(l.flops for l in wk.layers)
    blob = len(model_blob(config))
    overhead = _FIXED_HEADER + blob + sum(4 + len(name.encode()) + 4 + 4 * rank + 1 for name, rank in wk.tensors)
    rep.est_model_size_bytes = BYTES_PER_PARAM * rep.total_params + overhead
    return rep


def count_params(config: ModelConfig) -> CostReport:
    """Parameter count and checkpoint size; resolution is the config's own."""
    config.validate()
    return _report(config, config.input_res, _walk(config, config.input_res))


def count_flops(config: ModelConfig, resolution=None, batch=1) -> CostReport:
    config.validate()
    resolution = check_resolution(config.input_res if resolution is None else resolution)
    return _report(config, resolution, _walk(config, resolution, batch))


@dataclass
class Comparison:
    resolution: tuple
    rows: list  # [(label, params, flops, macs, size_bytes)]
    params_ratio: float
    flops_ratio: float
    macs_ratio: float
    size_ratio: float

    def to_dict(self) -> dict:
        return {
            "resolution": list(self.resolution),
            "rows": [dict(zip(("model_label", "params", "flops", "macs", "size_bytes"), r)) for r in self.rows],
            "params_ratio": self.params_ratio,
            "flops_ratio": self.flops_ratio,
            "macs_ratio": self.macs_ratio,
            "size_ratio": self.size_ratio,
        }


def compare_models(a: CostReport, b: CostReport) -> Comparison:
    """Two-row comparison with ratios ``a / b``."""
    if tuple(a.resolution) != tuple(b.resolution):
        raise ShapeError(f"cannot compare reports at {a.resolution} and {b.resolution}", dim="resolution")
    rows = [(r.model_label, r.total_params, r.total_flops, r.total_macs, r.est_model_size_bytes) for r in (a, b)]
    return Comparison(
        tuple(a.resolution), rows,
        a.total_params / b.total_params, a.total_flops / b.total_flops,
        a.total_macs / b.total_macs, a.est_model_size_bytes / b.est_model_size_bytes,
    )


def format_table(reports, comparison: Comparison | None = None) -> str:
    """Aligned plain-text table with the columns of the model-characteristics table."""
    res = reports[0].resolution
    head = ("Method", "# of parameters", f"FLOPs ({res[0]}x{res[1]})", "MACs", "Model size")
    rows = [
        (r.model_label, f"{r.total_params / 1e6:.1f} M", f"{r.total_flops / 1e9:.1f} G",
         f"{r.total_macs / 1e9:.1f} G", f"{r.est_model_size_bytes / 1e6:.0f} MB")
        for r in reports
    ]
    if comparison is not None:
        rows.append(("ratio", f"{comparison.params_ratio:.2f}x", f"{comparison.flops_ratio:.2f}x",
                     f"{comparison.macs_ratio:.2f}x", f"{comparison.size_ratio:.2f}x"))
    widths = [max(len(str(r[i])) for r in (head, *rows)) for i in range(len(head))]
    lines = ["  ".join(str(c).ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in (head, *rows)]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    return "\n".join(lines)
