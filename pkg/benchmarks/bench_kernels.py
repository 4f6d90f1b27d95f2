"""Compare the numba and pure-numpy kernel backends.

Times forward and forward+backward for the operators that dispatch to a
kernel, then a whole-model forward pass.

    python benchmarks/bench_kernels.py --repeats 5
"""

import argparse
import json
import time

import numpy as np

from mtpn import engine as E
from mtpn.network import ModelConfig, build_model


def _cases(rng):
    def arr(*shape):
        return rng.standard_normal(shape).astype(np.float32)

    x = arr(1, 64, 96, 160)
    return {
        "conv3x3": (lambda a, w: E.conv2d(a, w, pad=1), [x, arr(64, 64, 3, 3) * 0.05]),
        "conv3x3_s2": (lambda a, w: E.conv2d(a, w, stride=2, pad=1), [x, arr(64, 64, 3, 3) * 0.05]),
        "depthwise3x3": (lambda a, w: E.conv2d(a, w, pad=1, groups=64), [x, arr(64, 1, 3, 3)]),
        "maxpool3_s2": (lambda a: E.maxpool(a, 3, 2, pad=1), [x]),
        "resize_x2": (lambda a: E.resize_bilinear(a, 192, 320), [x]),
    }


def _time(fn, repeats):
    fn()  # warm-up, includes JIT compilation
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def _fwd_bwd(op, inputs):
    def run():
        with E.recording() as tape:
            y = op(*inputs)
        tape.gradient([(y, np.ones_like(y))], inputs)
    return run


def run(backends, repeats, resolution, backbone):
    rng = np.random.default_rng(0)
    cases = _cases(rng)
    model = build_model(ModelConfig(backbone=backbone), seed=0)
    image = rng.standard_normal((1, 3, *resolution)).astype(np.float32)
    results = {}
    for name in backends:
        E.kernels.set_backend(name)
        row = {}
        for case, (op, inputs) in cases.items():
            row[f"{case}/fwd"] = _time(lambda: op(*inputs), repeats)
            row[f"{case}/fwd+bwd"] = _time(_fwd_bwd(op, inputs), repeats)
        row[f"{backbone}@{resolution[0]}x{resolution[1]}/fwd"] = _time(lambda: model.forward(image), max(1, repeats // 2))
        results[name] = row
    return results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--backends", nargs="+", default=list(E.kernels.BACKENDS), choices=E.kernels.BACKENDS)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--resolution", default="256x384", help="HxW for the whole-model pass")
    ap.add_argument("--backbone", default="mobilenetv2", choices=("resnet50", "mobilenetv2"))
    ap.add_argument("--json", action="store_true", help="print raw milliseconds as JSON")
    args = ap.parse_args(argv)
    h, w = (int(v) for v in args.resolution.lower().split("x"))
    previous = E.kernels.get_backend()
    try:
        results = run(args.backends, args.repeats, (h, w), args.backbone)
    finally:
        E.kernels.set_backend(previous)
    if args.json:
        print(json.dumps(results, indent=2))
        return
    names = list(results)
    print(f"{'case':<36}" + "".join(f"{n + ' ms':>12}" for n in names)
          + (f"{'speed-up':>10}" if len(names) == 2 else ""))
    for key in results[names[0]]:
        vals = [results[n][key] for n in names]
        line = f"{key:<36}" + "".join(f"{v:>12.2f}" for v in vals)
        if len(names) == 2:
            line += f"{vals[1] / vals[0]:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
