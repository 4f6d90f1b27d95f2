import json
import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from mtpn.analyzer import count_params
from mtpn.errors import CheckpointError, MTPNError
from mtpn.network import Detection, build_model
from mtpn.runtime import (
    DEFAULT_RESOLUTIONS,
    BenchReport,
    benchmark,
    compare_bench,
    infer,
    load_checkpoint,
    read_ppm,
    read_tensors,
    render_overlay,
    save_checkpoint,
    validate_report,
    write_ppm,
    write_tensors,
)
from mtpn.runtime.bench import _timed
from mtpn.runtime.fileio import atomic_write_text, to_rgb8
from mtpn.training import synth_sample

from conftest import tiny_config


# ---------------------------------------------------------------------------
# checkpoints


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    m = build_model(tiny_config(), seed=2)
    path = tmp_path_factory.mktemp("ckpt") / "model.mtpn"
    save_checkpoint(m, path)
    return m, path


def test_round_trip_bitwise(ckpt, tmp_path):
    m, path = ckpt
    loaded = load_checkpoint(path)
    assert loaded.config == m.config and list(loaded.parameters) == list(m.parameters)
    assert all(loaded.parameters[k].tobytes() == m.parameters[k].tobytes() for k in m.parameters)
    again = tmp_path / "again.mtpn"
    save_checkpoint(loaded, again)
    assert again.read_bytes() == path.read_bytes()


def test_size_estimate_matches_file(ckpt):
    m, path = ckpt
    est = count_params(m.config).est_model_size_bytes
    assert est == path.stat().st_size
    assert path.stat().st_size <= 1.05 * (4 * m.num_parameters() + 4096)


@settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(backbone=st.sampled_from(["mobilenetv2", "resnet50"]), classes=st.integers(1, 5),
       width=st.integers(4, 24), seed=st.integers(0, 1000))
def test_round_trip_property(tmp_path, backbone, classes, width, seed):
    m = build_model(tiny_config(backbone, num_classes=classes, fusion_width=width), seed=seed)
    rng = np.random.default_rng(seed)
    for k in list(m.parameters)[:5]:
        m.parameters[k] = rng.standard_normal(m.parameters[k].shape).astype(np.float32)
    path = tmp_path / f"p{seed}.mtpn"
    save_checkpoint(m, path)
    loaded = load_checkpoint(path)
    assert loaded.config == m.config
    assert all(loaded.parameters[k].tobytes() == v.tobytes() for k, v in m.parameters.items())


def _first_dims_offset(data):
    blob_len = struct.unpack_from("<I", data, 8)[0]
    pos = 12 + blob_len + 4
    name_len = struct.unpack_from("<I", data, pos)[0]
    return pos + 4 + name_len + 4  # first dim of the first tensor


def test_corruption_fuzz(ckpt, tmp_path):
    _, path = ckpt
    good = path.read_bytes()
    dims_at = _first_dims_offset(good)
    rng = np.random.default_rng(0)
    bad = tmp_path / "bad.mtpn"
    for case in range(100):
        data = bytearray(good)
        kind = case % 4
        if kind == 0:
            data = data[: int(rng.integers(0, len(good)))]
        elif kind == 1:
            data[int(rng.integers(0, 4))] ^= 1 + int(rng.integers(0, 255))
        elif kind == 2:
            struct.pack_into("<I", data, dims_at, int(rng.integers(0, 2**32)))
        else:
            data += bytes(int(rng.integers(1, 16)))
        bad.write_bytes(bytes(data))
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)


def test_random_header_flips_never_crash(ckpt, tmp_path):
    _, path = ckpt
    good = path.read_bytes()
    rng = np.random.default_rng(1)
    bad = tmp_path / "flip.mtpn"
    head = _first_dims_offset(good) + 16
    for _ in range(100):
        data = bytearray(good)
        data[int(rng.integers(0, head))] ^= 1 << int(rng.integers(0, 8))
        bad.write_bytes(bytes(data))
        try:
            load_checkpoint(bad)
        except CheckpointError:
            pass


def test_structured_errors(ckpt, tmp_path):
    m, _ = ckpt
    blob = json.dumps({"kind": "model", "config": m.config.to_dict()}).encode()
    p = tmp_path / "x.mtpn"
    params = dict(m.parameters)
    name = next(iter(params))
    write_tensors(p, blob, {k: v for k, v in params.items() if k != name})
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(p)
    assert exc.value.tensor == name
    write_tensors(p, blob, {**params, "extra.weight": np.zeros(3)})
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(p)
    assert exc.value.tensor == "extra.weight"
    write_tensors(p, blob, {**params, name: np.zeros(3)})
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(p)
    assert exc.value.tensor == name
    data = bytearray(p.read_bytes())
    struct.pack_into("<I", data, 4, 2)
    p.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(p)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.mtpn")
    write_tensors(p, json.dumps({"kind": "sample"}).encode(), {})
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_tensor_container(tmp_path):
    p = tmp_path / "t.mtpn"
    t = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "scalar": np.float32(2.5)}
    write_tensors(p, b'{"kind": "x"}', t)
    blob, back = read_tensors(p)
    assert blob == {"kind": "x"} and back["a"].tolist() == t["a"].tolist() and back["scalar"].shape == ()


def test_atomic_write_leaves_no_partial_file(tmp_path):
    p = tmp_path / "report.json"
    atomic_write_text(p, "first")

    class Boom(Exception):
        pass

    from mtpn.runtime.fileio import atomic_open

    with pytest.raises(Boom):
        with atomic_open(p, "w") as fh:
            fh.write("half")
            raise Boom
    assert p.read_text() == "first" and [f.name for f in tmp_path.iterdir()] == ["report.json"]


# ---------------------------------------------------------------------------
# images and overlays


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (1, 3, 5, 7)).astype(np.float32) / 255
    write_ppm(tmp_path / "a.ppm", img)
    back = read_ppm(tmp_path / "a.ppm")
    np.testing.assert_array_equal(to_rgb8(back), to_rgb8(img))
    (tmp_path / "c.ppm").write_bytes(b"P6\n# comment\n2 1\n255\n" + bytes(range(6)))
    assert to_rgb8(read_ppm(tmp_path / "c.ppm")).ravel().tolist() == list(range(6))
    (tmp_path / "bad.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0")
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "bad.ppm")


def test_overlay_noop(tmp_path):
    s = synth_sample(0, (64, 96))
    z = np.zeros((64, 96), np.uint8)
    render_overlay(s.image, [], z, z, tmp_path / "o.ppm")
    write_ppm(tmp_path / "i.ppm", s.image)
    assert (tmp_path / "o.ppm").read_bytes() == (tmp_path / "i.ppm").read_bytes()


def test_overlay_tint_law():
    s = synth_sample(1, (64, 96))
    src = to_rgb8(s.image)
    out = render_overlay(s.image, [], np.ones((64, 96)), np.zeros((64, 96)))
    below = src[..., 1] < 255
    assert (out[..., 1][below] > src[..., 1][below]).all()
    lane = render_overlay(s.image, [], np.zeros((64, 96)), np.ones((64, 96)))
    assert (lane[..., 0][src[..., 0] < 255] > src[..., 0][src[..., 0] < 255]).all()


def test_overlay_box_pixels():
    img = np.full((1, 3, 64, 96), 0.5, np.float32)
    z = np.zeros((64, 96))
    base = render_overlay(img, [], z, z)
    boxed = render_overlay(img, [Detection(2, 0.9, (40.0, 30.0, 20.0, 10.0))], z, z)
    diff = (base != boxed).any(axis=2)
    ys, xs = np.nonzero(diff)
    assert (ys.min(), ys.max(), xs.min(), xs.max()) == (25, 34, 30, 49)
    ring = np.zeros_like(diff)
    ring[25:35, 30:50] = True
    ring[27:33, 32:48] = False
    assert (diff == ring).all()


def test_overlay_shape_check():
    with pytest.raises(ValueError):
        render_overlay(np.zeros((1, 3, 8, 8)), [], np.zeros((8, 9)), np.zeros((8, 8)))


def test_infer_contract():
    m = build_model(tiny_config(), seed=0)
    img = synth_sample(0, (64, 96), num_classes=3).image
    a, b = infer(m, img, 0.9), infer(m, img, 0.9)
    assert a.detections == [] and a.drivable_mask.shape == (64, 96)
    assert set(np.unique(a.drivable_mask)) <= {0, 1} and set(np.unique(a.lane_mask)) <= {0, 1}
    assert a.drivable_mask.tobytes() == b.drivable_mask.tobytes()
    low = infer(m, img, 0.0, 0.5)
    assert low.detections == infer(m, img, 0.0, 0.5).detections


# ---------------------------------------------------------------------------
# benchmark


class FakeClock:
    """Each call advances by a fixed amount per pixel of the current input."""

    def __init__(self):
        self.t = 0

    def __call__(self):
        self.t += 1000
        return self.t


def test_benchmark_report_shape():
    m = build_model(tiny_config(), seed=0)
    res = [(64, 96), (32, 32), (64, 64)]
    rep = benchmark(m, res, warmup=1, iters=10)
    assert [(r.h, r.w) for r in rep.rows] == [(32, 32), (64, 64), (64, 96)]
    d = rep.to_dict()
    assert validate_report(d) == []
    assert BenchReport.from_dict(json.loads(rep.to_json())) == rep
    for r in rep.rows:
        assert abs(r.fps * r.mean_ms - 1000) <= 1.0
        assert r.min_ms <= r.p50_ms <= r.p90_ms
    assert rep.threads == 1 and rep.warmup_iters == 1 and rep.timed_iters == 10


def test_benchmark_default_resolutions_and_postprocess():
    m = build_model(tiny_config(), seed=0)
    rep = benchmark(m, [(32, 64)], warmup=0, iters=10, include_postprocess=True, clock=FakeClock())
    assert rep.include_postprocess and rep.rows[0].mean_ms == pytest.approx(1e-3)
    assert list(DEFAULT_RESOLUTIONS) == sorted(DEFAULT_RESOLUTIONS, key=lambda r: r[0] * r[1])


def test_benchmark_validation():
    m = build_model(tiny_config(), seed=0)
    with pytest.raises(ValueError):
        benchmark(m, [(32, 32)], iters=5)
    with pytest.raises(MTPNError):
        benchmark(m, [(30, 32)], iters=10)


def test_clock_going_backwards():
    seq = iter([10, 5, 20, 30])
    assert _timed(lambda: None, lambda: next(seq)) == pytest.approx(10 / 1e6)
    seq = iter([10, 5, 20, 15])
    with pytest.raises(MTPNError):
        _timed(lambda: None, lambda: next(seq))


def test_validate_report_flags_problems():
    row = {"h": 32, "w": 32, "mean_ms": 2.0, "p50_ms": 2.0, "p90_ms": 3.0, "min_ms": 1.0, "fps": 400.0}
    problems = validate_report({"model_label": "x", "rows": [row, {**row, "h": 16, "fps": 500.0}]})
    assert any("fps" in p for p in problems) and any("ascending" in p for p in problems)
    assert any("device" in p for p in problems)


def test_compare_bench():
    def rep(label, ms):
        from mtpn.runtime import BenchRow

        return BenchReport(label, "cpu", 1, 0, 10, [BenchRow(32, 32, ms, ms, ms, ms, 1000 / ms)])

    c = compare_bench(rep("heavy", 30.0), rep("light", 10.0))
    assert c["rows"][0]["speedup"] == 3.0 and c["reference_speedup"] == 1.5
