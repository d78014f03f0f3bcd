"""End-to-end acceptance checks, one test per shipping criterion.

Each test is independent and prints nothing on its own; the terminal
summary hook in conftest.py emits one PASS/FAIL line per criterion at
the end of the run.
"""

import json
import math
import time

import numpy as np

from lic_hw_kit import (
    DpuConfig,
    GdnParams,
    GdnStageFormats,
    KdWeights,
    LayerSpec,
    ModelSpec,
    PhaseSchedule,
    PrecisionPolicy,
    PruneSchedule,
    RdCurve,
    StatRange,
    Tensor,
    WorkloadProfile,
    bd_metrics,
    dequantize,
    estimate_fps,
    extract_patches,
    filter_l2_norms,
    flops_of,
    gdn_fixed,
    gdn_float,
    igdn_fixed,
    igdn_float,
    iterative_prune,
    kd_loss,
    model_forward,
    peak_ops_per_cycle,
    plateau_scheduler,
    quant_params_from_stats,
    quantize,
    reassemble,
    save_model,
    save_tensor,
    simulate,
    student160_encoder_scenario,
)
from lic_hw_kit.cli import main as cli_main


# ---------------------------------------------------------------------------
# 1: analytical fps at both workload scales
# ---------------------------------------------------------------------------


def test_criterion_01_analytical_fps_model():
    start = time.perf_counter()
    gops = (528.2, 220.2, 153.0)
    scaled = [estimate_fps(DpuConfig(workload_scale=0.3),
                           WorkloadProfile.from_gop({"total": g})).fps
              for g in gops]
    full = [estimate_fps(DpuConfig(workload_scale=1.0),
                         WorkloadProfile.from_gop({"total": g})).fps
            for g in gops]
    for got, want in zip(scaled, (18.6, 44.6, 64.1)):
        assert abs(got - want) <= 0.5, f"scaled fps {got} vs {want}"
    for got, want in zip(full, (5.58, 13.39, 19.27)):
        assert abs(got - want) <= 0.05, f"full fps {got} vs {want}"
    assert time.perf_counter() - start < 1.0


# ---------------------------------------------------------------------------
# 2: peak-ops identities
# ---------------------------------------------------------------------------


def test_criterion_02_peak_ops_identities():
    per_core, total = peak_ops_per_cycle(DpuConfig())
    assert per_core == 4096
    assert total == 12288


# ---------------------------------------------------------------------------
# 3: fixed-point gdn numeric envelope
# ---------------------------------------------------------------------------


def test_criterion_03_gdn_fixed_point_envelope():
    start = time.perf_counter()
    r = np.random.default_rng(42)
    c = 8
    corpus = Tensor(r.uniform(-8.0, 8.0, (1, c, 1, 1250)).astype(np.float32))
    params = GdnParams(
        beta=r.uniform(1.0, 2.0, c),
        gamma=r.uniform(0.0, 1.0, (c, c)) * (0.1 / c),
    )
    ref = gdn_float(corpus, params).data

    errs = {}
    for bits in (32, 16, 8):
        fixed = gdn_fixed(corpus, params, GdnStageFormats.default(bits))
        errs[bits] = float(np.max(np.abs(fixed.data - ref)))
    assert errs[32] <= 1e-3, f"32-bit envelope {errs[32]}"
    assert errs[32] <= errs[16] <= errs[8]

    # gamma = 0 closed forms: beta values whose root is a power of two
    zero = np.zeros((c, c))
    x = Tensor(r.uniform(-7.5, 7.5, (1, c, 4, 4)).astype(np.float32))
    ident = GdnParams(beta=np.ones(c), gamma=zero)
    assert np.array_equal(gdn_float(x, ident).data, x.data)
    assert np.array_equal(igdn_float(gdn_float(x, ident), ident).data, x.data)
    quartered = GdnParams(beta=np.full(c, 4.0), gamma=zero)
    assert np.array_equal(igdn_float(gdn_float(x, quartered), quartered).data,
                          x.data)
    for bits in (32, 16, 8):
        fmts = GdnStageFormats.default(bits)
        step = fmts.output.ulp
        got = gdn_fixed(x, ident, fmts).data
        assert np.max(np.abs(got - x.data)) <= step + 1e-12
        for p in (ident, quartered):
            rt = igdn_fixed(gdn_fixed(x, p, fmts), p, fmts).data
            assert np.max(np.abs(rt - x.data)) <= 2 * step + 1e-12
    assert time.perf_counter() - start < 10.0


# ---------------------------------------------------------------------------
# 4: quantizer properties
# ---------------------------------------------------------------------------


def test_criterion_04_quantizer_properties():
    r = np.random.default_rng(7)
    lo, hi = -3.7, 2.9
    p = quant_params_from_stats(StatRange(lo, hi), bits=8)
    assert p.zero_point == 0
    x = r.uniform(lo, hi, 1_000_000)
    err = np.abs(dequantize(quantize(x, p), p) - x)
    assert float(err.max()) <= p.scale / 2

    assert np.array_equal(quantize(-x, p), -quantize(x, p))

    for _ in range(20):
        a, b = sorted(r.uniform(-100, 100, 2))
        assert quant_params_from_stats(StatRange(a, b), bits=8).zero_point == 0

    conv = LayerSpec(kind="conv", in_channels=4, out_channels=4, kernel=3,
                     padding=1,
                     weights=r.normal(0, 0.1, (4, 4, 3, 3)).astype(np.float32),
                     bias=np.zeros(4, dtype=np.float32))
    gdn = LayerSpec(kind="gdn", in_channels=4, out_channels=4,
                    gdn_params=GdnParams(beta=np.ones(4),
                                         gamma=np.full((4, 4), 0.01)))
    model = ModelSpec(name="m", role="main_encoder", layers=[conv, gdn])
    policy = PrecisionPolicy(default_bits=8, gdn_bits=32)
    assert policy.resolve(0, conv) == 8
    assert policy.resolve(1, gdn) == 32


# ---------------------------------------------------------------------------
# 5: structured pruning on a 100-filter stack
# ---------------------------------------------------------------------------


def test_criterion_05_pruning_schedule():
    r = np.random.default_rng(11)

    def conv(cin, cout):
        return LayerSpec(kind="conv", in_channels=cin, out_channels=cout,
                         kernel=3, padding=1,
                         weights=r.normal(0, 0.1, (cout, cin, 3, 3))
                         .astype(np.float32),
                         bias=np.zeros(cout, dtype=np.float32))

    model = ModelSpec(name="stack", role="main_encoder", layers=[
        conv(3, 100),
        conv(100, 100),
        conv(100, 8),
    ])

    hw = (16, 16)
    flops_trace = [flops_of(model, hw).total]
    snapshots = [model]

    def hook(m, iteration):
        flops_trace.append(flops_of(m, hw).total)
        snapshots.append(m)

    schedule = PruneSchedule(fraction_per_iteration=0.10, iterations=3)
    pruned, report = iterative_prune(model, schedule, finetune_hook=hook,
                                     input_hw=hw)

    removed = {0: [], 1: []}
    for rec in report.removals:
        removed[rec["layer"]].extend(rec["removed"])
    for li in (0, 1):
        assert len(removed[li]) == 30, f"layer {li} removed {len(removed[li])}"
        assert len(set(removed[li])) == 30

    # layer 0 reads the raw input, so its norms never move: the removed
    # set over all iterations is exactly the 30 lowest original norms
    norms0 = filter_l2_norms(model.layers[0])
    assert set(removed[0]) == set(int(i)
                                  for i in np.argsort(norms0, kind="stable")[:30])

    # downstream norms shift as input channels vanish; check the
    # ordering each iteration against the model that was actually ranked
    survivors = {0: list(range(100)), 1: list(range(100))}
    for it in range(3):
        before = snapshots[it]
        for li in (0, 1):
            norms = filter_l2_norms(before.layers[li])
            rec = next(r for r in report.removals
                       if r["iteration"] == it and r["layer"] == li)
            gone = {survivors[li].index(o) for o in rec["removed"]}
            keep = [i for i in range(len(survivors[li])) if i not in gone]
            assert norms[keep].min() >= norms[list(gone)].max()
            surviving = set(rec["removed"])
            survivors[li] = [o for o in survivors[li] if o not in surviving]

    assert pruned.layers[0].out_channels == 70
    assert pruned.layers[1].in_channels == 70
    assert pruned.layers[2].out_channels == 8
    out = model_forward(pruned, Tensor(r.uniform(-1, 1, (1, 3, 16, 16))
                                       .astype(np.float32)))
    assert out.dims == (1, 8, 16, 16)

    assert len(flops_trace) == 4
    assert all(a > b for a, b in zip(flops_trace, flops_trace[1:]))


# ---------------------------------------------------------------------------
# 6: patch extraction and bit-exact reassembly
# ---------------------------------------------------------------------------


def test_criterion_06_patching_identity():
    r = np.random.default_rng(3)
    for _ in range(50):
        h, w = r.integers(256, 600, 2)
        img = Tensor(r.uniform(-2, 2, (1, 3, h, w)).astype(np.float32))
        patches, grid = extract_patches(img, 256, 56)
        assert np.array_equal(reassemble(patches, grid).data, img.data)

    hd = Tensor(np.zeros((1, 1, 720, 1280), dtype=np.float32))
    _, grid = extract_patches(hd, 256, 56)
    assert grid.count == 200
    covered = np.zeros((720, 1280), dtype=bool)
    for row, col in grid.origins:
        covered[row:row + 256, col:col + 256] = True
    assert covered.all()


# ---------------------------------------------------------------------------
# 7: pipeline simulator calibration
# ---------------------------------------------------------------------------


def test_criterion_07_pipeline_simulator():
    start = time.perf_counter()
    stages, patches, cfg = student160_encoder_scenario()
    runs = []
    for _ in range(3):
        seq = simulate(stages, patches, cfg, "sequential")
        pipe = simulate(stages, patches, cfg, "pipelined")
        runs.append(json.dumps([seq.to_json_dict(), pipe.to_json_dict()],
                               sort_keys=True))
    assert runs[0] == runs[1] == runs[2]

    seq = simulate(stages, patches, cfg, "sequential")
    pipe = simulate(stages, patches, cfg, "pipelined")
    ratio = pipe.fps / seq.fps
    assert 2.0 <= ratio <= 3.0, f"speedup {ratio}"
    assert pipe.busy_fraction > seq.busy_fraction
    assert time.perf_counter() - start < 5.0


# ---------------------------------------------------------------------------
# 8: bjontegaard identities
# ---------------------------------------------------------------------------


def rd_curve(r):
    rates = r.uniform(0.05, 0.2) * np.cumprod(r.uniform(1.4, 2.4, 4))
    psnrs = r.uniform(28, 32) + np.cumsum(r.uniform(0.8, 2.5, 4))
    return RdCurve(list(zip(rates, psnrs)))


def test_criterion_08_bjontegaard_identities():
    base = RdCurve([(0.1, 30.0), (0.2, 32.5), (0.4, 34.5), (0.8, 36.0)])
    same = bd_metrics(base, base)
    assert abs(same.bd_rate_percent) <= 1e-12
    assert abs(same.bd_psnr_db) <= 1e-12

    up = RdCurve([(x, y + 1.0) for x, y in base.points])
    assert abs(bd_metrics(base, up).bd_psnr_db - 1.0) <= 1e-9

    doubled = RdCurve([(2.0 * x, y) for x, y in base.points])
    assert abs(bd_metrics(base, doubled).bd_rate_percent - 100.0) <= 1e-6

    r = np.random.default_rng(5)
    for _ in range(100):
        a, b = rd_curve(r), rd_curve(r)
        try:
            ab, ba = bd_metrics(a, b), bd_metrics(b, a)
        except Exception:
            continue  # disjoint rate ranges carry no overlap to compare
        assert abs(ab.bd_psnr_db + ba.bd_psnr_db) <= 1e-9
        assert abs((1.0 + ab.bd_rate_percent / 100.0)
                   * (1.0 + ba.bd_rate_percent / 100.0) - 1.0) <= 1e-9


# ---------------------------------------------------------------------------
# 9: distillation loss and plateau schedule
# ---------------------------------------------------------------------------


def oracle_flip_step(hist, sched):
    w, half = sched.plateau_window, sched.plateau_window // 2
    for n in range(len(hist) + 1):
        if n >= sched.max_phase_steps:
            return n
        if n >= w:
            win = hist[n - w:n]
            m_old = sum(win[:half]) / half
            m_new = sum(win[half:]) / (w - half)
            if (m_old - m_new) / max(abs(m_old), 1e-12) \
                    < sched.plateau_threshold:
                return n
    return None


def test_criterion_09_kd_loss_and_scheduler():
    r = np.random.default_rng(13)
    for _ in range(200):
        ll, lp, rate, dist, lam = r.uniform(-10, 10, 5)
        a, b, g = r.uniform(0.01, 5.0, 3)
        w = KdWeights(alpha=a, beta=b, gamma=g)
        out = kd_loss(ll, lp, rate, dist, lam, w)
        assert out.total == a * ll + b * lp + g * (rate + lam * dist)

    w = KdWeights(alpha=1.0, beta=0.1, gamma=0.5)
    perfect = kd_loss(0.0, 0.0, 2.0, 0.03, 80.0, w)
    assert perfect.total == 0.5 * (2.0 + 80.0 * 0.03)

    sched = PhaseSchedule(plateau_window=10, plateau_threshold=1e-3,
                          max_phase_steps=10_000)
    for _ in range(100):
        amp = r.uniform(0.5, 4.0)
        tau = r.uniform(2.0, 12.0)
        floor = r.uniform(0.1, 1.0)
        noise = 1.0 + 0.005 * r.standard_normal(150)
        hist = list(amp * np.exp(-np.arange(150) / tau) * noise + floor)
        want = oracle_flip_step(hist, sched)
        assert want is not None
        got = next(n for n in range(len(hist) + 1)
                   if plateau_scheduler(hist[:n], sched)[0] == "late")
        assert got == want


# ---------------------------------------------------------------------------
# 10: cli reruns are byte-identical
# ---------------------------------------------------------------------------


def test_criterion_10_cli_determinism(tmp_path):
    r = np.random.default_rng(17)

    def conv(cin, cout, stride=1):
        return LayerSpec(kind="conv", in_channels=cin, out_channels=cout,
                         kernel=3, stride=stride, padding=1,
                         weights=r.normal(0, 0.1, (cout, cin, 3, 3))
                         .astype(np.float32),
                         bias=np.zeros(cout, dtype=np.float32))

    def gdn(c):
        return LayerSpec(kind="gdn", in_channels=c, out_channels=c,
                         gdn_params=GdnParams(
                             beta=r.uniform(1, 2, c),
                             gamma=r.uniform(0, 1, (c, c)) * 0.01))

    model = ModelSpec(name="m", role="main_encoder",
                      layers=[conv(3, 8, 2), gdn(8), conv(8, 4)])
    (tmp_path / "model.bin").write_bytes(save_model(model))
    for i in range(2):
        t = Tensor(r.uniform(-1, 1, (1, 3, 16, 16)).astype(np.float32))
        (tmp_path / f"calib{i}.tns").write_bytes(save_tensor(t))
    img = Tensor(r.integers(0, 256, (1, 3, 20, 24)).astype(np.float32))
    from lic_hw_kit.cli import write_ppm
    (tmp_path / "img.ppm").write_bytes(write_ppm(img))
    curve_a = "bpp,psnr_db\n0.1,30.0\n0.2,32.0\n0.4,34.0\n0.8,36.0\n"
    curve_b = "bpp,psnr_db\n0.1,31.0\n0.2,33.0\n0.4,35.0\n0.8,37.0\n"
    (tmp_path / "a.csv").write_text(curve_a)
    (tmp_path / "b.csv").write_text(curve_b)

    configs = {
        "quantize": {"model": str(tmp_path / "model.bin"),
                     "calibration": [str(tmp_path / "calib0.tns"),
                                     str(tmp_path / "calib1.tns")]},
        "prune": {"model": str(tmp_path / "model.bin"),
                  "fraction_per_iteration": 0.25, "iterations": 2,
                  "input_hw": [16, 16]},
        "estimate": {"workloads": [{"name": "t", "gop": 528.2},
                                   {"name": "s", "gop": 153.0}]},
        "simulate": {"scenario": "student160_encoder", "mode": "both",
                     "trace": True},
        "gdn-bench": {"samples": 300, "channels": 4},
        "tile": {"image": str(tmp_path / "img.ppm"),
                 "target_h": 40, "target_w": 50},
        "kd-loss": {"lambda": 50.0, "plateau_window": 10,
                    "steps": [{"l_latent": 2.0 * math.exp(-i / 5.0) + 0.5,
                               "l_perceptual": 0.3, "rate": 1.0,
                               "distortion": 0.01} for i in range(30)]},
    }

    def run(name, argv):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{name}-{tag}"
            assert cli_main(argv + ["--out", str(out)]) == 0, name
            outs.append({p.name: p.read_bytes()
                         for p in sorted(out.iterdir())})
        assert outs[0] == outs[1], f"{name} rerun differs"
        assert outs[0], f"{name} produced no outputs"

    for name, cfg in configs.items():
        cfg_path = tmp_path / f"{name}.json"
        cfg_path.write_text(json.dumps(cfg))
        run(name, [name, "--config", str(cfg_path)])
    run("bd-metrics", ["bd-metrics", str(tmp_path / "a.csv"),
                       str(tmp_path / "b.csv")])
