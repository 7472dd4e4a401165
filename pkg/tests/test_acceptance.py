"""Acceptance criteria 1-9.  Each test records one PASS/FAIL line, shown in
the terminal summary, and then asserts.

Criteria 4 and 6-8 train at the default configuration and take most of an
hour on one core; they share a single module-scoped pipeline run.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg

from pcmcd import autodiff as ad
from pcmcd import pipeline
from pcmcd.config import RunConfig, loads
from pcmcd.decoder import DecoderModel, decoder_forward
from pcmcd.geometry import (fill_factor, points_in_polygon, presence_chain, sample_dataset_shape,
                            soft_tokens)
from pcmcd.materials import mix_permittivity
from pcmcd.nn import load_checkpoint, save_checkpoint
from pcmcd.oracle import slab_reflectance, slab_transmittance
from pcmcd.scenes import SceneSpec, generate_scene, read_cube, write_cube
from pcmcd.sensing import add_noise, condition_number, encode, metrics, psnr_from_mse, sam
from pcmcd.surrogate import Filter2ShapeModel, SurrogateModel

SEEDS = (0, 1, 2)


def _record(log, k, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    print(line)
    log.append(line)
    return ok


# ---------------------------------------------------------------------------
# 1. gradients

KERNELS = [
    ("add", [(3, 4), (4,)], None), ("sub", [(3, 4), (3, 1)], None), ("mul", [(2, 3), (2, 3)], None),
    ("div", [(3, 4), (3, 4)], None), ("matmul", [(2, 3, 4), (4, 5)], None),
    ("exp", [(3, 4)], None), ("log", [(3, 4)], None), ("sigmoid", [(3, 4)], None),
    ("tanh", [(3, 4)], None), ("relu", [(3, 4)], None), ("softmax-lastdim", [(3, 5)], None),
    ("mean", [(3, 4)], {"axis": 1}), ("sum", [(3, 4)], {"axis": 0, "keepdims": True}),
    ("mse", [(3, 4), (3, 4)], None), ("concat", [(2, 3), (4, 3)], {"axis": 0}),
    ("slice", [(4, 5)], {"index": (slice(1, 3), slice(None, None, 2))}),
    ("transpose", [(2, 3, 4)], {"axes": (2, 0, 1)}), ("reshape", [(2, 6)], {"shape": (3, 4)}),
    ("layernorm", [(3, 6), (6,), (6,)], None),
    ("scaled-dot-attention", [(2, 4, 3), (2, 4, 3), (2, 4, 5)], None),
    ("conv2d-3x3-same", [(2, 3, 5, 4), (2, 3, 3, 3), (2,)], None),
]


def _kernel_error(kind, shapes, attrs, rng):
    ts = []
    for shape in shapes:
        data = rng.standard_normal(shape)
        if kind in ("log", "div"):
            data = np.abs(data) + 0.5
        if kind == "relu":
            data[np.abs(data) < 0.05] = 0.3  # away from the kink
        ts.append(ad.parameter(data))
    w = ad.Tensor(rng.standard_normal(ad.forward_op(kind, ts, attrs).shape))
    return ad.grad_check(lambda: ad.sum_(ad.mul(ad.forward_op(kind, ts, attrs), w)), ts)


def test_criterion_1_gradient_suite(acceptance_log):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    assert {k for k, _, _ in KERNELS} >= set(ad.OP_KINDS)
    kernel = max(_kernel_error(k, s, a, rng) for k, s, a in KERNELS for _ in range(5))

    sur = SurrogateModel(d=8, heads=2, blocks=1, hidden=16, seed=1)
    logits = ad.parameter(np.array([1.0, 0.3, -0.4]))
    verts = ad.parameter(np.array([[0.3, 0.05], [0.25, 0.2], [0.1, 0.3], [0.05, 0.2]]))
    w = ad.Tensor(rng.standard_normal((11, 100)))
    e_sur = ad.grad_check(lambda: ad.sum_(ad.mul(sur(soft_tokens(logits, verts)), w)),
                          [logits, verts] + sur.parameters())

    inv = Filter2ShapeModel(hidden=8, seed=2)
    bank = ad.Tensor(rng.uniform(0, 1, (2, 11, 100)))
    w1, w2 = ad.Tensor(rng.standard_normal((2, 3))), ad.Tensor(rng.standard_normal((2, 4, 2)))

    def f2s():
        lg, vt = inv(bank)
        return ad.add(ad.sum_(ad.mul(lg, w1)), ad.sum_(ad.mul(vt, w2)))

    e_inv = ad.grad_check(f2s, inv.parameters())

    dec = DecoderModel(M=3, N=5, features=4, patch=2, blocks=1, seed=3)
    meas = ad.Tensor(rng.uniform(0, 3, (4, 4, 3)))
    target = ad.Tensor(rng.uniform(0, 1, (4, 4, 5)))
    e_dec = ad.grad_check(lambda: ad.mse(decoder_forward(dec, meas), target), dec.parameters())

    elapsed = time.perf_counter() - start
    composed = max(e_sur, e_inv, e_dec)
    ok = kernel < 1e-4 and composed < 1e-3 and elapsed < 120
    _record(acceptance_log, 1, ok, f"kernels {kernel:.2e} (<1e-4), surrogate {e_sur:.2e}, "
            f"filter2shape {e_inv:.2e}, decoder {e_dec:.2e} (<1e-3), {elapsed:.1f}s (<120s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. physics


def test_criterion_2_physics_suite(acceptance_log):
    errs = {}
    errs["emt_c0"] = abs(mix_permittivity(16.0, 25.0, 0.0) - 16.0)
    errs["emt_c1"] = abs(mix_permittivity(16.0, 25.0, 1.0) - 25.0)
    errs["emt_half"] = abs(mix_permittivity(16.0, 25.0, 0.5) - 19.6)
    t = np.linspace(0.0, 2.0, 50)[:, None]
    wl = np.linspace(1.0, 2.5, 50)[None, :]
    errs["lossless"] = np.max(np.abs(slab_transmittance(3.5, 0.0, t, wl, 1.45)
                                     + slab_reflectance(3.5, 0.0, t, wl, 1.45) - 1))
    errs["quarter"] = abs(slab_transmittance(2.0, 0.0, 1.5 / 8, 1.5, 1.0) - 0.64)
    errs["half"] = abs(slab_transmittance(2.0, 0.0, 1.5 / 4, 1.5, 1.0) - 1.0)
    ok = (errs["emt_c0"] <= 1e-12 and errs["emt_c1"] <= 1e-12 and errs["emt_half"] <= 1e-9
          and errs["lossless"] <= 1e-10 and errs["quarter"] <= 1e-9 and errs["half"] <= 1e-9)
    _record(acceptance_log, 2, ok, ", ".join(f"{k} {float(v):.1e}" for k, v in errs.items()))
    assert ok


# ---------------------------------------------------------------------------
# 3. geometry


def test_criterion_3_geometry_suite(acceptance_log):
    rng = np.random.default_rng(0)
    chain = 0.0
    for _ in range(200):
        lg = rng.uniform(-10, 10, 3)
        s = 1 / (1 + np.exp(-lg))
        expected = np.array([1.0, s[0], s[0] * s[1], s[0] * s[1] * s[2]])
        chain = max(chain, np.max(np.abs(presence_chain(lg) - expected) / expected))

    invariant = 0
    for _ in range(100):
        r = sample_dataset_shape(rng, int(rng.integers(1, 5))).polygon().rasterize(64)
        invariant += bool(np.array_equal(r, np.rot90(r)))

    n = 1_000_000
    worst_z = 0.0
    for _ in range(5):
        poly = sample_dataset_shape(rng, int(rng.integers(1, 5))).polygon()
        pts = rng.uniform(-0.5, 0.5, (n, 2))
        est = points_in_polygon(pts, poly.vertices).mean()
        f = fill_factor(poly)
        sigma = np.sqrt(f * (1 - f) / n)
        worst_z = max(worst_z, abs(est - f) / sigma)
    ok = chain < 1e-12 and invariant == 100 and worst_z < 3
    _record(acceptance_log, 3, ok, f"presence chain rel err {chain:.1e}, rotation invariant "
            f"{invariant}/100, shoelace vs Monte Carlo max |z| {worst_z:.2f} (<3)")
    assert ok


# ---------------------------------------------------------------------------
# 5. sensing


def test_criterion_5_sensing_suite(acceptance_log):
    rng = np.random.default_rng(0)
    # dyadic values keep every product and partial sum exact in float64
    cube = rng.integers(0, 65, (6, 5, 100)) / 64.0
    bank = rng.integers(0, 65, (11, 100)) / 64.0
    brute = np.zeros((6, 5, 11))
    for i in range(6):
        for j in range(5):
            for m in range(11):
                acc = 0.0
                for k in range(100):
                    acc += bank[m, k] * cube[i, j, k]
                brute[i, j, m] = acc
    encode_exact = np.array_equal(encode(cube, bank), brute)

    meas = rng.uniform(0.5, 2.0, 1_000_000)
    snr_err = 0.0
    for target in (10.0, 20.0, 30.0):
        noisy = add_noise(meas, target, 1)
        emp = 10 * np.log10(np.mean(meas ** 2) / np.mean((noisy - meas) ** 2))
        snr_err = max(snr_err, abs(emp - target))

    cond_err = 0.0
    for _ in range(20):
        b = rng.uniform(0, 1, (11, 100))
        s = scipy.linalg.svd(b, compute_uv=False, lapack_driver="gesvd")
        cond_err = max(cond_err, abs(condition_number(b) - s[0] / s[-1]) / (s[0] / s[-1]))

    x = rng.uniform(0.1, 1, (4, 4, 100))
    identities = (metrics(x, x).mse == 0.0 and psnr_from_mse(0.0) == 99.0 and sam(x, x) == 0.0
                  and abs(sam(x, 3.0 * x)) < 1e-7
                  and abs(metrics(x, x + 0.1).psnr - 20.0) < 1e-9
                  and abs(metrics(x, x + 0.1).mse - 0.01) < 1e-15)
    ok = encode_exact and snr_err <= 0.2 and cond_err < 1e-8 and identities
    _record(acceptance_log, 5, ok, f"encode exact {encode_exact}, SNR max err {snr_err:.3f} dB "
            f"(<=0.2), cond rel err {cond_err:.1e} (<1e-8), metric identities {identities}")
    assert ok


# ---------------------------------------------------------------------------
# 9. reproducibility

SMALL = """
data.count = 24
scenes.count = 2
scenes.val_count = 1
scenes.H = 16
scenes.W = 16
surrogate.d = 16
surrogate.heads = 2
surrogate.blocks = 1
surrogate.hidden = 32
surrogate.epochs = 2
surrogate.batch = 8
inverse.hidden = 32
inverse.epochs = 2
inverse.tandem_epochs = 2
decoder.features = 8
decoder.blocks = 1
codesign.epochs = 3
codesign.steps = 2
codesign.batch = 2
codesign.crop = 8
"""


def test_criterion_9_reproducibility(acceptance_log, tmp_path):
    cfg = loads(f"out_dir = {str(tmp_path / 'run')!r}\n" + SMALL)
    outputs = []
    for _ in range(2):
        _, path = pipeline.stage_codesign(cfg)
        outputs.append(((path / "metrics.csv").read_bytes(), (path / "config.snapshot").read_bytes(),
                        (path / "checkpoints" / "decoder.ckpt").read_bytes()))
        # start the second run from an empty directory
        for p in sorted((tmp_path / "run").rglob("*"), reverse=True):
            p.unlink() if p.is_file() else p.rmdir()
    metrics_same = outputs[0] == outputs[1]

    cube = generate_scene(SceneSpec(H=5, W=7, seed=2), 0)
    write_cube(cube, tmp_path / "c.hsc")
    cube_ok = read_cube(tmp_path / "c.hsc").tobytes() == cube.tobytes()
    write_cube(read_cube(tmp_path / "c.hsc"), tmp_path / "d.hsc")
    cube_ok &= (tmp_path / "c.hsc").read_bytes() == (tmp_path / "d.hsc").read_bytes()

    state = DecoderModel(seed=4).state_dict()
    save_checkpoint(state, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    ckpt_ok = list(back) == list(state) and all(back[k].tobytes() == state[k].tobytes() for k in state)

    ok = metrics_same and cube_ok and ckpt_ok
    _record(acceptance_log, 9, ok, f"repeat run byte-identical {metrics_same}, cube round-trip "
            f"{cube_ok}, checkpoint round-trip {ckpt_ok}")
    assert ok


# ---------------------------------------------------------------------------
# 4, 6, 7, 8: default-configuration pipeline


@pytest.fixture(scope="module")
def default_pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("default")
    cfg = RunConfig().with_overrides({"out_dir": str(root)})
    t0 = time.perf_counter()
    pipeline.ensure_dataset(cfg)
    t1 = time.perf_counter()
    surrogate_report = pipeline.stage_train_surrogate(cfg)
    t2 = time.perf_counter()
    pipeline.load_inverse(cfg)
    out = {"cfg": cfg, "surrogate": surrogate_report, "dataset_s": t1 - t0, "surrogate_s": t2 - t1,
           "seeds": {}}
    for seed in SEEDS:
        scfg = cfg.with_overrides({"seed": seed})
        s0 = time.perf_counter()
        joint, _ = pipeline.stage_codesign(scfg)
        s1 = time.perf_counter()
        baseline, _ = pipeline.stage_codesign(scfg, freeze_shape=True)
        s2 = time.perf_counter()
        report, _ = pipeline.stage_two_stage(scfg, joint)
        out["seeds"][seed] = {"joint": joint, "baseline": baseline, "report": report,
                              "joint_s": s1 - s0, "baseline_s": s2 - s1}
    return out


def test_criterion_4_surrogate_training(acceptance_log, default_pipeline):
    rep = default_pipeline["surrogate"]
    minutes = default_pipeline["surrogate_s"] / 60
    ok = rep.final_test <= 0.005 and minutes < 30
    _record(acceptance_log, 4, ok, f"held-out MSE {rep.final_test:.2e} (<=0.005), training "
            f"{minutes:.1f} min (<30), dataset generation {default_pipeline['dataset_s']:.1f} s")
    assert ok


def test_criterion_6_codesign_improvement(acceptance_log, default_pipeline):
    seeds = default_pipeline["seeds"]
    joint = np.array([[s["joint"].final.psnr, s["joint"].final.sam, s["joint"].final.mse]
                      for s in seeds.values()])
    base = np.array([[s["baseline"].final.psnr, s["baseline"].final.sam, s["baseline"].final.mse]
                     for s in seeds.values()])
    gain = joint[:, 0].mean() - base[:, 0].mean()
    worst_minutes = max(s["joint_s"] for s in seeds.values()) / 60
    ok = (gain >= 3.0 and joint[:, 1].mean() < base[:, 1].mean()
          and joint[:, 2].mean() < base[:, 2].mean() and worst_minutes < 60)
    _record(acceptance_log, 6, ok,
            f"mean PSNR joint {joint[:, 0].mean():.2f} vs baseline {base[:, 0].mean():.2f} dB "
            f"(gain {gain:+.2f}, need >=3), SAM {joint[:, 1].mean():.4f} vs {base[:, 1].mean():.4f}, "
            f"MSE {joint[:, 2].mean():.5f} vs {base[:, 2].mean():.5f}, "
            f"slowest seed {worst_minutes:.1f} min (<60)")
    assert ok


def test_criterion_7_two_stage_ordering(acceptance_log, default_pipeline):
    snrs = default_pipeline["cfg"].codesign.test_snrs
    bad = []
    parts = []
    for seed, s in default_pipeline["seeds"].items():
        rep = s["report"]
        for snr in snrs:
            a, b = rep.get("initial", snr).psnr, rep.get("optimized", snr).psnr
            parts.append(f"s{seed}@{snr:g}dB {a:.2f}->{b:.2f}")
            if b < a:
                bad.append((seed, snr))
    ok = not bad
    _record(acceptance_log, 7, ok, f"optimized >= initial PSNR in {3 * len(snrs) - len(bad)}/"
            f"{3 * len(snrs)} cases; " + ", ".join(parts))
    assert ok


def test_criterion_8_condition_dip(acceptance_log, default_pipeline):
    parts, dips = [], 0
    for seed, s in default_pipeline["seeds"].items():
        values = [r.cond for r in s["joint"].rows]
        dipped = min(values) < values[0]
        dips += dipped
        parts.append(f"s{seed} {values[0]:.4g}->min {min(values):.4g}@{int(np.argmin(values))}")
    ok = dips >= 2
    _record(acceptance_log, 8, ok, f"dip in {dips}/3 seeds (need >=2); " + ", ".join(parts))
    assert ok
