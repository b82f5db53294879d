"""Acceptance suite.

Each test checks one criterion at its stated tolerance and time budget and
records a PASS/FAIL line, printed in the terminal summary.  The end-to-end
training runs share one cached scene and one cached all-losses run.
"""
import itertools
import time

import numpy as np
import pytest
import torch

import hetcd.cli as cli
import oracles
from conftest import ACCEPTANCE_LINES, tiny_arch
from hetcd.config import ArchConfig, LossToggles, TrainConfig
from hetcd.data_io import generate_synthetic_pair, load_binary_png, load_di_raw, load_scene
from hetcd.detector import detect_changes, otsu_threshold
from hetcd.losses import alignment_loss, compute_losses, total_loss
from hetcd.metrics import (classification_metrics, confusion_counts, fid, kid, overall_from_errors,
                           roc_pr_curves)
from hetcd.model import adain, init_parameters
from hetcd.trainer import fit

E2E_ARCH = ArchConfig.scaled(32, 64, channels_x=3, channels_y=1)
E2E_SEED = 7


def record(number, title, ok, elapsed, budget, detail=""):
    ok = bool(ok) and elapsed <= budget
    ACCEPTANCE_LINES.append(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  "
                            f"[{elapsed:.1f}s / {budget:.0f}s] {detail}".rstrip())
    assert ok, ACCEPTANCE_LINES[-1]


def test_criterion_01_metric_fidelity():
    start = time.perf_counter()
    oe, oa = overall_from_errors(7970, 12044, 1534 * 808)
    elapsed = time.perf_counter() - start
    record(1, "OE/OA from error counts", oe == 20014 and round(oa, 4) == 0.9839, elapsed, 1,
           f"OE={oe} OA={oa:.4f}")


def _otsu_inputs(count=1000, seed=2024):
    rng = np.random.default_rng(seed)
    for i in range(count):
        n = int(rng.integers(32, 4097))
        if i % 2:
            split = int(rng.integers(1, n))
            a = rng.normal(rng.uniform(-5, 0), rng.uniform(0.1, 2), split)
            b = rng.normal(rng.uniform(0.5, 5), rng.uniform(0.1, 2), n - split)
            yield np.concatenate([a, b])
        else:
            yield rng.normal(rng.uniform(-3, 3), rng.uniform(0.1, 3), n)


def test_criterion_02_otsu_oracle():
    arrays = list(_otsu_inputs())
    start = time.perf_counter()
    got = [otsu_threshold(a) for a in arrays]
    elapsed = time.perf_counter() - start
    matches = sum(g == oracles.otsu_exhaustive(a) for g, a in zip(got, arrays))
    record(2, "Otsu equals exhaustive maximizer", matches == len(arrays), elapsed, 30,
           f"{matches}/{len(arrays)} match")


def test_criterion_03_gradient_check():
    rng = np.random.default_rng(3)
    model = init_parameters(3, tiny_arch(channels_x=4, channels_y=4), dtype=torch.float64)
    assert model.config.ffb_width == 8
    x = torch.as_tensor(rng.random((1, 4, 8, 8)))
    y = torch.as_tensor(rng.random((1, 4, 8, 8)))
    p_c = torch.as_tensor(rng.integers(0, 2, (1, 8, 8))).double()
    # zero biases park units exactly on a ReLU kink where differences are meaningless
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.copy_(torch.as_tensor(rng.normal(0, 0.1, p.shape)))

    def objective():
        return total_loss(compute_losses(model(x, y), x, y, p_c))

    start = time.perf_counter()
    model.zero_grad()
    objective().backward()
    params = list(model.named_parameters())
    scale = max(p.grad.abs().max().item() for _, p in params)
    h, worst, worst_name, checked = 1e-6, 0.0, "", 0
    with torch.no_grad():
        for name, p in params:
            flat, grad = p.data.view(-1), p.grad.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = objective().item()
                flat[i] = old - h
                down = objective().item()
                flat[i] = old
                numeric, analytic = (up - down) / (2 * h), grad[i].item()
                rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-4 * scale)
                if rel > worst:
                    worst, worst_name = rel, f"{name}[{i}]"
                checked += 1
    elapsed = time.perf_counter() - start
    record(3, "analytic vs central-difference gradients", worst <= 1e-4, elapsed, 300,
           f"{checked} params, max rel err {worst:.2e} at {worst_name}")


def test_criterion_04_adain_contract():
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst_mean = worst_std = 0.0
    for _ in range(100):
        c, hgt, wid = (int(v) for v in rng.integers(1, 17, 3))
        if hgt * wid < 2:
            wid = 2
        z = torch.as_tensor(rng.normal(rng.uniform(-5, 5), rng.uniform(0.01, 5), (1, c, hgt, wid)))
        out = adain(z, torch.ones(c, dtype=z.dtype), torch.zeros(c, dtype=z.dtype), 1e-5)
        delta = z.std(dim=(2, 3), unbiased=False)[0]
        worst_mean = max(worst_mean, out.mean(dim=(2, 3)).abs().max().item())
        std = out.std(dim=(2, 3), unbiased=False)[0]
        worst_std = max(worst_std, (std - delta / (delta + 1e-5)).abs().max().item())
    elapsed = time.perf_counter() - start
    record(4, "AdaIN normalizes each channel", worst_mean <= 1e-6 and worst_std <= 1e-4, elapsed, 5,
           f"max|mean|={worst_mean:.1e} max std err={worst_std:.1e}")


def test_criterion_05_fid_kid_oracles():
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    a = rng.normal(size=(500, 16))
    self_fid = fid(a, a)
    g1, g2 = rng.normal(0.0, 1.0, 100_000), rng.normal(1.0, 2.0, 100_000)
    gauss = fid(g1, g2)
    self_kid = kid(a, a)
    worst = 0.0
    for m, n, d in [(1, 1, 3), (50, 80, 4), (200, 150, 8), (200, 200, 2)]:
        r, t = rng.normal(size=(m, d)), rng.normal(0.3, 1.2, size=(n, d))
        worst = max(worst, abs(kid(r, t) - oracles.kid_loops(r, t)))
    elapsed = time.perf_counter() - start
    ok = self_fid <= 1e-6 and abs(gauss - 2.0) <= 0.1 and self_kid == 0.0 and worst <= 1e-12
    record(5, "FID/KID oracles", ok, elapsed, 60,
           f"fid(A,A)={self_fid:.1e} fid(N(0,1),N(1,4))={gauss:.4f} kid(A,A)={self_kid} kid err={worst:.1e}")


def _auc_instances():
    levels = np.array([0.0, 0.5, 1.0, 1.0, 2.0, 3.0, 3.0, 4.0])
    # every labelling of a tie-heavy 8-pixel DI
    for bits in itertools.product((0, 1), repeat=8):
        yield levels, np.array(bits)
    rng = np.random.default_rng(6)
    for _ in range(500):
        n = int(rng.integers(2, 65))
        yield rng.integers(0, 6, n) * 0.5, rng.integers(0, 2, n)


def test_criterion_06_auc_pair_counting():
    start = time.perf_counter()
    worst, count = 0.0, 0
    for di, gt in _auc_instances():
        if gt.min() == gt.max():
            continue
        _, _, auc, _ = roc_pr_curves(di, gt)
        worst = max(worst, abs(auc - oracles.pair_counting_auc(di, gt)))
        count += 1
    elapsed = time.perf_counter() - start
    record(6, "trapezoid AUC equals pair counting", worst <= 1e-10, elapsed, 10,
           f"{count} instances, max err {worst:.1e}")


def test_criterion_10_loss_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(10)
    c = torch.as_tensor(rng.normal(size=(2, 8, 6, 6)))
    ones, zeros = torch.ones(2, 6, 6, dtype=c.dtype), torch.zeros(2, 6, 6, dtype=c.dtype)
    sat_one = alignment_loss(c, c, c, c, ones).item()
    sat_zero = alignment_loss(c, c, c, c, zeros).item()
    model = init_parameters(0, tiny_arch(), dtype=torch.float64)
    x, y = torch.as_tensor(rng.random((2, 4, 8, 8))), torch.as_tensor(rng.random((2, 2, 8, 8)))
    parts = compute_losses(model(x, y), x, y, torch.as_tensor(rng.integers(0, 2, (2, 8, 8))).double())
    gap = abs(total_loss(parts).item() - (parts.recon + parts.trans + parts.cyc + parts.align).item())
    elapsed = time.perf_counter() - start
    record(10, "loss identities", sat_one == 2.0 and sat_zero == 0.0 and gap <= 1e-12, elapsed, 60,
           f"align(P=1)={sat_one} align(P=0)={sat_zero} sum gap={gap:.1e}")


# --- end-to-end synthetic runs ---------------------------------------------------

E2E_FLAGS = ["--seed", str(E2E_SEED), "--iterations", "2", "--epochs", "5", "--batch-size", "16",
             "--set", "content_widths=" + ",".join(map(str, E2E_ARCH.content_widths)),
             "--set", "style_widths=" + ",".join(map(str, E2E_ARCH.style_widths))]


def _cli_run(root, tag):
    scene, run, det = root / "scene", root / f"run-{tag}", root / f"detect-{tag}"
    start = time.perf_counter()
    assert cli.main(["train", "--scene", str(scene), "--out", str(run), *E2E_FLAGS]) == 0
    assert cli.main(["detect", "--scene", str(scene), "--checkpoint", str(run / "checkpoint.raw"),
                     "--out", str(det)]) == 0
    return run, det, time.perf_counter() - start


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    assert cli.main(["synth", "--seed", str(E2E_SEED), "--size", "256", "--change", "0.1",
                     "--out", str(root / "scene")]) == 0
    run, det, elapsed = _cli_run(root, "a")
    return root, run, det, elapsed


def _kc(change_map, gt):
    return classification_metrics(confusion_counts(change_map, gt)).kc


def _loss_totals(run):
    rows = (run / "losses.csv").read_text().splitlines()[1:]
    return [float(r.split(",")[-1]) for r in rows]


def test_criterion_07_end_to_end(e2e):
    root, run, det, elapsed = e2e
    scene = load_scene(root / "scene")
    reference = generate_synthetic_pair(E2E_SEED, 256, 256, 0.1)
    assert np.array_equal(scene.gt, reference.gt)
    _, _, auc, _ = roc_pr_curves(load_di_raw(det / "di.raw"), scene.gt)
    kc = _kc(load_binary_png(det / "cm.png"), scene.gt)
    totals = _loss_totals(run)
    ratio = totals[-1] / totals[0]
    ok = auc >= 0.90 and kc >= 0.5 and ratio <= 0.5
    record(7, "synthetic end-to-end run", ok, elapsed, 900,
           f"AUC={auc:.4f} KC={kc:.4f} final/initial loss={ratio:.3f}")


def test_criterion_08_determinism(e2e):
    root, run, det, _ = e2e
    run2, det2, elapsed = _cli_run(root, "b")
    same_cm = (det / "cm.png").read_bytes() == (det2 / "cm.png").read_bytes()
    same_csv = (run / "losses.csv").read_bytes() == (run2 / "losses.csv").read_bytes()
    record(8, "repeat run is bit-identical", same_cm and same_csv, elapsed, 900,
           f"cm identical={same_cm} losses identical={same_csv}")


def test_criterion_09_alignment_ablation(e2e):
    root, _, det, _ = e2e
    scene = load_scene(root / "scene")
    x, y = scene.image_x.data, scene.image_y.data
    start = time.perf_counter()
    with_align = [_kc(load_binary_png(det / "cm.png"), scene.gt)]
    without_align = []
    for seed in (E2E_SEED, E2E_SEED + 1, E2E_SEED + 2):
        for toggles in ((LossToggles(),) if seed != E2E_SEED else ()) + (LossToggles.without("align"),):
            cfg = TrainConfig(iterations=2, epochs_per_iteration=5, batch_size=16, seed=seed, losses=toggles)
            model = fit(x, y, cfg, E2E_ARCH).model
            kc = _kc(detect_changes(model, x, y).change_map, scene.gt)
            (with_align if toggles.align else without_align).append(kc)
    elapsed = time.perf_counter() - start
    med_with, med_without = float(np.median(with_align)), float(np.median(without_align))
    record(9, "disabling alignment lowers median KC", med_without < med_with, elapsed, 3600,
           f"median KC with={med_with:.4f} without={med_without:.4f}")
