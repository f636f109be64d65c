"""Acceptance gate: exact contracts plus desk-scale behavioral reproduction.

The exact contracts are deterministic and fast. The behavioral checks train a
small matrix of runs (7 variants x 5 seeds) on the default desk-scale config
and compare seed medians, so this module takes several minutes end to end.
Each check prints a single PASS/FAIL line.
"""

from pathlib import Path

import numpy as np
import pytest
from scipy import stats as scipy_stats

from detlab import net
from detlab.config import load_config, parse_config, with_updates
from detlab.harness import run_experiment
from detlab.metrics import Detection, compute_ap, nms
from detlab.net import Gradients, load_params
from detlab.prm import ensemble_scores, select_regression
from detlab.rga import AnnealSchedule, anneal_factor, apply_rga
from detlab.sampler import SamplingPolicy, sample_hard, sample_soft
from detlab.seeding import derive_seed
from detlab.geometry import Box, GroundTruthInstance
from detlab.synthdata import Scene, generate_proposals, generate_scene

CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"
SEEDS = (11, 23, 37, 53, 71)

VARIANTS = {
    "baseline": dict(mode="baseline"),
    "rga": dict(mode="rga", rga_enabled=True),
    "prm": dict(mode="prm", ratios=((1, 1), (1, 9))),
    "rga_prm": dict(mode="rga+prm", ratios=((1, 1), (1, 9)), rga_enabled=True),
    "soft11": dict(mode="baseline", ratios=((1, 1),)),
    "soft19": dict(mode="baseline", ratios=((1, 9),)),
    "hard11": dict(mode="baseline", ratios=((1, 1),), sampling_mode="hard"),
}


def report(label, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f"  [{detail}]" if detail else ""
    print(f"acceptance {label}: {status}{suffix}")
    assert ok, f"{label} failed{suffix}"


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """Train the full desk-scale run matrix once and share it across checks."""
    root = tmp_path_factory.mktemp("desk_runs")
    runs = {}
    for seed in SEEDS:
        base = load_config(CONFIG_PATH, seed=seed, out=str(root))
        for name, overrides in VARIANTS.items():
            cfg = with_updates(base, out=str(root / f"{name}_s{seed}"), **overrides)
            runs[(name, seed)] = run_experiment(cfg)
    return runs


def median_over_seeds(runs, name, fn):
    return float(np.median([fn(runs[(name, seed)]) for seed in SEEDS]))


def pos_acc_series(run):
    return np.array(
        [r.pos_acc if r.pos_acc is not None else np.nan for r in run.metrics.rows]
    )


TINY_CFG = """
[sampling]
batch_size = 32

[train]
steps = 40
train_scenes = 16
hidden = 8

[eval]
scenes = 8

[run]
seed = 5
"""


def tiny_run(tmp_path, name, **overrides):
    cfg = parse_config(TINY_CFG, out=str(tmp_path / name))
    return run_experiment(with_updates(cfg, **overrides))


# --- exact contracts --------------------------------------------------------


class TestExactContracts:
    def test_01_anneal_schedule_endpoints(self):
        ok = True
        for lam0 in (3.0, 5.0, 7.0, 9.0):
            sched = AnnealSchedule(lam0, 3000)
            ok = ok and anneal_factor(0, sched) == lam0
            ok = ok and anneal_factor(3000, sched) == 1.0
        ok = ok and anneal_factor(1500, AnnealSchedule(7.0, 3000)) == 4.0
        report("01 anneal schedule endpoints and midpoint", ok)

    def test_02_rga_scales_heads_only(self):
        rng = np.random.default_rng(0)
        grads = Gradients(
            backbone=net.init_backbone(6, 4, rng),
            heads=[net.init_head(4, 3, rng) for _ in range(2)],
        )
        lam = 4.25
        out = apply_rga(grads, lam)
        ok = all(
            np.abs(b / lam - a).max() <= 1e-12 * np.abs(a).max()
            for head_in, head_out in zip(grads.heads, out.heads)
            for a, b in zip(head_in.arrays(), head_out.arrays())
        )
        ok = ok and all(
            a is b for a, b in zip(grads.backbone.arrays(), out.backbone.arrays())
        )
        report("02a head gradients scale, backbone untouched", ok)

    def test_02_lambda0_one_matches_baseline_run(self, tmp_path):
        plain = tiny_run(tmp_path, "plain")
        unit = tiny_run(tmp_path, "unit", mode="rga", rga_enabled=True, lambda0=1.0)
        same_csv = (
            (plain.out_dir / "metrics.csv").read_bytes()
            == (unit.out_dir / "metrics.csv").read_bytes()
        )
        bb_a, heads_a = load_params(plain.out_dir / "checkpoint.npz")
        bb_b, heads_b = load_params(unit.out_dir / "checkpoint.npz")
        same_params = all(
            np.array_equal(x, y)
            for x, y in zip(
                bb_a.arrays() + heads_a[0].arrays(),
                bb_b.arrays() + heads_b[0].arrays(),
            )
        )
        report("02b unit magnification run is bit-identical", same_csv and same_params)

    def test_03_soft_sampler_exhaustive(self):
        policy = SamplingPolicy(mode="soft", ratio=(1, 3), batch_size=512)
        ok = True
        for n_pos in range(513):
            classes = np.concatenate(
                [np.ones(n_pos, dtype=np.int64), np.zeros(512, dtype=np.int64)]
            )
            batch = sample_soft(classes, policy, rng_seed=n_pos)
            ok = ok and batch.pos_count_unique == min(n_pos, 128)
            ok = ok and len(batch.indices) == 512
            ok = ok and np.all(batch.multiplicities == 1)
            ok = ok and len(np.unique(batch.indices)) == 512
            if not ok:
                break
        report("03 soft sampler exhaustive 0..512 positives", ok)

    def test_04_hard_sampler_exhaustive(self):
        policy = SamplingPolicy(mode="hard", ratio=(1, 3), batch_size=512)
        ok = True
        for n_pos in range(1, 128):
            classes = np.concatenate(
                [np.ones(n_pos, dtype=np.int64), np.zeros(512, dtype=np.int64)]
            )
            batch = sample_hard(classes, policy, rng_seed=n_pos)
            ok = ok and batch.pos_count_effective == 128
            pos_mults = batch.multiplicities[: batch.pos_count_unique]
            ok = ok and pos_mults.max() - pos_mults.min() <= 1
            if not ok:
                break
        report("04 hard sampler hits effective 128 for 1..127 positives", ok)

    def test_05_gradient_check(self):
        worst = 0.0
        for trial in range(20):
            rng = np.random.default_rng(1000 + trial)
            n = int(rng.integers(2, 9))
            d = int(rng.integers(2, 7))
            h = int(rng.integers(2, 6))
            c = int(rng.integers(1, 4))
            backbone = net.init_backbone(d, h, rng)
            head = net.init_head(h, c, rng)
            x = rng.normal(size=(n, d))
            targets = rng.integers(0, c + 1, size=n)
            pos_mask = targets > 0
            reg_targets = rng.normal(size=(n, 4))
            mults = rng.integers(1, 4, size=n).astype(float)

            def loss_value():
                logits, deltas, _ = net.forward(backbone, head, x)
                return net.total_loss(
                    logits, deltas, targets, reg_targets, pos_mask, mults
                )

            _, _, cache = net.forward(backbone, head, x)
            grad_bb, grad_head = net.backward(
                cache, targets, reg_targets, pos_mask, mults
            )
            analytic = grad_bb.arrays() + grad_head.arrays()
            params = backbone.arrays() + head.arrays()
            for param, grad in zip(params, analytic):
                flat = param.ravel()
                for idx in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                    old = flat[idx]
                    flat[idx] = old + 1e-5
                    up = loss_value()
                    flat[idx] = old - 1e-5
                    down = loss_value()
                    flat[idx] = old
                    numeric = (up - down) / 2e-5
                    denom = max(abs(numeric), abs(grad.ravel()[idx]), 1e-8)
                    worst = max(worst, abs(numeric - grad.ravel()[idx]) / denom)
        report("05 analytic gradients vs finite differences", worst < 1e-4,
               f"max rel err {worst:.2e}")

    def test_06_ensemble_contracts(self):
        rng = np.random.default_rng(7)
        head_logits = [rng.normal(size=(9, 4)) for _ in range(3)]
        brute = sum(head_logits) / len(head_logits)
        ok = np.abs(ensemble_scores(head_logits) - brute).max() <= 1e-12
        policies = [
            SamplingPolicy("soft", (1, 1), 32),
            SamplingPolicy("soft", (1, 9), 32),
        ]
        deltas = [rng.normal(size=(9, 4)) for _ in range(2)]
        chosen = select_regression(policies, deltas)
        ok = ok and chosen is deltas[0]
        report("06 logit-mean ensemble and regression head selection", ok)

    def test_07_triangle_inequality_all_steps(self, tmp_path):
        run = tiny_run(
            tmp_path, "tri", mode="prm", ratios=((1, 1), (1, 9))
        )
        ok = all(
            r.norm_sum <= sum(r.head_norms) + 1e-9 for r in run.gradnorm
        ) and len(run.gradnorm) == 40
        report("07 summed-gradient norm triangle inequality", ok)

    def test_08_evaluation_contracts(self):
        scenes = [
            Scene(id=0, extent=(100.0, 100.0), instances=(
                GroundTruthInstance(Box(5, 5, 20, 20), 1),
                GroundTruthInstance(Box(40, 40, 70, 60), 2),
            )),
            Scene(id=1, extent=(100.0, 100.0), instances=(
                GroundTruthInstance(Box(10, 30, 25, 55), 3),
            )),
        ]
        dets = [Detection(s.id, g.box, g.class_id, 0.9)
                for s in scenes for g in s.instances]
        perfect = compute_ap(dets, scenes, buckets=())
        ok = perfect.mean_ap == 1.0
        rng = np.random.default_rng(8)
        noisy = []
        for s in scenes:
            for g in s.instances:
                jx, jy = rng.uniform(-3, 3, size=2)
                noisy.append(Detection(
                    s.id,
                    Box(g.box.x1 + jx, g.box.y1 + jy, g.box.x2 + jx, g.box.y2 + jy),
                    g.class_id, float(rng.uniform(0.3, 1.0))))
        noisy_ap = compute_ap(noisy, scenes, buckets=())
        ok = ok and noisy_ap.ap75 <= noisy_ap.ap50
        once = nms(noisy, 0.5)
        ok = ok and nms(once, 0.5) == once
        report("08 perfect AP, threshold monotonicity, NMS idempotence", ok)


# --- behavioral reproduction ------------------------------------------------


class TestBehavioral:
    def test_09_positive_scarcity_and_growth(self, desk_runs):
        early_fracs = []
        rhos = []
        for seed in SEEDS:
            run = desk_runs[("baseline", seed)]
            target = run.config.policies[0].pos_target
            eff = np.array([r.pos_count_effective for r in run.metrics.rows],
                           dtype=float)
            t10 = len(eff) // 10
            early_fracs.append(eff[:t10].mean() / target)
            window = 101
            smoothed = np.convolve(eff, np.ones(window) / window, mode="valid")
            rhos.append(scipy_stats.spearmanr(
                smoothed, np.arange(len(smoothed))).statistic)
        frac = float(np.median(early_fracs))
        rho = float(np.median(rhos))
        report("09 early positives scarce, count grows with step",
               frac < 0.5 and rho > 0.8,
               f"early frac {frac:.3f}, spearman {rho:.3f}")

    def test_10_gt_count_drives_positive_count(self, desk_runs):
        rhos = []
        for seed in SEEDS:
            run = desk_runs[("baseline", seed)]
            cfg = run.config
            gt_counts = []
            pos_counts = []
            for i in range(500):
                scene = generate_scene(cfg.scene, derive_seed(seed, "shape", i))
                pool = generate_proposals(
                    scene, 1.0, cfg.rpn, derive_seed(seed, "shapeprop", i),
                    feat=cfg.feat, num_classes=cfg.scene.num_classes,
                    box_size_range=cfg.scene.box_size_range)
                gt_counts.append(len(scene.instances))
                pos_counts.append(int(np.sum(pool.classes > 0)))
            rhos.append(scipy_stats.spearmanr(gt_counts, pos_counts).statistic)
        rho = float(np.median(rhos))
        report("10 per-scene gt count vs positive proposals", rho > 0.5,
               f"spearman {rho:.3f}")

    def test_11_rga_lifts_positive_accuracy_only(self, desk_runs):
        margins = []
        neg_diffs = []
        for seed in SEEDS:
            base = pos_acc_series(desk_runs[("baseline", seed)])
            rga = pos_acc_series(desk_runs[("rga", seed)])
            third = len(base) // 3
            margins.append(np.nanmean(rga[:third]) - np.nanmean(base[:third]))
            tail = len(base) // 10
            base_neg = np.array(
                [r.neg_acc for r in desk_runs[("baseline", seed)].metrics.rows])
            rga_neg = np.array(
                [r.neg_acc for r in desk_runs[("rga", seed)].metrics.rows])
            neg_diffs.append(abs(rga_neg[-tail:].mean() - base_neg[-tail:].mean()))
        margin = float(np.median(margins))
        neg_diff = float(np.median(neg_diffs))
        report("11 annealed magnification lifts early positive accuracy",
               margin > 0 and neg_diff < 0.02,
               f"margin {margin:+.4f}, final neg-acc diff {neg_diff:.4f}")

    def test_12_ap_orderings(self, desk_runs):
        med = {name: median_over_seeds(desk_runs, name,
                                       lambda r: r.summary["ap_mean"])
               for name in ("baseline", "rga", "rga_prm", "soft11", "hard11")}
        ok = (med["rga"] >= med["baseline"]
              and med["rga_prm"] >= med["rga"]
              and med["soft11"] >= med["hard11"])
        report("12 AP orderings across variants", ok,
               ", ".join(f"{k} {v:.4f}" for k, v in med.items()))

    def test_13_low_ratio_head_scores_lower(self, desk_runs):
        gaps = []
        fracs = []
        for seed in SEEDS:
            stats = desk_runs[("prm", seed)].eval.score_stats
            gaps.append(stats.mean_fg[0] - stats.mean_fg[1])
            fracs.append(stats.frac_large_gap)
        gap = float(np.median(gaps))
        frac = float(np.median(fracs))
        report("13 1:1 head outscores 1:9 head on foreground", gap > 0,
               f"mean-score gap {gap:+.4f}, frac large gap {frac:.3f}")

    def test_14_bucket_tradeoff_and_ensemble_floor(self, desk_runs):
        hi_gaps = []
        lo_gaps = []
        floor_margins = []
        for seed in SEEDS:
            s11 = desk_runs[("soft11", seed)].summary
            s19 = desk_runs[("soft19", seed)].summary
            hi_gaps.append(s11["ap_bucket_8_inf"] - s19["ap_bucket_8_inf"])
            lo_gaps.append(s11["ap_bucket_1_3"] - s19["ap_bucket_1_3"])
            prm = desk_runs[("prm", seed)].summary
            for bucket in ("ap_bucket_1_3", "ap_bucket_8_inf"):
                worse = min(h[bucket] for h in prm["heads"])
                floor_margins.append(prm[bucket] - worse)
        hi = float(np.median(hi_gaps))
        lo = float(np.median(lo_gaps))
        floor = float(np.median(floor_margins))
        report("14 crowded-scene tradeoff and ensemble floor",
               hi > 0 and lo < hi and floor >= 0,
               f"gap hi {hi:+.4f}, gap lo {lo:+.4f}, ensemble margin {floor:+.4f}")
