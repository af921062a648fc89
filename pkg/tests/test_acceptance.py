"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Quantitative criteria run on a reduced-width model (12 channels instead of
96) trained on the session toy dataset; structural and oracle criteria run
at whatever width they state. Run with ``pytest tests/test_acceptance.py -v -s``
to see the per-criterion lines as they complete.
"""

import time

import numpy as np
import pytest
import torch

from mbrestore.attention import SEResBlock, channel_tv
from mbrestore.blocks import DualResBlock
from mbrestore.degrade import (JpegParams, RainParams, rain_streak_layer,
                               sample_rain_params, synth_blur, synth_haze,
                               synth_jpeg, synth_rain, vertical_gradient_depth,
                               BlurParams, HazeParams)
from mbrestore.evaluate import ABLATION_GRID, ablation_harness, order_search, psnr
from mbrestore.factors import DEFAULT_RESTORE_ORDER, Factor
from mbrestore.network import (ModelConfig, MultiBranchNet, mbn_restore,
                               param_report, rmbn_restore, zero_residual_heads)
from mbrestore.training import (CycleSpec, FinetuneSpec, OptimSpec, build_cycle,
                                finetune_recurrent)

from conftest import train_set_psnr
from helpers import (ArrayPairDataset, build_toy_dataset, fd_gradient_check,
                     make_fake_datasets, min_kink_margin, prepare_fd_instance,
                     tiny_model_config)
from test_attention import tv_oracle
from test_evaluate import make_eval_dataset


class criterion:
    """Prints the required one pass/fail line per criterion."""

    def __init__(self, number, description):
        self.number = number
        self.description = description

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        print(f"[acceptance] criterion {self.number:>2}: {status} - {self.description}")
        return False


def test_criterion_1_tv_statistic_matches_double_loop_oracle():
    with criterion(1, "channel TV equals the double-loop oracle to 1e-6 "
                      "on 100 random tensors, under 10 s"):
        rng = np.random.default_rng(101)
        start = time.monotonic()
        for trial in range(100):
            c = int(rng.integers(1, 9))
            h = int(rng.integers(1, 17))
            w = int(rng.integers(1, 17))
            beta = float(rng.choice([1.0, 2.0, 3.0]))
            x = rng.standard_normal((c, h, w))
            got = channel_tv(torch.from_numpy(x), beta).numpy()
            np.testing.assert_allclose(got, tv_oracle(x, beta), atol=1e-6)
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"


def test_criterion_2_gradients_match_central_finite_differences():
    with criterion(2, "attention, residual block and fusion block pass "
                      "central finite-difference checks (h=1e-3, rel err <= 1e-3), "
                      "10 instances each, under 2 min"):
        start = time.monotonic()
        rng = np.random.default_rng(202)
        from mbrestore.attention import ChannelStatsAttention

        for trial in range(10):
            att = prepare_fd_instance(ChannelStatsAttention(4, reduction=2), rng)
            x = torch.from_numpy(rng.uniform(-0.5, 0.5, (1, 4, 8, 8)))
            proj = torch.from_numpy(rng.standard_normal((1, 4, 8, 8)))
            x.requires_grad_(True)
            assert min_kink_margin(att, lambda: att(x.detach())) > 0.05
            fd_gradient_check(lambda t: (att(t) * proj).sum(), [x], rng, h=1e-3,
                              rtol=1e-3, max_coords=100)
        for trial in range(10):
            block = prepare_fd_instance(SEResBlock(4, reduction=2), rng)
            x = torch.from_numpy(rng.uniform(-0.5, 0.5, (1, 4, 8, 8)))
            proj = torch.from_numpy(rng.standard_normal((1, 4, 8, 8)))
            x.requires_grad_(True)
            assert min_kink_margin(block, lambda: block(x.detach())) > 0.05
            fd_gradient_check(lambda t: (block(t) * proj).sum(), [x], rng, h=1e-3,
                              rtol=1e-3, max_coords=100)
        for trial in range(10):
            block = prepare_fd_instance(DualResBlock(4, reduction=2), rng)
            x = torch.from_numpy(rng.uniform(-0.5, 0.5, (1, 4, 8, 8)))
            u = torch.from_numpy(rng.uniform(-0.5, 0.5, (1, 4, 16, 16)))
            proj_x = torch.from_numpy(rng.standard_normal((1, 4, 8, 8)))
            proj_u = torch.from_numpy(rng.standard_normal((1, 4, 16, 16)))
            x.requires_grad_(True)
            u.requires_grad_(True)
            assert min_kink_margin(block, lambda: block(x.detach(), u.detach())) > 0.05

            def scalar(xt, ut):
                xo, uo = block(xt, ut)
                return (xo * proj_x).sum() + (uo * proj_u).sum()

            fd_gradient_check(scalar, [x, u], rng, h=1e-3, rtol=1e-3, max_coords=50)
        elapsed = time.monotonic() - start
        assert elapsed < 120.0, f"gradient checks took {elapsed:.1f}s"


def test_criterion_3_zeroed_components_are_exact_identities():
    with criterion(3, "zero-parameter fusion block / residual block are exact "
                      "identities; zeroed heads give zero residuals"):
        rng = np.random.default_rng(303)
        block = DualResBlock(channels=6, reduction=2)
        res = SEResBlock(channels=6, reduction=2)
        with torch.no_grad():
            for p in list(block.parameters()) + list(res.parameters()):
                p.zero_()
        x = torch.from_numpy(rng.standard_normal((2, 6, 8, 8))).float()
        u = torch.from_numpy(rng.standard_normal((2, 6, 16, 16))).float()
        x_out, u_out = block(x, u)
        assert torch.equal(x_out, x) and torch.equal(u_out, u)
        assert torch.equal(res(x), x)
        for arch in ("improved", "minimal"):
            torch.manual_seed(33)
            model = zero_residual_heads(MultiBranchNet(tiny_model_config(arch=arch)))
            img = torch.from_numpy(rng.random((1, 3, 48, 48))).float()
            for factor in Factor:
                with torch.no_grad():
                    out = mbn_restore(model, img, factor)
                assert torch.equal(out, img), f"{arch}/{factor}"


def test_criterion_4_cycle_composition_and_crop_sizes():
    with criterion(4, "1000 cycles each hold exactly {haze:1, rain:1, jpeg:1, "
                      "blur:3} minibatches with 128/256 crops"):
        rng = np.random.default_rng(404)
        big = rng.random((300, 300, 3)).astype(np.float32)
        datasets = {f: ArrayPairDataset([(big, big)]) for f in Factor}
        spec = CycleSpec(batch_size=1)
        stream = np.random.default_rng(405)
        expected = sorted(["haze", "rain", "jpeg", "blur", "blur", "blur"])
        for _ in range(1000):
            cycle = build_cycle(datasets, spec, stream)
            assert sorted(b.factor.value for b in cycle) == expected
            for batch in cycle:
                size = 128 if batch.factor is Factor.RAIN else 256
                assert batch.degraded.shape[-2:] == (size, size)
                assert batch.clean.shape[-2:] == (size, size)


def test_criterion_5_finetune_loss_identity_and_frozen_inputs(tmp_path):
    with criterion(5, "100-step fine-tune: logged total equals "
                      "0.8*intermediate + 0.2*final to 1e-6; input branches "
                      "bitwise frozen"):
        manifests = build_toy_dataset(tmp_path / "data", n_images=4, size=32,
                                      seed=55)
        from mbrestore.training import datasets_from_manifests
        datasets = datasets_from_manifests(manifests)
        torch.manual_seed(5)
        model = MultiBranchNet(tiny_model_config())
        before = {k: v.clone() for k, v in model.state_dict().items()
                  if k.startswith("inputs.")}
        result = finetune_recurrent(
            model, datasets, FinetuneSpec(lr=1e-4, batch_size=1),
            DEFAULT_RESTORE_ORDER, iters=100,
            cycle_spec=CycleSpec(batch_size=1, crop_rain=32, crop_other=32), seed=5)
        assert len(result.records) == 100
        for rec in result.records:
            expected = 0.8 * rec["loss_intermediate"] + 0.2 * rec["loss_final"]
            assert abs(rec["loss"] - expected) <= 1e-6
        after = model.state_dict()
        for name, tensor in before.items():
            assert torch.equal(tensor, after[name]), name


def test_criterion_6_first_recurrent_stage_is_bitwise_single_factor():
    with criterion(6, "first recurrent intermediate equals the single-factor "
                      "JPEG pass bitwise on 20 images"):
        torch.manual_seed(6)
        model = MultiBranchNet(tiny_model_config())
        model.eval()
        rng = np.random.default_rng(606)
        for _ in range(20):
            img = torch.from_numpy(rng.random((1, 3, 32, 32))).float()
            with torch.no_grad():
                trace = rmbn_restore(model, img, DEFAULT_RESTORE_ORDER)
                single = mbn_restore(model, img, Factor.JPEG)
            assert torch.equal(trace.stages[0], single)


def test_criterion_7_toy_overfit_and_recurrent_parity(toy_data, toy_joint,
                                                      toy_finetuned):
    with criterion(7, "toy overfit: per-factor train PSNR > 30 dB after joint "
                      "training; recurrent within 1.5 dB after fine-tune"):
        datasets = toy_data["datasets"]
        mbn_scores = train_set_psnr(toy_joint["model"], datasets)
        for factor, value in mbn_scores.items():
            assert value > 30.0, f"{factor.value}: {value:.2f} dB"
        rmbn_scores = train_set_psnr(toy_finetuned["model"], datasets,
                                     recurrent=True)
        for factor in Factor:
            gap = mbn_scores[factor] - rmbn_scores[factor]
            assert gap < 1.5, (f"{factor.value}: recurrent {rmbn_scores[factor]:.2f} "
                               f"vs single {mbn_scores[factor]:.2f} dB")
        # the evaluation harness agrees with the direct computation
        from mbrestore.evaluate import evaluate

        report = evaluate(toy_joint["model"], toy_data["manifests"][Factor.HAZE],
                          mode="mbn", factor=Factor.HAZE)
        harness_psnr = report.groups[(Factor.HAZE.value,)].psnr_mean
        assert harness_psnr > 30.0
        assert harness_psnr == pytest.approx(mbn_scores[Factor.HAZE], abs=1e-6)
        print("  mbn:", {f.value: round(v, 2) for f, v in mbn_scores.items()})
        print("  rmbn:", {f.value: round(v, 2) for f, v in rmbn_scores.items()})


def test_criterion_8_clean_image_safety(toy_finetuned, held_out_clean_crops):
    with criterion(8, "recurrent restoration of 20 held-out clean crops keeps "
                      "PSNR(output, input) above 35 dB on average"):
        model = toy_finetuned["model"]
        values = []
        with torch.no_grad():
            for img in held_out_clean_crops:
                out = rmbn_restore(model, img).final
                values.append(psnr(out, img))
        mean = float(np.mean(values))
        assert mean > 35.0, f"clean-safety mean PSNR {mean:.2f} dB"
        print(f"  clean safety: {mean:.2f} dB")


def test_criterion_9_degradation_generator_invariants():
    with criterion(9, "generator range/determinism/metamorphic invariants; JPEG "
                      "PSNR monotonicity on >= 9/10 natural images; rain "
                      "orientation within 5 degrees on 20 samples"):
        rng = np.random.default_rng(909)
        img = rng.random((64, 64, 3))
        depth = vertical_gradient_depth(64, 64)
        blur_p = BlurParams(12, 3.0, -30.0)
        haze_p = HazeParams(0.95, 0.12)
        rain_p = RainParams(0.65, 20, 100)
        # range and determinism
        for out in (synth_blur(img, blur_p),
                    synth_rain(img, rain_p, np.random.default_rng(1)),
                    synth_jpeg(img, JpegParams(25)),
                    synth_haze(img, depth, haze_p)):
            assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.array_equal(synth_rain(img, rain_p, np.random.default_rng(7)),
                              synth_rain(img, rain_p, np.random.default_rng(7)))
        # metamorphic: horizontal flip
        np.testing.assert_allclose(
            synth_blur(img[:, ::-1], BlurParams(12, 3.0, 30.0)),
            synth_blur(img, blur_p)[:, ::-1], atol=1e-6)
        assert np.array_equal(synth_haze(img[:, ::-1], depth[:, ::-1], haze_p),
                              synth_haze(img, depth, haze_p)[:, ::-1])

        # JPEG monotonicity on bundled photographs
        import skimage.data as photos

        names = ["astronaut", "chelsea", "coffee", "rocket", "colorwheel",
                 "immunohistochemistry", "camera", "moon", "brick", "grass"]
        wins = 0
        for name in names:
            arr = getattr(photos, name)()
            if arr.ndim == 2:
                arr = np.stack([arr] * 3, axis=-1)
            arr = arr[:256, :256, :3].astype(np.float64) / 255.0
            high = synth_jpeg(arr, JpegParams(50))
            low = synth_jpeg(arr, JpegParams(15))
            p_high = 10 * np.log10(1.0 / np.mean((arr - high) ** 2))
            p_low = 10 * np.log10(1.0 / np.mean((arr - low) ** 2))
            wins += int(p_high > p_low)
        assert wins >= 9, f"monotone on only {wins}/10 images"

        # rain orientation on 20 sampled parameter draws
        from test_degrade import circular_angle_distance, dominant_orientation_deg

        for i in range(20):
            params = sample_rain_params(np.random.default_rng([909, i]))
            layer = rain_streak_layer((96, 96), params,
                                      np.random.default_rng([910, i]))
            estimate = dominant_orientation_deg(layer)
            assert circular_angle_distance(estimate, params.angle) <= 5.0, (
                f"sample {i}: estimated {estimate:.1f} vs {params.angle}")


def test_criterion_10_parameter_accounting():
    with criterion(10, "minimal-design input/output totals within 5% of 0.07M "
                       "and 0.52M; stem total inside [3.0M, 5.0M]"):
        report = param_report(MultiBranchNet(ModelConfig(arch="minimal")))
        input_total = report.section_total("input")
        output_total = report.section_total("output")
        stem_total = report.section_total("stem")
        assert abs(input_total - 70_000) / 70_000 <= 0.05, input_total
        assert abs(output_total - 520_000) / 520_000 <= 0.05, output_total
        assert 3_000_000 <= stem_total <= 5_000_000, stem_total
        assert report.total == sum(report.section_total(s) for s in report.sections)
        print(f"  input {input_total:,}  output {output_total:,}  stem {stem_total:,}")


def test_criterion_11_search_and_ablation_enumeration(tmp_path):
    with criterion(11, "order search enumerates 6 then 4 candidates (24 "
                       "exhaustive); ablation harness enumerates 5 configurations"):
        torch.manual_seed(11)
        model = zero_residual_heads(MultiBranchNet(tiny_model_config()))
        manifests = {
            f: make_eval_dataset(tmp_path / f.value, n=1, size=16, factor=f.value,
                                 seed=i)
            for i, f in enumerate(Factor)
        }
        result = order_search(model, manifests, strategy="two_step")
        assert len(result.stage1) == 6
        assert len(result.stage2) == 4
        exhaustive = order_search(
            model, {Factor.RAIN: manifests[Factor.RAIN]}, strategy="exhaustive")
        assert len(exhaustive.stage2) == 24

        datasets = make_fake_datasets(np.random.default_rng(111), n=2, size=24)
        rows = ablation_harness(
            datasets, {Factor.HAZE: manifests[Factor.HAZE]}, tiny_model_config(),
            OptimSpec(lr=1e-4), CycleSpec(batch_size=1, crop_rain=24, crop_other=24),
            iters=1, seed=0)
        assert len(rows) == len(ABLATION_GRID) == 5
        assert rows[-1].label == "MBN"
        assert rows[0].parameters < rows[-1].parameters
