//! Acceptance gate: one test per release criterion, each printing a single
//! pass/fail line. Tolerances and budgets are pinned here, not configurable.
//!
//! Criteria 5-7 train real models on a synthetic corpus and together take
//! roughly 45 minutes on one CPU core; the rest finish in seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retrodet::data::*;
use retrodet::gradcheck::grad_check;
use retrodet::metrics::{evaluate_samples, prf, EvalCounts, THRESHOLD};
use retrodet::model::*;
use retrodet::ops::{retro_conv, retro_conv_forward, RetroKernel};
use retrodet::tensor::{Dims5, Tensor5};
use retrodet::train::{train, LossConfig, OptimConfig};

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("criterion {name}: {} ({detail})", if pass { "pass" } else { "FAIL" });
    assert!(pass, "criterion {name} failed: {detail}");
}

fn random_tensor(dims: Dims5, rng: &mut ChaCha8Rng) -> Tensor5<f32> {
    let data = (0..dims.count().unwrap()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor5::from_vec(dims, data).unwrap()
}

/// Naive zero-padded dilated 2-D correlation of frame `l` of `x` against
/// temporal half `t` of the kernel. Written directly from the definition,
/// independent of the im2col production path. Accumulates in f64 so the
/// oracle's own rounding does not eat into the comparison tolerance.
fn spatial_conv_naive(
    x: &Tensor5<f32>,
    n: usize,
    l: usize,
    w: &Tensor5<f32>,
    d: usize,
    t: usize,
    dilation: usize,
) -> (Vec<f64>, Vec<f64>) {
    let xd = x.dims();
    let wd = w.dims();
    let pad = (dilation * (wd.h - 1) / 2) as isize;
    let mut out = vec![0.0f64; xd.h * xd.w];
    let mut mag = vec![0.0f64; xd.h * xd.w];
    for i in 0..xd.h {
        for j in 0..xd.w {
            let mut acc = 0.0f64;
            let mut acc_abs = 0.0f64;
            for c in 0..wd.c {
                for dh in 0..wd.h {
                    for dw_ in 0..wd.w {
                        let ii = i as isize + (dh * dilation) as isize - pad;
                        let jj = j as isize + (dw_ * dilation) as isize - pad;
                        if ii < 0 || jj < 0 || ii >= xd.h as isize || jj >= xd.w as isize {
                            continue;
                        }
                        let term = w.at(d, c, t, dh, dw_) as f64
                            * x.at(n, c, l, ii as usize, jj as usize) as f64;
                        acc += term;
                        acc_abs += term.abs();
                    }
                }
            }
            out[i * xd.w + j] = acc;
            mag[i * xd.w + j] = acc_abs;
        }
    }
    (out, mag)
}

#[test]
fn criterion_1_operator_equivalence() {
    // Retrospective convolution must equal its decomposition into two plain
    // spatial convolutions: one over the historical frame with the t=0 half,
    // one over the current frame with the t=1 half, summed plus bias.
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut max_rel = 0.0f64;
    for case in 0..100 {
        let l = [2usize, 4, 8][case % 3];
        let c = rng.gen_range(1..=4usize);
        let d = rng.gen_range(1..=3usize);
        let x = random_tensor(Dims5::new(1, c, l, 16, 16), &mut rng);
        let w = random_tensor(Dims5::new(d, c, 2, 3, 3), &mut rng);
        let bias: Vec<f32> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let k = RetroKernel::new(w.clone(), bias.clone(), 1).unwrap();
        let y = retro_conv(&x, &k).unwrap();
        assert_eq!(y.dims().l, l - 1);
        for lo in 0..l - 1 {
            for dd in 0..d {
                let (hist, hist_mag) = spatial_conv_naive(&x, 0, lo, &w, dd, 0, 1);
                let (cur, cur_mag) = spatial_conv_naive(&x, 0, l - 1, &w, dd, 1, 1);
                for (idx, &got) in y.frame(0, dd, lo).iter().enumerate() {
                    let want = hist[idx] + cur[idx] + bias[dd] as f64;
                    // Normalize by the magnitude of the summed terms: the
                    // result itself can cancel to near zero, and f32 rounding
                    // is proportional to the term magnitudes, not the result.
                    let scale = (hist_mag[idx] + cur_mag[idx] + (bias[dd] as f64).abs()).max(1.0);
                    let rel = (got as f64 - want).abs() / scale;
                    max_rel = max_rel.max(rel);
                }
            }
        }
    }
    verdict("1 operator-equivalence", max_rel < 1e-6, &format!("max rel err {max_rel:.3e} over 100 instances"));
}

#[test]
fn criterion_2_gradient_suite() {
    // Every operator graph plus a full 3-stage model must pass the f64
    // finite-difference gradient check.
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (name, mut graph, input) in retrodet::cli::gradcheck_suites(42) {
        let report = grad_check(&mut graph, &input, 1e-5, 1e-4).unwrap();
        worst = worst.max(report.max_rel());
        if !report.pass() {
            failures.push(format!("{name} (max rel {:.3e})", report.max_rel()));
        }
    }
    verdict(
        "2 gradient-suite",
        failures.is_empty(),
        &if failures.is_empty() {
            format!("all ops pass, worst rel err {worst:.3e}")
        } else {
            format!("failing: {}", failures.join(", "))
        },
    );
}

#[test]
fn criterion_3_static_collapse() {
    // With every frame identical, the network output must not depend on the
    // clip length: each inter-frame slice is identical and the temporal
    // average is a no-op.
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut max_diff = 0.0f32;
    for case in 0..20u64 {
        let model = build_model(&ModelConfig::desk_default(), 1000 + case).unwrap();
        let frame: Vec<Vec<f32>> =
            (0..3).map(|_| (0..32 * 32).map(|_| rng.gen_range(0.0f32..1.0)).collect()).collect();
        let mut reference: Option<Tensor5<f32>> = None;
        for l in [2usize, 4, 6, 8] {
            let mut clip = Tensor5::zeros(Dims5::new(1, 3, l, 32, 32)).unwrap();
            for c in 0..3 {
                for t in 0..l {
                    clip.frame_mut(0, c, t).copy_from_slice(&frame[c]);
                }
            }
            let out = model.infer(&clip).unwrap();
            match &reference {
                None => reference = Some(out),
                Some(r) => {
                    for (a, b) in r.data().iter().zip(out.data()) {
                        max_diff = max_diff.max((a - b).abs());
                    }
                }
            }
        }
    }
    verdict("3 static-collapse", max_diff < 1e-6, &format!("max diff across L in {{2,4,6,8}}: {max_diff:.3e}"));
}

#[test]
fn criterion_4_atrous_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    // Dilation 1 must be bitwise identical to the plain retrospective path.
    let mut bitwise_ok = true;
    for _ in 0..50 {
        let c = rng.gen_range(1..=3usize);
        let l = rng.gen_range(2..=5usize);
        let x = random_tensor(Dims5::new(1, c, l, 12, 12), &mut rng);
        let w = random_tensor(Dims5::new(2, c, 2, 3, 3), &mut rng);
        let bias = vec![rng.gen_range(-0.5f32..0.5), rng.gen_range(-0.5..0.5)];
        let k = RetroKernel::new(w.clone(), bias.clone(), 1).unwrap();
        let plain = retro_conv(&x, &k).unwrap();
        let atrous = retro_conv_forward(&x, &w, &bias, 1).unwrap();
        if plain.data() != atrous.data() {
            bitwise_ok = false;
        }
    }
    // Dilation 3 must match a plain convolution with the kernel zero-inflated
    // to 7x7 (weights at every third tap).
    let mut max_diff = 0.0f32;
    for _ in 0..20 {
        let x = random_tensor(Dims5::new(1, 2, 3, 14, 14), &mut rng);
        let w = random_tensor(Dims5::new(2, 2, 2, 3, 3), &mut rng);
        let bias = vec![0.1f32, -0.2];
        let dilated = retro_conv_forward(&x, &w, &bias, 3).unwrap();
        let mut inflated = Tensor5::zeros(Dims5::new(2, 2, 2, 7, 7)).unwrap();
        for d in 0..2 {
            for c in 0..2 {
                for t in 0..2 {
                    for dh in 0..3 {
                        for dw_ in 0..3 {
                            *inflated.at_mut(d, c, t, dh * 3, dw_ * 3) = w.at(d, c, t, dh, dw_);
                        }
                    }
                }
            }
        }
        let plain = retro_conv_forward(&x, &inflated, &bias, 1).unwrap();
        for (a, b) in dilated.data().iter().zip(plain.data()) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    verdict(
        "4 atrous-identity",
        bitwise_ok && max_diff < 1e-6,
        &format!("dilation-1 bitwise {}; inflation max diff {max_diff:.3e}", if bitwise_ok { "ok" } else { "MISMATCH" }),
    );
}

// ---------------------------------------------------------------------------
// Shared toy-training machinery for criteria 5-7.
// ---------------------------------------------------------------------------

/// High-contrast single-object scenes over dynamic sinusoid backgrounds:
/// 64x64, L=4, object side 16-28 px, speed 2-4 px/frame, channel intensities
/// pushed to the extremes so change is learnable in a small budget.
fn toy_corpus(n: usize, seed: u64) -> Vec<ClipSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let size = rng.gen_range(16.0..28.0);
            let speed = rng.gen_range(2.0..4.0);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let velocity = (speed * angle.sin(), speed * angle.cos());
            let margin = size / 2.0 + 3.0 * speed + 1.0;
            let pos = (rng.gen_range(margin..64.0 - margin), rng.gen_range(margin..64.0 - margin));
            let bright = rng.gen_bool(0.5);
            let chan = |rng: &mut ChaCha8Rng| {
                if bright {
                    rng.gen_range(0.85..1.0f32)
                } else {
                    rng.gen_range(0.0..0.15f32)
                }
            };
            let spec = SceneSpec {
                canvas: (64, 64),
                background: Background::DynamicSinusoid,
                objects: vec![ObjectSpec {
                    shape: if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Disk },
                    size,
                    pos,
                    velocity,
                    intensity: [chan(&mut rng), chan(&mut rng), chan(&mut rng)],
                }],
                brightness_drift: 0.0,
                noise_sigma: 0.01,
                tag: "dyn".into(),
                seed: rng.gen(),
            };
            generate_clip(&spec, 4).unwrap()
        })
        .collect()
}

struct ToyRun {
    model: Model,
    f_measure: f64,
    held: Vec<ClipSample>,
}

fn toy_train_run(
    change_module: ChangeModule,
    seed: u64,
    n_train: usize,
    n_held: usize,
    iters: usize,
    static_synthesis: bool,
) -> ToyRun {
    let train_set = class_balance_filter(toy_corpus(n_train, seed.wrapping_mul(31) + 1), 0.02, 0.60);
    let held = toy_corpus(n_held, seed.wrapping_mul(31) + 2);
    let mut sampler =
        scenario_balanced_iter(train_set, ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7) + 7)).unwrap();
    let arpp_dilations = match change_module {
        ChangeModule::Arpp => ModelConfig::desk_default().arpp_dilations,
        _ => vec![],
    };
    let cfg = ModelConfig { change_module, arpp_dilations, ..ModelConfig::desk_default() };
    let mut model = build_model(&cfg, seed + 3).unwrap();
    let optim = OptimConfig {
        base_lr: 0.03,
        batch_size: 2,
        max_iters: iters,
        decay_every_iters: iters, // one 10x decay at the halfway... no decay within budget
        momentum: 0.9,
        weight_decay: 0.0,
        ..OptimConfig::default()
    };
    let loss = LossConfig { alpha: 4.0, epsilon: 1e-3 };
    train(&mut model, &mut sampler, &loss, &optim, static_synthesis, 0, |_| {}).unwrap();
    let report = evaluate_samples(&model, &held, &[1.0]).unwrap();
    let (_, _, f) = prf(&report.overall);
    ToyRun { model, f_measure: f, held }
}

#[test]
fn criterion_5_toy_training() {
    // Desk-scale model, 400 train / 100 held clips, 2000 iterations of
    // SGD with momentum: held-out F-measure at threshold 0.5 must reach 0.70.
    let run = toy_train_run(ChangeModule::Arpp, 1, 400, 100, 2000, true);
    verdict("5 toy-training", run.f_measure >= 0.70, &format!("held-out F {:.3} (gate 0.70)", run.f_measure));
}

#[test]
fn criterion_6_static_synthesis_effect() {
    // Same seed, same corpus, reduced budget: the run trained WITH static
    // sample synthesis must predict at most half the mean foreground
    // probability on held-out synthesized-static clips, and push its
    // foreground-pixel rate on those clips below 0.05.
    let iters = 400;
    let with = toy_train_run(ChangeModule::Arpp, 11, 150, 50, iters, true);
    let without = toy_train_run(ChangeModule::Arpp, 11, 150, 50, iters, false);
    let statics: Vec<ClipSample> = with.held.iter().take(50).map(|s| synthesize_static(s)).collect();
    let mean_prob = |m: &Model| -> f64 {
        let (mut sum, mut count) = (0.0f64, 0usize);
        for s in &statics {
            let pred = m.infer(&s.clip).unwrap();
            sum += pred.data().iter().map(|&v| v as f64).sum::<f64>();
            count += pred.len();
        }
        sum / count as f64
    };
    let fg_rate = |m: &Model| -> f64 {
        let (mut fg, mut count) = (0usize, 0usize);
        for s in &statics {
            let pred = m.infer(&s.clip).unwrap();
            fg += pred.data().iter().filter(|&&v| v >= THRESHOLD).count();
            count += pred.len();
        }
        fg as f64 / count as f64
    };
    let p_with = mean_prob(&with.model);
    let p_without = mean_prob(&without.model);
    let rate_with = fg_rate(&with.model);
    verdict(
        "6 static-synthesis-effect",
        p_with <= 0.5 * p_without && rate_with < 0.05,
        &format!("static mean prob with {p_with:.4} vs without {p_without:.4}; fg rate with {rate_with:.4}"),
    );
}

#[test]
fn criterion_7_retro_vs_conv3d_trend() {
    // Directional comparison at a reduced budget: averaged across three
    // seeds, the retrospective change module must not trail the 3-D
    // convolution pair by more than 0.02 F-measure. Individual seeds are
    // reported because the per-seed spread at this budget (hundreds of
    // iterations from scratch) is several times the margin: either model
    // can win or collapse on a given seed, and the trend lives in the mean.
    // A miss here is a finding to investigate, not a silent pass.
    let iters = 400;
    let mut detail = String::new();
    let (mut retro_sum, mut pair_sum) = (0.0f64, 0.0f64);
    let seeds = [21u64, 22, 23];
    for seed in seeds {
        let retro = toy_train_run(ChangeModule::Retro, seed, 150, 50, iters, true);
        let pair = toy_train_run(ChangeModule::Conv3dPair, seed, 150, 50, iters, true);
        retro_sum += retro.f_measure;
        pair_sum += pair.f_measure;
        detail.push_str(&format!(
            "seed {seed}: retro F {:.3} vs conv3d-pair F {:.3}; ",
            retro.f_measure, pair.f_measure
        ));
    }
    let retro_mean = retro_sum / seeds.len() as f64;
    let pair_mean = pair_sum / seeds.len() as f64;
    detail.push_str(&format!("mean: retro {retro_mean:.3} vs conv3d-pair {pair_mean:.3}"));
    verdict("7 retro-vs-conv3d-trend", retro_mean >= pair_mean - 0.02, &detail);
}

#[test]
fn criterion_8_metric_oracle() {
    // prf must agree exactly with the textbook formulas, including the
    // 0/0 -> 0 convention for empty denominators.
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut ok = true;
    for case in 0..1000 {
        // Sprinkle in zero-heavy cases so the 0/0 branches are exercised.
        let roll = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.2) { 0 } else { rng.gen_range(0u64..10_000) };
        let c = EvalCounts { tp: roll(&mut rng), fp: roll(&mut rng), fn_: roll(&mut rng), tn: roll(&mut rng) };
        let (p, r, f) = prf(&c);
        let hp = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
        let hr = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
        let hf = if hp + hr == 0.0 { 0.0 } else { 2.0 * hp * hr / (hp + hr) };
        if p != hp || r != hr || f != hf {
            ok = false;
            eprintln!("mismatch on case {case}: {c:?} -> ({p},{r},{f}) vs ({hp},{hr},{hf})");
        }
    }
    // Explicit all-zero case.
    let (p, r, f) = prf(&EvalCounts { tp: 0, fp: 0, fn_: 0, tn: 5 });
    ok &= p == 0.0 && r == 0.0 && f == 0.0;
    verdict("8 metric-oracle", ok, "1000 random confusion counts match the hand formulas exactly");
}

#[test]
fn criterion_9_format_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut ok = true;
    // Checkpoint container: save -> load -> save must be byte-identical.
    for case in 0..20u64 {
        let cfg = if case % 2 == 0 {
            ModelConfig::desk_default()
        } else {
            ModelConfig {
                backbone: Backbone::Simple3Layer,
                backbone_widths: vec![8, 16, 24],
                change_module: ChangeModule::Retro,
                arpp_dilations: vec![],
                change_widths: vec![8, 16, 24],
                ..ModelConfig::desk_default()
            }
        };
        let model = build_model(&cfg, 2000 + case).unwrap();
        let bytes = checkpoint_bytes(&model);
        let reloaded = checkpoint_from_bytes(&bytes).unwrap();
        let again = checkpoint_bytes(&reloaded);
        ok &= bytes == again;
    }
    // Clip container: the same round trip over random scenes.
    for case in 0..20u64 {
        let spec = random_scene(
            (24, 24),
            [Background::StaticTexture, Background::DynamicSinusoid, Background::NoiseField][case as usize % 3],
            "roundtrip",
            case % 2 == 0,
            &mut rng,
        );
        let sample = generate_clip(&spec, 4).unwrap();
        let bytes = clip_bytes(&sample);
        let reloaded = read_clip(&bytes).unwrap();
        let again = clip_bytes(&reloaded);
        ok &= bytes == again;
    }
    verdict("9 format-round-trips", ok, "checkpoint and clip containers byte-stable over 20 instances each");
}

// ---------------------------------------------------------------------------
// Extra integration property: translation equivariance.
// ---------------------------------------------------------------------------

#[test]
fn translation_equivariance_interior() {
    // Shifting the whole clip by one encoder stride (2^stages pixels) must
    // shift the prediction by the same amount, up to border effects within
    // one receptive-field radius of the edges.
    let cfg = ModelConfig::desk_default();
    let model = build_model(&cfg, 77).unwrap();
    let shift = cfg.spatial_divisor(); // 8 px for the 3-stage default
    let margin = cfg.receptive_radius() + shift;
    let mut rng = ChaCha8Rng::seed_from_u64(7777);
    let (h, w) = (160usize, 160usize);
    assert!(h > 2 * margin + shift, "canvas too small for interior check");
    let base = random_tensor(Dims5::new(1, 3, 4, h, w), &mut rng);
    let mut shifted = Tensor5::zeros(base.dims()).unwrap();
    for c in 0..3 {
        for l in 0..4 {
            let src = base.frame(0, c, l).to_vec();
            let dst = shifted.frame_mut(0, c, l);
            for i in 0..h {
                for j in 0..w {
                    let (si, sj) = (i as isize - shift as isize, j as isize - shift as isize);
                    if si >= 0 && sj >= 0 {
                        dst[i * w + j] = src[si as usize * w + sj as usize];
                    }
                }
            }
        }
    }
    let out_a = model.infer(&base).unwrap();
    let out_b = model.infer(&shifted).unwrap();
    let mut max_diff = 0.0f32;
    for i in margin..h - margin {
        for j in margin..w - margin {
            let a = out_a.at(0, 0, 0, i, j);
            let b = out_b.at(0, 0, 0, i + shift, j + shift);
            max_diff = max_diff.max((a - b).abs());
        }
    }
    assert!(max_diff < 1e-5, "interior translation equivariance violated: max diff {max_diff:.3e}");
}
