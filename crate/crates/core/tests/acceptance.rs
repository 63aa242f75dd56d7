//! Acceptance gate: twelve end-to-end criteria with pinned tolerances.
//!
//! Everything runs inside one test function so the criteria execute
//! sequentially (several are timed, and the two MNIST trainings share one
//! CPU). One PASS/FAIL line is streamed per criterion as it completes.
//!
//! The MNIST IDX files are looked up in `data/mnist` at the workspace root,
//! or in `$QNN_MNIST_DIR` when set.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use qnn_core::analysis::{count_unique_filters, memory_report, FilterBank};
use qnn_core::bitkernel::{bench_gemm, bitplane_gemm, random_pm1, xnor_gemm, BitMatrix, BitPlanes8};
use qnn_core::data_io::{load_mnist, synth_dataset, Dataset};
use qnn_core::layers::{bn_backward, bn_forward, BatchNormState, BnMode};
use qnn_core::optim::{OptimMode, ADAMAX_ALPHA};
use qnn_core::quantize::{hard_tanh, stoch_binarize, QuantKind, QuantSpec, Scheme};
use qnn_core::tensor::Tensor;
use qnn_core::trainer::{
    evaluate, fit, load_checkpoint, predict_logits, save_checkpoint, InputMode, QnnModel,
    TrainConfig,
};
use qnn_core::Rng;

type T64 = Tensor<f64>;

fn mnist_dir() -> PathBuf {
    if let Ok(d) = std::env::var("QNN_MNIST_DIR") {
        return PathBuf::from(d);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// Writes directly to stdout so the per-criterion lines stream even without
/// `--nocapture` (libtest only captures the print macros).
fn status(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn record(&mut self, idx: usize, name: &str, budget: Duration, run: impl FnOnce() -> Result<String, String>) {
        let t0 = Instant::now();
        let outcome = run();
        let elapsed = t0.elapsed();
        match outcome {
            Ok(detail) if elapsed <= budget => {
                status(&format!(
                    "PASS  criterion {idx:>2} ({name}): {detail} [{:.1}s]",
                    elapsed.as_secs_f64()
                ));
            }
            Ok(detail) => {
                let msg = format!(
                    "criterion {idx} ({name}): passed checks but exceeded the {:.0}s budget ({:.1}s): {detail}",
                    budget.as_secs_f64(),
                    elapsed.as_secs_f64()
                );
                status(&format!("FAIL  {msg}"));
                self.failures.push(msg);
            }
            Err(why) => {
                let msg = format!(
                    "criterion {idx} ({name}): {why} [{:.1}s]",
                    elapsed.as_secs_f64()
                );
                status(&format!("FAIL  {msg}"));
                self.failures.push(msg);
            }
        }
    }
}

/// Criterion 1: packed XNOR GEMM equals the f64 float oracle exactly on 200
/// random +-1 triples with dims in [1, 256].
fn c1_kernel_exactness() -> Result<String, String> {
    let mut rng = Rng::new(101);
    for trial in 0..200 {
        let m = 1 + (rng.next_u64() % 256) as usize;
        let p = 1 + (rng.next_u64() % 256) as usize;
        let n = 1 + (rng.next_u64() % 256) as usize;
        let a = random_pm1::<f32>(m, p, &mut rng);
        let b = random_pm1::<f32>(p, n, &mut rng);
        let a_bits = BitMatrix::pack(&a).map_err(|e| e.to_string())?;
        let bt_bits = BitMatrix::pack_sign_transposed(&b);
        let packed: Tensor<f32> = xnor_gemm(&a_bits, &bt_bits).map_err(|e| e.to_string())?;
        let oracle = a.matmul(&b).map_err(|e| e.to_string())?;
        if packed != oracle {
            return Err(format!("trial {trial} ({m}x{p}x{n}): packed != oracle"));
        }
    }
    Ok("200/200 random triples exact, tolerance 0".into())
}

/// Criterion 2: bit-plane GEMM equals the byte-valued float oracle exactly
/// on 100 random batches.
fn c2_bitplane_exactness() -> Result<String, String> {
    let mut rng = Rng::new(202);
    for trial in 0..100 {
        let m = 1 + (rng.next_u64() % 64) as usize;
        let p = 1 + (rng.next_u64() % 200) as usize;
        let n = 1 + (rng.next_u64() % 96) as usize;
        let bytes: Vec<u8> = (0..m * p).map(|_| (rng.next_u64() & 0xff) as u8).collect();
        let w = random_pm1::<f32>(p, n, &mut rng);
        let planes = BitPlanes8::from_bytes(m, p, &bytes).map_err(|e| e.to_string())?;
        let wt = BitMatrix::pack_sign_transposed(&w);
        let packed: Tensor<f32> = bitplane_gemm(&planes, &wt).map_err(|e| e.to_string())?;
        let x_float =
            Tensor::from_vec(m, p, bytes.iter().map(|&b| b as f32).collect()).map_err(|e| e.to_string())?;
        let oracle = x_float.matmul(&w).map_err(|e| e.to_string())?;
        if packed != oracle {
            return Err(format!("trial {trial} ({m}x{p}x{n}): bit-plane != oracle"));
        }
    }
    Ok("100/100 random byte batches exact, tolerance 0".into())
}

/// Criterion 3: single-threaded packed kernel at 4096^3 is >= 10x the naive
/// float baseline.
fn c3_kernel_speedup() -> Result<String, String> {
    let rows = bench_gemm(&[4096], 1, 1).map_err(|e| e.to_string())?;
    let xnor = rows
        .iter()
        .find(|r| r.kernel == "xnor_packed")
        .ok_or("missing xnor row")?;
    if xnor.speedup >= 10.0 {
        Ok(format!(
            "4096^3 single-thread speedup {:.1}x (threshold 10x)",
            xnor.speedup
        ))
    } else {
        Err(format!("speedup {:.1}x < 10x", xnor.speedup))
    }
}

struct MnistResult {
    vanilla_test_err: f64,
}

/// Criterion 4: 784-1024x3-10 binary MLP, deterministic binarization,
/// vanilla BN + ADAM, 50 epochs, batch 100, best-validation model selection,
/// test error <= 3.0%.
fn c4_mnist_training(out: &mut Option<MnistResult>) -> Result<String, String> {
    let (train_full, test) = load_mnist(&mnist_dir()).map_err(|e| e.to_string())?;
    let train = train_full.slice(0, 50_000);
    let val = train_full.slice(50_000, 10_000);
    let mut rng = Rng::new(1);
    let model = QnnModel::<f32>::mlp(
        &[784, 1024, 1024, 1024, 10],
        BnMode::Vanilla,
        QuantSpec::binary(),
        InputMode::BytePlanes,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 100,
        seed: 1,
        lr: 0.01,
        lr_decay: 0.97,
        shift_lr_period: 0,
        optim: OptimMode::Adam,
        stochastic: false,
    };
    let res = fit(model, &train, &val, &cfg, None).map_err(|e| e.to_string())?;
    let mut best = res.best_model;
    let test_err = evaluate(&mut best, &test, true).map_err(|e| e.to_string())?;
    *out = Some(MnistResult {
        vanilla_test_err: test_err,
    });
    if test_err <= 0.030 {
        Ok(format!(
            "test error {:.2}% (threshold 3.0%), best val {:.2}% at epoch {}",
            test_err * 100.0,
            res.best_val_err * 100.0,
            res.best_epoch
        ))
    } else {
        Err(format!("test error {:.2}% > 3.0%", test_err * 100.0))
    }
}

/// Criterion 5: shift-BN + shift-AdaMax training lands within 1.0 pp of the
/// vanilla test error.
fn c5_shift_parity(vanilla: &Option<MnistResult>) -> Result<String, String> {
    let vanilla_err = vanilla
        .as_ref()
        .ok_or("vanilla training (criterion 4) did not produce a result")?
        .vanilla_test_err;
    let (train_full, test) = load_mnist(&mnist_dir()).map_err(|e| e.to_string())?;
    let train = train_full.slice(0, 50_000);
    let val = train_full.slice(50_000, 10_000);
    let mut rng = Rng::new(1);
    let model = QnnModel::<f32>::mlp(
        &[784, 1024, 1024, 1024, 10],
        BnMode::Shift,
        QuantSpec::binary(),
        InputMode::BytePlanes,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 100,
        seed: 1,
        lr: SHIFT_LR,
        lr_decay: 1.0,
        shift_lr_period: 10,
        optim: OptimMode::ShiftAdaMax,
        stochastic: true,
    };
    let res = fit(model, &train, &val, &cfg, None).map_err(|e| e.to_string())?;
    let mut best = res.best_model;
    let test_err = evaluate(&mut best, &test, true).map_err(|e| e.to_string())?;
    let gap_pp = (test_err - vanilla_err) * 100.0;
    if gap_pp <= 1.0 {
        Ok(format!(
            "shift-variant test error {:.2}% vs vanilla {:.2}% (gap {:+.2} pp, threshold +1.0 pp)",
            test_err * 100.0,
            vanilla_err * 100.0,
            gap_pp
        ))
    } else {
        Err(format!(
            "shift-variant test error {:.2}% vs vanilla {:.2}%: gap {:+.2} pp > 1.0 pp",
            test_err * 100.0,
            vanilla_err * 100.0,
            gap_pp
        ))
    }
}

/// shift-AdaMax base rate for criterion 5: 2^-4, halved every 10 epochs.
/// Picked by a short learning-rate sweep; the optimizer default alone is
/// too slow to converge in 50 epochs from scratch.
const SHIFT_LR: f64 = ADAMAX_ALPHA * 64.0;

/// Criterion 6: packed and float +-1-path inference give identical
/// predictions on the full 10K MNIST test set.
fn c6_inference_equivalence() -> Result<String, String> {
    let (_, test) = load_mnist(&mnist_dir()).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(606);
    let mut model = QnnModel::<f32>::mlp(
        &[784, 1024, 1024, 1024, 10],
        BnMode::Vanilla,
        QuantSpec::binary(),
        InputMode::BytePlanes,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let packed = predict_logits(&mut model, &test, true).map_err(|e| e.to_string())?;
    let float = predict_logits(&mut model, &test, false).map_err(|e| e.to_string())?;
    let mut mismatches = 0usize;
    for i in 0..test.n {
        let pr = packed.row(i);
        let fr = float.row(i);
        let am = |r: &[f32]| {
            let mut b = 0;
            for (j, &v) in r.iter().enumerate().skip(1) {
                if v > r[b] {
                    b = j;
                }
            }
            b
        };
        if am(pr) != am(fr) {
            mismatches += 1;
        }
    }
    if mismatches == 0 && packed == float {
        Ok("10000/10000 predictions identical, logits bitwise equal".into())
    } else {
        Err(format!("{mismatches} prediction mismatches on 10K test set"))
    }
}

/// Criterion 7: surrogate-network backprop (binarizers replaced by
/// hard_tanh) vs central finite differences; full network < 1e-3, BN
/// backward alone < 1e-4.
fn c7_gradient_correctness() -> Result<String, String> {
    let mut rng = Rng::new(707);
    let (m, d0, d1, d2) = (6, 5, 8, 3);
    let a0 = T64::from_vec(m, d0, (0..m * d0).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
    let w1 = T64::from_vec(d0, d1, (0..d0 * d1).map(|_| rng.uniform(-0.9, 0.9)).collect()).unwrap();
    let w2 = T64::from_vec(d1, d2, (0..d1 * d2).map(|_| rng.uniform(-0.9, 0.9)).collect()).unwrap();
    let gamma1: Vec<f64> = (0..d1).map(|_| rng.uniform(0.5, 1.5)).collect();
    let beta1: Vec<f64> = (0..d1).map(|_| rng.uniform(-0.3, 0.3)).collect();
    let gamma2: Vec<f64> = (0..d2).map(|_| rng.uniform(0.5, 1.5)).collect();
    let beta2: Vec<f64> = (0..d2).map(|_| rng.uniform(-0.3, 0.3)).collect();
    let targets = T64::from_vec(
        m,
        d2,
        (0..m * d2)
            .map(|_| if rng.next_u64() & 1 == 1 { 1.0 } else { -1.0 })
            .collect(),
    )
    .unwrap();

    // surrogate forward: binarizers replaced by hard_tanh everywhere
    let forward = |w1: &T64, w2: &T64, g1: &[f64], b1: &[f64], g2: &[f64], b2: &[f64]| -> f64 {
        let s1 = a0.matmul(&w1.map(hard_tanh)).unwrap();
        let mut bn1 = BatchNormState::<f64>::new(d1, BnMode::Vanilla);
        bn1.gamma = g1.to_vec();
        bn1.beta = b1.to_vec();
        let (h1, _) = bn_forward(&mut bn1, &s1, true).unwrap();
        let a1 = h1.map(hard_tanh);
        let s2 = a1.matmul(&w2.map(hard_tanh)).unwrap();
        let mut bn2 = BatchNormState::<f64>::new(d2, BnMode::Vanilla);
        bn2.gamma = g2.to_vec();
        bn2.beta = b2.to_vec();
        let (out, _) = bn_forward(&mut bn2, &s2, true).unwrap();
        let (loss, _) = qnn_core::layers::square_hinge_loss(&out, &targets).unwrap();
        loss
    };

    // analytic gradients through the production BN/STE/loss machinery
    let s1 = a0.matmul(&w1.map(hard_tanh)).unwrap();
    let mut bn1 = BatchNormState::<f64>::new(d1, BnMode::Vanilla);
    bn1.gamma = gamma1.clone();
    bn1.beta = beta1.clone();
    let (h1, cache1) = bn_forward(&mut bn1, &s1, true).unwrap();
    let a1 = h1.map(hard_tanh);
    let s2 = a1.matmul(&w2.map(hard_tanh)).unwrap();
    let mut bn2 = BatchNormState::<f64>::new(d2, BnMode::Vanilla);
    bn2.gamma = gamma2.clone();
    bn2.beta = beta2.clone();
    let (out, cache2) = bn_forward(&mut bn2, &s2, true).unwrap();
    let (_, g_out) = qnn_core::layers::square_hinge_loss(&out, &targets).unwrap();

    let (g_s2, g_gamma2, g_beta2) = bn_backward(&bn2, &g_out, cache2.as_ref().unwrap()).unwrap();
    // STE through hard_tanh(w2): passes where |w2| <= 1 (always here)
    let g_w2 = a1.matmul_at_b(&g_s2).unwrap();
    let g_a1 = g_s2.matmul_a_bt(&w2.map(hard_tanh)).unwrap();
    let g_h1 = qnn_core::layers::activation_backward(&g_a1, &h1).unwrap();
    let (g_s1, g_gamma1, g_beta1) = bn_backward(&bn1, &g_h1, cache1.as_ref().unwrap()).unwrap();
    let g_w1 = a0.matmul_at_b(&g_s1).unwrap();

    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let mut check = |an: f64, fd: f64| {
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
        if rel > max_rel {
            max_rel = rel;
        }
    };
    for idx in 0..d0 * d1 {
        let mut wp = w1.clone();
        wp.data_mut()[idx] += h;
        let mut wm = w1.clone();
        wm.data_mut()[idx] -= h;
        let fd = (forward(&wp, &w2, &gamma1, &beta1, &gamma2, &beta2)
            - forward(&wm, &w2, &gamma1, &beta1, &gamma2, &beta2))
            / (2.0 * h);
        check(g_w1.data()[idx], fd);
    }
    for idx in 0..d1 * d2 {
        let mut wp = w2.clone();
        wp.data_mut()[idx] += h;
        let mut wm = w2.clone();
        wm.data_mut()[idx] -= h;
        let fd = (forward(&w1, &wp, &gamma1, &beta1, &gamma2, &beta2)
            - forward(&w1, &wm, &gamma1, &beta1, &gamma2, &beta2))
            / (2.0 * h);
        check(g_w2.data()[idx], fd);
    }
    for j in 0..d1 {
        let mut gp = gamma1.clone();
        gp[j] += h;
        let mut gm = gamma1.clone();
        gm[j] -= h;
        let fd = (forward(&w1, &w2, &gp, &beta1, &gamma2, &beta2)
            - forward(&w1, &w2, &gm, &beta1, &gamma2, &beta2))
            / (2.0 * h);
        check(g_gamma1[j], fd);
        let mut bp = beta1.clone();
        bp[j] += h;
        let mut bm = beta1.clone();
        bm[j] -= h;
        let fd = (forward(&w1, &w2, &gamma1, &bp, &gamma2, &beta2)
            - forward(&w1, &w2, &gamma1, &bm, &gamma2, &beta2))
            / (2.0 * h);
        check(g_beta1[j], fd);
    }
    for j in 0..d2 {
        let mut gp = gamma2.clone();
        gp[j] += h;
        let mut gm = gamma2.clone();
        gm[j] -= h;
        let fd = (forward(&w1, &w2, &gamma1, &beta1, &gp, &beta2)
            - forward(&w1, &w2, &gamma1, &beta1, &gm, &beta2))
            / (2.0 * h);
        check(g_gamma2[j], fd);
        let mut bp = beta2.clone();
        bp[j] += h;
        let mut bm = beta2.clone();
        bm[j] -= h;
        let fd = (forward(&w1, &w2, &gamma1, &beta1, &gamma2, &bp)
            - forward(&w1, &w2, &gamma1, &beta1, &gamma2, &bm))
            / (2.0 * h);
        check(g_beta2[j], fd);
    }
    if max_rel >= 1e-3 {
        return Err(format!("network max relative error {max_rel:.2e} >= 1e-3"));
    }

    // BN backward alone, tighter tolerance
    let mut bn_rel = 0.0f64;
    let g_up = T64::from_vec(m, d1, (0..m * d1).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
    let (g_in, _, _) = bn_backward(&bn1, &g_up, cache1.as_ref().unwrap()).unwrap();
    let obj = |x: &T64| -> f64 {
        let mut bn = BatchNormState::<f64>::new(d1, BnMode::Vanilla);
        bn.gamma = gamma1.clone();
        bn.beta = beta1.clone();
        let (y, _) = bn_forward(&mut bn, x, true).unwrap();
        y.data().iter().zip(g_up.data()).map(|(&a, &b)| a * b).sum()
    };
    for idx in 0..m * d1 {
        let mut sp = s1.clone();
        sp.data_mut()[idx] += h;
        let mut sm = s1.clone();
        sm.data_mut()[idx] -= h;
        let fd = (obj(&sp) - obj(&sm)) / (2.0 * h);
        let an = g_in.data()[idx];
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
        if rel > bn_rel {
            bn_rel = rel;
        }
    }
    if bn_rel >= 1e-4 {
        return Err(format!("BN backward max relative error {bn_rel:.2e} >= 1e-4"));
    }
    Ok(format!(
        "network max rel err {max_rel:.2e} (< 1e-3), BN backward {bn_rel:.2e} (< 1e-4)"
    ))
}

/// Criterion 8: empirical mean of stochastic binarization within 3 sigma of
/// hard_tanh(r) over 1e5 draws.
fn c8_stochastic_statistics() -> Result<String, String> {
    let n = 100_000usize;
    let mut worst = 0.0f64;
    for &r in &[-2.0f64, -0.5, 0.0, 0.5, 2.0] {
        let mut rng = Rng::new(1).stream((r.to_bits() & 0xffff) ^ r.to_bits() >> 32);
        let mut sum = 0.0f64;
        for _ in 0..n {
            sum += stoch_binarize(r, &mut rng);
        }
        let mean = sum / n as f64;
        let expect = hard_tanh(r);
        let p = (r.clamp(-1.0, 1.0) + 1.0) / 2.0;
        let sigma = (4.0 * p * (1.0 - p) / n as f64).sqrt();
        let dev = (mean - expect).abs();
        if sigma == 0.0 {
            if dev != 0.0 {
                return Err(format!("r={r}: saturated input gave mean {mean}, expected {expect}"));
            }
        } else {
            let z = dev / sigma;
            if z > 3.0 {
                return Err(format!("r={r}: |mean-expected| = {dev:.5} is {z:.2} sigma > 3"));
            }
            worst = worst.max(z);
        }
    }
    Ok(format!("all 5 inputs within 3 sigma (worst {worst:.2} sigma, 1e5 draws each)"))
}

/// Criterion 9: 4096x4096 packed-vs-float memory ratio is exactly 32.
fn c9_memory_ratio() -> Result<String, String> {
    let r = memory_report(&[(4096, 4096)]);
    if r.ratio == 32.0 {
        Ok(format!(
            "{} B float vs {} B packed, ratio exactly 32.0",
            r.float_bytes, r.packed_bytes
        ))
    } else {
        Err(format!("ratio {} != 32.0", r.ratio))
    }
}

/// Criterion 10: hash-set filter counting equals brute force on 100 random
/// banks; exhaustive k=3 gives 512 unique / 256 with inverses folded.
fn c10_filter_counting() -> Result<String, String> {
    fn brute_force(bank: &FilterBank, inverse: bool) -> usize {
        let n = bank.num_filters();
        let mut reps: Vec<&[i8]> = Vec::new();
        for f in 0..n {
            let cur = bank.filter(f);
            let dup = reps.iter().any(|r| {
                r.iter().zip(cur).all(|(&a, &b)| a == b)
                    || (inverse && r.iter().zip(cur).all(|(&a, &b)| a == -b))
            });
            if !dup {
                reps.push(cur);
            }
        }
        reps.len()
    }

    let mut rng = Rng::new(1010);
    for trial in 0..100 {
        let filters = 1 + (rng.next_u64() % 1000) as usize;
        let k = 1 + (rng.next_u64() % 3) as usize;
        let values: Vec<i8> = (0..filters * k * k)
            .map(|_| if rng.next_u64() & 1 == 1 { 1 } else { -1 })
            .collect();
        let bank = FilterBank::new(filters, 1, k, values).map_err(|e| e.to_string())?;
        for inv in [false, true] {
            let fast = count_unique_filters(&bank, inv).0;
            let slow = brute_force(&bank, inv);
            if fast != slow {
                return Err(format!(
                    "trial {trial} (n={filters}, k={k}, inverse={inv}): {fast} != brute force {slow}"
                ));
            }
        }
    }

    let mut values = Vec::with_capacity(512 * 9);
    for pat in 0u32..512 {
        for bit in 0..9 {
            values.push(if pat >> bit & 1 == 1 { 1i8 } else { -1 });
        }
    }
    let bank = FilterBank::new(512, 1, 3, values).map_err(|e| e.to_string())?;
    let u = count_unique_filters(&bank, false).0;
    let ui = count_unique_filters(&bank, true).0;
    if u != 512 || ui != 256 {
        return Err(format!("exhaustive k=3: {u} unique / {ui} inverse-folded, expected 512 / 256"));
    }
    Ok("100 banks match brute force; exhaustive k=3 gives 512 / 256".into())
}

/// Criterion 11: training with 6-bit log-quantized gradients cuts the loss
/// to below half its initial value on the synthetic task.
fn c11_six_bit_gradients() -> Result<String, String> {
    let data = synth_dataset(200, 16, 2, 5).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(7);
    let mut model = QnnModel::<f32>::mlp(
        &[16, 8, 2],
        BnMode::Vanilla,
        QuantSpec::binary(),
        InputMode::BytePlanes,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    model.spec.gradients = Some(QuantKind::new(6, Scheme::Log, -1.0, 1.0).map_err(|e| e.to_string())?);
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 20,
        seed: 3,
        lr: 0.01,
        lr_decay: 0.98,
        shift_lr_period: 0,
        optim: OptimMode::Adam,
        stochastic: false,
    };
    let res = fit(model, &data, &data, &cfg, None).map_err(|e| e.to_string())?;
    let first = res.history.first().unwrap().train_loss;
    let last = res.history.last().unwrap().train_loss;
    if last < 0.5 * first {
        Ok(format!("loss {first:.4} -> {last:.4} ({:.0}% of initial)", last / first * 100.0))
    } else {
        Err(format!("loss {first:.4} -> {last:.4}, not below 50% of initial"))
    }
}

/// Criterion 12: checkpoint save -> load -> evaluate reproduces the logits
/// bitwise.
fn c12_checkpoint_fidelity() -> Result<String, String> {
    let data = synth_dataset(300, 16, 2, 5).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(7);
    let model = QnnModel::<f32>::mlp(
        &[16, 8, 2],
        BnMode::Vanilla,
        QuantSpec::binary(),
        InputMode::BytePlanes,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 20,
        seed: 3,
        lr: 0.01,
        lr_decay: 0.98,
        shift_lr_period: 0,
        optim: OptimMode::Adam,
        stochastic: false,
    };
    let res = fit(model, &data, &data, &cfg, None).map_err(|e| e.to_string())?;
    let mut trained = res.best_model;
    let dir = std::env::temp_dir().join(format!("qnn-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("roundtrip.qnn");
    save_checkpoint(&trained, None, &path).map_err(|e| e.to_string())?;
    let (mut loaded, _) = load_checkpoint::<f32>(&path).map_err(|e| e.to_string())?;
    let before = predict_logits(&mut trained, &data, true).map_err(|e| e.to_string())?;
    let after = predict_logits(&mut loaded, &data, true).map_err(|e| e.to_string())?;
    let err_before = evaluate(&mut trained, &data, true).map_err(|e| e.to_string())?;
    let err_after = evaluate(&mut loaded, &data, true).map_err(|e| e.to_string())?;
    let _ = std::fs::remove_dir_all(&dir);
    if before == after && err_before == err_after {
        Ok(format!("logits bitwise identical, error rate {err_before:.4} preserved"))
    } else {
        Err("logits differ after checkpoint roundtrip".into())
    }
}

fn mnist_available() -> Result<(Dataset, Dataset), String> {
    load_mnist(&mnist_dir()).map_err(|e| format!("MNIST files not found: {e}"))
}

#[test]
fn acceptance_criteria() {
    let mins = |m: u64| Duration::from_secs(m * 60);
    let mut gate = Gate { failures: Vec::new() };

    gate.record(1, "kernel exactness", Duration::from_secs(30), c1_kernel_exactness);
    gate.record(2, "first-layer exactness", Duration::from_secs(10), c2_bitplane_exactness);
    gate.record(3, "kernel speedup", mins(10), c3_kernel_speedup);

    // criteria 4-6 need the MNIST files on disk
    match mnist_available() {
        Ok(_) => {
            let mut mnist = None;
            gate.record(4, "MNIST desk-scale training", mins(30), || {
                let mut out = None;
                let r = c4_mnist_training(&mut out);
                mnist = out;
                r
            });
            let mnist_ref = &mnist;
            gate.record(5, "shift-variant parity", mins(30), || c5_shift_parity(mnist_ref));
            gate.record(6, "inference-path equivalence", mins(1), c6_inference_equivalence);
        }
        Err(why) => {
            for (idx, name) in [(4, "MNIST desk-scale training"), (5, "shift-variant parity"), (6, "inference-path equivalence")] {
                let msg = format!("criterion {idx} ({name}): {why}");
                status(&format!("FAIL  {msg}"));
                gate.failures.push(msg);
            }
        }
    }

    gate.record(7, "gradient correctness", Duration::from_secs(5), c7_gradient_correctness);
    gate.record(8, "stochastic binarization statistics", Duration::from_secs(5), c8_stochastic_statistics);
    gate.record(9, "memory ratio", Duration::from_secs(5), c9_memory_ratio);
    gate.record(10, "filter counting oracle", Duration::from_secs(30), c10_filter_counting);
    gate.record(11, "six-bit gradient training", mins(2), c11_six_bit_gradients);
    gate.record(12, "checkpoint fidelity", mins(1), c12_checkpoint_fidelity);

    assert!(
        gate.failures.is_empty(),
        "{} acceptance criteria failed:\n{}",
        gate.failures.len(),
        gate.failures.join("\n")
    );
}
