use qnn_core::bitkernel::BitMatrix;
use qnn_core::optim::{adam_update, OptimMode, OptimState};
use qnn_core::tensor::Tensor;
use qnn_core::Rng;
use std::time::Instant;

fn main() {
    let mut rng = Rng::new(1);
    let (a, _) = Tensor::<f32>::glorot_init(100, 1024, &mut rng).unwrap();
    let (w, _) = Tensor::<f32>::glorot_init(1024, 1024, &mut rng).unwrap();
    let n = 50;

    let t = Instant::now();
    for _ in 0..n { std::hint::black_box(a.matmul_fast(&w).unwrap()); }
    println!("matmul_fast 100x1024x1024: {:.2} ms", t.elapsed().as_secs_f64()*1e3/n as f64);

    let t = Instant::now();
    for _ in 0..n { std::hint::black_box(a.matmul_at_b(&a).unwrap()); }
    println!("matmul_at_b -> 1024x1024: {:.2} ms", t.elapsed().as_secs_f64()*1e3/n as f64);

    let t = Instant::now();
    for _ in 0..n { std::hint::black_box(w.transpose()); }
    println!("transpose 1024x1024: {:.2} ms", t.elapsed().as_secs_f64()*1e3/n as f64);

    let t = Instant::now();
    for _ in 0..n { std::hint::black_box(w.map(qnn_core::quantize::sign_binarize)); }
    println!("sign map 1024x1024: {:.2} ms", t.elapsed().as_secs_f64()*1e3/n as f64);

    let t = Instant::now();
    for _ in 0..n { std::hint::black_box(BitMatrix::pack_sign_transposed(&w)); }
    println!("pack_sign_transposed 1024x1024: {:.2} ms", t.elapsed().as_secs_f64()*1e3/n as f64);

    let t = Instant::now();
    for _ in 0..n { std::hint::black_box(a.matmul_a_bt(&w).unwrap()); }
    println!("matmul_a_bt 100x1024 . (1024x1024)^T: {:.2} ms", t.elapsed().as_secs_f64()*1e3/n as f64);

    let mut params = w.clone();
    let mut st = OptimState::new(1024*1024, OptimMode::Adam);
    let g = w.clone();
    let t = Instant::now();
    for _ in 0..n { adam_update(params.data_mut(), g.data(), &mut st, 0.001f32).unwrap(); }
    println!("adam_update 1M params: {:.2} ms", t.elapsed().as_secs_f64()*1e3/n as f64);

    // forward-path pieces
    let pm = qnn_core::bitkernel::random_pm1::<f32>(100, 1024, &mut rng);
    let wt = BitMatrix::pack_sign_transposed(&w);
    let t = Instant::now();
    for _ in 0..n {
        let pa = BitMatrix::pack(&pm).unwrap();
        std::hint::black_box(qnn_core::bitkernel::xnor_gemm::<f32>(&pa, &wt).unwrap());
    }
    println!("pack+xnor 100x1024x1024: {:.2} ms", t.elapsed().as_secs_f64()*1e3/n as f64);

    let bytes: Vec<u8> = (0..100*784).map(|i| (i % 251) as u8).collect();
    let (w0, _) = Tensor::<f32>::glorot_init(784, 1024, &mut rng).unwrap();
    let w0t = BitMatrix::pack_sign_transposed(&w0);
    let t = Instant::now();
    for _ in 0..n {
        let planes = qnn_core::bitkernel::BitPlanes8::from_bytes(100, 784, &bytes).unwrap();
        std::hint::black_box(qnn_core::bitkernel::bitplane_gemm::<f32>(&planes, &w0t).unwrap());
    }
    println!("planes+bitplane_gemm 100x784x1024: {:.2} ms", t.elapsed().as_secs_f64()*1e3/n as f64);

    let mut bn = qnn_core::layers::BatchNormState::<f32>::new(1024, qnn_core::layers::BnMode::Vanilla);
    let s100 = a.clone();
    let t = Instant::now();
    for _ in 0..n {
        let (y, cache) = qnn_core::layers::bn_forward(&mut bn, &s100, true).unwrap();
        std::hint::black_box(&y);
        let g = qnn_core::layers::bn_backward(&bn, &s100, cache.as_ref().unwrap()).unwrap();
        std::hint::black_box(&g);
    }
    println!("bn fwd+bwd 100x1024: {:.2} ms", t.elapsed().as_secs_f64()*1e3/n as f64);
}
