use ffens_core::mat::{matmul, matmul_bt, tmatmul, Mat};
use std::time::Instant;

fn main() {
    let a = Mat::from_fn(2000, 784, |i, j| ((i * 7 + j) % 100) as f64 / 100.0);
    let b = Mat::from_fn(784, 784, |i, j| ((i * 3 + j) % 97) as f64 / 97.0 - 0.5);
    let flops = 2.0 * 2000.0 * 784.0 * 784.0;

    for (name, f) in [
        ("matmul   ", Box::new(|| matmul(&a, &b)) as Box<dyn Fn() -> Mat>),
        ("matmul_bt", Box::new(|| matmul_bt(&a, &b))),
    ] {
        let _ = f();
        let t = Instant::now();
        let reps = 5;
        for _ in 0..reps { std::hint::black_box(f()); }
        let dt = t.elapsed().as_secs_f64() / reps as f64;
        println!("{name}: {:.3}s  {:.1} GFLOP/s", dt, flops / dt / 1e9);
    }
    let c = Mat::from_fn(2000, 784, |i, j| ((i + j) % 89) as f64 / 89.0);
    let t = Instant::now();
    let reps = 5;
    for _ in 0..reps { std::hint::black_box(tmatmul(&a, &c)); }
    let dt = t.elapsed().as_secs_f64() / reps as f64;
    println!("tmatmul  : {:.3}s  {:.1} GFLOP/s", dt, flops / dt / 1e9);
}
