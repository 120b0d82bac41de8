use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dyninv::gengk::GenGk;
use dyninv::linop::{kron_matvec_reshaped, DenseOperator, KroneckerOperator, LinearOperator, NoiseCovariance, OpRef};
use dyninv::priorcov::{build_grid_spatial_prior, MaternKernel};
use dyninv::problems::{gen_rotating_gaussians, RotatingParams};
use nalgebra::DMatrix;

fn filled(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect()
}

fn spd(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| (-((i as f64 - j as f64) / 3.0).powi(2)).exp() + if i == j { 1e-3 } else { 0.0 })
}

fn kronecker_matvec(c: &mut Criterion) {
    let mut g = c.benchmark_group("kron_matvec");
    for &(n_t, n_s) in &[(10usize, 1024usize), (30, 4096)] {
        let q_t = DenseOperator::new(spd(n_t));
        let q_s = DenseOperator::new(spd(n_s));
        let x = filled(n_t * n_s);
        g.bench_with_input(BenchmarkId::new("reshaped", format!("{n_t}x{n_s}")), &x, |b, x| {
            b.iter(|| kron_matvec_reshaped(&q_t, &q_s, black_box(x)).unwrap())
        });
        let op = KroneckerOperator::new(Arc::new(q_t.clone()), Arc::new(q_s.clone()));
        g.bench_with_input(BenchmarkId::new("operator", format!("{n_t}x{n_s}")), &x, |b, x| {
            b.iter(|| op.apply(black_box(x)).unwrap())
        });
    }
    g.finish();
}

fn gengk_steps(c: &mut Criterion) {
    let p = RotatingParams {
        nx: 64,
        ny: 64,
        n_t: 24,
        ..RotatingParams::default()
    };
    let inst = gen_rotating_gaussians(&p, 0).unwrap();
    let q_s = build_grid_spatial_prior(&MaternKernel::gaussian(0.05).unwrap().into(), 64, 64, 1e-6).unwrap();
    let q: OpRef = Arc::new(KroneckerOperator::new(Arc::new(DenseOperator::new(spd(24))), q_s));
    let r = NoiseCovariance::scaled_identity(inst.noise_variance, inst.m()).unwrap();
    let mut g = c.benchmark_group("gengk");
    g.sample_size(20);
    for reorth in [false, true] {
        g.bench_function(BenchmarkId::new("10_steps", if reorth { "reorth" } else { "plain" }), |b| {
            b.iter(|| {
                let mut gk = GenGk::new(inst.a.as_ref(), &r, q.as_ref(), &inst.d, reorth).unwrap();
                gk.run_to(10);
                black_box(gk.k())
            })
        });
    }
    g.finish();
}

fn matern_eval(c: &mut Criterion) {
    let r: Vec<f64> = (0..1000).map(|i| i as f64 * 3e-3).collect();
    let mut g = c.benchmark_group("matern_eval");
    for nu in [0.5, 1.5, 2.7, f64::INFINITY] {
        let k = MaternKernel::new(nu, 0.3).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(nu), &r, |b, r| {
            b.iter(|| r.iter().map(|&x| k.eval(black_box(x))).sum::<f64>())
        });
    }
    g.finish();
}

criterion_group!(benches, kronecker_matvec, gengk_steps, matern_eval);
criterion_main!(benches);
