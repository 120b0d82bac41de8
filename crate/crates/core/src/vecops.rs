//! Dense vector kernels. Reductions use fixed-size chunks combined in order,
//! so results do not depend on the number of threads.

use rayon::prelude::*;

const CHUNK: usize = 8192;
const PAR_MIN: usize = 4 * CHUNK;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() < PAR_MIN {
        return chunked_dot(a, b);
    }
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    partial.iter().sum()
}

fn chunked_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut total = 0.0;
    for (x, y) in a.chunks(CHUNK).zip(b.chunks(CHUNK)) {
        total += x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    }
    total
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if y.len() < PAR_MIN {
        y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
    } else {
        y.par_iter_mut().zip(x.par_iter()).for_each(|(y, x)| *y += alpha * x);
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    if x.len() < PAR_MIN {
        x.iter_mut().for_each(|v| *v *= alpha);
    } else {
        x.par_iter_mut().for_each(|v| *v *= alpha);
    }
}

/// `y = Σ_j c_j x_j`
pub fn combine(coeffs: &[f64], xs: &[Vec<f64>], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    let body = |(i, y): (usize, &mut f64)| {
        let mut s = 0.0;
        for (c, x) in coeffs.iter().zip(xs) {
            s += c * x[i];
        }
        *y = s;
    };
    if y.len() < PAR_MIN {
        y.iter_mut().enumerate().for_each(body);
    } else {
        y.par_iter_mut().enumerate().for_each(body);
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    norm2(&sub(a, b)) / norm2(b).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_independent_of_threads() {
        let a: Vec<f64> = (0..100_000u64).map(|i| ((i * 7919) % 1013) as f64 / 1013.0 - 0.5).collect();
        let b: Vec<f64> = (0..100_000u64).map(|i| ((i * 104_729) % 997) as f64 / 997.0).collect();
        let par = dot(&a, &b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let seq = pool.install(|| dot(&a, &b));
        assert_eq!(par.to_bits(), seq.to_bits());
        assert_eq!(par.to_bits(), chunked_dot(&a, &b).to_bits());
    }

    #[test]
    fn combine_and_axpy() {
        let xs = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let mut y = vec![9.0; 2];
        combine(&[2.0, -1.0], &xs, &mut y);
        assert_eq!(y, vec![-1.0, 0.0]);
        axpy(0.5, &[2.0, 2.0], &mut y);
        assert_eq!(y, vec![0.0, 1.0]);
        assert_eq!(rel_diff(&[3.0, 4.0], &[3.0, 4.0]), 0.0);
    }
}
