#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row with its maximum at a random position and residual spread `|p_k - mu| <= rho_max * mu`.
pub fn bounded_row<R: Rng>(rng: &mut R, k: usize, rho_max: f64) -> Vec<f64> {
    loop {
        let chance = 1.0 / k as f64;
        let top = if rng.random_bool(0.2) {
            1.0 - 10f64.powf(-rng.random_range(1.0..9.0))
        } else {
            chance + (1.0 - chance) * rng.random::<f64>()
        };
        let mu = (1.0 - top) / (k - 1) as f64;
        let mut z: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        z.iter_mut().for_each(|x| *x -= mean);
        let spread = z.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let target = rho_max * rng.random::<f64>();
        if spread > 0.0 {
            z.iter_mut().for_each(|x| *x *= target / spread);
        }
        let mut row: Vec<f64> = z.iter().map(|x| mu * (1.0 + x)).collect();
        if row.iter().any(|&p| p >= top || p <= 0.0) {
            continue;
        }
        let at = rng.random_range(0..k);
        row.insert(at, top);
        return row;
    }
}

/// Flat-Dirichlet row via normalised exponentials.
pub fn dirichlet_row<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..k).map(|_| -rng.random_range(f64::MIN_POSITIVE..1.0).ln()).collect();
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    row
}

/// Plain-arithmetic statistics oracle: (argmax, max, mu, v, rho).
pub fn oracle_stats(row: &[f64]) -> (usize, f64, f64, f64, f64) {
    let mut top = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[top] {
            top = i;
        }
    }
    let k1 = (row.len() - 1) as f64;
    let pmax = row[top];
    let mu = (1.0 - pmax) / k1;
    let mut v = 0.0;
    let mut dmax = 0.0f64;
    for (i, &p) in row.iter().enumerate() {
        if i != top {
            v += (p - mu) * (p - mu);
            dmax = dmax.max((p - mu).abs());
        }
    }
    (top, pmax, mu, v / k1, dmax / mu)
}

pub fn random_embedding<R: Rng>(rng: &mut R, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}
