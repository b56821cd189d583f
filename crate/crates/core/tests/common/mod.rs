#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use profiler_core::data::{load_csv, Dataset};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(n: usize, p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

/// Correlated columns: `Z L` with a random lower-triangular `L`.
pub fn correlated_matrix(n: usize, p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let z = normal_matrix(n, p, rng);
    let l = DMatrix::from_fn(p, p, |i, j| if j <= i { rng.random_range(-1.0..1.0) } else { 0.0 });
    z * l.transpose()
}

/// Shrinkage weight straight from its definition, on nested vectors so it
/// shares nothing with the library. `None` cells are missing.
pub fn brute_force_lambda(rows: &[Vec<Option<f64>>]) -> f64 {
    let p = rows[0].len();
    if p < 2 {
        return 0.0;
    }
    let means: Vec<f64> = (0..p)
        .map(|k| {
            let v: Vec<f64> = rows.iter().filter_map(|r| r[k]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..p {
        for l in 0..p {
            if k == l {
                continue;
            }
            let w: Vec<f64> = rows
                .iter()
                .filter_map(|r| match (r[k], r[l]) {
                    (Some(a), Some(b)) => Some((a - means[k]) * (b - means[l])),
                    _ => None,
                })
                .collect();
            let m = w.len() as f64;
            if w.len() < 2 {
                continue;
            }
            let wbar = w.iter().sum::<f64>() / m;
            let s_kl = m / (m - 1.0) * wbar;
            let var_s = m / ((m - 1.0) * (m - 1.0) * (m - 1.0)) * w.iter().map(|x| (x - wbar).powi(2)).sum::<f64>();
            num += var_s;
            den += s_kl * s_kl;
        }
    }
    if den == 0.0 {
        1.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}

/// Average ranks (ties share the mean rank).
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

pub fn diabetes() -> Dataset {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/diabetes.csv");
    load_csv(path, None).expect("diabetes csv")
}
