//! Reference implementations used as oracles by the integration tests. They
//! favour the most literal reading of each definition over speed.
#![allow(dead_code)]

use std::collections::BTreeSet;

/// Brute-force top-K: an unmasked item is ranked `r` when exactly `r` unmasked
/// items beat it (higher score, or equal score and lower index).
pub fn brute_top_k(scores: &[f64], masked: &BTreeSet<usize>, k: usize) -> Vec<usize> {
    let key = |i: usize| {
        if scores[i].is_nan() {
            f64::NEG_INFINITY
        } else {
            scores[i]
        }
    };
    let cand: Vec<usize> = (0..scores.len()).filter(|i| !masked.contains(i)).collect();
    let mut slots: Vec<Option<usize>> = vec![None; cand.len()];
    for &i in &cand {
        let rank = cand
            .iter()
            .filter(|&&j| key(j) > key(i) || (key(j) == key(i) && j < i))
            .count();
        slots[rank] = Some(i);
    }
    slots.into_iter().flatten().take(k).collect()
}

/// `(recall, ndcg, hr)` with 1-based ranks and `log2(r + 1)` discounts.
pub fn brute_metrics(ranked: &[usize], targets: &BTreeSet<usize>, k: usize) -> (f64, f64, f64) {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for r in 1..=k.min(ranked.len()) {
        if targets.contains(&ranked[r - 1]) {
            hits += 1;
            dcg += 1.0 / ((r + 1) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for r in 1..=k.min(targets.len()) {
        idcg += 1.0 / ((r + 1) as f64).log2();
    }
    let recall = hits as f64 / targets.len() as f64;
    let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };
    let hr = if hits >= 1 { 1.0 } else { 0.0 };
    (recall, ndcg, hr)
}

/// Dense row-major square matrix helpers for the propagation oracle.
pub fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for k in 0..m {
            if a[i][k] != 0.0 {
                for j in 0..p {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
    }
    out
}

/// Mean-of-layers propagation with the dense normalized adjacency. Nodes
/// without edges keep their own row at every layer.
pub fn dense_lightgcn(
    n_users: usize,
    n_items: usize,
    edges: &[(usize, usize)],
    x: &[Vec<f64>],
    layers: usize,
) -> Vec<Vec<f64>> {
    let n = n_users + n_items;
    let mut adj = vec![vec![0.0; n]; n];
    for &(u, i) in edges {
        adj[u][n_users + i] = 1.0;
        adj[n_users + i][u] = 1.0;
    }
    let deg: Vec<f64> = adj.iter().map(|r| r.iter().sum()).collect();
    let mut norm = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            if adj[a][b] != 0.0 {
                norm[a][b] = 1.0 / (deg[a] * deg[b]).sqrt();
            }
        }
        if deg[a] == 0.0 {
            norm[a][a] = 1.0;
        }
    }
    let mut cur = x.to_vec();
    let mut acc = x.to_vec();
    for _ in 0..layers {
        cur = dense_matmul(&norm, &cur);
        for (ra, rc) in acc.iter_mut().zip(&cur) {
            for (a, c) in ra.iter_mut().zip(rc) {
                *a += c;
            }
        }
    }
    let s = 1.0 / (layers + 1) as f64;
    acc.iter()
        .map(|r| r.iter().map(|v| v * s).collect())
        .collect()
}

/// Set-based and vector measures written straight from their formulas over
/// dense vectors.
pub mod sim {
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let d = dot(a, a).sqrt() * dot(b, b).sqrt();
        if d == 0.0 {
            0.0
        } else {
            dot(a, b) / d
        }
    }

    fn support(a: &[f64]) -> Vec<bool> {
        a.iter().map(|&x| x != 0.0).collect()
    }

    fn counts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
        let (sa, sb) = (support(a), support(b));
        let both = sa.iter().zip(&sb).filter(|(x, y)| **x && **y).count() as f64;
        let only_a = sa.iter().zip(&sb).filter(|(x, y)| **x && !**y).count() as f64;
        let only_b = sa.iter().zip(&sb).filter(|(x, y)| !**x && **y).count() as f64;
        (both, only_a, only_b)
    }

    pub fn jaccard(a: &[f64], b: &[f64]) -> f64 {
        let (c, x, y) = counts(a, b);
        if c + x + y == 0.0 {
            0.0
        } else {
            c / (c + x + y)
        }
    }

    pub fn tversky(a: &[f64], b: &[f64], alpha: f64, beta: f64) -> f64 {
        let (c, x, y) = counts(a, b);
        let d = c + alpha * x + beta * y;
        if d == 0.0 {
            0.0
        } else {
            c / d
        }
    }

    pub fn asym(a: &[f64], b: &[f64], alpha: f64) -> f64 {
        let (c, x, y) = counts(a, b);
        let d = (c + x).powf(alpha) * (c + y).powf(1.0 - alpha);
        if c == 0.0 || d == 0.0 {
            0.0
        } else {
            c / d
        }
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn finite_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + h;
            let up = f(&p);
            p[k] = x[k] - h;
            let down = f(&p);
            p[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Small deterministic generator so fixtures do not depend on the crate's RNG.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut z = self.0;
        z = (z ^ (z >> 33)).wrapping_mul(0xff51afd7ed558ccd);
        z ^ (z >> 33)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
