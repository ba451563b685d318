//! Naive scalar-loop reference implementations.

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rows(data: &[f64], d: usize) -> Vec<Vec<f64>> {
    data.chunks(d).map(<[f64]>::to_vec).collect()
}

/// Mean over the 2B anchors of `-log(exp(s_ap/τ) / Σ_{k≠a} exp(s_ak/τ))`.
pub fn nt_xent(za: &[Vec<f64>], zb: &[Vec<f64>], tau: f64) -> f64 {
    let b = za.len();
    let pool: Vec<&Vec<f64>> = za.iter().chain(zb).collect();
    let mut sum = 0.0;
    for a in 0..2 * b {
        let pos = (a + b) % (2 * b);
        let mut denom = 0.0;
        for k in 0..2 * b {
            if k != a {
                denom += (cosine(pool[a], pool[k]) / tau).exp();
            }
        }
        sum += -((cosine(pool[a], pool[pos]) / tau).exp() / denom).ln();
    }
    sum / (2 * b) as f64
}

/// `r`, `z` flattened `[B, N, D]`; per-sample mean over the listed positions,
/// then mean over samples.
pub fn masked_recon(r: &[f64], z: &[f64], n: usize, d: usize, masked: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for (s, idx) in masked.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let mut acc = 0.0;
        for &i in idx {
            let o = (s * n + i) * d;
            acc += sq_dist(&r[o..o + d], &z[o..o + d]);
        }
        total += acc / idx.len() as f64;
    }
    total / masked.len() as f64
}

/// Share of positive-negative pairs ranked correctly, ties counting one half.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let mut hits = 0usize;
    for i in 0..preds.len() {
        if preds[i] == labels[i] {
            hits += 1;
        }
    }
    hits as f64 / preds.len() as f64
}
