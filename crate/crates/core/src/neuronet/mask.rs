use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Tokens kept visible at mask ratio `ratio`: `max(1, round((1 - ratio) n))`.
pub fn visible_count(n: usize, ratio: f64) -> usize {
    (((1.0 - ratio) * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Per-sample split of `[0, n)` into visible and masked positions, both sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub n: usize,
    pub visible: Vec<Vec<usize>>,
    pub masked: Vec<Vec<usize>>,
}

impl MaskPlan {
    pub fn sample(batch: usize, n: usize, ratio: f64, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("cannot mask an empty token sequence".into()));
        }
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Config(format!("mask ratio must be in [0, 1), got {ratio}")));
        }
        let keep = visible_count(n, ratio);
        let mut visible = Vec::with_capacity(batch);
        let mut masked = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut v = index::sample(rng, n, keep).into_vec();
            v.sort_unstable();
            masked.push(complement(&v, n));
            visible.push(v);
        }
        Ok(Self { n, visible, masked })
    }

    /// Every position visible.
    pub fn full(batch: usize, n: usize) -> Self {
        Self { n, visible: vec![(0..n).collect(); batch], masked: vec![Vec::new(); batch] }
    }

    pub fn batch(&self) -> usize {
        self.visible.len()
    }

    pub fn n_visible(&self) -> usize {
        self.visible.first().map_or(0, Vec::len)
    }

    /// Flat row indices into a `[B * n, ..]` view selecting each sample's visible positions.
    pub fn flat_visible(&self) -> Vec<usize> {
        flat(&self.visible, self.n)
    }

    pub fn flat_masked(&self) -> Vec<usize> {
        flat(&self.masked, self.n)
    }

    /// For each flat position `b * n + i`, its row in `[visible rows; masked rows]`.
    pub fn unshuffle(&self) -> Vec<usize> {
        let b = self.batch();
        let (nv, nm) = (self.n_visible(), self.n - self.n_visible());
        let mut out = vec![0; b * self.n];
        for s in 0..b {
            for (j, &i) in self.visible[s].iter().enumerate() {
                out[s * self.n + i] = s * nv + j;
            }
            for (j, &i) in self.masked[s].iter().enumerate() {
                out[s * self.n + i] = b * nv + s * nm + j;
            }
        }
        out
    }
}

pub fn complement(sorted: &[usize], n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - sorted.len());
    let mut it = sorted.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

fn flat(sets: &[Vec<usize>], n: usize) -> Vec<usize> {
    sets.iter().enumerate().flat_map(|(s, v)| v.iter().map(move |&i| s * n + i)).collect()
}
