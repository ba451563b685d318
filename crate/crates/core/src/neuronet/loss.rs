use crate::autograd::{Tensor, Var};
use crate::error::{Error, Result};

/// Row-wise L2 normalization of a `[n, d]` variable.
pub fn l2_normalize<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let v = x.value();
    let d = v.dim(1);
    if v.data().chunks(d).any(|row| row.iter().all(|&a| a == 0.0)) {
        return Err(Error::ZeroNorm);
    }
    let n = x.dim(0);
    let norm = x.sqr().sum_axis(1).sqrt().reshape([n, 1]);
    Ok(x.div(norm))
}

/// NT-Xent over the pool of `2B` views `[za; zb]` with cosine similarity.
/// Every view is an anchor once; its positive is the same sample's other view
/// and the denominator runs over all `2B - 1` other views. Returns the mean
/// over the `2B` anchors.
pub fn nt_xent<'g>(za: Var<'g>, zb: Var<'g>, tau: f64) -> Result<Var<'g>> {
    if za.shape() != zb.shape() || za.shape().len() != 2 {
        return Err(Error::Shape(format!("nt_xent views {:?} vs {:?}", za.shape(), zb.shape())));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("temperature must be positive, got {tau}")));
    }
    let b = za.dim(0);
    if b == 0 {
        return Err(Error::Invalid("nt_xent needs at least one sample".into()));
    }
    let g = za.graph();
    let z = l2_normalize(g.concat(&[za, zb], 0))?;
    let n = 2 * b;
    let mut diag = vec![0.0; n * n];
    for i in 0..n {
        diag[i * n + i] = -1e9;
    }
    let logits = z.matmul(z.t()).scale(1.0 / tau).add(g.constant(Tensor::new([n, n], diag)));
    let logp = logits.log_softmax().reshape([n * n]);
    let positives: Vec<usize> = (0..n).map(|a| a * n + (a + b) % n).collect();
    Ok(logp.index_select(0, &positives).mean_all().neg())
}

/// Mean over samples of the mean squared L2 error over each sample's masked
/// positions. `r`, `z`: `[B, N, D]`; `masked[b]` lists masked positions of
/// sample `b`. Samples with no masked positions contribute 0.
pub fn inter_recon_loss<'g>(r: Var<'g>, z: Var<'g>, masked: &[Vec<usize>]) -> Result<Var<'g>> {
    if r.shape() != z.shape() || r.shape().len() != 3 {
        return Err(Error::Shape(format!("reconstruction {:?} vs target {:?}", r.shape(), z.shape())));
    }
    let (b, n) = (r.dim(0), r.dim(1));
    if masked.len() != b {
        return Err(Error::Shape(format!("{} masked sets for batch of {b}", masked.len())));
    }
    let mut w = vec![0.0; b * n];
    for (s, idx) in masked.iter().enumerate() {
        for &i in idx {
            if i >= n {
                return Err(Error::Invalid(format!("masked index {i} out of range {n}")));
            }
            w[s * n + i] = 1.0 / idx.len() as f64;
        }
    }
    let sq = r.sub(z).sqr().sum_axis(2);
    Ok(sq.mul(r.graph().constant(Tensor::new([b, n], w))).sum_all().scale(1.0 / b as f64))
}

/// `½ (recon1 + recon2) + α · contrastive`.
pub fn neuronet_total_loss<'g>(recon1: Var<'g>, recon2: Var<'g>, contrastive: Var<'g>, alpha: f64) -> Var<'g> {
    recon1.add(recon2).scale(0.5).add(contrastive.scale(alpha))
}
