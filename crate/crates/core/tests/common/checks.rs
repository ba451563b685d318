//! Randomized checks shared by the integration tests and the acceptance run.
//! Each one draws its instance from a seed and reports the first discrepancy.

use std::collections::{BTreeMap, BTreeSet};

use physiome::autograd::{Graph, Tensor};
use physiome::evalkit::{accuracy, binary_auc, make_folds, ScenarioScore, SweepReport, N_FOLDS};
use physiome::neuronet::{inter_recon_loss, neuronet_total_loss, nt_xent, NeuroNet};
use physiome::nn::{AdamW, AdamWConfig, Ctx, Init, ParamStore};
use physiome::physiome::{
    cross_contra_loss, intra_recon_loss, missing_recon_loss, physiome_forward, total_loss, train_step, Branch,
    DropSamplePlan, LossWeights, PhysioME, PhysioMEConfig, RestorationStrategy, ScenarioMask,
};
use physiome::signal::{frame_batch, generate_synthetic_dataset, SyntheticConfig};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles;
use super::{backbone_cfg, frames, physiome, physiome_cfg, tokens, FRAME, N};

pub type Check = Result<(), String>;

const REL: f64 = 1e-6;

fn close(what: &str, got: f64, want: f64) -> Check {
    if (got - want).abs() <= REL * want.abs().max(1e-12) {
        Ok(())
    } else {
        Err(format!("{what}: {got} vs oracle {want}"))
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn random_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

fn random_plan(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DropSamplePlan {
    loop {
        let branches: Vec<Branch> = (0..m)
            .map(|_| {
                if rng.random_bool(0.4) {
                    Branch::Dropped
                } else {
                    let k = rng.random_range(1..=n);
                    Branch::Sampled(random_subset(rng, n, k))
                }
            })
            .collect();
        if branches.iter().any(|b| matches!(b, Branch::Sampled(_))) {
            return DropSamplePlan { n, branches };
        }
    }
}

pub fn nt_xent_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d, tau) = (rng.random_range(1..=4), rng.random_range(2..=16), rng.random_range(0.05..1.0));
    let (a, c) = (randn(&mut rng, b * d), randn(&mut rng, b * d));
    let g = Graph::new();
    let got = nt_xent(g.constant(Tensor::new([b, d], a.clone())), g.constant(Tensor::new([b, d], c.clone())), tau)
        .map_err(|e| e.to_string())?
        .item();
    close("nt_xent", got, oracles::nt_xent(&oracles::rows(&a, d), &oracles::rows(&c, d), tau))
}

pub fn masked_recon_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, d) = (rng.random_range(1..=4), rng.random_range(1..=8), rng.random_range(1..=16));
    let (r, z) = (randn(&mut rng, b * n * d), randn(&mut rng, b * n * d));
    let masked: Vec<Vec<usize>> = (0..b)
        .map(|_| {
            let k = rng.random_range(0..=n);
            random_subset(&mut rng, n, k)
        })
        .collect();
    let g = Graph::new();
    let got = inter_recon_loss(g.constant(Tensor::new([b, n, d], r.clone())), g.constant(Tensor::new([b, n, d], z.clone())), &masked)
        .map_err(|e| e.to_string())?
        .item();
    close("masked reconstruction", got, oracles::masked_recon(&r, &z, n, d, &masked))
}

pub fn backbone_total_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r1, r2, c, alpha): (f64, f64, f64, f64) =
        (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..3.0));
    let g = Graph::new();
    let got = neuronet_total_loss(g.scalar(r1), g.scalar(r2), g.scalar(c), alpha).item();
    close("backbone total", got, 0.5 * (r1 + r2) + alpha * c)
}

pub fn intra_recon_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, d, m) = (rng.random_range(1..=4), rng.random_range(1..=8), rng.random_range(1..=16), rng.random_range(1..=3));
    let plan = random_plan(&mut rng, m, n);
    let dec: Vec<Vec<f64>> = (0..m).map(|_| randn(&mut rng, b * n * d)).collect();
    let tgt: Vec<Vec<f64>> = (0..m).map(|_| randn(&mut rng, b * n * d)).collect();
    let g = Graph::new();
    let dv: Vec<_> = (0..m).map(|k| (!plan.is_dropped(k)).then(|| g.constant(Tensor::new([b, n, d], dec[k].clone())))).collect();
    let ev: Vec<_> = tgt.iter().map(|t| g.constant(Tensor::new([b, n, d], t.clone()))).collect();
    let got = intra_recon_loss(&g, &dv, &ev, &plan).map_err(|e| e.to_string())?.item();

    let mut terms = Vec::new();
    for k in 0..m {
        if let Branch::Sampled(kept) = &plan.branches[k] {
            let held: Vec<usize> = (0..n).filter(|i| !kept.contains(i)).collect();
            if held.is_empty() {
                continue;
            }
            let mut per_sample = 0.0;
            for s in 0..b {
                let mut acc = 0.0;
                for &i in &held {
                    let o = (s * n + i) * d;
                    acc += oracles::sq_dist(&dec[k][o..o + d], &tgt[k][o..o + d]);
                }
                per_sample += acc / held.len() as f64;
            }
            terms.push(per_sample / b as f64);
        }
    }
    let want = if terms.is_empty() { 0.0 } else { terms.iter().sum::<f64>() / terms.len() as f64 };
    close("intra-modal reconstruction", got, want)
}

pub fn missing_recon_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, d, m) = (rng.random_range(1..=4), rng.random_range(1..=8), rng.random_range(1..=16), rng.random_range(1..=3));
    let plan = random_plan(&mut rng, m, n);
    let rest: Vec<Vec<f64>> = (0..m).map(|_| randn(&mut rng, b * n * d)).collect();
    let tgt: Vec<Vec<f64>> = (0..m).map(|_| randn(&mut rng, b * n * d)).collect();
    let g = Graph::new();
    let rv: Vec<_> = (0..m).map(|k| plan.is_dropped(k).then(|| g.constant(Tensor::new([b, n, d], rest[k].clone())))).collect();
    let ev: Vec<_> = tgt.iter().map(|t| g.constant(Tensor::new([b, n, d], t.clone()))).collect();
    let got = missing_recon_loss(&g, &rv, &ev, &plan).map_err(|e| e.to_string())?.item();

    let dropped: Vec<usize> = (0..m).filter(|&k| plan.is_dropped(k)).collect();
    let mut want = 0.0;
    for &k in &dropped {
        let mut acc = 0.0;
        for s in 0..b {
            for i in 0..n {
                let o = (s * n + i) * d;
                acc += oracles::sq_dist(&rest[k][o..o + d], &tgt[k][o..o + d]) / n as f64;
            }
        }
        want += acc / b as f64;
    }
    if !dropped.is_empty() {
        want /= dropped.len() as f64;
    }
    close("missing-modality reconstruction", got, want)
}

pub fn cross_contra_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d, m, tau) = (rng.random_range(1..=4), rng.random_range(2..=16), rng.random_range(1..=3), rng.random_range(0.05..1.0));
    let em: Vec<Vec<f64>> = (0..m).map(|_| randn(&mut rng, b * d)).collect();
    let om = randn(&mut rng, b * d);
    let g = Graph::new();
    let ev: Vec<_> = em.iter().map(|e| g.constant(Tensor::new([b, d], e.clone()))).collect();
    let got = cross_contra_loss(&ev, g.constant(Tensor::new([b, d], om.clone())), tau).map_err(|e| e.to_string())?.item();
    let om_rows = oracles::rows(&om, d);
    let want = em.iter().map(|e| oracles::nt_xent(&oracles::rows(e, d), &om_rows, tau)).sum::<f64>() / m as f64;
    close("cross-modal contrast", got, want)
}

pub fn weighted_total_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..10.0));
    let mut w: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..3.0));
    w[rng.random_range(0..3)] += 0.1;
    let weights = LossWeights { alpha: w[0], beta: w[1], gamma: w[2] };
    let g = Graph::new();
    let got = total_loss(&weights, g.scalar(parts[0]), g.scalar(parts[1]), g.scalar(parts[2])).item();
    close("weighted total", got, w[0] * parts[0] + w[1] * parts[1] + w[2] * parts[2])
}

/// Every loss case above, for one seed.
pub const LOSS_CASES: [(&str, fn(u64) -> Check); 7] = [
    ("nt_xent", nt_xent_case),
    ("masked reconstruction", masked_recon_case),
    ("backbone total", backbone_total_case),
    ("intra-modal reconstruction", intra_recon_case),
    ("missing-modality reconstruction", missing_recon_case),
    ("cross-modal contrast", cross_contra_case),
    ("weighted total", weighted_total_case),
];

// Finite differences.

pub const FD_H: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-3;
const FD_FLOOR: f64 = 1e-6;
const ENTRIES_PER_TENSOR: usize = 3;

#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub worst: f64,
    pub checked: usize,
}

impl FdReport {
    pub fn merge(self, other: FdReport) -> FdReport {
        FdReport { worst: self.worst.max(other.worst), checked: self.checked + other.checked }
    }
}

/// Worst relative error between analytic gradients and central differences
/// over a few random entries of every selected trainable tensor.
fn fd_compare(
    store: &ParamStore,
    analytic: &BTreeMap<String, Tensor>,
    loss: impl Fn(&ParamStore) -> f64,
    select: impl Fn(&str) -> bool,
) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut report = FdReport::default();
    let mut probe = store.clone();
    for (name, p) in store.iter() {
        if !p.trainable || !select(name) {
            continue;
        }
        let n = p.value.numel();
        let grad = analytic.get(name).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for i in index::sample(&mut rng, n, ENTRIES_PER_TENSOR.min(n)) {
            let orig = p.value.data()[i];
            probe.get_mut(name).unwrap().value.data_mut()[i] = orig + FD_H;
            let up = loss(&probe);
            probe.get_mut(name).unwrap().value.data_mut()[i] = orig - FD_H;
            let down = loss(&probe);
            probe.get_mut(name).unwrap().value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_H);
            let err = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(FD_FLOOR);
            report.worst = report.worst.max(err);
            report.checked += 1;
        }
    }
    report
}

fn neuronet() -> (ParamStore, NeuroNet) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = NeuroNet::new(&mut Init::new(&mut store, &mut rng), "nn", &backbone_cfg(), N);
    (store, net)
}

/// Backbone total loss over every parameter after the frame network. Frame
/// tokens enter as constants: the reconstruction target is a stop-gradient
/// copy of them, which finite differences cannot respect.
pub fn fd_backbone_total() -> FdReport {
    let (store, net) = neuronet();
    let tokens = {
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &store);
        (*net.frame_encode(&ctx, ctx.constant(frames(3, 5))).unwrap().value()).clone()
    };
    let loss = |s: &ParamStore| {
        let g = Graph::new();
        let ctx = Ctx::deterministic(&g, s);
        net.losses(&ctx, ctx.constant(tokens.clone()), &mut ChaCha8Rng::seed_from_u64(7)).unwrap().total.item()
    };
    let g = Graph::new();
    let ctx = Ctx::deterministic(&g, &store);
    let total = net.losses(&ctx, ctx.constant(tokens.clone()), &mut ChaCha8Rng::seed_from_u64(7)).unwrap().total;
    let grads = ctx.param_grads(&g.backward(total));
    fd_compare(&store, &grads, loss, |n| !n.starts_with("nn/frame/"))
}

/// Frame network through a fixed weighted sum of its output tokens.
pub fn fd_frame_network() -> FdReport {
    let (store, net) = neuronet();
    let x = frames(2, 6);
    let weights = Tensor::new([2, N, 8], (0..2 * N * 8).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect());
    let loss = |s: &ParamStore| {
        let g = Graph::new();
        let ctx = Ctx::deterministic(&g, s);
        net.frame_encode(&ctx, ctx.constant(x.clone())).unwrap().mul(ctx.constant(weights.clone())).sum_all().item()
    };
    let g = Graph::new();
    let ctx = Ctx::deterministic(&g, &store);
    let out = net.frame_encode(&ctx, ctx.constant(x.clone())).unwrap().mul(ctx.constant(weights.clone())).sum_all();
    let grads = ctx.param_grads(&g.backward(out));
    fd_compare(&store, &grads, loss, |n| n.starts_with("nn/frame/"))
}

fn fixed_plan() -> DropSamplePlan {
    DropSamplePlan { n: N, branches: vec![Branch::Sampled(vec![0, 2, 3]), Branch::Dropped, Branch::Sampled(vec![1, 4])] }
}

fn fd_physiome(cfg: PhysioMEConfig, select: impl Fn(&str) -> bool) -> FdReport {
    let (mut store, _, model) = physiome(3, &cfg);
    let ft = tokens(&store, &model, 3, 11);
    // Start away from the zero-initialized LoRA factors so every path carries gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let names: Vec<String> = store.names().filter(|n| n.contains("/lora/") && n.ends_with("/b")).cloned().collect();
    for n in names {
        for v in store.get_mut(&n).unwrap().value.data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let loss = |s: &ParamStore| {
        let g = Graph::new();
        let ctx = Ctx::deterministic(&g, s);
        physiome_forward(&ctx, &model, &ft, &fixed_plan()).unwrap().total.item()
    };
    let g = Graph::new();
    let ctx = Ctx::deterministic(&g, &store);
    let total = physiome_forward(&ctx, &model, &ft, &fixed_plan()).unwrap().total;
    let grads = ctx.param_grads(&g.backward(total));
    fd_compare(&store, &grads, loss, select)
}

/// With the restoration path open every parameter but the adapters is
/// checked; encoder outputs are also detached reconstruction targets.
pub fn fd_physiome_open() -> FdReport {
    let cfg = PhysioMEConfig { restoration_gradient: true, ..physiome_cfg() };
    fd_physiome(cfg, |n| !n.starts_with("physiome/modality_enc/"))
}

/// The adapters, through the contrastive term alone.
pub fn fd_physiome_adapters() -> FdReport {
    let cfg = PhysioMEConfig { loss_weights: LossWeights { alpha: 0.0, beta: 0.0, gamma: 1.0 }, ..physiome_cfg() };
    fd_physiome(cfg, |n| n.starts_with("physiome/modality_enc/"))
}

/// Default configuration: parameters downstream of every detach.
pub fn fd_physiome_stopped() -> FdReport {
    let select = |n: &str| ["physiome/rest_dec/", "physiome/mod_dec/", "physiome/contra/"].iter().any(|p| n.starts_with(p));
    fd_physiome(physiome_cfg(), select)
}

// Training behaviour.

const STEP: usize = 4;

/// Frame tokens of a small synthetic dataset, one `[rows, N, D]` tensor per modality.
pub fn synthetic_tokens(store: &ParamStore, model: &PhysioME, rows: usize) -> Vec<Tensor> {
    let cfg = SyntheticConfig {
        n_subjects: 4,
        n_classes: 4,
        modalities: model.n_modalities,
        latent_dim: 3,
        noise_std: 0.2,
        window_sec: ((N - 1) * STEP + FRAME) as f64 / 8.0,
        sample_rate_hz: 8.0,
        seed: 3,
        n_samples: rows,
        shared_mixing: false,
    };
    let ds = generate_synthetic_dataset(&cfg).unwrap();
    let all: Vec<usize> = (0..rows).collect();
    (0..model.n_modalities)
        .map(|m| {
            let frames = frame_batch(&ds.column_tensor(m, &all).unwrap(), FRAME, STEP).unwrap();
            model.frame_tokens(store, m, &frames).unwrap()
        })
        .collect()
}

/// Squared gradient norms of the missing-modality reconstruction loss over
/// the multimodal encoder and the modality encoders, with one modality dropped.
pub fn missing_grad_norms(cfg: PhysioMEConfig) -> (f64, f64) {
    let (store, _, model) = physiome(3, &cfg);
    let tokens = synthetic_tokens(&store, &model, 8);
    let plan = DropSamplePlan { n: N, branches: vec![Branch::Sampled(vec![0, 1, 3]), Branch::Dropped, Branch::Sampled(vec![2, 4])] };
    let g = Graph::new();
    let ctx = Ctx::deterministic(&g, &store);
    let losses = physiome_forward(&ctx, &model, &tokens, &plan).unwrap();
    let grads = ctx.param_grads(&g.backward(losses.missing));
    let norm = |prefix: &str| grads.iter().filter(|(k, _)| k.starts_with(prefix)).flat_map(|(_, t)| t.data()).map(|v| v * v).sum::<f64>();
    (norm("physiome/mm_enc"), norm("physiome/modality_enc/"))
}

/// Zero-initialized adapters reproduce the backbone bit for bit, and 100
/// training steps leave every frozen tensor untouched while moving the adapters.
pub fn lora_identity_and_freeze() -> Check {
    let (mut store, backbones, model) = physiome(2, &physiome_cfg());
    let tokens = synthetic_tokens(&store, &model, 32);
    {
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &store);
        for (m, t) in tokens.iter().enumerate() {
            let ft = ctx.constant(t.clone());
            let adapted = model.encode_modality(&ctx, ft, m).map_err(|e| e.to_string())?.value();
            let base = backbones[m].encode_full(&ctx, ft).map_err(|e| e.to_string())?.narrow(1, 1, N).value();
            if adapted.data() != base.data() {
                return Err(format!("modality {m}: adapted encoder differs from the backbone"));
            }
        }
    }
    let frozen = |s: &ParamStore| s.fingerprint(|name, _| PhysioME::is_frozen_backbone(name));
    let lora = |s: &ParamStore| s.fingerprint(|n, _| n.contains("/lora/"));
    let (frozen_before, lora_before) = (frozen(&store), lora(&store));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut opt = AdamW::new(AdamWConfig::default());
    for _ in 0..100 {
        let plan = DropSamplePlan::sample(2, N, 0.4, 0.3, &mut rng).map_err(|e| e.to_string())?;
        train_step(&mut store, &model, &mut opt, &tokens, &plan, rng.random()).map_err(|e| e.to_string())?;
    }
    if frozen(&store) != frozen_before {
        return Err("frozen backbone tensors changed".into());
    }
    if lora(&store) == lora_before {
        return Err("adapters did not train".into());
    }
    Ok(())
}

// Metrics, folds and sweep tables.

pub fn auc_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..120);
    // A coarse grid half the time so ties are common.
    let coarse = rng.random_bool(0.5);
    let scores: Vec<f64> =
        (0..n).map(|_| if coarse { rng.random_range(0..8) as f64 / 4.0 } else { rng.random_range(-5.0..5.0) }).collect();
    let mut positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    positive[0] = true;
    positive[1] = false;
    let got = binary_auc(&scores, &positive).map_err(|e| e.to_string())?;
    let want = oracles::pairwise_auc(&scores, &positive);
    if (got - want).abs() < 1e-12 {
        Ok(())
    } else {
        Err(format!("AUC {got} vs pairwise {want}"))
    }
}

pub fn accuracy_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..1000);
    let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let got = accuracy(&preds, &labels).map_err(|e| e.to_string())?;
    let want = oracles::accuracy(&preds, &labels);
    if got == want {
        Ok(())
    } else {
        Err(format!("accuracy {got} vs counted {want}"))
    }
}

pub fn fold_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(N_FOLDS..60);
    let repeats = rng.random_range(1..4);
    let plan_seed: u64 = rng.random();
    let subjects: Vec<String> = (0..n * repeats).map(|i| format!("sub{:03}", i % n)).collect();
    let plan = make_folds(&subjects, plan_seed).map_err(|e| e.to_string())?;
    if plan.folds.len() != N_FOLDS {
        return Err(format!("{} folds", plan.folds.len()));
    }
    let all: BTreeSet<&String> = subjects.iter().collect();
    let mut tested = BTreeSet::new();
    for (k, f) in plan.folds.iter().enumerate() {
        let pre: BTreeSet<_> = f.pretrain.iter().collect();
        let tr: BTreeSet<_> = f.train.iter().collect();
        let te: BTreeSet<_> = f.test.iter().collect();
        if !(pre.is_disjoint(&tr) && pre.is_disjoint(&te) && tr.is_disjoint(&te)) {
            return Err(format!("fold {k} shares subjects between roles"));
        }
        let union: BTreeSet<&String> = pre.union(&tr).chain(te.iter()).copied().collect();
        if union != all {
            return Err(format!("fold {k} loses subjects"));
        }
        for s in &f.test {
            if !tested.insert(s.clone()) {
                return Err(format!("{s} tested twice"));
            }
        }
    }
    if tested.len() != n {
        return Err(format!("{} of {n} subjects tested", tested.len()));
    }
    if make_folds(&subjects, plan_seed).map_err(|e| e.to_string())? != plan {
        return Err("fold plan is not deterministic".into());
    }
    Ok(())
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

/// Builds a sweep over random scores for `m` modalities and checks its rows,
/// deltas, MAV footer (recomputed from the emitted CSV) and markdown layout.
pub fn sweep_case(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..5);
    let folds = rng.random_range(1..4);
    let scenarios = ScenarioMask::all(m);
    let expected = (1 << m) - 1;
    if scenarios.len() != expected {
        return Err(format!("{} scenarios for {m} modalities", scenarios.len()));
    }
    let per_fold: Vec<Vec<ScenarioScore>> = (0..folds)
        .map(|_| scenarios.iter().map(|s| ScenarioScore { scenario: s.bits(), acc: rng.random(), auc: rng.random() }).collect())
        .collect();
    let names: Vec<String> = (0..m).map(|i| format!("m{i}")).collect();
    let report = SweepReport::from_folds(names, RestorationStrategy::RestorationDecoder, &per_fold).map_err(|e| e.to_string())?;
    if report.rows.len() != expected {
        return Err(format!("{} rows, expected {expected}", report.rows.len()));
    }
    if report.rows[0].delta_acc != Some(0.0) || report.rows[0].delta_auc != Some(0.0) {
        return Err("full-modality deltas are not zero".into());
    }

    let (header, rows) = parse_csv(&report.to_csv());
    let col = |name: &str| header.iter().position(|h| h == name).ok_or(format!("no {name} column"));
    let (acc, auc, da, du) = (col("acc")?, col("auc")?, col("delta_acc")?, col("delta_auc")?);
    let body: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] != "MAV").collect();
    if body.len() != expected {
        return Err(format!("{} CSV rows, expected {expected}", body.len()));
    }
    let full = "1".repeat(m);
    let rest: Vec<&&Vec<String>> = body.iter().filter(|r| r[0] != full).collect();
    let mav = rows.iter().find(|r| r[0] == "MAV");
    match (rest.is_empty(), mav) {
        (true, None) => {}
        (true, Some(_)) => return Err("MAV footer without missing-modality rows".into()),
        (false, None) => return Err("missing MAV footer".into()),
        (false, Some(mav)) => {
            let f = |s: &str| s.parse::<f64>().map_err(|e| format!("{s}: {e}"));
            for (c, abs) in [(acc, false), (auc, false), (da, true), (du, true)] {
                let mut sum = 0.0;
                for r in &rest {
                    let v = f(&r[c])?;
                    sum += if abs { v.abs() } else { v };
                }
                let want = sum / rest.len() as f64;
                let got = f(&mav[c])?;
                if (got - want).abs() >= 1e-9 {
                    return Err(format!("MAV {} = {got}, recomputed {want}", header[c]));
                }
            }
        }
    }
    let md = report.to_markdown();
    if md.contains("| MAV |") != (m > 1) {
        return Err("markdown MAV footer mismatch".into());
    }
    if m > 1 && !md.contains("(+0.00)") {
        return Err("markdown deltas are not parenthesized".into());
    }
    Ok(())
}
