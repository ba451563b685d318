use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::autograd::Tensor;
use crate::dp_neuronet::{build_backbones, pretrain_dp_neuronet, DpEpoch};
use crate::error::{Error, Result};
use crate::evalkit::{linear_eval, make_folds, FoldModel, ScenarioScore, SweepReport};
use crate::nn::ParamStore;
use crate::physiome::{train_physiome, PhysioME, PhysioMEEpoch, Placeholder, RestorationStrategy, ScenarioMask};
use crate::signal::{bandpass_filter, frame_batch, frame_count, generate_synthetic_dataset, write_dataset, ModalityBatch};

use super::checkpoint::{CheckpointBundle, Stage};
use super::config::RunConfig;
use super::plots::write_report;

/// Rows per chunk when running frame networks over a dataset column.
const TOKEN_CHUNK: usize = 256;

/// A dataset checked against a config, filtered and ready for framing.
pub struct Prepared {
    pub ds: ModalityBatch,
    pub frame: (usize, usize),
    pub n_tokens: usize,
    pub n_classes: usize,
    pub subjects: Vec<String>,
}

pub fn prepare(ds: ModalityBatch, cfg: &RunConfig) -> Result<Prepared> {
    let m_count = cfg.n_modalities();
    if ds.n_modalities() != m_count {
        return Err(Error::Config(format!("dataset has {} modalities, config expects {m_count}", ds.n_modalities())));
    }
    let ds = match cfg.data.bandpass_hz {
        Some([lo, hi]) => ds.map_windows(|w| bandpass_filter(w, lo, hi))?,
        None => ds,
    };
    let (f, s) = cfg.frame_samples()?;
    let rate = cfg.data.synthetic.sample_rate_hz;
    let mut n_tokens = None;
    for m in 0..m_count {
        let (len, r) = ds.column_shape(m).ok_or_else(|| Error::Invalid(format!("modality {m} has no windows")))?;
        if (r - rate).abs() > 1e-9 {
            return Err(Error::Config(format!("modality {m} is sampled at {r} Hz, config says {rate} Hz")));
        }
        let n = frame_count(len, f, s)?;
        if n_tokens.is_some_and(|k| k != n) {
            return Err(Error::Config("all modalities must yield the same number of frames".into()));
        }
        n_tokens = Some(n);
    }
    let n_classes = cfg.data.synthetic.n_classes;
    if let Some(bad) = ds.labels().iter().flatten().find(|&&l| l >= n_classes) {
        return Err(Error::Config(format!("label {bad} exceeds the {n_classes} configured classes")));
    }
    let subjects = (0..ds.len()).map(|r| ds.subject(r).to_string()).collect();
    Ok(Prepared { ds, frame: (f, s), n_tokens: n_tokens.expect("at least one modality"), n_classes, subjects })
}

/// Dataset rows in each role of one fold. Train and test keep only
/// complete, labelled rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldRows {
    pub pretrain: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn fold_rows(prep: &Prepared, seed: u64, fold: usize) -> Result<FoldRows> {
    let plan = make_folds(&prep.subjects, seed)?;
    let f = plan.folds.get(fold).ok_or_else(|| Error::Config(format!("fold {fold} out of range")))?;
    let complete: Vec<bool> = {
        let mut c = vec![false; prep.ds.len()];
        for r in prep.ds.complete_rows() {
            c[r] = prep.ds.labels()[r].is_some();
        }
        c
    };
    let pick = |role: &[String], only_complete: bool| {
        crate::evalkit::Fold::rows(role, &prep.subjects).into_iter().filter(|&r| !only_complete || complete[r]).collect::<Vec<_>>()
    };
    Ok(FoldRows { pretrain: pick(&f.pretrain, false), train: pick(&f.train, true), test: pick(&f.test, true) })
}

fn stage_seed(seed: u64, fold: usize, stage: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold as u64 * 16 + stage)
}

fn ensure_compatible(cfg: &RunConfig, ck: &CheckpointBundle, with_physiome: bool) -> Result<()> {
    let c = &ck.config;
    let same = c.seed == cfg.seed
        && c.data == cfg.data
        && c.backbone == cfg.backbone
        && (!with_physiome || c.physiome == cfg.physiome);
    if !same {
        return Err(Error::Config(format!("config does not match the {} checkpoint it builds on", ck.stage)));
    }
    Ok(())
}

/// Self-supervised backbone pretraining on the fold's pretrain subjects.
pub fn backbone_stage(prep: &Prepared, cfg: &RunConfig, fold: usize) -> Result<(CheckpointBundle, Vec<DpEpoch>)> {
    let rows = fold_rows(prep, cfg.seed, fold)?.pretrain;
    let (params, log) = pretrain_dp_neuronet(&prep.ds, &rows, &cfg.backbone, &cfg.dp, prep.frame, stage_seed(cfg.seed, fold, 1))?;
    Ok((CheckpointBundle { stage: Stage::DpNeuronet, config: cfg.clone(), fold, params }, log))
}

/// Rebuilds backbones and the PhysioME model over checkpoint parameters.
pub fn build_physiome(cfg: &RunConfig, n_tokens: usize, fold: usize, params: ParamStore) -> Result<(ParamStore, PhysioME)> {
    let mut store = params;
    let backbones = build_backbones(&mut store, &cfg.backbone, cfg.n_modalities(), n_tokens, stage_seed(cfg.seed, fold, 1));
    let model = PhysioME::new(&mut store, &backbones, &cfg.physiome, stage_seed(cfg.seed, fold, 2))?;
    Ok((store, model))
}

/// Frozen frame-network tokens of `rows`, one `[rows, N, D_enc]` tensor per modality.
pub fn frame_tokens(prep: &Prepared, store: &ParamStore, model: &PhysioME, rows: &[usize]) -> Result<Vec<Tensor>> {
    (0..model.n_modalities)
        .map(|m| {
            let mut data = Vec::new();
            for chunk in rows.chunks(TOKEN_CHUNK) {
                let frames = frame_batch(&prep.ds.column_tensor(m, chunk)?, prep.frame.0, prep.frame.1)?;
                data.extend(model.frame_tokens(store, m, &frames)?.into_data());
            }
            Ok(Tensor::new([rows.len(), model.n_tokens, model.enc_dim], data))
        })
        .collect()
}

pub fn physiome_stage(prep: &Prepared, cfg: &RunConfig, backbone: &CheckpointBundle) -> Result<(CheckpointBundle, Vec<PhysioMEEpoch>)> {
    backbone.expect_stage(Stage::DpNeuronet)?;
    ensure_compatible(cfg, backbone, false)?;
    let fold = backbone.fold;
    let rows: Vec<usize> = {
        let complete = prep.ds.complete_rows();
        fold_rows(prep, cfg.seed, fold)?.pretrain.into_iter().filter(|r| complete.binary_search(r).is_ok()).collect()
    };
    let (mut store, model) = build_physiome(cfg, prep.n_tokens, fold, backbone.params.clone())?;
    let ft = frame_tokens(prep, &store, &model, &rows)?;
    let log = train_physiome(&mut store, &model, &ft, &cfg.physiome_train, stage_seed(cfg.seed, fold, 3))?;
    let params = model.checkpoint_params(&store);
    Ok((CheckpointBundle { stage: Stage::Physiome, config: cfg.clone(), fold, params }, log))
}

/// A trained fold model with frame tokens cached for its train and test rows.
pub struct FoldEval {
    pub fold: usize,
    pub store: ParamStore,
    pub model: PhysioME,
    pub tokens: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldEval {
    pub fn new(prep: &Prepared, cfg: &RunConfig, physiome: &CheckpointBundle) -> Result<Self> {
        physiome.expect_stage(Stage::Physiome)?;
        ensure_compatible(cfg, physiome, true)?;
        let rows = fold_rows(prep, cfg.seed, physiome.fold)?;
        if rows.train.is_empty() || rows.test.is_empty() {
            return Err(Error::Invalid(format!("fold {} has no complete labelled train or test rows", physiome.fold)));
        }
        let (store, model) = build_physiome(cfg, prep.n_tokens, physiome.fold, physiome.params.clone())?;
        let all: Vec<usize> = rows.train.iter().chain(&rows.test).copied().collect();
        let tokens = frame_tokens(prep, &store, &model, &all)?;
        let labels = prep.ds.label_vec(&all)?;
        let nt = rows.train.len();
        Ok(Self { fold: physiome.fold, store, model, tokens, labels, train: (0..nt).collect(), test: (nt..all.len()).collect() })
    }

    pub fn as_fold_model(&self) -> FoldModel<'_> {
        FoldModel {
            store: &self.store,
            model: &self.model,
            frame_tokens: &self.tokens,
            labels: &self.labels,
            train_rows: &self.train,
            test_rows: &self.test,
        }
    }

    /// Probe fit plus per-scenario scores; the bundle holds the PhysioME and probe parameters.
    pub fn linear_eval(
        &self,
        cfg: &RunConfig,
        n_classes: usize,
        scenarios: &[ScenarioMask],
        strategy: RestorationStrategy,
    ) -> Result<(CheckpointBundle, Vec<ScenarioScore>)> {
        let seed = stage_seed(cfg.seed, self.fold, 4);
        let (probe, scores) = linear_eval(&self.as_fold_model(), scenarios, strategy, &cfg.probe, n_classes, seed)?;
        let mut params = self.model.checkpoint_params(&self.store);
        params.extend_from(&probe.params, true);
        Ok((CheckpointBundle { stage: Stage::LinearHead, config: cfg.clone(), fold: self.fold, params }, scores))
    }
}

/// Scenario list for a sweep: every non-empty subset, or just the requested one.
pub fn scenarios(m: usize, only: Option<&str>) -> Result<Vec<ScenarioMask>> {
    match only {
        Some(bits) => Ok(vec![ScenarioMask::parse(bits, m)?]),
        None => Ok(ScenarioMask::all(m)),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Invalid(format!("csv: {other:?}")),
    }
}

pub fn write_sweep(dir: &Path, stem: &str, report: &SweepReport) -> Result<()> {
    fs::write(dir.join(format!("{stem}.csv")), report.to_csv())?;
    fs::write(dir.join(format!("{stem}.md")), report.to_markdown())?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    /// Sweep under the configured strategy.
    pub sweep: SweepReport,
    /// One sweep per restoration strategy. The memory-token sweep uses its own
    /// PhysioME variant; the other two share one.
    pub by_strategy: Vec<SweepReport>,
    /// SHA-256 of every checkpoint written, keyed by path relative to the run directory.
    pub checkpoints: Vec<(String, String)>,
    pub wall_seconds: f64,
}

impl PipelineSummary {
    pub fn strategy(&self, s: RestorationStrategy) -> &SweepReport {
        self.by_strategy.iter().find(|r| r.strategy == s).expect("every strategy is swept")
    }
}

/// Generates the dataset, then for each configured fold pretrains the
/// backbones, trains a mask-placeholder and a memory-placeholder PhysioME and
/// runs linear evaluation under every scenario and restoration strategy. Writes checkpoints, logs, sweep tables
/// and plots under `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let ds = generate_synthetic_dataset(&cfg.data.synthetic)?;
    write_dataset(out.join("data.phys"), &ds)?;
    let prep = prepare(ds, cfg)?;
    let all = ScenarioMask::all(cfg.n_modalities());
    let mut per_strategy: Vec<Vec<Vec<ScenarioScore>>> = vec![Vec::new(); RestorationStrategy::ALL.len()];
    let mut checkpoints = Vec::new();
    let mut save = |dir: &Path, name: &str, b: &CheckpointBundle| -> Result<()> {
        b.save(dir.join(name))?;
        checkpoints.push((format!("fold{}/{name}", b.fold), b.digest()));
        Ok(())
    };
    for fold in 0..cfg.eval.folds {
        let dir = out.join(format!("fold{fold}"));
        fs::create_dir_all(&dir)?;
        let (backbone, dp_log) = backbone_stage(&prep, cfg, fold)?;
        save(&dir, "backbone.ckpt", &backbone)?;
        write_csv(&dir.join("dp_log.csv"), &dp_log)?;
        let mut evals = Vec::new();
        for placeholder in [Placeholder::MaskToken, Placeholder::MemoryToken] {
            let variant = cfg.with_placeholder(placeholder);
            let (physiome, pm_log) = physiome_stage(&prep, &variant, &backbone)?;
            let stem = match placeholder {
                Placeholder::MaskToken => "physiome".to_string(),
                p => format!("physiome_{}", p.as_str()),
            };
            save(&dir, &format!("{stem}.ckpt"), &physiome)?;
            write_csv(&dir.join(format!("{stem}_log.csv")), &pm_log)?;
            evals.push((placeholder, variant.clone(), FoldEval::new(&prep, &variant, &physiome)?));
        }
        for (k, s) in RestorationStrategy::ALL.into_iter().enumerate() {
            let (_, variant, eval) = evals.iter().find(|e| e.0 == s.placeholder()).expect("every placeholder trained");
            let (head, scores) = eval.linear_eval(variant, prep.n_classes, &all, s)?;
            if s == cfg.eval.strategy {
                save(&dir, "linear_head.ckpt", &head)?;
                write_csv(&dir.join("linear_eval.csv"), &scores)?;
            }
            per_strategy[k].push(scores);
        }
    }
    let names = cfg.data.modality_names.clone();
    let by_strategy = RestorationStrategy::ALL
        .into_iter()
        .zip(&per_strategy)
        .map(|(s, folds)| SweepReport::from_folds(names.clone(), s, folds))
        .collect::<Result<Vec<_>>>()?;
    for r in &by_strategy {
        write_sweep(out, &format!("sweep_{}", r.strategy), r)?;
    }
    let sweep = by_strategy.iter().find(|r| r.strategy == cfg.eval.strategy).expect("configured strategy swept").clone();
    write_sweep(out, "sweep", &sweep)?;
    write_report(out)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    fs::write(out.join("timing.json"), serde_json::json!({ "wall_seconds": wall_seconds }).to_string())?;
    Ok(PipelineSummary { out_dir: out.to_path_buf(), sweep, by_strategy, checkpoints, wall_seconds })
}
