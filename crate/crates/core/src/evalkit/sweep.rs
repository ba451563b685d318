use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::physiome::{class_features, PhysioME, RestorationStrategy, ScenarioMask};

use super::probe::{LinearProbe, ProbeConfig};

/// Rows per inference chunk when extracting features.
pub const FEATURE_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioScore {
    pub scenario: String,
    pub acc: f64,
    pub auc: f64,
}

/// One fold's trained model plus the rows it is evaluated on.
pub struct FoldModel<'a> {
    pub store: &'a ParamStore,
    pub model: &'a PhysioME,
    /// Cached frame tokens per modality, `[rows, N, D_enc]`, indexed by dataset row.
    pub frame_tokens: &'a [Tensor],
    pub labels: &'a [usize],
    pub train_rows: &'a [usize],
    pub test_rows: &'a [usize],
}

/// Fits a probe on full-modality class-token features of the train rows and
/// scores it on the test rows under every scenario.
pub fn linear_eval(
    fold: &FoldModel<'_>,
    scenarios: &[ScenarioMask],
    strategy: RestorationStrategy,
    probe_cfg: &ProbeConfig,
    n_classes: usize,
    seed: u64,
) -> Result<(LinearProbe, Vec<ScenarioScore>)> {
    let pick = |rows: &[usize]| rows.iter().map(|&r| fold.labels[r]).collect::<Vec<_>>();
    let full = ScenarioMask::full(fold.model.n_modalities);
    let train_x = class_features(fold.store, fold.model, fold.frame_tokens, fold.train_rows, &full, strategy, FEATURE_CHUNK)?;
    let probe = LinearProbe::fit(&train_x, &pick(fold.train_rows), n_classes, probe_cfg, seed)?;
    let test_y = pick(fold.test_rows);
    // Scenarios are independent; order of the collected results is preserved.
    let scores = scenarios
        .par_iter()
        .map(|sc| {
            let x = class_features(fold.store, fold.model, fold.frame_tokens, fold.test_rows, sc, strategy, FEATURE_CHUNK)?;
            let (acc, auc) = probe.evaluate(&x, &test_y)?;
            Ok(ScenarioScore { scenario: sc.bits(), acc, auc })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((probe, scores))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub scenario: String,
    pub acc: f64,
    pub auc: f64,
    /// Change against the full-modality row; absent when that row was not evaluated.
    pub delta_acc: Option<f64>,
    pub delta_auc: Option<f64>,
}

/// Means over the non-full rows; deltas enter as absolute values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Mav {
    pub acc: f64,
    pub auc: f64,
    pub delta_acc: f64,
    pub delta_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub modalities: Vec<String>,
    pub strategy: RestorationStrategy,
    pub n_folds: usize,
    pub rows: Vec<SweepRow>,
    pub mav: Option<Mav>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl SweepReport {
    /// Averages per-fold scores (every fold must cover the same scenarios in the same order).
    pub fn from_folds(modalities: Vec<String>, strategy: RestorationStrategy, per_fold: &[Vec<ScenarioScore>]) -> Result<Self> {
        let first = per_fold.first().ok_or_else(|| Error::Invalid("sweep needs at least one fold".into()))?;
        let names: Vec<&str> = first.iter().map(|s| s.scenario.as_str()).collect();
        if per_fold.iter().any(|f| f.iter().map(|s| s.scenario.as_str()).ne(names.iter().copied())) {
            return Err(Error::Invalid("folds disagree on the scenario list".into()));
        }
        let k = per_fold.len() as f64;
        let full = "1".repeat(modalities.len());
        let mut rows: Vec<SweepRow> = names
            .iter()
            .enumerate()
            .map(|(i, name)| SweepRow {
                scenario: name.to_string(),
                acc: per_fold.iter().map(|f| f[i].acc).sum::<f64>() / k,
                auc: per_fold.iter().map(|f| f[i].auc).sum::<f64>() / k,
                delta_acc: None,
                delta_auc: None,
            })
            .collect();
        let base = rows.iter().find(|r| r.scenario == full).cloned();
        if let Some(base) = &base {
            for r in &mut rows {
                r.delta_acc = Some(r.acc - base.acc);
                r.delta_auc = Some(r.auc - base.auc);
            }
        }
        // The MAV summarizes missing-modality rows against the full row, so it
        // needs both.
        let rest: Vec<&SweepRow> = rows.iter().filter(|r| r.scenario != full).collect();
        let mav = (base.is_some() && !rest.is_empty()).then(|| Mav {
            acc: mean(rest.iter().map(|r| r.acc)).expect("non-empty"),
            auc: mean(rest.iter().map(|r| r.auc)).expect("non-empty"),
            delta_acc: mean(rest.iter().map(|r| r.delta_acc.expect("full row present").abs())).expect("non-empty"),
            delta_auc: mean(rest.iter().map(|r| r.delta_auc.expect("full row present").abs())).expect("non-empty"),
        });
        Ok(Self { modalities, strategy, n_folds: per_fold.len(), rows, mav })
    }

    /// Machine-readable table with full-precision values; the last row holds the MAV.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::from("scenario");
        for m in &self.modalities {
            write!(out, ",{m}").unwrap();
        }
        out.push_str(",acc,auc,delta_acc,delta_auc\n");
        for r in &self.rows {
            write!(out, "{}", r.scenario).unwrap();
            for c in r.scenario.chars() {
                write!(out, ",{c}").unwrap();
            }
            writeln!(out, ",{},{},{},{}", r.acc, r.auc, opt(r.delta_acc), opt(r.delta_auc)).unwrap();
        }
        if let Some(m) = &self.mav {
            write!(out, "MAV").unwrap();
            for _ in &self.modalities {
                out.push(',');
            }
            writeln!(out, ",{},{},{},{}", m.acc, m.auc, m.delta_acc, m.delta_auc).unwrap();
        }
        out
    }

    /// Human-readable table: observed modalities as bullets, metrics in percent
    /// with the change from the full-modality row in parentheses.
    pub fn to_markdown(&self) -> String {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let signed = |v: Option<f64>| v.map_or(String::new(), |d| format!(" ({:+.2})", 100.0 * d));
        let mut out = format!(
            "Strategy: {}; folds: {}; AUC is the macro one-vs-rest average.\n\n|",
            self.strategy, self.n_folds
        );
        for m in &self.modalities {
            write!(out, " {m} |").unwrap();
        }
        out.push_str(" ACC | AUC |\n|");
        for _ in 0..self.modalities.len() + 2 {
            out.push_str(":---:|");
        }
        out.push('\n');
        for r in &self.rows {
            out.push('|');
            for c in r.scenario.chars() {
                out.push_str(if c == '1' { " • |" } else { "   |" });
            }
            writeln!(out, " {}{} | {}{} |", pct(r.acc), signed(r.delta_acc), pct(r.auc), signed(r.delta_auc)).unwrap();
        }
        if let Some(m) = &self.mav {
            out.push_str("| MAV |");
            for _ in 1..self.modalities.len() {
                out.push_str("   |");
            }
            writeln!(out, " {} ({:.2}) | {} ({:.2}) |", pct(m.acc), 100.0 * m.delta_acc, pct(m.auc), 100.0 * m.delta_auc).unwrap();
        }
        out
    }
}

/// Linear evaluation of every fold under every scenario, averaged over folds.
pub fn run_sweep(
    modalities: Vec<String>,
    folds: &[FoldModel<'_>],
    scenarios: &[ScenarioMask],
    strategy: RestorationStrategy,
    probe_cfg: &ProbeConfig,
    n_classes: usize,
    seed: u64,
) -> Result<SweepReport> {
    let per_fold = folds
        .iter()
        .enumerate()
        .map(|(k, f)| linear_eval(f, scenarios, strategy, probe_cfg, n_classes, seed.wrapping_add(k as u64)).map(|r| r.1))
        .collect::<Result<Vec<_>>>()?;
    SweepReport::from_folds(modalities, strategy, &per_fold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(s: &str, acc: f64, auc: f64) -> ScenarioScore {
        ScenarioScore { scenario: s.into(), acc, auc }
    }

    fn names() -> Vec<String> {
        ["eeg", "eog", "emg"].map(String::from).to_vec()
    }

    fn report() -> SweepReport {
        let f1 = vec![score("111", 0.9, 0.95), score("110", 0.8, 0.9), score("001", 0.5, 0.7)];
        let f2 = vec![score("111", 0.8, 0.97), score("110", 0.8, 0.8), score("001", 0.7, 0.7)];
        SweepReport::from_folds(names(), RestorationStrategy::RestorationDecoder, &[f1, f2]).unwrap()
    }

    #[test]
    fn averages_folds_and_computes_deltas() {
        let r = report();
        assert!((r.rows[0].acc - 0.85).abs() < 1e-12);
        assert_eq!(r.rows[0].delta_acc, Some(0.0));
        assert!((r.rows[2].delta_acc.unwrap() + 0.25).abs() < 1e-12);
        let m = r.mav.unwrap();
        assert!((m.acc - 0.7).abs() < 1e-12);
        assert!((m.delta_acc - 0.15).abs() < 1e-12);
    }

    #[test]
    fn csv_has_mav_footer() {
        let csv = report().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "scenario,eeg,eog,emg,acc,auc,delta_acc,delta_auc");
        assert!(lines[1].starts_with("111,1,1,1,"));
        assert!(lines[4].starts_with("MAV,,,,"));
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn markdown_parenthesizes_deltas() {
        let md = report().to_markdown();
        assert!(md.contains("| • | • |   | 80.00 (-5.00) |"), "{md}");
        assert!(md.contains("| MAV |"));
        assert!(md.contains("70.00 (15.00)"));
    }

    #[test]
    fn restricted_sweep_has_no_deltas() {
        let r = SweepReport::from_folds(names(), RestorationStrategy::MaskedToken, &[vec![score("101", 0.6, 0.8)]]).unwrap();
        assert_eq!(r.rows[0].delta_acc, None);
        assert!(r.mav.is_none());
    }

    #[test]
    fn folds_must_agree() {
        let res = SweepReport::from_folds(names(), RestorationStrategy::MaskedToken, &[vec![score("111", 1.0, 1.0)], vec![]]);
        assert!(res.is_err());
    }
}
