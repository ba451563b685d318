use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// One fixed-length single-modality epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalWindow {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub modality_id: usize,
    pub subject_id: String,
    pub label: Option<usize>,
}

impl SignalWindow {
    pub fn new(
        samples: Vec<f64>,
        sample_rate_hz: f64,
        modality_id: usize,
        subject_id: impl Into<String>,
        label: Option<usize>,
    ) -> Result<Self> {
        let w = Self { samples, sample_rate_hz, modality_id, subject_id: subject_id.into(), label };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Invalid("empty signal window".into()));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Invalid(format!("sample rate must be positive, got {}", self.sample_rate_hz)));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// Frame length and hop, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub frame_size_sec: f64,
    pub overlap_step_sec: f64,
}

impl FrameSpec {
    pub fn new(frame_size_sec: f64, overlap_step_sec: f64) -> Result<Self> {
        let s = Self { frame_size_sec, overlap_step_sec };
        if !(overlap_step_sec > 0.0 && frame_size_sec >= overlap_step_sec && frame_size_sec.is_finite()) {
            return Err(Error::Config(format!(
                "frame spec needs frame_size >= step > 0, got {frame_size_sec} / {overlap_step_sec}"
            )));
        }
        Ok(s)
    }

    /// Frame length and step in samples; both must be whole numbers at `rate`.
    pub fn in_samples(&self, rate: f64) -> Result<(usize, usize)> {
        FrameSpec::new(self.frame_size_sec, self.overlap_step_sec)?;
        let whole = |sec: f64, what: &str| -> Result<usize> {
            let n = sec * rate;
            let r = n.round();
            if (n - r).abs() > 1e-9 * n.abs().max(1.0) || r < 1.0 {
                return Err(Error::Config(format!("{what} of {sec} s is not a whole number of samples at {rate} Hz")));
            }
            Ok(r as usize)
        };
        Ok((whole(self.frame_size_sec, "frame size")?, whole(self.overlap_step_sec, "frame step")?))
    }
}

/// Number of frames of length `frame` with hop `step` that fit in `len` samples.
pub fn frame_count(len: usize, frame: usize, step: usize) -> Result<usize> {
    if frame > len {
        return Err(Error::WindowShorterThanFrame { frame, len });
    }
    Ok((len - frame) / step + 1)
}

/// Aligned windows for `B` samples across `M` modalities. `None` marks an
/// unavailable modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBatch {
    n_modalities: usize,
    windows: Vec<Vec<Option<SignalWindow>>>,
    labels: Vec<Option<usize>>,
}

impl ModalityBatch {
    pub fn new(n_modalities: usize, windows: Vec<Vec<Option<SignalWindow>>>, labels: Vec<Option<usize>>) -> Result<Self> {
        let b = Self { n_modalities, windows, labels };
        b.validate()?;
        Ok(b)
    }

    pub fn empty(n_modalities: usize) -> Self {
        Self { n_modalities, windows: Vec::new(), labels: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modalities == 0 {
            return Err(Error::Invalid("a batch needs at least one modality".into()));
        }
        if self.labels.len() != self.windows.len() {
            return Err(Error::Invalid(format!("{} label slots for {} rows", self.labels.len(), self.windows.len())));
        }
        let mut column: Vec<Option<(usize, f64)>> = vec![None; self.n_modalities];
        for (i, row) in self.windows.iter().enumerate() {
            if row.len() != self.n_modalities {
                return Err(Error::Invalid(format!("row {i} has {} modalities, expected {}", row.len(), self.n_modalities)));
            }
            let mut subject: Option<&str> = None;
            let mut any = false;
            for (m, w) in row.iter().enumerate() {
                let Some(w) = w else { continue };
                any = true;
                w.validate()?;
                if w.modality_id != m {
                    return Err(Error::Invalid(format!("row {i}: window in column {m} has modality id {}", w.modality_id)));
                }
                if w.label != self.labels[i] {
                    return Err(Error::Invalid(format!("row {i}: window label disagrees with row label")));
                }
                match subject {
                    Some(s) if s != w.subject_id => {
                        return Err(Error::Invalid(format!("row {i}: windows from different subjects")));
                    }
                    _ => subject = Some(&w.subject_id),
                }
                match column[m] {
                    None => column[m] = Some((w.len(), w.sample_rate_hz)),
                    Some((len, rate)) if len != w.len() || rate != w.sample_rate_hz => {
                        return Err(Error::Invalid(format!("row {i}: column {m} length or rate differs from earlier rows")));
                    }
                    _ => {}
                }
            }
            if !any {
                return Err(Error::Invalid(format!("row {i} has no available modality")));
            }
        }
        Ok(())
    }

    pub fn n_modalities(&self) -> usize {
        self.n_modalities
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn windows(&self) -> &[Vec<Option<SignalWindow>>] {
        &self.windows
    }

    pub fn window(&self, row: usize, m: usize) -> Option<&SignalWindow> {
        self.windows[row][m].as_ref()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn availability(&self) -> Vec<Vec<bool>> {
        self.windows.iter().map(|r| r.iter().map(Option::is_some).collect()).collect()
    }

    pub fn is_available(&self, row: usize, m: usize) -> bool {
        self.windows[row][m].is_some()
    }

    /// Rows where every modality is present.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.windows[i].iter().all(Option::is_some)).collect()
    }

    pub fn subject(&self, row: usize) -> &str {
        self.windows[row].iter().flatten().next().map(|w| w.subject_id.as_str()).expect("validated row")
    }

    /// Row indices grouped by subject id.
    pub fn rows_by_subject(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            out.entry(self.subject(i).to_string()).or_default().push(i);
        }
        out
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        self.rows_by_subject().into_keys().collect()
    }

    /// `(length, sample rate)` shared by column `m`, if any row has it.
    pub fn column_shape(&self, m: usize) -> Option<(usize, f64)> {
        self.windows.iter().find_map(|r| r[m].as_ref().map(|w| (w.len(), w.sample_rate_hz)))
    }

    /// Stacks column `m` of the given rows into `[rows, L]`; every row must have it.
    pub fn column_tensor(&self, m: usize, rows: &[usize]) -> Result<Tensor> {
        let (len, _) = self.column_shape(m).ok_or(Error::UnknownModality(m))?;
        let mut data = Vec::with_capacity(rows.len() * len);
        for &r in rows {
            let w = self.windows[r][m].as_ref().ok_or_else(|| Error::Invalid(format!("row {r} lacks modality {m}")))?;
            data.extend_from_slice(&w.samples);
        }
        Ok(Tensor::new([rows.len(), len], data))
    }

    /// Labels of the given rows; every row must be labelled.
    pub fn label_vec(&self, rows: &[usize]) -> Result<Vec<usize>> {
        rows.iter()
            .map(|&r| self.labels[r].ok_or_else(|| Error::Invalid(format!("row {r} is unlabelled"))))
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> ModalityBatch {
        ModalityBatch {
            n_modalities: self.n_modalities,
            windows: rows.iter().map(|&r| self.windows[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Applies `f` to every available window.
    pub fn map_windows(&self, mut f: impl FnMut(&SignalWindow) -> Result<SignalWindow>) -> Result<ModalityBatch> {
        let windows = self
            .windows
            .iter()
            .map(|row| row.iter().map(|w| w.as_ref().map(&mut f).transpose()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        ModalityBatch::new(self.n_modalities, windows, self.labels.clone())
    }
}
