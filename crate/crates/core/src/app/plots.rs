use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};

use super::pipeline::csv_err;

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Invalid(format!("plot: {e}"))
}

/// Named columns of a CSV file, parsed as numbers where possible.
struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(csv_err)?;
        Ok(Self { headers, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Invalid(format!("csv column {name:?} missing")))
    }

    fn num(&self, row: usize, col: usize) -> Result<f64> {
        self.rows[row][col].parse().map_err(|_| Error::Invalid(format!("non-numeric csv cell {:?}", self.rows[row][col])))
    }
}

/// One loss curve: label and `(epoch, value)` points.
pub type Curve = (String, Vec<(f64, f64)>);

fn draw_curves(area: &DrawingArea<SVGBackend<'_>, plotters::coord::Shift>, title: &str, curves: &[Curve]) -> Result<()> {
    let pts = || curves.iter().flat_map(|c| c.1.iter());
    let x_max = pts().map(|p| p.0).fold(1.0, f64::max);
    let (lo, hi) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = ((hi - lo) * 0.05).max(1e-6);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 16))
        .margin(12)
        .x_label_area_size(30)
        .y_label_area_size(55)
        .build_cartesian_2d(1.0..x_max.max(2.0), (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("epoch").y_desc("loss").draw().map_err(plot_err)?;
    for (i, (label, points)) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    Ok(())
}

/// Backbone and PhysioME loss curves side by side.
pub fn plot_losses(path: &Path, backbone: &[Curve], physiome: &[Curve]) -> Result<()> {
    let root = SVGBackend::new(path, (1000, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (left, right) = root.split_horizontally(500);
    draw_curves(&left, "Backbone pretraining", backbone)?;
    draw_curves(&right, "PhysioME training", physiome)?;
    root.present().map_err(plot_err)
}

/// Grouped ACC/AUC bars per scenario.
pub fn plot_sweep(path: &Path, rows: &[(String, f64, f64)]) -> Result<()> {
    let root = SVGBackend::new(path, (900, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = rows.len().max(1) as f64;
    let labels: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    let fmt = move |x: &f64| {
        let i = x.floor() as usize;
        if (x - x.floor() - 0.5).abs() < 1e-9 { labels.get(i).cloned().unwrap_or_default() } else { String::new() }
    };
    let mut chart = ChartBuilder::on(&root)
        .caption("Linear evaluation by observed modalities", ("sans-serif", 16))
        .margin(12)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(0.0..n, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(2 * rows.len() + 1)
        .x_label_formatter(&fmt)
        .x_desc("observed modalities")
        .draw()
        .map_err(plot_err)?;
    for (k, (name, color)) in [("ACC", BLUE), ("AUC", RED)].into_iter().enumerate() {
        let bars = rows.iter().enumerate().map(move |(i, r)| {
            let v = if k == 0 { r.1 } else { r.2 };
            let x0 = i as f64 + 0.1 + 0.4 * k as f64;
            Rectangle::new([(x0, 0.0), (x0 + 0.38, v)], color.mix(0.7).filled())
        });
        chart
            .draw_series(bars)
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.mix(0.7).filled()));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn fold_dirs(run: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut dirs: Vec<(String, PathBuf)> = fs::read_dir(run)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().filter(|n| n.starts_with("fold")).map(|n| (n.to_string(), e.path())))
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Renders `plots/losses.svg` and `plots/sweep.svg` from the logs and sweep
/// table in a run directory. Returns the files written.
pub fn write_report(run: &Path) -> Result<Vec<PathBuf>> {
    let mut backbone = Vec::new();
    let mut physiome = Vec::new();
    for (name, dir) in fold_dirs(run)? {
        let dp = dir.join("dp_log.csv");
        if dp.exists() {
            let t = Table::read(&dp)?;
            let (cm, ce, ct) = (t.col("modality")?, t.col("epoch")?, t.col("total")?);
            let mut by_mod: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
            for i in 0..t.rows.len() {
                let label = format!("{name} m{}", t.rows[i][cm]);
                let p = (t.num(i, ce)?, t.num(i, ct)?);
                match by_mod.iter_mut().find(|c| c.0 == label) {
                    Some(c) => c.1.push(p),
                    None => by_mod.push((label, vec![p])),
                }
            }
            backbone.extend(by_mod);
        }
        let pm = dir.join("physiome_log.csv");
        if pm.exists() {
            let t = Table::read(&pm)?;
            let (ce, ct) = (t.col("epoch")?, t.col("total")?);
            let pts = (0..t.rows.len()).map(|i| Ok((t.num(i, ce)?, t.num(i, ct)?))).collect::<Result<Vec<_>>>()?;
            physiome.push((name.clone(), pts));
        }
    }
    let out = run.join("plots");
    fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    if !backbone.is_empty() || !physiome.is_empty() {
        let p = out.join("losses.svg");
        plot_losses(&p, &backbone, &physiome)?;
        written.push(p);
    }
    let sweep = run.join("sweep.csv");
    if sweep.exists() {
        let t = Table::read(&sweep)?;
        let (cs, ca, cu) = (t.col("scenario")?, t.col("acc")?, t.col("auc")?);
        let rows = (0..t.rows.len())
            .filter(|&i| t.rows[i][cs] != "MAV")
            .map(|i| Ok((t.rows[i][cs].clone(), t.num(i, ca)?, t.num(i, cu)?)))
            .collect::<Result<Vec<_>>>()?;
        let p = out.join("sweep.svg");
        plot_sweep(&p, &rows)?;
        written.push(p);
    }
    if written.is_empty() {
        return Err(Error::Invalid(format!("no logs or sweep table found under {}", run.display())));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_svg_files() {
        let dir = tempfile::tempdir().unwrap();
        let f0 = dir.path().join("fold0");
        fs::create_dir_all(&f0).unwrap();
        fs::write(f0.join("dp_log.csv"), "modality,epoch,recon1,recon2,ntxent,total\n0,1,1,1,1,3\n0,2,1,1,1,2\n").unwrap();
        fs::write(f0.join("physiome_log.csv"), "epoch,l_intra,l_missing,l_cross,total,wall_seconds\n1,1,1,1,3,0.1\n2,1,1,0.5,2.5,0.1\n")
            .unwrap();
        fs::write(dir.path().join("sweep.csv"), "scenario,a,b,acc,auc,delta_acc,delta_auc\n11,1,1,0.9,0.95,0,0\n10,1,0,0.7,0.8,-0.2,-0.15\nMAV,,,0.7,0.8,0.2,0.15\n")
            .unwrap();
        let files = write_report(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        for f in files {
            let svg = fs::read_to_string(f).unwrap();
            assert!(svg.starts_with("<svg") && svg.contains("</svg>"));
        }
        assert!(fs::read_to_string(dir.path().join("plots/sweep.svg")).unwrap().contains("ACC"));
    }

    #[test]
    fn empty_run_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_report(dir.path()).is_err());
    }
}
