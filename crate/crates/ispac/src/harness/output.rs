//! CSV and SVG emission for experiment records.

use std::io::Write;
use std::path::Path;

use super::config::{ExperimentConfig, ExperimentKind};
use super::experiments::{HarnessError, TrialRecord};

pub const CSV_HEADER: &str = "seed,sweep,variant,theta_true_deg,r_true_m,theta_hat_deg,r_hat_m,\
                              rcrb_theta_deg,rcrb_r_m,objective,iterations,wall_time_s";

/// Lossless CSV serialization: floats use the shortest round-trip form.
pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.sweep,
            r.variant,
            r.theta_true_deg,
            r.r_true_m,
            r.theta_hat_deg,
            r.r_hat_m,
            r.rcrb_theta_deg,
            r.rcrb_r_m,
            r.objective,
            r.iterations,
            r.wall_time_s,
        ));
    }
    out
}

/// Parses the CSV produced by [`records_to_csv`].
pub fn records_from_csv(text: &str) -> Result<Vec<TrialRecord>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty CSV")?;
    if header != CSV_HEADER {
        return Err(format!("unexpected header: {header}"));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 12 {
            return Err(format!("line {}: expected 12 fields, got {}", i + 2, parts.len()));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
        records.push(TrialRecord {
            seed: parts[0].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
            sweep: f(parts[1])?,
            variant: parts[2].to_string(),
            theta_true_deg: f(parts[3])?,
            r_true_m: f(parts[4])?,
            theta_hat_deg: f(parts[5])?,
            r_hat_m: f(parts[6])?,
            rcrb_theta_deg: f(parts[7])?,
            rcrb_r_m: f(parts[8])?,
            objective: f(parts[9])?,
            iterations: parts[10].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
            wall_time_s: f(parts[11])?,
        });
    }
    Ok(records)
}

/// Per-sweep-point aggregate of one named series.
struct Series {
    label: String,
    points: Vec<(f64, f64, f64)>, // x, mean, std
}

fn aggregate<F>(records: &[TrialRecord], filter_variant: &str, value: F) -> Vec<(f64, f64, f64)>
where
    F: Fn(&TrialRecord) -> f64,
{
    let mut sweeps: Vec<f64> = records
        .iter()
        .filter(|r| r.variant == filter_variant)
        .map(|r| r.sweep)
        .collect();
    sweeps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sweeps.dedup();
    sweeps
        .into_iter()
        .filter_map(|s| {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.variant == filter_variant && r.sweep == s)
                .map(&value)
                .filter(|v| v.is_finite())
                .collect();
            if vals.is_empty() {
                return None;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            Some((s, mean, var.sqrt()))
        })
        .collect()
}

fn estimator_series(records: &[TrialRecord]) -> Vec<Series> {
    // RMSE per sweep point against the matching root-CRB.
    let rmse = |sel: fn(&TrialRecord) -> f64| {
        move |records: &[TrialRecord], sweep: f64| -> Option<f64> {
            let sq: Vec<f64> = records
                .iter()
                .filter(|r| r.sweep == sweep && r.theta_hat_deg.is_finite())
                .map(sel)
                .collect();
            if sq.is_empty() {
                None
            } else {
                Some((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
            }
        }
    };
    let mut sweeps: Vec<f64> = records.iter().map(|r| r.sweep).collect();
    sweeps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sweeps.dedup();
    let theta_sq =
        rmse(|r| (r.theta_hat_deg - r.theta_true_deg).powi(2) as f64);
    let range_sq = rmse(|r| (r.r_hat_m - r.r_true_m).powi(2));
    let mut series = vec![
        Series { label: "rmse_theta_deg".into(), points: Vec::new() },
        Series { label: "rmse_r_m".into(), points: Vec::new() },
    ];
    for &s in &sweeps {
        if let Some(v) = theta_sq(records, s) {
            series[0].points.push((s, v, 0.0));
        }
        if let Some(v) = range_sq(records, s) {
            series[1].points.push((s, v, 0.0));
        }
    }
    series.push(Series {
        label: "rcrb_theta_deg".into(),
        points: aggregate(records, "near", |r| r.rcrb_theta_deg),
    });
    series
        .push(Series { label: "rcrb_r_m".into(), points: aggregate(records, "near", |r| r.rcrb_r_m) });
    series
}

fn crb_series(records: &[TrialRecord]) -> Vec<Series> {
    let mut variants: Vec<String> = records.iter().map(|r| r.variant.clone()).collect();
    variants.sort();
    variants.dedup();
    let mut series = Vec::new();
    for v in variants {
        series.push(Series {
            label: format!("{v}_rcrb_theta_deg"),
            points: aggregate(records, &v, |r| r.rcrb_theta_deg),
        });
        series.push(Series {
            label: format!("{v}_rcrb_r_m"),
            points: aggregate(records, &v, |r| r.rcrb_r_m),
        });
    }
    series
}

/// Minimal line plot: mean with a +/- one-standard-deviation band, log y.
fn render_svg(series: &[Series], x_label: &str) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 480.0, 70.0, 20.0, 20.0, 50.0);
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let finite_pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y, _)| (x, y)))
        .filter(|&(_, y)| y.is_finite() && y > 0.0)
        .collect();
    if finite_pts.is_empty() {
        return format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\"/>");
    }
    let (x_min, x_max) = finite_pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
    let (y_min, y_max) = finite_pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
    let (ly_min, ly_max) = (y_min.log10().floor(), y_max.log10().ceil());
    let x_span = (x_max - x_min).max(1e-12);
    let ly_span = (ly_max - ly_min).max(1e-12);
    let px = |x: f64| ml + (x - x_min) / x_span * (w - ml - mr);
    let py = |y: f64| h - mb - (y.log10() - ly_min) / ly_span * (h - mt - mb);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        w - ml - mr,
        h - mt - mb
    ));
    let mut dec = ly_min;
    while dec <= ly_max + 1e-9 {
        let y = py(10f64.powf(dec));
        svg.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
            w - mr
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\">1e{dec:.0}</text>\n",
            ml - 6.0
        ));
        dec += 1.0;
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>\n",
        ml + (w - ml - mr) / 2.0,
        h - 12.0
    ));
    for (si, s) in series.iter().enumerate() {
        let color = palette[si % palette.len()];
        let valid: Vec<&(f64, f64, f64)> =
            s.points.iter().filter(|p| p.1.is_finite() && p.1 > 0.0).collect();
        if valid.is_empty() {
            continue;
        }
        // One-sigma band when available.
        let band: Vec<String> = valid
            .iter()
            .map(|&&(x, m, sd)| format!("{:.1},{:.1}", px(x), py((m + sd).max(1e-300))))
            .chain(valid.iter().rev().map(|&&(x, m, sd)| {
                format!("{:.1},{:.1}", px(x), py((m - sd).max(m * 0.1).max(1e-300)))
            }))
            .collect();
        if valid.iter().any(|&&(_, _, sd)| sd > 0.0) {
            svg.push_str(&format!(
                "<polygon points=\"{}\" fill=\"{color}\" opacity=\"0.15\"/>\n",
                band.join(" ")
            ));
        }
        let line: Vec<String> =
            valid.iter().map(|&&(x, m, _)| format!("{:.1},{:.1}", px(x), py(m))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            line.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>\n",
            ml + 8.0,
            mt + 16.0 + 14.0 * si as f64,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the CSV (always) and the SVG plot (when configured).
pub fn emit_outputs(
    records: &[TrialRecord],
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<std::path::PathBuf>, HarnessError> {
    let mut written = Vec::new();
    let resolve = |rel: &str| -> std::path::PathBuf {
        match out_dir {
            Some(dir) => dir.join(rel),
            None => std::path::PathBuf::from(rel),
        }
    };
    if let Some(csv_path) = &cfg.output.csv {
        let path = resolve(csv_path);
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| HarnessError::Output {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        let mut file = std::fs::File::create(&path).map_err(|source| HarnessError::Output {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(records_to_csv(records).as_bytes()).map_err(|source| {
            HarnessError::Output { path: path.display().to_string(), source }
        })?;
        written.push(path);
    }
    if let Some(svg_path) = &cfg.output.svg {
        let series = match cfg.experiment.kind {
            ExperimentKind::PositionDownlink | ExperimentKind::PositionUplink => {
                estimator_series(records)
            }
            _ => crb_series(records),
        };
        let x_label = match cfg.experiment.kind {
            ExperimentKind::PositionDownlink | ExperimentKind::PositionUplink => "sensing SNR (dB)",
            ExperimentKind::Convergence => "outer iteration",
            _ => "sweep value",
        };
        let svg = render_svg(&series, x_label);
        let path = resolve(svg_path);
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| HarnessError::Output {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        std::fs::write(&path, svg).map_err(|source| HarnessError::Output {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}
