//! SVG figures with CSV sidecars holding exactly the plotted points.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::io::write_atomic;
use super::run::{aggregate, read_records, ExperimentRecord};
use crate::error::{Error, Result};

/// A named polyline.
pub type Series = (String, Vec<(f64, f64)>);

const COLORS: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn write_sidecar(path: &Path, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["series", x_label, y_label])?;
        for (name, pts) in series {
            for (x, y) in pts {
                wtr.write_record([name.clone(), format!("{x:e}"), format!("{y:e}")])?;
            }
        }
        wtr.flush()?;
        Ok(())
    })
}

/// Renders `series` on a log-y axis into `path` (SVG) and writes the points to
/// `path` with a `.csv` extension. Non-positive or non-finite points are
/// dropped since they have no place on a log axis.
pub fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let series: Vec<Series> = series
        .iter()
        .map(|(n, pts)| (n.clone(), pts.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite() && *y > 0.0).collect()))
        .collect();
    write_sidecar(&path.with_extension("csv"), x_label, y_label, &series)?;

    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if all.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 1e-3, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if y1 / y0 < 10.0 {
        y0 /= 3.0;
        y1 *= 3.0;
    }

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 600)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(15)
            .x_label_area_size(45)
            .y_label_area_size(75)
            .build_cartesian_2d(x0..x1, (y0..y1).log_scale())
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .y_label_formatter(&|v| format!("{v:.0e}"))
            .draw()
            .map_err(plot_err)?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
            chart.draw_series(pts.iter().map(|p| Circle::new(*p, 4, color.filled()))).map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    write_atomic(path, |w| Ok(w.write_all(svg.as_bytes())?))
}

/// Median MSE per solver against the sweep variable, in-range and full.
pub fn mse_series(records: &[ExperimentRecord]) -> (Vec<Series>, Vec<Series>) {
    let agg = aggregate(records);
    let mut solvers: Vec<String> = Vec::new();
    for a in &agg {
        if !solvers.contains(&a.solver) {
            solvers.push(a.solver.clone());
        }
    }
    let pick = |f: fn(&super::run::AggregateRow) -> f64| -> Vec<Series> {
        solvers
            .iter()
            .map(|s| (s.clone(), agg.iter().filter(|a| &a.solver == s).map(|a| (a.sweep_value, f(a))).collect()))
            .collect()
    };
    (pick(|a| a.median_mse_in_range), pick(|a| a.median_mse_full))
}

/// Writes `mse_in_range.svg`, `mse_full.svg` and, when traces are given,
/// `trace_misfit.svg`, each with a CSV sidecar.
pub fn emit_plots(records: &[ExperimentRecord], traces: &[(String, Vec<(usize, f64)>)], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let x_label = records[0].sweep_variable.clone();
    let x_label = if x_label == "none" { "users".to_string() } else { x_label };
    let (in_range, full) = mse_series(records);
    let mut written = Vec::new();
    for (name, title, series) in [
        ("mse_in_range.svg", "Median in-range MSE", &in_range),
        ("mse_full.svg", "Median full-range MSE", &full),
    ] {
        let path = dir.join(name);
        line_plot(&path, title, &x_label, "mse", series)?;
        written.push(path);
    }
    if !traces.is_empty() {
        let series: Vec<Series> =
            traces.iter().map(|(n, pts)| (n.clone(), pts.iter().map(|(t, m)| (*t as f64, *m)).collect())).collect();
        let path = dir.join("trace_misfit.svg");
        line_plot(&path, "Channel misfit per iteration", "iteration", "misfit", &series)?;
        written.push(path);
    }
    Ok(written)
}

fn read_trace(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let t = row.get(0).and_then(|v| v.parse().ok());
        let m = row.get(1).and_then(|v| v.parse().ok());
        if let (Some(t), Some(m)) = (t, m) {
            out.push((t, m));
        }
    }
    Ok(out)
}

/// Re-renders the figures of a finished run directory from `records.csv` and
/// the trial-0 traces of the last sweep point.
pub fn plot_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let records = read_records(&dir.join("records.csv"))?;
    let mut values: Vec<f64> = Vec::new();
    for r in &records {
        if !values.contains(&r.sweep_value) {
            values.push(r.sweep_value);
        }
    }
    let last = values.len().saturating_sub(1);
    let mut solvers: Vec<String> = Vec::new();
    for r in &records {
        if !solvers.contains(&r.solver) {
            solvers.push(r.solver.clone());
        }
    }
    let mut traces = Vec::new();
    for s in solvers {
        let path = dir.join(format!("trace_p{last}_t0_{s}.csv"));
        if path.exists() {
            traces.push((s, read_trace(&path)?));
        }
    }
    emit_plots(&records, &traces, dir)
}
