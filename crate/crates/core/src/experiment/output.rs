use std::fmt::Write as _;
use std::path::Path;

use super::config::Algo;
use super::runner::{Curve, RunRecord};
use crate::accounting::render_reports;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["algo", "epsilon", "seed", "t", "cumulative_regret"];

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

/// CSV text sorted by `(algo, epsilon, seed, t)`. Regret values carry 17
/// significant digits so they parse back to the same `f64`.
pub fn csv_string(records: &[RunRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Empty("run records"));
    }
    let mut order: Vec<&RunRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        (a.algo, a.epsilon, a.seed)
            .partial_cmp(&(b.algo, b.epsilon, b.seed))
            .expect("epsilons are finite")
    });
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in order {
        let (eps, seed) = (r.epsilon.to_string(), r.seed.to_string());
        for (t, v) in r.t.iter().zip(&r.regret) {
            w.write_record([r.algo.key(), &eps, &seed, &t.to_string(), &format!("{v:.16e}")])
                .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("ascii output"))
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(records)?)?;
    Ok(())
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub algo: Algo,
    pub epsilon: f64,
    pub seed: u64,
    pub t: usize,
    pub cumulative_regret: f64,
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let parse = |field: &str, what: &str| Error::Config(format!("bad {what} field {field:?}"));
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Config(format!("expected 5 columns, got {}", rec.len())));
        }
        rows.push(CsvRow {
            algo: rec[0].parse()?,
            epsilon: rec[1].parse().map_err(|_| parse(&rec[1], "epsilon"))?,
            seed: rec[2].parse().map_err(|_| parse(&rec[2], "seed"))?,
            t: rec[3].parse().map_err(|_| parse(&rec[3], "t"))?,
            cumulative_regret: rec[4].parse().map_err(|_| parse(&rec[4], "regret"))?,
        });
    }
    Ok(rows)
}

/// Rebuilds per-episode records from CSV rows (wall time and budget are not
/// stored in the CSV and come back empty).
pub fn records_from_rows(rows: &[CsvRow]) -> Vec<RunRecord> {
    let mut out: Vec<RunRecord> = Vec::new();
    for row in rows {
        let same = out
            .last()
            .is_some_and(|r| r.algo == row.algo && r.epsilon == row.epsilon && r.seed == row.seed);
        if !same {
            out.push(RunRecord {
                algo: row.algo,
                epsilon: row.epsilon,
                seed: row.seed,
                t: Vec::new(),
                regret: Vec::new(),
                lambda: f64::NAN,
                wall_time: Default::default(),
                budget: Vec::new(),
            });
        }
        let r = out.last_mut().expect("pushed above");
        r.t.push(row.t);
        r.regret.push(row.cumulative_regret);
    }
    out
}

/// Budget reports, one block per `(algo, ε)`.
pub fn report_string(records: &[RunRecord]) -> String {
    let mut seen: Vec<(Algo, f64)> = Vec::new();
    let mut out = String::new();
    for r in records {
        if seen.contains(&(r.algo, r.epsilon)) {
            continue;
        }
        seen.push((r.algo, r.epsilon));
        out.push_str(&render_reports(&format!("{} epsilon={}", r.algo, r.epsilon), &r.budget));
    }
    out
}

pub fn emit_report(records: &[RunRecord], path: &Path) -> Result<()> {
    std::fs::write(path, report_string(records))?;
    Ok(())
}

const COLORS: [&str; 6] = ["#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#d62728", "#8c564b"];
const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const GAP: f64 = 40.0;
const LEGEND_W: f64 = 170.0;

fn color(algo: Algo) -> &'static str {
    COLORS[Algo::ALL.iter().position(|a| *a == algo).unwrap_or(0) % COLORS.len()]
}

/// SVG line chart: one panel per ε, one polyline per curve with a shaded
/// mean ± standard-error band. The y axis of each panel ends at the largest
/// final mean regret among its curves.
pub fn svg_string(curves: &[Curve]) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::Empty("curves"));
    }
    if let Some(c) = curves.iter().find(|c| c.seeds == 0 || c.t.is_empty()) {
        return Err(Error::InvalidParameter(format!("curve {} at epsilon {} has no data", c.algo, c.epsilon)));
    }
    let mut epsilons: Vec<f64> = Vec::new();
    for c in curves {
        if !epsilons.contains(&c.epsilon) {
            epsilons.push(c.epsilon);
        }
    }
    let panels = epsilons.len() as f64;
    let width = MARGIN_L + panels * PANEL_W + (panels - 1.0) * GAP + LEGEND_W;
    let height = MARGIN_T + PANEL_H + MARGIN_B;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, &eps) in epsilons.iter().enumerate() {
        let x0 = MARGIN_L + p as f64 * (PANEL_W + GAP);
        let y0 = MARGIN_T;
        let members: Vec<&Curve> = curves.iter().filter(|c| c.epsilon == eps).collect();
        let t_max = members.iter().map(|c| *c.t.last().unwrap()).max().unwrap() as f64;
        let y_max = members.iter().map(|c| c.final_mean()).fold(0.0, f64::max);
        let y_max = if y_max > 0.0 { y_max } else { 1.0 };
        let px = |t: f64| x0 + t / t_max * PANEL_W;
        let py = |v: f64| y0 + PANEL_H - v.clamp(0.0, y_max) / y_max * PANEL_H;

        let _ = writeln!(s, r#"<g class="panel" data-epsilon="{eps}">"#);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">ε = {eps}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 12.0
        );
        for k in 0..=4 {
            let frac = k as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
                x0 + frac * PANEL_W,
                y0 + PANEL_H + 16.0,
                frac * t_max
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}</text>"#,
                x0 - 6.0,
                y0 + PANEL_H - frac * PANEL_H + 4.0,
                frac * y_max
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">round t</text>"#,
            x0 + PANEL_W / 2.0,
            y0 + PANEL_H + 36.0
        );
        if p == 0 {
            let (lx, ly) = (18.0, y0 + PANEL_H / 2.0);
            let _ = writeln!(
                s,
                r#"<text x="{lx}" y="{ly}" text-anchor="middle" transform="rotate(-90 {lx} {ly})">cumulative regret</text>"#
            );
        }
        for c in &members {
            let upper = c.t.iter().zip(c.mean.iter().zip(&c.se)).map(|(&t, (m, e))| (t, m + e));
            let lower = c.t.iter().zip(c.mean.iter().zip(&c.se)).rev().map(|(&t, (m, e))| (t, m - e));
            let band: Vec<String> = upper
                .chain(lower)
                .map(|(t, v)| format!("{:.2},{:.2}", px(t as f64), py(v)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polygon class="band" points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                band.join(" "),
                color(c.algo)
            );
            let line: Vec<String> = c
                .t
                .iter()
                .zip(&c.mean)
                .map(|(&t, &m)| format!("{:.2},{:.2}", px(t as f64), py(m)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline data-algo="{}" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                c.algo,
                line.join(" "),
                color(c.algo)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let mut legend: Vec<Algo> = curves.iter().map(|c| c.algo).collect();
    legend.sort();
    legend.dedup();
    let lx = width - LEGEND_W + 10.0;
    for (i, algo) in legend.iter().enumerate() {
        let y = MARGIN_T + 10.0 + i as f64 * 20.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            color(*algo),
            lx + 26.0,
            y + 4.0,
            algo.label()
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_chart(curves: &[Curve], path: &Path) -> Result<()> {
    std::fs::write(path, svg_string(curves)?)?;
    Ok(())
}
