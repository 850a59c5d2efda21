//! Deterministic SVG line charts over the pipeline's CSV outputs. The SVG
//! is assembled by hand with fixed canvas geometry and fixed-precision
//! coordinates, so identical inputs yield byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::stages::{column_index, parse_date, parse_num, read_csv_table, StageCtx};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub struct ChartSeries {
    pub label: String,
    pub points: Vec<(NaiveDate, f64)>,
}

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e6 || v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one chart; an empty series list produces a labeled empty frame.
pub fn render_line_chart(title: &str, series: &[ChartSeries]) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        fmt_coord(WIDTH / 2.0),
        esc(title)
    ));

    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt_coord(x0),
        fmt_coord(y0),
        fmt_coord(x1),
        fmt_coord(y0)
    ));
    svg.push_str(&format!(
        "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt_coord(x0),
        fmt_coord(y0),
        fmt_coord(x0),
        fmt_coord(y1)
    ));

    let all_points: Vec<(NaiveDate, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(_, v)| v.is_finite())
        .collect();
    if all_points.is_empty() {
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"14\" \
             text-anchor=\"middle\">no data</text>\n",
            fmt_coord(WIDTH / 2.0),
            fmt_coord(HEIGHT / 2.0)
        ));
        svg.push_str("</svg>\n");
        return svg;
    }

    let date_min = all_points.iter().map(|(d, _)| *d).min().expect("non-empty");
    let date_max = all_points.iter().map(|(d, _)| *d).max().expect("non-empty");
    let span_days = ((date_max - date_min).num_days().max(1)) as f64;
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for (_, v) in &all_points {
        v_min = v_min.min(*v);
        v_max = v_max.max(*v);
    }
    if v_min == v_max {
        // A flat series still needs a non-degenerate y scale.
        v_min -= 0.5;
        v_max += 0.5;
    }

    let sx = |d: NaiveDate| x0 + (d - date_min).num_days() as f64 / span_days * (x1 - x0);
    let sy = |v: f64| y0 - (v - v_min) / (v_max - v_min) * (y0 - y1);

    // Axis extent labels.
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
        fmt_coord(x0),
        fmt_coord(y0 + 16.0),
        date_min
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
         text-anchor=\"end\">{}</text>\n",
        fmt_coord(x1),
        fmt_coord(y0 + 16.0),
        date_max
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
         text-anchor=\"end\">{}</text>\n",
        fmt_coord(x0 - 4.0),
        fmt_coord(y0),
        fmt_tick(v_min)
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
         text-anchor=\"end\">{}</text>\n",
        fmt_coord(x0 - 4.0),
        fmt_coord(y1 + 4.0),
        fmt_tick(v_max)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|(_, v)| v.is_finite())
            .map(|(d, v)| format!("{},{}", fmt_coord(sx(*d)), fmt_coord(sy(*v))))
            .collect();
        if coords.is_empty() {
            continue;
        }
        if coords.len() == 1 {
            let (x, y) = coords[0].split_once(',').expect("formatted pair");
            svg.push_str(&format!(
                "  <circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>\n"
            ));
        } else {
            svg.push_str(&format!(
                "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
                 points=\"{}\"/>\n",
                coords.join(" ")
            ));
        }
        // Legend entry.
        let ly = MARGIN_TOP + 14.0 * i as f64;
        svg.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            fmt_coord(x1 - 150.0),
            fmt_coord(ly - 9.0)
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
            fmt_coord(x1 - 136.0),
            fmt_coord(ly),
            esc(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn daily_mean(points: Vec<(NaiveDate, f64)>) -> Vec<(NaiveDate, f64)> {
    let mut by_day: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for (d, v) in points {
        let slot = by_day.entry(d).or_insert((0.0, 0));
        slot.0 += v;
        slot.1 += 1;
    }
    by_day
        .into_iter()
        .map(|(d, (sum, n))| (d, sum / n as f64))
        .collect()
}

/// Reads (date, value) pairs out of two named columns, optionally keyed by a
/// discriminator column value.
fn read_points(
    path: &Path,
    value_col: &str,
    split_by: Option<&str>,
) -> Result<Vec<(String, Vec<(NaiveDate, f64)>)>, String> {
    let (header, rows) = read_csv_table(path)?;
    let date_i = column_index(&header, "date", path)?;
    let value_i = column_index(&header, value_col, path)?;
    let split_i = match split_by {
        Some(col) => Some(column_index(&header, col, path)?),
        None => None,
    };
    let mut grouped: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for row in &rows {
        let key = match split_i {
            Some(i) => row[i].clone(),
            None => value_col.to_string(),
        };
        grouped
            .entry(key)
            .or_default()
            .push((parse_date(&row[date_i], path)?, parse_num(&row[value_i], path)?));
    }
    Ok(grouped.into_iter().collect())
}

fn write_chart(
    dir: &Path,
    name: &str,
    title: &str,
    series: Vec<ChartSeries>,
) -> Result<PathBuf, String> {
    let path = dir.join(name);
    std::fs::write(&path, render_line_chart(title, &series))
        .map_err(|e| format!("write {}: {e}", path.display()))?;
    Ok(path)
}

pub fn run_plot(ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
    let dir = ctx.path("plots");
    std::fs::create_dir_all(&dir).map_err(|e| format!("create {}: {e}", dir.display()))?;
    let mut written = Vec::new();

    let supply = read_points(
        &ctx.path("ledger/supply.csv"),
        "total_supply_sats",
        None,
    )?;
    written.push(write_chart(
        &dir,
        "supply.svg",
        "total supply (sats)",
        supply
            .into_iter()
            .map(|(label, points)| ChartSeries { label, points })
            .collect(),
    )?);

    let hhi = read_points(&ctx.path("concentration/hhi.csv"), "hhi", Some("mode"))?;
    written.push(write_chart(
        &dir,
        "hhi.svg",
        "market concentration (HHI)",
        hhi.into_iter()
            .map(|(label, points)| ChartSeries {
                label: format!("hhi {label}"),
                points,
            })
            .collect(),
    )?);

    let da = read_points(&ctx.path("assetdist/da.csv"), "d_a", None)?;
    written.push(write_chart(
        &dir,
        "da.svg",
        "asset decentralization degree",
        da.into_iter()
            .map(|(label, points)| ChartSeries { label, points })
            .collect(),
    )?);

    let disp = read_points(
        &ctx.path("centrality/dispersion.csv"),
        "dispersion",
        Some("metric"),
    )?;
    written.push(write_chart(
        &dir,
        "dispersion.svg",
        "centrality dispersion (daily mean)",
        disp.into_iter()
            .map(|(label, points)| ChartSeries {
                label,
                points: daily_mean(points),
            })
            .collect(),
    )?);

    Ok(written)
}
