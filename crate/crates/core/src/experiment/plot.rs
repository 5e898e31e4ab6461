use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::store::{ResultsStore, AGGREGATES_FILE};
use crate::error::{Error, Result};
use crate::eval::{aggregate_trials, read_aggregates_csv, AggregateRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    /// BEST and LAST against the noise rate for the cross-entropy baseline.
    NoiseCurve,
    /// Cross-entropy BEST/LAST grouped by noise rate, one bar per pretext.
    CeBars,
    /// One line per method and pretext.
    LnlCurves,
}

impl Figure {
    pub const ALL: [Figure; 3] = [Figure::NoiseCurve, Figure::CeBars, Figure::LnlCurves];

    pub fn name(self) -> &'static str {
        match self {
            Figure::NoiseCurve => "noise-curve",
            Figure::CeBars => "ce-bars",
            Figure::LnlCurves => "lnl-curves",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown figure `{s}` (expected noise-curve, ce-bars or lnl-curves)")))
    }
}

/// One rendered value; the sidecar CSV holds exactly these rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub panel: String,
    pub series: String,
    pub p: f64,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotOutput {
    pub svg: PathBuf,
    pub png: PathBuf,
    pub csv: PathBuf,
    pub warnings: Vec<String>,
}

fn points_for(rows: &[&AggregateRow], series: impl Fn(&AggregateRow) -> String) -> Vec<PlotPoint> {
    let mut out = Vec::new();
    for r in rows {
        for (panel, mean, std) in [("BEST", r.best_mean, r.best_std), ("LAST", r.last_mean, r.last_std)] {
            out.push(PlotPoint {
                panel: panel.into(),
                series: series(r),
                p: r.p,
                mean,
                std,
                trials: r.trials,
            });
        }
    }
    out
}

/// Values a figure shows, plus warnings for gaps and single-trial groups.
pub fn figure_data(aggregates: &[AggregateRow], figure: Figure) -> (Vec<PlotPoint>, Vec<String>) {
    let mut warnings = Vec::new();
    let ce: Vec<&AggregateRow> = aggregates.iter().filter(|r| r.method == "ce").collect();
    let points = match figure {
        Figure::NoiseCurve => {
            let base: Vec<&AggregateRow> = ce.iter().copied().filter(|r| r.pretext == "none").collect();
            let rows = if base.is_empty() {
                warnings.push("no ce + none results; plotting every group".into());
                aggregates.iter().collect()
            } else {
                base
            };
            let single_group = rows.iter().map(|r| (&r.method, &r.pretext)).collect::<BTreeSet<_>>().len() == 1;
            let mut pts = points_for(&rows, |r| {
                if single_group {
                    String::new()
                } else {
                    format!("{}+{} ", r.method, r.pretext)
                }
            });
            // Both metrics share one panel on this figure.
            for p in &mut pts {
                p.series = format!("{}{}", p.series, p.panel);
                p.panel = "accuracy".into();
            }
            pts
        }
        Figure::CeBars => {
            if ce.is_empty() {
                warnings.push("no ce results to plot".into());
            }
            points_for(&ce, |r| r.pretext.clone())
        }
        Figure::LnlCurves => points_for(&aggregates.iter().collect::<Vec<_>>(), |r| format!("{}+{}", r.method, r.pretext)),
    };
    let xs: BTreeSet<u64> = points.iter().map(|p| p.p.to_bits()).collect();
    let mut by_series: BTreeMap<(&str, &str), BTreeSet<u64>> = BTreeMap::new();
    let mut single = BTreeSet::new();
    for p in &points {
        by_series.entry((&p.panel, &p.series)).or_default().insert(p.p.to_bits());
        if p.trials == 1 && single.insert((p.series.clone(), p.p.to_bits())) {
            warnings.push(format!("{} at p={} has a single trial; no variability shown", p.series, p.p));
        }
    }
    for ((panel, series), have) in &by_series {
        for x in xs.difference(have) {
            warnings.push(format!("{panel}/{series}: no data at p={}; drawn as a gap", f64::from_bits(*x)));
        }
    }
    (points, warnings)
}

pub fn write_sidecar(points: &[PlotPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    w.write_record(["panel", "series", "p", "mean", "std", "trials"])?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Vec<PlotPoint>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 340.0;
const MARGIN_L: f64 = 58.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    y0: f64,
}

impl Frame {
    fn plot_w(&self) -> f64 {
        PANEL_W - MARGIN_L - MARGIN_R
    }

    fn plot_h(&self) -> f64 {
        PANEL_H - MARGIN_T - MARGIN_B
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + MARGIN_T + (1.0 - v.clamp(0.0, 1.0)) * self.plot_h()
    }

    fn left(&self) -> f64 {
        self.x0 + MARGIN_L
    }
}

fn axes(svg: &mut String, f: &Frame, title: &str, x_label: &str) {
    let (l, top, w, h) = (f.left(), f.y0 + MARGIN_T, f.plot_w(), f.plot_h());
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle" font-family="sans-serif">{}</text>"#,
        l + w / 2.0,
        f.y0 + 22.0,
        esc(title)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = f.y(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{l:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end" font-family="sans-serif">{v:.1}</text>"##,
            l + w,
            l - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{l:.1}" y="{top:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#333333"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" font-family="sans-serif">{}</text>"#,
        l + w / 2.0,
        top + h + 38.0,
        esc(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate({:.1},{:.1}) rotate(-90)" font-size="12" text-anchor="middle" font-family="sans-serif">test accuracy</text>"#,
        f.x0 + 16.0,
        top + h / 2.0
    );
}

fn legend(svg: &mut String, f: &Frame, names: &[String]) {
    let x = f.left() + f.plot_w() + 12.0;
    for (i, name) in names.iter().enumerate() {
        let y = f.y0 + MARGIN_T + 8.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif">{}</text>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            x + 16.0,
            y,
            esc(name)
        );
    }
}

fn x_tick(svg: &mut String, f: &Frame, x: f64, p: f64) {
    let base = f.y0 + MARGIN_T + f.plot_h();
    let _ = writeln!(
        svg,
        r##"<line x1="{x:.1}" y1="{base:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333333"/><text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle" font-family="sans-serif">{p}</text>"##,
        base + 4.0,
        base + 17.0
    );
}

fn line_panel(svg: &mut String, f: &Frame, title: &str, pts: &[&PlotPoint], xs: &[f64]) {
    axes(svg, f, title, "noise rate p");
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let pad = 0.06 * f.plot_w();
    let xpix = |p: f64| {
        if hi > lo {
            f.left() + pad + (p - lo) / (hi - lo) * (f.plot_w() - 2.0 * pad)
        } else {
            f.left() + f.plot_w() / 2.0
        }
    };
    for &p in xs {
        x_tick(svg, f, xpix(p), p);
    }
    let names: Vec<String> = pts.iter().map(|p| p.series.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    for (si, name) in names.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let by_x: BTreeMap<u64, &PlotPoint> =
            pts.iter().filter(|p| &p.series == name).map(|p| (p.p.to_bits(), *p)).collect();
        // Consecutive runs of present x values; a missing x breaks the line.
        let mut runs: Vec<Vec<&PlotPoint>> = vec![Vec::new()];
        for x in xs {
            match by_x.get(&x.to_bits()) {
                Some(p) => runs.last_mut().expect("non-empty").push(p),
                None => runs.push(Vec::new()),
            }
        }
        for run in runs.iter().filter(|r| !r.is_empty()) {
            if run.len() > 1 && run.iter().all(|p| p.trials > 1) {
                let upper = run.iter().map(|p| format!("{:.2},{:.2}", xpix(p.p), f.y(p.mean + p.std)));
                let lower = run.iter().rev().map(|p| format!("{:.2},{:.2}", xpix(p.p), f.y(p.mean - p.std)));
                let _ = writeln!(
                    svg,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                    upper.chain(lower).collect::<Vec<_>>().join(" ")
                );
            }
            let line: Vec<String> = run.iter().map(|p| format!("{:.2},{:.2}", xpix(p.p), f.y(p.mean))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
            for p in run {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    xpix(p.p),
                    f.y(p.mean)
                );
            }
        }
    }
    legend(svg, f, &names);
}

fn bar_panel(svg: &mut String, f: &Frame, title: &str, pts: &[&PlotPoint], xs: &[f64]) {
    axes(svg, f, title, "noise rate p");
    let names: Vec<String> = pts.iter().map(|p| p.series.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let group_w = f.plot_w() / xs.len().max(1) as f64;
    let bar_w = 0.8 * group_w / names.len().max(1) as f64;
    let base = f.y(0.0);
    for (gi, &x) in xs.iter().enumerate() {
        let g0 = f.left() + gi as f64 * group_w;
        x_tick(svg, f, g0 + group_w / 2.0, x);
        for (si, name) in names.iter().enumerate() {
            let Some(p) = pts.iter().find(|p| &p.series == name && p.p == x) else {
                continue;
            };
            let color = PALETTE[si % PALETTE.len()];
            let bx = g0 + 0.1 * group_w + si as f64 * bar_w;
            let top = f.y(p.mean);
            let _ = writeln!(
                svg,
                r#"<rect x="{bx:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}" data-mean="{}"/>"#,
                bar_w * 0.9,
                base - top,
                p.mean
            );
            if p.trials > 1 {
                let cx = bx + bar_w * 0.45;
                let _ = writeln!(
                    svg,
                    r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#222222" stroke-width="1.5"/>"##,
                    f.y(p.mean + p.std),
                    f.y(p.mean - p.std)
                );
            }
        }
    }
    legend(svg, f, &names);
}

/// SVG rendering of `points`; panels are laid out side by side.
pub fn render_svg(points: &[PlotPoint], figure: Figure) -> String {
    let panels: Vec<String> = points.iter().map(|p| p.panel.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let panels = if panels.is_empty() { vec!["no data".to_string()] } else { panels };
    let width = PANEL_W * panels.len() as f64;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}">"#
    );
    svg.push('\n');
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    svg.push('\n');
    let xs: Vec<f64> = points
        .iter()
        .map(|p| p.p.to_bits())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(f64::from_bits)
        .collect();
    for (i, panel) in panels.iter().enumerate() {
        let f = Frame {
            x0: PANEL_W * i as f64,
            y0: 0.0,
        };
        let pts: Vec<&PlotPoint> = points.iter().filter(|p| &p.panel == panel).collect();
        let title = format!("{} ({panel})", figure.name());
        if xs.is_empty() {
            axes(&mut svg, &f, &title, "noise rate p");
        } else if figure == Figure::CeBars {
            bar_panel(&mut svg, &f, &title, &pts, &xs);
        } else {
            line_panel(&mut svg, &f, &title, &pts, &xs);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Rasterize an SVG document. Text needs system fonts; without them the
/// labels are omitted but the marks are still drawn.
pub fn svg_to_png(svg: &str, path: impl AsRef<Path>) -> Result<()> {
    use resvg::{tiny_skia, usvg};
    let path = path.as_ref();
    let mut opt = usvg::Options::default();
    let db = opt.fontdb_mut();
    db.load_system_fonts();
    // Map the generic family to an installed sans face; fontdb defaults to Arial.
    let sans = db
        .faces()
        .flat_map(|f| f.families.iter().map(|(name, _)| name.clone()))
        .filter(|name| name.contains("Sans") && !name.contains("Mono"))
        .min_by_key(|name| (!name.starts_with("DejaVu"), name.len()));
    if let Some(name) = sans {
        db.set_sans_serif_family(name);
    }
    let tree = usvg::Tree::from_str(svg, &opt).map_err(|e| Error::Serde(format!("svg: {e}")))?;
    let size = tree.size().to_int_size();
    let mut pixmap = tiny_skia::Pixmap::new(size.width(), size.height())
        .ok_or_else(|| Error::invalid("plot has zero size"))?;
    resvg::render(&tree, tiny_skia::Transform::default(), &mut pixmap.as_mut());
    pixmap.save_png(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

/// Render a figure from `<results>/aggregates.csv` (or `summaries.csv`
/// when the aggregates are missing) into `<results>/plots/`.
pub fn cmd_plot(results_dir: impl AsRef<Path>, figure: Figure) -> Result<PlotOutput> {
    let store = ResultsStore::existing(results_dir.as_ref())?;
    let agg_path = store.path(AGGREGATES_FILE);
    let aggregates = if agg_path.exists() {
        read_aggregates_csv(&agg_path)?
    } else {
        let summaries = store.summaries()?;
        if summaries.is_empty() {
            return Err(Error::Config(format!(
                "{} has no summaries; run `noisy-ssl train` first",
                store.root().display()
            )));
        }
        aggregate_trials(&summaries)?
    };
    let (points, warnings) = figure_data(&aggregates, figure);
    for w in &warnings {
        log::warn!("{figure}: {w}");
    }
    let stem = format!("plots/{}", figure.name());
    let csv = store.prepare(&format!("{stem}.csv"))?;
    write_sidecar(&points, &csv)?;
    let svg_text = render_svg(&points, figure);
    let svg = store.path(&format!("{stem}.svg"));
    std::fs::write(&svg, &svg_text).map_err(|e| Error::io(&svg, e))?;
    let png = store.path(&format!("{stem}.png"));
    svg_to_png(&svg_text, &png)?;
    Ok(PlotOutput { svg, png, csv, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(method: &str, pretext: &str, p: f64, last: f64, trials: usize) -> AggregateRow {
        AggregateRow {
            method: method.into(),
            pretext: pretext.into(),
            p,
            best_mean: last + 0.05,
            best_std: 0.01,
            last_mean: last,
            last_std: if trials > 1 { 0.02 } else { 0.0 },
            trials,
        }
    }

    #[test]
    fn ce_bars_heights_are_means() {
        let rows = vec![agg("ce", "none", 0.5, 0.6, 3), agg("ce", "rotation", 0.5, 0.7, 3), agg("coteaching", "none", 0.5, 0.9, 3)];
        let (pts, warnings) = figure_data(&rows, Figure::CeBars);
        assert!(warnings.is_empty(), "{warnings:?}");
        assert_eq!(pts.len(), 4);
        let last: Vec<f64> = pts.iter().filter(|p| p.panel == "LAST").map(|p| p.mean).collect();
        assert_eq!(last, vec![0.6, 0.7]);
        let svg = render_svg(&pts, Figure::CeBars);
        assert!(svg.contains(r#"data-mean="0.7""#));
    }

    #[test]
    fn gaps_and_single_trials_warn() {
        let rows = vec![agg("ce", "none", 0.2, 0.8, 1), agg("ce", "none", 0.6, 0.6, 1), agg("coteaching", "none", 0.6, 0.7, 1)];
        let (pts, warnings) = figure_data(&rows, Figure::LnlCurves);
        assert_eq!(pts.len(), 6);
        assert!(warnings.iter().any(|w| w.contains("gap")));
        assert!(warnings.iter().any(|w| w.contains("single trial")));
        let svg = render_svg(&pts, Figure::LnlCurves);
        assert!(!svg.contains("<polygon"), "no shading for single trials");
    }

    #[test]
    fn noise_curve_has_two_points_per_metric() {
        let rows = vec![agg("ce", "none", 0.0, 0.9, 3), agg("ce", "none", 0.8, 0.3, 3)];
        let (pts, _) = figure_data(&rows, Figure::NoiseCurve);
        let series: BTreeSet<&str> = pts.iter().map(|p| p.series.as_str()).collect();
        assert_eq!(series, BTreeSet::from(["BEST", "LAST"]));
        assert!(pts.iter().all(|p| p.panel == "accuracy"));
        let svg = render_svg(&pts, Figure::NoiseCurve);
        assert_eq!(svg.matches("<polygon").count(), 2);
    }

    #[test]
    fn sidecar_roundtrip_and_png() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![agg("ce", "none", 0.0, 0.9, 2), agg("ce", "rotation", 0.0, 0.95, 2)];
        let (pts, _) = figure_data(&rows, Figure::CeBars);
        let csv = dir.path().join("x.csv");
        write_sidecar(&pts, &csv).unwrap();
        assert_eq!(read_sidecar(&csv).unwrap(), pts);
        let png = dir.path().join("x.png");
        svg_to_png(&render_svg(&pts, Figure::CeBars), &png).unwrap();
        let img = image::open(&png).unwrap();
        assert_eq!(img.width() as f64, 2.0 * PANEL_W);
    }

    #[test]
    fn figure_names_parse() {
        for f in Figure::ALL {
            assert_eq!(f.name().parse::<Figure>().unwrap(), f);
        }
        assert!("pie".parse::<Figure>().is_err());
    }
}
