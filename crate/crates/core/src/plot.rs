//! Self-contained two-panel SVG: spectra with unfolded markers on top,
//! estimate/truth ratios with a unity line below.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::benchmark::DistributionRun;
use crate::error::{Result, UnfoldError};
use crate::result::Method;

pub const TRUTH_COLOR: &str = "#1f77b4";
pub const MEASURED_COLOR: &str = "#ff7f0e";

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const MAIN_H: f64 = 330.0;
const GAP: f64 = 40.0;
const RATIO_H: f64 = 150.0;
const RATIO_RANGE: (f64, f64) = (0.0, 2.0);

fn method_style(method: Method) -> (&'static str, &'static str) {
    match method {
        Method::Mi => ("#7f7f7f", "square"),
        Method::Ibu => ("#2ca02c", "triangle"),
        Method::Svd => ("#9467bd", "diamond"),
        Method::Cd => ("#d62728", "circle"),
        Method::Anneal => ("#111111", "cross"),
        Method::Brute => ("#8c564b", "circle"),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn marker(out: &mut String, shape: &str, x: f64, y: f64, color: &str) {
    let r = 4.0;
    let _ = match shape {
        "square" => write!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
            x - r, y - r, 2.0 * r, 2.0 * r
        ),
        "triangle" => write!(
            out,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x, y - r, x - r, y + r, x + r, y + r
        ),
        "diamond" => write!(
            out,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x, y - r, x + r, y, x, y + r, x - r, y
        ),
        "cross" => write!(
            out,
            r#"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" stroke="{color}" stroke-width="2"/>"#,
            x - r, y - r, x + r, y + r, x - r, y + r, x + r, y - r
        ),
        _ => write!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{color}"/>"#),
    };
}

/// "Nice" upper axis limit and tick step.
fn axis(max: f64) -> (f64, f64) {
    let max = if max > 0.0 { max } else { 1.0 };
    let raw = max / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    ((max / step).ceil() * step, step)
}

fn fmt_tick(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}").trim_end_matches('0').to_string()
    }
}

/// Renders `run` as an SVG document.
pub fn render_svg(run: &DistributionRun) -> Result<String> {
    let m = run.truth.len();
    if m == 0 || run.edges.len() != m + 1 || run.measured.len() != m {
        return Err(UnfoldError::invalid("plot input has inconsistent binning"));
    }
    let ok: Vec<_> = run.records.iter().filter(|r| r.error.is_none()).collect();
    for r in &ok {
        if r.estimate.len() != m || !(r.errors.is_empty() || r.errors.len() == m) {
            return Err(UnfoldError::invalid(format!(
                "{} estimate does not match the binning",
                r.method
            )));
        }
    }
    let lo = run.edges[0];
    let hi = run.edges[m];
    let plot_w = WIDTH - LEFT - RIGHT;
    let sx = |v: f64| LEFT + (v - lo) / (hi - lo) * plot_w;

    let mut ymax = run
        .truth
        .iter()
        .chain(&run.measured)
        .copied()
        .fold(0.0, f64::max);
    for r in &ok {
        for i in 0..m {
            let e = r.errors.get(i).copied().unwrap_or(0.0);
            let v = r.estimate[i] + e;
            if v.is_finite() {
                ymax = ymax.max(v);
            }
        }
    }
    let (ytop, ystep) = axis(ymax * 1.05);
    let sy = |v: f64| TOP + MAIN_H - (v.clamp(0.0, ytop) / ytop) * MAIN_H;
    let ratio_top = TOP + MAIN_H + GAP;
    let sr = |v: f64| {
        let (a, b) = RATIO_RANGE;
        ratio_top + RATIO_H - (v.clamp(a, b) - a) / (b - a) * RATIO_H
    };

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&run.distribution)
    );

    // axes and gridlines
    let _ = writeln!(s, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{MAIN_H}"/>"#);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{ratio_top}" width="{plot_w}" height="{RATIO_H}"/>"#);
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="ticks" font-size="10">"#);
    let mut t = 0.0;
    while t <= ytop + 1e-9 * ytop {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 3.0,
            fmt_tick(t)
        );
        t += ystep;
    }
    for v in [0.5, 1.0, 1.5] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sr(v) + 3.0,
            fmt_tick(v)
        );
    }
    for (k, e) in run.edges.iter().enumerate() {
        if k % 2 == 0 || k == m {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(*e),
                ratio_top + RATIO_H + 14.0,
                fmt_tick((*e * 1000.0).round() / 1000.0)
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" transform="rotate(-90 18 {:.2})" text-anchor="middle">events / bin</text>"#,
        TOP + MAIN_H / 2.0,
        TOP + MAIN_H / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" transform="rotate(-90 18 {:.2})" text-anchor="middle">unfolded / truth</text>"#,
        ratio_top + RATIO_H / 2.0,
        ratio_top + RATIO_H / 2.0
    );
    let _ = writeln!(
        s,
        r##"<line class="unity" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#444444" stroke-dasharray="5,4"/>"##,
        LEFT + plot_w,
        y = sr(1.0)
    );

    // one group per bin
    let n_series = ok.len().max(1) as f64;
    for i in 0..m {
        let (x0, x1) = (sx(run.edges[i]), sx(run.edges[i + 1]));
        let w = x1 - x0;
        let _ = writeln!(s, r#"<g class="bin" data-bin="{i}">"#);
        let _ = writeln!(
            s,
            r#"<rect class="truth" x="{x0:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="{TRUTH_COLOR}" fill-opacity="0.35" stroke="{TRUTH_COLOR}"/>"#,
            sy(run.truth[i]),
            TOP + MAIN_H - sy(run.truth[i])
        );
        let _ = writeln!(
            s,
            r#"<rect class="measured" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="{MEASURED_COLOR}" stroke-width="2"/>"#,
            x0 + 0.15 * w,
            sy(run.measured[i]),
            0.7 * w,
            TOP + MAIN_H - sy(run.measured[i])
        );
        for (k, r) in ok.iter().enumerate() {
            let (color, shape) = method_style(r.method);
            let x = x0 + w * (k as f64 + 1.0) / (n_series + 1.0);
            let v = r.estimate[i];
            let _ = write!(s, r#"<g class="estimate" data-method="{}">"#, r.method);
            if let Some(&e) = r.errors.get(i) {
                if e > 0.0 {
                    let _ = write!(
                        s,
                        r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                        sy(v - e),
                        sy(v + e)
                    );
                }
            }
            marker(&mut s, shape, x, sy(v), color);
            if let Some(Some(q)) = r.ratio.get(i) {
                if run.truth[i] > 0.0 {
                    let rel = e_over(r.errors.get(i).copied(), run.truth[i]);
                    if rel > 0.0 {
                        let _ = write!(
                            s,
                            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                            sr(q - rel),
                            sr(q + rel)
                        );
                    }
                }
                marker(&mut s, shape, x, sr(*q), color);
            }
            let _ = writeln!(s, "</g>");
        }
        let _ = writeln!(s, "</g>");
    }

    // legend
    let lx = LEFT + plot_w + 14.0;
    let _ = writeln!(s, r#"<g class="legend">"#);
    let mut ly = TOP + 10.0;
    let _ = writeln!(
        s,
        r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="10" fill="{TRUTH_COLOR}" fill-opacity="0.35" stroke="{TRUTH_COLOR}"/><text x="{:.2}" y="{:.2}">truth</text>"#,
        ly - 8.0,
        lx + 20.0,
        ly + 1.0
    );
    ly += 18.0;
    let _ = writeln!(
        s,
        r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="10" fill="none" stroke="{MEASURED_COLOR}" stroke-width="2"/><text x="{:.2}" y="{:.2}">measured</text>"#,
        ly - 8.0,
        lx + 20.0,
        ly + 1.0
    );
    for r in &ok {
        ly += 18.0;
        let (color, shape) = method_style(r.method);
        marker(&mut s, shape, lx + 7.0, ly - 3.0, color);
        let label = match r.chi2 {
            Some(c) => format!("{} (chi2 {:.1})", r.method, c),
            None => r.method.to_string(),
        };
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 20.0, ly + 1.0, escape(&label));
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

fn e_over(err: Option<f64>, truth: f64) -> f64 {
    err.map_or(0.0, |e| e / truth)
}

/// Writes the figure for `run` to `path`.
pub fn emit_plot(run: &DistributionRun, path: &Path) -> Result<()> {
    let svg = render_svg(run)?;
    fs::write(path, svg).map_err(|e| UnfoldError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::BenchmarkRecord;
    use std::collections::BTreeMap;

    fn run(methods: &[Method]) -> DistributionRun {
        let edges: Vec<f64> = (0..=12).map(|k| k as f64 * 0.5).collect();
        let truth: Vec<f64> = (0..12).map(|k| 100.0 + 10.0 * k as f64).collect();
        let measured: Vec<f64> = truth.iter().map(|t| 0.7 * t).collect();
        let records = methods
            .iter()
            .map(|&method| BenchmarkRecord {
                distribution: "normal".into(),
                method,
                lambda: None,
                chi2: Some(1.0),
                excluded_bins: 0,
                estimate: truth.clone(),
                errors: vec![5.0; 12],
                ratio: vec![Some(1.0); 12],
                seed: 0,
                hyperparameters: serde_json::json!({}),
                diagnostics: BTreeMap::new(),
                error: None,
            })
            .collect();
        DistributionRun {
            distribution: "normal".into(),
            seed: 0,
            edges,
            truth,
            measured,
            records,
        }
    }

    #[test]
    fn twelve_bin_groups_and_colors() {
        let svg = render_svg(&run(&[Method::Mi, Method::Cd])).unwrap();
        assert_eq!(svg.matches(r#"<g class="bin""#).count(), 12);
        assert_eq!(svg.matches(r#"class="estimate""#).count(), 24);
        assert!(svg.contains(TRUTH_COLOR) && svg.contains(MEASURED_COLOR));
        assert!(svg.contains(r#"class="unity""#));
    }

    #[test]
    fn empty_method_set_draws_inputs_only() {
        let svg = render_svg(&run(&[])).unwrap();
        assert_eq!(svg.matches(r#"class="truth""#).count(), 12);
        assert_eq!(svg.matches(r#"class="measured""#).count(), 12);
        assert!(!svg.contains("estimate"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let r = run(&[Method::Ibu]);
        assert_eq!(render_svg(&r).unwrap(), render_svg(&r).unwrap());
    }

    #[test]
    fn mismatched_binning_is_rejected() {
        let mut r = run(&[Method::Mi]);
        r.records[0].estimate.pop();
        assert!(render_svg(&r).is_err());
        let mut r = run(&[]);
        r.measured.pop();
        assert!(render_svg(&r).is_err());
    }

    #[test]
    fn io_failure_names_path() {
        let err = emit_plot(&run(&[]), Path::new("/nonexistent-dir/x.svg")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.svg"));
    }
}
