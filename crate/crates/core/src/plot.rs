//! Waterfall charts of Shapley reports as standalone SVG.

use std::fmt::Write;

use crate::shapley::ShapleyReport;

#[derive(Clone, Debug, PartialEq)]
pub struct WaterfallOptions {
    pub title: Option<String>,
    pub width: f64,
    pub bar_height: f64,
    /// Embedded as a comment; never a timestamp.
    pub generator: Option<String>,
}

impl Default for WaterfallOptions {
    fn default() -> Self {
        WaterfallOptions {
            title: None,
            width: 720.0,
            bar_height: 22.0,
            generator: Some(format!("fairshap {}", env!("CARGO_PKG_VERSION"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaterfallLayout {
    pub offset: f64,
    pub bars: Vec<Bar>,
    /// Cumulative level after the last bar: `offset + total`.
    pub end: f64,
}

/// Bars in descending `|phi|` order, each starting where the previous ended.
pub fn waterfall_layout(report: &ShapleyReport) -> WaterfallLayout {
    let mut level = report.offset;
    let bars = report
        .ranked()
        .into_iter()
        .map(|i| {
            let start = level;
            level += report.phi[i];
            Bar {
                label: report.players[i].clone(),
                value: report.phi[i],
                start,
                end: level,
            }
        })
        .collect();
    WaterfallLayout {
        offset: report.offset,
        bars,
        end: level,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const LABEL_WIDTH: f64 = 150.0;
const VALUE_WIDTH: f64 = 80.0;
const TOP: f64 = 40.0;

pub fn render_waterfall(report: &ShapleyReport, opts: &WaterfallOptions) -> String {
    let layout = waterfall_layout(report);
    let levels = layout
        .bars
        .iter()
        .flat_map(|b| [b.start, b.end])
        .chain([layout.offset, layout.end]);
    let (mut lo, mut hi) = levels.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if hi - lo < 1e-12 {
        lo -= 0.5e-3;
        hi += 0.5e-3;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = opts.width - LABEL_WIDTH - VALUE_WIDTH;
    let x = |v: f64| LABEL_WIDTH + (v - lo) / (hi - lo) * plot_w;
    let rows = layout.bars.len() + 1;
    let height = TOP + rows as f64 * opts.bar_height + 30.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}" font-family="sans-serif" font-size="12">"#,
        opts.width, height, opts.width, height
    );
    if let Some(g) = &opts.generator {
        let _ = writeln!(s, "<!-- {} -->", escape(g));
    }
    let title = opts.title.clone().unwrap_or_else(|| match &report.cell {
        Some(c) => format!("{} ({c}), {}", report.kind, report.model),
        None => format!("{}, {}", report.kind, report.model),
    });
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" font-size="14">{}</text>"#, LABEL_WIDTH, escape(&title));

    let axis = x(layout.offset);
    let bottom = TOP + rows as f64 * opts.bar_height;
    let _ = writeln!(
        s,
        r##"<line x1="{axis:.2}" y1="{TOP:.2}" x2="{axis:.2}" y2="{bottom:.2}" stroke="#888" stroke-dasharray="3,3"/>"##
    );
    for (k, b) in layout.bars.iter().enumerate() {
        let y = TOP + k as f64 * opts.bar_height;
        let (x0, x1) = (x(b.start.min(b.end)), x(b.start.max(b.end)));
        let colour = if b.value >= 0.0 { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LABEL_WIDTH - 6.0,
            y + opts.bar_height * 0.7,
            escape(&b.label)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{colour}"/>"#,
            y + 3.0,
            (x1 - x0).max(0.5),
            opts.bar_height - 6.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{:+.4}</text>"#,
            x1 + 4.0,
            y + opts.bar_height * 0.7,
            b.value
        );
    }
    let y = TOP + layout.bars.len() as f64 * opts.bar_height;
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000" stroke-width="2"/>"##,
        x(layout.end),
        TOP,
        x(layout.end),
        y + opts.bar_height
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">offset {:.4}, total {:+.4}, end {:.4}</text>"#,
        LABEL_WIDTH,
        y + opts.bar_height * 0.7 + 10.0,
        layout.offset,
        report.total,
        layout.end
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::metrics::MetricName;
    use crate::shapley::{EstimatorMeta, EstimatorMode, ValueKind};

    fn report(phi: Vec<f64>, offset: f64) -> ShapleyReport {
        let players = (0..phi.len()).map(|i| format!("p{i}")).collect();
        let total = phi.iter().sum();
        ShapleyReport {
            kind: ValueKind::Accuracy,
            aggregation: "p(x,y)".into(),
            cell: None,
            target_class: None,
            model: "m".into(),
            players,
            phi,
            se: None,
            offset,
            total,
            metric: MetricName::ExpectedAccuracy,
            metric_value: offset + total,
            empty_value: offset,
            full_value: offset + total,
            estimator: EstimatorMeta {
                mode: EstimatorMode::Exact,
                permutations: None,
                antithetic: false,
                background: 1,
                seed: 0,
            },
            split: Split::Test,
            n_rows: 1,
            dropped_cells: Vec::new(),
        }
    }

    #[test]
    fn all_zero_report_is_flat_at_the_offset() {
        let l = waterfall_layout(&report(vec![0.0; 3], 0.4));
        assert!(l.bars.iter().all(|b| b.start == 0.4 && b.end == 0.4));
        assert_eq!(l.end, 0.4);
    }

    #[test]
    fn two_players_end_at_offset_plus_total() {
        let l = waterfall_layout(&report(vec![-0.05, 0.1], 0.5));
        assert_eq!(l.bars[0].label, "p1");
        assert_eq!(l.bars[1].label, "p0");
        assert!((l.end - 0.55).abs() < 1e-15);
        assert!((l.bars[0].end - 0.6).abs() < 1e-15);
    }

    #[test]
    fn svg_is_deterministic_and_escaped() {
        let mut r = report(vec![0.02, -0.01], 0.0);
        r.players[0] = "a<b".into();
        let opts = WaterfallOptions::default();
        let a = render_waterfall(&r, &opts);
        assert_eq!(a, render_waterfall(&r, &opts));
        assert!(a.contains("a&lt;b"));
        assert!(a.starts_with("<svg"));
        assert_eq!(a.matches("<rect").count(), 2);
    }
}
