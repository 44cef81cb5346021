//! SVG charts and a text summary rendered from a finished result.
//! Output bytes depend only on the result, never on the clock.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::experiment::{Design, ExperimentError, ExperimentResult, PlanTag};
use crate::format::write_atomic;
use crate::noise::{format_sig3, snr_of};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// A line chart over categorical x positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_ticks: Vec<String>,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// One value per x tick; `None` leaves a gap.
    pub values: Vec<Option<f64>>,
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        const W: f64 = 720.0;
        const H: f64 = 440.0;
        const LEFT: f64 = 70.0;
        const RIGHT: f64 = 170.0;
        const TOP: f64 = 40.0;
        const BOTTOM: f64 = 60.0;
        let plot_w = W - LEFT - RIGHT;
        let plot_h = H - TOP - BOTTOM;

        let values: Vec<f64> = self.series.iter().flat_map(|s| s.values.iter().flatten().copied()).collect();
        let mut y_max = values.iter().copied().fold(0.0f64, f64::max);
        y_max = if y_max <= 1.0 { 1.0 } else { (y_max * 10.0).ceil() / 10.0 };
        let y_min = 0.0;
        let n = self.x_ticks.len().max(1);
        let x_at = |i: usize| {
            if n == 1 {
                LEFT + plot_w / 2.0
            } else {
                LEFT + plot_w * i as f64 / (n - 1) as f64
            }
        };
        let y_at = |v: f64| TOP + plot_h * (1.0 - (v.clamp(y_min, y_max) - y_min) / (y_max - y_min));

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        // Axes and horizontal grid.
        for k in 0..=5 {
            let v = y_min + (y_max - y_min) * k as f64 / 5.0;
            let y = y_at(v);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
                LEFT + plot_w
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
                LEFT - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<path d="M{LEFT:.1},{TOP:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
            TOP + plot_h,
            LEFT + plot_w
        );
        for (i, tick) in self.x_ticks.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x_at(i),
                TOP + plot_h + 18.0,
                escape(tick)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            H - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0,
            escape(&self.y_label)
        );

        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let points: Vec<String> = series
                .values
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|v| format!("{:.1},{:.1}", x_at(i), y_at(v))))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                escape(&series.name),
                points.join(" ")
            );
            for p in &points {
                let (x, y) = p.split_once(',').expect("formatted above");
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
            }
            let ly = TOP + 10.0 + 18.0 * k as f64;
            let lx = W - RIGHT + 16.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
                lx + 18.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 24.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn power_label(p: f64) -> String {
    match snr_of(p) {
        Ok(snr) => format!("{p}% (SNR {})", format_sig3(snr)),
        Err(_) => format!("{p}% (clean)"),
    }
}

fn file_stem(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Normalized accuracy per layer (x) with one series per power.
fn layer_chart(result: &ExperimentResult, model: &str, tag: PlanTag) -> Result<LineChart, ExperimentError> {
    let cells = result.cell_means(model)?;
    let mut layers: Vec<usize> = cells.iter().map(|c| c.0).collect();
    layers.dedup();
    let series = result
        .meta
        .powers
        .iter()
        .map(|&p| Series {
            name: power_label(p),
            values: layers
                .iter()
                .map(|&l| {
                    cells
                        .iter()
                        .find(|c| c.0 == l && c.1.to_bits() == p.to_bits())
                        .map(|c| c.2)
                })
                .collect(),
        })
        .collect();
    let (title, x_label) = match tag {
        PlanTag::Prefix => (format!("{model}: noise in layers 1..L"), "last noisy layer L"),
        _ => (format!("{model}: noise in one layer"), "layer"),
    };
    Ok(LineChart {
        title,
        x_label: x_label.into(),
        y_label: "normalized accuracy".into(),
        x_ticks: layers.iter().map(|l| l.to_string()).collect(),
        series,
    })
}

/// Mean accuracy against noise power, one series per model.
fn all_layers_chart(result: &ExperimentResult) -> Result<LineChart, ExperimentError> {
    let mut series = Vec::new();
    for model in &result.meta.models {
        let cells = result.cell_means(model)?;
        let baseline = result.baseline(model).unwrap_or(0.0);
        series.push(Series {
            name: model.clone(),
            values: result
                .meta
                .powers
                .iter()
                .map(|&p| {
                    cells
                        .iter()
                        .find(|c| c.1.to_bits() == p.to_bits())
                        .map(|c| c.2 * baseline)
                })
                .collect(),
        });
    }
    Ok(LineChart {
        title: "noise in all layers".into(),
        x_label: "noise power".into(),
        y_label: "accuracy".into(),
        x_ticks: result.meta.powers.iter().map(|&p| power_label(p)).collect(),
        series,
    })
}

/// `A_avr` against noise power, one series per model.
fn comparison_chart(result: &ExperimentResult) -> LineChart {
    let series = result
        .meta
        .models
        .iter()
        .map(|model| Series {
            name: model.clone(),
            values: result
                .meta
                .powers
                .iter()
                .map(|&p| {
                    result
                        .summary
                        .iter()
                        .find(|s| &s.model == model && s.power_percent.to_bits() == p.to_bits())
                        .map(|s| s.a_avr)
                })
                .collect(),
        })
        .collect();
    LineChart {
        title: "average normalized accuracy per layer".into(),
        x_label: "noise power".into(),
        y_label: "A_avr".into(),
        x_ticks: result.meta.powers.iter().map(|&p| power_label(p)).collect(),
        series,
    }
}

pub fn summary_text(result: &ExperimentResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "design: {}  dataset: {}  seed: {}  trials: {}",
        result.meta.design, result.meta.dataset, result.meta.seed, result.meta.trials
    );
    let _ = writeln!(s);
    let width = result.meta.models.iter().map(|m| m.len()).max().unwrap_or(5).max(5);
    let _ = write!(s, "{:<width$}  {:>9}", "model", "baseline");
    for p in &result.meta.powers {
        let _ = write!(s, "  {:>9}", format!("{p}%"));
    }
    let _ = writeln!(s);
    for model in &result.meta.models {
        let _ = write!(
            s,
            "{:<width$}  {:>8.2}%",
            model,
            100.0 * result.baseline(model).unwrap_or(f64::NAN)
        );
        for &p in &result.meta.powers {
            let a = result
                .summary
                .iter()
                .find(|r| &r.model == model && r.power_percent.to_bits() == p.to_bits())
                .map(|r| r.a_avr);
            match a {
                Some(a) => {
                    let _ = write!(s, "  {:>8.2}%", 100.0 * a);
                }
                None => {
                    let _ = write!(s, "  {:>9}", "-");
                }
            }
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "cells are A_avr: trial-averaged accuracy over baseline, averaged over plan instances");
    s
}

/// Charts for a result, keyed by output file name.
pub fn charts(result: &ExperimentResult) -> Result<Vec<(String, LineChart)>, ExperimentError> {
    let mut out = Vec::new();
    match result.meta.design {
        Design::AllLayers => out.push(("all_layers.svg".to_string(), all_layers_chart(result)?)),
        Design::SingleLayerSweep | Design::PrefixSweep => {
            let (tag, prefix) = if result.meta.design == Design::PrefixSweep {
                (PlanTag::Prefix, "prefix")
            } else {
                (PlanTag::Single, "single_layer")
            };
            for model in &result.meta.models {
                out.push((format!("{prefix}_{}.svg", file_stem(model)), layer_chart(result, model, tag)?));
            }
        }
        Design::ModelComparison => {
            out.push(("model_comparison.svg".to_string(), comparison_chart(result)));
            for model in &result.meta.models {
                out.push((
                    format!("single_layer_{}.svg", file_stem(model)),
                    layer_chart(result, model, PlanTag::Single)?,
                ));
            }
        }
    }
    Ok(out)
}

/// Write every chart plus `summary.txt` into `dir`.
pub fn render_report(result: &ExperimentResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ExperimentError> {
    if !result.meta.complete {
        return Err(ExperimentError::Incomplete("render a report"));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    for (name, chart) in charts(result)? {
        let path = dir.join(name);
        write_atomic(&path, chart.to_svg().as_bytes())?;
        written.push(path);
    }
    let path = dir.join("summary.txt");
    write_atomic(&path, summary_text(result).as_bytes())?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_polyline_per_series() {
        let chart = LineChart {
            title: "t <&>".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            x_ticks: vec!["1".into(), "2".into(), "3".into()],
            series: vec![
                Series {
                    name: "a".into(),
                    values: vec![Some(1.0), Some(0.5), Some(0.2)],
                },
                Series {
                    name: "b".into(),
                    values: vec![Some(0.9), None, Some(0.1)],
                },
            ],
        };
        let svg = chart.to_svg();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t &lt;&amp;&gt;"));
        assert_eq!(svg, chart.to_svg());
    }

    #[test]
    fn power_labels() {
        assert_eq!(power_label(60.0), "60% (SNR 1.67)");
        assert_eq!(power_label(0.0), "0% (clean)");
    }
}
