//! Minimal hand-rendered SVG line charts: mean with standard-error bars
//! versus sample size, one series per method, no external renderer.

use crate::sweep::Aggregate;
use std::collections::BTreeMap;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 140.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Series {
    method: String,
    points: Vec<(f64, f64, f64)>, // (n, mean, se)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// One SVG per (metric, target) pair that has at least two distinct n values.
pub fn write_plots(aggs: &[Aggregate], out_dir: &Path) -> anyhow::Result<()> {
    let mut groups: BTreeMap<(String, String), BTreeMap<String, Vec<(f64, f64, f64)>>> =
        BTreeMap::new();
    for a in aggs {
        groups
            .entry((a.metric.clone(), a.target.clone()))
            .or_default()
            .entry(a.method.clone())
            .or_default()
            .push((a.n as f64, a.mean, a.se));
    }
    for ((metric, target), methods) in groups {
        let distinct_n: std::collections::BTreeSet<u64> = methods
            .values()
            .flatten()
            .map(|&(n, _, _)| n as u64)
            .collect();
        if distinct_n.len() < 2 {
            continue;
        }
        let series: Vec<Series> = methods
            .into_iter()
            .map(|(method, mut points)| {
                points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                Series { method, points }
            })
            .collect();
        let svg = render(&metric, &target, &series);
        let file = format!("plot_{}_{}.svg", sanitize(&metric), sanitize(&target));
        std::fs::write(out_dir.join(file), svg)?;
    }
    Ok(())
}

fn render(metric: &str, target: &str, series: &[Series]) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min).ln();
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ln();
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(_, mean, se) in &s.points {
            y_min = y_min.min(mean - se);
            y_max = y_max.max(mean + se);
        }
    }
    if !(y_max > y_min) {
        y_max = y_min + 1.0;
    }
    let pad = 0.06 * (y_max - y_min);
    let (y_lo, y_hi) = (y_min - pad, y_max + pad);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x_of = |n: f64| {
        let t = if x_max > x_min { (n.ln() - x_min) / (x_max - x_min) } else { 0.5 };
        MARGIN_L + t * plot_w
    };
    let y_of = |v: f64| MARGIN_T + (1.0 - (v - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{} — {}</text>\n",
        MARGIN_L + plot_w / 2.0,
        metric,
        target
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    ));
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h
    ));
    // x ticks at observed n values
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ticks.dedup();
    for &n in &ticks {
        let x = x_of(n);
        out.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"black\"/>\n",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_T + plot_h + 20.0,
            n as u64
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">n</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    // y ticks: 5 evenly spaced
    for k in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let y = y_of(v);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{MARGIN_L}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            MARGIN_L - 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 9.0,
            y + 4.0,
            trim_sig(v)
        ));
    }
    // series
    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(n, mean, _)| format!("{:.2},{:.2}", x_of(n), y_of(mean)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for &(n, mean, se) in &s.points {
            let x = x_of(n);
            out.push_str(&format!(
                "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                y_of(mean)
            ));
            if se > 0.0 {
                out.push_str(&format!(
                    "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"1.2\"/>\n",
                    y_of(mean - se),
                    y_of(mean + se)
                ));
                for dy in [mean - se, mean + se] {
                    out.push_str(&format!(
                        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"1.2\"/>\n",
                        x - 3.0,
                        y_of(dy),
                        x + 3.0,
                        y_of(dy)
                    ));
                }
            }
        }
        // legend
        let ly = MARGIN_T + 14.0 + 18.0 * si as f64;
        let lx = MARGIN_L + plot_w + 12.0;
        out.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            lx + 18.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            lx + 23.0,
            ly + 4.0,
            s.method
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn trim_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 0.01 && v.abs() < 10_000.0 {
        let s = format!("{v:.3}");
        return s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    format!("{v:.3e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_valid_svg_per_metric_target() {
        let aggs = vec![
            Aggregate {
                n: 1000, m: None, method: "hcl-gd".into(), target: "global".into(),
                metric: "err".into(), mean: 2.0, se: 0.1, count: 20,
            },
            Aggregate {
                n: 2000, m: None, method: "hcl-gd".into(), target: "global".into(),
                metric: "err".into(), mean: 1.4, se: 0.08, count: 20,
            },
            Aggregate {
                n: 1000, m: None, method: "naive-svd".into(), target: "global".into(),
                metric: "err".into(), mean: 2.5, se: 0.12, count: 20,
            },
            Aggregate {
                n: 2000, m: None, method: "naive-svd".into(), target: "global".into(),
                metric: "err".into(), mean: 1.9, se: 0.1, count: 20,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        write_plots(&aggs, dir.path()).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("plot_err_global.svg")).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("hcl-gd"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn single_n_produces_no_plot() {
        let aggs = vec![Aggregate {
            n: 1000, m: None, method: "hcl-gd".into(), target: "global".into(),
            metric: "err".into(), mean: 2.0, se: 0.1, count: 20,
        }];
        let dir = tempfile::tempdir().unwrap();
        write_plots(&aggs, dir.path()).unwrap();
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
    }
}
