//! CSV and SVG emission for scans, distributions, training logs, and
//! win-rate reports. Every CSV has a header row and a stable column order;
//! floats print with six decimals except win rates, which use the exact
//! two-decimal rounding from [`crate::analysis`].

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{RewardDistribution, ScanCoord, ScanPoint, WinRateReport};
use crate::error::{Error, Result};
use crate::rlhf::StepStats;
use crate::training::LossLogRow;

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

pub fn line_scan_csv(points: &[ScanPoint]) -> Result<String> {
    let mut out = String::from("alpha,mean,std,n\n");
    for p in points {
        let ScanCoord::Alpha(a) = p.coord else {
            return Err(Error::InvalidArgument(
                "line scan CSV needs alpha coordinates".into(),
            ));
        };
        writeln!(
            out,
            "{a:.6},{:.6},{:.6},{}",
            p.mean_reward, p.std_reward, p.n_samples
        )
        .expect("string write");
    }
    Ok(out)
}

pub fn write_line_scan_csv(path: &Path, points: &[ScanPoint]) -> Result<()> {
    write_file(path, &line_scan_csv(points)?)
}

pub fn plane_scan_csv(points: &[ScanPoint]) -> Result<String> {
    let mut out = String::from("w1,w2,w3,mean,std,n\n");
    for p in points {
        let ScanCoord::Barycentric(w1, w2, w3) = p.coord else {
            return Err(Error::InvalidArgument(
                "plane scan CSV needs barycentric coordinates".into(),
            ));
        };
        writeln!(
            out,
            "{w1:.6},{w2:.6},{w3:.6},{:.6},{:.6},{}",
            p.mean_reward, p.std_reward, p.n_samples
        )
        .expect("string write");
    }
    Ok(out)
}

pub fn write_plane_scan_csv(path: &Path, points: &[ScanPoint]) -> Result<()> {
    write_file(path, &plane_scan_csv(points)?)
}

pub fn distribution_csv(dist: &RewardDistribution) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (lo, hi, count) in &dist.histogram {
        writeln!(out, "{lo:.6},{hi:.6},{count}").expect("string write");
    }
    out
}

pub fn write_distribution_csv(path: &Path, dist: &RewardDistribution) -> Result<()> {
    write_file(path, &distribution_csv(dist))
}

pub fn winrate_csv(rows: &[(String, WinRateReport)]) -> String {
    let mut out = String::from("tag,wins,losses,ties,win_rate,adj_win_rate\n");
    for (tag, r) in rows {
        writeln!(
            out,
            "{tag},{},{},{},{},{}",
            r.wins,
            r.losses,
            r.ties,
            r.win_rate_2dp(),
            r.adjusted_win_rate_2dp()
        )
        .expect("string write");
    }
    out
}

pub fn write_winrate_csv(path: &Path, rows: &[(String, WinRateReport)]) -> Result<()> {
    write_file(path, &winrate_csv(rows))
}

pub fn steps_csv(log: &[StepStats]) -> String {
    let mut out = String::from("step,mean_reward,mean_kl,mean_resp_len,loss,alarm_flag\n");
    for s in log {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            s.step,
            s.mean_reward,
            s.mean_kl,
            s.mean_resp_len,
            s.loss,
            u8::from(s.alarm)
        )
        .expect("string write");
    }
    out
}

pub fn write_steps_csv(path: &Path, log: &[StepStats]) -> Result<()> {
    write_file(path, &steps_csv(log))
}

pub fn train_log_csv(log: &[LossLogRow]) -> String {
    let mut out = String::from("step,split,loss\n");
    for r in log {
        writeln!(out, "{},{},{:.6}", r.step, r.split, r.loss).expect("string write");
    }
    out
}

pub fn write_train_log_csv(path: &Path, log: &[LossLogRow]) -> Result<()> {
    write_file(path, &train_log_csv(log))
}

// ---------------------------------------------------------------------------
// Self-contained SVG plots
// ---------------------------------------------------------------------------

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 420.0;
const MARGIN: f64 = 60.0;

fn svg_open(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"monospace\" font-size=\"12\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n"
        ),
        w = SVG_W,
        h = SVG_H,
        tx = SVG_W / 2.0,
        title = title
    )
}

struct Axes {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Axes {
    fn of(xs: &[f64], ys: &[f64]) -> Self {
        let (mut x_lo, mut x_hi) = min_max(xs);
        let (mut y_lo, mut y_hi) = min_max(ys);
        if x_hi == x_lo {
            x_hi = x_lo + 1.0;
        }
        if y_hi == y_lo {
            y_hi = y_lo + 1.0;
        }
        let pad = (y_hi - y_lo) * 0.08;
        y_lo -= pad;
        y_hi += pad;
        let xpad = (x_hi - x_lo) * 0.04;
        x_lo -= xpad;
        x_hi += xpad;
        Axes { x_lo, x_hi, y_lo, y_hi }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_lo) / (self.x_hi - self.x_lo) * (SVG_W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - MARGIN - (y - self.y_lo) / (self.y_hi - self.y_lo) * (SVG_H - 2.0 * MARGIN)
    }

    fn frame(&self, x_label: &str, y_label: &str) -> String {
        let mut s = String::new();
        let (x0, y0) = (MARGIN, SVG_H - MARGIN);
        let (x1, y1) = (SVG_W - MARGIN, MARGIN);
        writeln!(
            s,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
        )
        .unwrap();
        writeln!(
            s,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
        )
        .unwrap();
        for i in 0..=4 {
            let fx = self.x_lo + (self.x_hi - self.x_lo) * i as f64 / 4.0;
            let fy = self.y_lo + (self.y_hi - self.y_lo) * i as f64 / 4.0;
            writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.2}</text>",
                self.px(fx),
                SVG_H - MARGIN + 18.0,
                fx
            )
            .unwrap();
            writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.2}</text>",
                MARGIN - 6.0,
                self.py(fy) + 4.0,
                fy
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>",
            SVG_W / 2.0,
            SVG_H - 14.0
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>",
            SVG_H / 2.0,
            SVG_H / 2.0
        )
        .unwrap();
        s
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Mean-reward curve with one-sigma whiskers (line scans, step series).
pub fn svg_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(f64, f64, f64)],
) -> String {
    let xs: Vec<f64> = series.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|p| [p.1 - p.2, p.1 + p.2])
        .collect();
    let ax = Axes::of(&xs, &ys);
    let mut s = svg_open(title);
    s.push_str(&ax.frame(x_label, y_label));
    let mut path = String::from("<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"");
    for (x, y, _) in series {
        write!(path, "{:.1},{:.1} ", ax.px(*x), ax.py(*y)).unwrap();
    }
    path.push_str("\"/>\n");
    s.push_str(&path);
    for (x, y, std) in series {
        writeln!(
            s,
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"#1f77b4\" stroke-width=\"1\"/>",
            ax.px(*x),
            ax.py(*y - *std),
            ax.py(*y + *std)
        )
        .unwrap();
        writeln!(
            s,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#1f77b4\"/>",
            ax.px(*x),
            ax.py(*y)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_line_scan_svg(path: &Path, title: &str, points: &[ScanPoint]) -> Result<()> {
    let series: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|p| {
            let ScanCoord::Alpha(a) = p.coord else {
                return Err(Error::InvalidArgument("need alpha coords".into()));
            };
            Ok((a, p.mean_reward, p.std_reward))
        })
        .collect::<Result<_>>()?;
    write_file(path, &svg_line_chart(title, "alpha", "mean reward", &series))
}

fn heat_color(t: f64) -> String {
    // blue (low) to red (high)
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t) as u8;
    let b = (255.0 * (1.0 - t)) as u8;
    let g = (96.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8 + 32;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Barycentric heatmap: each lattice point drawn at its 2-D embedding,
/// colored by mean reward.
pub fn svg_plane_heatmap(title: &str, points: &[ScanPoint]) -> Result<String> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut means = Vec::new();
    for p in points {
        let ScanCoord::Barycentric(w1, w2, w3) = p.coord else {
            return Err(Error::InvalidArgument("need barycentric coords".into()));
        };
        // standard embedding: vertices at (0,0), (1,0), (0.5, sqrt(3)/2)
        xs.push(w2 + 0.5 * w3);
        ys.push(w3 * 3f64.sqrt() / 2.0);
        means.push(p.mean_reward);
        let _ = w1;
    }
    let (lo, hi) = min_max(&means);
    let ax = Axes::of(&xs, &ys);
    let mut s = svg_open(title);
    s.push_str(&ax.frame("triangle plane", "reward heat"));
    for i in 0..points.len() {
        let t = if hi > lo { (means[i] - lo) / (hi - lo) } else { 0.5 };
        writeln!(
            s,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"7\" fill=\"{}\"><title>{:.4}</title></circle>",
            ax.px(xs[i]),
            ax.py(ys[i]),
            heat_color(t),
            means[i]
        )
        .expect("string write");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_plane_scan_svg(path: &Path, title: &str, points: &[ScanPoint]) -> Result<()> {
    write_file(path, &svg_plane_heatmap(title, points)?)
}

pub fn svg_histogram(title: &str, dist: &RewardDistribution) -> String {
    let xs: Vec<f64> = dist
        .histogram
        .iter()
        .flat_map(|(lo, hi, _)| [*lo, *hi])
        .collect();
    let counts: Vec<f64> = dist.histogram.iter().map(|b| b.2 as f64).collect();
    let ax = Axes::of(&xs, &[0.0, counts.iter().cloned().fold(1.0, f64::max)]);
    let mut s = svg_open(title);
    s.push_str(&ax.frame("reward", "count"));
    for (lo, hi, count) in &dist.histogram {
        let x = ax.px(*lo);
        let w = (ax.px(*hi) - x).max(1.0) - 1.0;
        let y = ax.py(*count as f64);
        let h = ax.py(0.0) - y;
        writeln!(
            s,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{w:.1}\" height=\"{h:.1}\" fill=\"#1f77b4\" opacity=\"0.8\"/>"
        )
        .expect("string write");
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_distribution_svg(path: &Path, title: &str, dist: &RewardDistribution) -> Result<()> {
    write_file(path, &svg_histogram(title, dist))
}

/// Horizontal bars of adjusted win rates with a 50% reference line.
pub fn svg_winrate_bars(title: &str, rows: &[(String, WinRateReport)]) -> String {
    let mut s = svg_open(title);
    let n = rows.len().max(1);
    let band = (SVG_H - 2.0 * MARGIN) / n as f64;
    let scale = |v: f64| MARGIN + v / 100.0 * (SVG_W - 2.0 * MARGIN);
    writeln!(
        s,
        "<line x1=\"{0:.1}\" y1=\"{1}\" x2=\"{0:.1}\" y2=\"{2}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>",
        scale(50.0),
        MARGIN,
        SVG_H - MARGIN
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">50</text>",
        scale(50.0),
        SVG_H - MARGIN + 18.0
    )
    .unwrap();
    for (i, (tag, r)) in rows.iter().enumerate() {
        let y = MARGIN + i as f64 * band + band * 0.2;
        let h = band * 0.6;
        let v = r.adjusted_win_rate;
        let color = if v >= 50.0 { "#2ca02c" } else { "#d62728" };
        writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{color}\" opacity=\"0.85\"/>",
            scale(0.0),
            scale(v) - scale(0.0)
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\">{tag} ({})</text>",
            scale(0.0) + 4.0,
            y + h * 0.7,
            r.adjusted_win_rate_2dp()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_winrate_svg(path: &Path, title: &str, rows: &[(String, WinRateReport)]) -> Result<()> {
    write_file(path, &svg_winrate_bars(title, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points() -> Vec<ScanPoint> {
        vec![
            ScanPoint {
                coord: ScanCoord::Alpha(0.0),
                mean_reward: 1.0,
                std_reward: 0.2,
                n_samples: 8,
            },
            ScanPoint {
                coord: ScanCoord::Alpha(0.5),
                mean_reward: 1.5,
                std_reward: 0.1,
                n_samples: 8,
            },
        ]
    }

    #[test]
    fn csv_headers_and_rows_are_stable() {
        let csv = line_scan_csv(&points()).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "alpha,mean,std,n");
        assert_eq!(lines.next().unwrap(), "0.000000,1.000000,0.200000,8");

        let report = WinRateReport::from_counts(29, 21, 110, "oracle", 0.25);
        let csv = winrate_csv(&[("salsa_vs_ppo".to_string(), report)]);
        assert!(csv.starts_with("tag,wins,losses,ties,win_rate,adj_win_rate\n"));
        assert!(csv.contains("salsa_vs_ppo,29,21,110,18.12,52.50"));
    }

    #[test]
    fn line_csv_rejects_plane_points() {
        let bad = vec![ScanPoint {
            coord: ScanCoord::Barycentric(1.0, 0.0, 0.0),
            mean_reward: 0.0,
            std_reward: 0.0,
            n_samples: 1,
        }];
        assert!(line_scan_csv(&bad).is_err());
        assert!(plane_scan_csv(&points()).is_err());
    }

    #[test]
    fn svg_emission_is_well_formed() {
        let svg = svg_line_chart("scan", "alpha", "reward", &[(0.0, 1.0, 0.1), (1.0, 2.0, 0.2)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("polyline"));

        let report = WinRateReport::from_counts(3, 1, 6, "oracle", 0.25);
        let svg = svg_winrate_bars("winrates", &[("a_vs_b".into(), report)]);
        assert!(svg.contains("a_vs_b"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
