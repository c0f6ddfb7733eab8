//! Curve CSVs, score key/value text and standalone SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Curve, Evaluation, Scores, REALTIME_FPS};
use crate::error::{Error, Result};

pub fn write_curve_csv(curve: &Curve, path: &Path) -> Result<()> {
    let mut out = String::from("threshold,value\n");
    for (t, v) in curve.thresholds.iter().zip(&curve.values) {
        let _ = writeln!(out, "{t},{v}");
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_curve_csv(path: &Path) -> Result<Curve> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut curve = Curve {
        thresholds: Vec::new(),
        values: Vec::new(),
    };
    for (i, line) in text.lines().enumerate().skip(1) {
        let err = |detail: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail: detail.to_string(),
        };
        let (t, v) = line.split_once(',').ok_or_else(|| err("expected `threshold,value`"))?;
        curve.thresholds.push(t.trim().parse().map_err(|_| err("bad threshold"))?);
        curve.values.push(v.trim().parse().map_err(|_| err("bad value"))?);
    }
    if curve.values.is_empty() {
        return Err(Error::Format(format!("{} holds no curve points", path.display())));
    }
    Ok(curve)
}

pub fn format_scores(scores: &Scores) -> String {
    format!(
        "accuracy={}\nrobustness={}\noverall={}\nfps={}\n",
        scores.accuracy, scores.robustness, scores.overall, scores.fps
    )
}

pub fn write_scores(scores: &Scores, path: &Path) -> Result<()> {
    fs::write(path, format_scores(scores)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A line plot of `curve` on the unit square, with tick labels every 0.2.
pub fn render_svg(curve: &Curve, title: &str, x_label: &str, y_label: &str) -> String {
    let pw = W - 2.0 * MARGIN;
    let ph = H - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + x.clamp(0.0, 1.0) * pw;
    let py = |y: f64| H - MARGIN - y.clamp(0.0, 1.0) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v:.1}</text>"#,
            px(v),
            H - MARGIN + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.1}</text>"#,
            MARGIN - 6.0,
            py(v) + 4.0
        );
    }
    let points: Vec<String> = curve
        .thresholds
        .iter()
        .zip(&curve.values)
        .map(|(&t, &v)| format!("{:.2},{:.2}", px(t), py(v)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    s.push_str("</svg>\n");
    s
}

pub(crate) const TP_TITLE: (&str, &str, &str) = ("TP vs ROT", "region overlap threshold", "true positive rate");
pub(crate) const FR_TITLE: (&str, &str, &str) = ("FR vs RT", "reinitialization threshold", "failure rate");

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Write `tp_rot.csv`, `fr_rt.csv`, `scores.txt`, `tp_rot.svg` and `fr_rt.svg`.
pub fn export_curves(eval: &Evaluation, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    write_curve_csv(&eval.tp_rot, &out_dir.join("tp_rot.csv"))?;
    write_curve_csv(&eval.fr_rt, &out_dir.join("fr_rt.csv"))?;
    write_scores(&eval.scores, &out_dir.join("scores.txt"))?;
    plot_dir(out_dir)
}

/// Regenerate both SVGs from the CSVs stored in `dir`.
pub fn plot_dir(dir: &Path) -> Result<()> {
    for (stem, (title, x, y)) in [("tp_rot", TP_TITLE), ("fr_rt", FR_TITLE)] {
        let curve = read_curve_csv(&dir.join(format!("{stem}.csv")))?;
        write(&dir.join(format!("{stem}.svg")), &render_svg(&curve, title, x, y))?;
    }
    Ok(())
}

/// Bar-style SVG of a throughput measurement against the real-time line.
pub fn render_fps_svg(fps: f64) -> String {
    let top = (fps.max(REALTIME_FPS) * 1.25).max(1.0);
    let ph = H - 2.0 * MARGIN;
    let y = |v: f64| H - MARGIN - v / top * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{:.1}" y="{:.1}" width="80" height="{:.1}" fill="steelblue"/>"#,
        W / 2.0 - 40.0,
        y(fps),
        H - MARGIN - y(fps)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="firebrick" stroke-dasharray="6 4"/>"#,
        W - MARGIN,
        y(REALTIME_FPS),
        y(REALTIME_FPS)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{REALTIME_FPS} FPS real-time</text>"#,
        W - MARGIN,
        y(REALTIME_FPS) - 4.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" font-size="14" text-anchor="middle">{fps:.1} FPS</text>"#,
        W / 2.0
    );
    s.push_str("</svg>\n");
    s
}
