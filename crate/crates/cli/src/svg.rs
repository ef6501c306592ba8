//! Minimal static line charts.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub values: &'a [f64],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

/// Renders `series` against `x`. Non-finite samples split a line into
/// separate polylines, so missing data shows as a gap.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, x: &[f64], series: &[Series]) -> Result<String, String> {
    if x.is_empty() {
        return Err("cannot plot an empty series".into());
    }
    for s in series {
        if s.values.len() != x.len() {
            return Err(format!(
                "series {} has {} samples, expected {}",
                s.label,
                s.values.len(),
                x.len()
            ));
        }
    }
    let (x0, x1) = range(x.iter().copied());
    let (y0, y1) = range(series.iter().flat_map(|s| s.values.iter().copied()));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + (v - x0) / (x1 - x0) * pw;
    let py = |v: f64| TOP + (y1 - v) / (y1 - y0) * ph;

    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        w,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="gray"/>"#
    );
    for (v, anchor_y) in [(y0, TOP + ph), (y1, TOP)] {
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.3}</text>"#,
            LEFT - 6.0,
            anchor_y + 4.0
        );
    }
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{v:.2}</text>"#,
            px(v),
            TOP + ph + 16.0
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        w,
        r#"<text x="16" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let _ = writeln!(w, r#"<g class="series" data-label="{}">"#, escape(s.label));
        let mut run: Vec<(f64, f64)> = Vec::new();
        let flush = |run: &mut Vec<(f64, f64)>, w: &mut String| {
            match run.len() {
                0 => {}
                1 => {
                    let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{}"/>"#, run[0].0, run[0].1, s.color);
                }
                _ => {
                    let pts: Vec<String> = run.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
                    let _ = writeln!(
                        w,
                        r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                        s.color,
                        pts.join(" ")
                    );
                }
            }
            run.clear();
        };
        for (&t, &v) in x.iter().zip(s.values) {
            if v.is_finite() && t.is_finite() {
                run.push((px(t), py(v)));
            } else {
                flush(&mut run, w);
            }
        }
        flush(&mut run, w);
        let _ = writeln!(w, "</g>");
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            w,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#,
            lx + 20.0,
            s.color
        );
        let _ = writeln!(
            w,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    let _ = writeln!(w, "</svg>");
    Ok(out)
}

/// The plotted series as CSV, `NaN` where a value is missing.
pub fn sidecar_csv(x_name: &str, x: &[f64], series: &[Series]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{x_name}");
    for s in series {
        let _ = write!(out, ",{}", s.label);
    }
    out.push('\n');
    for (i, t) in x.iter().enumerate() {
        let _ = write!(out, "{t}");
        for s in series {
            let _ = write!(out, ",{}", s.values[i]);
        }
        out.push('\n');
    }
    out
}
