//! Minimal SVG charts for training curves and sweep results.

use std::fmt::Write as _;

use crate::eval::SweepRecord;
use crate::marl::CurvePoint;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>"#,
        W / 2.0
    );
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y_range: (f64, f64)) {
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle" font-family="sans-serif" font-size="12">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (y, v) in [(H - PAD, y_range.0), (PAD, y_range.1)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3}</text>"#,
            PAD - 4.0,
            y + 4.0
        );
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Mean per-agent-step reward against environment steps.
pub fn curve_svg(curve: &[CurvePoint], title: &str) -> String {
    let mut s = header(title);
    let xr = range(curve.iter().map(|c| c.env_steps as f64));
    let yr = range(curve.iter().map(|c| c.mean_episode_reward));
    axes(&mut s, "environment steps", "mean step reward", yr);
    let pts: Vec<String> = curve
        .iter()
        .map(|c| {
            let x = PAD + (c.env_steps as f64 - xr.0) / (xr.1 - xr.0) * (W - 2.0 * PAD);
            let y = H - PAD - (c.mean_episode_reward - yr.0) / (yr.1 - yr.0) * (H - 2.0 * PAD);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        pts.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

/// Mean total reward per grid point as bars, with ±std whiskers.
pub fn sweep_svg(records: &[SweepRecord], title: &str) -> String {
    let mut s = header(title);
    let yr = range(
        records
            .iter()
            .flat_map(|r| [r.mean - r.std, r.mean + r.std, 0.0]),
    );
    axes(&mut s, "grid point", "total reward", yr);
    let to_y = |v: f64| H - PAD - (v - yr.0) / (yr.1 - yr.0) * (H - 2.0 * PAD);
    let slot = (W - 2.0 * PAD) / records.len().max(1) as f64;
    let zero = to_y(0.0);
    for (k, r) in records.iter().enumerate() {
        let x = PAD + k as f64 * slot + 0.15 * slot;
        let y = to_y(r.mean);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4c72b0"><title>{}: {:.3}</title></rect>"##,
            y.min(zero),
            0.7 * slot,
            (y - zero).abs(),
            crate::eval::grid_label(&r.hyperparams),
            r.mean
        );
        let cx = x + 0.35 * slot;
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            to_y(r.mean - r.std),
            to_y(r.mean + r.std)
        );
    }
    s.push_str("</svg>\n");
    s
}
