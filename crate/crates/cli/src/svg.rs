//! Minimal hand-written SVG figures.

use std::fmt::Write;

use vqmpt::env2d::{Config2D, Obstacle, World};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const SIZE: f64 = 512.0;

/// Obstacles, the path and the endpoints; the workspace's `y` axis points up.
pub fn world_svg(world: &World, start: Config2D, goal: Config2D, path: Option<&[Config2D]>) -> String {
    let k = SIZE / world.side;
    let px = |q: Config2D| (q.x * k, SIZE - q.y * k);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="#ffffff" stroke="#000000"/>"##);
    for o in &world.obstacles {
        match *o {
            Obstacle::Rect { x, y, w, h } => {
                let _ = writeln!(s, r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#555555"/>"##, x * k, SIZE - (y + h) * k, w * k, h * k);
            }
            Obstacle::Circle { cx, cy, r } => {
                let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#555555"/>"##, cx * k, SIZE - cy * k, r * k);
            }
        }
    }
    if let Some(p) = path {
        let pts: Vec<String> = p.iter().map(|&q| {
            let (x, y) = px(q);
            format!("{x:.2},{y:.2}")
        }).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, pts.join(" "), PALETTE[0]);
    }
    for (q, c) in [(start, PALETTE[2]), (goal, PALETTE[1])] {
        let (x, y) = px(q);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{c}"/>"#);
    }
    s.push_str("</svg>\n");
    s
}

/// Percentage of problems solved by time `t` for each planner, as step curves over `[0, cutoff]`.
pub fn success_curve_svg(series: &[(String, Vec<f64>)], problems: usize, cutoff: f64) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let (pw, ph) = (w - 2.0 * m, h - 2.0 * m);
    let tmax = if cutoff > 0.0 { cutoff } else { 1.0 };
    let x = |t: f64| m + pw * (t / tmax).clamp(0.0, 1.0);
    let y = |pct: f64| m + ph * (1.0 - pct / 100.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r##"<rect x="{m}" y="{m}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>"##);
    for i in 0..=4 {
        let pct = 25.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{pct:.0}%</text>"#, m - 6.0, y(pct) + 4.0);
        let t = tmax * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.3}</text>"#, x(t), h - m + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">planning time (s)</text>"#, m + pw / 2.0, h - 8.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">solved</text>"#, m + ph / 2.0, m + ph / 2.0);
    for (i, (name, times)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut sorted: Vec<f64> = times.iter().copied().filter(|t| *t <= tmax).collect();
        sorted.sort_by(f64::total_cmp);
        let mut pts = vec![format!("{:.2},{:.2}", x(0.0), y(0.0))];
        for (k, &t) in sorted.iter().enumerate() {
            let before = 100.0 * k as f64 / problems.max(1) as f64;
            let after = 100.0 * (k + 1) as f64 / problems.max(1) as f64;
            pts.push(format!("{:.2},{:.2}", x(t), y(before)));
            pts.push(format!("{:.2},{:.2}", x(t), y(after)));
        }
        let last = 100.0 * sorted.len() as f64 / problems.max(1) as f64;
        pts.push(format!("{:.2},{:.2}", x(tmax), y(last)));
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = m + 16.0 * (i as f64 + 1.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{name}</text>"#, m + 8.0);
    }
    s.push_str("</svg>\n");
    s
}
