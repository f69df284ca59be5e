//! CSV tables and the robustness plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mpc_core::metrics::REPORT_SCALE;
use mpc_core::training::{AblationRow, RobustnessRow, ShapeEval};
use mpc_core::DirectionalErrors;

/// First line of every metrics CSV.
pub fn scale_comment() -> String {
    format!("# squared Chamfer distances, mean over points, multiplied by {REPORT_SCALE}\n")
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn errors_fields(e: &DirectionalErrors) -> [String; 3] {
    let s = e.scaled();
    [fmt(s.pred_to_gt), fmt(s.gt_to_pred), fmt(s.chamfer)]
}

fn to_csv(header: &[&str], rows: Vec<Vec<String>>) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
    Ok(scale_comment() + &body)
}

/// Groups per-shape values by category (sorted), followed by `overall`
/// over all shapes. Categories without shapes do not appear.
fn grouped<T: Copy>(items: impl Iterator<Item = (String, T)>) -> Vec<(String, Vec<T>)> {
    let mut by_cat: BTreeMap<String, Vec<T>> = BTreeMap::new();
    let mut all = Vec::new();
    for (cat, v) in items {
        by_cat.entry(cat).or_default().push(v);
        all.push(v);
    }
    let mut out: Vec<_> = by_cat.into_iter().collect();
    out.push(("overall".to_string(), all));
    out
}

fn mean(v: &[DirectionalErrors]) -> DirectionalErrors {
    DirectionalErrors::mean(v).expect("groups are non-empty")
}

/// Per-category and overall means: `pred_to_gt` first, then `gt_to_pred`.
pub fn eval_csv(evals: &[ShapeEval]) -> anyhow::Result<String> {
    let rows = grouped(evals.iter().map(|e| (e.category.clone(), e.errors)))
        .into_iter()
        .map(|(cat, errs)| {
            let mut r = vec![cat, errs.len().to_string()];
            r.extend(errors_fields(&mean(&errs)));
            r
        })
        .collect();
    to_csv(&["category", "shapes", "pred_to_gt", "gt_to_pred", "chamfer"], rows)
}

/// With and without refinement, both directions each.
pub fn ablation_csv(rows: &[AblationRow]) -> anyhow::Result<String> {
    let rows = grouped(rows.iter().map(|r| (r.category.clone(), (r.refined, r.unrefined))))
        .into_iter()
        .map(|(cat, pairs)| {
            let (with, without): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let mut r = vec![cat, with.len().to_string()];
            r.extend(errors_fields(&mean(&with)));
            r.extend(errors_fields(&mean(&without)));
            r
        })
        .collect();
    to_csv(
        &[
            "category",
            "shapes",
            "refined_pred_to_gt",
            "refined_gt_to_pred",
            "refined_chamfer",
            "unrefined_pred_to_gt",
            "unrefined_gt_to_pred",
            "unrefined_chamfer",
        ],
        rows,
    )
}

/// One row per radius, radii printed as given.
pub fn robustness_csv(rows: &[RobustnessRow]) -> anyhow::Result<String> {
    let rows = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.radius.to_string()];
            v.extend(errors_fields(&r.errors));
            v
        })
        .collect();
    to_csv(&["radius", "pred_to_gt", "gt_to_pred", "chamfer"], rows)
}

/// Mean Chamfer distance against radius as a polyline with labelled axes.
pub fn robustness_svg(rows: &[RobustnessRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 60.0;
    let xs: Vec<f64> = rows.iter().map(|r| r.radius).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.errors.scaled().chamfer).collect();
    let (x0, x1) = (xs[0], xs[xs.len() - 1]);
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let y1 = ys.iter().copied().fold(0.0, f64::max);
    let y1 = if y1 > 0.0 { y1 * 1.1 } else { 1.0 };
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - y / y1 * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{:.2} {:.2} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        LEFT,
        TOP,
        H - BOTTOM,
        W - RIGHT
    );
    for &x in &xs {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" font-size="12" text-anchor="middle">{x}</text>"#,
            px(x),
            H - BOTTOM,
            H - BOTTOM + 5.0,
            H - BOTTOM + 20.0
        );
    }
    for i in 0..=4 {
        let y = y1 * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="black"/><text x="{3:.2}" y="{4:.2}" font-size="12" text-anchor="end">{y:.2}</text>"#,
            LEFT - 5.0,
            py(y),
            LEFT,
            LEFT - 8.0,
            py(y) + 4.0
        );
    }
    let points: Vec<String> = xs.iter().zip(&ys).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, points.join(" "));
    for p in &points {
        let (x, y) = p.split_once(',').expect("formatted above");
        let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="steelblue"/>"#);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">missing region radius</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0:.2}" font-size="14" text-anchor="middle" transform="rotate(-90 20 {0:.2})">mean Chamfer distance (x{REPORT_SCALE})</text>"#,
        (TOP + H - BOTTOM) / 2.0
    );
    s.push_str("</svg>\n");
    s
}
