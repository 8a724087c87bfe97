use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::bpe::Vocab;
use crate::data::{stratified_subsample, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::{finetune, TrainConfig};

use super::mean_std;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub ratio: f64,
    pub seed: u64,
    pub f1: f64,
}

/// Parses `0.1,0.5,1.0`, requiring strictly ascending values in (0, 1].
pub fn parse_ratios(text: &str) -> Result<Vec<f64>> {
    let ratios = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("invalid ratio `{}`", s.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    check_ratios(&ratios)?;
    Ok(ratios)
}

fn check_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.is_empty() {
        return Err(Error::Input("no sampling ratios given".into()));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::Input(format!("ratio {r} outside (0, 1]")));
    }
    if ratios.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("ratios must be strictly ascending".into()));
    }
    Ok(())
}

/// Fine-tunes on a stratified subsample of `train` for every (ratio, seed)
/// cell and scores the full `valid` set.
pub fn sample_efficiency_curve(
    pretrained: Option<&Model>,
    vocab: &Vocab,
    train: &Dataset,
    valid: &Dataset,
    ratios: &[f64],
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<CurvePoint>> {
    check_ratios(ratios)?;
    if seeds.is_empty() {
        return Err(Error::Input("at least one seed is required".into()));
    }
    if valid.is_empty() {
        return Err(Error::Input("validation dataset is empty".into()));
    }
    let mut out = Vec::with_capacity(ratios.len() * seeds.len());
    for &ratio in ratios {
        for &seed in seeds {
            let subset = stratified_subsample(train, ratio, seed)?;
            let cell_cfg = TrainConfig { seed, ..cfg.clone() };
            let outcome = finetune(pretrained.cloned(), vocab, &subset, Some(valid), &cell_cfg, None)?;
            let f1 = outcome
                .history
                .last()
                .and_then(|e| e.valid.as_ref())
                .map_or(0.0, |r| r.f1);
            out.push(CurvePoint { ratio, seed, f1 });
        }
    }
    Ok(out)
}

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("ratio,seed,f1\n");
    for p in points {
        writeln!(out, "{},{},{}", p.ratio, p.seed, p.f1).expect("write to string");
    }
    out
}

/// Mean F1 per ratio, ascending.
fn means(points: &[CurvePoint]) -> Vec<(f64, f64)> {
    let mut by_ratio: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for p in points {
        by_ratio
            .entry(p.ratio.to_bits())
            .or_insert((p.ratio, Vec::new()))
            .1
            .push(p.f1);
    }
    let mut out: Vec<(f64, f64)> = by_ratio.into_values().map(|(r, f)| (r, mean_std(&f).0)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Self-contained SVG line chart of mean F1 against the sampling ratio.
pub fn curve_to_svg(points: &[CurvePoint], title: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const LEFT: f64 = 56.0;
    const RIGHT: f64 = 16.0;
    const TOP: f64 = 36.0;
    const BOTTOM: f64 = 48.0;
    let x = |r: f64| LEFT + r * (W - LEFT - RIGHT);
    let y = |f: f64| H - BOTTOM - f * (H - TOP - BOTTOM);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    )
    .unwrap();
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let (x0, x1, yv) = (x(0.0), x(1.0), y(v));
        writeln!(
            s,
            r##"<line x1="{x0}" y1="{yv:.1}" x2="{x1}" y2="{yv:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{:.0}</text>"##,
            x0 - 6.0,
            yv + 4.0,
            v * 100.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}%</text>"#,
            x(v),
            H - BOTTOM + 18.0,
            v * 100.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/><line x1="{0}" y1="{1}" x2="{0}" y2="{3}" stroke="black"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">training data used</text>"#,
        W / 2.0,
        H - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">validation F1</text>"#,
        H / 2.0
    )
    .unwrap();

    let m = means(points);
    if !m.is_empty() {
        let path: Vec<String> = m.iter().map(|(r, f)| format!("{:.1},{:.1}", x(*r), y(*f))).collect();
        writeln!(
            s,
            r##"<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
            path.join(" ")
        )
        .unwrap();
        for (r, f) in &m {
            writeln!(
                s,
                r##"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="#1f77b4"/>"##,
                x(*r),
                y(*f)
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratios("0.1, 0.5,1.0").unwrap(), [0.1, 0.5, 1.0]);
        assert!(parse_ratios("0.5,0.1").is_err());
        assert!(parse_ratios("0.5,0.5").is_err());
        assert!(parse_ratios("0,1").is_err());
        assert!(parse_ratios("1.5").is_err());
        assert!(parse_ratios("x").is_err());
    }

    #[test]
    fn csv_and_svg() {
        let pts = [
            CurvePoint {
                ratio: 0.1,
                seed: 0,
                f1: 0.2,
            },
            CurvePoint {
                ratio: 0.1,
                seed: 1,
                f1: 0.4,
            },
            CurvePoint {
                ratio: 1.0,
                seed: 0,
                f1: 0.9,
            },
        ];
        let csv = curve_to_csv(&pts);
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().next().unwrap(), "ratio,seed,f1");
        let m = means(&pts);
        assert_eq!(m.len(), 2);
        assert!((m[0].1 - 0.3).abs() < 1e-12 && m[1] == (1.0, 0.9));
        let svg = curve_to_svg(&pts, "a < b");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
