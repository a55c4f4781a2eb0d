//! Static SVG bar charts, one per grouping scheme: share of users, mean NDCG
//! with standard-error whiskers, and the EBM score of each group.

use std::fmt::Write as _;

use recaudit_core::grouping::NA_LABEL;
use recaudit_core::{FeatureValue, Metric};

use crate::report::{AuditReport, SchemeReport, TestOutcome};

const WIDTH: f64 = 640.0;
const PANEL: f64 = 150.0;
const TOP: f64 = 40.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const GAP: f64 = 45.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Title annotation from the Bonferroni-adjusted NDCG test.
pub fn title(report: &AuditReport, scheme: &str) -> String {
    let annotation = match report.test(scheme, Metric::Ndcg).map(|t| &t.outcome) {
        Some(TestOutcome::Tested { p_bonferroni, .. }) if *p_bonferroni < report.threshold => {
            format!("p = {p_bonferroni:.3e} (p < {})", report.threshold)
        }
        Some(TestOutcome::Tested { p_bonferroni, .. }) => {
            format!("p = {p_bonferroni:.3e} (not significant)")
        }
        _ => "not testable".to_string(),
    };
    format!("{scheme}: Kruskal-Wallis on NDCG, {annotation}")
}

struct Bar {
    value: f64,
    whisker: Option<f64>,
}

fn panel(svg: &mut String, y0: f64, name: &str, labels: &[String], bars: &[Option<Bar>]) {
    let inner = WIDTH - LEFT - RIGHT;
    let slot = inner / labels.len().max(1) as f64;
    let reach = |b: &Bar| b.value.abs() + b.whisker.unwrap_or(0.0);
    let max = bars.iter().flatten().map(reach).fold(0.0, f64::max);
    let signed = bars.iter().flatten().any(|b| b.value < 0.0);
    // baseline at the bottom for non-negative data, mid-panel otherwise
    let (baseline, half) = if signed {
        (y0 + PANEL / 2.0, PANEL / 2.0)
    } else {
        (y0 + PANEL, PANEL)
    };
    let scale = if max > 0.0 { half / max } else { 0.0 };
    let _ = writeln!(
        svg,
        r#"<text x="10" y="{:.2}" font-size="12" transform="rotate(-90 10 {:.2})" text-anchor="middle">{}</text>"#,
        y0 + PANEL / 2.0,
        y0 + PANEL / 2.0,
        escape(name)
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{LEFT}" y1="{baseline:.2}" x2="{:.2}" y2="{baseline:.2}" stroke="#444"/>"##,
        WIDTH - RIGHT
    );
    for (j, (label, bar)) in labels.iter().zip(bars).enumerate() {
        let cx = LEFT + slot * (j as f64 + 0.5);
        let w = slot * 0.7;
        if let Some(b) = bar {
            let h = b.value.abs() * scale;
            let y = if b.value >= 0.0 { baseline - h } else { baseline };
            let _ = writeln!(
                svg,
                r##"<rect class="bar" data-panel="{}" data-group="{}" data-value="{}" x="{:.2}" y="{y:.2}" width="{w:.2}" height="{h:.4}" fill="#4878a8"/>"##,
                escape(name),
                escape(label),
                b.value,
                cx - w / 2.0
            );
            if let Some(se) = b.whisker.filter(|s| *s > 0.0) {
                let top = baseline - (b.value + se) * scale;
                let bottom = baseline - (b.value - se) * scale;
                let _ = writeln!(
                    svg,
                    r##"<path class="whisker" d="M{cx:.2} {top:.2}V{bottom:.2}M{:.2} {top:.2}H{:.2}M{:.2} {bottom:.2}H{:.2}" stroke="#222"/>"##,
                    cx - 4.0,
                    cx + 4.0,
                    cx - 4.0,
                    cx + 4.0
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            y0 + PANEL + 14.0,
            escape(label)
        );
    }
}

pub fn scheme_chart(report: &AuditReport, s: &SchemeReport) -> String {
    let labels: Vec<String> = s.groups.iter().map(|g| g.label.clone()).collect();
    let distribution: Vec<Option<Bar>> = s
        .groups
        .iter()
        .map(|g| {
            Some(Bar {
                value: g.percent,
                whisker: None,
            })
        })
        .collect();
    let ndcg: Vec<Option<Bar>> = s
        .groups
        .iter()
        .map(|g| {
            g.metrics[0].mean.map(|value| Bar {
                value,
                whisker: g.metrics[0].se,
            })
        })
        .collect();
    let ebm: Option<Vec<Option<Bar>>> = report.ebm_run("all").and_then(|run| {
        let f = run.model.features.iter().position(|f| f.name == s.scheme.name)?;
        Some(
            labels
                .iter()
                .map(|l| {
                    let v = if l == NA_LABEL {
                        FeatureValue::Missing
                    } else {
                        FeatureValue::Category(l.clone())
                    };
                    Some(Bar {
                        value: run.model.contribution(f, &v),
                        whisker: None,
                    })
                })
                .collect(),
        )
    });

    let panels = if ebm.is_some() { 3.0 } else { 2.0 };
    let height = TOP + panels * (PANEL + GAP);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(&title(report, &s.scheme.name))
    );
    panel(&mut svg, TOP, "% users", &labels, &distribution);
    panel(&mut svg, TOP + PANEL + GAP, "mean NDCG", &labels, &ndcg);
    if let Some(ebm) = &ebm {
        panel(&mut svg, TOP + 2.0 * (PANEL + GAP), "EBM score", &labels, ebm);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{build_report, ReportOptions};
    use recaudit_core::{Attribute, EbmConfig, GroupingScheme, MetricFrame, MetricRow, SchemeKind, UserAttributes};

    fn report(countries: &[&str], ndcg: &[f64]) -> AuditReport {
        let users: Vec<UserAttributes> = countries
            .iter()
            .enumerate()
            .map(|(i, c)| UserAttributes {
                country: Some(c.to_string()),
                ..UserAttributes::new(format!("u{i}"))
            })
            .collect();
        let frame = MetricFrame {
            rows: ndcg
                .iter()
                .enumerate()
                .map(|(u, &v)| MetricRow {
                    user: u as u32,
                    fold: 0,
                    ndcg: v,
                    mrr: v,
                    rbp: v,
                })
                .collect(),
        };
        let schemes = [GroupingScheme::new(
            "group",
            SchemeKind::Categorical {
                attribute: Attribute::Country,
                order: vec![],
            },
        )];
        let options = ReportOptions {
            threshold: 0.01,
            ebm: EbmConfig {
                max_rounds: 20,
                bags: 1,
                ..EbmConfig::default()
            },
            balanced: false,
        };
        build_report(&users, &frame, &schemes, None, &options).unwrap()
    }

    fn bars(svg: &str, panel: &str) -> Vec<(f64, f64)> {
        svg.lines()
            .filter(|l| l.contains(&format!("data-panel=\"{panel}\"")))
            .map(|l| {
                let attr = |name: &str| -> f64 {
                    let start = l.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
                    l[start..start + l[start..].find('"').unwrap()].parse().unwrap()
                };
                (attr("data-value"), attr("height"))
            })
            .collect()
    }

    #[test]
    fn bar_heights_are_proportional_to_means() {
        let r = report(&["a", "a", "b", "b", "c", "c"], &[0.2, 0.2, 0.4, 0.4, 0.1, 0.1]);
        let svg = scheme_chart(&r, &r.schemes[0]);
        let b = bars(&svg, "mean NDCG");
        assert_eq!(b.len(), 3);
        // zero spread, so no whiskers and the tallest bar fills the panel
        assert!(!svg.contains("class=\"whisker\""));
        assert!((b[1].1 - PANEL).abs() < 1e-3);
        for (value, height) in &b {
            assert!((height / b[1].1 - value / 0.4).abs() < 1e-3);
        }
    }

    #[test]
    fn single_group_chart() {
        let r = report(&["a", "a", "a"], &[0.1, 0.3, 0.2]);
        let svg = scheme_chart(&r, &r.schemes[0]);
        assert_eq!(bars(&svg, "% users").len(), 1);
        assert!(svg.contains("not testable"));
        assert!(svg.contains("class=\"whisker\""));
    }

    #[test]
    fn significance_annotation_follows_threshold() {
        let n = 40;
        let countries: Vec<&str> = (0..n).map(|i| if i < n / 2 { "a" } else { "b" }).collect();
        let separated: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let r = report(&countries, &separated);
        assert!(title(&r, "group").contains("(p < 0.01)"));
        let mixed: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let r = report(&countries, &mixed);
        let t = title(&r, "group");
        assert!(t.contains("not significant"), "{t}");
    }
}
