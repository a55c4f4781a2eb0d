//! Everything downstream of the per-user metrics: group summaries, tests,
//! EBM runs and cross-tabulations.

use log::warn;
use recaudit_core::ebm::{self, EbmError};
use recaudit_core::grouping::NA_LABEL;
use recaudit_core::rng;
use recaudit_core::stats::{self, StatsError};
use recaudit_core::{
    Attribute, EbmConfig, EbmModel, FeatureSpec, FeatureValue, GdpTable, GroupAssignment,
    GroupingScheme, KwResult, Metric, MetricFrame, UserAttributes,
};

use crate::error::{AuditError, Result, Stage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation over `sqrt(n)`; needs two values.
    pub se: Option<f64>,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: None,
                se: None,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = (n > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Self {
            n,
            mean: Some(mean),
            se,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub label: String,
    /// All users with this label.
    pub users: usize,
    pub percent: f64,
    /// Indexed like [`Metric::ALL`], over users with metric values.
    pub metrics: [MeanSe; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestOutcome {
    Tested { result: KwResult, p_bonferroni: f64 },
    NotTestable { usable_groups: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRow {
    pub scheme: String,
    pub metric: Metric,
    pub outcome: TestOutcome,
}

impl TestRow {
    pub fn p_bonferroni(&self) -> Option<f64> {
        match self.outcome {
            TestOutcome::Tested { p_bonferroni, .. } => Some(p_bonferroni),
            TestOutcome::NotTestable { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SchemeReport {
    pub scheme: GroupingScheme,
    pub assignment: GroupAssignment,
    /// Non-N/A groups in order, then N/A when present.
    pub groups: Vec<GroupSummary>,
}

#[derive(Debug, Clone)]
pub struct EbmRun {
    /// `all` or the attribute name of a feature group.
    pub name: String,
    pub rows: usize,
    pub balanced: bool,
    pub model: EbmModel,
}

/// Percentages of each column's users falling into each row bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTab {
    pub row_scheme: String,
    pub column_scheme: String,
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
    /// `counts[row][column]`.
    pub counts: Vec<Vec<usize>>,
    /// Integer percentages; every non-empty column sums to exactly 100.
    pub percents: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub n_users: usize,
    pub n_evaluated: usize,
    pub schemes: Vec<SchemeReport>,
    pub tests: Vec<TestRow>,
    /// Number of tests in the Bonferroni family.
    pub family_size: usize,
    pub threshold: f64,
    pub ebm: Vec<EbmRun>,
    pub crosstabs: Vec<CrossTab>,
}

impl AuditReport {
    pub fn scheme(&self, name: &str) -> Option<&SchemeReport> {
        self.schemes.iter().find(|s| s.scheme.name == name)
    }

    pub fn test(&self, scheme: &str, metric: Metric) -> Option<&TestRow> {
        self.tests
            .iter()
            .find(|t| t.scheme == scheme && t.metric == metric)
    }

    pub fn ebm_run(&self, name: &str) -> Option<&EbmRun> {
        self.ebm.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub threshold: f64,
    pub ebm: EbmConfig,
    pub balanced: bool,
}

fn group_values(assign: &GroupAssignment, label_index: Option<usize>, means: &[Option<f64>]) -> Vec<f64> {
    (0..assign.n_users() as u32)
        .filter(|&u| assign.group_of(u) == label_index)
        .filter_map(|u| means[u as usize])
        .collect()
}

fn summarize(assign: &GroupAssignment, means: &[Vec<Option<f64>>]) -> Vec<GroupSummary> {
    let n = assign.n_users();
    let percent = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
    let sizes = assign.sizes();
    let mut slots: Vec<(String, Option<usize>, usize)> = assign
        .labels()
        .iter()
        .enumerate()
        .map(|(g, l)| (l.clone(), Some(g), sizes[g]))
        .collect();
    if assign.na_count() > 0 {
        slots.push((NA_LABEL.to_string(), None, assign.na_count()));
    }
    slots
        .into_iter()
        .map(|(label, g, users)| GroupSummary {
            label,
            users,
            percent: percent(users),
            metrics: [0, 1, 2].map(|m| MeanSe::of(&group_values(assign, g, &means[m]))),
        })
        .collect()
}

/// Runs every Kruskal-Wallis test and applies Bonferroni over the testable
/// ones.
pub fn run_tests(schemes: &[SchemeReport], means: &[Vec<Option<f64>>]) -> Result<(Vec<TestRow>, usize)> {
    let mut rows = Vec::new();
    let mut raw_p = Vec::new();
    for s in schemes {
        for (m, metric) in Metric::ALL.into_iter().enumerate() {
            let outcome = match stats::test_groups(&means[m], &s.assignment) {
                Ok(result) => {
                    raw_p.push(result.p_value);
                    TestOutcome::Tested {
                        result,
                        p_bonferroni: f64::NAN,
                    }
                }
                Err(StatsError::NotTestable(usable_groups)) => TestOutcome::NotTestable { usable_groups },
                Err(e @ StatsError::NonFinite) => return Err(AuditError::numerical(Stage::Stats, e)),
                Err(e) => {
                    warn!("{} / {}: {e}", s.scheme.name, metric.name());
                    TestOutcome::NotTestable { usable_groups: 0 }
                }
            };
            rows.push(TestRow {
                scheme: s.scheme.name.clone(),
                metric,
                outcome,
            });
        }
    }
    let adjusted = stats::bonferroni(&raw_p);
    let mut next = adjusted.into_iter();
    for row in &mut rows {
        if let TestOutcome::Tested { p_bonferroni, .. } = &mut row.outcome {
            *p_bonferroni = next.next().expect("one adjusted p per test");
        }
    }
    Ok((rows, raw_p.len()))
}

fn feature_column(assign: &GroupAssignment, users: &[u32]) -> Vec<FeatureValue> {
    users
        .iter()
        .map(|&u| match assign.group_of(u) {
            Some(g) => FeatureValue::Category(assign.labels()[g].clone()),
            None => FeatureValue::Missing,
        })
        .collect()
}

fn fit_run(
    name: &str,
    schemes: &[&SchemeReport],
    users: &[u32],
    targets: &[f64],
    config: EbmConfig,
    balanced: bool,
) -> Result<Option<EbmRun>> {
    if users.len() < 10 {
        warn!("ebm run `{name}`: only {} users, skipped", users.len());
        return Ok(None);
    }
    let columns: Vec<Vec<FeatureValue>> = schemes
        .iter()
        .map(|s| feature_column(&s.assignment, users))
        .collect();
    let specs: Vec<FeatureSpec> = schemes
        .iter()
        .zip(&columns)
        .map(|(s, col)| {
            let values: Vec<Option<&str>> = col
                .iter()
                .map(|v| match v {
                    FeatureValue::Category(c) => Some(c.as_str()),
                    _ => None,
                })
                .collect();
            FeatureSpec::categorical(s.scheme.name.clone(), &values)
        })
        .collect();
    let rows: Vec<Vec<FeatureValue>> = (0..users.len())
        .map(|r| columns.iter().map(|c| c[r].clone()).collect())
        .collect();
    let model = ebm::fit_ebm(&rows, targets, specs, config).map_err(|e| match e {
        EbmError::NonFiniteTarget { .. } => AuditError::numerical(Stage::Explain, e),
        _ => AuditError::data(Stage::Explain, e),
    })?;
    Ok(Some(EbmRun {
        name: name.to_string(),
        rows: users.len(),
        balanced,
        model,
    }))
}

/// One EBM over every scheme and all evaluated users, then one per feature
/// group (schemes sharing an attribute), on a balanced sample of the
/// group's first scheme when `balanced` is set.
pub fn run_ebm(schemes: &[SchemeReport], ndcg: &[Option<f64>], options: &ReportOptions) -> Result<Vec<EbmRun>> {
    let evaluated: Vec<u32> = (0..ndcg.len() as u32).filter(|&u| ndcg[u as usize].is_some()).collect();
    let target = |users: &[u32]| -> Vec<f64> { users.iter().map(|&u| ndcg[u as usize].unwrap()).collect() };
    let mut runs = Vec::new();
    if schemes.is_empty() {
        return Ok(runs);
    }
    let all: Vec<&SchemeReport> = schemes.iter().collect();
    runs.extend(fit_run("all", &all, &evaluated, &target(&evaluated), options.ebm, false)?);

    let mut attributes: Vec<Attribute> = Vec::new();
    for s in schemes {
        if !attributes.contains(&s.scheme.kind.attribute()) {
            attributes.push(s.scheme.kind.attribute());
        }
    }
    for (g, attribute) in attributes.into_iter().enumerate() {
        let members: Vec<&SchemeReport> = schemes
            .iter()
            .filter(|s| s.scheme.kind.attribute() == attribute)
            .collect();
        let users = if options.balanced {
            let first = &members[0].assignment;
            let of_user: Vec<Option<u32>> = (0..first.n_users() as u32)
                .map(|u| {
                    ndcg[u as usize]
                        .and(first.group_of(u))
                        .map(|g| g as u32)
                })
                .collect();
            let restricted = GroupAssignment::new(first.labels().to_vec(), of_user);
            recaudit_core::grouping::balanced_sample(
                &restricted,
                rng::derive_seed(options.ebm.seed, &[g as u64]),
            )
        } else {
            evaluated.clone()
        };
        let config = EbmConfig {
            seed: rng::derive_seed(options.ebm.seed, &[g as u64 + 1]),
            ..options.ebm
        };
        runs.extend(fit_run(
            attribute.name(),
            &members,
            &users,
            &target(&users),
            config,
            options.balanced,
        )?);
    }
    Ok(runs)
}

/// Largest-remainder rounding of `counts` to integer percentages summing to
/// 100; all zeros when the counts are.
pub fn integer_percentages(counts: &[usize]) -> Vec<u32> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut out: Vec<u32> = counts.iter().map(|&c| (100 * c / total) as u32).collect();
    let short = 100 - out.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(100 * counts[i] % total), i));
    for &i in order.iter().take(short as usize) {
        out[i] += 1;
    }
    out
}

fn presentation_slots(a: &GroupAssignment) -> (Vec<String>, impl Fn(u32) -> usize + '_) {
    let labels = a.presentation_labels();
    let n_real = a.labels().len();
    (labels, move |u| a.group_of(u).unwrap_or(n_real))
}

pub fn crosstab(rows: &SchemeReport, columns: &SchemeReport) -> CrossTab {
    let (row_labels, row_of) = presentation_slots(&rows.assignment);
    let (column_labels, column_of) = presentation_slots(&columns.assignment);
    let mut counts = vec![vec![0usize; column_labels.len()]; row_labels.len()];
    for u in 0..rows.assignment.n_users() as u32 {
        counts[row_of(u)][column_of(u)] += 1;
    }
    let mut percents = vec![vec![0u32; column_labels.len()]; row_labels.len()];
    for c in 0..column_labels.len() {
        let column: Vec<usize> = counts.iter().map(|r| r[c]).collect();
        for (r, p) in integer_percentages(&column).into_iter().enumerate() {
            percents[r][c] = p;
        }
    }
    CrossTab {
        row_scheme: rows.scheme.name.clone(),
        column_scheme: columns.scheme.name.clone(),
        row_labels,
        column_labels,
        counts,
        percents,
    }
}

pub fn assign_schemes(
    schemes: &[GroupingScheme],
    users: &[UserAttributes],
    gdp: Option<&GdpTable>,
) -> Result<Vec<(GroupingScheme, GroupAssignment)>> {
    schemes
        .iter()
        .filter_map(|s| match s.assign(users, gdp) {
            Ok(a) => Some(Ok((s.clone(), a))),
            Err(recaudit_core::grouping::GroupingError::MissingGdp(name)) => {
                warn!("scheme `{name}` needs a GDP table, skipped");
                None
            }
            Err(e) => Some(Err(AuditError::config(e))),
        })
        .collect()
}

/// Builds the full report from the per-user metric frame. `users` is
/// indexed like the frame's user indices.
pub fn build_report(
    users: &[UserAttributes],
    frame: &MetricFrame,
    schemes: &[GroupingScheme],
    gdp: Option<&GdpTable>,
    options: &ReportOptions,
) -> Result<AuditReport> {
    let n = users.len();
    let means: Vec<Vec<Option<f64>>> = Metric::ALL.iter().map(|&m| frame.user_means(m, n)).collect();
    let schemes: Vec<SchemeReport> = assign_schemes(schemes, users, gdp)?
        .into_iter()
        .map(|(scheme, assignment)| SchemeReport {
            groups: summarize(&assignment, &means),
            scheme,
            assignment,
        })
        .collect();
    let (tests, family_size) = run_tests(&schemes, &means)?;
    let ebm = run_ebm(&schemes, &means[0], options)?;

    let mut crosstabs = Vec::new();
    for r in schemes
        .iter()
        .filter(|s| matches!(s.scheme.kind.attribute(), Attribute::Usage | Attribute::PopIndex))
    {
        for c in schemes.iter().filter(|s| s.scheme.kind.attribute().is_demographic()) {
            crosstabs.push(crosstab(r, c));
        }
    }
    Ok(AuditReport {
        n_users: n,
        n_evaluated: means[0].iter().flatten().count(),
        schemes,
        tests,
        family_size,
        threshold: options.threshold,
        ebm,
        crosstabs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use recaudit_core::{MetricRow, SchemeKind};

    #[test]
    fn largest_remainder_sums_to_100() {
        assert_eq!(integer_percentages(&[1, 1, 1]), vec![34, 33, 33]);
        assert_eq!(integer_percentages(&[0, 0]), vec![0, 0]);
        assert_eq!(integer_percentages(&[2, 1]), vec![67, 33]);
        assert_eq!(integer_percentages(&[5]), vec![100]);
        for counts in [[7usize, 13, 1, 0, 29], [1, 1, 1, 1, 1], [3, 0, 0, 0, 97]] {
            assert_eq!(integer_percentages(&counts).iter().sum::<u32>(), 100);
        }
    }

    #[test]
    fn mean_and_standard_error() {
        let s = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, Some(2.5));
        // sd = sqrt(5/3), se = sd / 2
        assert!((s.se.unwrap() - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(MeanSe::of(&[0.3]).se, None);
        assert_eq!(MeanSe::of(&[]).mean, None);
    }

    fn users(genders: &[&str]) -> Vec<UserAttributes> {
        genders
            .iter()
            .enumerate()
            .map(|(i, g)| UserAttributes {
                gender: recaudit_core::Gender::parse(g),
                usage: Some(i as u64),
                ..UserAttributes::new(format!("{i}"))
            })
            .collect()
    }

    fn frame(ndcg: &[f64]) -> MetricFrame {
        MetricFrame {
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
        }
    }

    fn options() -> ReportOptions {
        ReportOptions {
            threshold: 0.01,
            ebm: EbmConfig {
                max_rounds: 50,
                bags: 2,
                ..EbmConfig::default()
            },
            balanced: true,
        }
    }

    #[test]
    fn two_group_crosstab_columns_sum_to_100() {
        let u = users(&["m", "m", "f", "f", "f", "", "m"]);
        let schemes = vec![
            GroupingScheme::new(
                "gender",
                SchemeKind::Categorical {
                    attribute: Attribute::Gender,
                    order: vec!["m".into(), "f".into()],
                },
            ),
            GroupingScheme::new(
                "usage",
                SchemeKind::EqualCount {
                    attribute: Attribute::Usage,
                    bins: 2,
                    ordinal_labels: true,
                },
            ),
        ];
        let r = build_report(&u, &frame(&[0.1; 7]), &schemes, None, &options()).unwrap();
        assert_eq!(r.crosstabs.len(), 1);
        let t = &r.crosstabs[0];
        assert_eq!(t.column_labels, ["m", "f", "N/A"]);
        for c in 0..3 {
            assert_eq!(t.percents.iter().map(|row| row[c]).sum::<u32>(), 100);
        }
    }

    #[test]
    fn group_means_and_tests() {
        let u = users(&["m", "m", "m", "f", "f", "f", ""]);
        let schemes = vec![GroupingScheme::new(
            "gender",
            SchemeKind::Categorical {
                attribute: Attribute::Gender,
                order: vec!["m".into(), "f".into()],
            },
        )];
        let f = frame(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 100.0]);
        let r = build_report(&u, &f, &schemes, None, &options()).unwrap();
        let g = &r.scheme("gender").unwrap().groups;
        assert_eq!(g.iter().map(|x| x.label.as_str()).collect::<Vec<_>>(), ["m", "f", "N/A"]);
        assert_eq!(g[0].metrics[0].mean, Some(2.0));
        assert_eq!(g[1].metrics[0].mean, Some(5.0));
        assert_eq!(g[2].metrics[0].mean, Some(100.0));
        // N/A is not part of the test: [1,2,3] vs [4,5,6]
        let t = r.test("gender", Metric::Ndcg).unwrap();
        match &t.outcome {
            TestOutcome::Tested { result, p_bonferroni } => {
                assert!((result.h - 27.0 / 7.0).abs() < 1e-12);
                assert!((p_bonferroni - (3.0 * result.p_value).min(1.0)).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(r.family_size, 3);
    }

    #[test]
    fn single_group_is_not_testable() {
        let u = users(&["m", "m", "m", ""]);
        let schemes = vec![GroupingScheme::new(
            "gender",
            SchemeKind::Categorical {
                attribute: Attribute::Gender,
                order: vec![],
            },
        )];
        let r = build_report(&u, &frame(&[0.1, 0.2, 0.3, 0.4]), &schemes, None, &options()).unwrap();
        assert_eq!(r.family_size, 0);
        assert!(matches!(
            r.tests[0].outcome,
            TestOutcome::NotTestable { usable_groups: 1 }
        ));
        assert!(r.ebm.is_empty());
    }

    #[test]
    fn ebm_runs_cover_feature_groups() {
        let genders: Vec<&str> = (0..60).map(|i| if i % 3 == 0 { "f" } else { "m" }).collect();
        let u = users(&genders);
        let ndcg: Vec<f64> = (0..60).map(|i| if i % 3 == 0 { 0.2 } else { 0.4 }).collect();
        let schemes = vec![
            GroupingScheme::new(
                "gender",
                SchemeKind::Categorical {
                    attribute: Attribute::Gender,
                    order: vec!["m".into(), "f".into()],
                },
            ),
            GroupingScheme::new("last_digit", SchemeKind::Control),
        ];
        let r = build_report(&u, &frame(&ndcg), &schemes, None, &options()).unwrap();
        let names: Vec<&str> = r.ebm.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["all", "gender", "user_id"]);
        let gender_run = r.ebm_run("gender").unwrap();
        assert_eq!(gender_run.rows, 40);
        let all = r.ebm_run("all").unwrap();
        assert!(all.model.importance[0] > all.model.importance[1]);
    }
}
