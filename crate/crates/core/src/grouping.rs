//! User grouping schemes: categorical values, equal-range and equal-count
//! numeric bins, fixed brackets, country buckets by prevalence or GDP, and
//! the last-digit control.
//!
//! Every scheme produces a [`GroupAssignment`] that maps each user to exactly
//! one group or to N/A.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::model::{GdpTable, Provenance, UserAttributes, ML1M_AGE_CODES};
use crate::rng::{self, stream};

pub const NA_LABEL: &str = "N/A";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupingError {
    #[error("scheme `{0}` needs a GDP table")]
    MissingGdp(String),
    #[error("scheme `{scheme}`: {reason}")]
    InvalidParameters { scheme: String, reason: &'static str },
}

/// Total map from users to groups. `None` is the N/A group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    labels: Vec<String>,
    of_user: Vec<Option<u32>>,
}

impl GroupAssignment {
    /// `of_user[u]` indexes into `labels`.
    pub fn new(labels: Vec<String>, of_user: Vec<Option<u32>>) -> Self {
        debug_assert!(of_user
            .iter()
            .flatten()
            .all(|&g| (g as usize) < labels.len()));
        Self { labels, of_user }
    }

    /// Builds an assignment from per-user label strings; [`NA_LABEL`] maps
    /// to N/A. Labels listed in `order` come first (even when empty), the
    /// rest follow in first-seen order.
    pub fn from_user_labels<'a, I>(user_labels: I, order: &[&str]) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut labels: Vec<String> = order.iter().map(|s| s.to_string()).collect();
        let mut index: BTreeMap<String, u32> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
        let of_user = user_labels
            .into_iter()
            .map(|l| {
                if l == NA_LABEL {
                    return None;
                }
                Some(*index.entry(l.to_string()).or_insert_with(|| {
                    labels.push(l.to_string());
                    (labels.len() - 1) as u32
                }))
            })
            .collect();
        Self { labels, of_user }
    }

    /// Non-N/A labels in presentation order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Labels plus a trailing N/A when any user is unassigned.
    pub fn presentation_labels(&self) -> Vec<String> {
        let mut out = self.labels.clone();
        if self.na_count() > 0 {
            out.push(NA_LABEL.to_string());
        }
        out
    }

    pub fn n_users(&self) -> usize {
        self.of_user.len()
    }

    pub fn group_of(&self, user: u32) -> Option<usize> {
        self.of_user[user as usize].map(|g| g as usize)
    }

    pub fn label_of(&self, user: u32) -> &str {
        match self.group_of(user) {
            Some(g) => &self.labels[g],
            None => NA_LABEL,
        }
    }

    /// Sizes of the non-N/A groups, in label order.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.labels.len()];
        for g in self.of_user.iter().flatten() {
            sizes[*g as usize] += 1;
        }
        sizes
    }

    pub fn na_count(&self) -> usize {
        self.of_user.iter().filter(|g| g.is_none()).count()
    }

    pub fn members(&self, group: usize) -> Vec<u32> {
        self.of_user
            .iter()
            .enumerate()
            .filter(|(_, g)| **g == Some(group as u32))
            .map(|(u, _)| u as u32)
            .collect()
    }

    /// Replaces labels with their 1-based position ("1", "2", ...).
    pub fn with_ordinal_labels(mut self) -> Self {
        self.labels = (1..=self.labels.len()).map(|i| i.to_string()).collect();
        self
    }

    /// Same label multiset, shuffled across users. N/A users stay N/A.
    pub fn permuted(&self, seed: u64) -> Self {
        let slots: Vec<usize> = (0..self.of_user.len())
            .filter(|&u| self.of_user[u].is_some())
            .collect();
        let mut groups: Vec<Option<u32>> = slots.iter().map(|&u| self.of_user[u]).collect();
        groups.shuffle(&mut rng::rng_for(seed, &[]));
        let mut of_user = self.of_user.clone();
        for (u, g) in slots.into_iter().zip(groups) {
            of_user[u] = g;
        }
        Self {
            labels: self.labels.clone(),
            of_user,
        }
    }
}

/// One group per distinct value; `order` fixes the leading labels.
pub fn bucket_categorical(values: &[Option<&str>], order: &[&str]) -> GroupAssignment {
    let present: Vec<&str> = order
        .iter()
        .copied()
        .filter(|o| values.iter().any(|v| v == &Some(*o)))
        .collect();
    GroupAssignment::from_user_labels(values.iter().map(|v| v.unwrap_or(NA_LABEL)), &present)
}

fn range_label(lo: i64, hi: i64) -> String {
    if lo == hi {
        lo.to_string()
    } else {
        format!("{lo}-{hi}")
    }
}

/// Bins `[anchor + j*width, anchor + (j+1)*width)` up to the largest value;
/// the anchor defaults to the smallest value. Values below the anchor are
/// N/A.
pub fn bucket_equal_range(values: &[Option<i64>], width: i64, anchor: Option<i64>) -> GroupAssignment {
    assert!(width > 0, "bin width must be positive");
    let present = values.iter().flatten();
    let (Some(&min), Some(&max)) = (present.clone().min(), present.max()) else {
        return GroupAssignment::new(Vec::new(), vec![None; values.len()]);
    };
    let anchor = anchor.unwrap_or(min);
    if max < anchor {
        return GroupAssignment::new(Vec::new(), vec![None; values.len()]);
    }
    let n_bins = ((max - anchor) / width + 1) as usize;
    let labels = (0..n_bins as i64)
        .map(|j| range_label(anchor + j * width, anchor + (j + 1) * width - 1))
        .collect();
    let of_user = values
        .iter()
        .map(|v| {
            v.filter(|&x| x >= anchor)
                .map(|x| ((x - anchor) / width) as u32)
        })
        .collect();
    GroupAssignment::new(labels, of_user)
}

/// Upper bounds of equal-count bins over sorted values. A tie class that
/// straddles a cut is kept whole in the lower bin.
fn equal_count_thresholds(sorted: &[i64], k: usize) -> Vec<i64> {
    let n = sorted.len();
    let max = sorted[n - 1];
    let mut thresholds: Vec<i64> = (1..k)
        .map(|j| j * n / k)
        .filter(|&c| c > 0)
        .map(|c| sorted[c - 1])
        .filter(|&t| t < max)
        .collect();
    thresholds.dedup();
    thresholds
}

/// Roughly equal-sized bins over the non-missing values; equal values never
/// land in different bins, so fewer than `k` bins can come out.
pub fn bucket_equal_count(values: &[Option<i64>], k: usize) -> GroupAssignment {
    assert!(k >= 1, "need at least one bin");
    let mut sorted: Vec<i64> = values.iter().flatten().copied().collect();
    if sorted.is_empty() {
        return GroupAssignment::new(Vec::new(), vec![None; values.len()]);
    }
    sorted.sort_unstable();
    let thresholds = equal_count_thresholds(&sorted, k);
    let n_bins = thresholds.len() + 1;
    if n_bins < k {
        log::warn!("equal-count binning produced {n_bins} of {k} requested bins");
    }
    let labels = (0..n_bins)
        .map(|j| {
            let lo = if j == 0 { sorted[0] } else { thresholds[j - 1] + 1 };
            match thresholds.get(j) {
                Some(&hi) => range_label(lo, hi),
                None if n_bins > 1 => format!("{lo}+"),
                None => range_label(lo, sorted[sorted.len() - 1]),
            }
        })
        .collect();
    let of_user = values
        .iter()
        .map(|v| v.map(|x| thresholds.partition_point(|&t| t < x) as u32))
        .collect();
    GroupAssignment::new(labels, of_user)
}

/// Fixed brackets given by ascending lower bounds; the last is open-ended.
pub fn bucket_brackets(values: &[Option<i64>], lower_bounds: &[i64]) -> GroupAssignment {
    let labels = lower_bounds
        .iter()
        .enumerate()
        .map(|(j, &lo)| match lower_bounds.get(j + 1) {
            Some(&next) => range_label(lo, next - 1),
            None => format!("{lo}+"),
        })
        .collect();
    let of_user = values
        .iter()
        .map(|v| {
            v.and_then(|x| {
                let pos = lower_bounds.partition_point(|&b| b <= x);
                (pos > 0).then(|| (pos - 1) as u32)
            })
        })
        .collect();
    GroupAssignment::new(labels, of_user)
}

/// One group per integer value from the smallest observed value up to
/// `cap - 1`, with everything at or above `cap` merged into "cap+".
pub fn bucket_capped(values: &[Option<i64>], cap: i64) -> GroupAssignment {
    let present = values.iter().flatten();
    let (Some(&min), Some(&max)) = (present.clone().min(), present.max()) else {
        return GroupAssignment::new(Vec::new(), vec![None; values.len()]);
    };
    let lo = min.min(cap);
    let mut labels: Vec<String> = (lo..cap.min(max + 1)).map(|v| v.to_string()).collect();
    if max >= cap {
        labels.push(format!("{cap}+"));
    }
    let of_user = values
        .iter()
        .map(|v| v.map(|x| (x.min(cap) - lo) as u32))
        .collect();
    GroupAssignment::new(labels, of_user)
}

fn bucket_names(k: usize) -> Vec<String> {
    if k == 3 {
        ["low", "medium", "high"].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=k).map(|j| format!("q{j}")).collect()
    }
}

/// Countries ordered by user count and split into `k` buckets holding
/// roughly equal numbers of users: a country joins the bucket containing the
/// midpoint of its cumulative user span.
pub fn bucket_countries_by_prevalence(countries: &[Option<&str>], k: usize) -> GroupAssignment {
    assert!(k >= 1);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in countries.iter().flatten() {
        *counts.entry(c).or_default() += 1;
    }
    let mut order: Vec<(&str, usize)> = counts.into_iter().collect();
    order.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let total: usize = order.iter().map(|c| c.1).sum();
    let mut bucket_of: BTreeMap<&str, u32> = BTreeMap::new();
    let mut before = 0usize;
    for (country, n) in order {
        // midpoint (before + n/2) / total, scaled by k, in integers
        let b = ((k * (2 * before + n)) / (2 * total)).min(k - 1);
        bucket_of.insert(country, b as u32);
        before += n;
    }
    let of_user = countries
        .iter()
        .map(|c| c.and_then(|c| bucket_of.get(c).copied()))
        .collect();
    GroupAssignment::new(bucket_names(k), of_user)
}

/// Countries present in the data and in `gdp`, ordered by GDP per capita and
/// split into `k` buckets of equal country count. Users of countries missing
/// from the table are N/A.
pub fn bucket_countries_by_gdp(
    countries: &[Option<&str>],
    gdp: &GdpTable,
    k: usize,
) -> GroupAssignment {
    assert!(k >= 1);
    let mut known: BTreeMap<&str, f64> = BTreeMap::new();
    for c in countries.iter().flatten() {
        if let Some(g) = gdp.get(c) {
            known.insert(c, g);
        }
    }
    let mut order: Vec<(&str, f64)> = known.into_iter().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
    let m = order.len();
    let bucket_of: BTreeMap<&str, u32> = order
        .iter()
        .enumerate()
        .map(|(r, (c, _))| (*c, (r * k / m) as u32))
        .collect();
    let of_user = countries
        .iter()
        .map(|c| c.and_then(|c| bucket_of.get(c).copied()))
        .collect();
    GroupAssignment::new(bucket_names(k), of_user)
}

/// Last character of the id when it is a decimal or hex digit.
pub fn last_digit(user_id: &str) -> Option<char> {
    user_id
        .trim()
        .chars()
        .last()
        .filter(char::is_ascii_hexdigit)
        .map(|c| c.to_ascii_lowercase())
}

pub fn control_last_digit<S: AsRef<str>>(user_ids: &[S]) -> GroupAssignment {
    const ORDER: [&str; 16] = [
        "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "a", "b", "c", "d", "e", "f",
    ];
    let digits: Vec<Option<String>> = user_ids
        .iter()
        .map(|id| last_digit(id.as_ref()).map(|c| c.to_string()))
        .collect();
    let values: Vec<Option<&str>> = digits.iter().map(|d| d.as_deref()).collect();
    bucket_categorical(&values, &ORDER)
}

/// The same number of users from every non-empty, non-N/A group: the size
/// of the smallest one. Returned sorted.
pub fn balanced_sample(assignment: &GroupAssignment, seed: u64) -> Vec<u32> {
    let sizes = assignment.sizes();
    let Some(m) = sizes.iter().copied().filter(|&s| s > 0).min() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(m * sizes.len());
    for g in 0..sizes.len() {
        let mut members = assignment.members(g);
        members.shuffle(&mut rng::rng_for(seed, &[stream::BALANCED, g as u64]));
        out.extend_from_slice(&members[..m.min(members.len())]);
    }
    out.sort_unstable();
    out
}

/// User attribute a scheme reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Attribute {
    Gender,
    Age,
    Country,
    Usage,
    PopIndex,
    UserId,
}

impl Attribute {
    pub fn name(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Age => "age",
            Attribute::Country => "country",
            Attribute::Usage => "usage",
            Attribute::PopIndex => "pop_index",
            Attribute::UserId => "user_id",
        }
    }

    pub fn is_demographic(self) -> bool {
        matches!(self, Attribute::Gender | Attribute::Age | Attribute::Country)
    }

    fn numeric(self, a: &UserAttributes) -> Option<i64> {
        match self {
            Attribute::Age => a.age.map(i64::from),
            Attribute::Usage => a.usage.map(|u| u as i64),
            Attribute::PopIndex => a.pop_index.map(i64::from),
            Attribute::Gender | Attribute::Country | Attribute::UserId => None,
        }
    }

    fn text(self, a: &UserAttributes) -> Option<String> {
        match self {
            Attribute::Gender => a.gender.label().map(String::from),
            Attribute::Country => a.country.clone(),
            Attribute::UserId => Some(a.user_id.clone()),
            _ => self.numeric(a).map(|v| v.to_string()),
        }
    }
}

impl core::str::FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "gender" => Attribute::Gender,
            "age" => Attribute::Age,
            "country" => Attribute::Country,
            "usage" => Attribute::Usage,
            "pop_index" | "popindex" => Attribute::PopIndex,
            "user_id" => Attribute::UserId,
            other => return Err(format!("unknown attribute `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchemeKind {
    Categorical { attribute: Attribute, order: Vec<String> },
    EqualRange { attribute: Attribute, width: i64, anchor: Option<i64> },
    EqualCount { attribute: Attribute, bins: usize, ordinal_labels: bool },
    /// Fixed brackets from ascending lower bounds.
    Brackets { attribute: Attribute, lower_bounds: Vec<i64> },
    /// Raw integer values, with everything `>= cap` merged.
    Capped { attribute: Attribute, cap: i64 },
    /// Countries bucketed by number of users.
    Prevalence { bins: usize },
    /// Countries bucketed by GDP per capita.
    ExternalOrder { bins: usize },
    /// Last digit of the user id.
    Control,
}

impl SchemeKind {
    pub fn attribute(&self) -> Attribute {
        match self {
            SchemeKind::Categorical { attribute, .. }
            | SchemeKind::EqualRange { attribute, .. }
            | SchemeKind::EqualCount { attribute, .. }
            | SchemeKind::Brackets { attribute, .. }
            | SchemeKind::Capped { attribute, .. } => *attribute,
            SchemeKind::Prevalence { .. } | SchemeKind::ExternalOrder { .. } => Attribute::Country,
            SchemeKind::Control => Attribute::UserId,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingScheme {
    pub name: String,
    pub kind: SchemeKind,
}

impl GroupingScheme {
    pub fn new(name: impl Into<String>, kind: SchemeKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn validate(&self) -> Result<(), GroupingError> {
        let bad = |reason| {
            Err(GroupingError::InvalidParameters {
                scheme: self.name.clone(),
                reason,
            })
        };
        match &self.kind {
            SchemeKind::EqualRange { width, .. } if *width <= 0 => bad("width must be positive"),
            SchemeKind::EqualCount { bins, .. } if *bins < 2 => bad("need at least 2 bins"),
            SchemeKind::Brackets { lower_bounds, .. }
                if lower_bounds.is_empty() || lower_bounds.windows(2).any(|w| w[0] >= w[1]) =>
            {
                bad("bracket bounds must be non-empty and strictly increasing")
            }
            SchemeKind::Prevalence { bins } | SchemeKind::ExternalOrder { bins } if *bins == 0 => {
                bad("need at least 1 bucket")
            }
            _ => Ok(()),
        }
    }

    pub fn assign(
        &self,
        users: &[UserAttributes],
        gdp: Option<&GdpTable>,
    ) -> Result<GroupAssignment, GroupingError> {
        self.validate()?;
        let numeric = |attr: Attribute| -> Vec<Option<i64>> {
            users.iter().map(|a| attr.numeric(a)).collect()
        };
        let countries: Vec<Option<&str>> = users.iter().map(|a| a.country.as_deref()).collect();
        Ok(match &self.kind {
            SchemeKind::Categorical { attribute, order } => {
                let text: Vec<Option<String>> = users.iter().map(|a| attribute.text(a)).collect();
                let values: Vec<Option<&str>> = text.iter().map(|t| t.as_deref()).collect();
                let order: Vec<&str> = order.iter().map(String::as_str).collect();
                bucket_categorical(&values, &order)
            }
            SchemeKind::EqualRange {
                attribute,
                width,
                anchor,
            } => bucket_equal_range(&numeric(*attribute), *width, *anchor),
            SchemeKind::EqualCount {
                attribute,
                bins,
                ordinal_labels,
            } => {
                let a = bucket_equal_count(&numeric(*attribute), *bins);
                if *ordinal_labels {
                    a.with_ordinal_labels()
                } else {
                    a
                }
            }
            SchemeKind::Brackets {
                attribute,
                lower_bounds,
            } => bucket_brackets(&numeric(*attribute), lower_bounds),
            SchemeKind::Capped { attribute, cap } => bucket_capped(&numeric(*attribute), *cap),
            SchemeKind::Prevalence { bins } => bucket_countries_by_prevalence(&countries, *bins),
            SchemeKind::ExternalOrder { bins } => {
                let gdp = gdp.ok_or_else(|| GroupingError::MissingGdp(self.name.clone()))?;
                bucket_countries_by_gdp(&countries, gdp, *bins)
            }
            SchemeKind::Control => {
                let ids: Vec<&str> = users.iter().map(|a| a.user_id.as_str()).collect();
                control_last_digit(&ids)
            }
        })
    }
}

/// Age brackets of the MovieLens 1M survey, also used for LFM360K ages.
pub const ORIGINAL_AGE_BRACKETS: [i64; 7] = [
    ML1M_AGE_CODES[0] as i64,
    ML1M_AGE_CODES[1] as i64,
    ML1M_AGE_CODES[2] as i64,
    ML1M_AGE_CODES[3] as i64,
    ML1M_AGE_CODES[4] as i64,
    ML1M_AGE_CODES[5] as i64,
    ML1M_AGE_CODES[6] as i64,
];

/// The schemes analysed for each dataset when the configuration does not
/// list its own.
pub fn default_schemes(provenance: Provenance, has_gdp: bool) -> Vec<GroupingScheme> {
    use SchemeKind::*;
    let gender = GroupingScheme::new(
        "gender",
        Categorical {
            attribute: Attribute::Gender,
            order: vec!["m".into(), "f".into()],
        },
    );
    let age_original = GroupingScheme::new(
        "age_original",
        Brackets {
            attribute: Attribute::Age,
            lower_bounds: ORIGINAL_AGE_BRACKETS.to_vec(),
        },
    );
    let age_equal_count = GroupingScheme::new(
        "age_equal_count",
        EqualCount {
            attribute: Attribute::Age,
            bins: 7,
            ordinal_labels: false,
        },
    );
    let usage = GroupingScheme::new(
        "usage",
        EqualCount {
            attribute: Attribute::Usage,
            bins: 7,
            ordinal_labels: true,
        },
    );
    let pop_index = GroupingScheme::new(
        "pop_index",
        Capped {
            attribute: Attribute::PopIndex,
            cap: 13,
        },
    );
    let control = GroupingScheme::new("last_digit", Control);
    match provenance {
        Provenance::Lfm360k => {
            let mut s = vec![
                age_original,
                GroupingScheme::new(
                    "age_equal_range",
                    EqualRange {
                        attribute: Attribute::Age,
                        width: 15,
                        anchor: Some(1),
                    },
                ),
                age_equal_count,
                gender,
                GroupingScheme::new("country_prevalence", Prevalence { bins: 3 }),
            ];
            if has_gdp {
                s.push(GroupingScheme::new("country_gdp", ExternalOrder { bins: 3 }));
            }
            s.extend([usage, pop_index, control]);
            s
        }
        Provenance::Ml1m => vec![age_original, gender, usage, pop_index, control],
        Provenance::Synthetic => vec![
            GroupingScheme::new(
                "planted_group",
                Categorical {
                    attribute: Attribute::Country,
                    order: Vec::new(),
                },
            ),
            gender,
            age_equal_count,
            usage,
            pop_index,
            control,
        ],
    }
}
