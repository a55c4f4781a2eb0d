//! Parsers for the LFM360K and MovieLens 1M dumps and the GDP side table.
//!
//! Malformed records are skipped and counted, never fatal; only a failing
//! reader aborts. Lines that are not valid UTF-8 are decoded as Latin-1.

use std::collections::HashSet;
use std::io::{self, BufRead, Read};

use log::warn;
use recaudit_core::model::ML1M_AGE_CODES;
use recaudit_core::{GdpTable, Gender, Provenance, RawDataset, UserAttributes};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("read failed at line {line}: {source}")]
    Read { line: usize, source: io::Error },
    #[error("gdp table: {0}")]
    Gdp(#[from] csv::Error),
}

/// Line accounting for one input stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LineReport {
    /// Non-blank lines seen.
    pub lines: usize,
    pub skipped: usize,
    pub duplicates: usize,
}

pub type Triple = (String, String, f64);

/// Calls `f(line_number, line)` for every non-blank line, without the line
/// terminator.
fn for_each_line<R: BufRead>(
    mut reader: R,
    mut f: impl FnMut(usize, &str),
) -> Result<(), IngestError> {
    let mut buf = Vec::new();
    let mut number = 0;
    loop {
        buf.clear();
        number += 1;
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|source| IngestError::Read {
                line: number,
                source,
            })?;
        if n == 0 {
            return Ok(());
        }
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        if buf.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match std::str::from_utf8(&buf) {
            Ok(line) => f(number, line),
            Err(_) => {
                let latin1: String = buf.iter().map(|&b| b as char).collect();
                f(number, &latin1)
            }
        }
    }
}

/// `user-sha1 \t artist-mbid \t artist-name \t plays`. Artists are keyed on
/// mbid, or on name when the mbid is empty.
pub fn parse_lfm_interactions<R: BufRead>(
    reader: R,
) -> Result<(Vec<Triple>, LineReport), IngestError> {
    let mut triples = Vec::new();
    let mut report = LineReport::default();
    for_each_line(reader, |_, line| {
        report.lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = match fields[..] {
            [user, mbid, name, plays] => {
                let artist = if mbid.trim().is_empty() { name } else { mbid };
                let plays = plays.trim().parse::<u64>().ok().filter(|&p| p > 0);
                match (user.trim(), artist.trim(), plays) {
                    (u, a, Some(p)) if !u.is_empty() && !a.is_empty() => {
                        Some((u.to_string(), a.to_string(), p as f64))
                    }
                    _ => None,
                }
            }
            _ => None,
        };
        match parsed {
            Some(t) => triples.push(t),
            None => report.skipped += 1,
        }
    })?;
    Ok((triples, report))
}

/// `user-sha1 \t gender \t age \t country \t signup`; missing trailing
/// fields read as empty. Repeated user ids keep the first row.
pub fn parse_lfm_profiles<R: BufRead>(
    reader: R,
) -> Result<(Vec<UserAttributes>, LineReport), IngestError> {
    let mut users = Vec::new();
    let mut seen = HashSet::new();
    let mut report = LineReport::default();
    for_each_line(reader, |number, line| {
        report.lines += 1;
        let mut fields: Vec<&str> = line.split('\t').collect();
        if fields.len() > 5 || fields[0].trim().is_empty() {
            report.skipped += 1;
            return;
        }
        fields.resize(5, "");
        let id = fields[0].trim();
        if !seen.insert(id.to_string()) {
            warn!("profile line {number}: duplicate user {id}, keeping the first");
            report.duplicates += 1;
            return;
        }
        let text = |s: &str| Some(s.trim().to_string()).filter(|s| !s.is_empty());
        users.push(UserAttributes {
            gender: Gender::parse(fields[1]),
            age: fields[2].trim().parse().ok().filter(|a| (1..=120).contains(a)),
            country: text(fields[3]),
            signup: text(fields[4]),
            ..UserAttributes::new(id)
        });
    })?;
    Ok((users, report))
}

/// `UserID::MovieID::Rating::Timestamp`; ratings outside 1..=5 are skipped.
pub fn parse_ml1m_ratings<R: BufRead>(
    reader: R,
) -> Result<(Vec<Triple>, LineReport), IngestError> {
    let mut triples = Vec::new();
    let mut report = LineReport::default();
    for_each_line(reader, |number, line| {
        report.lines += 1;
        let fields: Vec<&str> = line.split("::").map(str::trim).collect();
        let parsed = match fields[..] {
            [user, movie, rating, _timestamp] if !user.is_empty() && !movie.is_empty() => rating
                .parse::<u8>()
                .ok()
                .filter(|r| (1..=5).contains(r))
                .map(|r| (user.to_string(), movie.to_string(), f64::from(r))),
            _ => None,
        };
        match parsed {
            Some(t) => triples.push(t),
            None => {
                warn!("ratings line {number}: skipped malformed record");
                report.skipped += 1;
            }
        }
    })?;
    Ok((triples, report))
}

/// `UserID::Gender::Age::Occupation::Zip`. The age field is a bracket code;
/// codes outside the published set read as missing. Occupation and zip are
/// checked for presence only.
pub fn parse_ml1m_users<R: BufRead>(
    reader: R,
) -> Result<(Vec<UserAttributes>, LineReport), IngestError> {
    let mut users = Vec::new();
    let mut seen = HashSet::new();
    let mut report = LineReport::default();
    for_each_line(reader, |number, line| {
        report.lines += 1;
        let fields: Vec<&str> = line.split("::").map(str::trim).collect();
        let [id, gender, age, _occupation, _zip] = fields[..] else {
            report.skipped += 1;
            return;
        };
        if id.is_empty() {
            report.skipped += 1;
            return;
        }
        if !seen.insert(id.to_string()) {
            warn!("users line {number}: duplicate user {id}, keeping the first");
            report.duplicates += 1;
            return;
        }
        users.push(UserAttributes {
            gender: Gender::parse(gender),
            age: age.parse().ok().filter(|a| ML1M_AGE_CODES.contains(a)),
            ..UserAttributes::new(id)
        });
    })?;
    Ok((users, report))
}

pub fn parse_ml1m<R1: BufRead, R2: BufRead>(
    ratings: R1,
    users: R2,
) -> Result<(RawDataset, LineReport, LineReport), IngestError> {
    let (triples, rating_report) = parse_ml1m_ratings(ratings)?;
    let (attributes, user_report) = parse_ml1m_users(users)?;
    Ok((
        RawDataset {
            triples,
            attributes,
            provenance: Provenance::Ml1m,
        },
        rating_report,
        user_report,
    ))
}

/// `country,gdp_per_capita` rows. A first row whose second field is not a
/// number is a header; later non-numeric or non-positive rows are skipped.
pub fn load_gdp_table<R: Read>(reader: R) -> Result<(GdpTable, LineReport), IngestError> {
    let mut table = GdpTable::new();
    let mut report = LineReport::default();
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        report.lines += 1;
        let value = record.get(1).and_then(|v| v.parse::<f64>().ok());
        match (record.get(0), value) {
            (Some(country), Some(v)) if !country.is_empty() => {
                if !table.insert(country, v) {
                    warn!("gdp row {}: {country} has non-positive value {v}", i + 1);
                    report.skipped += 1;
                }
            }
            _ if i == 0 => report.lines -= 1,
            _ => {
                warn!("gdp row {}: skipped non-numeric record", i + 1);
                report.skipped += 1;
            }
        }
    }
    Ok((table, report))
}
