//! Raw log parsing for the two supported on-disk formats.

use super::{Catalog, InteractionRecord};
use crate::error::{CoreError, Result};
use std::io::BufRead;
use std::path::Path;

/// Supported raw interaction formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// `user::item::rating::timestamp` lines (MovieLens .dat).
    Dat,
    /// CSV with header `user_id,item_id,rating,timestamp`.
    Csv,
}

impl std::str::FromStr for InputFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dat" => Ok(InputFormat::Dat),
            "csv" => Ok(InputFormat::Csv),
            other => Err(format!("unknown input format `{other}` (use dat or csv)")),
        }
    }
}

impl std::fmt::Display for InputFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputFormat::Dat => "dat",
            InputFormat::Csv => "csv",
        })
    }
}

/// Counters describing a parse pass, surfaced in the store manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseStats {
    /// Lines that yielded a record.
    pub interactions: usize,
    /// Lines rejected as malformed (limited samples kept for diagnostics).
    pub malformed: usize,
    pub malformed_samples: Vec<String>,
    /// interactions / distinct users, before any length filtering.
    pub mean_history_len: f64,
}

/// Parsed records plus the catalog and stats derived from them.
#[derive(Debug)]
pub struct ParseOutput {
    pub records: Vec<InteractionRecord>,
    pub catalog: Catalog,
    pub stats: ParseStats,
}

const MAX_SAMPLES: usize = 5;
const MALFORMED_LIMIT: f64 = 0.01;

/// Reads and validates an interaction log. Individually malformed lines are
/// skipped and counted; the whole parse fails if more than 1% of non-empty
/// lines are malformed, or if nothing parses at all.
pub fn parse_interactions(path: &Path, format: InputFormat) -> Result<ParseOutput> {
    let file = std::fs::File::open(path)
        .map_err(|e| CoreError::io(format!("open {}", path.display()), e))?;
    let reader = std::io::BufReader::new(file);

    let mut records = Vec::new();
    let mut malformed = 0usize;
    let mut samples = Vec::new();
    let mut total = 0usize;
    let mut lines = reader.lines().enumerate();

    if format == InputFormat::Csv {
        // The header is required and fixed; a wrong header fails fast rather
        // than silently mis-binding columns.
        match lines.next() {
            Some((_, Ok(header))) => {
                if header.trim() != "user_id,item_id,rating,timestamp" {
                    return Err(CoreError::Data(format!(
                        "{}: expected CSV header `user_id,item_id,rating,timestamp`, got `{}`",
                        path.display(),
                        header.trim()
                    )));
                }
            }
            Some((_, Err(e))) => return Err(CoreError::io(format!("read {}", path.display()), e)),
            None => return Err(CoreError::Data(format!("{}: empty file", path.display()))),
        }
    }

    for (line_no, line) in lines {
        let line = line.map_err(|e| CoreError::io(format!("read {}", path.display()), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        total += 1;
        match parse_line(trimmed, format) {
            Some(rec) => records.push(rec),
            None => {
                malformed += 1;
                if samples.len() < MAX_SAMPLES {
                    samples.push(format!("line {}: {}", line_no + 1, truncate(trimmed, 80)));
                }
            }
        }
    }

    if records.is_empty() {
        return Err(CoreError::Data(format!(
            "{}: no parseable interactions ({malformed} malformed lines)",
            path.display()
        )));
    }
    if (malformed as f64) > MALFORMED_LIMIT * total as f64 {
        return Err(CoreError::Data(format!(
            "{}: {malformed} of {total} lines malformed (> {:.0}%); samples: {}",
            path.display(),
            MALFORMED_LIMIT * 100.0,
            samples.join(" | ")
        )));
    }

    let item_ids: Vec<u64> = records.iter().map(|r| r.item).collect();
    let user_ids: Vec<u64> = records.iter().map(|r| r.user).collect();
    let catalog = Catalog::new(item_ids, user_ids);
    let mean_history_len = records.len() as f64 / catalog.user_count() as f64;

    let stats = ParseStats {
        interactions: records.len(),
        malformed,
        malformed_samples: samples,
        mean_history_len,
    };
    Ok(ParseOutput {
        records,
        catalog,
        stats,
    })
}

fn parse_line(line: &str, format: InputFormat) -> Option<InteractionRecord> {
    let fields: Vec<&str> = match format {
        InputFormat::Dat => line.split("::").collect(),
        InputFormat::Csv => line.split(',').collect(),
    };
    if fields.len() != 4 {
        return None;
    }
    let user: u64 = fields[0].trim().parse().ok()?;
    let item: u64 = fields[1].trim().parse().ok()?;
    let rating = parse_rating(fields[2].trim())?;
    let timestamp: i64 = fields[3].trim().parse().ok()?;
    let label = u8::from(rating > 3);
    Some(InteractionRecord {
        user,
        item,
        rating,
        timestamp,
        label,
    })
}

/// Ratings must be integral 1..=5; "4.0" is accepted, "3.5" is not.
fn parse_rating(s: &str) -> Option<u8> {
    let value: f64 = s.parse().ok()?;
    if !value.is_finite() || value.fract() != 0.0 {
        return None;
    }
    let r = value as i64;
    (1..=5).contains(&r).then_some(r as u8)
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &s[..end])
}
