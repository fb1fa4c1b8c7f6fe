//! Official results CSV: header `party,votes,valid`, one row per party.
//! Rows with `valid=false` hold illegal or discarded ballots.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;

use pollcast_core::{OfficialResults, OfficialRow, PartyCode};
use serde::Deserialize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for CsvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for CsvError {}

#[derive(Deserialize)]
struct Row {
    party: String,
    votes: String,
    valid: String,
}

fn parse_bool(text: &str) -> Option<bool> {
    match text.trim().to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

/// Parses the whole file, collecting every bad row.
pub fn parse_official_results(input: impl Read) -> Result<OfficialResults, Vec<CsvError>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut errors = Vec::new();

    let headers = match reader.headers() {
        Ok(h) => {
            let names: BTreeSet<&str> = h.iter().collect();
            for required in ["party", "votes", "valid"] {
                if !names.contains(required) {
                    errors.push(CsvError {
                        line: 1,
                        message: format!("missing column `{required}`"),
                    });
                }
            }
            h.clone()
        }
        Err(e) => {
            errors.push(CsvError {
                line: 1,
                message: e.to_string(),
            });
            csv::StringRecord::new()
        }
    };
    if !errors.is_empty() {
        return Err(errors);
    }

    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for result in reader.records() {
        let record = match result {
            Ok(record) => record,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(CsvError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = match record.deserialize(Some(&headers)) {
            Ok(row) => row,
            Err(e) => {
                errors.push(CsvError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let code = PartyCode::new(row.party.clone());
        if !code.is_well_formed() {
            errors.push(CsvError {
                line,
                message: format!("malformed party code `{}`", row.party),
            });
            continue;
        }
        let Ok(votes) = row.votes.parse::<u64>() else {
            errors.push(CsvError {
                line,
                message: format!("vote count `{}` is not a non-negative integer", row.votes),
            });
            continue;
        };
        let Some(valid) = parse_bool(&row.valid) else {
            errors.push(CsvError {
                line,
                message: format!("validity flag `{}` is not true/false", row.valid),
            });
            continue;
        };
        if !seen.insert(code.clone()) {
            errors.push(CsvError {
                line,
                message: format!("duplicate party `{code}`"),
            });
            continue;
        }
        rows.push(OfficialRow {
            party: code,
            votes,
            valid,
        });
    }

    if errors.is_empty() {
        Ok(OfficialResults { rows })
    } else {
        Err(errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pollcast_core::fixtures::{sample_official, SAMPLE_OFFICIAL_CSV};

    #[test]
    fn bundled_results_parse() {
        let parsed = parse_official_results(SAMPLE_OFFICIAL_CSV.as_bytes()).unwrap();
        assert_eq!(parsed, sample_official());
        assert_eq!(parsed.rows.iter().filter(|r| !r.valid).count(), 1);
    }

    #[test]
    fn columns_may_be_reordered() {
        let parsed = parse_official_results("valid,party,votes\nTRUE,A,10\nfalse,B,3\n".as_bytes()).unwrap();
        assert_eq!(parsed.valid_counts().len(), 1);
        assert_eq!(
            parsed.rows[1],
            OfficialRow {
                party: "B".into(),
                votes: 3,
                valid: false
            }
        );
    }

    #[test]
    fn bad_rows_are_positioned() {
        let text = "party,votes,valid\nA,10,true\nB,-4,true\nC,7,maybe\nA,1,true\nD,5\n";
        let errors = parse_official_results(text.as_bytes()).unwrap_err();
        let lines: Vec<u64> = errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![3, 4, 5, 6]);
        assert!(errors[0].message.contains("non-negative"));
        assert!(errors[2].message.contains("duplicate"));
    }

    #[test]
    fn missing_header_column() {
        let errors = parse_official_results("party,votes\nA,1\n".as_bytes()).unwrap_err();
        assert_eq!(
            errors,
            vec![CsvError {
                line: 1,
                message: "missing column `valid`".into()
            }]
        );
    }
}
