use std::fmt::Write;

use pollcast_core::{ForecastOutcome, Method, PartyCode, PartyRegistry, ThresholdFraction};
use serde::{Deserialize, Serialize};

/// Machine-readable forecast document (`--format json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub house_size: u32,
    pub threshold: ThresholdFraction,
    pub forecasts: Vec<ForecastOutcome>,
}

fn column_label(method: &Method) -> String {
    match method {
        Method::Raw => "Raw".into(),
        Method::Standardized => "Stand.".into(),
        Method::Fixed(groups) => format!("Fixed: {}", groups.join(", ")),
    }
}

/// Parties by methods, seats in each cell, then totals and sample sizes.
pub fn render_table(registry: &PartyRegistry, report: &Report) -> String {
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    if let Some(election) = registry.current() {
        for party in registry.parties_of(&election.id) {
            let cells = report
                .forecasts
                .iter()
                .map(|f| f.seats.get(party.code.as_str()).to_string())
                .collect();
            rows.push((party.display_name.clone(), cells));
        }
    }
    let footer = [
        (
            "Total".to_owned(),
            report.forecasts.iter().map(|f| f.seats.total().to_string()).collect(),
        ),
        (
            "Votes used".to_owned(),
            report
                .forecasts
                .iter()
                .map(|f| f.sample.used.to_string())
                .collect::<Vec<_>>(),
        ),
    ];

    let labels: Vec<String> = report.forecasts.iter().map(|f| column_label(&f.method)).collect();
    let first = rows
        .iter()
        .chain(&footer)
        .map(|(name, _)| name.chars().count())
        .max()
        .unwrap_or(0)
        .max(5);
    let widths: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            rows.iter()
                .chain(&footer)
                .map(|(_, c)| c[i].len())
                .chain([label.len()])
                .max()
                .unwrap_or(0)
        })
        .collect();

    let mut out = String::new();
    let mut line = |name: &str, cells: &[String]| {
        let _ = write!(out, "{name:<first$}");
        for (cell, width) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {cell:>width$}");
        }
        out.push('\n');
    };
    line("Party", &labels);
    for (name, cells) in &rows {
        line(name, cells);
    }
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&"-".repeat(first), &rule);
    for (name, cells) in &footer {
        line(name, cells);
    }

    // every prior-based method shares one weight table
    let mut noted: Vec<&Vec<PartyCode>> = Vec::new();
    for forecast in &report.forecasts {
        if !forecast.small_classes.is_empty() && !noted.contains(&&forecast.small_classes) {
            noted.push(&forecast.small_classes);
            let parties: Vec<&str> = forecast.small_classes.iter().map(|p| p.as_str()).collect();
            let _ = writeln!(
                out,
                "note: few respondents behind the weights of {}",
                parties.join(", ")
            );
        }
    }
    out
}
