//! Count comparison between counting methods and ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DensityMap,
    DetectThenCount,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::DensityMap => "density-map",
            Method::DetectThenCount => "detect-then-count",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Method::DensityMap => "Density map",
            Method::DetectThenCount => "Detect-then-count",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One estimated count for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub scenario: String,
    pub method: Method,
    pub estimated: f64,
    pub ground_truth: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub ground_truth: u64,
    pub estimated: BTreeMap<Method, f64>,
    pub abs_error: BTreeMap<Method, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mae: f64,
    /// Not part of the reference table; reported as a supplementary metric.
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub rows: Vec<ScenarioRow>,
    pub summary: Vec<MethodSummary>,
}

pub fn mae(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Config("MAE of an empty error list".into()));
    }
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64)
}

pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Config("RMSE of an empty error list".into()));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// Aggregates records into per-scenario rows (sorted by scenario name) and
/// per-method error summaries. The result does not depend on record order.
pub fn build_report(records: &[CountRecord]) -> Result<ScenarioReport> {
    if records.is_empty() {
        return Err(Error::invalid("count records", "no records to report"));
    }
    let mut by_scenario: BTreeMap<&str, (u64, BTreeMap<Method, f64>)> = BTreeMap::new();
    for (index, r) in records.iter().enumerate() {
        let ctx = || format!("record {index} ({}, {})", r.scenario, r.method);
        if !(r.estimated.is_finite() && r.estimated >= 0.0) {
            return Err(Error::invalid(
                ctx(),
                format!("estimated count must be finite and non-negative, got {}", r.estimated),
            ));
        }
        let entry = by_scenario
            .entry(r.scenario.as_str())
            .or_insert((r.ground_truth, BTreeMap::new()));
        if entry.0 != r.ground_truth {
            return Err(Error::invalid(
                ctx(),
                format!(
                    "ground truth {} disagrees with {} given by another record",
                    r.ground_truth, entry.0
                ),
            ));
        }
        if entry.1.insert(r.method, r.estimated).is_some() {
            return Err(Error::invalid(ctx(), "duplicate scenario/method pair"));
        }
    }

    let methods: BTreeSet<Method> = by_scenario
        .values()
        .next()
        .map(|(_, m)| m.keys().copied().collect())
        .unwrap_or_default();
    for (scenario, (_, m)) in &by_scenario {
        if !m.keys().copied().eq(methods.iter().copied()) {
            return Err(Error::invalid(
                format!("scenario '{scenario}'"),
                "every scenario must report the same set of methods",
            ));
        }
    }

    let rows: Vec<ScenarioRow> = by_scenario
        .into_iter()
        .map(|(scenario, (gt, estimated))| {
            let abs_error = estimated
                .iter()
                .map(|(&m, &e)| (m, (e - gt as f64).abs()))
                .collect();
            ScenarioRow {
                scenario: scenario.to_owned(),
                ground_truth: gt,
                estimated,
                abs_error,
            }
        })
        .collect();

    let summary = methods
        .iter()
        .map(|&method| {
            let errors: Vec<f64> = rows.iter().map(|r| r.abs_error[&method]).collect();
            Ok(MethodSummary {
                method,
                mae: mae(&errors)?,
                rmse: rmse(&errors)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ScenarioReport { rows, summary })
}

fn fmt_count(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl ScenarioReport {
    pub fn methods(&self) -> Vec<Method> {
        self.summary.iter().map(|s| s.method).collect()
    }

    /// Markdown table: one column per method, ground truth, then absolute
    /// errors; estimates rounded to whole persons. A second table carries
    /// MAE and RMSE.
    pub fn to_markdown(&self) -> String {
        let methods = self.methods();
        let mut out = String::new();
        let mut header = vec!["Scenario".to_owned()];
        header.extend(methods.iter().map(|m| m.title().to_owned()));
        header.push("Ground truth".into());
        header.extend(methods.iter().map(|m| format!("Abs. error ({})", m.as_str())));
        push_row(&mut out, &header);
        push_row(&mut out, &vec!["---".to_owned(); header.len()]);
        for row in &self.rows {
            let mut cells = vec![row.scenario.clone()];
            cells.extend(methods.iter().map(|m| format!("{:.0}", row.estimated[m].round())));
            cells.push(row.ground_truth.to_string());
            cells.extend(methods.iter().map(|m| fmt_count(row.abs_error[m])));
            push_row(&mut out, &cells);
        }
        out.push('\n');
        push_row(&mut out, &["Method".into(), "MAE".into(), "RMSE*".into()]);
        push_row(&mut out, &vec!["---".to_owned(); 3]);
        for s in &self.summary {
            push_row(
                &mut out,
                &[s.method.as_str().into(), format!("{:.2}", s.mae), format!("{:.2}", s.rmse)],
            );
        }
        out.push_str("\n*RMSE is a supplementary metric; the reference count table reports counts only.\n");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn push_row(out: &mut String, cells: &[String]) {
    out.push('|');
    for c in cells {
        out.push(' ');
        out.push_str(c);
        out.push_str(" |");
    }
    out.push('\n');
}

#[derive(Deserialize)]
struct CsvRecord {
    scenario: String,
    method: Method,
    estimated: f64,
    ground_truth: Option<u64>,
}

/// Reads `scenario,method,estimated,ground_truth` CSV. Extra columns are
/// ignored; an empty ground truth is an error.
pub fn read_counts(reader: impl Read) -> Result<Vec<CountRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize::<CsvRecord>()
        .enumerate()
        .map(|(index, rec)| {
            let rec = rec?;
            let ground_truth = rec.ground_truth.ok_or_else(|| {
                Error::invalid(
                    format!("record {index} ({}, {})", rec.scenario, rec.method),
                    "missing ground truth",
                )
            })?;
            Ok(CountRecord {
                scenario: rec.scenario,
                method: rec.method,
                estimated: rec.estimated,
                ground_truth,
            })
        })
        .collect()
}

pub fn load_counts(path: impl AsRef<Path>) -> Result<Vec<CountRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    read_counts(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rec(s: &str, m: Method, est: f64, gt: u64) -> CountRecord {
        CountRecord {
            scenario: s.into(),
            method: m,
            estimated: est,
            ground_truth: gt,
        }
    }

    #[test]
    fn metric_examples() {
        assert_relative_eq!(mae(&[2.0, 23.0, 1.0, 1.0, 26.0]).unwrap(), 10.6, max_relative = 1e-15);
        assert_eq!(mae(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(mae(&[3.0, 4.0]).unwrap(), 3.5);
        assert!((rmse(&[3.0, 4.0]).unwrap() - 3.5355).abs() < 1e-4);
        assert!(mae(&[]).is_err());
        assert!(rmse(&[]).is_err());
    }

    #[test]
    fn exact_single_record() {
        let r = build_report(&[rec("a", Method::DensityMap, 5.0, 5)]).unwrap();
        assert_eq!(r.rows[0].abs_error[&Method::DensityMap], 0.0);
        assert_eq!(r.summary[0].mae, 0.0);
    }

    #[test]
    fn rejects_duplicates_and_inconsistent_inputs() {
        let dup = [
            rec("a", Method::DensityMap, 5.0, 5),
            rec("a", Method::DensityMap, 6.0, 5),
        ];
        assert!(build_report(&dup).unwrap_err().to_string().contains("duplicate"));
        let gt = [
            rec("a", Method::DensityMap, 5.0, 5),
            rec("a", Method::DetectThenCount, 6.0, 4),
        ];
        assert!(build_report(&gt).is_err());
        let ragged = [
            rec("a", Method::DensityMap, 5.0, 5),
            rec("a", Method::DetectThenCount, 6.0, 5),
            rec("b", Method::DensityMap, 1.0, 1),
        ];
        assert!(build_report(&ragged).is_err());
        assert!(build_report(&[]).is_err());
        assert!(build_report(&[rec("a", Method::DensityMap, -1.0, 5)]).is_err());
    }

    #[test]
    fn csv_parsing() {
        let text = "scenario,method,estimated,ground_truth\nGarden,density-map,27,25\n";
        let recs = read_counts(text.as_bytes()).unwrap();
        assert_eq!(recs, vec![rec("Garden", Method::DensityMap, 27.0, 25)]);
        let missing = "scenario,method,estimated,ground_truth\nGarden,density-map,27,\n";
        assert!(read_counts(missing.as_bytes()).unwrap_err().to_string().contains("ground truth"));
        let bad_method = "scenario,method,estimated,ground_truth\nGarden,yolo,27,25\n";
        assert!(read_counts(bad_method.as_bytes()).is_err());
    }

    #[test]
    fn markdown_rounds_estimates() {
        let r = build_report(&[rec("a", Method::DensityMap, 4.6, 5)]).unwrap();
        let md = r.to_markdown();
        assert!(md.contains("| a | 5 | 5 | 0.40 |"), "{md}");
    }
}
