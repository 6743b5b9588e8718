//! Human-readable labels for coded designs, plain-text decoding, and CSV /
//! JSON import and export.
//!
//! CSV carries the coded matrix only (`set,alt,<columns>`), with the `alt`
//! cell of opt-out rows written as [`CSV_OPT_OUT`]. Base-level labels are not
//! representable there and come back as [`BASE_PLACEHOLDER`]; the JSON
//! document is the lossless format.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::design::{decode_row, CodedDesign, DesignRow};
use crate::error::{Error, Result};
use crate::optimizer::{CriterionKind, OptimResult};
use crate::settings::DesignSettings;

pub const SCHEMA_VERSION: u64 = 1;
pub const DEFAULT_OPT_OUT_LABEL: &str = "Opt-out";
/// `alt` cell marking the opt-out row of a set in CSV.
pub const CSV_OPT_OUT: &str = "opt-out";
/// Base-level label used when importing a CSV design.
pub const BASE_PLACEHOLDER: &str = "(base)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignFormat {
    Csv,
    Json,
}

impl std::str::FromStr for DesignFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidInput(format!(
                "unknown design format '{other}'"
            ))),
        }
    }
}

/// Search metadata carried along with a generated design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub criterion_kind: CriterionKind,
    pub criterion_value: f64,
    pub passes_used: usize,
    pub start_index: usize,
}

impl From<&OptimResult> for OptimizerSummary {
    fn from(r: &OptimResult) -> Self {
        Self {
            criterion_kind: r.criterion_kind,
            criterion_value: r.criterion_value,
            passes_used: r.passes_used,
            start_index: r.start_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDesign {
    pub coded: CodedDesign,
    pub attribute_names: Vec<String>,
    /// All level labels per attribute, base level first.
    pub level_names: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<DesignSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSummary>,
}

impl LabeledDesign {
    /// Labels a search result with the names from its settings and keeps
    /// both as metadata.
    pub fn from_result(result: &OptimResult, settings: &DesignSettings) -> Result<Self> {
        let mut labeled = label_design(
            &result.design,
            settings.attributes.iter().map(|a| a.name.clone()).collect(),
            settings
                .attributes
                .iter()
                .map(|a| a.levels.clone())
                .collect(),
        )?;
        labeled.settings = Some(settings.clone());
        labeled.optimizer = Some(result.into());
        Ok(labeled)
    }

    pub fn n_sets(&self) -> usize {
        self.coded.n_sets
    }
}

fn check_labels(
    coded: &CodedDesign,
    attribute_names: &[String],
    level_names: &[Vec<String>],
) -> Result<()> {
    if attribute_names.len() != coded.attribute_levels.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} attribute names, got {}",
            coded.attribute_levels.len(),
            attribute_names.len()
        )));
    }
    if level_names.len() != attribute_names.len() {
        return Err(Error::InvalidInput(format!(
            "expected level names for {} attributes, got {}",
            attribute_names.len(),
            level_names.len()
        )));
    }
    let mut seen = HashSet::new();
    for ((name, levels), &expected) in attribute_names
        .iter()
        .zip(level_names)
        .zip(&coded.attribute_levels)
    {
        if name.trim().is_empty() || name.contains('.') {
            return Err(Error::InvalidInput(format!(
                "attribute name '{name}' must be non-empty and must not contain '.'"
            )));
        }
        if !seen.insert(name) {
            return Err(Error::InvalidInput(format!(
                "duplicate attribute name '{name}'"
            )));
        }
        if levels.len() != expected {
            return Err(Error::InvalidInput(format!(
                "attribute '{name}' has {expected} levels but {} names were given",
                levels.len()
            )));
        }
        let mut distinct = HashSet::new();
        if let Some(bad) = levels
            .iter()
            .find(|l| l.trim().is_empty() || !distinct.insert(l.as_str()))
        {
            return Err(Error::InvalidInput(format!(
                "attribute '{name}': level names must be non-empty and distinct ('{bad}')"
            )));
        }
    }
    Ok(())
}

/// Attaches attribute and level names; the coded matrix is untouched apart
/// from its column labels, which become `attribute.level`.
pub fn label_design(
    coded: &CodedDesign,
    attribute_names: Vec<String>,
    level_names: Vec<Vec<String>>,
) -> Result<LabeledDesign> {
    check_labels(coded, &attribute_names, &level_names)?;
    let mut coded = coded.clone();
    coded.column_names = attribute_names
        .iter()
        .zip(&level_names)
        .flat_map(|(a, levels)| levels[1..].iter().map(move |l| format!("{a}.{l}")))
        .collect();
    Ok(LabeledDesign {
        coded,
        attribute_names,
        level_names,
        settings: None,
        optimizer: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeLevel {
    pub attribute: String,
    pub level: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedAlternative {
    pub label: String,
    pub opt_out: bool,
    /// One entry per attribute; empty for the opt-out.
    pub levels: Vec<AttributeLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedChoiceSet {
    pub set: usize,
    pub alternatives: Vec<DecodedAlternative>,
}

/// Display labels for alternatives; the last one labels the opt-out when the
/// design has one.
pub fn default_alternative_labels(design: &CodedDesign) -> Vec<String> {
    let mut labels: Vec<String> = (1..=design.n_real_alts())
        .map(|j| format!("Option {j}"))
        .collect();
    if design.opt_out {
        labels.push(DEFAULT_OPT_OUT_LABEL.to_string());
    }
    labels
}

pub fn decode_design(labeled: &LabeledDesign) -> Result<Vec<DecodedChoiceSet>> {
    decode_design_with_labels(labeled, &default_alternative_labels(&labeled.coded))
}

/// Decodes every set to level names. A coded row that is not a valid dummy
/// coding is an error, never a silent best guess.
pub fn decode_design_with_labels(
    labeled: &LabeledDesign,
    alternative_labels: &[String],
) -> Result<Vec<DecodedChoiceSet>> {
    let coded = &labeled.coded;
    check_labels(coded, &labeled.attribute_names, &labeled.level_names)?;
    if alternative_labels.len() != coded.alts_per_set {
        return Err(Error::InvalidInput(format!(
            "{} alternative labels for {} alternatives per set",
            alternative_labels.len(),
            coded.alts_per_set
        )));
    }
    let columns = coded.attribute_columns();
    coded
        .sets()
        .map(|rows| {
            let alternatives = rows
                .iter()
                .map(|row| {
                    let label = alternative_labels[row.alt - 1].clone();
                    if coded.is_opt_out(row) {
                        if row.x.iter().any(|&v| v != 0.0) {
                            return Err(Error::CorruptDesign(format!(
                                "opt-out row of set {} is not all zero",
                                row.set
                            )));
                        }
                        return Ok(DecodedAlternative {
                            label,
                            opt_out: true,
                            levels: Vec::new(),
                        });
                    }
                    if row.x.len() != coded.n_params() {
                        return Err(Error::CorruptDesign(format!(
                            "row ({}, {}) has {} columns, expected {}",
                            row.set,
                            row.alt,
                            row.x.len(),
                            coded.n_params()
                        )));
                    }
                    let levels = decode_row(&row.x, &columns).map_err(|e| match e {
                        Error::CorruptDesign(m) => {
                            Error::CorruptDesign(format!("row ({}, {}): {m}", row.set, row.alt))
                        }
                        other => other,
                    })?;
                    Ok(DecodedAlternative {
                        label,
                        opt_out: false,
                        levels: levels
                            .iter()
                            .enumerate()
                            .map(|(a, &l)| AttributeLevel {
                                attribute: labeled.attribute_names[a].clone(),
                                level: labeled.level_names[a][l].clone(),
                            })
                            .collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DecodedChoiceSet {
                set: rows[0].set,
                alternatives,
            })
        })
        .collect()
}

/// Plain-text rendering suitable for a paper questionnaire.
pub fn render_plain_text(sets: &[DecodedChoiceSet]) -> String {
    let mut out = String::new();
    for (i, set) in sets.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "Choice set {}", set.set);
        for alt in &set.alternatives {
            if alt.opt_out {
                let _ = writeln!(out, "  {}", alt.label);
                continue;
            }
            let _ = writeln!(out, "  {}:", alt.label);
            for al in &alt.levels {
                let _ = writeln!(out, "    {}: {}", al.attribute, al.level);
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct DesignDocument {
    schema_version: u64,
    attribute_names: Vec<String>,
    level_names: Vec<Vec<String>>,
    column_names: Vec<String>,
    n_sets: usize,
    alts_per_set: usize,
    opt_out: bool,
    rows: Vec<DesignRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    settings: Option<DesignSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerSummary>,
}

pub fn export_design(labeled: &LabeledDesign, format: DesignFormat) -> Vec<u8> {
    match format {
        DesignFormat::Csv => export_csv(&labeled.coded),
        DesignFormat::Json => {
            let doc = DesignDocument {
                schema_version: SCHEMA_VERSION,
                attribute_names: labeled.attribute_names.clone(),
                level_names: labeled.level_names.clone(),
                column_names: labeled.coded.column_names.clone(),
                n_sets: labeled.coded.n_sets,
                alts_per_set: labeled.coded.alts_per_set,
                opt_out: labeled.coded.opt_out,
                rows: labeled.coded.rows.clone(),
                settings: labeled.settings.clone(),
                optimizer: labeled.optimizer.clone(),
            };
            let mut bytes = serde_json::to_vec_pretty(&doc).expect("design serializes");
            bytes.push(b'\n');
            bytes
        }
    }
}

fn format_value(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v == 1.0 {
        "1".into()
    } else {
        v.to_string()
    }
}

fn export_csv(coded: &CodedDesign) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["set".to_string(), "alt".to_string()];
    header.extend(coded.column_names.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for row in &coded.rows {
        let alt = if coded.is_opt_out(row) {
            CSV_OPT_OUT.to_string()
        } else {
            row.alt.to_string()
        };
        let mut record = vec![row.set.to_string(), alt];
        record.extend(row.x.iter().map(|&v| format_value(v)));
        w.write_record(&record).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn import_design(bytes: &[u8], format: DesignFormat) -> Result<LabeledDesign> {
    match format {
        DesignFormat::Csv => import_csv(bytes),
        DesignFormat::Json => import_json(bytes),
    }
}

fn import_json(bytes: &[u8]) -> Result<LabeledDesign> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    match value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
    {
        Some(SCHEMA_VERSION) => {}
        Some(other) => return Err(Error::SchemaVersion(other)),
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing integer field schema_version".into(),
            })
        }
    }
    let doc: DesignDocument = serde_json::from_value(value).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let attribute_levels = doc.level_names.iter().map(Vec::len).collect();
    let coded = CodedDesign {
        column_names: doc.column_names,
        attribute_levels,
        rows: doc.rows,
        n_sets: doc.n_sets,
        alts_per_set: doc.alts_per_set,
        opt_out: doc.opt_out,
    };
    coded.validate()?;
    let mut labeled = label_design(&coded, doc.attribute_names, doc.level_names)?;
    if labeled.coded.column_names != coded.column_names {
        return Err(Error::Invariant(
            "column names do not match the attribute and level names".into(),
        ));
    }
    labeled.settings = doc.settings;
    labeled.optimizer = doc.optimizer;
    Ok(labeled)
}

fn import_csv(bytes: &[u8]) -> Result<LabeledDesign> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() < 3 || &header[0] != "set" || &header[1] != "alt" {
        return Err(Error::Parse {
            line: 1,
            message: "header must be set,alt followed by at least one coded column".into(),
        });
    }
    let column_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut attribute_names: Vec<String> = Vec::new();
    let mut level_names: Vec<Vec<String>> = Vec::new();
    for name in &column_names {
        let (attr, level) = name.split_once('.').ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("column '{name}' is not of the form attribute.level"),
        })?;
        if attribute_names.last().map(String::as_str) != Some(attr) {
            if attribute_names.iter().any(|a| a == attr) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("columns of attribute '{attr}' are not contiguous"),
                });
            }
            attribute_names.push(attr.to_string());
            level_names.push(vec![BASE_PLACEHOLDER.to_string()]);
        }
        level_names
            .last_mut()
            .expect("pushed above")
            .push(level.to_string());
    }

    let mut rows = Vec::new();
    let mut opt_out_rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let int = |idx: usize, what: &str| -> Result<usize> {
            record[idx].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid {what} '{}'", &record[idx]),
            })
        };
        let x = (2..record.len())
            .map(|c| {
                record[c].trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid value '{}' in column {}", &record[c], &header[c]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let set = int(0, "set")?;
        let alt = if record[1].trim() == CSV_OPT_OUT {
            opt_out_rows.push((line, rows.len()));
            // numbered once the set sizes are known
            0
        } else {
            int(1, "alt")?
        };
        rows.push(DesignRow { set, alt, x });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no design rows".into(),
        });
    }

    let n_sets = rows.iter().map(|r| r.set).max().unwrap_or(0);
    let opt_out = !opt_out_rows.is_empty();
    let alts_per_set = rows.iter().map(|r| r.alt).max().unwrap_or(0) + usize::from(opt_out);
    if opt_out && opt_out_rows.len() != n_sets {
        return Err(Error::Parse {
            line: opt_out_rows[0].0,
            message: format!(
                "{} of {n_sets} sets have an opt-out row; it must be all or none",
                opt_out_rows.len()
            ),
        });
    }
    for (_, index) in opt_out_rows {
        rows[index].alt = alts_per_set;
    }
    let coded = CodedDesign {
        column_names,
        attribute_levels: level_names.iter().map(Vec::len).collect(),
        rows,
        n_sets,
        alts_per_set,
        opt_out,
    };
    coded.validate()?;
    label_design(&coded, attribute_names, level_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::Coding;

    pub(crate) fn table_names() -> (Vec<String>, Vec<Vec<String>>) {
        let names = [
            "Effectiveness",
            "Required dosage",
            "Adverse events",
            "Out-of-pocket cost",
        ];
        let levels: [&[&str]; 4] = [
            &["70%", "80%", "90%"],
            &["1 dose", "2 doses"],
            &[
                "1 in 1000 patients",
                "1 in 500 patients",
                "1 in 100 patients",
            ],
            &["100€", "150€", "200€"],
        ];
        (
            names.iter().map(|s| s.to_string()).collect(),
            levels
                .iter()
                .map(|l| l.iter().map(|s| s.to_string()).collect())
                .collect(),
        )
    }

    fn numbered_design() -> CodedDesign {
        let coding = Coding::new(
            (1..=4).map(|i| format!("att{i}")).collect(),
            [3, 2, 3, 3]
                .iter()
                .map(|&n| (1..=n).map(|l| l.to_string()).collect())
                .collect(),
        )
        .unwrap();
        CodedDesign::from_levels(
            &coding,
            &[
                vec![vec![2, 0, 1, 0], vec![0, 0, 0, 0]],
                vec![vec![1, 1, 2, 2], vec![0, 1, 0, 1]],
            ],
            true,
        )
    }

    #[test]
    fn labels_rename_columns_only() {
        let coded = numbered_design();
        let (names, levels) = table_names();
        let labeled = label_design(&coded, names.clone(), levels.clone()).unwrap();
        assert_eq!(labeled.coded.column_names[0], "Effectiveness.80%");
        assert_eq!(labeled.coded.rows, coded.rows);
        let again = label_design(&labeled.coded, names, levels).unwrap();
        assert_eq!(again, labeled);
    }

    #[test]
    fn label_count_mismatch_names_attribute() {
        let coded = numbered_design();
        let (mut names, mut levels) = table_names();
        names.pop();
        let short = levels[..3].to_vec();
        assert!(label_design(&coded, names, short).is_err());

        let (names, _) = table_names();
        levels[1].push("3 doses".into());
        match label_design(&coded, names, levels) {
            Err(Error::InvalidInput(m)) => assert!(m.contains("Required dosage"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decode_levels_and_base() {
        let (names, levels) = table_names();
        let labeled = label_design(&numbered_design(), names, levels).unwrap();
        let sets = decode_design(&labeled).unwrap();
        let first = &sets[0].alternatives[0];
        assert_eq!(first.label, "Option 1");
        assert_eq!(first.levels[0].level, "90%");
        let base = &sets[0].alternatives[1];
        let base_levels: Vec<&str> = base.levels.iter().map(|l| l.level.as_str()).collect();
        assert_eq!(base_levels, ["70%", "1 dose", "1 in 1000 patients", "100€"]);
        assert!(sets[0].alternatives[2].opt_out);
        assert_eq!(sets[0].alternatives[2].label, DEFAULT_OPT_OUT_LABEL);

        let text = render_plain_text(&sets);
        assert!(text.contains("    Effectiveness: 90%\n"), "{text}");
        assert!(text.contains("  Opt-out\n"));
    }

    #[test]
    fn decode_rejects_corrupt_rows() {
        let (names, levels) = table_names();
        let mut labeled = label_design(&numbered_design(), names, levels).unwrap();
        labeled.coded.rows[0].x[0] = 1.0;
        labeled.coded.rows[0].x[1] = 1.0;
        assert!(matches!(
            decode_design(&labeled),
            Err(Error::CorruptDesign(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let (names, levels) = table_names();
        let labeled = label_design(&numbered_design(), names, levels).unwrap();
        let text = String::from_utf8(export_design(&labeled, DesignFormat::Csv)).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "set,alt,Effectiveness.80%,Effectiveness.90%,Required dosage.2 doses,\
             Adverse events.1 in 500 patients,Adverse events.1 in 100 patients,\
             Out-of-pocket cost.150€,Out-of-pocket cost.200€"
        );
        assert_eq!(lines.next().unwrap(), "1,1,0,1,0,1,0,0,0");
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn csv_round_trip_keeps_coded_content() {
        let (names, levels) = table_names();
        let labeled = label_design(&numbered_design(), names, levels).unwrap();
        let back = import_design(
            &export_design(&labeled, DesignFormat::Csv),
            DesignFormat::Csv,
        )
        .unwrap();
        assert_eq!(back.coded, labeled.coded);
        assert_eq!(back.level_names[0][0], BASE_PLACEHOLDER);
        assert_eq!(back.level_names[0][1..], labeled.level_names[0][1..]);
    }

    #[test]
    fn json_round_trip_is_identity() {
        let (names, levels) = table_names();
        let labeled = label_design(&numbered_design(), names, levels).unwrap();
        let bytes = export_design(&labeled, DesignFormat::Json);
        let value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(value["schema_version"], 1);
        assert_eq!(import_design(&bytes, DesignFormat::Json).unwrap(), labeled);
    }

    #[test]
    fn import_errors_are_distinct() {
        let truncated = b"set,alt,a.2\n1,1,1\n1,2";
        match import_design(truncated, DesignFormat::Csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }

        let dup = b"set,alt,a.2\n1,1,1\n1,1,0\n";
        assert!(matches!(
            import_design(dup, DesignFormat::Csv),
            Err(Error::Invariant(_))
        ));

        let (names, levels) = table_names();
        let labeled = label_design(&numbered_design(), names, levels).unwrap();
        let mut value: serde_json::Value =
            serde_json::from_slice(&export_design(&labeled, DesignFormat::Json)).unwrap();
        value["schema_version"] = 2.into();
        let bytes = serde_json::to_vec(&value).unwrap();
        assert_eq!(
            import_design(&bytes, DesignFormat::Json),
            Err(Error::SchemaVersion(2))
        );

        assert!(matches!(
            import_design(b"{\"schema_version\": 1", DesignFormat::Json),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_opt_out_marker() {
        let text = b"set,alt,a.2\n1,1,1\n1,2,0\n1,opt-out,0\n2,1,0\n2,2,1\n2,opt-out,0\n";
        let design = import_design(text, DesignFormat::Csv).unwrap();
        assert!(design.coded.opt_out);
        assert_eq!(design.coded.alts_per_set, 3);
        assert_eq!(export_design(&design, DesignFormat::Csv), text);

        // an all-zero last row without the marker is an ordinary alternative
        let plain = b"set,alt,a.2\n1,1,1\n1,2,0\n";
        assert!(
            !import_design(plain, DesignFormat::Csv)
                .unwrap()
                .coded
                .opt_out
        );

        let partial = b"set,alt,a.2\n1,1,1\n1,2,0\n1,opt-out,0\n2,1,0\n2,2,1\n2,3,0\n";
        assert!(matches!(
            import_design(partial, DesignFormat::Csv),
            Err(Error::Parse { .. })
        ));
    }
}
