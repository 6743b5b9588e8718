//! Long-format choice data: one row per alternative of each answered task.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the column produced by [`recode_price_continuous`].
pub const CONT_PRICE: &str = "cont_price";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    /// Choice task identifier, unique per (respondent, set).
    pub gid: u64,
    pub respondent: u64,
    pub alt: usize,
    pub choice: u8,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResponseDataset {
    pub covariate_names: Vec<String>,
    pub rows: Vec<ResponseRow>,
}

impl ResponseDataset {
    pub fn new(covariate_names: Vec<String>) -> Self {
        Self {
            covariate_names,
            rows: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Row indices per gid, in first-appearance order of the gids.
    pub fn tasks(&self) -> Vec<Vec<usize>> {
        let mut order = Vec::new();
        let mut index: HashMap<u64, usize> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            let slot = *index.entry(row.gid).or_insert_with(|| {
                order.push(Vec::new());
                order.len() - 1
            });
            order[slot].push(i);
        }
        order
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks().len()
    }

    /// Every gid has at least two rows and exactly one chosen row, and all
    /// rows carry one value per covariate.
    pub fn validate(&self) -> Result<()> {
        let k = self.covariate_names.len();
        let mut per_gid: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
        for row in &self.rows {
            if row.covariates.len() != k {
                return Err(Error::InvalidInput(format!(
                    "gid {}: row has {} covariates, expected {k}",
                    row.gid,
                    row.covariates.len()
                )));
            }
            if row.choice > 1 {
                return Err(Error::InvalidInput(format!(
                    "gid {}: choice must be 0 or 1, got {}",
                    row.gid, row.choice
                )));
            }
            let entry = per_gid.entry(row.gid).or_default();
            entry.0 += 1;
            entry.1 += usize::from(row.choice);
        }
        for (gid, (rows, chosen)) in per_gid {
            if rows < 2 {
                return Err(Error::InvalidInput(format!(
                    "gid {gid}: a task needs at least 2 alternatives"
                )));
            }
            if chosen != 1 {
                return Err(Error::InvalidInput(format!(
                    "gid {gid}: expected exactly one chosen alternative, found {chosen}"
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["gid", "respondent", "alt", "choice"];
        header.extend(self.covariate_names.iter().map(String::as_str));
        w.write_record(&header).map_err(io_err)?;
        for row in &self.rows {
            let mut record = vec![
                row.gid.to_string(),
                row.respondent.to_string(),
                row.alt.to_string(),
                row.choice.to_string(),
            ];
            record.extend(row.covariates.iter().map(|v| v.to_string()));
            w.write_record(&record).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }

    /// Parses and validates a dataset; line numbers in errors are 1-based
    /// and count the header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header = r
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let fixed = ["gid", "respondent", "alt", "choice"];
        if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h.trim() != f) {
            return Err(Error::Parse {
                line: 1,
                message: "header must start with gid,respondent,alt,choice".into(),
            });
        }
        let covariate_names: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, record) in r.records().enumerate() {
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
            let field = |idx: usize| record.get(idx).unwrap_or("").trim();
            let parse_err = |name: &str, value: &str| Error::Parse {
                line,
                message: format!("invalid {name} '{value}'"),
            };
            let gid = field(0).parse().map_err(|_| parse_err("gid", field(0)))?;
            let respondent = field(1)
                .parse()
                .map_err(|_| parse_err("respondent", field(1)))?;
            let alt = field(2).parse().map_err(|_| parse_err("alt", field(2)))?;
            let choice = field(3)
                .parse()
                .map_err(|_| parse_err("choice", field(3)))?;
            let covariates = (4..header.len())
                .map(|c| {
                    field(c)
                        .parse::<f64>()
                        .map_err(|_| parse_err(&header[c], field(c)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(ResponseRow {
                gid,
                respondent,
                alt,
                choice,
                covariates,
            });
        }
        let data = Self {
            covariate_names,
            rows,
        };
        data.validate()?;
        Ok(data)
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::InvalidInput(e.to_string())
}

/// Replaces a price attribute's dummy columns with one continuous
/// [`CONT_PRICE`] column: `base + Σ dummy_c · (value_c − base)`.
pub fn recode_price_continuous(
    data: &ResponseDataset,
    price_columns: &[String],
    level_values: &BTreeMap<String, f64>,
    base_value: f64,
) -> Result<ResponseDataset> {
    if price_columns.is_empty() {
        return Err(Error::InvalidInput("no price columns given".into()));
    }
    if data.column_index(CONT_PRICE).is_some() {
        return Err(Error::InvalidInput(format!(
            "dataset already has a {CONT_PRICE} column"
        )));
    }
    let mut indices = Vec::with_capacity(price_columns.len());
    let mut deltas = Vec::with_capacity(price_columns.len());
    for name in price_columns {
        let idx = data
            .column_index(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown price column '{name}'")))?;
        let value = level_values.get(name).ok_or_else(|| {
            Error::InvalidInput(format!("no numeric value for price level '{name}'"))
        })?;
        indices.push(idx);
        deltas.push(value - base_value);
    }
    for row in &data.rows {
        let active: usize = indices
            .iter()
            .map(|&i| match row.covariates[i] {
                v if v == 0.0 => Ok(0),
                v if v == 1.0 => Ok(1),
                v => Err(Error::InvalidInput(format!(
                    "gid {}: price column '{}' is not a dummy (value {v})",
                    row.gid, data.covariate_names[i]
                ))),
            })
            .sum::<Result<usize>>()?;
        if active > 1 {
            return Err(Error::InvalidInput(format!(
                "gid {}: more than one price level active in one row",
                row.gid
            )));
        }
    }

    let keep: Vec<usize> = (0..data.covariate_names.len())
        .filter(|i| !indices.contains(i))
        .collect();
    let mut covariate_names: Vec<String> = keep
        .iter()
        .map(|&i| data.covariate_names[i].clone())
        .collect();
    covariate_names.push(CONT_PRICE.to_string());
    let rows = data
        .rows
        .iter()
        .map(|row| {
            let price = base_value
                + indices
                    .iter()
                    .zip(&deltas)
                    .map(|(&i, d)| row.covariates[i] * d)
                    .sum::<f64>();
            let mut covariates: Vec<f64> = keep.iter().map(|&i| row.covariates[i]).collect();
            covariates.push(price);
            ResponseRow {
                covariates,
                ..row.clone()
            }
        })
        .collect();
    Ok(ResponseDataset {
        covariate_names,
        rows,
    })
}

/// Recodes the dummy columns of one attribute (`attribute.level`) into
/// [`CONT_PRICE`]. `level_values` lists the numeric value of every level,
/// base level first. Without an attribute name the last attribute group of
/// the dataset is used.
pub fn recode_price_attribute(
    data: &ResponseDataset,
    attribute: Option<&str>,
    level_values: &[f64],
) -> Result<ResponseDataset> {
    let attribute = match attribute {
        Some(a) => a.to_string(),
        None => data
            .covariate_names
            .last()
            .and_then(|n| n.split_once('.'))
            .map(|(a, _)| a.to_string())
            .ok_or_else(|| {
                Error::InvalidInput("cannot infer the price attribute from the columns".into())
            })?,
    };
    let prefix = format!("{attribute}.");
    let columns: Vec<String> = data
        .covariate_names
        .iter()
        .filter(|n| n.starts_with(&prefix))
        .cloned()
        .collect();
    if columns.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no columns belong to price attribute '{attribute}'"
        )));
    }
    if level_values.len() != columns.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "price attribute '{attribute}' has {} levels but {} values were given",
            columns.len() + 1,
            level_values.len()
        )));
    }
    if level_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "price level values must be finite".into(),
        ));
    }
    let values = columns
        .iter()
        .cloned()
        .zip(level_values[1..].iter().copied())
        .collect();
    recode_price_continuous(data, &columns, &values, level_values[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ResponseDataset {
        let names = vec![
            "eff.80".to_string(),
            "cost.150".to_string(),
            "cost.200".to_string(),
        ];
        let row = |gid, alt, choice, x: [f64; 3]| ResponseRow {
            gid,
            respondent: 1,
            alt,
            choice,
            covariates: x.to_vec(),
        };
        ResponseDataset {
            covariate_names: names,
            rows: vec![
                row(1, 1, 1, [1.0, 1.0, 0.0]),
                row(1, 2, 0, [0.0, 0.0, 0.0]),
                row(2, 1, 0, [0.0, 0.0, 1.0]),
                row(2, 2, 1, [1.0, 0.0, 0.0]),
            ],
        }
    }

    fn price_values() -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("cost.150".to_string(), 150.0),
            ("cost.200".to_string(), 200.0),
        ])
    }

    #[test]
    fn recode_price() {
        let out = recode_price_continuous(
            &sample(),
            &["cost.150".into(), "cost.200".into()],
            &price_values(),
            100.0,
        )
        .unwrap();
        assert_eq!(out.covariate_names, vec!["eff.80", CONT_PRICE]);
        let prices: Vec<f64> = out.rows.iter().map(|r| r.covariates[1]).collect();
        assert_eq!(prices, vec![150.0, 100.0, 200.0, 100.0]);
    }

    #[test]
    fn recode_errors() {
        let cols = vec!["cost.150".to_string(), "cost.250".to_string()];
        assert!(recode_price_continuous(&sample(), &cols, &price_values(), 100.0).is_err());
        let mut values = price_values();
        values.remove("cost.200");
        let cols = vec!["cost.150".to_string(), "cost.200".to_string()];
        assert!(recode_price_continuous(&sample(), &cols, &values, 100.0).is_err());
    }

    #[test]
    fn recode_by_attribute() {
        let out = recode_price_attribute(&sample(), None, &[100.0, 150.0, 200.0]).unwrap();
        assert_eq!(
            out,
            recode_price_continuous(
                &sample(),
                &["cost.150".into(), "cost.200".into()],
                &price_values(),
                100.0
            )
            .unwrap()
        );
        assert!(recode_price_attribute(&sample(), Some("cost"), &[1.0, 2.0]).is_err());
        assert!(recode_price_attribute(&sample(), Some("size"), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn validate_rules() {
        sample().validate().unwrap();
        let mut two_chosen = sample();
        two_chosen.rows[1].choice = 1;
        assert!(two_chosen.validate().is_err());
        let mut lonely = sample();
        lonely.rows.truncate(3);
        assert!(lonely.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let data = sample();
        let text = data.to_csv_string();
        assert!(text.starts_with("gid,respondent,alt,choice,eff.80,cost.150,cost.200\n"));
        assert_eq!(ResponseDataset::read_csv(text.as_bytes()).unwrap(), data);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "gid,respondent,alt,choice,x\n1,1,1,1,0\n1,1,2,0,abc\n";
        match ResponseDataset::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_valid() {
        let data = ResponseDataset::new(vec!["a".into()]);
        data.validate().unwrap();
        let back = ResponseDataset::read_csv(data.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back, data);
    }
}
