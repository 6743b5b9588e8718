use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::coding::Coding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    /// 1-based choice set index.
    pub set: usize,
    /// 1-based alternative index within the set; the opt-out is last.
    pub alt: usize,
    pub x: Vec<f64>,
}

/// Dummy-coded design matrix, rows grouped by set and ordered by alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedDesign {
    pub column_names: Vec<String>,
    /// Level count per attribute; fixes which columns belong together.
    pub attribute_levels: Vec<usize>,
    pub rows: Vec<DesignRow>,
    pub n_sets: usize,
    /// Rows per set, including the opt-out when present.
    pub alts_per_set: usize,
    pub opt_out: bool,
}

impl CodedDesign {
    /// Builds a design from level indices `levels[set][alt][attribute]`,
    /// appending an all-zero opt-out row per set when requested.
    pub fn from_levels(coding: &Coding, levels: &[Vec<Vec<usize>>], opt_out: bool) -> Self {
        let k = coding.n_params();
        let n_alts = levels.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(levels.len() * (n_alts + 1));
        for (s, set) in levels.iter().enumerate() {
            for (j, alt) in set.iter().enumerate() {
                rows.push(DesignRow {
                    set: s + 1,
                    alt: j + 1,
                    x: coding.encode(alt),
                });
            }
            if opt_out {
                rows.push(DesignRow {
                    set: s + 1,
                    alt: set.len() + 1,
                    x: vec![0.0; k],
                });
            }
        }
        Self {
            column_names: coding.column_names(),
            attribute_levels: coding.level_counts(),
            rows,
            n_sets: levels.len(),
            alts_per_set: n_alts + usize::from(opt_out),
            opt_out,
        }
    }

    pub fn n_params(&self) -> usize {
        self.column_names.len()
    }

    /// Alternatives per set excluding the opt-out.
    pub fn n_real_alts(&self) -> usize {
        self.alts_per_set - usize::from(self.opt_out)
    }

    /// Rows of set `s` (1-based).
    pub fn set_rows(&self, s: usize) -> &[DesignRow] {
        let start = (s - 1) * self.alts_per_set;
        &self.rows[start..start + self.alts_per_set]
    }

    pub fn sets(&self) -> impl Iterator<Item = &[DesignRow]> {
        self.rows.chunks(self.alts_per_set)
    }

    pub fn is_opt_out(&self, row: &DesignRow) -> bool {
        self.opt_out && row.alt == self.alts_per_set
    }

    /// Column ranges per attribute derived from `attribute_levels`.
    pub fn attribute_columns(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.attribute_levels
            .iter()
            .map(|&l| {
                let r = start..start + l.saturating_sub(1);
                start = r.end;
                r
            })
            .collect()
    }

    /// Level indices per non-opt-out row, `[set][alt][attribute]`.
    pub fn level_matrix(&self) -> Result<Vec<Vec<Vec<usize>>>> {
        let columns = self.attribute_columns();
        self.sets()
            .map(|rows| {
                rows.iter()
                    .filter(|r| !self.is_opt_out(r))
                    .map(|r| decode_row(&r.x, &columns))
                    .collect()
            })
            .collect()
    }

    /// Checks every structural invariant of a coded design.
    pub fn validate(&self) -> Result<()> {
        let k = self.n_params();
        let columns = self.attribute_columns();
        if self.attribute_levels.iter().any(|&l| l < 2) {
            return Err(Error::Invariant(
                "every attribute needs at least 2 levels".into(),
            ));
        }
        if columns.last().map_or(0, |r| r.end) != k {
            return Err(Error::Invariant(format!(
                "attribute levels imply {} columns but the design has {k}",
                columns.last().map_or(0, |r| r.end)
            )));
        }
        if self.n_sets == 0 || self.n_real_alts() < 2 {
            return Err(Error::Invariant(
                "a design needs at least one set of two or more alternatives".into(),
            ));
        }
        if self.rows.len() != self.n_sets * self.alts_per_set {
            return Err(Error::Invariant(format!(
                "expected {} rows ({} sets x {} alternatives), found {}",
                self.n_sets * self.alts_per_set,
                self.n_sets,
                self.alts_per_set,
                self.rows.len()
            )));
        }
        let mut seen = HashSet::new();
        for row in &self.rows {
            if !seen.insert((row.set, row.alt)) {
                return Err(Error::Invariant(format!(
                    "duplicate (set, alt) pair ({}, {})",
                    row.set, row.alt
                )));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            let (s, j) = (i / self.alts_per_set + 1, i % self.alts_per_set + 1);
            if (row.set, row.alt) != (s, j) {
                return Err(Error::Invariant(format!(
                    "row {} is ({}, {}) but ({s}, {j}) was expected; rows must be grouped by set",
                    i + 1,
                    row.set,
                    row.alt
                )));
            }
            if row.x.len() != k {
                return Err(Error::Invariant(format!(
                    "row ({}, {}) has {} columns, expected {k}",
                    row.set,
                    row.alt,
                    row.x.len()
                )));
            }
            if self.is_opt_out(row) {
                if row.x.iter().any(|&v| v != 0.0) {
                    return Err(Error::Invariant(format!(
                        "opt-out row of set {} must be all zero",
                        row.set
                    )));
                }
            } else {
                decode_row(&row.x, &columns).map_err(|e| match e {
                    Error::CorruptDesign(m) => {
                        Error::Invariant(format!("row ({}, {}): {m}", row.set, row.alt))
                    }
                    other => other,
                })?;
            }
        }
        for (s, set) in self.level_matrix()?.iter().enumerate() {
            let mut profiles = HashSet::new();
            for alt in set {
                if !profiles.insert(alt) {
                    return Err(Error::Invariant(format!(
                        "set {} contains two identical alternatives",
                        s + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn decode_row(x: &[f64], columns: &[std::ops::Range<usize>]) -> Result<Vec<usize>> {
    columns
        .iter()
        .enumerate()
        .map(|(a, range)| {
            let mut level = 0;
            for (offset, c) in range.clone().enumerate() {
                let v = x[c];
                if v == 1.0 {
                    if level != 0 {
                        return Err(Error::CorruptDesign(format!(
                            "attribute {} has more than one active level",
                            a + 1
                        )));
                    }
                    level = offset + 1;
                } else if v != 0.0 {
                    return Err(Error::CorruptDesign(format!(
                        "attribute {} has non-binary value {v}",
                        a + 1
                    )));
                }
            }
            Ok(level)
        })
        .collect()
}

/// Named coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
}

impl Coefficients {
    pub fn new(names: Vec<String>, beta: Vec<f64>) -> Result<Self> {
        if names.len() != beta.len() {
            return Err(Error::InvalidInput(format!(
                "{} names for {} coefficients",
                names.len(),
                beta.len()
            )));
        }
        Ok(Self { names, beta })
    }

    /// Unnamed coefficients labelled b1, b2, ...
    pub fn from_values(beta: Vec<f64>) -> Self {
        let names = (1..=beta.len()).map(|i| format!("b{i}")).collect();
        Self { names, beta }
    }

    pub fn zeros(k: usize) -> Self {
        Self::from_values(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceProbabilities {
    pub set: usize,
    pub probs: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coding() -> Coding {
        Coding::new(
            vec!["a".into(), "b".into()],
            vec![
                vec!["0".into(), "1".into(), "2".into()],
                vec!["x".into(), "y".into()],
            ],
        )
        .unwrap()
    }

    #[test]
    fn from_levels_layout() {
        let d = CodedDesign::from_levels(
            &coding(),
            &[vec![vec![0, 0], vec![2, 1]], vec![vec![1, 0], vec![0, 1]]],
            true,
        );
        assert_eq!(d.rows.len(), 6);
        assert_eq!(d.alts_per_set, 3);
        assert_eq!(d.set_rows(2)[0].x, vec![1.0, 0.0, 0.0]);
        assert!(d.is_opt_out(&d.rows[2]));
        assert!(!d.is_opt_out(&d.rows[1]));
        d.validate().unwrap();
        assert_eq!(d.level_matrix().unwrap()[0][1], vec![2, 1]);
    }

    #[test]
    fn validate_catches_violations() {
        let good = CodedDesign::from_levels(&coding(), &[vec![vec![0, 0], vec![2, 1]]], true);

        let mut dup = good.clone();
        dup.rows[1].x = dup.rows[0].x.clone();
        assert!(matches!(dup.validate(), Err(Error::Invariant(m)) if m.contains("identical")));

        let mut optout = good.clone();
        optout.rows[2].x[0] = 1.0;
        assert!(optout.validate().is_err());

        let mut corrupt = good.clone();
        corrupt.rows[1].x = vec![1.0, 1.0, 0.0];
        assert!(corrupt.validate().is_err());

        let mut pair = good.clone();
        pair.rows[1].alt = 1;
        assert!(matches!(pair.validate(), Err(Error::Invariant(m)) if m.contains("duplicate")));
    }

    #[test]
    fn coefficients_length_checked() {
        assert!(Coefficients::new(vec!["a".into()], vec![1.0, 2.0]).is_err());
        assert_eq!(Coefficients::zeros(3).names[2], "b3");
    }
}
