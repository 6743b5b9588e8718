//! Dummy coding of attribute levels.
//!
//! Each attribute with L levels contributes L − 1 binary columns. The first
//! listed level is the omitted base and codes to all zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::settings::DesignSettings;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coding {
    attribute_names: Vec<String>,
    level_names: Vec<Vec<String>>,
    /// First column of each attribute.
    offsets: Vec<usize>,
    k: usize,
}

impl Coding {
    pub fn new(attribute_names: Vec<String>, level_names: Vec<Vec<String>>) -> Result<Self> {
        if attribute_names.len() != level_names.len() {
            return Err(Error::InvalidInput(format!(
                "{} attribute names but {} level lists",
                attribute_names.len(),
                level_names.len()
            )));
        }
        let mut offsets = Vec::with_capacity(level_names.len());
        let mut k = 0;
        for (name, levels) in attribute_names.iter().zip(&level_names) {
            if levels.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "attribute '{name}' needs at least 2 levels"
                )));
            }
            offsets.push(k);
            k += levels.len() - 1;
        }
        Ok(Self {
            attribute_names,
            level_names,
            offsets,
            k,
        })
    }

    pub fn n_params(&self) -> usize {
        self.k
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.level_names.iter().map(Vec::len).collect()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn level_names(&self) -> &[Vec<String>] {
        &self.level_names
    }

    /// Columns `[start, end)` that belong to attribute `a`.
    pub fn columns_of(&self, a: usize) -> std::ops::Range<usize> {
        let start = self.offsets[a];
        start..start + self.level_names[a].len() - 1
    }

    /// Column for level `level` of attribute `a`; `None` for the base level.
    pub fn column(&self, a: usize, level: usize) -> Option<usize> {
        (level > 0).then(|| self.offsets[a] + level - 1)
    }

    /// `attribute.level` labels, base levels omitted.
    pub fn column_names(&self) -> Vec<String> {
        self.attribute_names
            .iter()
            .zip(&self.level_names)
            .flat_map(|(attr, levels)| levels[1..].iter().map(move |l| format!("{attr}.{l}")))
            .collect()
    }

    pub fn encode_into(&self, levels: &[usize], x: &mut [f64]) {
        debug_assert_eq!(levels.len(), self.n_attributes());
        x.iter_mut().for_each(|v| *v = 0.0);
        for (a, &level) in levels.iter().enumerate() {
            if let Some(c) = self.column(a, level) {
                x[c] = 1.0;
            }
        }
    }

    pub fn encode(&self, levels: &[usize]) -> Vec<f64> {
        let mut x = vec![0.0; self.k];
        self.encode_into(levels, &mut x);
        x
    }

    /// Inverse of [`Coding::encode`]. Rejects any vector that is not a valid
    /// dummy coding (values other than 0/1, or two 1s within one attribute).
    pub fn decode(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.k {
            return Err(Error::CorruptDesign(format!(
                "coded row has {} columns, expected {}",
                x.len(),
                self.k
            )));
        }
        (0..self.n_attributes())
            .map(|a| {
                let mut level = 0;
                for (offset, c) in self.columns_of(a).enumerate() {
                    match x[c] {
                        v if v == 0.0 => {}
                        v if v == 1.0 => {
                            if level != 0 {
                                return Err(Error::CorruptDesign(format!(
                                    "attribute '{}' has more than one active level",
                                    self.attribute_names[a]
                                )));
                            }
                            level = offset + 1;
                        }
                        v => {
                            return Err(Error::CorruptDesign(format!(
                                "attribute '{}' has non-binary value {v}",
                                self.attribute_names[a]
                            )))
                        }
                    }
                }
                Ok(level)
            })
            .collect()
    }
}

/// Coding map for the settings' attributes.
pub fn dummy_code(settings: &DesignSettings) -> Result<Coding> {
    Coding::new(
        settings.attributes.iter().map(|a| a.name.clone()).collect(),
        settings
            .attributes
            .iter()
            .map(|a| a.levels.clone())
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::settings::AttributeSpec;

    fn labelled() -> DesignSettings {
        let mut s = DesignSettings::from_levels(&[3, 2, 3, 3], 2, 16);
        s.attributes = vec![
            AttributeSpec::new("Effectiveness", &["70%", "80%", "90%"]),
            AttributeSpec::new("Required dosage", &["1 dose", "2 doses"]),
            AttributeSpec::new(
                "Adverse events",
                &[
                    "1 in 1000 patients",
                    "1 in 500 patients",
                    "1 in 100 patients",
                ],
            ),
            AttributeSpec::new("Out-of-pocket cost", &["100€", "150€", "200€"]),
        ];
        s
    }

    #[test]
    fn column_counts() {
        assert_eq!(dummy_code(&labelled()).unwrap().n_params(), 7);
        let one = DesignSettings::from_levels(&[2], 2, 1);
        assert_eq!(dummy_code(&one).unwrap().n_params(), 1);
        let two = DesignSettings::from_levels(&[4, 4], 2, 6);
        assert_eq!(dummy_code(&two).unwrap().n_params(), 6);
    }

    #[test]
    fn column_names_skip_base() {
        let names = dummy_code(&labelled()).unwrap().column_names();
        assert_eq!(names[0], "Effectiveness.80%");
        assert_eq!(names[1], "Effectiveness.90%");
        assert_eq!(names[2], "Required dosage.2 doses");
        assert_eq!(names[6], "Out-of-pocket cost.200€");
        assert!(!names.iter().any(|n| n.ends_with("70%")));
    }

    #[test]
    fn encode_decode() {
        let coding = dummy_code(&labelled()).unwrap();
        let x = coding.encode(&[2, 0, 1, 0]);
        assert_eq!(x, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(coding.decode(&x).unwrap(), vec![2, 0, 1, 0]);
        assert_eq!(coding.decode(&[0.0; 7]).unwrap(), vec![0; 4]);
    }

    #[test]
    fn decode_rejects_double_activation() {
        let coding = dummy_code(&labelled()).unwrap();
        let bad = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(coding.decode(&bad), Err(Error::CorruptDesign(_))));
        let frac = [0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(coding.decode(&frac), Err(Error::CorruptDesign(_))));
    }
}
