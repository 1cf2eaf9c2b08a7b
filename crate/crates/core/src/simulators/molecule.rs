use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{format_value, Feedback};
use crate::error::{Error, Result};

/// Gap must equal `lumo - homo` to within this.
pub const GAP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyTarget {
    #[default]
    Homo,
    Lumo,
    Gap,
}

impl PropertyTarget {
    pub fn label(self) -> &'static str {
        match self {
            PropertyTarget::Homo => "HOMO",
            PropertyTarget::Lumo => "LUMO",
            PropertyTarget::Gap => "HOMO-LUMO gap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeRow {
    pub id: String,
    pub descriptors: Vec<f64>,
    pub homo: f64,
    pub lumo: f64,
    pub gap: f64,
}

impl MoleculeRow {
    pub fn value(&self, target: PropertyTarget) -> f64 {
        match target {
            PropertyTarget::Homo => self.homo,
            PropertyTarget::Lumo => self.lumo,
            PropertyTarget::Gap => self.gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeInstance {
    pub descriptor_names: Vec<String>,
    pub rows: Vec<MoleculeRow>,
    pub target: PropertyTarget,
}

impl MoleculeInstance {
    /// Reads `id,<descriptor...>,homo,lumo,gap`. `source` names the input in
    /// error messages.
    pub fn from_csv<R: Read>(reader: R, source: &Path, target: PropertyTarget) -> Result<Self> {
        let invalid = |message: String| Error::InstanceInvalid {
            path: source.to_path_buf(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let n = header.len();
        if n < 4 || header[0] != "id" || header[n - 3] != "homo" || header[n - 2] != "lumo" || header[n - 1] != "gap" {
            return Err(invalid(format!(
                "header must be `id,<descriptor...>,homo,lumo,gap`, got `{}`",
                header.join(",")
            )));
        }
        let descriptor_names = header[1..n - 3].to_vec();
        let mut rows = Vec::new();
        let mut ids = BTreeSet::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let parse_err = |message: String| Error::InstanceParse {
                path: source.to_path_buf(),
                line,
                message,
            };
            if rec.len() != n {
                return Err(parse_err(format!("expected {n} fields, found {}", rec.len())));
            }
            let num = |i: usize| -> Result<f64> {
                let v: f64 = rec[i]
                    .parse()
                    .map_err(|_| parse_err(format!("field `{}` is not a number: `{}`", header[i], &rec[i])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(format!("field `{}` is not finite", header[i])))
                }
            };
            let id = rec[0].to_string();
            if id.is_empty() {
                return Err(parse_err("empty molecule id".into()));
            }
            let descriptors = (1..n - 3).map(num).collect::<Result<Vec<_>>>()?;
            let row = MoleculeRow {
                id: id.clone(),
                descriptors,
                homo: num(n - 3)?,
                lumo: num(n - 2)?,
                gap: num(n - 1)?,
            };
            if (row.gap - (row.lumo - row.homo)).abs() > GAP_TOLERANCE {
                return Err(invalid(format!(
                    "row `{id}` (line {line}): gap {} != lumo - homo = {}",
                    row.gap,
                    row.lumo - row.homo
                )));
            }
            if !ids.insert(id.clone()) {
                return Err(invalid(format!("row `{id}` (line {line}): duplicate molecule id")));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(invalid("no molecules".into()));
        }
        Ok(MoleculeInstance {
            descriptor_names,
            rows,
            target,
        })
    }

    pub fn load(path: &Path, target: PropertyTarget) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_csv(f, path, target)
    }

    pub fn row(&self, id: &str) -> Option<&MoleculeRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn truth(&self) -> BTreeMap<String, f64> {
        self.rows.iter().map(|r| (r.id.clone(), r.value(self.target))).collect()
    }

    pub fn column_mean(&self) -> f64 {
        self.rows.iter().map(|r| r.value(self.target)).sum::<f64>() / self.rows.len() as f64
    }

    pub fn missing(&self, values: &BTreeMap<String, f64>) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rows {
            match values.get(&r.id) {
                None => out.push(format!("no value for molecule {}", r.id)),
                Some(v) if !v.is_finite() => out.push(format!("non-finite value for molecule {}", r.id)),
                _ => {}
            }
        }
        for k in values.keys() {
            if self.row(k).is_none() {
                out.push(format!("unknown molecule {k}"));
            }
        }
        out
    }

    pub(crate) fn feedback(&self, values: &BTreeMap<String, f64>) -> Result<Feedback> {
        let missing = self.missing(values);
        if !missing.is_empty() {
            return Err(Error::Infeasible(missing.join(", ")));
        }
        let mut sum = 0.0;
        let mut worst: (&str, f64) = (&self.rows[0].id, -1.0);
        for r in &self.rows {
            let err = values[&r.id] - r.value(self.target);
            sum += err * err;
            if err.abs() > worst.1 {
                worst = (&r.id, err.abs());
            }
        }
        let mut fb = Feedback::new(sum / self.rows.len() as f64);
        fb.statements
            .push(format!("abs_error({}) = {}", worst.0, format_value(worst.1)));
        Ok(fb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = "id,n_atoms,dipole,homo,lumo,gap\n\
                         m1,3,1.85,-7.0,1.0,8.0\n\
                         m2,5,0.0,-6.5,0.5,7.0\n";

    fn load(text: &str) -> Result<MoleculeInstance> {
        MoleculeInstance::from_csv(text.as_bytes(), Path::new("t.csv"), PropertyTarget::Homo)
    }

    #[test]
    fn loads_table() {
        let m = load(TABLE).unwrap();
        assert_eq!(m.descriptor_names, vec!["n_atoms", "dipole"]);
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.rows[1].descriptors, vec![5.0, 0.0]);
    }

    #[test]
    fn true_column_scores_zero() {
        let m = load(TABLE).unwrap();
        assert_eq!(m.feedback(&m.truth()).unwrap().objective, 0.0);
        let fb = m.feedback(&[("m1".into(), -6.0), ("m2".into(), -6.5)].into()).unwrap();
        assert_eq!(fb.objective, 0.5);
        assert_eq!(fb.statements, vec!["abs_error(m1) = 1"]);
    }

    #[test]
    fn inconsistent_gap_names_the_row() {
        let bad = "id,x,homo,lumo,gap\nm1,1,-7.0,1.0,8.0\nm9,1,-7.0,1.0,7.5\n";
        let err = load(bad).unwrap_err().to_string();
        assert!(err.contains("m9"), "{err}");
    }

    #[test]
    fn schema_errors() {
        assert!(load("id,homo,lumo\nm1,1,2\n").is_err());
        let err = load("id,x,homo,lumo,gap\nm1,abc,-7,1,8\n").unwrap_err();
        assert!(matches!(err, Error::InstanceParse { line: 2, .. }), "{err}");
        assert!(load("id,x,homo,lumo,gap\nm1,1,-7,1,8\nm1,2,-7,1,8\n").is_err());
    }

    #[test]
    fn missing_values_listed() {
        let m = load(TABLE).unwrap();
        let partial = [("m1".to_string(), -7.0)].into();
        assert_eq!(m.missing(&partial), vec!["no value for molecule m2"]);
        assert!(m.feedback(&partial).is_err());
    }
}
