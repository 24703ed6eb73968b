use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::Point;
use crate::error::{Error, Result};

/// Labelled points of a common dimension.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledDataset {
    rows: Vec<(Point, usize)>,
}

impl LabeledDataset {
    pub fn new(rows: Vec<(Point, usize)>) -> Result<Self> {
        if let Some((first, _)) = rows.first() {
            let dim = first.dim();
            if let Some((bad, _)) = rows.iter().find(|(p, _)| p.dim() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: bad.dim(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dimension of the points, `None` for an empty dataset.
    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(|(p, _)| p.dim())
    }

    pub fn rows(&self) -> &[(Point, usize)] {
        &self.rows
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|(_, y)| *y).collect()
    }

    /// Reads CSV rows of `d` floats followed by an integer label. The
    /// dimension is taken from the first row.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows = Vec::new();
        let mut dim = None;
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(rows.len() + 1, |p| p.line() as usize);
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            if record.len() < 2 {
                return Err(err(format!("expected at least one coordinate and a label, got {} fields", record.len())));
            }
            let d = record.len() - 1;
            let expected = *dim.get_or_insert(d);
            if d != expected {
                return Err(err(format!("expected {expected} coordinates, got {d}")));
            }
            let coords = record
                .iter()
                .take(d)
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad coordinate {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let label_field = &record[d];
            let label = label_field
                .parse::<usize>()
                .map_err(|e| err(format!("bad label {label_field:?}: {e}")))?;
            let point = Point::new(coords).map_err(|e| err(e.to_string()))?;
            rows.push((point, label));
        }
        if rows.is_empty() {
            return Err(Error::Empty(format!("dataset {} has no rows", path.display())));
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for (p, y) in &self.rows {
            let mut fields: Vec<String> = p.as_slice().iter().map(f64::to_string).collect();
            fields.push(y.to_string());
            writer.write_record(&fields)?;
        }
        writer.flush()?;
        Ok(())
    }
}
