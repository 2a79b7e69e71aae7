use std::path::Path;

use pptflow::features::io::atomic_write;

use crate::error::CliError;

/// A CSV file held as strings, with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = reader.headers()?.iter().map(str::to_string).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        Ok(Table {
            file: path.display().to_string(),
            headers,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Index of the first header matching any of `names`.
    pub fn find(&self, names: &[&str]) -> Option<usize> {
        names
            .iter()
            .find_map(|n| self.headers.iter().position(|h| h == n))
    }

    pub fn require(&self, names: &[&str]) -> Result<usize, CliError> {
        self.find(names).ok_or_else(|| {
            CliError::schema(format!(
                "{}: missing column `{}`",
                self.file,
                names.join("` or `")
            ))
        })
    }

    pub fn is_numeric(&self, col: usize) -> bool {
        self.rows
            .iter()
            .all(|r| r.get(col).is_some_and(|v| v.parse::<f64>().is_ok()))
    }

    pub fn numeric(&self, col: usize) -> Result<Vec<f64>, CliError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.get(col).and_then(|v| v.parse().ok()).ok_or_else(|| {
                    CliError::schema(format!(
                        "{}: row {}: column `{}` is not numeric",
                        self.file,
                        i + 2,
                        self.headers[col]
                    ))
                })
            })
            .collect()
    }
}

/// Writes a CSV atomically.
pub fn write_csv(path: &Path, headers: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::from(e.into_error()))?;
    atomic_write(path, &bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let headers = vec!["t".to_string(), "P".to_string(), "label".to_string()];
        let rows = vec![vec!["0".into(), "0.5".into(), "high".into()]];
        write_csv(&path, &headers, &rows).unwrap();
        let t = Table::read(&path).unwrap();
        assert_eq!((t.headers.clone(), t.rows.clone()), (headers, rows));
        assert_eq!(t.find(&["v", "P"]), Some(1));
        assert!(t.is_numeric(1) && !t.is_numeric(2));
        assert_eq!(t.numeric(1).unwrap(), vec![0.5]);
        assert_eq!(t.numeric(2).unwrap_err().code, crate::error::SCHEMA);
        assert_eq!(t.require(&["k"]).unwrap_err().code, crate::error::SCHEMA);
    }
}
