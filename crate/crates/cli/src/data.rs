//! Observation table: `site_x,site_y,time,y,<covariates...>` with `#`
//! comment lines; an empty or `NA` response marks a missing value.

use std::path::Path;

use crate::error::{CliError, Result};

pub const REQUIRED: [&str; 4] = ["site_x", "site_y", "time", "y"];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Every numeric column except `y`, in file order.
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<Option<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|source| CliError::Csv { path: path.to_path_buf(), source })?;
        let headers = rdr
            .headers()
            .map_err(|source| CliError::Csv { path: path.to_path_buf(), source })?
            .clone();
        let header_names: Vec<String> = headers.iter().map(str::to_string).collect();
        let data_err = |line: u64, message: String| CliError::Data { path: path.to_path_buf(), line, message };
        for r in REQUIRED {
            if !header_names.iter().any(|h| h == r) {
                return Err(data_err(1, format!("missing required column `{r}`")));
            }
        }
        let y_col = header_names.iter().position(|h| h == "y").expect("checked");
        let names: Vec<String> = header_names.iter().filter(|h| *h != "y").cloned().collect();
        let mut columns = vec![Vec::new(); names.len()];
        let mut y = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|source| CliError::Csv { path: path.to_path_buf(), source })?;
            let line = rec.position().map_or(0, |p| p.line());
            let mut k = 0;
            for (i, field) in rec.iter().enumerate() {
                if i == y_col {
                    y.push(match field {
                        "" | "NA" => None,
                        v => Some(v.parse::<f64>().map_err(|_| data_err(line, format!("response {v:?} is not a number")))?),
                    });
                } else {
                    let v = field
                        .parse::<f64>()
                        .map_err(|_| data_err(line, format!("column `{}`: {field:?} is not a number", names[k])))?;
                    columns[k].push(v);
                    k += 1;
                }
            }
        }
        let time = &columns[names.iter().position(|n| n == "time").expect("checked")];
        if let Some(t) = time.iter().find(|t| t.fract() != 0.0 || **t < 1.0) {
            return Err(data_err(0, format!("time values must be integers >= 1, found {t}")));
        }
        Ok(Self { names, columns, y })
    }
}
