//! CSV writing with a versioned schema comment, and atomic file
//! replacement.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{io_err, Result};

/// Writes `contents` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents).map_err(io_err(format!("writing {}", path.display())))?;
    fs::rename(&tmp, path).map_err(io_err(format!("renaming into {}", path.display())))
}

/// Shortest round-trip representation, so output is reproducible.
pub fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

/// CSV text with `# schema: <name>/<version>` on the first line.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        let mut text = format!("# schema: {schema}/1\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row<S: AsRef<str>>(&mut self, cells: impl IntoIterator<Item = S>) {
        let mut first = true;
        for c in cells {
            if !first {
                self.text.push(',');
            }
            first = false;
            self.text.push_str(c.as_ref());
        }
        self.text.push('\n');
    }

    /// Appends already formatted CSV lines (without header).
    pub fn extend_lines(&mut self, csv: &str) {
        for line in csv.lines().skip(1) {
            let _ = writeln!(self.text, "{line}");
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.text)
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// File-name-safe version of a quantity name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}
