//! Ordered genus catalog. The position of a genus in the catalog is its class
//! index everywhere: probability vectors, confusion matrices, file columns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nine hardwood genera of the reference database, in class-index order.
pub const DEFAULT_GENERA: [&str; 9] = [
    "Acacia",
    "Betula",
    "Eucalyptus",
    "Fagus",
    "Hevea",
    "Liquidambar",
    "Populus",
    "Salix",
    "Schima",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct GenusCatalog {
    genera: Vec<String>,
}

impl GenusCatalog {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut genera: Vec<String> = Vec::new();
        for name in names {
            let name = name.into().trim().to_string();
            if name.is_empty() {
                return Err(Error::Invalid("empty genus name".into()));
            }
            if genera.contains(&name) {
                return Err(Error::DuplicateGenus(name));
            }
            genera.push(name);
        }
        if genera.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        Ok(Self { genera })
    }

    /// Parses the catalog file format: one name per line, blank lines and
    /// `#` comments ignored.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.genera.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.genera.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genera.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.genera
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.genera.get(index).map(String::as_str)
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.genera
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| Error::UnknownGenus(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.genera.iter().any(|g| g == name)
    }
}

impl Default for GenusCatalog {
    fn default() -> Self {
        Self {
            genera: DEFAULT_GENERA.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TryFrom<Vec<String>> for GenusCatalog {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GenusCatalog> for Vec<String> {
    fn from(c: GenusCatalog) -> Self {
        c.genera
    }
}
