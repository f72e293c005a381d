//! Line-oriented dataset manifest:
//! `<relative-path> <modality:A|B> <split:paired|unpaired> <pair-id|->`.
//! Lines starting with `#` are comments; the generator records its seed there.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Image domain: A is the CT-like source, B the MR-like target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Paired,
    Unpaired,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::A => "A",
            Domain::B => "B",
        })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Paired => "paired",
            Split::Unpaired => "unpaired",
        })
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "A" => Ok(Domain::A),
            "B" => Ok(Domain::B),
            other => Err(format!("modality must be A or B, got {other:?}")),
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paired" => Ok(Split::Paired),
            "unpaired" => Ok(Split::Unpaired),
            other => Err(format!("split must be paired or unpaired, got {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub domain: Domain,
    pub split: Split,
    pub pair_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub comments: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn count(&self, domain: Domain, split: Split) -> usize {
        self.entries.iter().filter(|e| e.domain == domain && e.split == split).count()
    }

    pub fn num_pairs(&self) -> usize {
        self.count(Domain::A, Split::Paired)
    }

    /// Value of a `# key value` comment line.
    pub fn comment_value(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| c.strip_prefix(key).and_then(|rest| rest.strip_prefix(' ')).map(str::trim))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str(&format!("# {c}\n"));
        }
        for e in &self.entries {
            let pair = e.pair_id.as_deref().unwrap_or("-");
            out.push_str(&format!("{} {} {} {}\n", e.path.display(), e.domain, e.split, pair));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root, path)
    }

    pub fn parse(text: &str, root: PathBuf, origin: &Path) -> Result<Self> {
        let mut comments = Vec::new();
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.trim().to_string());
                continue;
            }
            let bad = |reason: String| Error::Manifest { path: origin.to_path_buf(), line: i + 1, reason };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", fields.len())));
            }
            let domain = fields[1].parse().map_err(bad)?;
            let split: Split = fields[2].parse().map_err(bad)?;
            let pair_id = (fields[3] != "-").then(|| fields[3].to_string());
            if split == Split::Paired && pair_id.is_none() {
                return Err(bad("paired entry without pair id".into()));
            }
            entries.push(ManifestEntry { path: PathBuf::from(fields[0]), domain, split, pair_id });
        }
        Ok(Self { root, comments, entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_round_trip() {
        let text = "# seed 7\npaired/p0000_a.pgm A paired p0000\nunpaired/b0000.pgm B unpaired -\n";
        let m = DatasetManifest::parse(text, PathBuf::from("/d"), Path::new("m")).unwrap();
        assert_eq!(m.comment_value("seed"), Some("7"));
        assert_eq!(m.entries[0].pair_id.as_deref(), Some("p0000"));
        assert_eq!(m.entries[1].domain, Domain::B);
        assert_eq!(m.to_text(), text);
    }

    #[test]
    fn bad_lines_report_line_numbers() {
        let err = DatasetManifest::parse("x.pgm C paired p1\n", PathBuf::new(), Path::new("m")).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 1, .. }));
        let err = DatasetManifest::parse("\nx.pgm A paired -\n", PathBuf::new(), Path::new("m")).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }));
    }
}
