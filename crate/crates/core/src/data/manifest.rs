//! Tab-separated dataset manifests:
//! `path  label  modality  role  sequence_id  frame_index`, with `-` for an
//! absent optional field, `#` comments and blank lines ignored.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::Modality;
use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub path: String,
    pub label: String,
    pub modality: Modality,
    pub role: Role,
    pub sequence_id: Option<String>,
    pub frame_index: Option<usize>,
}

impl Record {
    /// Key shared by the RGB and depth records of one capture.
    pub fn pair_key(&self) -> Option<(&str, Option<usize>)> {
        self.sequence_id.as_deref().map(|s| (s, self.frame_index))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

fn optional(field: &str) -> Option<&str> {
    match field {
        "" | "-" => None,
        s => Some(s),
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |detail: String| Error::Manifest {
                line: line_no,
                detail,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(err(format!(
                    "expected 6 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            if fields[0].is_empty() || fields[1].is_empty() {
                return Err(err("path and label must be non-empty".into()));
            }
            let modality = match fields[2] {
                "rgb" => Modality::Rgb,
                "depth" => Modality::Depth,
                other => return Err(err(format!("unknown modality `{other}`"))),
            };
            let role = match fields[3] {
                "train" => Role::Train,
                "test" => Role::Test,
                other => return Err(err(format!("unknown role `{other}`"))),
            };
            let frame_index = optional(fields[5])
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| err(format!("bad frame index `{s}`")))
                })
                .transpose()?;
            let sequence_id = optional(fields[4]).map(str::to_string);
            if frame_index.is_some() && sequence_id.is_none() {
                return Err(err("frame index given without a sequence id".into()));
            }
            records.push(Record {
                path: fields[0].to_string(),
                label: fields[1].to_string(),
                modality,
                role,
                sequence_id,
                frame_index,
            });
        }
        Ok(Self {
            records,
            base_dir: PathBuf::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut m = Self::parse(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# path\tlabel\tmodality\trole\tsequence_id\tframe_index\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.path,
                r.label,
                r.modality.as_str(),
                r.role.as_str(),
                r.sequence_id.as_deref().unwrap_or("-"),
                r.frame_index.map_or("-".to_string(), |i| i.to_string()),
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| io_err(path, e))
    }

    pub fn resolve(&self, record: &Record) -> PathBuf {
        self.base_dir.join(&record.path)
    }

    /// Sorted class names present in the training split.
    pub fn classes(&self) -> Vec<String> {
        self.records
            .iter()
            .filter(|r| r.role == Role::Train)
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Checks the structural invariants: every label appears in the training
    /// split and paired RGB/depth records agree on label and role.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Empty("manifest"));
        }
        let classes: BTreeSet<String> = self.classes().into_iter().collect();
        if let Some(r) = self.records.iter().find(|r| !classes.contains(&r.label)) {
            return Err(Error::Taxonomy(format!(
                "class `{}` ({}) has no training records",
                r.label, r.path
            )));
        }
        let mut seen: HashMap<(&str, Option<usize>, Modality), &Record> = HashMap::new();
        let mut by_key: HashMap<(&str, Option<usize>), &Record> = HashMap::new();
        for r in &self.records {
            let Some((seq, frame)) = r.pair_key() else {
                continue;
            };
            if seen.insert((seq, frame, r.modality), r).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate {} record for sequence `{seq}` frame {frame:?}",
                    r.modality.as_str()
                )));
            }
            if let Some(other) = by_key.insert((seq, frame), r) {
                if other.label != r.label || other.role != r.role {
                    return Err(Error::InvalidArgument(format!(
                        "paired records {} and {} disagree on label or role",
                        other.path, r.path
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# comment\n\
a_rgb.ppm\tkitchen\trgb\ttrain\timg0\t-\n\
a_depth.pgm\tkitchen\tdepth\ttrain\timg0\t-\n\
\n\
v0_f3_rgb.ppm\toffice\trgb\ttest\tvid0\t3\n\
v1_f3_rgb.ppm\toffice\trgb\ttrain\tvid1\t3\n";

    #[test]
    fn parse_and_round_trip() {
        let m = Manifest::parse(SAMPLE).unwrap();
        assert_eq!(m.records.len(), 4);
        assert_eq!(m.records[2].frame_index, Some(3));
        assert_eq!(m.records[0].frame_index, None);
        assert_eq!(m.classes(), vec!["kitchen", "office"]);
        m.validate().unwrap();
        let again = Manifest::parse(&m.to_text()).unwrap();
        assert_eq!(again.records, m.records);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = "x.ppm\tk\trgb\ttrain\t-\n";
        assert!(matches!(
            Manifest::parse(bad),
            Err(Error::Manifest { line: 1, .. })
        ));
        let bad = "# c\nx.ppm\tk\tinfrared\ttrain\t-\t-\n";
        assert!(matches!(
            Manifest::parse(bad),
            Err(Error::Manifest { line: 2, .. })
        ));
        let bad = "x.ppm\tk\trgb\ttrain\t-\t4\n";
        assert!(Manifest::parse(bad).is_err());
    }

    #[test]
    fn test_only_class_is_invalid() {
        let m = Manifest::parse("x.ppm\tk\trgb\ttest\t-\t-\n").unwrap();
        assert!(matches!(m.validate(), Err(Error::Taxonomy(_))));
    }
}
