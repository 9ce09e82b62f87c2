use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{DatasetError, NUM_CLASSES};

pub const NOTES: [&str; 7] = ["Do", "Re", "Mi", "Fa", "So", "La", "Ti"];
pub const PITCHES: [&str; 3] = ["High", "Mid", "Low"];

/// Ordered class names with their audio files.
///
/// The canonical order walks notes Do..Ti and, within each note, the pitch
/// levels High, Mid, Low: `High-Do, Mid-Do, Low-Do, High-Re, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    names: Vec<String>,
    audio: Vec<PathBuf>,
    index: HashMap<String, usize>,
}

impl Default for ClassTable {
    fn default() -> Self {
        Self::canonical(Path::new("sounds"))
    }
}

impl ClassTable {
    /// The 21 note classes with audio files `<audio_dir>/<name>.wav`.
    pub fn canonical(audio_dir: &Path) -> Self {
        let names: Vec<String> = NOTES
            .iter()
            .flat_map(|note| PITCHES.iter().map(move |p| format!("{p}-{note}")))
            .collect();
        let audio = names
            .iter()
            .map(|n| audio_dir.join(format!("{n}.wav")))
            .collect();
        Self::from_parts(names, audio).expect("canonical table is valid")
    }

    pub fn from_parts(names: Vec<String>, audio: Vec<PathBuf>) -> Result<Self, DatasetError> {
        if names.len() != audio.len() {
            return Err(DatasetError::Manifest(format!(
                "{} names but {} audio paths",
                names.len(),
                audio.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(DatasetError::Manifest(format!("class {i} has an empty name")));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(DatasetError::Manifest(format!("duplicate class name `{n}`")));
            }
        }
        Ok(ClassTable { names, audio, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn audio_path(&self, index: usize) -> Option<&Path> {
        self.audio.get(index).map(PathBuf::as_path)
    }

    /// Parses a manifest: one `index<TAB>name<TAB>audio path` line per class,
    /// `#` comments and blank lines ignored. Indices must run 0..n in order.
    pub fn parse_manifest(text: &str) -> Result<Self, DatasetError> {
        let mut names = Vec::new();
        let mut audio = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let (idx, name, path) = match (fields.next(), fields.next(), fields.next()) {
                (Some(i), Some(n), Some(p)) => (i.trim(), n.trim(), p.trim()),
                _ => {
                    return Err(DatasetError::Manifest(format!(
                        "line {}: expected `index<TAB>name<TAB>audio path`",
                        lineno + 1
                    )))
                }
            };
            let idx: usize = idx.parse().map_err(|_| {
                DatasetError::Manifest(format!("line {}: bad index `{idx}`", lineno + 1))
            })?;
            if idx != names.len() {
                return Err(DatasetError::Manifest(format!(
                    "line {}: index {idx} out of order (expected {})",
                    lineno + 1,
                    names.len()
                )));
            }
            names.push(name.to_owned());
            audio.push(PathBuf::from(path));
        }
        Self::from_parts(names, audio)
    }

    pub fn load_manifest(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DatasetError::Manifest(format!("{}: {e}", path.display())))?;
        Self::parse_manifest(&text)
    }

    pub fn to_manifest(&self) -> String {
        let mut out = String::from("# index\tname\taudio\n");
        for (i, (n, a)) in self.names.iter().zip(&self.audio).enumerate() {
            let _ = writeln!(out, "{i}\t{n}\t{}", a.display());
        }
        out
    }

    pub fn is_standard_size(&self) -> bool {
        self.len() == NUM_CLASSES
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order() {
        let t = ClassTable::default();
        assert_eq!(t.len(), 21);
        let expected = [
            "High-Do", "Mid-Do", "Low-Do", "High-Re", "Mid-Re", "Low-Re", "High-Mi", "Mid-Mi",
            "Low-Mi", "High-Fa", "Mid-Fa", "Low-Fa", "High-So", "Mid-So", "Low-So", "High-La",
            "Mid-La", "Low-La", "High-Ti", "Mid-Ti", "Low-Ti",
        ];
        assert_eq!(t.names(), &expected.map(String::from)[..]);
        assert_eq!(t.index_of("Mid-Do"), Some(1));
        assert_eq!(t.name(20), Some("Low-Ti"));
        assert_eq!(t.audio_path(0), Some(Path::new("sounds/High-Do.wav")));
    }

    #[test]
    fn manifest_round_trip() {
        let t = ClassTable::canonical(Path::new("/opt/notes"));
        let back = ClassTable::parse_manifest(&t.to_manifest()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn manifest_errors() {
        assert!(ClassTable::parse_manifest("0\tA\ta.wav\n2\tB\tb.wav\n").is_err());
        assert!(ClassTable::parse_manifest("0\tA\ta.wav\n1\tA\tb.wav\n").is_err());
        assert!(ClassTable::parse_manifest("0 A a.wav\n").is_err());
    }
}
