//! Line-oriented JSON logs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Appends one JSON object per line. A writer without a file only keeps the
/// records in memory.
#[derive(Debug, Default)]
pub struct JsonlWriter {
    file: Option<BufWriter<File>>,
    pub lines: Vec<String>,
}

impl JsonlWriter {
    pub fn memory() -> Self {
        Self::default()
    }

    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            file: Some(BufWriter::new(File::create(path)?)),
            lines: Vec::new(),
        })
    }

    pub fn write<R: Serialize>(&mut self, record: &R) -> Result<()> {
        let line = serde_json::to_string(record)?;
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        self.lines.push(line);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_memory_agree() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut w = JsonlWriter::create(&path).unwrap();
        w.write(&serde_json::json!({"a": 1})).unwrap();
        w.write(&serde_json::json!({"b": [1, 2]})).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().collect::<Vec<_>>(), w.lines);
        assert_eq!(w.lines[0], r#"{"a":1}"#);
    }
}
