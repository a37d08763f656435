//! Line-delimited list of the exact contexts an experiment will query.
//!
//! Each line is `{"manifest_version": 1, "cell_key": "...", "context": [..]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dgp::ContextSequence;
use crate::predictors::{NextTokenModel, PredictError, PredictionTable};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub manifest_version: u32,
    pub cell_key: String,
    pub context: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextManifest {
    k: usize,
    entries: Vec<ManifestEntry>,
}

impl ContextManifest {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            entries: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn push(&mut self, cell_key: impl Into<String>, context: &ContextSequence) {
        self.entries.push(ManifestEntry {
            manifest_version: MANIFEST_VERSION,
            cell_key: cell_key.into(),
            context: context.tokens.clone(),
        });
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Contexts whose cell key starts with `prefix`, in manifest order.
    pub fn contexts(&self, prefix: &str) -> Vec<ContextSequence> {
        self.entries
            .iter()
            .filter(|e| e.cell_key.starts_with(prefix))
            .map(|e| ContextSequence::new(e.context.clone()))
            .collect()
    }

    /// Entries `table` cannot answer.
    pub fn missing(&self, table: &PredictionTable) -> Vec<ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| !table.contains(&ContextSequence::new(e.context.clone())))
            .cloned()
            .collect()
    }

    /// Answer every entry with `model`.
    pub fn answer<M: NextTokenModel + ?Sized>(
        &self,
        model: &M,
        label: impl Into<String>,
    ) -> Result<PredictionTable, PredictError> {
        let contexts: Vec<ContextSequence> = self
            .entries
            .iter()
            .map(|e| ContextSequence::new(e.context.clone()))
            .collect();
        PredictionTable::from_fn(self.k, label, &contexts, |c| model.predict(c))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ExperimentError> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a manifest over `k` states; every token is range-checked.
    pub fn read_from<R: Read>(r: R, k: usize) -> Result<Self, ExperimentError> {
        let mut out = Self::new(k);
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(&line)
                .map_err(|err| ExperimentError::ManifestFormat(format!("line {}: {err}", i + 1)))?;
            if e.manifest_version != MANIFEST_VERSION {
                return Err(ExperimentError::ManifestFormat(format!(
                    "line {}: unsupported version {}",
                    i + 1,
                    e.manifest_version
                )));
            }
            if let Some(&s) = e.context.iter().find(|&&s| s >= k) {
                return Err(ExperimentError::ManifestFormat(format!(
                    "line {}: token {s} out of range for k = {k}",
                    i + 1
                )));
            }
            out.entries.push(e);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ExperimentError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>, k: usize) -> Result<Self, ExperimentError> {
        Self::read_from(File::open(path)?, k)
    }
}
