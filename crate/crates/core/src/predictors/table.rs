//! Recorded predictions keyed by exact context.
//!
//! File layout is line-delimited JSON. The first line is a header
//! `{"format": "mixlab-prediction-table", "version": 1, "k": K, "label": L}`;
//! every following non-blank line is `{"context": [..], "next_prob": [..]}`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_probability_vector, PredictError, Predictor, EXTERNAL_SUM_TOLERANCE};
use crate::dgp::ContextSequence;

pub const PREDICTION_TABLE_VERSION: u32 = 1;
const FORMAT_TAG: &str = "mixlab-prediction-table";

/// A context paired with a next-state distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub context: ContextSequence,
    pub next_prob: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    k: usize,
    #[serde(default)]
    label: String,
}

#[derive(Serialize, Deserialize)]
struct Line {
    context: Vec<usize>,
    next_prob: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PredictionTable {
    k: usize,
    label: String,
    records: Vec<(Vec<usize>, Vec<f64>)>,
    index: HashMap<Vec<usize>, usize>,
}

impl PredictionTable {
    pub fn new(k: usize, label: impl Into<String>) -> Self {
        Self {
            k,
            label: label.into(),
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Record `predictor`'s answer for every context, in order.
    pub fn answer<'a>(
        predictor: &Predictor,
        contexts: impl IntoIterator<Item = &'a ContextSequence>,
        label: impl Into<String>,
    ) -> Result<Self, PredictError> {
        Self::from_fn(predictor.k(), label, contexts, |ctx| predictor.predict(ctx))
    }

    /// Record `f(context)` for every context, in order.
    pub fn from_fn<'a, F>(
        k: usize,
        label: impl Into<String>,
        contexts: impl IntoIterator<Item = &'a ContextSequence>,
        mut f: F,
    ) -> Result<Self, PredictError>
    where
        F: FnMut(&ContextSequence) -> Result<Vec<f64>, PredictError>,
    {
        let mut table = Self::new(k, label);
        for ctx in contexts {
            if table.contains(ctx) {
                continue;
            }
            let p = f(ctx)?;
            table.insert(ctx.tokens.clone(), p)?;
        }
        Ok(table)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, context: &ContextSequence) -> bool {
        self.index.contains_key(&context.tokens)
    }

    pub fn records(&self) -> impl Iterator<Item = PredictionRecord> + '_ {
        self.records.iter().map(|(c, p)| PredictionRecord {
            context: ContextSequence::new(c.clone()),
            next_prob: p.clone(),
        })
    }

    /// Validate and store one prediction. Entries are renormalized to sum
    /// to one exactly. Re-inserting a context with a different vector is an
    /// error.
    pub fn insert(
        &mut self,
        context: Vec<usize>,
        mut next_prob: Vec<f64>,
    ) -> Result<(), PredictError> {
        if let Some(&state) = context.iter().find(|&&s| s >= self.k) {
            return Err(PredictError::StateOutOfRange { state, k: self.k });
        }
        validate_probability_vector(&next_prob, self.k, EXTERNAL_SUM_TOLERANCE)?;
        let sum: f64 = next_prob.iter().sum();
        next_prob.iter_mut().for_each(|p| *p /= sum);
        if let Some(&i) = self.index.get(&context) {
            if self.records[i].1 == next_prob {
                return Ok(());
            }
            return Err(PredictError::TableFormat(format!(
                "conflicting duplicate entry for context of length {}",
                context.len()
            )));
        }
        self.index.insert(context.clone(), self.records.len());
        self.records.push((context, next_prob));
        Ok(())
    }

    pub fn lookup(&self, context: &ContextSequence) -> Result<Vec<f64>, PredictError> {
        let &i = self
            .index
            .get(&context.tokens)
            .ok_or_else(|| PredictError::MissingContext(context.tokens.clone()))?;
        let p = &self.records[i].1;
        validate_probability_vector(p, self.k, EXTERNAL_SUM_TOLERANCE)?;
        Ok(p.clone())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), PredictError> {
        let header = Header {
            format: FORMAT_TAG.into(),
            version: PREDICTION_TABLE_VERSION,
            k: self.k,
            label: self.label.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for (context, next_prob) in &self.records {
            serde_json::to_writer(
                &mut w,
                &Line {
                    context: context.clone(),
                    next_prob: next_prob.clone(),
                },
            )?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, PredictError> {
        let mut lines = BufReader::new(r).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| PredictError::TableFormat("missing header line".into()))??;
        let header: Header = serde_json::from_str(&header_line)
            .map_err(|e| PredictError::TableFormat(format!("bad header: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(PredictError::TableFormat(format!(
                "unexpected format tag `{}`",
                header.format
            )));
        }
        if header.version != PREDICTION_TABLE_VERSION {
            return Err(PredictError::TableFormat(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let mut table = Self::new(header.k, header.label);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line = serde_json::from_str(&line)
                .map_err(|e| PredictError::TableFormat(format!("line {}: {e}", lineno + 2)))?;
            table.insert(rec.context, rec.next_prob)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PredictError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PredictError> {
        Self::read_from(File::open(path)?)
    }
}
