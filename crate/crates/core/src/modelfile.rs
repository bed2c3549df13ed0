//! Versioned plain-text model format.
//!
//! ```text
//! dmsmcrf-model v1
//! labels NKP KP
//! durational KP
//! default NKP
//! max-len 2
//! templates isNounPhrase isInTitle len word span-word
//! np-modifiers JJ JJR JJS VBG
//! np-heads NN NNS NNP NNPS
//! duration NKP none 0.0000000000000000e0 0.0000000000000000e0
//! duration KP gamma 8.5e-1 1.0e0
//! features 3
//! T START KP -1.2500000000000000e0
//! D KP 2 3.0000000000000000e-1
//! O KP w=kernel 2.0000000000000000e0
//! ```
//!
//! Feature lines are tab-separated and listed in index order, so a loaded
//! model reproduces the same dense layout. Weights carry 17 significant
//! digits, which round-trips every `f64`.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::corpus::{CorpusError, LabelId, LabelSet, NounGroupPattern};
use crate::duration::{DurationError, DurationFamily, DurationModel, FamilyKind};
use crate::features::{FeatureConfig, FeatureError, FeatureIndex, FeatureKind, Template, TemplateSet};
use crate::inference::{InferenceError, Model};

pub const MAGIC: &str = "dmsmcrf-model v1";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Labels(#[from] CorpusError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Duration(#[from] DurationError),
    #[error(transparent)]
    Model(#[from] InferenceError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn join<'a>(xs: impl IntoIterator<Item = &'a str>) -> String {
    xs.into_iter().collect::<Vec<_>>().join(" ")
}

fn label_ref(labels: &LabelSet, prev: Option<LabelId>) -> &str {
    prev.map_or("START", |l| labels.name(l))
}

pub fn save<W: Write>(m: &Model, mut w: W) -> io::Result<()> {
    let labels = m.labels();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "labels {}", join(labels.names().iter().map(String::as_str)))?;
    writeln!(w, "durational {}", join(labels.durational().map(|l| labels.name(l))))?;
    writeln!(w, "default {}", labels.name(labels.default_label()))?;
    writeln!(w, "max-len {}", m.max_len())?;
    writeln!(w, "templates {}", m.config().templates)?;
    let pattern = &m.config().pattern;
    writeln!(w, "np-modifiers {}", join(pattern.modifiers.iter().map(String::as_str)))?;
    writeln!(w, "np-heads {}", join(pattern.heads.iter().map(String::as_str)))?;
    for l in labels.ids() {
        writeln!(w, "duration {} {}", labels.name(l), m.durations().family(l))?;
    }
    writeln!(w, "features {}", m.num_features())?;
    for (kind, theta) in m.index().kinds().iter().zip(m.theta()) {
        match kind {
            FeatureKind::Observation { label, key } => {
                writeln!(w, "O\t{}\t{}\t{:.16e}", labels.name(*label), key, theta)?
            }
            FeatureKind::Transition { prev, label } => writeln!(
                w,
                "T\t{}\t{}\t{:.16e}",
                label_ref(labels, *prev),
                labels.name(*label),
                theta
            )?,
            FeatureKind::Duration { label, length } => {
                writeln!(w, "D\t{}\t{}\t{:.16e}", labels.name(*label), length, theta)?
            }
        }
    }
    Ok(())
}

pub fn to_string(m: &Model) -> String {
    let mut buf = Vec::new();
    save(m, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("model text is UTF-8")
}

struct Lines<R> {
    inner: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn err(&self, message: impl Into<String>) -> ModelFileError {
        ModelFileError::Syntax {
            line: self.line,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<String, ModelFileError> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    /// Reads `key rest...` and returns the whitespace-separated rest.
    fn field(&mut self, key: &str) -> Result<Vec<String>, ModelFileError> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(parts.map(str::to_string).collect())
    }

    fn single(&mut self, key: &str) -> Result<String, ModelFileError> {
        let mut v = self.field(key)?;
        if v.len() != 1 {
            return Err(self.err(format!("`{key}` takes one value")));
        }
        Ok(v.remove(0))
    }

    fn number<T: std::str::FromStr>(&self, s: &str) -> Result<T, ModelFileError> {
        s.parse().map_err(|_| self.err(format!("invalid number {s:?}")))
    }
}

pub fn load<R: BufRead>(r: R) -> Result<Model, ModelFileError> {
    let mut lines = Lines {
        inner: r.lines(),
        line: 0,
    };
    if lines.next_line()?.trim_end() != MAGIC {
        return Err(lines.err(format!("missing `{MAGIC}` header")));
    }
    let names = lines.field("labels")?;
    let durational = lines.field("durational")?;
    let default = lines.single("default")?;
    let labels = LabelSet::from_names(names, durational, &default)?;
    let max_len: usize = {
        let v = lines.single("max-len")?;
        lines.number(&v)?
    };
    let templates = TemplateSet::new(
        lines
            .field("templates")?
            .iter()
            .map(|t| t.parse::<Template>())
            .collect::<Result<Vec<_>, _>>()?,
    );
    let pattern = NounGroupPattern {
        modifiers: lines.field("np-modifiers")?.into_iter().collect(),
        heads: lines.field("np-heads")?.into_iter().collect(),
    };

    let mut durations = DurationModel::none(&labels);
    for l in labels.ids() {
        let v = lines.field("duration")?;
        if v.len() != 4 || v[0] != labels.name(l) {
            return Err(lines.err(format!("expected `duration {} <family> <p1> <p2>`", labels.name(l))));
        }
        let kind: FamilyKind = v[1].parse()?;
        let fam = DurationFamily::from_params(kind, lines.number(&v[2])?, lines.number(&v[3])?);
        durations.set(l, fam);
    }

    let count: usize = {
        let v = lines.single("features")?;
        lines.number(&v)?
    };
    let mut index = FeatureIndex::new(labels.len());
    let mut theta = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next_line()?;
        let parts: Vec<&str> = line.split('\t').collect();
        let label = |name: &str| labels.id(name).ok_or_else(|| lines.err(format!("unknown label {name:?}")));
        let (kind, weight) = match parts.as_slice() {
            ["O", l, key, w] => (
                FeatureKind::Observation {
                    label: label(l)?,
                    key: key.to_string(),
                },
                w,
            ),
            ["T", p, l, w] => {
                let prev = if *p == "START" { None } else { Some(label(p)?) };
                (FeatureKind::Transition { prev, label: label(l)? }, w)
            }
            ["D", l, d, w] => (
                FeatureKind::Duration {
                    label: label(l)?,
                    length: lines.number(d)?,
                },
                w,
            ),
            _ => return Err(lines.err("malformed feature line")),
        };
        let before = index.len();
        index.insert(kind)?;
        if index.len() == before {
            return Err(lines.err("duplicate feature"));
        }
        theta.push(lines.number::<f64>(weight)?);
    }
    if let Some(extra) = lines.inner.next() {
        if !extra?.trim().is_empty() {
            lines.line += 1;
            return Err(lines.err("trailing content after feature table"));
        }
    }
    let config = FeatureConfig { templates, pattern };
    Ok(Model::new(labels, max_len, config, durations, index, theta)?)
}

pub fn from_str(text: &str) -> Result<Model, ModelFileError> {
    load(text.as_bytes())
}
