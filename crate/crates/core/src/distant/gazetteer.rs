use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;

use crate::corpus::LabelSchema;
use crate::error::{Error, Result};

/// Anything that can enumerate typed surface forms. File gazetteers are the
/// only shipped backend; a knowledge-base client would implement the same
/// trait.
pub trait KnowledgeSource {
    fn name(&self) -> &str;

    /// `(entity type name, case-folded phrase tokens)` pairs.
    fn phrases(&self) -> Box<dyn Iterator<Item = (&str, &[String])> + '_>;
}

/// Per-type sets of case-folded phrases.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    pub source_name: String,
    entries: BTreeMap<String, BTreeSet<Vec<String>>>,
}

pub(crate) fn fold(token: &str) -> String {
    token.to_lowercase()
}

impl Gazetteer {
    pub fn new(source_name: impl Into<String>) -> Self {
        Gazetteer {
            source_name: source_name.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Adds a whitespace-separated phrase. Returns false for blank input.
    pub fn insert(&mut self, etype: &str, phrase: &str) -> bool {
        let tokens: Vec<String> = phrase.split_whitespace().map(fold).collect();
        if tokens.is_empty() {
            return false;
        }
        self.entries.entry(etype.to_string()).or_default().insert(tokens);
        true
    }

    pub fn merge(&mut self, other: Gazetteer) {
        for (etype, phrases) in other.entries {
            self.entries.entry(etype).or_default().extend(phrases);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn phrases_of(&self, etype: &str) -> impl Iterator<Item = &[String]> + '_ {
        self.entries
            .get(etype)
            .into_iter()
            .flat_map(|set| set.iter().map(Vec::as_slice))
    }

    pub fn types(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.keys().map(String::as_str)
    }

    /// One phrase per line; blank lines and `#` comments are skipped.
    pub fn parse(source_name: &str, etype: &str, text: &str) -> Self {
        let mut g = Gazetteer::new(source_name);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            g.insert(etype, line);
        }
        g
    }
}

impl KnowledgeSource for Gazetteer {
    fn name(&self) -> &str {
        &self.source_name
    }

    fn phrases(&self) -> Box<dyn Iterator<Item = (&str, &[String])> + '_> {
        Box::new(
            self.entries
                .iter()
                .flat_map(|(t, set)| set.iter().map(move |p| (t.as_str(), p.as_slice()))),
        )
    }
}

pub fn load_gazetteer(path: &Path, etype: &str) -> Result<Gazetteer> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let g = Gazetteer::parse(&path.display().to_string(), etype, &text);
    if g.is_empty() {
        warn!("gazetteer {} is empty", path.display());
    }
    Ok(g)
}

/// Loads every `*.txt` file in `dir`. The entity type is the file name up to
/// its first dot (`LOC.txt`, `LOC.cities.txt`); files for types outside the
/// schema are skipped with a warning. Files of one type are unioned.
pub fn load_gazetteer_dir(dir: &Path, schema: &LabelSchema) -> Result<Gazetteer> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "gazetteer directory {} does not exist",
            dir.display()
        )));
    }
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();

    let mut merged = Gazetteer::new(dir.display().to_string());
    for path in files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let etype = name.split('.').next().unwrap_or_default();
        if schema.type_index(etype).is_none() {
            warn!("skipping {}: {etype} is not a schema type", path.display());
            continue;
        }
        merged.merge(load_gazetteer(&path, etype)?);
    }
    Ok(merged)
}
