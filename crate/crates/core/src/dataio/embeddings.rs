use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Vocabulary;
use crate::error::{Error, Result};

/// Token → vector map with a common dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                context: format!("embedding of '{token}'"),
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "embedding of '{token}' has non-finite entries"
            )));
        }
        self.vectors.insert(token, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Looks `token` up directly, falling back to the mean of its
    /// `_`-separated words.
    pub fn resolve(&self, token: &str) -> Option<Vec<f64>> {
        if let Some(v) = self.get(token) {
            return Some(v.to_vec());
        }
        let words: Vec<&str> = token.split('_').filter(|w| !w.is_empty()).collect();
        if words.len() < 2 {
            return None;
        }
        let mut acc = vec![0.0; self.dim];
        for w in &words {
            let v = self.get(w)?;
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = words.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Some(acc)
    }

    /// Restricts the table to the vocabulary's primitives, resolving
    /// multi-word names.
    pub fn for_vocabulary(&self, vocab: &Vocabulary) -> Result<EmbeddingTable> {
        let mut out = EmbeddingTable::new(self.dim);
        let mut missing = Vec::new();
        for name in vocab.states().iter().chain(vocab.objects()) {
            match self.resolve(name) {
                Some(v) => out.insert(name.clone(), v)?,
                None => missing.push(name.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingTokens(missing));
        }
        Ok(out)
    }
}

/// Parses `token v1 ... vm` lines. A leading word2vec-style `count dim`
/// header line is skipped.
pub fn parse_embeddings(origin: &Path, text: &str) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            message,
        };
        if fields.len() < 2 {
            return Err(parse_err("token without a vector".into()));
        }
        let vector = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(e.to_string()))?;
        let table = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        table.insert(fields[0], vector).map_err(|e| match e {
            Error::Dimension {
                expected, found, ..
            } => parse_err(format!("vector has dimension {found}, expected {expected}")),
            other => parse_err(other.to_string()),
        })?;
    }
    Ok(table.unwrap_or_default())
}

/// Loads a token-vector file and resolves every primitive of `vocab`.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(path, &text)?.for_vocabulary(vocab)
}

/// Text form readable by `parse_embeddings`. Uses `{:?}` formatting so
/// every f64 survives the round trip.
pub fn write_embeddings(table: &EmbeddingTable) -> String {
    let mut out = String::new();
    for (token, v) in table.iter() {
        out.push_str(token);
        for x in v {
            let _ = write!(out, " {x:?}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn vocab(states: &[&str], objects: &[&str]) -> Vocabulary {
        let seen: BTreeSet<_> = (0..states.len().max(objects.len()))
            .map(|i| (i % states.len(), i % objects.len()))
            .collect();
        Vocabulary::new(
            states.iter().map(|s| s.to_string()).collect(),
            objects.iter().map(|s| s.to_string()).collect(),
            seen,
            BTreeSet::new(),
        )
        .unwrap()
    }

    #[test]
    fn well_formed_file() {
        let t = parse_embeddings(Path::new("e"), "wet 1 2 3\ndog 4 5 6\n").unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("dog"), Some(&[4.0, 5.0, 6.0][..]));
        let t = t.for_vocabulary(&vocab(&["wet"], &["dog"])).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn multi_word_token_averages_its_words() {
        let t = parse_embeddings(Path::new("e"), "faux 1 0 2\nleather 3 4 -2\nold 0 0 1\n")
            .unwrap()
            .for_vocabulary(&vocab(&["old"], &["faux_leather"]))
            .unwrap();
        // Oracle: componentwise mean of the constituent vectors.
        let faux = [1.0, 0.0, 2.0];
        let leather = [3.0, 4.0, -2.0];
        let expected: Vec<f64> = faux.iter().zip(&leather).map(|(a, b)| (a + b) / 2.0).collect();
        assert_eq!(t.get("faux_leather").unwrap(), expected.as_slice());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = parse_embeddings(Path::new("e"), "a 1 2 3\nb 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn missing_tokens_are_listed() {
        let t = parse_embeddings(Path::new("e"), "wet 1 2\n").unwrap();
        match t.for_vocabulary(&vocab(&["wet"], &["dog", "pink_cat"])).unwrap_err() {
            Error::MissingTokens(m) => assert_eq!(m, vec!["dog", "pink_cat"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_line_is_skipped_and_text_round_trips() {
        let t = parse_embeddings(Path::new("e"), "2 2\na 0.1 -3e-7\nb 1 2\n").unwrap();
        assert_eq!(t.len(), 2);
        let again = parse_embeddings(Path::new("e"), &write_embeddings(&t)).unwrap();
        assert_eq!(again, t);
    }
}
