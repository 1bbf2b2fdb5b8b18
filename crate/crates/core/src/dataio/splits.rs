//! Line-oriented split files: `state object split_tag`.
//!
//! Tags starting with `train` mark seen pairs; any tag containing `unseen`
//! marks a closed-world unseen pair. Lines starting with `#` are comments,
//! except the directives `#states a b c` and `#objects x y z`, which fix the
//! vocabulary order. Without directives names are ordered by first
//! appearance.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Pair, Vocabulary};
use crate::error::{Error, Result};

#[derive(Default)]
struct Builder {
    states: Vec<String>,
    objects: Vec<String>,
    seen: BTreeSet<Pair>,
    unseen: BTreeSet<Pair>,
}

impl Builder {
    fn intern(list: &mut Vec<String>, name: &str) -> usize {
        match list.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                list.push(name.to_string());
                list.len() - 1
            }
        }
    }

    fn feed(&mut self, path: &Path, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#states") {
                for name in rest.split_whitespace() {
                    Self::intern(&mut self.states, name);
                }
                continue;
            }
            if let Some(rest) = line.strip_prefix("#objects") {
                for name in rest.split_whitespace() {
                    Self::intern(&mut self.objects, name);
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [state, object, tag] = fields[..] else {
                return Err(parse_err(format!(
                    "expected `state object split_tag`, found {} fields",
                    fields.len()
                )));
            };
            let pair = (
                Self::intern(&mut self.states, state),
                Self::intern(&mut self.objects, object),
            );
            if tag.starts_with("train") {
                self.seen.insert(pair);
            } else if tag.contains("unseen") {
                self.unseen.insert(pair);
            } else {
                return Err(parse_err(format!("unknown split tag '{tag}'")));
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<Vocabulary> {
        Vocabulary::new(self.states, self.objects, self.seen, self.unseen)
    }
}

/// Parses split-file text. `origin` only labels error messages.
pub fn parse_splits(origin: &Path, text: &str) -> Result<Vocabulary> {
    let mut b = Builder::default();
    b.feed(origin, text)?;
    b.finish()
}

/// Loads and merges one or more split files into a vocabulary.
pub fn load_splits<P: AsRef<Path>>(paths: &[P]) -> Result<Vocabulary> {
    let mut b = Builder::default();
    for p in paths {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        b.feed(p, &text)?;
    }
    if paths.is_empty() {
        return Err(Error::io(
            PathBuf::new(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no split files given"),
        ));
    }
    b.finish()
}

/// Serializes a vocabulary so that `parse_splits` reproduces it exactly.
/// `unseen_tag` names the tag written for each closed-world unseen pair.
pub fn write_splits(vocab: &Vocabulary, unseen_tag: impl Fn(Pair) -> &'static str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#states {}", vocab.states().join(" "));
    let _ = writeln!(out, "#objects {}", vocab.objects().join(" "));
    for &(s, o) in vocab.seen_pairs() {
        let _ = writeln!(out, "{} {} train", vocab.states()[s], vocab.objects()[o]);
    }
    for &pair in vocab.closed_unseen_pairs() {
        let _ = writeln!(
            out,
            "{} {} {}",
            vocab.states()[pair.0],
            vocab.objects()[pair.1],
            unseen_tag(pair)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Vocabulary> {
        parse_splits(Path::new("splits.txt"), text)
    }

    #[test]
    fn transcribes_simple_file() {
        let v = parse("wet dog train\nold dog test_unseen\nwet car train\n").unwrap_err();
        // `old` only appears in an unseen pair.
        assert!(matches!(v, Error::Validation(_)));

        let v = parse("wet dog train\nold car train\nold dog test_unseen\nwet car train\n").unwrap();
        assert_eq!(v.states(), ["wet", "old"]);
        assert_eq!(v.objects(), ["dog", "car"]);
        assert_eq!(v.seen_pairs(), &[(0, 0), (1, 1), (0, 1)].into());
        assert_eq!(v.closed_unseen_pairs(), &[(1, 0)].into());
    }

    #[test]
    fn unseen_section_may_be_empty() {
        let v = parse("wet dog train\nwet car train\n").unwrap();
        assert!(v.closed_unseen_pairs().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("wet dog train\nwet car\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_tag_is_an_error() {
        assert!(matches!(
            parse("wet dog holdout\n").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(
            n_states in 1usize..6,
            n_objects in 1usize..6,
            mask in proptest::collection::vec(0u8..3, 36),
            perm_seed in any::<u64>(),
        ) {
            // Cover every primitive with a diagonal of seen pairs, then mark the
            // rest seen/unseen/absent from `mask`.
            let mut seen = BTreeSet::new();
            let mut unseen = BTreeSet::new();
            for i in 0..n_states.max(n_objects) {
                seen.insert((i % n_states, i % n_objects));
            }
            for s in 0..n_states {
                for o in 0..n_objects {
                    if seen.contains(&(s, o)) { continue; }
                    match mask[s * 6 + o] {
                        1 => { seen.insert((s, o)); }
                        2 => { unseen.insert((s, o)); }
                        _ => {}
                    }
                }
            }
            // Names in a scrambled order so first appearance differs from index order.
            let mut states: Vec<String> = (0..n_states).map(|i| format!("s{}", (i as u64 * 7 + perm_seed) % 97)).collect();
            states.dedup();
            let objects: Vec<String> = (0..n_objects).map(|i| format!("o{}_{}", n_objects - i, perm_seed % 5)).collect();
            prop_assume!(states.len() == n_states);
            let v = Vocabulary::new(states, objects, seen, unseen).unwrap();
            let text = write_splits(&v, |_| "test_unseen");
            prop_assert_eq!(parse(&text).unwrap(), v);
        }
    }
}
