// SPDX-License-Identifier: MIT OR Apache-2.0

//! Plain-text corpora: one text per line, blank lines skipped.

use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_corpus(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect()
}

/// Loads a corpus file; an empty corpus is an error.
pub fn load_corpus(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let texts = parse_corpus(&text);
    if texts.is_empty() {
        return Err(Error::InvalidCorpus(format!(
            "{} has no texts",
            path.display()
        )));
    }
    Ok(texts)
}

pub fn corpus_to_text<S: AsRef<str>>(texts: &[S]) -> String {
    let mut out = String::new();
    for t in texts {
        out.push_str(t.as_ref());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_skips_blank_lines() {
        let texts = parse_corpus("a b\n\n  \nc\r\n");
        assert_eq!(texts, ["a b", "c"]);
        assert_eq!(parse_corpus(&corpus_to_text(&texts)), texts);
    }
}
