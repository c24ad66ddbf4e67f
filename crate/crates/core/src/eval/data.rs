// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic topic-classification corpora.
//!
//! Each text is a bag of 6 to 10 tokens. A token is drawn from the text's own
//! class keywords with probability 0.6, from a shared filler vocabulary with
//! probability 0.3, and from another class's keywords otherwise.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TopicClass {
    pub name: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicTask {
    pub classes: Vec<TopicClass>,
    pub fillers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledText {
    pub text: String,
    pub label: usize,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| (*w).to_owned()).collect()
}

impl TopicTask {
    /// Four news-like topics with two keywords each.
    pub fn news() -> Self {
        let class = |name: &str, kws: &[&str]| TopicClass {
            name: name.to_owned(),
            keywords: words(kws),
        };
        Self {
            classes: vec![
                class("sports", &["match", "coach"]),
                class("business", &["market", "profit"]),
                class("science", &["galaxy", "theory"]),
                class("world", &["election", "treaty"]),
            ],
            fillers: words(&["the", "a", "today", "news", "report", "new"]),
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn generate(&self, count: usize, seed: u64) -> Vec<LabeledText> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.classes.len();
        (0..count)
            .map(|_| {
                let label = rng.random_range(0..k);
                let len = rng.random_range(6..=10);
                let tokens: Vec<&str> = (0..len)
                    .map(|_| {
                        let r: f64 = rng.random();
                        let pool = if r < 0.6 || k == 1 {
                            &self.classes[label].keywords
                        } else if r < 0.9 {
                            &self.fillers
                        } else {
                            let other = (label + rng.random_range(1..k)) % k;
                            &self.classes[other].keywords
                        };
                        pool[rng.random_range(0..pool.len())].as_str()
                    })
                    .collect();
                LabeledText {
                    text: tokens.join(" "),
                    label,
                }
            })
            .collect()
    }
}

/// Parses `label<TAB>text` lines; blank lines and `#` comments are skipped.
pub fn parse_labeled(text: &str, origin: &str) -> Result<Vec<LabeledText>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = line
            .split_once('\t')
            .and_then(|(label, text)| Some((label.trim().parse().ok()?, text)));
        let Some((label, text)) = parsed else {
            return Err(Error::parse(origin, lineno + 1, "expected label<TAB>text"));
        };
        out.push(LabeledText {
            text: text.to_owned(),
            label,
        });
    }
    Ok(out)
}

pub fn load_labeled(path: &Path) -> Result<Vec<LabeledText>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let data = parse_labeled(&text, &path.display().to_string())?;
    if data.is_empty() {
        return Err(Error::InvalidSplit(format!(
            "{} has no examples",
            path.display()
        )));
    }
    Ok(data)
}

pub fn labeled_to_text(data: &[LabeledText]) -> String {
    let mut out = String::new();
    for d in data {
        let _ = writeln!(out, "{}\t{}", d.label, d.text);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labelled() {
        let task = TopicTask::news();
        let a = task.generate(50, 3);
        assert_eq!(a, task.generate(50, 3));
        assert_ne!(a, task.generate(50, 4));
        assert!(a.iter().all(|t| t.label < 4));
        assert!(a
            .iter()
            .all(|t| (6..=10).contains(&t.text.split_whitespace().count())));
    }

    #[test]
    fn labeled_round_trip() {
        let a = TopicTask::news().generate(20, 1);
        assert_eq!(parse_labeled(&labeled_to_text(&a), "x").unwrap(), a);
        assert!(matches!(
            parse_labeled("1\tok\nfoo\tbar\n", "x"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
