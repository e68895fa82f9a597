use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{indefinite_article, tokenize};

pub const GENDER_SLOT: &str = "[GENDER]";
pub const ATTR_SLOT: &str = "[ATTR]";
/// Placeholder replaced by "a" or "an" to agree with the next word.
pub const ARTICLE: &str = "a/an";

/// A sentence pattern with one gender slot and one attribute slot, such as
/// `"[GENDER] is a/an [ATTR]"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Template {
    pattern: String,
}

/// A template filled with concrete words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub tokens: Vec<String>,
    pub gender_pos: usize,
    pub attr_positions: Vec<usize>,
}

impl Template {
    pub fn new(pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        let pieces: Vec<&str> = pattern.split_whitespace().collect();
        let count = |slot: &str| pieces.iter().filter(|p| **p == slot).count();
        if count(GENDER_SLOT) != 1 || count(ATTR_SLOT) != 1 {
            return Err(Error::Config(format!(
                "template {pattern:?} needs exactly one {GENDER_SLOT} and one {ATTR_SLOT} slot"
            )));
        }
        if pieces.last() == Some(&ARTICLE) {
            return Err(Error::Config(format!("template {pattern:?} ends with {ARTICLE}")));
        }
        Ok(Self { pattern })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Fills the slots. Every multi-word attribute token counts as part of
    /// the attribute.
    pub fn instantiate(&self, gender_word: &str, attribute: &str) -> Result<Instance> {
        let pieces: Vec<&str> = self.pattern.split_whitespace().collect();
        let mut tokens = Vec::new();
        let mut gender_pos = None;
        let mut attr_positions = Vec::new();
        for (i, piece) in pieces.iter().enumerate() {
            match *piece {
                GENDER_SLOT => {
                    let g = tokenize(gender_word);
                    if g.len() != 1 {
                        return Err(Error::Argument(format!("gender word {gender_word:?} is not a single token")));
                    }
                    gender_pos = Some(tokens.len());
                    tokens.extend(g);
                }
                ATTR_SLOT => {
                    let a = tokenize(attribute);
                    if a.is_empty() {
                        return Err(Error::Argument(format!("attribute {attribute:?} has no tokens")));
                    }
                    attr_positions.extend(tokens.len()..tokens.len() + a.len());
                    tokens.extend(a);
                }
                ARTICLE => {
                    let next = match pieces[i + 1] {
                        GENDER_SLOT => gender_word,
                        ATTR_SLOT => attribute,
                        other => other,
                    };
                    tokens.push(indefinite_article(next).to_string());
                }
                other => tokens.extend(tokenize(other)),
            }
        }
        Ok(Instance {
            tokens,
            gender_pos: gender_pos.expect("validated template"),
            attr_positions,
        })
    }
}

impl TryFrom<String> for Template {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Template::new(s)
    }
}

impl From<Template> for String {
    fn from(t: Template) -> String {
        t.pattern
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pattern)
    }
}

pub fn default_templates() -> Vec<Template> {
    ["[GENDER] is a/an [ATTR]", "[GENDER] works as a/an [ATTR]"]
        .into_iter()
        .map(|p| Template::new(p).expect("valid built-in template"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instantiates_with_article() {
        let t = Template::new("[GENDER] is a/an [ATTR]").unwrap();
        let i = t.instantiate("she", "engineer").unwrap();
        assert_eq!(i.tokens, ["she", "is", "an", "engineer"]);
        assert_eq!(i.gender_pos, 0);
        assert_eq!(i.attr_positions, vec![3]);
        assert_eq!(t.instantiate("he", "nurse").unwrap().tokens[2], "a");
    }

    #[test]
    fn slots_can_appear_in_any_order() {
        let t = Template::new("the [ATTR] thanked [GENDER] .").unwrap();
        let i = t.instantiate("him", "police officer").unwrap();
        assert_eq!(i.tokens, ["the", "police", "officer", "thanked", "him"]);
        assert_eq!(i.gender_pos, 4);
        assert_eq!(i.attr_positions, vec![1, 2]);
    }

    #[test]
    fn slot_counts_are_checked() {
        assert!(Template::new("[GENDER] is nice").is_err());
        assert!(Template::new("[GENDER] [GENDER] [ATTR]").is_err());
        assert!(Template::new("[GENDER] [ATTR] a/an").is_err());
    }
}
