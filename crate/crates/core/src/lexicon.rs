//! Female/male word lists and the lexicon file format.
//!
//! A lexicon file is UTF-8 text with a `[female]` and a `[male]` section,
//! one word per line. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn opposite(self) -> Gender {
        match self {
            Gender::Female => Gender::Male,
            Gender::Male => Gender::Female,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Two disjoint, non-empty sets of lowercase gendered words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderLexicon {
    female: BTreeSet<String>,
    male: BTreeSet<String>,
}

impl GenderLexicon {
    pub fn new<F, M>(female: F, male: M) -> Result<Self>
    where
        F: IntoIterator,
        F::Item: AsRef<str>,
        M: IntoIterator,
        M::Item: AsRef<str>,
    {
        let normalize = |w: &str| w.trim().to_lowercase();
        let female: BTreeSet<String> = female.into_iter().map(|w| normalize(w.as_ref())).collect();
        let male: BTreeSet<String> = male.into_iter().map(|w| normalize(w.as_ref())).collect();
        if female.is_empty() {
            return Err(Error::Config("female word list is empty".into()));
        }
        if male.is_empty() {
            return Err(Error::Config("male word list is empty".into()));
        }
        if let Some(word) = female.intersection(&male).next() {
            return Err(Error::Config(format!(
                "word {word:?} appears in both the female and male lists"
            )));
        }
        Ok(Self { female, male })
    }

    /// The word lists shipped with the crate.
    pub fn default_lists() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut female = Vec::new();
        let mut male = Vec::new();
        let mut section: Option<Gender> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.to_ascii_lowercase().as_str() {
                "[female]" => section = Some(Gender::Female),
                "[male]" => section = Some(Gender::Male),
                _ => match section {
                    Some(Gender::Female) => female.push(line.to_string()),
                    Some(Gender::Male) => male.push(line.to_string()),
                    None => {
                        return Err(Error::Parse {
                            line: idx + 1,
                            message: format!("word {line:?} before any [female]/[male] header"),
                        })
                    }
                },
            }
        }
        Self::new(female, male)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::from("[female]\n");
        for w in &self.female {
            out.push_str(w);
            out.push('\n');
        }
        out.push_str("\n[male]\n");
        for w in &self.male {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn female_words(&self) -> &BTreeSet<String> {
        &self.female
    }

    pub fn male_words(&self) -> &BTreeSet<String> {
        &self.male
    }

    pub fn words(&self, gender: Gender) -> &BTreeSet<String> {
        match gender {
            Gender::Female => &self.female,
            Gender::Male => &self.male,
        }
    }

    pub fn gender_of(&self, token: &str) -> Option<Gender> {
        if self.female.contains(token) {
            Some(Gender::Female)
        } else if self.male.contains(token) {
            Some(Gender::Male)
        } else {
            None
        }
    }

    /// Lexicon with the two lists exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            female: self.male.clone(),
            male: self.female.clone(),
        }
    }
}
