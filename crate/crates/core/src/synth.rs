//! Seeded generator of small English-like corpora with female-only,
//! male-only, gender-free and mixed-gender sentences. Used for the bundled
//! demo corpus and for desk-scale experiments.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lexicon::Gender;
use crate::text::indefinite_article;

struct GenderWords {
    subject: &'static str,
    object: &'static str,
    possessive: &'static str,
    adjective: &'static str,
    people: &'static [&'static str],
    kin: &'static [&'static str],
}

const FEMALE: GenderWords = GenderWords {
    subject: "she",
    object: "her",
    possessive: "her",
    adjective: "female",
    people: &["woman", "girl"],
    kin: &["mother", "sister", "daughter", "wife", "girlfriend"],
};

const MALE: GenderWords = GenderWords {
    subject: "he",
    object: "him",
    possessive: "his",
    adjective: "male",
    people: &["man", "boy"],
    kin: &["father", "brother", "son", "husband", "boyfriend"],
};

const VERBS: &[&str] = &[
    "bought", "sold", "painted", "cleaned", "found", "lost", "opened", "closed", "carried",
    "fixed", "moved", "borrowed", "ordered", "checked", "wrote", "read",
];
const THINGS: &[&str] = &[
    "book", "car", "house", "letter", "report", "table", "window", "door", "garden", "phone",
    "ticket", "bag", "computer", "map", "bicycle", "picture", "kitchen", "boat", "piano", "lamp",
];
const ADJECTIVES: &[&str] = &[
    "good", "old", "new", "small", "large", "quiet", "bright", "heavy", "cheap", "strange",
    "broken", "clean",
];
const WHEN: &[&str] = &[
    "yesterday", "today", "last week", "on monday", "in the morning", "after lunch",
    "last night", "this year",
];
const PLACES: &[&str] = &["city", "village", "school", "office", "hospital", "museum", "library"];

fn words(g: Gender) -> &'static GenderWords {
    match g {
        Gender::Female => &FEMALE,
        Gender::Male => &MALE,
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty word pool")
}

fn with_article(noun: &str) -> String {
    format!("{} {noun}", indefinite_article(noun))
}

/// One sentence whose gendered words all belong to `gender`.
pub fn gendered_sentence(gender: Gender, occupations: &[&str], rng: &mut ChaCha8Rng) -> String {
    let w = words(gender);
    let occ = pick(rng, occupations);
    let verb = pick(rng, VERBS);
    let thing = pick(rng, THINGS);
    let adj = pick(rng, ADJECTIVES);
    let when = pick(rng, WHEN);
    let kin = pick(rng, w.kin);
    let person = pick(rng, w.people);
    let place = pick(rng, PLACES);
    match rng.random_range(0..14) {
        0..=2 => format!("{} is {}.", w.subject, with_article(occ)),
        3 => format!("{} works as {} in the {place}.", w.subject, with_article(occ)),
        4 => format!("{} {verb} the {thing} {when}.", w.subject),
        5 => format!("{} said the {thing} was {adj}.", w.subject),
        6 => format!("my {kin} is {}.", with_article(occ)),
        7 => format!("the {person} {verb} the {adj} {thing}."),
        8 => format!("{} called {} {kin} {when}.", w.subject, w.possessive),
        9 => format!("the {occ} thanked {} for the {thing}.", w.object),
        10 => format!("{} has no time for the family due to work.", w.subject),
        11 => format!("{} {kin} {verb} the {thing} {when}.", capitalize(w.possessive)),
        12 => format!("the {} {occ} {verb} the {thing}.", w.adjective),
        _ => format!("{} met the {occ} at the {place} {when}.", w.subject),
    }
}

fn neutral_sentence(occupations: &[&str], rng: &mut ChaCha8Rng) -> String {
    let occ = pick(rng, occupations);
    match rng.random_range(0..3) {
        0 => format!("the {occ} {} the {} {}.", pick(rng, VERBS), pick(rng, THINGS), pick(rng, WHEN)),
        1 => format!("the weather was {} {}.", pick(rng, ADJECTIVES), pick(rng, WHEN)),
        _ => format!("the {} is {}.", pick(rng, THINGS), pick(rng, ADJECTIVES)),
    }
}

fn mixed_sentence(rng: &mut ChaCha8Rng) -> String {
    let g = if rng.random_bool(0.5) { Gender::Female } else { Gender::Male };
    let (a, b) = (words(g), words(g.opposite()));
    format!(
        "{} told {} {} about the {}.",
        a.subject,
        a.possessive,
        pick(rng, b.kin),
        pick(rng, THINGS)
    )
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Counts of each sentence kind in a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthMix {
    pub female: usize,
    pub male: usize,
    pub neutral: usize,
    pub mixed: usize,
}

impl SynthMix {
    /// 44% female, 44% male, 6% gender-free, the rest mixed.
    pub fn for_total(total: usize) -> Self {
        let female = total * 44 / 100;
        let neutral = total * 6 / 100;
        let mixed = total - 2 * female - neutral;
        Self {
            female,
            male: female,
            neutral,
            mixed,
        }
    }
}

/// Generates a shuffled corpus, one sentence per element.
pub fn generate(mix: SynthMix, occupations: &[&str], seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::with_capacity(mix.female + mix.male + mix.neutral + mix.mixed);
    for _ in 0..mix.female {
        lines.push(gendered_sentence(Gender::Female, occupations, &mut rng));
    }
    for _ in 0..mix.male {
        lines.push(gendered_sentence(Gender::Male, occupations, &mut rng));
    }
    for _ in 0..mix.neutral {
        lines.push(neutral_sentence(occupations, &mut rng));
    }
    for _ in 0..mix.mixed {
        lines.push(mixed_sentence(&mut rng));
    }
    lines.shuffle(&mut rng);
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{classify_tokens, Classification};
    use crate::lexicon::GenderLexicon;
    use crate::text::tokenize;

    const OCC: &[&str] = &["writer", "artist", "poet"];

    #[test]
    fn gendered_sentences_classify_as_their_gender() {
        let lex = GenderLexicon::default_lists();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let f = gendered_sentence(Gender::Female, OCC, &mut rng);
            assert_eq!(classify_tokens(&tokenize(&f), &lex), Classification::Female, "{f}");
            let m = gendered_sentence(Gender::Male, OCC, &mut rng);
            assert_eq!(classify_tokens(&tokenize(&m), &lex), Classification::Male, "{m}");
        }
    }

    #[test]
    fn mix_counts_and_classes() {
        let lex = GenderLexicon::default_lists();
        let mix = SynthMix::for_total(1000);
        let lines = generate(mix, OCC, 5);
        assert_eq!(lines.len(), 1000);
        let mut counts = [0usize; 3];
        for l in &lines {
            counts[match classify_tokens(&tokenize(l), &lex) {
                Classification::Female => 0,
                Classification::Male => 1,
                Classification::Excluded => 2,
            }] += 1;
        }
        assert_eq!(counts, [mix.female, mix.male, mix.neutral + mix.mixed]);
        assert_eq!(generate(mix, OCC, 5), lines);
    }
}
