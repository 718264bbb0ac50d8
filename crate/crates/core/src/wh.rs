//! Wh-question taxonomy and the sentence-level checks built on it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WhType {
    What,
    Why,
    How,
    Who,
    When,
}

impl WhType {
    /// Column order of the scenario matrix.
    pub const ALL: [WhType; 5] = [WhType::What, WhType::Why, WhType::How, WhType::Who, WhType::When];

    pub fn word(self) -> &'static str {
        match self {
            WhType::What => "What",
            WhType::Why => "Why",
            WhType::How => "How",
            WhType::Who => "Who",
            WhType::When => "When",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|w| *w == self).unwrap_or(0)
    }

    /// Whole-word, case-insensitive containment.
    pub fn occurs_in(self, text: &str) -> bool {
        let needle = self.word().to_ascii_lowercase();
        words(text).any(|w| w == needle)
    }

    /// The wh-type whose word appears first in `text`.
    pub fn first_in(text: &str) -> Option<WhType> {
        words(text).find_map(|w| WhType::ALL.into_iter().find(|t| t.word().eq_ignore_ascii_case(&w)))
    }
}

impl fmt::Display for WhType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown wh-type `{0}`")]
pub struct UnknownWhType(pub String);

impl FromStr for WhType {
    type Err = UnknownWhType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().trim_end_matches('?');
        WhType::ALL
            .into_iter()
            .find(|w| w.word().eq_ignore_ascii_case(t))
            .ok_or_else(|| UnknownWhType(s.to_string()))
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(|w| w.trim_matches('\'').to_lowercase())
}

/// Splits text into sentences on `.`, `!` or `?` followed by whitespace or
/// the end of input. Terminators stay attached to their sentence.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            // absorb runs like "?!" or "..." and closing quotes
            let mut end = i + c.len_utf8();
            while let Some(&(j, n)) = chars.peek() {
                if matches!(n, '.' | '!' | '?' | '"' | '\'' | ')' | '”' | '’') {
                    end = j + n.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            let at_boundary = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
            if at_boundary && !(c == '.' && is_abbreviation(&text[start..i])) {
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

const ABBREVIATIONS: [&str; 6] = ["mr", "mrs", "ms", "dr", "prof", "vs"];

/// Whether the word just before a period is an abbreviation like `e.g` or
/// `Dr` rather than the end of a sentence.
fn is_abbreviation(before: &str) -> bool {
    let word = before.rsplit(char::is_whitespace).next().unwrap_or("");
    let word = word.trim_start_matches(['(', '"', '\'']);
    word.contains('.') || ABBREVIATIONS.iter().any(|a| a.eq_ignore_ascii_case(word))
}

pub fn is_question(sentence: &str) -> bool {
    sentence.trim_end_matches(['"', '\'', ')', '”', '’']).ends_with('?')
}

/// Final sentence of `text`, if any.
pub fn final_sentence(text: &str) -> Option<&str> {
    sentences(text).pop()
}

/// True when `text` ends with a question containing a wh-word.
pub fn ends_with_wh_question(text: &str) -> bool {
    final_sentence(text).is_some_and(|s| is_question(s) && WhType::first_in(s).is_some())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_sentences() {
        let s = sentences("Absolutely, hard work is essential. But let's dive deeper! What next?");
        assert_eq!(s, ["Absolutely, hard work is essential.", "But let's dive deeper!", "What next?"]);
        assert_eq!(sentences("e.g. not split mid-token"), ["e.g. not split mid-token"]);
        assert!(sentences("   ").is_empty());
    }

    #[test]
    fn wh_whole_word() {
        assert!(WhType::How.occurs_in("So, how would you start?"));
        assert!(!WhType::How.occurs_in("Show me however you like."));
        assert!(!WhType::Who.occurs_in("The whole picture."));
        assert_eq!(WhType::first_in("Can you explain why this matters?"), Some(WhType::Why));
        assert_eq!(WhType::first_in("Tell me more."), None);
    }

    #[test]
    fn parse_wh() {
        assert_eq!("what".parse::<WhType>().unwrap(), WhType::What);
        assert_eq!("When?".parse::<WhType>().unwrap(), WhType::When);
        assert!("where".parse::<WhType>().is_err());
    }

    #[test]
    fn question_detection() {
        assert!(ends_with_wh_question("Great start! How do you think verbal praise helps?"));
        assert!(!ends_with_wh_question("Great start! Do you agree?"));
        assert!(!ends_with_wh_question("What a day."));
    }
}
