//! Tokenization with VALUE masking.
//!
//! Questions are lowercased and split on whitespace, with punctuation split
//! off words. Programs are split into DSL lexemes and keep their case.
//! Numeric literals become the VALUE token in both modes and travel beside
//! the id sequence, in order, as the literal text they had.

use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{ClauseKind, Param, Query, Variable, RUN_FUNCTION};
use crate::qforms::{param_phrases, Piece, Registry};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const VALUE: u32 = 4;

/// Reserved token spellings, indexed by id.
pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "VALUE"];

const PUNCTUATION: &[char] = &['?', ',', '.', '!', ';', ':'];

static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?$").expect("valid regex")
});

static PROGRAM_LEXEME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[A-Za-z_][A-Za-z0-9_]*|[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|\S")
        .expect("valid regex")
});

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("vocab file line {line}: {message}")]
    BadVocab { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Question,
    Program,
}

impl Mode {
    /// Program text always contains a parenthesis; questions never do.
    pub fn detect(text: &str) -> Mode {
        if text.contains('(') {
            Mode::Program
        } else {
            Mode::Question
        }
    }
}

/// A lexical token before id lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lexeme {
    Word(String),
    Number(String),
}

impl Lexeme {
    pub fn text(&self) -> &str {
        match self {
            Lexeme::Word(s) | Lexeme::Number(s) => s,
        }
    }
}

fn is_number(s: &str) -> bool {
    NUMBER.is_match(s)
}

fn question_lexemes(text: &str) -> Vec<Lexeme> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let core_start = word.len() - word.trim_start_matches(PUNCTUATION).len();
        let trimmed = word.trim_end_matches(PUNCTUATION);
        let core_end = trimmed.len().max(core_start);
        for c in word[..core_start].chars() {
            out.push(Lexeme::Word(c.to_string()));
        }
        let core = &word[core_start..core_end];
        if !core.is_empty() {
            out.push(if is_number(core) {
                Lexeme::Number(core.to_string())
            } else {
                Lexeme::Word(core.to_lowercase())
            });
        }
        for c in word[core_end..].chars() {
            out.push(Lexeme::Word(c.to_string()));
        }
    }
    out
}

fn program_lexemes(text: &str) -> Vec<Lexeme> {
    PROGRAM_LEXEME
        .find_iter(text)
        .map(|m| {
            let s = m.as_str();
            if is_number(s) {
                Lexeme::Number(s.to_string())
            } else {
                Lexeme::Word(s.to_string())
            }
        })
        .collect()
}

pub fn lexemes(text: &str, mode: Mode) -> Vec<Lexeme> {
    match mode {
        Mode::Question => question_lexemes(text),
        Mode::Program => program_lexemes(text),
    }
}

/// Token strings with numbers left as literals; the unit of token-level
/// scoring.
pub fn lexical_tokens(text: &str) -> Vec<String> {
    lexemes(text, Mode::detect(text))
        .into_iter()
        .map(|l| match l {
            Lexeme::Word(s) | Lexeme::Number(s) => s,
        })
        .collect()
}

/// Token ids plus the masked numeric literals in encounter order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    #[serde(rename = "values")]
    pub value_dict: Vec<String>,
}

/// Decoded text plus any VALUE-count mismatch warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub text: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_tokens(Vec::<String>::new())
    }
}

impl Vocab {
    /// Reserved tokens followed by `tokens` in order, skipping repeats.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.insert(t.to_string());
        }
        for t in tokens {
            v.insert(t.into());
        }
        v
    }

    fn insert(&mut self, token: String) {
        if !self.index.contains_key(&token) {
            self.index.insert(token.clone(), self.tokens.len() as u32);
            self.tokens.push(token);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line index is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn parse_file(text: &str) -> Result<Self, CodecError> {
        let lines: Vec<&str> = text.lines().collect();
        for (i, want) in RESERVED.iter().enumerate() {
            if lines.get(i) != Some(want) {
                return Err(CodecError::BadVocab {
                    line: i + 1,
                    message: format!("expected reserved token `{want}`"),
                });
            }
        }
        let mut v = Vocab::default();
        for (i, line) in lines.iter().enumerate().skip(RESERVED.len()) {
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(CodecError::BadVocab {
                    line: i + 1,
                    message: "empty or whitespace token".into(),
                });
            }
            if v.index.contains_key(*line) {
                return Err(CodecError::BadVocab {
                    line: i + 1,
                    message: format!("duplicate token `{line}`"),
                });
            }
            v.insert(line.to_string());
        }
        Ok(v)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        Vocab::parse_file(&std::fs::read_to_string(path)?)
    }
}

/// Vocabulary of every word-level token in `corpus`, in first-encounter
/// order after the reserved tokens.
pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Vocab {
    let words = corpus.into_iter().flat_map(|text| {
        lexemes(text, Mode::detect(text))
            .into_iter()
            .filter_map(|l| match l {
                Lexeme::Word(w) => Some(w),
                Lexeme::Number(_) => None,
            })
    });
    Vocab::from_tokens(words)
}

/// Vocabulary covering every question and program the registry can produce.
pub fn registry_vocab(registry: &Registry) -> Vocab {
    let mut corpus: Vec<String> = Vec::new();
    for form in registry.forms() {
        for piece in form.pieces {
            match piece {
                Piece::Text(t) => corpus.push(t.to_string()),
                Piece::Synonyms(g) => corpus.extend(g.iter().map(|s| s.to_string())),
                Piece::Variable => corpus.extend(form.variables.iter().map(|(_, p)| p.to_string())),
                Piece::Steps => {}
                Piece::Clauses => {
                    corpus.push(form.clause_template.replace("{p}", "").replace("{v}", ""));
                    for p in form.params {
                        corpus.extend(
                            param_phrases(*p)[..form.param_variants]
                                .iter()
                                .map(|s| s.to_string()),
                        );
                    }
                    corpus.push(", and".into());
                }
            }
        }
    }
    let mut program_tokens: Vec<String> = Query::ALL.iter().map(|q| q.name().to_string()).collect();
    program_tokens.extend(["(", RUN_FUNCTION, ",", ")"].map(String::from));
    program_tokens.extend(ClauseKind::ALL.iter().map(|c| c.name().to_string()));
    program_tokens.extend(Param::ALL.iter().map(|p| p.name().to_string()));
    program_tokens.extend(Variable::ALL.iter().map(|v| v.name().to_string()));
    let words = corpus
        .iter()
        .flat_map(|t| question_lexemes(t))
        .filter_map(|l| match l {
            Lexeme::Word(w) => Some(w),
            Lexeme::Number(_) => None,
        });
    Vocab::from_tokens(words.chain(program_tokens))
}

pub fn encode(text: &str, vocab: &Vocab) -> TokenSequence {
    encode_as(text, Mode::detect(text), vocab)
}

pub fn encode_as(text: &str, mode: Mode, vocab: &Vocab) -> TokenSequence {
    let mut seq = TokenSequence {
        ids: vec![BOS],
        value_dict: Vec::new(),
    };
    for lexeme in lexemes(text, mode) {
        match lexeme {
            Lexeme::Number(n) => {
                seq.ids.push(VALUE);
                seq.value_dict.push(n);
            }
            Lexeme::Word(w) => seq.ids.push(vocab.id(&w).unwrap_or(UNK)),
        }
    }
    seq.ids.push(EOS);
    seq
}

fn attaches_left(token: &str) -> bool {
    token.len() == 1 && token.starts_with(PUNCTUATION)
}

/// Rebuilds text from ids. Decoding starts after a leading BOS, stops at the
/// first EOS and skips PAD. The i-th VALUE takes `value_dict[i]`.
pub fn decode(seq: &TokenSequence, vocab: &Vocab) -> Decoded {
    let body = seq.ids.strip_prefix(&[BOS]).unwrap_or(&seq.ids);
    let body: Vec<u32> = body
        .iter()
        .copied()
        .take_while(|&id| id != EOS)
        .filter(|&id| id != PAD)
        .collect();
    let paren = vocab.id("(");
    let mode = if paren.is_some_and(|p| body.contains(&p)) {
        Mode::Program
    } else {
        Mode::Question
    };

    let mut warnings = Vec::new();
    let mut values = seq.value_dict.iter();
    let mut surplus = 0usize;
    let mut out = String::new();
    for id in body {
        let token: &str = match id {
            VALUE => match values.next() {
                Some(v) => v,
                None => {
                    surplus += 1;
                    RESERVED[VALUE as usize]
                }
            },
            _ => vocab.token(id).unwrap_or(RESERVED[UNK as usize]),
        };
        if mode == Mode::Question && !out.is_empty() && !attaches_left(token) {
            out.push(' ');
        }
        out.push_str(token);
    }
    if surplus > 0 {
        warnings.push(format!(
            "{surplus} VALUE token(s) had no value and were left as VALUE"
        ));
    }
    let unused = values.count();
    if unused > 0 {
        warnings.push(format!(
            "{unused} value(s) were not consumed and were dropped"
        ));
    }
    Decoded {
        text: out,
        warnings,
    }
}

/// The text a question or program decodes back to: questions lowercased
/// outside numbers with single spaces, programs with whitespace removed.
pub fn normalize(text: &str) -> String {
    let mode = Mode::detect(text);
    let mut out = String::new();
    for l in lexemes(text, mode) {
        let t = l.text();
        if mode == Mode::Question && !out.is_empty() && !attaches_left(t) {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        registry_vocab(&Registry::new())
    }

    #[test]
    fn reserved_ids() {
        let v = Vocab::default();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("VALUE"), Some(VALUE));
        assert_eq!(v.id("<unk>"), Some(UNK));
        let one = build_vocab(["x x x", "x"]);
        assert_eq!(one.len(), 6);
    }

    #[test]
    fn registry_vocab_contents() {
        let v = vocab();
        for t in [
            "collapse",
            "Fwn",
            "fwn",
            "four_box_model",
            "(",
            "?",
            ",",
            "wind-driven",
        ] {
            assert!(v.id(t).is_some(), "{t}");
        }
        assert_eq!(v.len(), 80);
    }

    #[test]
    fn question_masks_values() {
        let v = vocab();
        let seq = encode("Does Fwn collapse the AMOC at 49483?", &v);
        assert_eq!(seq.ids.iter().filter(|&&i| i == VALUE).count(), 1);
        assert_eq!(seq.value_dict, vec!["49483"]);
        assert_eq!(seq.ids.first(), Some(&BOS));
        assert_eq!(seq.ids.last(), Some(&EOS));
        assert!(!seq.ids.contains(&UNK));
        assert_eq!(
            decode(&seq, &v).text,
            "does fwn collapse the amoc at 49483?"
        );
    }

    #[test]
    fn empty_text() {
        let seq = encode("", &vocab());
        assert_eq!(seq.ids, vec![BOS, EOS]);
        assert!(seq.value_dict.is_empty());
        assert_eq!(decode(&seq, &vocab()).text, "");
    }

    #[test]
    fn program_masks_values() {
        let v = vocab();
        let text =
            "IncreaseOf(four_box_model(SetTo(Fwn,5.8e4),SetTo(M_ek,2.6e7),SetTo(D_low0,439)),M_n)";
        let seq = encode(text, &v);
        assert_eq!(seq.value_dict, vec!["5.8e4", "2.6e7", "439"]);
        assert_eq!(seq.ids.iter().filter(|&&i| i == VALUE).count(), 3);
        let back = decode(&seq, &v);
        assert_eq!(back.text, text);
        assert!(back.warnings.is_empty());
        let spaced = encode("IncreaseOf( four_box_model( SetTo(Fwn, 5.8e4)), M_n)", &v);
        assert_eq!(
            decode(&spaced, &v).text,
            "IncreaseOf(four_box_model(SetTo(Fwn,5.8e4)),M_n)"
        );
    }

    #[test]
    fn value_count_mismatch_warns() {
        let v = vocab();
        let at = v.id("at").unwrap();
        let seq = TokenSequence {
            ids: vec![BOS, at, VALUE, VALUE, EOS],
            value_dict: vec!["1".into()],
        };
        let d = decode(&seq, &v);
        assert_eq!(d.text, "at 1 VALUE");
        assert_eq!(d.warnings.len(), 1);
        let seq = TokenSequence {
            ids: vec![BOS, at, EOS],
            value_dict: vec!["1".into()],
        };
        assert_eq!(decode(&seq, &v).warnings.len(), 1);
    }

    #[test]
    fn unknown_words() {
        let v = vocab();
        let seq = encode("what is the weather?", &v);
        assert!(seq.ids.contains(&UNK));
        assert!(decode(&seq, &v).text.contains("<unk>"));
    }

    #[test]
    fn punctuation_and_case() {
        assert_eq!(
            lexical_tokens("If Fwn is 45113 and M_ek is 2.7e7, does the AMOC collapse?"),
            [
                "if", "fwn", "is", "45113", "and", "m_ek", "is", "2.7e7", ",", "does", "the",
                "amoc", "collapse", "?"
            ]
        );
        assert_eq!(
            normalize("  If  Fwn is 4.24e-06,  ok? "),
            "if fwn is 4.24e-06, ok?"
        );
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = vocab();
        let back = Vocab::parse_file(&v.to_file_string()).unwrap();
        assert_eq!(back, v);
        assert!(matches!(
            Vocab::parse_file("<pad>\n<bos>\n"),
            Err(CodecError::BadVocab { line: 3, .. })
        ));
        let dup = format!("{}x\nx\n", Vocab::default().to_file_string());
        assert!(matches!(
            Vocab::parse_file(&dup),
            Err(CodecError::BadVocab { line: 7, .. })
        ));
    }

    #[test]
    fn token_sequence_wire_shape() {
        let seq = TokenSequence {
            ids: vec![1, 4, 2],
            value_dict: vec!["5".into()],
        };
        assert_eq!(
            serde_json::to_string(&seq).unwrap(),
            r#"{"ids":[1,4,2],"values":["5"]}"#
        );
    }
}
