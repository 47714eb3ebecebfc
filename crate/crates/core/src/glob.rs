//! Restricted globs: anchored patterns made of literal characters and `*`,
//! where `*` matches zero or more characters.
//!
//! Containment between two globs is decided by treating every `*` of the
//! candidate sub-pattern as an opaque symbol that no literal can match, and
//! asking whether the super-pattern matches the resulting symbol string.
//! Any substitution for those symbols can then be absorbed by the stars that
//! absorbed the symbols, and conversely a substitution by characters absent
//! from both patterns can only be absorbed by stars.

use std::fmt;

use thiserror::Error;

/// Characters that carry meaning in common glob dialects and are therefore
/// refused in a restricted glob rather than silently taken literally.
pub const RESERVED_METACHARACTERS: &[char] = &['?', '[', ']', '{', '}', '\\'];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("restricted glob {pattern:?} contains metacharacter {ch:?}")]
    Metacharacter { pattern: String, ch: char },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlobToken {
    Literal(char),
    Star,
}

/// A normalized restricted glob: no two consecutive stars.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Glob {
    tokens: Vec<GlobToken>,
}

impl Glob {
    /// Parses a restricted glob, collapsing runs of `*`.
    pub fn parse(pattern: &str) -> Result<Glob, PatternError> {
        if let Some(ch) = pattern.chars().find(|c| RESERVED_METACHARACTERS.contains(c)) {
            return Err(PatternError::Metacharacter {
                pattern: pattern.to_string(),
                ch,
            });
        }
        Ok(Glob::from_tokens(
            pattern
                .chars()
                .map(|c| if c == '*' { GlobToken::Star } else { GlobToken::Literal(c) }),
        ))
    }

    /// A glob matching exactly `text`; `*` inside `text` is a literal.
    pub fn literal(text: &str) -> Glob {
        Glob {
            tokens: text.chars().map(GlobToken::Literal).collect(),
        }
    }

    pub fn from_tokens(tokens: impl IntoIterator<Item = GlobToken>) -> Glob {
        let mut out: Vec<GlobToken> = Vec::new();
        for t in tokens {
            if t == GlobToken::Star && out.last() == Some(&GlobToken::Star) {
                continue;
            }
            out.push(t);
        }
        Glob { tokens: out }
    }

    pub fn tokens(&self) -> &[GlobToken] {
        &self.tokens
    }

    pub fn star_count(&self) -> usize {
        self.tokens.iter().filter(|t| **t == GlobToken::Star).count()
    }

    /// True if the glob can be rendered as text and parsed back unchanged
    /// (no literal `*` characters).
    pub fn is_textual(&self) -> bool {
        !self.tokens.iter().any(|t| *t == GlobToken::Literal('*'))
    }

    pub fn matches(&self, text: &str) -> bool {
        let symbols: Vec<Symbol> = text.chars().map(Symbol::Char).collect();
        match_symbols(&self.tokens, &symbols)
    }

    /// True iff every string matched by `child` is matched by `self`.
    pub fn subsumes(&self, child: &Glob) -> bool {
        let symbols: Vec<Symbol> = child
            .tokens
            .iter()
            .map(|t| match t {
                GlobToken::Literal(c) => Symbol::Char(*c),
                GlobToken::Star => Symbol::Opaque,
            })
            .collect();
        match_symbols(&self.tokens, &symbols)
    }
}

impl fmt::Display for Glob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tokens {
            match t {
                GlobToken::Literal(c) => write!(f, "{c}")?,
                GlobToken::Star => f.write_str("*")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symbol {
    Char(char),
    /// Stands for an arbitrary substring; only a pattern star consumes it.
    Opaque,
}

/// Greedy wildcard matching with single-star backtracking. Constant extra
/// space, O(|pattern| * |text|) worst case.
fn match_symbols(pattern: &[GlobToken], text: &[Symbol]) -> bool {
    let (mut p, mut t) = (0usize, 0usize);
    let mut resume: Option<(usize, usize)> = None;
    while t < text.len() {
        match pattern.get(p) {
            Some(GlobToken::Star) => {
                resume = Some((p, t));
                p += 1;
            }
            Some(GlobToken::Literal(c)) if text[t] == Symbol::Char(*c) => {
                p += 1;
                t += 1;
            }
            _ => match resume {
                Some((sp, st)) => {
                    p = sp + 1;
                    t = st + 1;
                    resume = Some((sp, st + 1));
                }
                None => return false,
            },
        }
    }
    pattern[p..].iter().all(|tok| *tok == GlobToken::Star)
}

/// Anchored match of a restricted glob pattern against `text`. Patterns
/// containing reserved metacharacters never match.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    Glob::parse(pattern).map(|g| g.matches(text)).unwrap_or(false)
}

/// `L(child) ⊆ L(parent)` for two restricted glob pattern strings. Invalid
/// patterns answer false.
pub fn pattern_subsumes(parent: &str, child: &str) -> bool {
    match (Glob::parse(parent), Glob::parse(child)) {
        (Ok(p), Ok(c)) => p.subsumes(&c),
        _ => false,
    }
}
