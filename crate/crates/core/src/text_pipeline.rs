//! Word tokenization and grouping of token vectors into word units.

use ndarray::ArrayView2;
use serde::Serialize;

use crate::embedding_store::{DumpEntry, StaticEmbeddings};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Token {
    pub surface: String,
    /// Character (Unicode scalar) offsets into the source text.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenizedText {
    pub text: String,
    pub tokens: Vec<Token>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

fn is_joiner(c: char) -> bool {
    matches!(c, '-' | '\'' | '\u{2019}' | '\u{2010}' | '\u{2011}')
}

/// Split on whitespace; every character that is neither alphanumeric nor
/// whitespace becomes its own token, except hyphens and apostrophes with an
/// alphanumeric character on both sides.
pub fn tokenize(text: &str) -> TokenizedText {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;

    let flush = |tokens: &mut Vec<Token>, s: usize, e: usize| {
        tokens.push(Token {
            surface: chars[s..e].iter().collect(),
            start: s,
            end: e,
        });
    };

    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                flush(&mut tokens, s, i);
            }
        } else if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if is_joiner(c)
            && start.is_some()
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            // stays inside the current word
        } else {
            if let Some(s) = start.take() {
                flush(&mut tokens, s, i);
            }
            flush(&mut tokens, i, i + 1);
        }
    }
    if let Some(s) = start {
        flush(&mut tokens, s, chars.len());
    }

    TokenizedText {
        text: text.to_string(),
        tokens,
    }
}

/// One word and the vectors of its (sub)tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct WordUnit {
    pub surface: String,
    pub vectors: Vec<Vec<f64>>,
    pub oov: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenGroups {
    pub units: Vec<WordUnit>,
}

impl TokenGroups {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn oov_count(&self) -> usize {
        self.units.iter().filter(|u| u.oov).count()
    }

    /// All token vectors in order, flattened across words.
    pub fn token_vectors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.units.iter().flat_map(|u| u.vectors.iter())
    }

    pub fn map_vectors<F>(&self, mut f: F) -> Result<TokenGroups>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let units = self
            .units
            .iter()
            .map(|u| {
                Ok(WordUnit {
                    surface: u.surface.clone(),
                    vectors: u.vectors.iter().map(|v| f(v)).collect::<Result<_>>()?,
                    oov: u.oov,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TokenGroups { units })
    }
}

pub fn word_groups_static(tok: &TokenizedText, store: &StaticEmbeddings) -> TokenGroups {
    let units = tok
        .tokens
        .iter()
        .map(|t| {
            let (v, oov) = store.lookup(&t.surface);
            WordUnit {
                surface: t.surface.clone(),
                vectors: vec![v.iter().map(|&x| f64::from(x)).collect()],
                oov,
            }
        })
        .collect();
    TokenGroups { units }
}

/// Group the rows of `layer_matrix` (one per subtoken) by word index.
pub fn word_groups_contextual(entry: &DumpEntry, layer_matrix: ArrayView2<'_, f32>) -> Result<TokenGroups> {
    if layer_matrix.nrows() != entry.subtokens.len() {
        return Err(Error::Dump {
            text_id: entry.text_id.clone(),
            message: format!(
                "layer matrix has {} rows for {} subtokens",
                layer_matrix.nrows(),
                entry.subtokens.len()
            ),
        });
    }
    let mut units: Vec<WordUnit> = entry
        .words
        .iter()
        .map(|w| WordUnit {
            surface: w.0.clone(),
            vectors: Vec::new(),
            oov: false,
        })
        .collect();
    for (sub, row) in entry.subtokens.iter().zip(layer_matrix.rows()) {
        let unit = units.get_mut(sub.word_index()).ok_or_else(|| Error::Dump {
            text_id: entry.text_id.clone(),
            message: format!("word index {} out of range", sub.word_index()),
        })?;
        unit.vectors.push(row.iter().map(|&x| f64::from(x)).collect());
    }
    if let Some(i) = units.iter().position(|u| u.vectors.is_empty()) {
        return Err(Error::Dump {
            text_id: entry.text_id.clone(),
            message: format!("word {i} has no subtokens"),
        });
    }
    Ok(TokenGroups { units })
}
