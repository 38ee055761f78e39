use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const PAD: u32 = 2;
pub const SEP: u32 = 3;
pub const NUM_SPECIALS: usize = 4;

/// Language index; 0 is the English stand-in.
pub type LangId = usize;
pub const ENGLISH: LangId = 0;

/// Shared token space: specials, one tag per language, then one block of
/// `alphabet` content tokens per language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    num_langs: usize,
    alphabet: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Special(u32),
    Tag(LangId),
    Content { lang: LangId, index: usize },
}

impl VocabLayout {
    pub fn new(num_langs: usize, alphabet: usize) -> Result<Self> {
        if num_langs < 2 || alphabet < 4 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary needs at least 2 languages and 4 content symbols, got L={num_langs}, m={alphabet}"
            )));
        }
        Ok(VocabLayout {
            num_langs,
            alphabet,
        })
    }

    pub fn num_langs(&self) -> usize {
        self.num_langs
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn vocab_size(&self) -> usize {
        NUM_SPECIALS + self.num_langs + self.num_langs * self.alphabet
    }

    pub fn content_base(&self) -> u32 {
        (NUM_SPECIALS + self.num_langs) as u32
    }

    pub fn tag(&self, lang: LangId) -> u32 {
        debug_assert!(lang < self.num_langs);
        (NUM_SPECIALS + lang) as u32
    }

    /// Token for content symbol `index` in language `lang`.
    pub fn encode(&self, lang: LangId, index: usize) -> u32 {
        debug_assert!(lang < self.num_langs && index < self.alphabet);
        self.content_base() + (lang * self.alphabet + index) as u32
    }

    pub fn decode(&self, token: u32) -> Option<TokenKind> {
        let t = token as usize;
        if t < NUM_SPECIALS {
            Some(TokenKind::Special(token))
        } else if t < NUM_SPECIALS + self.num_langs {
            Some(TokenKind::Tag(t - NUM_SPECIALS))
        } else if t < self.vocab_size() {
            let off = t - NUM_SPECIALS - self.num_langs;
            Some(TokenKind::Content {
                lang: off / self.alphabet,
                index: off % self.alphabet,
            })
        } else {
            None
        }
    }

    pub fn check_lang(&self, lang: LangId) -> Result<()> {
        if lang < self.num_langs {
            Ok(())
        } else {
            Err(Error::UnknownLanguage(lang))
        }
    }

    /// Identifies the token space in checkpoints and artifacts.
    pub fn fingerprint(&self) -> String {
        format!("babel-s{NUM_SPECIALS}-L{}-m{}", self.num_langs, self.alphabet)
    }

    pub fn language(&self, lang: LangId) -> Result<LanguageSpec> {
        self.check_lang(lang)?;
        Ok(LanguageSpec {
            id: lang,
            name: lang_name(lang),
            prefix_tokens: vec![self.tag(lang)],
        })
    }

    pub fn languages(&self) -> impl Iterator<Item = LangId> {
        0..self.num_langs
    }
}

/// Short display name: `en` for language 0, `l1`, `l2`, ... otherwise.
pub fn lang_name(lang: LangId) -> String {
    if lang == ENGLISH {
        "en".to_string()
    } else {
        format!("l{lang}")
    }
}

/// A synthetic language: its content block (the cipher, via
/// [`VocabLayout::encode`]) and the prefix that asks for an answer in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageSpec {
    pub id: LangId,
    pub name: String,
    pub prefix_tokens: Vec<u32>,
}
