use rand::Rng as _;

use super::vocab::{LangId, TokenKind, VocabLayout};
use crate::rng::Rng;

/// Re-renders the `from`-block content tokens of `tokens` in block `to`.
///
/// With probability `noise` each re-rendered token is replaced by a different
/// symbol of block `to`, standing in for translation errors. Specials, tags,
/// and content from other blocks pass through unchanged.
pub fn transcode(
    vocab: &VocabLayout,
    tokens: &[u32],
    from: LangId,
    to: LangId,
    noise: f64,
    rng: &mut Rng,
) -> Vec<u32> {
    let m = vocab.alphabet();
    tokens
        .iter()
        .map(|&t| match vocab.decode(t) {
            Some(TokenKind::Content { lang, index }) if lang == from => {
                if noise > 0.0 && rng.gen_bool(noise.min(1.0)) {
                    let shift = rng.gen_range(1..m);
                    vocab.encode(to, (index + shift) % m)
                } else {
                    vocab.encode(to, index)
                }
            }
            _ => t,
        })
        .collect()
}
