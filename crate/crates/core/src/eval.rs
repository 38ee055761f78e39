//! Win rates against a frozen baseline, reward accuracy against the oracle,
//! and length statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::babel::{lang_name, LangId, Oracle, ParallelPrompts, Verdict, VocabLayout, ENGLISH};
use crate::error::{Error, Result};
use crate::lm::Model;
use crate::pairs::PreferencePair;
use crate::sampler::greedy_decode;

/// Greedy responses keyed by `(lang, prompt_id)`.
pub type Generations = BTreeMap<(LangId, u64), Vec<u32>>;

pub fn greedy_generations(
    model: &Model,
    vocab: &VocabLayout,
    prompts: &ParallelPrompts,
    langs: &[LangId],
    max_new_tokens: usize,
) -> Result<Generations> {
    let mut out = BTreeMap::new();
    for &lang in langs {
        vocab.check_lang(lang)?;
        for task in &prompts.tasks {
            let y = greedy_decode(model, &task.prompt(vocab, lang), max_new_tokens)?;
            out.insert((lang, task.id), y);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangWinRate {
    pub lang: LangId,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub total: usize,
    pub win_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub candidate: String,
    pub baseline: String,
    pub decoding: String,
    pub max_new_tokens: usize,
    pub per_lang: Vec<LangWinRate>,
}

impl WinRateReport {
    pub fn lang(&self, lang: LangId) -> Option<&LangWinRate> {
        self.per_lang.iter().find(|r| r.lang == lang)
    }

    /// Unweighted mean win rate over languages other than English.
    pub fn mean_non_english(&self) -> Option<f64> {
        let rates: Vec<f64> = self
            .per_lang
            .iter()
            .filter(|r| r.lang != ENGLISH)
            .map(|r| r.win_rate)
            .collect();
        (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,lang,wins,losses,ties,total,value\n");
        for r in &self.per_lang {
            let _ = writeln!(
                s,
                "win_rate,{},{},{},{},{},{}",
                lang_name(r.lang),
                r.wins,
                r.losses,
                r.ties,
                r.total,
                r.win_rate
            );
        }
        s
    }
}

/// Errors if any evaluation prompt id was used for training.
pub fn check_disjoint(prompts: &ParallelPrompts, training_ids: &BTreeSet<u64>) -> Result<()> {
    match prompts.tasks.iter().find(|t| training_ids.contains(&t.id)) {
        Some(t) => Err(Error::PromptOverlap(t.id)),
        None => Ok(()),
    }
}

/// Head-to-head oracle judgments of precomputed generations.
pub fn winrate_from_generations(
    candidate: &Generations,
    baseline: &Generations,
    vocab: &VocabLayout,
    prompts: &ParallelPrompts,
    oracle: &Oracle,
) -> Result<Vec<LangWinRate>> {
    let mut per: BTreeMap<LangId, LangWinRate> = BTreeMap::new();
    for (&(lang, id), a) in candidate {
        let b = baseline
            .get(&(lang, id))
            .ok_or_else(|| Error::EmptyPool(format!("baseline has no response for prompt {id} in {}", lang_name(lang))))?;
        let task = prompts
            .tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::EmptyPool(format!("prompt {id} is not in the evaluation set")))?;
        let entry = per.entry(lang).or_insert(LangWinRate {
            lang,
            wins: 0,
            losses: 0,
            ties: 0,
            total: 0,
            win_rate: 0.0,
        });
        match oracle.judge(&task.prompt(vocab, lang), a, b)? {
            Verdict::A => entry.wins += 1,
            Verdict::B => entry.losses += 1,
            Verdict::Tie => entry.ties += 1,
        }
        entry.total += 1;
    }
    Ok(per
        .into_values()
        .map(|mut r| {
            r.win_rate = (r.wins as f64 + 0.5 * r.ties as f64) / r.total as f64;
            r
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct WinRateSetup<'a> {
    pub vocab: &'a VocabLayout,
    pub prompts: &'a ParallelPrompts,
    pub training_ids: &'a BTreeSet<u64>,
    pub langs: &'a [LangId],
    pub max_new_tokens: usize,
    pub oracle: &'a Oracle,
}

/// Greedy-decodes both models on every evaluation prompt and language and
/// lets the oracle judge each pair of responses.
pub fn winrate(
    candidate: (&str, &Model),
    baseline: (&str, &Model),
    setup: &WinRateSetup<'_>,
) -> Result<WinRateReport> {
    check_disjoint(setup.prompts, setup.training_ids)?;
    let gen = |m: &Model| greedy_generations(m, setup.vocab, setup.prompts, setup.langs, setup.max_new_tokens);
    let per_lang = winrate_from_generations(&gen(candidate.1)?, &gen(baseline.1)?, setup.vocab, setup.prompts, setup.oracle)?;
    Ok(WinRateReport {
        candidate: candidate.0.to_string(),
        baseline: baseline.0.to_string(),
        decoding: "greedy".into(),
        max_new_tokens: setup.max_new_tokens,
        per_lang,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangAccuracy {
    pub lang: LangId,
    pub correct: usize,
    pub incorrect: usize,
    /// Pairs the oracle cannot separate; not counted in `accuracy`.
    pub ties: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardAccuracyReport {
    pub per_lang: Vec<LangAccuracy>,
}

impl RewardAccuracyReport {
    pub fn lang(&self, lang: LangId) -> Option<&LangAccuracy> {
        self.per_lang.iter().find(|r| r.lang == lang)
    }

    /// Unweighted mean accuracy over the languages that have one.
    pub fn mean(&self, include_english: bool) -> Option<f64> {
        let v: Vec<f64> = self
            .per_lang
            .iter()
            .filter(|r| include_english || r.lang != ENGLISH)
            .filter_map(|r| r.accuracy)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,lang,correct,incorrect,ties,value\n");
        for r in &self.per_lang {
            let value = r.accuracy.map_or(String::new(), |a| a.to_string());
            let _ = writeln!(s, "reward_accuracy,{},{},{},{},{value}", lang_name(r.lang), r.correct, r.incorrect, r.ties);
        }
        s
    }
}

/// Fraction of pairs whose chosen response the oracle also prefers.
pub fn reward_accuracy(pairs: &[PreferencePair], oracle: &Oracle) -> Result<RewardAccuracyReport> {
    let mut per: BTreeMap<LangId, LangAccuracy> = BTreeMap::new();
    for p in pairs {
        let e = per.entry(p.lang).or_insert(LangAccuracy {
            lang: p.lang,
            correct: 0,
            incorrect: 0,
            ties: 0,
            accuracy: None,
        });
        match oracle.judge(&p.prompt, &p.chosen, &p.rejected)? {
            Verdict::A => e.correct += 1,
            Verdict::B => e.incorrect += 1,
            Verdict::Tie => e.ties += 1,
        }
    }
    Ok(RewardAccuracyReport {
        per_lang: per
            .into_values()
            .map(|mut r| {
                let n = r.correct + r.incorrect;
                r.accuracy = (n > 0).then(|| r.correct as f64 / n as f64);
                r
            })
            .collect(),
    })
}

/// Mean lengths in tokens. A language with no data for a column reports
/// `None` rather than zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LangLengths {
    pub chosen: Option<f64>,
    pub rejected: Option<f64>,
    pub generated: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub per_lang: BTreeMap<LangId, LangLengths>,
}

fn mean(xs: &[usize]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<usize>() as f64 / xs.len() as f64)
}

impl LengthStats {
    pub fn from_pairs(pairs: &[PreferencePair]) -> Self {
        let mut by: BTreeMap<LangId, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for p in pairs {
            let e = by.entry(p.lang).or_default();
            e.0.push(p.chosen.len());
            e.1.push(p.rejected.len());
        }
        LengthStats {
            per_lang: by
                .into_iter()
                .map(|(l, (c, r))| {
                    (
                        l,
                        LangLengths {
                            chosen: mean(&c),
                            rejected: mean(&r),
                            generated: None,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_generations(gens: &Generations) -> Self {
        let mut by: BTreeMap<LangId, Vec<usize>> = BTreeMap::new();
        for (&(lang, _), y) in gens {
            by.entry(lang).or_default().push(y.len());
        }
        LengthStats {
            per_lang: by
                .into_iter()
                .map(|(l, g)| {
                    (
                        l,
                        LangLengths {
                            generated: mean(&g),
                            ..LangLengths::default()
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,lang,value\n");
        for (l, v) in &self.per_lang {
            for (name, x) in [("chosen_len", v.chosen), ("rejected_len", v.rejected), ("generated_len", v.generated)] {
                if let Some(x) = x {
                    let _ = writeln!(s, "{name},{},{x}", lang_name(*l));
                }
            }
        }
        s
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    write_text(path, &(text + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::babel::{gen_parallel_prompts, EOS};

    #[test]
    fn oracle_labelled_pairs_are_fully_accurate() {
        let vocab = VocabLayout::new(2, 6).unwrap();
        let oracle = Oracle::new(vocab, 0.5);
        let prompts = gen_parallel_prompts(&vocab, 20, 0, (3, 6), 1).unwrap();
        let pairs: Vec<PreferencePair> = prompts
            .tasks
            .iter()
            .map(|t| PreferencePair {
                lang: 1,
                prompt_id: t.id,
                prompt: t.prompt(&vocab, 1),
                chosen: t.ideal_response(&vocab, 1),
                rejected: vec![EOS],
                chosen_reward: 1.0,
                rejected_reward: 0.0,
            })
            .collect();
        let r = reward_accuracy(&pairs, &oracle).unwrap();
        assert_eq!(r.lang(1).unwrap().accuracy, Some(1.0));
        assert_eq!(r.lang(0), None);
    }

    #[test]
    fn ideal_vs_empty_wins_everything() {
        let vocab = VocabLayout::new(2, 6).unwrap();
        let oracle = Oracle::new(vocab, 0.5);
        let prompts = gen_parallel_prompts(&vocab, 10, 100, (3, 6), 1).unwrap();
        let mut good = Generations::new();
        let mut empty = Generations::new();
        for t in &prompts.tasks {
            for l in 0..2 {
                good.insert((l, t.id), t.ideal_response(&vocab, l));
                empty.insert((l, t.id), vec![EOS]);
            }
        }
        let r = winrate_from_generations(&good, &empty, &vocab, &prompts, &oracle).unwrap();
        assert!(r.iter().all(|x| x.win_rate == 1.0 && x.total == 10));
        let r = winrate_from_generations(&good, &good, &vocab, &prompts, &oracle).unwrap();
        assert!(r.iter().all(|x| x.win_rate == 0.5 && x.ties == 10));
        assert!(matches!(
            check_disjoint(&prompts, &BTreeSet::from([105])),
            Err(Error::PromptOverlap(105))
        ));
    }

    #[test]
    fn lengths_report_absent_buckets() {
        let mut g = Generations::new();
        g.insert((1, 0), vec![5; 7]);
        g.insert((1, 1), vec![5; 7]);
        let s = LengthStats::from_generations(&g);
        assert_eq!(s.per_lang[&1].generated, Some(7.0));
        assert_eq!(s.per_lang[&1].chosen, None);
        assert!(!s.per_lang.contains_key(&0));
    }
}
