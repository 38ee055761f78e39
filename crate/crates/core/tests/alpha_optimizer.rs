//! The length-penalty fit against a brute-force search written separately.

mod common;

use common::{brute_alpha, brute_gap, length_exploiting, reference_grid};
use xlingual::reward::{alpha_grid, apply_alpha, group_pools, mean_length_gap, optimize_alpha, ScoredResponse};

#[test]
fn grid_is_zero_plus_forty_log_spaced_points() {
    let g = alpha_grid();
    let want = reference_grid();
    assert_eq!(g.len(), 41);
    for (a, b) in g.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "{a} vs {b}");
    }
}

#[test]
fn fitted_alpha_equals_exhaustive_argmin_and_shrinks_the_gap() {
    let start = std::time::Instant::now();
    let grid = alpha_grid();
    for seed in 0..20u64 {
        let slopes = [0.02, 0.1, 0.35];
        let scored = length_exploiting(seed, 30, 8, &slopes);
        let fitted = optimize_alpha(&scored, slopes.len(), &grid).unwrap();
        let groups = group_pools(&scored);
        for lang in 0..slopes.len() {
            assert_eq!(fitted[lang], brute_alpha(&scored, lang, &grid), "seed {seed} lang {lang}");
            let pools: Vec<Vec<&ScoredResponse>> = groups
                .iter()
                .filter(|((l, _), _)| *l == lang)
                .map(|(_, v)| v.clone())
                .collect();
            let at_fit = mean_length_gap(&pools, fitted[lang]).abs();
            let at_zero = mean_length_gap(&pools, 0.0).abs();
            assert!(at_fit <= at_zero, "seed {seed} lang {lang}: {at_fit} > {at_zero}");
            assert!((brute_gap(&pools, fitted[lang]).abs() - at_fit).abs() < 1e-12);
            // Length exploitation is present before the fit.
            assert!(mean_length_gap(&pools, 0.0) > 0.0);
        }
        let mut adjusted = scored.clone();
        apply_alpha(&mut adjusted, &fitted);
        for s in &adjusted {
            assert_eq!(s.reward, s.raw - fitted[s.lang] * s.token_count as f64);
        }
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn ties_across_the_grid_keep_the_smallest_alpha() {
    // All responses have equal length, so every α gives gap 0.
    let scored: Vec<ScoredResponse> = (0..4u32)
        .map(|i| ScoredResponse {
            lang: 0,
            prompt_id: 1,
            sample_id: i,
            tokens: vec![i + 10, 1],
            raw: i as f64,
            reward: i as f64,
            token_count: 2,
        })
        .collect();
    assert_eq!(optimize_alpha(&scored, 1, &alpha_grid()).unwrap(), vec![0.0]);
}
