//! Template comparison: masked bitwise feature similarity consolidated by a
//! greedy pair selection.

use crate::template::CancelableTemplate;
use crate::transform::CancelableFeature;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("templates are not comparable: {0}")]
    KeyMismatch(String),
    #[error("template has no features")]
    EmptyTemplate,
}

/// Pairwise feature similarities between a query and an enrolled template.
/// Row index = query feature, column index = enrolled feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        ScoreMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Controls how many feature pairs feed the decision score.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyParams {
    pub min_pairs: usize,
    pub max_pairs: usize,
    pub mu_p: f64,
    pub tau_p: f64,
}

impl Default for GreedyParams {
    fn default() -> Self {
        GreedyParams { min_pairs: 4, max_pairs: 12, mu_p: 20.0, tau_p: 0.4 }
    }
}

impl GreedyParams {
    pub fn validate(&self) -> Result<(), MatcherError> {
        if self.min_pairs > self.max_pairs {
            return Err(MatcherError::KeyMismatch(format!(
                "min_pairs {} > max_pairs {}",
                self.min_pairs, self.max_pairs
            )));
        }
        Ok(())
    }

    /// Number of pairs to select for an `n x m` matrix.
    pub fn pair_budget(&self, n: usize, m: usize) -> usize {
        let v = n.min(m) as f64;
        let sig = 1.0 / (1.0 + (-self.tau_p * (v - self.mu_p)).exp());
        (self.min_pairs as f64 + (self.max_pairs - self.min_pairs) as f64 * sig).round() as usize
    }
}

/// Decision score plus the feature pairs that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDecision {
    pub score: f64,
    /// `(query_index, enrolled_index)` in selection order.
    pub pairs: Vec<(usize, usize)>,
}

/// Masked similarity of two protected features.
///
/// Validity bits are intersected, duplicated to cover both bits of each
/// unit, and applied to both codes. The score is
/// `1 - ||a xor b|| / (||a|| + ||b||)` with the Euclidean norm of a bit
/// vector, i.e. the square root of its popcount. Two features with nothing
/// valid in common score zero.
pub fn feature_similarity(
    a: &CancelableFeature,
    b: &CancelableFeature,
) -> Result<f64, MatcherError> {
    if a.units() != b.units() {
        return Err(MatcherError::KeyMismatch(format!(
            "unit counts differ: {} vs {}",
            a.units(),
            b.units()
        )));
    }
    let mask = a.d_hat.and(&b.d_hat).duplicate_bits();
    let ma = a.e_hat.and(&mask);
    let mb = b.e_hat.and(&mask);
    let norm_a = (ma.count_ones() as f64).sqrt();
    let norm_b = (mb.count_ones() as f64).sqrt();
    if norm_a + norm_b == 0.0 {
        return Ok(0.0);
    }
    let dist = (ma.xor(&mb).count_ones() as f64).sqrt();
    Ok(1.0 - dist / (norm_a + norm_b))
}

/// All pairwise similarities between two templates built under the same key.
pub fn score_matrix(
    query: &CancelableTemplate,
    enrolled: &CancelableTemplate,
) -> Result<ScoreMatrix, MatcherError> {
    let (qh, eh) = (&query.header, &enrolled.header);
    if qh.seed_id != eh.seed_id {
        return Err(MatcherError::KeyMismatch("seed identifiers differ".into()));
    }
    if (qh.units, qh.p, qh.depth, qh.tau_millis) != (eh.units, eh.p, eh.depth, eh.tau_millis) {
        return Err(MatcherError::KeyMismatch(format!(
            "transform parameters differ: ({}, {}, {}, {}) vs ({}, {}, {}, {})",
            qh.units, qh.p, qh.depth.as_u8(), qh.tau_millis,
            eh.units, eh.p, eh.depth.as_u8(), eh.tau_millis
        )));
    }
    if query.features.is_empty() || enrolled.features.is_empty() {
        return Err(MatcherError::EmptyTemplate);
    }
    let rows = query.features.len();
    let cols = enrolled.features.len();
    let mut data = Vec::with_capacity(rows * cols);
    for q in &query.features {
        for e in &enrolled.features {
            data.push(feature_similarity(q, e)?);
        }
    }
    Ok(ScoreMatrix { rows, cols, data })
}

/// Greedy pair consolidation: repeatedly take the best remaining entry whose
/// row and column are both unused, then average.
///
/// Ties break toward the smaller row, then column, so the result is
/// deterministic.
pub fn greedy_decision_score(matrix: &ScoreMatrix, params: &GreedyParams) -> MatchDecision {
    let budget = params.pair_budget(matrix.rows, matrix.cols);
    let mut entries: Vec<(f64, usize, usize)> = Vec::with_capacity(matrix.rows * matrix.cols);
    for r in 0..matrix.rows {
        for c in 0..matrix.cols {
            entries.push((matrix.at(r, c), r, c));
        }
    }
    entries.sort_unstable_by(|a, b| {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });

    let mut used_row = vec![false; matrix.rows];
    let mut used_col = vec![false; matrix.cols];
    let mut pairs = Vec::new();
    let mut total = 0.0;
    for &(s, r, c) in &entries {
        if pairs.len() == budget {
            break;
        }
        if used_row[r] || used_col[c] {
            continue;
        }
        used_row[r] = true;
        used_col[c] = true;
        pairs.push((r, c));
        total += s;
    }
    let score = if pairs.is_empty() { 0.0 } else { total / pairs.len() as f64 };
    MatchDecision { score, pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::Bits;

    fn feature(e_hat: &[bool], d_hat: &[bool]) -> CancelableFeature {
        assert_eq!(e_hat.len(), 2 * d_hat.len());
        CancelableFeature {
            e_hat: Bits::from_bools(e_hat),
            d_hat: Bits::from_bools(d_hat),
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let f = feature(
            &[true, false, false, false, false, true, false, false],
            &[true, true, true, false],
        );
        assert_eq!(feature_similarity(&f, &f).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_equal_weight_features() {
        // four units all valid; a sets units 0..2, b sets units 2..4
        let a = feature(
            &[true, false, true, false, false, false, false, false],
            &[true, true, true, true],
        );
        let b = feature(
            &[false, false, false, false, true, false, true, false],
            &[true, true, true, true],
        );
        let s = feature_similarity(&a, &b).unwrap();
        let expected = 1.0 - std::f64::consts::SQRT_2 / 2.0;
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
    }

    #[test]
    fn empty_intersection_scores_zero() {
        let a = feature(&[true, false, false, false], &[true, false]);
        let b = feature(&[false, false, true, false], &[false, true]);
        assert_eq!(feature_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn one_sided_silence_scores_zero() {
        let a = feature(&[true, false, true, false], &[true, true]);
        let b = feature(&[false, false, false, false], &[true, true]);
        assert_eq!(feature_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn similarity_is_symmetric() {
        let a = feature(
            &[true, false, false, true, false, false, true, false],
            &[true, true, false, true],
        );
        let b = feature(
            &[false, true, false, false, true, false, true, false],
            &[true, false, true, true],
        );
        assert_eq!(
            feature_similarity(&a, &b).unwrap(),
            feature_similarity(&b, &a).unwrap()
        );
    }

    #[test]
    fn unit_count_mismatch() {
        let a = feature(&[true, false], &[true]);
        let b = feature(&[true, false, false, false], &[true, true]);
        assert!(matches!(feature_similarity(&a, &b), Err(MatcherError::KeyMismatch(_))));
    }

    #[test]
    fn masked_bits_cannot_help() {
        // a stray set bit in an invalid unit changes nothing
        let a = feature(&[true, false, true, false], &[true, false]);
        let mut noisy = a.clone();
        noisy.e_hat.set(3, true);
        let b = feature(&[true, false, false, false], &[true, true]);
        assert_eq!(
            feature_similarity(&a, &b).unwrap(),
            feature_similarity(&noisy, &b).unwrap()
        );
    }

    #[test]
    fn pair_budget_sigmoid() {
        let gp = GreedyParams::default();
        assert_eq!(gp.pair_budget(50, 50), 12);
        assert_eq!(gp.pair_budget(1, 1), 4);
        assert_eq!(gp.pair_budget(20, 20), 8); // midpoint of 4..12
    }

    #[test]
    fn greedy_two_by_two() {
        let m = ScoreMatrix::from_rows(2, 2, vec![0.9, 0.1, 0.2, 0.8]);
        let d = greedy_decision_score(&m, &GreedyParams::default());
        assert_eq!(d.pairs, vec![(0, 0), (1, 1)]);
        assert!((d.score - 0.85).abs() < 1e-12);
    }

    #[test]
    fn greedy_single_entry() {
        let m = ScoreMatrix::from_rows(1, 1, vec![0.8]);
        let d = greedy_decision_score(&m, &GreedyParams::default());
        assert_eq!(d.pairs, vec![(0, 0)]);
        assert!((d.score - 0.8).abs() < 1e-12);
    }

    #[test]
    fn greedy_respects_budget() {
        // 30x30 constant matrix: budget for min(n,m)=30 is sigmoid-saturated
        let m = ScoreMatrix::from_rows(30, 30, vec![0.5; 900]);
        let d = greedy_decision_score(&m, &GreedyParams::default());
        assert_eq!(d.pairs.len(), 12);
        assert!((d.score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn greedy_rows_and_cols_distinct() {
        let m = ScoreMatrix::from_rows(3, 4, vec![
            0.9, 0.8, 0.1, 0.2,
            0.85, 0.7, 0.3, 0.1,
            0.2, 0.75, 0.6, 0.4,
        ]);
        let d = greedy_decision_score(&m, &GreedyParams::default());
        let mut rows: Vec<_> = d.pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<_> = d.pairs.iter().map(|p| p.1).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(rows.len(), d.pairs.len());
        assert_eq!(cols.len(), d.pairs.len());
    }

    /// Best full-assignment mean by brute force over all permutations.
    fn exhaustive_best(m: &ScoreMatrix) -> f64 {
        assert_eq!(m.rows(), m.cols());
        let n = m.rows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::NEG_INFINITY;
        // Heap's algorithm
        let mut c = vec![0usize; n];
        let score = |p: &[usize]| -> f64 {
            p.iter().enumerate().map(|(r, &col)| m.at(r, col)).sum::<f64>() / n as f64
        };
        best = best.max(score(&perm));
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                best = best.max(score(&perm));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best
    }

    #[test]
    fn greedy_never_beats_exhaustive_all_ternary_3x3() {
        // every matrix with entries in {0, 0.5, 1}
        let gp = GreedyParams::default();
        let vals = [0.0, 0.5, 1.0];
        for code in 0..3usize.pow(9) {
            let mut c = code;
            let mut data = Vec::with_capacity(9);
            for _ in 0..9 {
                data.push(vals[c % 3]);
                c /= 3;
            }
            let m = ScoreMatrix::from_rows(3, 3, data);
            let d = greedy_decision_score(&m, &gp);
            assert_eq!(d.pairs.len(), 3);
            assert!(d.score <= exhaustive_best(&m) + 1e-12);
        }
    }

    #[test]
    fn greedy_never_beats_exhaustive_random_5x5() {
        // pin the budget to a full assignment so the comparison is apples to apples
        let gp = GreedyParams { min_pairs: 5, max_pairs: 5, ..GreedyParams::default() };
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..500 {
            let data: Vec<f64> = (0..25).map(|_| next()).collect();
            let m = ScoreMatrix::from_rows(5, 5, data);
            let d = greedy_decision_score(&m, &gp);
            assert_eq!(d.pairs.len(), 5);
            assert!(d.score <= exhaustive_best(&m) + 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_feature(units: usize, seed: u64) -> CancelableFeature {
            let mut state = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(7);
            let mut bit = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state & 1 == 1
            };
            let mut e = Vec::new();
            let mut d = Vec::new();
            for _ in 0..units {
                let set = bit();
                // codes are 00, 01, or 10; 11 never occurs in practice
                if set {
                    let hi = bit();
                    e.push(hi);
                    e.push(!hi);
                } else {
                    e.push(false);
                    e.push(false);
                }
                d.push(bit() || bit());
            }
            CancelableFeature { e_hat: Bits::from_bools(&e), d_hat: Bits::from_bools(&d) }
        }

        proptest! {
            #[test]
            fn similarity_in_unit_interval_and_symmetric(sa in 0u64..5000, sb in 0u64..5000) {
                let a = random_feature(40, sa);
                let b = random_feature(40, sb);
                let s = feature_similarity(&a, &b).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert_eq!(s, feature_similarity(&b, &a).unwrap());
            }

            #[test]
            fn clearing_an_agreeing_set_bit_never_raises_the_score(
                sa in 0u64..2000,
                sb in 0u64..2000,
            ) {
                let a = random_feature(40, sa);
                let b = random_feature(40, sb);
                let mask = a.d_hat.and(&b.d_hat).duplicate_bits();
                let before = feature_similarity(&a, &b).unwrap();
                // find a masked position where both are set and clear it in a
                for i in 0..a.e_hat.len() {
                    if mask.get(i) && a.e_hat.get(i) && b.e_hat.get(i) {
                        let mut worse = a.clone();
                        worse.e_hat.set(i, false);
                        let after = feature_similarity(&worse, &b).unwrap();
                        prop_assert!(after <= before + 1e-12, "{} > {}", after, before);
                        break;
                    }
                }
            }

            #[test]
            fn any_flip_degrades_a_perfect_match(seed in 0u64..2000) {
                let a = random_feature(40, seed);
                if a.e_hat.and(&a.d_hat.duplicate_bits()).count_ones() == 0 {
                    return Ok(());
                }
                let mask = a.d_hat.duplicate_bits();
                for i in 0..a.e_hat.len() {
                    if mask.get(i) {
                        let mut flipped = a.clone();
                        flipped.e_hat.set(i, !flipped.e_hat.get(i));
                        let s = feature_similarity(&flipped, &a).unwrap();
                        prop_assert!(s < 1.0);
                    }
                }
            }

            #[test]
            fn greedy_score_invariant_under_permutation(
                entries in proptest::collection::vec(0.0f64..1.0, 25),
                row_perm in Just(()).prop_perturb(|_, mut rng| {
                    let mut v: Vec<usize> = (0..5).collect();
                    for i in (1..5).rev() {
                        let j = (rng.next_u32() as usize) % (i + 1);
                        v.swap(i, j);
                    }
                    v
                }),
                col_perm in Just(()).prop_perturb(|_, mut rng| {
                    let mut v: Vec<usize> = (0..5).collect();
                    for i in (1..5).rev() {
                        let j = (rng.next_u32() as usize) % (i + 1);
                        v.swap(i, j);
                    }
                    v
                }),
            ) {
                // continuous random entries: ties have probability zero, so
                // the selected values are permutation independent
                let m = ScoreMatrix::from_rows(5, 5, entries.clone());
                let mut permuted = vec![0.0; 25];
                for r in 0..5 {
                    for c in 0..5 {
                        permuted[row_perm[r] * 5 + col_perm[c]] = entries[r * 5 + c];
                    }
                }
                let mp = ScoreMatrix::from_rows(5, 5, permuted);
                let gp = GreedyParams::default();
                let a = greedy_decision_score(&m, &gp);
                let b = greedy_decision_score(&mp, &gp);
                prop_assert!((a.score - b.score).abs() < 1e-12);
            }
        }
    }
}
