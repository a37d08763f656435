//! Predictors that read statistics off the context alone.

use super::PredictError;
use crate::dgp::ContextSequence;

/// Empirical unigram histogram of the whole context (unsmoothed).
///
/// The same vector is returned whatever the last state is.
pub fn uni_inf_predict(context: &ContextSequence, k: usize) -> Result<Vec<f64>, PredictError> {
    if context.is_empty() {
        return Err(PredictError::EmptyContext);
    }
    let mut counts = vec![0.0; k];
    context.tokens.iter().for_each(|&s| counts[s] += 1.0);
    let t = context.len() as f64;
    Ok(counts.into_iter().map(|c| c / t).collect())
}

/// Add-one smoothed bigram estimate `(1 + n_ij) / (k + n_i)`, where `n_i`
/// counts transitions out of `i` (the final token has none).
pub fn bi_inf_matrix(context: &ContextSequence, k: usize) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; k]; k];
    context
        .tokens
        .windows(2)
        .for_each(|w| counts[w[0]][w[1]] += 1.0);
    counts
        .into_iter()
        .map(|row| {
            let denom = k as f64 + row.iter().sum::<f64>();
            row.into_iter().map(|c| (1.0 + c) / denom).collect()
        })
        .collect()
}

/// Row `x_t` of [`bi_inf_matrix`]; uniform for an empty context.
pub fn bi_inf_predict(context: &ContextSequence, k: usize) -> Vec<f64> {
    let Some(last) = context.last() else {
        return vec![1.0 / k as f64; k];
    };
    let mut row = vec![1.0; k];
    let mut out_of_last = 0.0;
    for w in context.tokens.windows(2) {
        if w[0] == last {
            row[w[1]] += 1.0;
            out_of_last += 1.0;
        }
    }
    let denom = k as f64 + out_of_last;
    row.into_iter().map(|c| c / denom).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unigram_hand_value() {
        let p = uni_inf_predict(&vec![0, 1, 1].into(), 2).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unigram_constant_context_is_indicator() {
        let p = uni_inf_predict(&vec![2; 17].into(), 4).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            uni_inf_predict(&ContextSequence::default(), 4),
            Err(PredictError::EmptyContext)
        ));
    }

    #[test]
    fn bigram_hand_value() {
        let ctx: ContextSequence = vec![0, 1, 0].into();
        let m = bi_inf_matrix(&ctx, 2);
        let third = 1.0 / 3.0;
        let expected = [[third, 2.0 * third], [2.0 * third, third]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[i][j] - expected[i][j]).abs() < 1e-12);
            }
        }
        let p = bi_inf_predict(&ctx, 2);
        assert!((p[0] - third).abs() < 1e-12 && (p[1] - 2.0 * third).abs() < 1e-12);
    }

    #[test]
    fn bigram_empty_context_is_uniform() {
        assert_eq!(
            bi_inf_predict(&ContextSequence::default(), 10),
            vec![0.1; 10]
        );
        for row in bi_inf_matrix(&ContextSequence::default(), 10) {
            assert_eq!(row, vec![0.1; 10]);
        }
    }

    #[test]
    fn predict_matches_matrix_row() {
        let ctx: ContextSequence = vec![3, 1, 1, 0, 3, 2, 1, 3, 3, 0, 1].into();
        let m = bi_inf_matrix(&ctx, 4);
        assert_eq!(bi_inf_predict(&ctx, 4), m[1]);
    }
}
