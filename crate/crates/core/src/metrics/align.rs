//! Needleman–Wunsch global alignment and percent sequence identity.

use super::MetricError;

/// Scoring: match +1, mismatch 0, gap −1.
const MATCH: i64 = 1;
const MISMATCH: i64 = 0;
const GAP: i64 = -1;

/// Percent identity (identities / alignment length × 100) of the global
/// Needleman–Wunsch alignment. Traceback ties prefer diagonal, then up,
/// then left, so results are deterministic.
pub fn seq_id(a: &str, b: &str) -> Result<f64, MetricError> {
    if a.is_empty() {
        return Err(MetricError::EmptySequence("first".into()));
    }
    if b.is_empty() {
        return Err(MetricError::EmptySequence("second".into()));
    }
    let a: Vec<u8> = a.bytes().collect();
    let b: Vec<u8> = b.bytes().collect();
    let (n, m) = (a.len(), b.len());
    let mut score = vec![0i64; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        score[at(i, 0)] = GAP * i as i64;
    }
    for j in 1..=m {
        score[at(0, j)] = GAP * j as i64;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = if a[i - 1] == b[j - 1] { MATCH } else { MISMATCH };
            let diag = score[at(i - 1, j - 1)] + sub;
            let up = score[at(i - 1, j)] + GAP;
            let left = score[at(i, j - 1)] + GAP;
            score[at(i, j)] = diag.max(up).max(left);
        }
    }
    // Traceback.
    let (mut i, mut j) = (n, m);
    let mut identities = 0usize;
    let mut length = 0usize;
    while i > 0 || j > 0 {
        length += 1;
        if i > 0 && j > 0 {
            let sub = if a[i - 1] == b[j - 1] { MATCH } else { MISMATCH };
            if score[at(i, j)] == score[at(i - 1, j - 1)] + sub {
                if a[i - 1] == b[j - 1] {
                    identities += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && score[at(i, j)] == score[at(i - 1, j)] + GAP {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    Ok(100.0 * identities as f64 / length as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_sequences_are_100() {
        assert_abs_diff_eq!(seq_id("ACDEF", "ACDEF").unwrap(), 100.0);
    }

    #[test]
    fn fully_mismatched_are_0() {
        assert_abs_diff_eq!(seq_id("AAAA", "CCCC").unwrap(), 0.0);
    }

    #[test]
    fn gapped_hand_case() {
        // "AAC" vs "AC": alignment length 3 with 2 identities → 66.7%.
        let v = seq_id("AAC", "AC").unwrap();
        assert_abs_diff_eq!(v, 200.0 / 3.0, epsilon = 1e-9);
        assert!((v - 66.7).abs() < 0.1);
    }

    #[test]
    fn symmetric_in_identity_percentage() {
        let a = seq_id("ACDEFGHIK", "ACDFGHK").unwrap();
        let b = seq_id("ACDFGHK", "ACDEFGHIK").unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn empty_rejected() {
        assert!(seq_id("", "AC").is_err());
        assert!(seq_id("AC", "").is_err());
    }
}
