//! Adjusted mutual information between two partitions, with the expected
//! mutual information under the hypergeometric model and the arithmetic
//! mean of the two entropies as normalizer.

use std::collections::HashMap;

use crate::error::{EarError, Result};

/// Relabels by order of first appearance so that renamings of a partition
/// produce bit-identical computations.
fn canonical(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `ln(i!)` for `i` in `0..=n`.
fn log_factorials(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n + 1);
    t.push(0.0);
    for i in 1..=n {
        t.push(t[i - 1] + (i as f64).ln());
    }
    t
}

fn expected_mutual_info(a: &[usize], b: &[usize], n: usize) -> f64 {
    let lf = log_factorials(n);
    let nf = n as f64;
    let mut emi = 0.0;
    for &ai in a {
        for &bj in b {
            let lo = (ai + bj).saturating_sub(n).max(1);
            let hi = ai.min(bj);
            for nij in lo..=hi {
                let nijf = nij as f64;
                let term = nijf / nf * (nf * nijf / (ai as f64 * bj as f64)).ln();
                let log_p = lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj]
                    - lf[n]
                    - lf[nij]
                    - lf[ai - nij]
                    - lf[bj - nij]
                    - lf[n + nij - ai - bj];
                emi += term * log_p.exp();
            }
        }
    }
    emi
}

/// `(MI - E[MI]) / (mean(H_a, H_b) - E[MI])`. Identical partitions (up to
/// renaming), including two single-cluster partitions, give exactly 1.
pub fn ami(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(EarError::dim(labels_a.len(), labels_b.len()));
    }
    let n = labels_a.len();
    if n < 2 {
        return Err(EarError::Argument("AMI needs at least two samples".into()));
    }
    let (a, ka) = canonical(labels_a);
    let (b, kb) = canonical(labels_b);
    if a == b {
        return Ok(1.0);
    }

    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(&b) {
        table[x][y] += 1;
    }
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let nf = n as f64;

    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nijf = nij as f64;
                mi += nijf / nf * (nf * nijf / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    let emi = expected_mutual_info(&rows, &cols, n);
    let normalizer = 0.5 * (entropy(&rows, nf) + entropy(&cols, nf));
    let mut denom = normalizer - emi;
    // keep the sign of a vanishing denominator
    denom = if denom < 0.0 {
        denom.min(-f64::EPSILON)
    } else {
        denom.max(f64::EPSILON)
    };
    Ok((mi - emi) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn identical_partitions() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(ami(&a, &a).unwrap(), 1.0);
        assert_eq!(ami(&[3; 5], &[7; 5]).unwrap(), 1.0);
    }

    #[test]
    fn renaming_is_exact() {
        let mut r = rng::seeded(1);
        let a: Vec<usize> = (0..300).map(|_| r.random_range(0..4)).collect();
        let b: Vec<usize> = (0..300).map(|_| r.random_range(0..5)).collect();
        let perm = [9, 2, 7, 0, 5];
        let b2: Vec<usize> = b.iter().map(|&x| perm[x]).collect();
        let a2: Vec<usize> = a.iter().map(|&x| 100 - x).collect();
        let base = ami(&a, &b).unwrap();
        assert_eq!(ami(&a, &b2).unwrap(), base);
        assert_eq!(ami(&a2, &b).unwrap(), base);
        assert!((ami(&b, &a).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn known_value() {
        // scikit-learn adjusted_mutual_info_score([0,0,1,1],[0,0,1,2])
        let v = ami(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap();
        assert!((v - 0.5714285714285715).abs() < 1e-9, "{v}");
        let v = ami(&[0, 1, 2, 0, 1, 2, 0, 1], &[0, 0, 0, 1, 1, 1, 2, 2]).unwrap();
        assert!((v + 0.42118593138269605).abs() < 1e-9, "{v}");
        let v = ami(&[0, 0, 0, 1, 1, 1, 2, 2, 2, 3], &[0, 0, 1, 1, 2, 2, 0, 1, 2, 3]).unwrap();
        assert!((v - 0.04586180798203356).abs() < 1e-9, "{v}");
    }

    #[test]
    fn independent_partitions_near_zero() {
        for seed in 0..5 {
            let mut r = rng::seeded(seed);
            let a: Vec<usize> = (0..1000).map(|_| r.random_range(0..4)).collect();
            let b: Vec<usize> = (0..1000).map(|_| r.random_range(0..4)).collect();
            assert!(ami(&a, &b).unwrap().abs() <= 0.05);
        }
    }

    #[test]
    fn bad_lengths() {
        assert!(matches!(ami(&[0, 1], &[0]), Err(EarError::Dimension { .. })));
        assert!(ami(&[0], &[0]).is_err());
    }
}
