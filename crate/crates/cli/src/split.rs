//! Seeded row partitioning into train / development / test sets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{CliError, Result};

/// Disjoint, exhaustive, seeded partition of `0..n` by row. Chunk sizes are
/// the rounded ratios, with the test set absorbing the remainder.
pub fn split_rows(
    n: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(CliError::Usage(format!(
            "split ratios must be nonnegative and sum to 1, got {a}/{b}/{c}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * a).round() as usize;
    let n_dev = (((n as f64) * b).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut dev: Vec<usize> = order[n_train..n_train + n_dev].to_vec();
    let mut test: Vec<usize> = order[n_train + n_dev..].to_vec();
    train.sort_unstable();
    dev.sort_unstable();
    test.sort_unstable();
    Ok((train, dev, test))
}

/// Parse "0.8,0.1,0.1" style ratio flags.
pub fn parse_ratios(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "expected three comma-separated ratios, got '{text}'"
        )));
    }
    let mut vals = [0.0f64; 3];
    for (k, p) in parts.iter().enumerate() {
        vals[k] = p
            .parse()
            .map_err(|_| CliError::Usage(format!("bad ratio '{p}'")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_rows_split_eight_one_one() {
        let (train, dev, test) = split_rows(10, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(dev.len(), 1);
        assert_eq!(test.len(), 1);
    }

    #[test]
    fn deterministic_and_exhaustive() {
        let a = split_rows(101, (0.8, 0.1, 0.1), 7).unwrap();
        let b = split_rows(101, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.0.iter().chain(&a.1).chain(&a.2).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
        // a different seed shuffles differently
        let c = split_rows(101, (0.8, 0.1, 0.1), 8).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn ratio_validation() {
        assert!(split_rows(10, (0.5, 0.2, 0.2), 0).is_err());
        assert!(split_rows(10, (-0.1, 0.6, 0.5), 0).is_err());
        assert!(parse_ratios("0.8,0.1,0.1").is_ok());
        assert!(parse_ratios("0.8,0.2").is_err());
    }

    #[test]
    fn degenerate_all_train() {
        let (train, dev, test) = split_rows(5, (1.0, 0.0, 0.0), 0).unwrap();
        assert_eq!(train.len(), 5);
        assert!(dev.is_empty() && test.is_empty());
    }
}
