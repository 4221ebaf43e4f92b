use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 when `n == 1`.
    pub std: f64,
    pub n: usize,
    /// Set when only one value was available, so `std` carries no information.
    pub single_seed: bool,
}

pub fn aggregate_seeds(values: &[f64]) -> Result<Aggregate> {
    let n = values.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot aggregate zero seeds".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    Ok(Aggregate {
        mean,
        std,
        n,
        single_seed: n == 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_values() {
        let a = aggregate_seeds(&[80.0, 80.0, 80.0]).unwrap();
        assert_eq!((a.mean, a.std), (80.0, 0.0));
    }

    #[test]
    fn two_values_hand_arithmetic() {
        let a = aggregate_seeds(&[70.0, 90.0]).unwrap();
        assert_eq!(a.mean, 80.0);
        assert!((a.std - 200f64.sqrt()).abs() < 1e-12);
        assert!((a.std - 14.142135623730951).abs() < 1e-12);
    }

    #[test]
    fn single_seed_is_flagged() {
        let a = aggregate_seeds(&[0.3]).unwrap();
        assert!(a.single_seed);
        assert_eq!(a.std, 0.0);
        assert!(aggregate_seeds(&[]).is_err());
    }

    #[test]
    fn matches_welford_oracle() {
        let mut rng = crate::rng::RngStream::new(5, "agg");
        let xs: Vec<f64> = (0..5).map(|_| rng.normal(0.7, 0.1)).collect();
        // Welford's online update, an independent formulation.
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        for (k, &x) in xs.iter().enumerate() {
            let d = x - mean;
            mean += d / (k + 1) as f64;
            m2 += d * (x - mean);
        }
        let a = aggregate_seeds(&xs).unwrap();
        assert!((a.mean - mean).abs() < 1e-14);
        assert!((a.std - (m2 / 4.0).sqrt()).abs() < 1e-14);
    }
}
