//! Scalar texture features of a probability-normalized GLCM channel.
//!
//! Inputs are row-major `L x L` slices (see [`crate::glcm::GlcmImage::channel`]).
//! Every feature is a sum over all cells `(i, j)`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Allowed deviation of a probability matrix's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;

pub const FEATURE_NAMES: [&str; 5] = ["contrast", "homogeneity", "energy", "entropy", "correlation"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureVector {
    pub contrast: f64,
    pub homogeneity: f64,
    pub energy: f64,
    /// Natural-log entropy, with `0 ln 0 = 0`.
    pub entropy: f64,
    /// Pearson correlation of row and column levels; 1 when either marginal
    /// has zero variance.
    pub correlation: f64,
}

impl FeatureVector {
    /// Values in [`FEATURE_NAMES`] order.
    pub fn values(&self) -> [f64; 5] {
        [self.contrast, self.homogeneity, self.energy, self.entropy, self.correlation]
    }
}

fn side(p: &[f64]) -> Result<usize> {
    let l = (p.len() as f64).sqrt().round() as usize;
    if l * l != p.len() || l == 0 {
        return Err(Error::invalid("glcm channel", format!("{} cells is not a square matrix", p.len())));
    }
    Ok(l)
}

fn check_probabilities(p: &[f64]) -> Result<usize> {
    let l = side(p)?;
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid("glcm channel", format!("entry {v} is not a finite non-negative value")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Unnormalized { sum });
    }
    Ok(l)
}

fn weighted_sum(p: &[f64], kernel: impl Fn(f64) -> f64) -> Result<f64> {
    let l = check_probabilities(p)?;
    let mut acc = 0.0;
    for i in 0..l {
        let row = &p[i * l..(i + 1) * l];
        for (j, &v) in row.iter().enumerate() {
            let d = i as f64 - j as f64;
            acc += v * kernel(d * d);
        }
    }
    Ok(acc)
}

/// `sum P[i][j] (i - j)^2`
pub fn contrast(p: &[f64]) -> Result<f64> {
    weighted_sum(p, |d2| d2)
}

/// `sum P[i][j] / (1 + (i - j)^2)`
pub fn homogeneity(p: &[f64]) -> Result<f64> {
    weighted_sum(p, |d2| 1.0 / (1.0 + d2))
}

pub fn feature_vector(p: &[f64]) -> Result<FeatureVector> {
    let l = check_probabilities(p)?;
    let (mut contrast, mut homogeneity, mut energy, mut entropy) = (0.0, 0.0, 0.0, 0.0);
    let mut row_marginal = vec![0.0; l];
    let mut col_marginal = vec![0.0; l];
    for i in 0..l {
        for j in 0..l {
            let v = p[i * l + j];
            let d = i as f64 - j as f64;
            contrast += v * d * d;
            homogeneity += v / (1.0 + d * d);
            energy += v * v;
            if v > 0.0 {
                entropy -= v * v.ln();
            }
            row_marginal[i] += v;
            col_marginal[j] += v;
        }
    }
    let moments = |m: &[f64]| {
        let mean: f64 = m.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
        let var: f64 = m.iter().enumerate().map(|(k, v)| (k as f64 - mean).powi(2) * v).sum();
        (mean, var)
    };
    let (mu_i, var_i) = moments(&row_marginal);
    let (mu_j, var_j) = moments(&col_marginal);
    let correlation = if var_i <= f64::EPSILON || var_j <= f64::EPSILON {
        1.0
    } else {
        let mut cov = 0.0;
        for i in 0..l {
            for j in 0..l {
                cov += (i as f64 - mu_i) * (j as f64 - mu_j) * p[i * l + j];
            }
        }
        cov / (var_i * var_j).sqrt()
    };
    Ok(FeatureVector { contrast, homogeneity, energy, entropy, correlation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HALF_QUARTER: [f64; 4] = [0.5, 0.25, 0.25, 0.0];

    #[test]
    fn worked_examples() {
        assert_eq!(contrast(&HALF_QUARTER).unwrap(), 0.5);
        assert_eq!(homogeneity(&HALF_QUARTER).unwrap(), 0.75);
        assert_eq!(contrast(&[0.0, 1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(homogeneity(&[0.0, 1.0, 0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn diagonal_mass() {
        let mut p = vec![0.0; 9];
        p[0] = 0.2;
        p[4] = 0.3;
        p[8] = 0.5;
        assert_eq!(contrast(&p).unwrap(), 0.0);
        assert_eq!(homogeneity(&p).unwrap(), 1.0);
    }

    #[test]
    fn uniform_and_point_mass() {
        let l = 7;
        let uniform = vec![1.0 / (l * l) as f64; l * l];
        let f = feature_vector(&uniform).unwrap();
        assert!((f.entropy - 2.0 * (l as f64).ln()).abs() < 1e-12);
        assert!(f.correlation.abs() < 1e-12);

        let mut point = vec![0.0; l * l];
        point[3 * l + 5] = 1.0;
        let f = feature_vector(&point).unwrap();
        assert_eq!(f.energy, 1.0);
        assert_eq!(f.entropy, 0.0);
        assert_eq!(f.correlation, 1.0);
    }

    #[test]
    fn rejects_unnormalized_and_malformed() {
        assert!(matches!(contrast(&[0.5, 0.25, 0.25, 0.1]), Err(Error::Unnormalized { .. })));
        assert!(homogeneity(&[0.5, 0.5, 0.0]).is_err());
        assert!(feature_vector(&[1.5, -0.5, 0.0, 0.0]).is_err());
        assert!(contrast(&[1.0 + 5e-7, 0.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn feature_names_match_values_order() {
        let f = feature_vector(&HALF_QUARTER).unwrap();
        assert_eq!(f.values()[FEATURE_NAMES.iter().position(|&n| n == "homogeneity").unwrap()], 0.75);
    }

    fn arb_p() -> impl Strategy<Value = Vec<f64>> {
        (2usize..10).prop_flat_map(|l| proptest::collection::vec(0.0f64..1.0, l * l)).prop_filter_map("zero", |v| {
            let s: f64 = v.iter().sum();
            (s > 0.0).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    fn transposed(p: &[f64]) -> Vec<f64> {
        let l = side(p).unwrap();
        (0..l * l).map(|k| p[(k % l) * l + k / l]).collect()
    }

    proptest! {
        #[test]
        fn transpose_invariant(p in arb_p()) {
            let t = transposed(&p);
            prop_assert!((contrast(&p).unwrap() - contrast(&t).unwrap()).abs() < 1e-12);
            prop_assert!((homogeneity(&p).unwrap() - homogeneity(&t).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn bounds(p in arb_p()) {
            let f = feature_vector(&p).unwrap();
            prop_assert!(f.contrast >= 0.0);
            prop_assert!(f.homogeneity > 0.0 && f.homogeneity <= 1.0 + 1e-12);
            prop_assert!(f.energy > 0.0 && f.energy <= 1.0 + 1e-12);
            prop_assert!(f.entropy >= 0.0);
            prop_assert!(f.correlation.abs() <= 1.0 + 1e-9);
            prop_assert!((f.contrast - contrast(&p).unwrap()).abs() < 1e-12);
        }
    }
}
