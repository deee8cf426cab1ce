//! Entropy-based specialisation measures.
//!
//! With `h̃ᵢ = |hᵢ|/Σ|hⱼ|` and `Q̃ᵢᵢ = Qᵢᵢ/ΣQⱼⱼ`:
//!
//! * `H_h = −Σ h̃ᵢ·log h̃ᵢ`
//! * `H_Q = −Σ Q̃ᵢᵢ·log Q̃ᵢᵢ`
//! * `H_m = −Σ Q̃ᵢᵢ·h̃ᵢ·log(Q̃ᵢᵢ·h̃ᵢ)`
//!
//! The weights `Q̃ᵢᵢ·h̃ᵢ` of `H_m` do not sum to one and are used as is.
//! Low entropy means one unit carries the function (specialised).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    #[serde(rename = "H_h")]
    pub h_h: f64,
    #[serde(rename = "H_Q")]
    pub h_q: f64,
    #[serde(rename = "H_m")]
    pub h_m: f64,
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

pub fn entropy_measures(q: &DMatrix<f64>, h: &DVector<f64>) -> Result<EntropyReport> {
    if q.nrows() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: q.nrows(),
            got: h.len(),
        });
    }
    let hsum: f64 = h.iter().map(|v| v.abs()).sum();
    if !(hsum > 0.0) {
        return Err(Error::AllZero { what: "readout" });
    }
    let qd: Vec<f64> = q.diagonal().iter().map(|v| v.max(0.0)).collect();
    let qsum: f64 = qd.iter().sum();
    if !(qsum > 0.0) {
        return Err(Error::AllZero {
            what: "overlap diagonal",
        });
    }
    let ht: Vec<f64> = h.iter().map(|v| v.abs() / hsum).collect();
    let qt: Vec<f64> = qd.iter().map(|v| v / qsum).collect();
    Ok(EntropyReport {
        h_h: -ht.iter().map(|&v| xlogx(v)).sum::<f64>(),
        h_q: -qt.iter().map(|&v| xlogx(v)).sum::<f64>(),
        h_m: -qt.iter().zip(&ht).map(|(&a, &b)| xlogx(a * b)).sum::<f64>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_and_uniform_readouts() {
        let q = DMatrix::identity(2, 2);
        let r = entropy_measures(&q, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(r.h_h, 0.0);
        let r = entropy_measures(&q, &DVector::from_vec(vec![0.3, -0.3])).unwrap();
        assert!((r.h_h - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn overlap_entropy_value() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.7]));
        let r = entropy_measures(&q, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((r.h_q - 0.610_864_302_054_893_7).abs() < 1e-12);
    }

    #[test]
    fn zero_inputs_rejected() {
        let q = DMatrix::identity(2, 2);
        assert!(entropy_measures(&q, &DVector::zeros(2)).is_err());
        assert!(
            entropy_measures(&DMatrix::zeros(2, 2), &DVector::from_vec(vec![1.0, 0.0])).is_err()
        );
    }
}
