//! Truncation rectangles and moment orders.

use crate::error::{Error, Result};

/// Default cap on the total order of a product-moment request.
pub const DEFAULT_MAX_ORDER: u32 = 8;

/// Hyper-rectangle `{ y : lower <= y <= upper }` with extended-real limits.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TruncationBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        for (i, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if a.is_nan() || b.is_nan() {
                return Err(Error::invalid(format!("box limit {i} is NaN")));
            }
            if a > b {
                return Err(Error::invalid(format!(
                    "box coordinate {i}: lower {a} exceeds upper {b}"
                )));
            }
            if a == f64::INFINITY || b == f64::NEG_INFINITY {
                return Err(Error::invalid(format!(
                    "box coordinate {i}: empty interval [{a}, {b}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The whole space `(-inf, inf)^dim`.
    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    /// `[lower, inf)` in every coordinate.
    pub fn lower_orthant(lower: Vec<f64>) -> Result<Self> {
        let n = lower.len();
        Self::new(lower, vec![f64::INFINITY; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_doubly_infinite(&self, i: usize) -> bool {
        self.lower[i] == f64::NEG_INFINITY && self.upper[i] == f64::INFINITY
    }

    /// Both limits finite.
    pub fn is_bounded(&self, i: usize) -> bool {
        self.lower[i].is_finite() && self.upper[i].is_finite()
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.lower[i] == self.upper[i]
    }

    pub fn is_everywhere_unbounded(&self) -> bool {
        (0..self.dim()).all(|i| self.is_doubly_infinite(i))
    }

    /// Number of coordinates whose two limits are both finite.
    pub fn count_bounded(&self) -> usize {
        (0..self.dim()).filter(|&i| self.is_bounded(i)).count()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            lower: idx.iter().map(|&i| self.lower[i]).collect(),
            upper: idx.iter().map(|&i| self.upper[i]).collect(),
        }
    }

    /// Concatenates `self` (first) with `other`.
    pub fn concat(&self, other: &TruncationBox) -> Self {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        Self { lower, upper }
    }

    /// Box of `x - shift`.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        Self {
            lower: self.lower.iter().zip(shift).map(|(a, s)| a - s).collect(),
            upper: self.upper.iter().zip(shift).map(|(b, s)| b - s).collect(),
        }
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&a, &b))| v >= a - slack && v <= b + slack)
    }

    /// Whether `self` contains `other` as a set.
    pub fn encloses(&self, other: &TruncationBox) -> bool {
        self.lower
            .iter()
            .zip(&other.lower)
            .all(|(a, c)| a <= c)
            && self.upper.iter().zip(&other.upper).all(|(b, d)| b >= d)
    }
}

/// Exponent vector `k` of a product moment `E[y_1^k_1 ... y_p^k_p]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MomentOrder(Vec<u32>);

impl MomentOrder {
    pub fn new(k: Vec<u32>) -> Self {
        Self(k)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    /// `e_i`.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut k = vec![0; dim];
        k[i] = 1;
        Self(k)
    }

    /// `e_i + e_j`.
    pub fn pair(dim: usize, i: usize, j: usize) -> Self {
        let mut k = vec![0; dim];
        k[i] += 1;
        k[j] += 1;
        Self(k)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Fails when the order exceeds `max_total`.
    pub fn check(&self, dim: usize, max_total: u32) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.dim(),
            });
        }
        if self.total() > max_total {
            return Err(Error::invalid(format!(
                "moment order {} exceeds the configured limit {max_total}",
                self.total()
            )));
        }
        Ok(())
    }

    /// `(0_q, k)`.
    pub fn padded_front(&self, q: usize) -> Self {
        let mut k = vec![0; q];
        k.extend_from_slice(&self.0);
        Self(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inverted_and_empty_limits() {
        assert!(TruncationBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(TruncationBox::new(vec![f64::INFINITY], vec![f64::INFINITY]).is_err());
        assert!(TruncationBox::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn classifies_coordinates() {
        let b = TruncationBox::new(
            vec![f64::NEG_INFINITY, 0.0, 1.0],
            vec![f64::INFINITY, f64::INFINITY, 1.0],
        )
        .unwrap();
        assert!(b.is_doubly_infinite(0));
        assert!(!b.is_bounded(1));
        assert!(b.is_degenerate(2));
        assert_eq!(b.count_bounded(), 1);
    }

    #[test]
    fn order_cap() {
        let k = MomentOrder::new(vec![5, 4]);
        assert!(k.check(2, DEFAULT_MAX_ORDER).is_err());
        assert!(MomentOrder::pair(2, 0, 1).check(2, DEFAULT_MAX_ORDER).is_ok());
    }
}
