//! Sparse affine expressions over the decision vector.

/// A sparse linear row `Σ coef·x[idx]` together with a right-hand side.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub coefs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl SparseRow {
    pub fn new(coefs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coefs, rhs }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coefs.iter().map(|&(i, c)| c * x[i]).sum()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.coefs.iter().map(|&(i, _)| i).max()
    }
}

/// Scalar affine function `constant + Σ coef·x[idx]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub coefs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self {
            coefs: Vec::new(),
            constant: c,
        }
    }

    /// The single variable `x[idx]`.
    pub fn var(idx: usize) -> Self {
        Self {
            coefs: vec![(idx, 1.0)],
            constant: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coefs.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coefs: self.coefs.iter().map(|&(i, c)| (i, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    pub fn add_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// `self + s·other`, merging duplicate indices.
    pub fn axpy(&self, s: f64, other: &Affine) -> Self {
        let mut coefs = self.coefs.clone();
        for &(i, c) in &other.coefs {
            match coefs.iter_mut().find(|(j, _)| *j == i) {
                Some(entry) => entry.1 += s * c,
                None => coefs.push((i, s * c)),
            }
        }
        coefs.retain(|&(_, c)| c != 0.0);
        coefs.sort_by_key(|&(i, _)| i);
        Self {
            coefs,
            constant: self.constant + s * other.constant,
        }
    }

    pub fn max_index(&self) -> Option<usize> {
        self.coefs.iter().map(|&(i, _)| i).max()
    }

    pub fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.coefs.iter().all(|&(_, c)| c.is_finite())
    }
}
