//! Class structure, invariant measures, hitting probabilities and the
//! spectral projector of finite Markov chains.
//!
//! Everything is generic over [`Field`]: exact [`Rational`] by default, `f64`
//! as a fallback for larger chains.

use crate::graph;
use crate::linalg::{self, Field, Matrix};
use crate::rational::Rational;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarkovError {
    #[error("matrix is not square")]
    NotSquare,
    #[error("row {row} has a negative entry")]
    Negative { row: usize },
    #[error("row {row} does not sum to one")]
    RowSum { row: usize },
    #[error("singular restricted system while solving {what}")]
    Singular { what: &'static str },
}

/// Row-stochastic matrix; rows sum to one exactly for rationals and within
/// `1e-12` for floats.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix<T: Field = Rational> {
    p: Matrix<T>,
}

impl<T: Field> StochasticMatrix<T> {
    pub fn new(p: Matrix<T>) -> Result<Self, MarkovError> {
        let n = p.len();
        for (i, row) in p.iter().enumerate() {
            if row.len() != n {
                return Err(MarkovError::NotSquare);
            }
            if row.iter().any(|x| !x.negligible() && x.to_f64() < 0.0) {
                return Err(MarkovError::Negative { row: i });
            }
            let s = row.iter().fold(T::zero(), |a, x| a + x.clone());
            if !(s - T::one()).negligible() {
                return Err(MarkovError::RowSum { row: i });
            }
        }
        Ok(StochasticMatrix { p })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn rows(&self) -> &Matrix<T> {
        &self.p
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.p[i][j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStructure<T: Field = Rational> {
    /// Strongly connected components, sorted by least state.
    pub classes: Vec<Vec<usize>>,
    /// Indices into `classes` of the final (closed) classes.
    pub final_classes: Vec<usize>,
    pub transient: Vec<usize>,
    /// Invariant measure of each final class, as a full-length row vector.
    pub mu: Vec<Vec<T>>,
    /// `phi[f][i]`: probability of ending in final class `f` from state `i`.
    pub phi: Vec<Vec<T>>,
}

impl<T: Field> ChainStructure<T> {
    pub fn final_class(&self, f: usize) -> &[usize] {
        &self.classes[self.final_classes[f]]
    }

    /// Final class containing state `i`, if it is recurrent.
    pub fn final_class_of(&self, i: usize) -> Option<usize> {
        (0..self.final_classes.len()).find(|&f| self.final_class(f).contains(&i))
    }
}

#[derive(Serialize)]
struct StructureDump {
    classes: Vec<Vec<usize>>,
    final_classes: Vec<Vec<usize>>,
    transient: Vec<usize>,
    mu: Vec<Vec<String>>,
    phi: Vec<Vec<String>>,
}

impl ChainStructure<Rational> {
    /// Debug dump as JSON with rational strings.
    pub fn to_json(&self) -> String {
        let fmt_rows = |m: &Vec<Vec<Rational>>| {
            m.iter().map(|r| r.iter().map(crate::rational::fmt).collect()).collect()
        };
        let dump = StructureDump {
            classes: self.classes.clone(),
            final_classes: (0..self.final_classes.len()).map(|f| self.final_class(f).to_vec()).collect(),
            transient: self.transient.clone(),
            mu: fmt_rows(&self.mu),
            phi: fmt_rows(&self.phi),
        };
        serde_json::to_string_pretty(&dump).expect("serializable")
    }
}

pub fn classify<T: Field>(pm: &StochasticMatrix<T>) -> Result<ChainStructure<T>, MarkovError> {
    let p = &pm.p;
    let n = p.len();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| !p[i][j].negligible()).collect())
        .collect();
    let classes = graph::sccs(&adj);
    let mut class_of = vec![0; n];
    for (c, members) in classes.iter().enumerate() {
        for &i in members {
            class_of[i] = c;
        }
    }
    let final_classes: Vec<usize> = (0..classes.len())
        .filter(|&c| classes[c].iter().all(|&i| adj[i].iter().all(|&j| class_of[j] == c)))
        .collect();
    let mut recurrent = vec![false; n];
    for &c in &final_classes {
        for &i in &classes[c] {
            recurrent[i] = true;
        }
    }
    let transient: Vec<usize> = (0..n).filter(|&i| !recurrent[i]).collect();

    let mut mu = Vec::with_capacity(final_classes.len());
    for &c in &final_classes {
        let f = &classes[c];
        let k = f.len();
        // Unknowns mu_j, j in F: sum_i mu_i (P_ij - d_ij) = 0, with the last
        // balance equation replaced by normalization.
        let mut a: Matrix<T> = vec![vec![T::zero(); k]; k];
        let mut b = vec![T::zero(); k];
        for (row, &j) in f.iter().enumerate().take(k - 1) {
            for (col, &i) in f.iter().enumerate() {
                let mut v = p[i][j].clone();
                if i == j {
                    v = v - T::one();
                }
                a[row][col] = v;
            }
        }
        for col in 0..k {
            a[k - 1][col] = T::one();
        }
        b[k - 1] = T::one();
        let sol = linalg::solve(&a, &b).ok_or(MarkovError::Singular { what: "invariant measure" })?;
        let mut full = vec![T::zero(); n];
        for (idx, &j) in f.iter().enumerate() {
            full[j] = sol[idx].clone();
        }
        mu.push(full);
    }

    // (I - P_TT) phi_T = P_TF 1 for every final class at once.
    let t = transient.len();
    let mut phi = vec![vec![T::zero(); n]; final_classes.len()];
    for (fi, &c) in final_classes.iter().enumerate() {
        for &i in &classes[c] {
            phi[fi][i] = T::one();
        }
    }
    if t > 0 && !final_classes.is_empty() {
        let mut a: Matrix<T> = vec![vec![T::zero(); t]; t];
        for (r, &i) in transient.iter().enumerate() {
            for (s, &j) in transient.iter().enumerate() {
                a[r][s] = if i == j { T::one() - p[i][j].clone() } else { -p[i][j].clone() };
            }
        }
        let rhs: Vec<Vec<T>> = final_classes
            .iter()
            .map(|&c| {
                transient
                    .iter()
                    .map(|&i| classes[c].iter().fold(T::zero(), |acc, &j| acc + p[i][j].clone()))
                    .collect()
            })
            .collect();
        let sols =
            linalg::solve_multi(&a, &rhs).ok_or(MarkovError::Singular { what: "hitting probabilities" })?;
        for (fi, sol) in sols.into_iter().enumerate() {
            for (r, &i) in transient.iter().enumerate() {
                phi[fi][i] = sol[r].clone();
            }
        }
    }
    Ok(ChainStructure { classes, final_classes, transient, mu, phi })
}

/// Cesàro limit of the powers of `P`, assembled as `P*_ij = phi_{F,i} mu_F(j)`.
pub fn spectral_projector<T: Field>(pm: &StochasticMatrix<T>) -> Result<Matrix<T>, MarkovError> {
    let s = classify(pm)?;
    Ok(projector_from_structure(&s, pm.len()))
}

pub fn projector_from_structure<T: Field>(s: &ChainStructure<T>, n: usize) -> Matrix<T> {
    let mut out = vec![vec![T::zero(); n]; n];
    for f in 0..s.final_classes.len() {
        for i in 0..n {
            if s.phi[f][i].negligible() {
                continue;
            }
            for &j in s.final_class(f) {
                out[i][j] = out[i][j].clone() + s.phi[f][i].clone() * s.mu[f][j].clone();
            }
        }
    }
    out
}

/// Cesàro average `(1/(n+1)) sum_{j=0}^{n} P^j` by direct iteration in `f64`.
pub fn cesaro_average(p: &Matrix<f64>, n: usize) -> Matrix<f64> {
    let k = p.len();
    let mut power = linalg::identity::<f64>(k);
    let mut sum = power.clone();
    for _ in 0..n {
        power = linalg::mat_mul(&power, p);
        for i in 0..k {
            for j in 0..k {
                sum[i][j] += power[i][j];
            }
        }
    }
    let scale = 1.0 / (n as f64 + 1.0);
    sum.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect()
}
