//! Exact H-polyhedra over the rationals: affine forms, halfspaces,
//! Fourier–Motzkin projection and LP-based redundancy removal.

use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::rational::{self, Rational};
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use std::fmt;

/// `coeffs . x + constant`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Affine {
    pub coeffs: Vec<Rational>,
    pub constant: Rational,
}

impl Affine {
    pub fn zero(k: usize) -> Self {
        Affine { coeffs: vec![Rational::zero(); k], constant: Rational::zero() }
    }

    pub fn constant(c: Rational, k: usize) -> Self {
        Affine { coeffs: vec![Rational::zero(); k], constant: c }
    }

    pub fn var(j: usize, k: usize) -> Self {
        let mut a = Affine::zero(k);
        a.coeffs[j] = Rational::one();
        a
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.constant.is_zero() && self.is_constant()
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().all(Zero::is_zero)
    }

    pub fn add(&self, other: &Affine) -> Affine {
        Affine {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
            constant: &self.constant + &other.constant,
        }
    }

    pub fn sub(&self, other: &Affine) -> Affine {
        self.add(&other.scale(&-Rational::one()))
    }

    pub fn scale(&self, s: &Rational) -> Affine {
        Affine { coeffs: self.coeffs.iter().map(|a| a * s).collect(), constant: &self.constant * s }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: &Rational, other: &Affine) -> Affine {
        self.add(&other.scale(s))
    }

    pub fn eval(&self, x: &[Rational]) -> Rational {
        self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<Rational>() + &self.constant
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, b)| rational::to_f64(a) * b).sum::<f64>() + rational::to_f64(&self.constant)
    }

    /// Substitutes `x_j = forms[j]`, producing a form over the variables of `forms`.
    pub fn compose(&self, forms: &[Affine], k: usize) -> Affine {
        let mut out = Affine::constant(self.constant.clone(), k);
        for (c, f) in self.coeffs.iter().zip(forms) {
            if !c.is_zero() {
                out = out.add_scaled(c, f);
            }
        }
        out
    }

    pub fn display(&self, names: &[String]) -> String {
        let mut s = String::new();
        for (c, n) in self.coeffs.iter().zip(names) {
            if c.is_zero() {
                continue;
            }
            push_term(&mut s, c, n);
        }
        if !self.constant.is_zero() || s.is_empty() {
            if s.is_empty() {
                s = rational::fmt(&self.constant);
            } else if self.constant.is_negative() {
                s += &format!(" - {}", rational::fmt(&-self.constant.clone()));
            } else {
                s += &format!(" + {}", rational::fmt(&self.constant));
            }
        }
        s
    }
}

fn push_term(s: &mut String, c: &Rational, name: &str) {
    let mag = c.abs();
    let body = if mag.is_one() { name.to_string() } else { format!("{} {name}", rational::fmt(&mag)) };
    if s.is_empty() {
        if c.is_negative() {
            s.push('-');
        }
        s.push_str(&body);
    } else {
        s.push_str(if c.is_negative() { " - " } else { " + " });
        s.push_str(&body);
    }
}

/// `coeffs . x <= rhs`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Halfspace {
    pub coeffs: Vec<Rational>,
    pub rhs: Rational,
}

impl Halfspace {
    /// `lhs <= rhs` for affine sides.
    pub fn le(lhs: &Affine, rhs: &Affine) -> Halfspace {
        let d = lhs.sub(rhs);
        Halfspace { coeffs: d.coeffs, rhs: -d.constant }
    }

    pub fn ge(lhs: &Affine, rhs: &Affine) -> Halfspace {
        Halfspace::le(rhs, lhs)
    }

    pub fn is_trivial(&self) -> bool {
        self.coeffs.iter().all(Zero::is_zero)
    }

    pub fn satisfied_by(&self, x: &[Rational]) -> bool {
        self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<Rational>() <= self.rhs
    }

    pub fn slack(&self, x: &[Rational]) -> Rational {
        &self.rhs - self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<Rational>()
    }

    /// Positive rescaling making the first nonzero coefficient `+1` or `-1`.
    pub fn canonical(&self) -> Halfspace {
        match self.coeffs.iter().find(|c| !c.is_zero()) {
            None => Halfspace {
                coeffs: self.coeffs.clone(),
                rhs: if self.rhs.is_zero() { Rational::zero() } else { self.rhs.signum() },
            },
            Some(c) => {
                let s = c.abs().recip();
                Halfspace { coeffs: self.coeffs.iter().map(|a| a * &s).collect(), rhs: &self.rhs * &s }
            }
        }
    }

    pub fn display(&self, names: &[String]) -> String {
        let lhs = Affine { coeffs: self.coeffs.clone(), constant: Rational::zero() };
        format!("{} <= {}", lhs.display(names), rational::fmt(&self.rhs))
    }
}

#[derive(Serialize)]
pub struct HalfspaceJson {
    pub coeffs: Vec<String>,
    pub rhs: String,
}

impl From<&Halfspace> for HalfspaceJson {
    fn from(h: &Halfspace) -> Self {
        HalfspaceJson { coeffs: h.coeffs.iter().map(rational::fmt).collect(), rhs: rational::fmt(&h.rhs) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polyhedron {
    pub dim: usize,
    pub rows: Vec<Halfspace>,
}

impl Polyhedron {
    pub fn new(dim: usize, rows: Vec<Halfspace>) -> Self {
        debug_assert!(rows.iter().all(|h| h.coeffs.len() == dim));
        Polyhedron { dim, rows }
    }

    pub fn universe(dim: usize) -> Self {
        Polyhedron { dim, rows: Vec::new() }
    }

    pub fn push(&mut self, h: Halfspace) {
        debug_assert_eq!(h.coeffs.len(), self.dim);
        self.rows.push(h);
    }

    pub fn intersect(&self, other: &Polyhedron) -> Polyhedron {
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Polyhedron { dim: self.dim, rows }
    }

    pub fn contains(&self, x: &[Rational]) -> bool {
        self.rows.iter().all(|h| h.satisfied_by(x))
    }

    /// Strictly inside every nontrivial halfspace.
    pub fn contains_strictly(&self, x: &[Rational]) -> bool {
        self.rows.iter().filter(|h| !h.is_trivial()).all(|h| h.slack(x).is_positive())
    }

    fn lp(&self, skip: Option<usize>) -> LinearProgram {
        let mut lp = LinearProgram::new(self.dim);
        lp.all_free();
        for (i, h) in self.rows.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            lp.add(h.coeffs.clone(), Cmp::Le, h.rhs.clone());
        }
        lp
    }

    /// Supremum of `c . x`; `Ok(None)` when unbounded.
    pub fn maximize(&self, c: &[Rational]) -> Result<Option<Rational>, Empty> {
        let mut lp = self.lp(None);
        lp.maximize(c.to_vec());
        match lp.solve() {
            LpOutcome::Optimal { value, .. } => Ok(Some(value)),
            LpOutcome::Unbounded => Ok(None),
            LpOutcome::Infeasible => Err(Empty),
        }
    }

    pub fn is_empty(&self) -> bool {
        let mut lp = self.lp(None);
        lp.maximize(vec![Rational::zero(); self.dim]);
        matches!(lp.solve(), LpOutcome::Infeasible)
    }

    /// Some point of the polyhedron, if it is nonempty.
    pub fn point(&self) -> Option<Vec<Rational>> {
        let mut lp = self.lp(None);
        lp.maximize(vec![Rational::zero(); self.dim]);
        match lp.solve() {
            LpOutcome::Optimal { x, .. } => Some(x),
            _ => None,
        }
    }

    /// A point at which every nontrivial inequality is strict, if one exists.
    pub fn interior_point(&self) -> Option<Vec<Rational>> {
        let mut lp = LinearProgram::new(self.dim + 1);
        lp.all_free();
        for h in &self.rows {
            if h.is_trivial() {
                if h.rhs.is_negative() {
                    return None;
                }
                continue;
            }
            let h = h.canonical();
            let mut row = h.coeffs.clone();
            row.push(Rational::one());
            lp.add(row, Cmp::Le, h.rhs.clone());
        }
        let mut cap = vec![Rational::zero(); self.dim + 1];
        cap[self.dim] = Rational::one();
        lp.add(cap.clone(), Cmp::Le, Rational::one());
        lp.maximize(cap);
        match lp.solve() {
            LpOutcome::Optimal { x, value } if value.is_positive() => Some(x[..self.dim].to_vec()),
            _ => None,
        }
    }

    pub fn is_full_dimensional(&self) -> bool {
        self.interior_point().is_some()
    }

    /// Drops trivial rows, duplicates up to scaling, and every row implied
    /// by the remaining ones.
    pub fn remove_redundant(&self) -> Polyhedron {
        let mut rows: Vec<Halfspace> = Vec::new();
        for h in &self.rows {
            if h.is_trivial() && !h.rhs.is_negative() {
                continue;
            }
            let c = h.canonical();
            if !rows.contains(&c) {
                rows.push(c);
            }
        }
        let mut p = Polyhedron { dim: self.dim, rows };
        let mut i = 0;
        while i < p.rows.len() {
            let mut lp = p.lp(Some(i));
            lp.maximize(p.rows[i].coeffs.clone());
            let redundant = match lp.solve() {
                LpOutcome::Optimal { value, .. } => value <= p.rows[i].rhs,
                LpOutcome::Infeasible => true,
                LpOutcome::Unbounded => false,
            };
            if redundant {
                p.rows.remove(i);
            } else {
                i += 1;
            }
        }
        p
    }

    /// Canonical rows, sorted and deduplicated.
    pub fn canonicalize(&self) -> Polyhedron {
        let mut rows: Vec<Halfspace> = self.rows.iter().map(Halfspace::canonical).collect();
        rows.sort();
        rows.dedup();
        Polyhedron { dim: self.dim, rows }
    }

    /// Minimal canonical description; equal sets of full dimension get equal
    /// descriptions.
    pub fn normalized(&self) -> Polyhedron {
        self.remove_redundant().canonicalize()
    }

    pub fn subset_of(&self, other: &Polyhedron) -> bool {
        other.rows.iter().all(|h| match self.maximize(&h.coeffs) {
            Ok(Some(v)) => v <= h.rhs,
            Ok(None) => false,
            Err(Empty) => true,
        })
    }

    pub fn same_set(&self, other: &Polyhedron) -> bool {
        self.subset_of(other) && other.subset_of(self)
    }

    /// Projection eliminating variable `j`, which is removed from the
    /// coordinates.
    pub fn eliminate(&self, j: usize) -> Polyhedron {
        let (mut pos, mut neg, mut keep) = (Vec::new(), Vec::new(), Vec::new());
        for h in &self.rows {
            let c = &h.coeffs[j];
            if c.is_positive() {
                pos.push(h);
            } else if c.is_negative() {
                neg.push(h);
            } else {
                keep.push(drop_coord(h, j));
            }
        }
        for p in &pos {
            for n in &neg {
                let a = p.coeffs[j].clone();
                let b = -n.coeffs[j].clone();
                let coeffs: Vec<Rational> = p.coeffs.iter().zip(&n.coeffs).map(|(x, y)| x * &b + y * &a).collect();
                let h = Halfspace { coeffs, rhs: &p.rhs * &b + &n.rhs * &a };
                keep.push(drop_coord(&h, j));
            }
        }
        Polyhedron { dim: self.dim - 1, rows: keep }
    }

    /// Projects onto the first `keep` coordinates.
    pub fn project(&self, keep: usize) -> Polyhedron {
        let mut p = self.remove_redundant();
        while p.dim > keep {
            let j = p.dim - 1;
            p = p.eliminate(j).remove_redundant();
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Empty;

fn drop_coord(h: &Halfspace, j: usize) -> Halfspace {
    let mut coeffs = h.coeffs.clone();
    coeffs.remove(j);
    Halfspace { coeffs, rhs: h.rhs.clone() }
}

impl fmt::Display for Polyhedron {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        for h in &self.rows {
            writeln!(f, "{}", h.display(&names))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    fn hs(c: &[i64], r: i64) -> Halfspace {
        Halfspace { coeffs: c.iter().map(|&x| int(x)).collect(), rhs: int(r) }
    }

    #[test]
    fn unit_square_is_full_dimensional() {
        let p = Polyhedron::new(2, vec![hs(&[1, 0], 1), hs(&[-1, 0], 0), hs(&[0, 1], 1), hs(&[0, -1], 0)]);
        let x = p.interior_point().unwrap();
        assert!(p.contains_strictly(&x));
    }

    #[test]
    fn segment_is_not_full_dimensional() {
        let p = Polyhedron::new(2, vec![hs(&[1, -1], 0), hs(&[-1, 1], 0), hs(&[1, 0], 1), hs(&[-1, 0], 0)]);
        assert!(!p.is_empty());
        assert!(!p.is_full_dimensional());
    }

    #[test]
    fn redundant_rows_are_dropped() {
        let p = Polyhedron::new(1, vec![hs(&[2], 2), hs(&[1], 5), hs(&[-1], 0), hs(&[-3], 0)]);
        let q = p.normalized();
        assert_eq!(q.rows, vec![hs(&[-1], 0), hs(&[1], 1)]);
    }

    #[test]
    fn fourier_motzkin_projects_triangle() {
        // 0 <= y <= x <= 1 projected on x.
        let p = Polyhedron::new(2, vec![hs(&[0, -1], 0), hs(&[-1, 1], 0), hs(&[1, 0], 1)]);
        let q = p.project(1).normalized();
        assert_eq!(q.rows, vec![hs(&[-1], 0), hs(&[1], 1)]);
    }

    #[test]
    fn set_equality_ignores_scaling() {
        let a = Polyhedron::new(1, vec![hs(&[3], 3), hs(&[-1], 0)]);
        let b = Polyhedron::new(1, vec![hs(&[1], 1), hs(&[-2], 0), hs(&[1], 7)]);
        assert!(a.same_set(&b));
        assert_eq!(a.normalized(), b.normalized());
    }

    #[test]
    fn affine_display() {
        let names = vec!["NA".to_string(), "NP".to_string()];
        let f = Affine { coeffs: vec![ratio(1, 3), int(-1)], constant: int(2) };
        assert_eq!(f.display(&names), "1/3 NA - NP + 2");
        assert_eq!(Affine::zero(2).display(&names), "0");
    }
}
