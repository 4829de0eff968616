//! Exact linear programming: dense two-phase tableau simplex over rationals
//! with Bland's anti-cycling rule.

use crate::rational::{self, Rational};
use num_traits::{One, Signed, Zero};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<Rational>, value: Rational },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<(&[Rational], &Rational)> {
        match self {
            LpOutcome::Optimal { x, value } => Some((x, value)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<Rational>,
    cmp: Cmp,
    rhs: Rational,
}

/// `max` or `min` of `c·x` subject to linear rows. Variables are
/// nonnegative unless marked free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    objective: Vec<Rational>,
    maximize: bool,
    rows: Vec<Row>,
    free: Vec<bool>,
}

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        LinearProgram {
            n,
            objective: vec![Rational::zero(); n],
            maximize: false,
            rows: Vec::new(),
            free: vec![false; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn set_free(&mut self, j: usize) {
        self.free[j] = true;
    }

    pub fn all_free(&mut self) {
        self.free.iter_mut().for_each(|f| *f = true);
    }

    pub fn maximize(&mut self, c: Vec<Rational>) {
        assert_eq!(c.len(), self.n);
        self.objective = c;
        self.maximize = true;
    }

    pub fn minimize(&mut self, c: Vec<Rational>) {
        assert_eq!(c.len(), self.n);
        self.objective = c;
        self.maximize = false;
    }

    pub fn add(&mut self, coeffs: Vec<Rational>, cmp: Cmp, rhs: Rational) {
        assert_eq!(coeffs.len(), self.n);
        self.rows.push(Row { coeffs, cmp, rhs });
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Plain-text dump in `max c·x s.t. A x <= b` style.
    pub fn dump(&self, names: &[String]) -> String {
        let name = |j: usize| names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
        let term_list = |c: &[Rational]| {
            let terms: Vec<String> = c
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(|(j, v)| format!("{} {}", rational::fmt(v), name(j)))
                .collect();
            if terms.is_empty() {
                "0".to_string()
            } else {
                terms.join(" + ")
            }
        };
        let mut s = String::new();
        let sense = if self.maximize { "max" } else { "min" };
        let _ = writeln!(s, "{sense} {}", term_list(&self.objective));
        let _ = writeln!(s, "s.t.");
        for r in &self.rows {
            let op = match r.cmp {
                Cmp::Le => "<=",
                Cmp::Ge => ">=",
                Cmp::Eq => "=",
            };
            let _ = writeln!(s, "  {} {op} {}", term_list(&r.coeffs), rational::fmt(&r.rhs));
        }
        let free: Vec<String> = (0..self.n).filter(|&j| self.free[j]).map(name).collect();
        if !free.is_empty() {
            let _ = writeln!(s, "free {}", free.join(" "));
        }
        s
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    // Row-major; the last column holds the right-hand side.
    a: Vec<Vec<Rational>>,
    basis: Vec<usize>,
    ncols: usize,
    // Structural column range per original variable: (plus, minus).
    var_cols: Vec<(usize, Option<usize>)>,
    artificial_start: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let mut var_cols = Vec::with_capacity(lp.n);
        let mut col = 0;
        for j in 0..lp.n {
            if lp.free[j] {
                var_cols.push((col, Some(col + 1)));
                col += 2;
            } else {
                var_cols.push((col, None));
                col += 1;
            }
        }
        let structural = col;
        let nslack = lp.rows.iter().filter(|r| r.cmp != Cmp::Eq).count();
        let artificial_start = structural + nslack;

        // Normalize rows to nonnegative rhs.
        let mut rows: Vec<(Vec<Rational>, Cmp, Rational)> = lp
            .rows
            .iter()
            .map(|r| {
                if r.rhs.is_negative() {
                    let cmp = match r.cmp {
                        Cmp::Le => Cmp::Ge,
                        Cmp::Ge => Cmp::Le,
                        Cmp::Eq => Cmp::Eq,
                    };
                    (r.coeffs.iter().map(|c| -c).collect(), cmp, -&r.rhs)
                } else {
                    (r.coeffs.clone(), r.cmp, r.rhs.clone())
                }
            })
            .collect();
        let nart = rows.iter().filter(|r| r.1 != Cmp::Le).count();
        let ncols = artificial_start + nart;

        let mut a = Vec::with_capacity(rows.len());
        let mut basis = Vec::with_capacity(rows.len());
        let mut slack = structural;
        let mut art = artificial_start;
        for (coeffs, cmp, rhs) in rows.drain(..) {
            let mut row = vec![Rational::zero(); ncols + 1];
            for (j, c) in coeffs.iter().enumerate() {
                let (p, m) = var_cols[j];
                row[p] = c.clone();
                if let Some(m) = m {
                    row[m] = -c;
                }
            }
            match cmp {
                Cmp::Le => {
                    row[slack] = Rational::one();
                    basis.push(slack);
                    slack += 1;
                }
                Cmp::Ge => {
                    row[slack] = -Rational::one();
                    slack += 1;
                    row[art] = Rational::one();
                    basis.push(art);
                    art += 1;
                }
                Cmp::Eq => {
                    row[art] = Rational::one();
                    basis.push(art);
                    art += 1;
                }
            }
            row[ncols] = rhs;
            a.push(row);
        }
        Tableau { a, basis, ncols, var_cols, artificial_start }
    }

    fn pivot(&mut self, obj: &mut [Rational], r: usize, c: usize) {
        let inv = Rational::one() / &self.a[r][c];
        for x in self.a[r].iter_mut() {
            if !x.is_zero() {
                *x *= &inv;
            }
        }
        let prow = self.a[r].clone();
        let nz: Vec<usize> = (0..prow.len()).filter(|&j| !prow[j].is_zero()).collect();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let f = row[c].clone();
            for &j in &nz {
                row[j] -= &f * &prow[j];
            }
        }
        if !obj[c].is_zero() {
            let f = obj[c].clone();
            for &j in &nz {
                obj[j] -= &f * &prow[j];
            }
        }
        self.basis[r] = c;
    }

    /// Reduced-cost row for cost vector `cost` (length ncols), last entry is
    /// minus the objective value.
    fn reduced_costs(&self, cost: &[Rational]) -> Vec<Rational> {
        let mut obj: Vec<Rational> = cost.to_vec();
        obj.push(Rational::zero());
        for (i, &b) in self.basis.iter().enumerate() {
            if cost[b].is_zero() {
                continue;
            }
            let f = cost[b].clone();
            for (j, x) in self.a[i].iter().enumerate() {
                if !x.is_zero() {
                    obj[j] -= &f * x;
                }
            }
        }
        obj
    }

    /// Minimizes over columns `< limit`. Returns false when unbounded.
    fn optimize(&mut self, obj: &mut [Rational], limit: usize) -> bool {
        loop {
            let Some(c) = (0..limit).find(|&j| obj[j].is_negative()) else {
                return true;
            };
            let mut best: Option<(usize, Rational)> = None;
            for (i, row) in self.a.iter().enumerate() {
                if !row[c].is_positive() {
                    continue;
                }
                let ratio = &row[self.ncols] / &row[c];
                let better = match &best {
                    None => true,
                    Some((bi, br)) => ratio < *br || (ratio == *br && self.basis[i] < self.basis[*bi]),
                };
                if better {
                    best = Some((i, ratio));
                }
            }
            match best {
                None => return false,
                Some((r, _)) => self.pivot(obj, r, c),
            }
        }
    }

    fn run(mut self, lp: &LinearProgram) -> LpOutcome {
        let ncols = self.ncols;
        if ncols > self.artificial_start {
            let mut cost = vec![Rational::zero(); ncols];
            for c in cost.iter_mut().skip(self.artificial_start) {
                *c = Rational::one();
            }
            let mut obj = self.reduced_costs(&cost);
            self.optimize(&mut obj, ncols);
            if !obj[ncols].is_zero() {
                return LpOutcome::Infeasible;
            }
            // Drive zero-level artificials out of the basis.
            let mut i = 0;
            while i < self.a.len() {
                if self.basis[i] >= self.artificial_start {
                    match (0..self.artificial_start).find(|&j| !self.a[i][j].is_zero()) {
                        Some(j) => {
                            let mut dummy = vec![Rational::zero(); ncols + 1];
                            self.pivot(&mut dummy, i, j);
                        }
                        None => {
                            self.a.remove(i);
                            self.basis.remove(i);
                            continue;
                        }
                    }
                }
                i += 1;
            }
        }
        let mut cost = vec![Rational::zero(); ncols];
        for (j, c) in lp.objective.iter().enumerate() {
            let c = if lp.maximize { -c } else { c.clone() };
            let (p, m) = self.var_cols[j];
            if let Some(m) = m {
                cost[m] = -&c;
            }
            cost[p] = c;
        }
        let mut obj = self.reduced_costs(&cost);
        if !self.optimize(&mut obj, self.artificial_start) {
            return LpOutcome::Unbounded;
        }
        let mut colval = vec![Rational::zero(); ncols];
        for (i, &b) in self.basis.iter().enumerate() {
            colval[b] = self.a[i][ncols].clone();
        }
        let x: Vec<Rational> = self
            .var_cols
            .iter()
            .map(|&(p, m)| match m {
                Some(m) => &colval[p] - &colval[m],
                None => colval[p].clone(),
            })
            .collect();
        let value = x.iter().zip(&lp.objective).fold(Rational::zero(), |acc, (a, b)| acc + a * b);
        LpOutcome::Optimal { x, value }
    }
}
