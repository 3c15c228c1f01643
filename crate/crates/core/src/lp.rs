//! Dense two-phase simplex with Bland's rule for small-row linear programs.
//!
//! Minimizes `c·x` subject to rows `a·x {<=, =, >=} b` and `x >= 0`.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.rows[r][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Runs Bland's rule over the columns allowed by `eligible`.
    fn optimize(&mut self, eligible: usize) -> Result<()> {
        let m = self.basis.len();
        loop {
            let obj = &self.rows[m];
            let Some(enter) = (0..eligible).find(|&j| obj[j] < -PIVOT_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let a = self.rows[r][enter];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let better = ratio < lratio - 1e-15 * lratio.abs().max(1.0)
                                || ((ratio - lratio).abs() <= 1e-15 * lratio.abs().max(1.0)
                                    && self.basis[r] < self.basis[lr]);
                            if better {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Numerical("linear program is unbounded".into()));
            };
            self.pivot(r, enter);
        }
    }
}

impl LinearProgram {
    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.objective.len();
        let m = self.constraints.len();
        if self.constraints.iter().any(|c| c.coeffs.len() != n) {
            return Err(Error::Construction("constraint width differs from the objective".into()));
        }
        // normalize to non-negative right-hand sides
        let rows: Vec<(Vec<f64>, Relation, f64)> = self
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let rel = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), rel, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();
        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let width = n + n_slack + n_art;
        let mut t = Tableau {
            rows: vec![vec![0.0; width + 1]; m + 1],
            basis: vec![0; m],
            width,
            pivots: 0,
        };
        let (mut s, mut a) = (n, n + n_slack);
        for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
            t.rows[i][..n].copy_from_slice(coeffs);
            t.rows[i][width] = *rhs;
            match rel {
                Relation::Le => {
                    t.rows[i][s] = 1.0;
                    t.basis[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    t.rows[i][s] = -1.0;
                    s += 1;
                    t.rows[i][a] = 1.0;
                    t.basis[i] = a;
                    a += 1;
                }
                Relation::Eq => {
                    t.rows[i][a] = 1.0;
                    t.basis[i] = a;
                    a += 1;
                }
            }
        }
        let first_art = n + n_slack;

        // phase 1: minimize the sum of artificials
        if n_art > 0 {
            for i in 0..m {
                if t.basis[i] >= first_art {
                    for j in 0..=width {
                        t.rows[m][j] -= t.rows[i][j];
                    }
                }
            }
            for j in first_art..width {
                t.rows[m][j] = 0.0;
            }
            t.optimize(first_art)?;
            let infeasibility = -t.rows[m][width];
            let scale = rows.iter().map(|r| r.2.abs()).fold(1.0, f64::max);
            if infeasibility > FEAS_TOL * scale {
                return Err(Error::Infeasible(format!(
                    "no point satisfies the constraints (phase-1 residual {infeasibility:e})"
                )));
            }
            // drive zero-level artificials out of the basis
            for i in 0..m {
                if t.basis[i] >= first_art {
                    if let Some(j) = (0..first_art).find(|&j| t.rows[i][j].abs() > PIVOT_TOL) {
                        t.pivot(i, j);
                    }
                }
            }
        }

        // phase 2
        t.rows[m].iter_mut().for_each(|v| *v = 0.0);
        t.rows[m][..n].copy_from_slice(&self.objective);
        for i in 0..m {
            let b = t.basis[i];
            let f = t.rows[m][b];
            if f != 0.0 {
                let row = t.rows[i].clone();
                for (v, rv) in t.rows[m].iter_mut().zip(&row) {
                    *v -= f * rv;
                }
            }
        }
        // a redundant row may keep an artificial basic at level zero; bar re-entry
        for j in first_art..width {
            t.rows[m][j] = 0.0;
        }
        t.optimize(first_art)?;

        let mut x = vec![0.0; n];
        for i in 0..m {
            if t.basis[i] < n {
                x[t.basis[i]] = t.rhs(i).max(0.0);
            }
        }
        let objective = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution {
            x,
            objective,
            pivots: t.pivots,
        })
    }
}
