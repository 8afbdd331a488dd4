//! Internal dense two-phase simplex for the small linear programs behind
//! L1/Linf distance computations.
//!
//! Solves min c'x s.t. Ax = b, x >= 0. Bland's rule (smallest eligible index
//! enters, smallest-index basic variable leaves among ratio ties) guarantees
//! termination on degenerate instances. The dual solution is recovered from
//! the final basis and the duality gap is checked against the configured
//! tolerance before the optimum is accepted.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-11;
const MAX_PIVOTS: usize = 20_000;

/// Primal/dual pair; fields beyond `objective` exist for verification.
#[allow(dead_code)]
pub(crate) struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub dual: DVector<f64>,
    pub gap: f64,
}

struct Tableau {
    /// Rows of [B^{-1}A | B^{-1}b]; the last column is the rhs.
    t: DMatrix<f64>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[(i, self.ncols)]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.t[(row, col)];
        let m = self.t.nrows();
        for j in 0..=self.ncols {
            self.t[(row, j)] /= piv;
        }
        for i in 0..m {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f != 0.0 {
                for j in 0..=self.ncols {
                    let v = self.t[(row, j)];
                    self.t[(i, j)] -= f * v;
                }
            }
        }
        self.basis[row] = col;
    }

    /// One phase of simplex with Bland's rule on the given costs.
    /// Returns the optimal objective value for these costs.
    fn run(&mut self, costs: &[f64]) -> Result<f64> {
        let m = self.t.nrows();
        for _ in 0..MAX_PIVOTS {
            // Simplex multipliers restricted to the tableau representation:
            // reduced cost of column j is c_j - c_B . T_j.
            let mut entering = None;
            for j in 0..self.ncols {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut red = costs[j];
                for i in 0..m {
                    red -= costs[self.basis[i]] * self.t[(i, j)];
                }
                if red < -COST_EPS {
                    entering = Some(j);
                    break; // Bland: first (smallest-index) eligible column.
                }
            }
            let Some(col) = entering else {
                let mut obj = 0.0;
                for i in 0..m {
                    obj += costs[self.basis[i]] * self.rhs(i);
                }
                return Ok(obj);
            };
            // Ratio test; Bland tie-break on the basic variable index.
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[(i, col)];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - PIVOT_EPS
                                || ((ratio - lr).abs() <= PIVOT_EPS
                                    && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Err(Error::LpFailure("unbounded program".into()));
            };
            self.pivot(row, col);
        }
        Err(Error::LpFailure("pivot budget exhausted".into()))
    }
}

/// Solve min c'x, Ax = b, x >= 0. `a` is m x n with m <= n expected.
pub(crate) fn solve_lp(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    gap_tol: f64,
) -> Result<LpSolution> {
    let m = a.nrows();
    let n = a.ncols();
    if b.len() != m || c.len() != n {
        return Err(Error::DimensionMismatch {
            context: "solve_lp".into(),
            expected: m,
            got: b.len(),
        });
    }

    // Orient rows so the rhs is nonnegative, then append artificials.
    let mut t = DMatrix::zeros(m, n + m + 1);
    for i in 0..m {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = s * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, n + m)] = s * b[i];
    }
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
        ncols: n + m,
    };

    // Phase 1: drive artificials to zero.
    let mut phase1 = vec![0.0; n + m];
    for j in n..n + m {
        phase1[j] = 1.0;
    }
    let infeas = tab.run(&phase1)?;
    if infeas > 1e-8 {
        return Err(Error::LpFailure(format!(
            "infeasible program (phase-1 value {infeas:.3e})"
        )));
    }
    // Pivot any artificial still basic onto a genuine column when possible.
    for i in 0..m {
        if tab.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| tab.t[(i, j)].abs() > 1e-9) {
                tab.pivot(i, j);
            }
        }
    }

    // Phase 2 on the original costs (artificials priced out of reach).
    let mut phase2 = vec![0.0; n + m];
    phase2[..n].copy_from_slice(c.as_slice());
    for p in phase2.iter_mut().skip(n) {
        // A still-basic artificial sits at value zero; an enormous cost keeps
        // every other artificial from re-entering.
        *p = 1e30;
    }
    let objective = tab.run(&phase2)?;

    let mut x = DVector::zeros(n);
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.rhs(i);
        }
    }

    // Dual from the final basis: solve B^T y = c_B on original columns.
    let mut bmat = DMatrix::zeros(m, m);
    let mut cb = DVector::zeros(m);
    for (i, &bi) in tab.basis.iter().enumerate() {
        for r in 0..m {
            bmat[(r, i)] = if bi < n {
                a[(r, bi)]
            } else if bi - n == r {
                1.0
            } else {
                0.0
            };
        }
        cb[i] = if bi < n { c[bi] } else { 0.0 };
    }
    let dual = bmat
        .transpose()
        .lu()
        .solve(&cb)
        .ok_or_else(|| Error::LpFailure("singular final basis".into()))?;
    let gap = (objective - dual.dot(b)).abs();
    if gap > gap_tol.max(1e-12 * (1.0 + objective.abs())) {
        return Err(Error::LpFailure(format!(
            "duality gap {gap:.3e} above tolerance {gap_tol:.1e}"
        )));
    }

    Ok(LpSolution {
        x,
        objective,
        dual,
        gap,
    })
}
