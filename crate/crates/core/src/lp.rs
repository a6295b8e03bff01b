//! Small dense simplex for the region problems.
//!
//! Solves `maximize c·x  s.t.  A x <= b, x >= 0` with `b >= 0`, so the
//! all-slack basis is feasible and no phase one is needed. Region problems
//! have at most a few dozen rows and up to `2^16` columns, which a dense
//! tableau handles comfortably.
//!
//! The region problems are heavily degenerate (most right-hand sides are
//! zero and symmetric channels give many identical columns). The solver
//! pivots on a slightly perturbed right-hand side and then reads the exact
//! solution off the final basis inverse.

use thiserror::Error;

const PIVOT_EPS: f64 = 1e-12;
/// Degenerate pivots tolerated under Dantzig's rule before switching to
/// Bland's rule.
const DEGENERATE_LIMIT: usize = 50;
/// Scale of the right-hand-side perturbation relative to `max(1, max b)`.
const PERTURBATION: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("constraint matrix has {rows} rows but {rhs} right-hand sides")]
    ShapeMismatch { rows: usize, rhs: usize },

    #[error("row {row} has {got} coefficients, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },

    #[error("right-hand side {row} is {value}; the solver needs b >= 0")]
    NegativeRhs { row: usize, value: f64 },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex did not converge within {0} pivots")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Shadow price of every `<=` row; nonnegative at an optimum.
    pub duals: Vec<f64>,
}

struct Tableau {
    rows: usize,
    width: usize,
    /// `rows` constraint rows followed by the objective row; the last column
    /// of each row is the right-hand side.
    cells: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let p = self.at(pr, pc);
        for c in 0..w {
            self.cells[pr * w + c] /= p;
        }
        let (before, rest) = self.cells.split_at_mut(pr * w);
        let (pivot_row, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [f64]| {
            let f = row[pc];
            if f != 0.0 {
                for (cell, &pv) in row.iter_mut().zip(pivot_row.iter()) {
                    *cell -= f * pv;
                }
                row[pc] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(eliminate);
        after.chunks_mut(w).for_each(eliminate);
        self.basis[pr] = pc;
    }
}

/// Maximizes `c·x` subject to `a x <= b`, `x >= 0`, where every `b_i >= 0`.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution, LpError> {
    let m = a.len();
    let n = c.len();
    if b.len() != m {
        return Err(LpError::ShapeMismatch { rows: m, rhs: b.len() });
    }
    for (i, row) in a.iter().enumerate() {
        if row.len() != n {
            return Err(LpError::RaggedRow { row: i, got: row.len(), expected: n });
        }
        if !(b[i] >= 0.0) {
            return Err(LpError::NegativeRhs { row: i, value: b[i] });
        }
    }

    let width = n + m + 1;
    let scale = PERTURBATION * b.iter().cloned().fold(1.0, f64::max);
    let mut cells = vec![0.0; (m + 1) * width];
    for (i, row) in a.iter().enumerate() {
        cells[i * width..i * width + n].copy_from_slice(row);
        cells[i * width + n + i] = 1.0;
        // Distinct offsets in [1, 2)·scale (golden-ratio sequence).
        let offset = 1.0 + (i as f64 * 0.618_033_988_749_894_9).fract();
        cells[i * width + width - 1] = b[i] + scale * offset;
    }
    for (j, &cj) in c.iter().enumerate() {
        cells[m * width + j] = -cj;
    }
    let mut t = Tableau { rows: m, width, cells, basis: (n..n + m).collect() };

    let max_pivots = 100 * (n + m).max(10);
    let mut degenerate_run = 0usize;
    for _ in 0..max_pivots {
        let bland = degenerate_run >= DEGENERATE_LIMIT;
        let entering = if bland {
            (0..n + m).find(|&j| t.at(m, j) < -PIVOT_EPS)
        } else {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n + m {
                let rc = t.at(m, j);
                if rc < -PIVOT_EPS && best.is_none_or(|(_, v)| rc < v) {
                    best = Some((j, rc));
                }
            }
            best.map(|(j, _)| j)
        };
        let Some(pc) = entering else {
            return Ok(extract(&t, n, b));
        };

        let mut leaving: Option<(usize, f64)> = None;
        for r in 0..t.rows {
            let coef = t.at(r, pc);
            if coef > PIVOT_EPS {
                let ratio = t.rhs(r) / coef;
                let better = match leaving {
                    None => true,
                    Some((lr, lv)) => {
                        ratio < lv - PIVOT_EPS
                            || (ratio <= lv + PIVOT_EPS && t.basis[r] < t.basis[lr])
                    }
                };
                if better {
                    leaving = Some((r, ratio));
                }
            }
        }
        let Some((pr, ratio)) = leaving else {
            return Err(LpError::Unbounded);
        };
        if ratio <= PIVOT_EPS {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        t.pivot(pr, pc);
    }
    Err(LpError::IterationLimit(max_pivots))
}

/// Reads the solution for the unperturbed `b`: the slack columns hold
/// `B^-1` in the constraint rows and the duals in the objective row.
fn extract(t: &Tableau, n: usize, b: &[f64]) -> LpSolution {
    let m = t.rows;
    let exact = |r: usize| (0..m).map(|i| t.at(r, n + i) * b[i]).sum::<f64>();
    let mut x = vec![0.0; n];
    for (r, &var) in t.basis.iter().enumerate() {
        if var < n {
            x[var] = exact(r).max(0.0);
        }
    }
    let duals: Vec<f64> = (0..m).map(|i| t.at(m, n + i).max(0.0)).collect();
    let objective = duals.iter().zip(b).map(|(y, bi)| y * bi).sum();
    LpSolution { x, objective, duals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y  s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), 36
        let sol = maximize(
            &[3.0, 5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        )
        .unwrap();
        assert!((sol.objective - 36.0).abs() < 1e-12);
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 6.0).abs() < 1e-12);
        // Duals (0, 1.5, 1) and strong duality b·y = 36.
        let dual_obj: f64 = sol.duals.iter().zip([4.0, 12.0, 18.0]).map(|(y, b)| y * b).sum();
        assert!((dual_obj - 36.0).abs() < 1e-12);
        assert!((sol.duals[1] - 1.5).abs() < 1e-12 && (sol.duals[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_detected() {
        let r = maximize(&[1.0, 1.0], &[vec![1.0, -1.0]], &[1.0]);
        assert_eq!(r, Err(LpError::Unbounded));
    }

    #[test]
    fn negative_rhs_rejected() {
        let r = maximize(&[1.0], &[vec![1.0]], &[-1.0]);
        assert!(matches!(r, Err(LpError::NegativeRhs { row: 0, .. })));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            maximize(&[1.0], &[vec![1.0]], &[1.0, 2.0]),
            Err(LpError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            maximize(&[1.0, 2.0], &[vec![1.0]], &[1.0]),
            Err(LpError::RaggedRow { .. })
        ));
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Beale-style cycling example for Dantzig's rule.
        let c = [0.75, -150.0, 0.02, -6.0];
        let a = vec![
            vec![0.25, -60.0, -0.04, 9.0],
            vec![0.5, -90.0, -0.02, 3.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ];
        let sol = maximize(&c, &a, &[0.0, 0.0, 1.0]).unwrap();
        assert!((sol.objective - 0.05).abs() < 1e-9);
    }

    #[test]
    fn zero_objective_returns_origin() {
        let sol = maximize(&[0.0, 0.0], &[vec![1.0, 1.0]], &[1.0]).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.x, vec![0.0, 0.0]);
    }
}
