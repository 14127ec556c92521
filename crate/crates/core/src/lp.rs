//! Bounded-variable primal simplex over equality-constrained programs.
//!
//! ```text
//! minimize    cᵀx
//! subject to  A x = b
//!             l ≤ x ≤ u        (either bound may be infinite)
//! ```
//!
//! The solver keeps a dense tableau, starts from an all-artificial basis
//! (phase 1) and pivots with Bland's smallest-index rule for both the
//! entering and the leaving variable, so it cannot cycle and every run on
//! the same input takes the same path. Once a basis is optimal the basic
//! values and the row duals are recomputed directly from the basis matrix,
//! which keeps equality residuals at rounding level regardless of how many
//! pivots were taken.

use serde::{Deserialize, Serialize};

use crate::dense;

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-9;
/// Reduced-cost tolerance.
pub const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("variable {var}: lower bound {lower} exceeds upper bound {upper}")]
    InvertedBounds { var: usize, lower: f64, upper: f64 },
    #[error("variable {var}: non-finite cost or NaN bound")]
    NotANumber { var: usize },
    #[error("row references variable {var} but only {count} exist")]
    UnknownVariable { var: usize, count: usize },
    #[error("row coefficient or right-hand side is not finite")]
    NonFiniteRow,
}

/// `Σ coeff·x[var] = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualityRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<EqualityRow>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable and returns its index.
    pub fn add_variable(&mut self, cost: f64, lower: f64, upper: f64) -> Result<usize, LpError> {
        let var = self.objective.len();
        if !cost.is_finite() || lower.is_nan() || upper.is_nan() || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(LpError::NotANumber { var });
        }
        if lower > upper {
            return Err(LpError::InvertedBounds { var, lower, upper });
        }
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        Ok(var)
    }

    /// Adds an equality row and returns its index. Repeated variables are summed.
    pub fn add_equality(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> Result<usize, LpError> {
        if !rhs.is_finite() || coeffs.iter().any(|(_, c)| !c.is_finite()) {
            return Err(LpError::NonFiniteRow);
        }
        let count = self.objective.len();
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
        for &(var, c) in coeffs {
            if var >= count {
                return Err(LpError::UnknownVariable { var, count });
            }
            match merged.iter_mut().find(|(v, _)| *v == var) {
                Some(entry) => entry.1 += c,
                None => merged.push((var, c)),
            }
        }
        self.rows.push(EqualityRow { coeffs: merged, rhs });
        Ok(self.rows.len() - 1)
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> Result<(), LpError> {
        if lower.is_nan() || upper.is_nan() || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(LpError::NotANumber { var });
        }
        if lower > upper {
            return Err(LpError::InvertedBounds { var, lower, upper });
        }
        self.lower[var] = lower;
        self.upper[var] = upper;
        Ok(())
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) -> Result<(), LpError> {
        if !cost.is_finite() {
            return Err(LpError::NotANumber { var });
        }
        self.objective[var] = cost;
        Ok(())
    }

    /// Replaces the whole cost vector; must match the variable count.
    pub fn set_objective(&mut self, costs: &[f64]) -> Result<(), LpError> {
        assert_eq!(costs.len(), self.objective.len(), "objective length mismatch");
        for (var, &c) in costs.iter().enumerate() {
            self.set_cost(var, c)?;
        }
        Ok(())
    }

    pub fn num_variables(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn rows(&self) -> &[EqualityRow] {
        &self.rows
    }

    /// `Ax − b` per row.
    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().map(|&(v, c)| c * x[v]).sum::<f64>() - r.rhs)
            .collect()
    }

    /// Dual objective `bᵀy + Σ min over the box of (c − Aᵀy)ⱼ xⱼ`; a lower
    /// bound on the primal optimum for any `y` (−∞ if the box is unbounded
    /// in a direction with the wrong reduced-cost sign).
    pub fn dual_objective(&self, duals: &[f64]) -> f64 {
        let mut reduced = self.objective.clone();
        let mut value = 0.0;
        for (row, &y) in self.rows.iter().zip(duals) {
            value += row.rhs * y;
            for &(v, c) in &row.coeffs {
                reduced[v] -= c * y;
            }
        }
        for (j, &d) in reduced.iter().enumerate() {
            if d > 0.0 {
                value += d * self.lower[j];
            } else if d < 0.0 {
                value += d * self.upper[j];
            }
        }
        value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Safety net for numerical trouble; Bland's rule terminates in exact arithmetic.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// One per equality row: ∂(optimal objective)/∂(rhs).
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn failed(status: LpStatus, n: usize, m: usize, iterations: usize) -> Self {
        Self {
            status,
            values: vec![0.0; n],
            objective_value: f64::NAN,
            duals: vec![0.0; m],
            iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable resting at zero.
    Free,
}

struct Tableau {
    m: usize,
    cols: usize,
    /// m × cols, row-major: B⁻¹ [A | S].
    t: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    x: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    fn run(&mut self, cost: &[f64]) -> Outcome {
        loop {
            if self.iterations >= MAX_ITERATIONS {
                return Outcome::IterationLimit;
            }
            let Some((enter, dir)) = self.entering(cost) else {
                return Outcome::Optimal;
            };
            self.iterations += 1;

            // Ratio test. Ties go to the smallest variable index.
            let mut best: Option<(f64, usize, Option<usize>)> = None; // (step, var, row)
            if self.lower[enter].is_finite() && self.upper[enter].is_finite() {
                best = Some((self.upper[enter] - self.lower[enter], enter, None));
            }
            for i in 0..self.m {
                let a = self.at(i, enter);
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = -dir * a;
                let b = self.basis[i];
                let limit = if rate < 0.0 {
                    if !self.lower[b].is_finite() {
                        continue;
                    }
                    ((self.x[b] - self.lower[b]) / -rate).max(0.0)
                } else {
                    if !self.upper[b].is_finite() {
                        continue;
                    }
                    ((self.upper[b] - self.x[b]) / rate).max(0.0)
                };
                let better = match best {
                    None => true,
                    Some((step, var, _)) => limit < step - 1e-12 || (limit <= step + 1e-12 && b < var),
                };
                if better {
                    best = Some((limit, b, Some(i)));
                }
            }
            let Some((step, _, row)) = best else {
                return Outcome::Unbounded;
            };

            self.x[enter] += dir * step;
            for i in 0..self.m {
                let a = self.at(i, enter);
                if a != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= dir * a * step;
                }
            }
            match row {
                None => {
                    let (state, value) = if dir > 0.0 {
                        (VarState::AtUpper, self.upper[enter])
                    } else {
                        (VarState::AtLower, self.lower[enter])
                    };
                    self.state[enter] = state;
                    self.x[enter] = value;
                }
                Some(r) => {
                    let leaving = self.basis[r];
                    let rate = -dir * self.at(r, enter);
                    if rate < 0.0 {
                        self.state[leaving] = VarState::AtLower;
                        self.x[leaving] = self.lower[leaving];
                    } else {
                        self.state[leaving] = VarState::AtUpper;
                        self.x[leaving] = self.upper[leaving];
                    }
                    self.pivot(r, enter);
                }
            }
        }
    }

    /// Bland: lowest-index nonbasic variable with an improving direction.
    fn entering(&self, cost: &[f64]) -> Option<(usize, f64)> {
        for j in 0..self.cols {
            let state = self.state[j];
            if state == VarState::Basic || self.lower[j] == self.upper[j] {
                continue;
            }
            let mut d = cost[j];
            for i in 0..self.m {
                let a = self.at(i, j);
                if a != 0.0 {
                    d -= cost[self.basis[i]] * a;
                }
            }
            match state {
                VarState::AtLower if d < -OPT_TOL => return Some((j, 1.0)),
                VarState::AtUpper if d > OPT_TOL => return Some((j, -1.0)),
                VarState::Free if d.abs() > OPT_TOL => return Some((j, -d.signum())),
                _ => {}
            }
        }
        None
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.at(r, j);
        for k in 0..cols {
            self.t[r * cols + k] /= p;
        }
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.at(i, j);
            if f == 0.0 {
                continue;
            }
            for k in 0..cols {
                let v = self.t[r * cols + k];
                if v != 0.0 {
                    self.t[i * cols + k] -= f * v;
                }
            }
        }
        self.basis[r] = j;
        self.state[j] = VarState::Basic;
    }
}

/// Solves a linear program. Pure and deterministic.
pub fn solve(lp: &LinearProgram) -> LpSolution {
    let n = lp.num_variables();
    let m = lp.num_rows();
    let cols = n + m;

    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    lower.extend(std::iter::repeat(0.0).take(m));
    upper.extend(std::iter::repeat(f64::INFINITY).take(m));

    let mut state = Vec::with_capacity(cols);
    let mut x = vec![0.0; cols];
    for j in 0..n {
        let (s, v) = if lower[j].is_finite() {
            (VarState::AtLower, lower[j])
        } else if upper[j].is_finite() {
            (VarState::AtUpper, upper[j])
        } else {
            (VarState::Free, 0.0)
        };
        state.push(s);
        x[j] = v;
    }
    state.extend(std::iter::repeat(VarState::Basic).take(m));

    // Artificial column i carries sign s_i so that its starting value is |residual|.
    let mut sign = vec![1.0; m];
    let mut t = vec![0.0; m * cols];
    for (i, row) in lp.rows.iter().enumerate() {
        let resid = row.rhs - row.coeffs.iter().map(|&(v, c)| c * x[v]).sum::<f64>();
        sign[i] = if resid >= 0.0 { 1.0 } else { -1.0 };
        for &(v, c) in &row.coeffs {
            t[i * cols + v] = sign[i] * c;
        }
        t[i * cols + n + i] = 1.0;
        x[n + i] = resid.abs();
    }

    let mut tab = Tableau {
        m,
        cols,
        t,
        basis: (n..cols).collect(),
        state,
        x,
        lower,
        upper,
        iterations: 0,
    };

    let mut phase1 = vec![0.0; cols];
    phase1[n..].iter_mut().for_each(|c| *c = 1.0);
    if let Outcome::IterationLimit = tab.run(&phase1) {
        return LpSolution::failed(LpStatus::IterationLimit, n, m, tab.iterations);
    }
    let scale = lp.rows.iter().map(|r| r.rhs.abs()).fold(1.0, f64::max);
    let infeasibility: f64 = tab.x[n..].iter().sum();
    if infeasibility > 1e-8 * scale {
        return LpSolution::failed(LpStatus::Infeasible, n, m, tab.iterations);
    }

    // Fix artificials at zero and drive basic ones out where possible.
    for a in n..cols {
        tab.upper[a] = 0.0;
        tab.x[a] = 0.0;
        if tab.state[a] != VarState::Basic {
            tab.state[a] = VarState::AtLower;
        }
    }
    for r in 0..m {
        if tab.basis[r] < n {
            continue;
        }
        if let Some(j) = (0..n).find(|&j| tab.state[j] != VarState::Basic && tab.at(r, j).abs() > 1e-9) {
            let leaving = tab.basis[r];
            tab.state[leaving] = VarState::AtLower;
            tab.pivot(r, j);
        }
    }

    let mut phase2 = lp.objective.clone();
    phase2.extend(std::iter::repeat(0.0).take(m));
    match tab.run(&phase2) {
        Outcome::Optimal => {}
        Outcome::Unbounded => return LpSolution::failed(LpStatus::Unbounded, n, m, tab.iterations),
        Outcome::IterationLimit => return LpSolution::failed(LpStatus::IterationLimit, n, m, tab.iterations),
    }

    let column = |j: usize, i: usize| -> f64 {
        if j < n {
            lp.rows[i].coeffs.iter().find(|(v, _)| *v == j).map_or(0.0, |(_, c)| *c)
        } else if j - n == i {
            sign[i]
        } else {
            0.0
        }
    };

    // Basic values from B x_B = b − N x_N.
    let mut values = tab.x.clone();
    if m > 0 {
        let mut bmat = vec![0.0; m * m];
        for (k, &j) in tab.basis.iter().enumerate() {
            for i in 0..m {
                bmat[i * m + k] = column(j, i);
            }
        }
        let mut rhs: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();
        for (i, row) in lp.rows.iter().enumerate() {
            for &(v, c) in &row.coeffs {
                if tab.state[v] != VarState::Basic {
                    rhs[i] -= c * values[v];
                }
            }
        }
        if let Some(xb) = dense::solve(bmat.clone(), rhs) {
            for (k, &j) in tab.basis.iter().enumerate() {
                values[j] = xb[k];
            }
        }
        // round-off next to a bound is reported as the bound itself
        for j in 0..cols {
            if (values[j] - tab.lower[j]).abs() <= FEAS_TOL {
                values[j] = tab.lower[j];
            }
            if (values[j] - tab.upper[j]).abs() <= FEAS_TOL {
                values[j] = tab.upper[j];
            }
        }

        // Duals from Bᵀ y = c_B.
        let mut bt = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                bt[k * m + i] = bmat[i * m + k];
            }
        }
        let cb: Vec<f64> = tab.basis.iter().map(|&j| phase2[j]).collect();
        let duals = dense::solve(bt, cb).unwrap_or_else(|| vec![0.0; m]);
        values.truncate(n);
        let objective_value = lp.objective.iter().zip(&values).map(|(c, v)| c * v).sum();
        return LpSolution {
            status: LpStatus::Optimal,
            values,
            objective_value,
            duals,
            iterations: tab.iterations,
        };
    }

    values.truncate(n);
    let objective_value = lp.objective.iter().zip(&values).map(|(c, v)| c * v).sum();
    LpSolution {
        status: LpStatus::Optimal,
        values,
        objective_value,
        duals: Vec::new(),
        iterations: tab.iterations,
    }
}
