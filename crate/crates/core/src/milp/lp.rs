//! Dense two-phase primal simplex for feasibility checks, with bounded
//! variables (nonbasic variables rest at either bound) and a Bland's-rule
//! fallback when the Dantzig rule stalls.
//!
//! Only feasibility is needed here: phase 1 minimizes the sum of
//! artificial variables; any basic feasible point is accepted.

/// Row sense. `Ge` rows are negated into `Le` during standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOp {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct LinRow {
    pub coeffs: Vec<(usize, f64)>,
    pub op: RowOp,
    pub rhs: f64,
}

/// A linear program in natural form: variable bounds plus rows.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LinRow>,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        self.lower.push(lower);
        self.upper.push(upper);
        self.lower.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, op: RowOp, rhs: f64) {
        self.rows.push(LinRow { coeffs, op, rhs });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    /// A point satisfying all rows and bounds.
    Feasible(Vec<f64>),
    Infeasible,
    /// The solver gave up (iteration cap or numerical trouble).
    Numerical,
}

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarState {
    Basic(usize), // row index
    AtLower,
    AtUpper,
}

/// Standard-form tableau for one feasibility solve: shifted variables
/// (lower bound zero), slack per inequality row, artificials completing
/// the initial basis.
pub struct LpTableau {
    ncols: usize,
    nrows: usize,
    nstruct: usize,
    first_artificial: usize,
    // span[j] = upper - lower of the shifted variable (may be +inf)
    span: Vec<f64>,
    // dense row-major tableau, B^-1 A
    t: Vec<f64>,
    // current basic-variable values
    beta: Vec<f64>,
    // reduced cost row for the phase-1 objective
    d: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    shift: Vec<f64>,
}

impl LpTableau {
    /// Standardize `lp`. Rows become equalities over shifted variables
    /// with slacks; rows whose initial slack value would be negative get
    /// an artificial variable instead.
    pub fn new(lp: &LinearProgram) -> Self {
        let nstruct = lp.num_vars();
        let nrows = lp.rows.len();

        // shift x = lower + x', spans may be infinite
        let shift: Vec<f64> = lp.lower.clone();
        let mut span: Vec<f64> = lp
            .lower
            .iter()
            .zip(&lp.upper)
            .map(|(l, u)| u - l)
            .collect();

        // rows normalized to <= or ==, rhs adjusted by the shift
        let mut dense_rows: Vec<(Vec<f64>, bool, f64)> = Vec::with_capacity(nrows);
        for row in &lp.rows {
            let mut coeffs = vec![0.0; nstruct];
            let mut rhs = row.rhs;
            for &(j, a) in &row.coeffs {
                coeffs[j] += a;
            }
            for (j, c) in coeffs.iter().enumerate() {
                rhs -= c * shift[j];
            }
            let (coeffs, rhs, eq) = match row.op {
                RowOp::Le => (coeffs, rhs, false),
                RowOp::Ge => (coeffs.iter().map(|c| -c).collect(), -rhs, false),
                RowOp::Eq => (coeffs, rhs, true),
            };
            dense_rows.push((coeffs, eq, rhs));
        }

        // slack column per inequality row
        let nslack = dense_rows.iter().filter(|(_, eq, _)| !eq).count();
        let ncols_no_art = nstruct + nslack;
        let mut t = vec![0.0; nrows * (ncols_no_art + nrows)]; // room for artificials
        let total_width = ncols_no_art + nrows;
        let mut slack_idx = nstruct;
        let mut slack_of_row: Vec<Option<usize>> = vec![None; nrows];
        let mut rhs_vec = vec![0.0; nrows];
        for (i, (coeffs, eq, rhs)) in dense_rows.iter().enumerate() {
            for (j, &c) in coeffs.iter().enumerate() {
                t[i * total_width + j] = c;
            }
            rhs_vec[i] = *rhs;
            if !eq {
                t[i * total_width + slack_idx] = 1.0;
                slack_of_row[i] = Some(slack_idx);
                slack_idx += 1;
            }
        }
        span.extend(std::iter::repeat(f64::INFINITY).take(nslack));

        // initial basis: slack when its value b is nonnegative, else an
        // artificial with the row negated so the artificial starts >= 0
        let mut basis = Vec::with_capacity(nrows);
        let mut state = vec![VarState::AtLower; total_width];
        let first_artificial = ncols_no_art;
        let mut nart = 0usize;
        let mut beta = vec![0.0; nrows];
        for i in 0..nrows {
            let needs_artificial = match slack_of_row[i] {
                Some(_) => rhs_vec[i] < 0.0,
                None => true,
            };
            if needs_artificial && rhs_vec[i] < 0.0 {
                for j in 0..ncols_no_art {
                    t[i * total_width + j] = -t[i * total_width + j];
                }
                rhs_vec[i] = -rhs_vec[i];
            }
            if needs_artificial {
                let col = first_artificial + nart;
                nart += 1;
                t[i * total_width + col] = 1.0;
                basis.push(col);
                state[col] = VarState::Basic(i);
            } else {
                let col = slack_of_row[i].unwrap();
                basis.push(col);
                state[col] = VarState::Basic(i);
            }
            beta[i] = rhs_vec[i];
        }
        let ncols = ncols_no_art + nart;
        span.extend(std::iter::repeat(f64::INFINITY).take(nart));

        // compact the tableau to the real column count
        let mut compact = vec![0.0; nrows * ncols];
        for i in 0..nrows {
            compact[i * ncols..i * ncols + ncols]
                .copy_from_slice(&t[i * total_width..i * total_width + ncols]);
        }

        // phase-1 reduced costs: cost 1 on artificials, minus basic rows
        let mut d = vec![0.0; ncols];
        for j in first_artificial..ncols {
            d[j] = 1.0;
        }
        for (i, &b) in basis.iter().enumerate() {
            if b >= first_artificial {
                for j in 0..ncols {
                    d[j] -= compact[i * ncols + j];
                }
            }
        }

        LpTableau {
            ncols,
            nrows,
            nstruct,
            first_artificial,
            span,
            t: compact,
            beta,
            d,
            basis,
            state,
            shift,
        }
    }

    fn infeasibility(&self) -> f64 {
        self.basis
            .iter()
            .zip(&self.beta)
            .filter(|(&b, _)| b >= self.first_artificial)
            .map(|(_, &v)| v)
            .sum()
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.ncols {
            if j >= self.first_artificial && !matches!(self.state[j], VarState::Basic(_)) {
                // an artificial that left the basis is dropped for good
                continue;
            }
            let score = match self.state[j] {
                VarState::AtLower if self.d[j] < -PIVOT_TOL => -self.d[j],
                VarState::AtUpper if self.d[j] > PIVOT_TOL => self.d[j],
                _ => continue,
            };
            if bland {
                return Some(j);
            }
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        best.map(|(j, _)| j)
    }

    /// Run phase 1 to optimality. Returns the feasible point on success.
    pub fn feasible_point(&mut self) -> LpOutcome {
        let max_iters = 1000 + 50 * (self.nrows + self.ncols);
        let mut bland = false;
        let mut last_obj = f64::INFINITY;
        let mut stalled = 0usize;
        for _ in 0..max_iters {
            let obj = self.infeasibility();
            if obj < last_obj - 1e-12 {
                last_obj = obj;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled > 2 * (self.nrows + 16) {
                    // Dantzig pricing is cycling; fall back to Bland's rule,
                    // which is finite.
                    bland = true;
                }
            }

            let Some(j) = self.entering(bland) else {
                // optimal for phase 1
                return if self.infeasibility() <= FEAS_TOL {
                    LpOutcome::Feasible(self.extract())
                } else {
                    LpOutcome::Infeasible
                };
            };
            // direction: +1 when rising from the lower bound
            let sign = if self.state[j] == VarState::AtLower { 1.0 } else { -1.0 };

            // ratio test: keep every basic variable inside [0, span]
            let mut t_max = self.span[j];
            let mut leave: Option<(usize, bool)> = None; // (row, hits_upper)
            for i in 0..self.nrows {
                let coeff = sign * self.t[i * self.ncols + j];
                if coeff > PIVOT_TOL {
                    let ratio = self.beta[i] / coeff;
                    if ratio < t_max - PIVOT_TOL
                        || (ratio < t_max + PIVOT_TOL
                            && leave.map_or(true, |(r, _)| self.basis[i] < self.basis[r]))
                    {
                        t_max = ratio.max(0.0);
                        leave = Some((i, false));
                    }
                } else if coeff < -PIVOT_TOL {
                    let cap = self.span[self.basis[i]];
                    if cap.is_finite() {
                        let ratio = (cap - self.beta[i]) / (-coeff);
                        if ratio < t_max - PIVOT_TOL
                            || (ratio < t_max + PIVOT_TOL
                                && leave.map_or(true, |(r, _)| self.basis[i] < self.basis[r]))
                        {
                            t_max = ratio.max(0.0);
                            leave = Some((i, true));
                        }
                    }
                }
            }

            if t_max.is_infinite() {
                // phase-1 objective is bounded below; an unbounded ray here
                // means numerical trouble
                return LpOutcome::Numerical;
            }

            match leave {
                None => {
                    // bound flip: the entering variable crosses its span
                    for i in 0..self.nrows {
                        self.beta[i] -= sign * t_max * self.t[i * self.ncols + j];
                    }
                    self.state[j] = match self.state[j] {
                        VarState::AtLower => VarState::AtUpper,
                        VarState::AtUpper => VarState::AtLower,
                        VarState::Basic(_) => unreachable!(),
                    };
                }
                Some((r, hits_upper)) => {
                    let entering_value = match self.state[j] {
                        VarState::AtLower => t_max,
                        VarState::AtUpper => self.span[j] - t_max,
                        VarState::Basic(_) => unreachable!(),
                    };
                    for i in 0..self.nrows {
                        if i != r {
                            self.beta[i] -= sign * t_max * self.t[i * self.ncols + j];
                        }
                    }
                    let old = self.basis[r];
                    self.state[old] = if hits_upper { VarState::AtUpper } else { VarState::AtLower };
                    self.basis[r] = j;
                    self.state[j] = VarState::Basic(r);
                    self.beta[r] = entering_value;
                    self.pivot(r, j);
                }
            }
        }
        LpOutcome::Numerical
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let n = self.ncols;
        let pivot = self.t[r * n + j];
        debug_assert!(pivot.abs() > PIVOT_TOL * 1e-3, "tiny pivot {pivot}");
        let inv = 1.0 / pivot;
        for col in 0..n {
            self.t[r * n + col] *= inv;
        }
        for i in 0..self.nrows {
            if i == r {
                continue;
            }
            let factor = self.t[i * n + j];
            if factor == 0.0 {
                continue;
            }
            for col in 0..n {
                self.t[i * n + col] -= factor * self.t[r * n + col];
            }
        }
        let factor = self.d[j];
        if factor != 0.0 {
            for col in 0..n {
                self.d[col] -= factor * self.t[r * n + col];
            }
        }
    }

    fn extract(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.nstruct];
        for j in 0..self.nstruct {
            let shifted = match self.state[j] {
                VarState::Basic(i) => self.beta[i],
                VarState::AtLower => 0.0,
                VarState::AtUpper => self.span[j],
            };
            x[j] = self.shift[j] + shifted;
        }
        x
    }
}

/// Phase-1 feasibility check of `lp`.
pub fn solve_feasibility(lp: &LinearProgram) -> LpOutcome {
    LpTableau::new(lp).feasible_point()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_point(lp: &LinearProgram, x: &[f64]) {
        for (j, &v) in x.iter().enumerate() {
            assert!(
                v >= lp.lower[j] - 1e-7 && v <= lp.upper[j] + 1e-7,
                "var {j} = {v} out of [{}, {}]",
                lp.lower[j],
                lp.upper[j]
            );
        }
        for (i, row) in lp.rows.iter().enumerate() {
            let lhs: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let ok = match row.op {
                RowOp::Le => lhs <= row.rhs + 1e-6,
                RowOp::Ge => lhs >= row.rhs - 1e-6,
                RowOp::Eq => (lhs - row.rhs).abs() <= 1e-6,
            };
            assert!(ok, "row {i}: {lhs} vs {:?} {}", row.op, row.rhs);
        }
    }

    #[test]
    fn trivially_feasible_box() {
        let mut lp = LinearProgram::default();
        lp.add_var(0.0, 1.0);
        lp.add_var(-2.0, 3.0);
        match solve_feasibility(&lp) {
            LpOutcome::Feasible(x) => check_point(&lp, &x),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equality_intersection() {
        // x + y = 1.5, x - y = 0.5 => x = 1, y = 0.5
        let mut lp = LinearProgram::default();
        let x = lp.add_var(0.0, 2.0);
        let y = lp.add_var(0.0, 2.0);
        lp.add_row(vec![(x, 1.0), (y, 1.0)], RowOp::Eq, 1.5);
        lp.add_row(vec![(x, 1.0), (y, -1.0)], RowOp::Eq, 0.5);
        match solve_feasibility(&lp) {
            LpOutcome::Feasible(p) => {
                check_point(&lp, &p);
                assert!((p[x] - 1.0).abs() < 1e-7 && (p[y] - 0.5).abs() < 1e-7);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_bounds_vs_row() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(0.0, 1.0);
        lp.add_row(vec![(x, 1.0)], RowOp::Ge, 2.0);
        assert_eq!(solve_feasibility(&lp), LpOutcome::Infeasible);
    }

    #[test]
    fn infeasible_contradictory_rows() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(-10.0, 10.0);
        let y = lp.add_var(-10.0, 10.0);
        lp.add_row(vec![(x, 1.0), (y, 1.0)], RowOp::Ge, 5.0);
        lp.add_row(vec![(x, 1.0), (y, 1.0)], RowOp::Le, 4.0);
        assert_eq!(solve_feasibility(&lp), LpOutcome::Infeasible);
    }

    #[test]
    fn negative_lower_bounds_shift() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(-5.0, -1.0);
        lp.add_row(vec![(x, 2.0)], RowOp::Le, -4.0);
        match solve_feasibility(&lp) {
            LpOutcome::Feasible(p) => {
                check_point(&lp, &p);
                assert!(p[x] <= -2.0 + 1e-7);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbounded_above_variables() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(0.0, f64::INFINITY);
        let y = lp.add_var(0.0, f64::INFINITY);
        lp.add_row(vec![(x, 1.0), (y, 1.0)], RowOp::Ge, 10.0);
        lp.add_row(vec![(x, 1.0), (y, -1.0)], RowOp::Eq, 2.0);
        match solve_feasibility(&lp) {
            LpOutcome::Feasible(p) => check_point(&lp, &p),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn random_feasibility_agrees_with_sampled_witnesses() {
        // Random boxes and rows built around a known witness point must be
        // reported feasible; the returned point must satisfy everything.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let n = rng.gen_range(1..6);
            let mut lp = LinearProgram::default();
            let mut witness = Vec::new();
            for _ in 0..n {
                let lo = rng.gen_range(-3.0..1.0);
                let hi = lo + rng.gen_range(0.1..4.0);
                lp.add_var(lo, hi);
                witness.push(rng.gen_range(lo..hi));
            }
            for _ in 0..rng.gen_range(0..8) {
                let coeffs: Vec<(usize, f64)> =
                    (0..n).map(|j| (j, rng.gen_range(-2.0..2.0))).collect();
                let lhs: f64 = coeffs.iter().map(|&(j, a)| a * witness[j]).sum();
                let slack = rng.gen_range(0.0..1.0);
                if rng.gen_bool(0.5) {
                    lp.add_row(coeffs, RowOp::Le, lhs + slack);
                } else {
                    lp.add_row(coeffs, RowOp::Ge, lhs - slack);
                }
            }
            match solve_feasibility(&lp) {
                LpOutcome::Feasible(p) => check_point(&lp, &p),
                other => panic!("trial {trial}: witness exists but got {other:?}"),
            }
        }
    }
}
