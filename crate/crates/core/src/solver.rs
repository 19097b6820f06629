//! Restarted GMRES and the conservative implicit Euler stepper for
//! `d/dt(M(t)α) + S(t)α = r(t)`.
//!
//! One step solves `(M^{n+1} + τS^{n+1})α^{n+1} = M^n α^n + τ r^{n+1}`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{AssembledSystem, SparseMatrix, SystemAssembler};
use crate::{Error, Result};

/// Identifier of the time discretisation, recorded in reports.
pub const SCHEME_ID: &str = "conservative-IE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSolverConfig {
    pub relative_tolerance: f64,
    pub max_iterations: usize,
    pub restart: usize,
    pub preconditioner: Preconditioner,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-10,
            max_iterations: 2000,
            restart: 50,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

impl LinearSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative_tolerance > 0.0) {
            return Err(Error::Config(format!(
                "solver tolerance must be positive, got {}",
                self.relative_tolerance
            )));
        }
        if self.restart == 0 {
            return Err(Error::Config("GMRES restart must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one linear solve.
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
    /// True relative residual at the end of every restart cycle.
    pub restart_residuals: Vec<f64>,
}

/// `y = A x` with a dimension check.
pub fn spmv(a: &SparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: x.len(),
        });
    }
    Ok(a.mul_vec(x))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Right-preconditioned restarted GMRES; the stopping test uses the true
/// residual `‖b − Ax‖ ≤ tol·‖b‖`.
pub fn gmres_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    cfg: &LinearSolverConfig,
) -> Result<(Vec<f64>, SolveStats)> {
    cfg.validate()?;
    let n = a.dim();
    if b.len() != n || x0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if b.len() != n { b.len() } else { x0.len() },
        });
    }
    let inv_diag: Vec<f64> = match cfg.preconditioner {
        Preconditioner::None => vec![1.0; n],
        Preconditioner::Jacobi => a
            .diagonal()
            .iter()
            .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
    };
    let bnorm = norm(b);
    let mut stats = SolveStats::default();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], stats));
    }
    let target = cfg.relative_tolerance * bnorm;
    let m = cfg.restart.min(n.max(1));
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let residual = |x: &[f64], r: &mut [f64]| {
        a.mul_vec_into(x, r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        norm(r)
    };

    let mut beta = residual(&x, &mut r);
    loop {
        stats.residual = beta / bnorm;
        if beta <= target {
            return Ok((x, stats));
        }
        if stats.iterations >= cfg.max_iterations {
            return Err(Error::SolverFailure {
                iterations: stats.iterations,
                residual: stats.residual,
            });
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && stats.iterations < cfg.max_iterations {
            for ((zi, vi), di) in z.iter_mut().zip(&basis[k]).zip(&inv_diag) {
                *zi = vi * di;
            }
            a.mul_vec_into(&z, &mut w);
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[i][k] = hij;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= hij * vi);
            }
            let hnext = norm(&w);
            h[k + 1][k] = hnext;
            for i in 0..k {
                let tmp = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = tmp;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            (cs[k], sn[k]) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (h[k][k] / denom, h[k + 1][k] / denom)
            };
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            stats.iterations += 1;
            k += 1;
            if g[k].abs() <= target || hnext == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        // back substitution for the Krylov coefficients
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = if h[i][i] != 0.0 {
                (g[i] - s) / h[i][i]
            } else {
                0.0
            };
        }
        z.iter_mut().for_each(|v| *v = 0.0);
        for (yi, v) in y.iter().zip(&basis) {
            z.iter_mut().zip(v).for_each(|(zi, vi)| *zi += yi * vi);
        }
        x.iter_mut()
            .zip(&z)
            .zip(&inv_diag)
            .for_each(|((xi, zi), di)| *xi += zi * di);
        beta = residual(&x, &mut r);
        stats.restart_residuals.push(beta / bnorm);
    }
}

/// A time-dependent linear system `d/dt(M α) + S α = r`.
pub trait EvolutionSystem {
    fn dim(&self) -> usize;
    fn mass(&self, t: f64) -> Result<SparseMatrix>;
    fn assemble(&self, t: f64) -> Result<AssembledSystem>;
}

impl EvolutionSystem for SystemAssembler<'_> {
    fn dim(&self) -> usize {
        SystemAssembler::dim(self)
    }
    fn mass(&self, t: f64) -> Result<SparseMatrix> {
        SystemAssembler::mass(self, t)
    }
    fn assemble(&self, t: f64) -> Result<AssembledSystem> {
        SystemAssembler::assemble(self, t)
    }
}

/// Adapter turning a closure `t ↦ (M, S, r)` into an [`EvolutionSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64) -> Result<AssembledSystem>> FnSystem<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64) -> Result<AssembledSystem>> EvolutionSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn mass(&self, t: f64) -> Result<SparseMatrix> {
        Ok((self.f)(t)?.mass)
    }
    fn assemble(&self, t: f64) -> Result<AssembledSystem> {
        (self.f)(t)
    }
}

#[derive(Debug, Clone)]
pub struct TimeStepperState {
    pub t: f64,
    pub alpha: Vec<f64>,
    /// Mass matrix at `t`.
    pub mass: SparseMatrix,
    pub step_index: usize,
}

impl TimeStepperState {
    pub fn new<S: EvolutionSystem + ?Sized>(system: &S, t: f64, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != system.dim() {
            return Err(Error::Dimension {
                expected: system.dim(),
                got: alpha.len(),
            });
        }
        Ok(Self {
            t,
            mass: system.mass(t)?,
            alpha,
            step_index: 0,
        })
    }

    /// `1ᵀ M(t) α`, the discrete integral of the solution.
    pub fn total_mass(&self) -> f64 {
        self.mass.mul_vec(&self.alpha).iter().sum()
    }
}

/// Cumulative cost of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub gmres_iterations: usize,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

impl std::ops::AddAssign for StepStats {
    fn add_assign(&mut self, o: Self) {
        self.gmres_iterations += o.gmres_iterations;
        self.assembly_seconds += o.assembly_seconds;
        self.solve_seconds += o.solve_seconds;
    }
}

/// One conservative implicit Euler step of size `tau`.
pub fn implicit_euler_step<S: EvolutionSystem + ?Sized>(
    system: &S,
    state: &TimeStepperState,
    tau: f64,
    cfg: &LinearSolverConfig,
) -> Result<(TimeStepperState, StepStats)> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!(
            "time step must be positive, got {tau}"
        )));
    }
    let t = state.t + tau;
    let clock = Instant::now();
    let AssembledSystem {
        mass,
        stiffness,
        rhs,
    } = system.assemble(t)?;
    let lhs = mass.linear_combination(1.0, &stiffness, tau)?;
    let mut b = state.mass.mul_vec(&state.alpha);
    b.iter_mut().zip(&rhs).for_each(|(bi, ri)| *bi += tau * ri);
    let assembly_seconds = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let (alpha, solve) = gmres_solve(&lhs, &b, &state.alpha, cfg)?;
    let stats = StepStats {
        gmres_iterations: solve.iterations,
        assembly_seconds,
        solve_seconds: clock.elapsed().as_secs_f64(),
    };
    Ok((
        TimeStepperState {
            t,
            alpha,
            mass,
            step_index: state.step_index + 1,
        },
        stats,
    ))
}

/// Runs `num_steps` uniform steps from `t0` to `final_time`, calling
/// `observer` after every step.
pub fn integrate_with<S, O>(
    system: &S,
    alpha0: Vec<f64>,
    t0: f64,
    final_time: f64,
    num_steps: usize,
    cfg: &LinearSolverConfig,
    mut observer: O,
) -> Result<(TimeStepperState, StepStats)>
where
    S: EvolutionSystem + ?Sized,
    O: FnMut(&TimeStepperState) -> Result<()>,
{
    if num_steps == 0 {
        return Err(Error::Config("at least one time step is required".into()));
    }
    let tau = (final_time - t0) / num_steps as f64;
    let mut state = TimeStepperState::new(system, t0, alpha0)?;
    let mut total = StepStats::default();
    for n in 0..num_steps {
        let (mut next, stats) = implicit_euler_step(system, &state, tau, cfg)?;
        // avoid drift of t from repeated addition
        next.t = t0 + (n + 1) as f64 * tau;
        total += stats;
        observer(&next)?;
        state = next;
    }
    Ok((state, total))
}

pub fn integrate<S: EvolutionSystem + ?Sized>(
    system: &S,
    alpha0: Vec<f64>,
    final_time: f64,
    num_steps: usize,
    cfg: &LinearSolverConfig,
) -> Result<(TimeStepperState, StepStats)> {
    integrate_with(system, alpha0, 0.0, final_time, num_steps, cfg, |_| Ok(()))
}
