//! Fixed-point solvers on flat vectors: Anderson acceleration with a damped
//! Picard fallback, and plain damped Picard iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator guard in the relative residual `‖f(z) − z‖ / (‖z‖ + ε)`.
pub const RESIDUAL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub anderson_memory: usize,
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 40,
            anderson_memory: 5,
            damping: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("solver tol must be positive, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::Config("solver max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("solver damping must be in (0, 1], got {}", self.damping)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Anderson,
    Picard,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Anderson => "anderson",
            SolverKind::Picard => "picard",
        }
    }
}

/// Diagnostics of one fixed-point solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeqTrace {
    pub solver: String,
    pub iterations: usize,
    /// Relative residual of each evaluated iterate.
    pub residuals: Vec<f64>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DeqTrace {
    fn new(kind: SolverKind) -> Self {
        Self {
            solver: kind.name().to_string(),
            iterations: 0,
            residuals: Vec::new(),
            converged: false,
            warnings: Vec::new(),
        }
    }

    pub fn last_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn relative_residual(z: &[f64], fz: &[f64]) -> f64 {
    let diff = z.iter().zip(fz).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
    diff / (norm(z) + RESIDUAL_EPS)
}

/// Iterate `z ← f(z)` from `z0` until the relative residual drops below
/// `cfg.tol`. On non-convergence the lowest-residual iterate is returned
/// with `trace.converged == false`.
pub fn solve<F>(mut f: F, z0: Vec<f64>, cfg: &SolverConfig, kind: SolverKind) -> Result<(Vec<f64>, DeqTrace)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut trace = DeqTrace::new(kind);
    let mut z = z0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut hist = History::new(cfg.anderson_memory.max(1));
    let beta = cfg.damping;

    for _ in 0..cfg.max_iter {
        let fz = f(&z)?;
        if fz.len() != z.len() {
            return Err(Error::shape("fixed-point map", &[z.len()], &[fz.len()]));
        }
        let r = relative_residual(&z, &fz);
        trace.iterations += 1;
        trace.residuals.push(r);
        if !r.is_finite() || fz.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                trace: Box::new(trace),
            });
        }
        if best.as_ref().map_or(true, |(b, _)| r < *b) {
            best = Some((r, z.clone()));
        }
        if r < cfg.tol {
            trace.converged = true;
            return Ok((z, trace));
        }

        let damped: Vec<f64> = z.iter().zip(&fz).map(|(a, b)| (1.0 - beta) * a + beta * b).collect();
        z = match kind {
            SolverKind::Picard => damped,
            SolverKind::Anderson => {
                hist.push(z, fz);
                hist.extrapolate(beta).unwrap_or(damped)
            }
        };
    }
    let (_, z_best) = best.expect("max_iter >= 1");
    Ok((z_best, trace))
}

/// Sliding window of `(z, f(z))` pairs for Anderson mixing.
struct History {
    cap: usize,
    zs: Vec<Vec<f64>>,
    fs: Vec<Vec<f64>>,
}

impl History {
    fn new(memory: usize) -> Self {
        Self {
            cap: memory + 1,
            zs: Vec::new(),
            fs: Vec::new(),
        }
    }

    fn push(&mut self, z: Vec<f64>, fz: Vec<f64>) {
        if self.zs.len() == self.cap {
            self.zs.remove(0);
            self.fs.remove(0);
        }
        self.zs.push(z);
        self.fs.push(fz);
    }

    /// Type-II Anderson step in difference form. `None` when there is no
    /// usable history or the least-squares system is ill-conditioned even
    /// after discarding old columns.
    fn extrapolate(&self, beta: f64) -> Option<Vec<f64>> {
        let n = self.zs.len();
        if n < 2 {
            return None;
        }
        let resid = |i: usize| -> Vec<f64> {
            self.fs[i].iter().zip(&self.zs[i]).map(|(g, z)| g - z).collect()
        };
        let res: Vec<Vec<f64>> = (0..n).map(resid).collect();
        let last = n - 1;

        // Drop the oldest columns until the Gram system is well conditioned.
        for first in 0..last {
            let cols: Vec<usize> = (first..last).collect();
            let m = cols.len();
            let dfs: Vec<Vec<f64>> = cols
                .iter()
                .map(|&i| res[i + 1].iter().zip(&res[i]).map(|(a, b)| a - b).collect())
                .collect();
            let mut gram = vec![0.0; m * m];
            let mut rhs = vec![0.0; m];
            for a in 0..m {
                for b in a..m {
                    let v: f64 = dfs[a].iter().zip(&dfs[b]).map(|(x, y)| x * y).sum();
                    gram[a * m + b] = v;
                    gram[b * m + a] = v;
                }
                rhs[a] = dfs[a].iter().zip(&res[last]).map(|(x, y)| x * y).sum();
            }
            let Some(gamma) = cholesky_solve(&mut gram, &mut rhs, m) else { continue };

            let mut z_bar = self.zs[last].clone();
            let mut g_bar = self.fs[last].clone();
            for (c, &i) in cols.iter().enumerate() {
                let gm = gamma[c];
                for k in 0..z_bar.len() {
                    z_bar[k] -= gm * (self.zs[i + 1][k] - self.zs[i][k]);
                    g_bar[k] -= gm * (self.fs[i + 1][k] - self.fs[i][k]);
                }
            }
            let next: Vec<f64> = z_bar
                .iter()
                .zip(&g_bar)
                .map(|(a, b)| (1.0 - beta) * a + beta * b)
                .collect();
            if next.iter().all(|v| v.is_finite()) {
                return Some(next);
            }
        }
        None
    }
}

/// Solve the symmetric positive-definite system in place; `None` if a pivot
/// is tiny relative to the diagonal scale.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let floor = scale * 1e-12;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= floor {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    // L y = b, then Lᵀ x = y.
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Some(b.to_vec())
}
