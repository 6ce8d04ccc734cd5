use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CustomOp, Graph, Var};
use crate::tensor::Tensor;

use super::operator::DeqOperator;
use super::solver::{solve, DeqTrace, SolverConfig, SolverKind};

/// Terms of the truncated Neumann series used when the adjoint solve fails.
pub const NEUMANN_TERMS: usize = 25;

/// Collects the traces of adjoint solves run during backward passes.
pub type TraceSink = Rc<RefCell<Vec<DeqTrace>>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Solver {
    #[serde(flatten)]
    pub config: SolverConfig,
    pub kind: SolverKind,
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            config: SolverConfig::default(),
            kind: SolverKind::Anderson,
        }
    }
}

/// Equilibrium of `op` over `sources` (each `[L_i×c]`), returned per source.
///
/// Forward runs the solver outside the tape; the result enters the graph as
/// a single node whose backward solves the adjoint fixed point
/// `g = ∂L/∂z* + (∂f/∂z)ᵀ g` and pushes `g` through one application of `f`.
pub fn deq_fuse(
    g: &mut Graph,
    w: &[Var],
    op: &DeqOperator,
    sources: &[Var],
    solver: &Solver,
    sink: Option<&TraceSink>,
) -> Result<(Vec<Var>, DeqTrace)> {
    if sources.len() != op.sources || w.len() != op.param_ids().len() {
        return Err(Error::Config(format!(
            "DEQ operator expects {} sources and {} weights, got {} and {}",
            op.sources,
            op.param_ids().len(),
            sources.len(),
            w.len()
        )));
    }
    for &s in sources {
        let shape = g.shape(s);
        if shape.len() != 2 || shape[1] != op.c {
            return Err(Error::shape("deq_fuse source", shape, &[0, op.c]));
        }
    }
    let x: Vec<Tensor> = sources.iter().map(|&v| g.value(v).clone()).collect();
    let params: Vec<Tensor> = w.iter().map(|&v| g.value(v).clone()).collect();
    let (z_star, trace) = op.solve_values(&params, &x, &solver.config, solver.kind)?;
    let lens: Vec<usize> = x.iter().map(|t| t.shape()[0]).collect();
    let total: usize = lens.iter().sum();
    let flat: Vec<f64> = z_star.iter().flat_map(|t| t.data().to_vec()).collect();
    let value = Tensor::new(vec![total, op.c], flat)?;

    let backward = ImplicitBackward {
        op: op.clone(),
        x,
        params,
        z_star,
        solver: *solver,
        forward_converged: trace.converged,
        sink: sink.cloned(),
    };
    let inputs: Vec<Var> = sources.iter().chain(w).copied().collect();
    let node = g.custom(&inputs, value, Box::new(backward));
    Ok((g.split(node, 0, &lens)?, trace))
}

struct ImplicitBackward {
    op: DeqOperator,
    x: Vec<Tensor>,
    params: Vec<Tensor>,
    z_star: Vec<Tensor>,
    solver: Solver,
    forward_converged: bool,
    sink: Option<TraceSink>,
}

impl ImplicitBackward {
    /// Graph of `f(z*)` where only the leaves flagged `grad_*` require gradients.
    fn tape(&self, grad_z: bool, grad_rest: bool) -> Result<(Graph, Vec<Var>, Vec<Var>, Var, Var)> {
        let mut g = Graph::new();
        let w: Vec<Var> = self.params.iter().map(|t| g.leaf(t.clone(), grad_rest)).collect();
        let x: Vec<Var> = self.x.iter().map(|t| g.leaf(t.clone(), grad_rest)).collect();
        let blocks: Vec<Var> = self.z_star.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let z_cat = g.concat(&blocks, 0)?;
        let z = g.leaf(g.value(z_cat).clone(), grad_z);
        let lens: Vec<usize> = self.z_star.iter().map(|t| t.shape()[0]).collect();
        let zs = g.split(z, 0, &lens)?;
        let out = self.op.apply(&mut g, &w, &zs, &x)?;
        let out = g.concat(&out, 0)?;
        Ok((g, w, x, z, out))
    }

    fn adjoint(&self, grad_out: &Tensor) -> Result<(Tensor, DeqTrace)> {
        let (g, _, _, z, out) = self.tape(true, false)?;
        let shape = grad_out.shape().to_vec();
        let jt = |v: &[f64]| -> Result<Vec<f64>> {
            let seed = Tensor::new(shape.clone(), v.to_vec())?;
            let grads = g.vjp(out, &seed)?;
            Ok(match &grads[z.index()] {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; v.len()],
            })
        };
        let b = grad_out.data();
        let map = |v: &[f64]| -> Result<Vec<f64>> {
            Ok(jt(v)?.iter().zip(b).map(|(j, b)| j + b).collect())
        };
        let solved = solve(map, b.to_vec(), &self.solver.config, self.solver.kind);
        let (adj, mut trace) = match solved {
            Ok((adj, trace)) if trace.converged => (adj, trace),
            Ok((_, trace)) => (self.neumann(b, &jt)?, trace),
            Err(Error::Divergence { trace }) => (self.neumann(b, &jt)?, *trace),
            Err(e) => return Err(e),
        };
        trace.solver = format!("{}-adjoint", trace.solver);
        if !trace.converged {
            trace
                .warnings
                .push(format!("adjoint solve did not converge; used {NEUMANN_TERMS}-term Neumann series"));
        }
        if !self.forward_converged {
            trace
                .warnings
                .push("forward solve did not converge; gradient is taken at the best iterate".into());
        }
        Ok((Tensor::new(shape, adj)?, trace))
    }

    /// `Σ_{k<K} (Jᵀ)^k b`.
    fn neumann(&self, b: &[f64], jt: &dyn Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
        let mut term = b.to_vec();
        let mut acc = b.to_vec();
        for _ in 1..NEUMANN_TERMS {
            term = jt(&term)?;
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += t;
            }
        }
        Ok(acc)
    }
}

impl CustomOp for ImplicitBackward {
    fn name(&self) -> &'static str {
        "deq_fuse"
    }

    fn backward(&self, grad_out: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (adj, trace) = self.adjoint(grad_out)?;
        if let Some(sink) = &self.sink {
            sink.borrow_mut().push(trace);
        }
        let (g, w, x, _, out) = self.tape(false, true)?;
        let grads = g.vjp(out, &adj)?;
        let pick = |v: &Var| {
            Some(grads[v.index()].clone().unwrap_or_else(|| Tensor::zeros(g.shape(*v))))
        };
        Ok(x.iter().map(pick).chain(w.iter().map(pick)).collect())
    }
}
