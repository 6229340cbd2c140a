//! Parameter update rules.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adadelta { rho: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adadelta { rho: 0.95, eps: 1e-6 }
    }
}

/// Running averages of squared gradients and squared updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdadeltaState {
    sq_grad: Vec<Tensor>,
    sq_delta: Vec<Tensor>,
}

/// One ADADELTA update:
///
/// ```text
/// E[g^2]  <- rho E[g^2] + (1 - rho) g^2
/// dx      <- sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
/// E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
/// x       <- x - lr * dx
/// ```
///
/// The state is created on the first call.
pub fn adadelta_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdadeltaState,
    lr: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    check_grads(params, grads)?;
    if state.sq_grad.is_empty() {
        state.sq_grad = params.tensors().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        state.sq_delta = state.sq_grad.clone();
    }
    if state.sq_grad.len() != params.len()
        || params
            .tensors()
            .zip(&state.sq_grad)
            .any(|(p, s)| p.shape() != s.shape())
    {
        return Err(Error::State("ADADELTA state does not match parameters".into()));
    }
    for (((p, g), sg), sd) in params
        .tensors_mut()
        .zip(grads)
        .zip(state.sq_grad.iter_mut())
        .zip(state.sq_delta.iter_mut())
    {
        for (((x, &gv), eg), ed) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(sg.data_mut().iter_mut())
            .zip(sd.data_mut().iter_mut())
        {
            *eg = rho * *eg + (1.0 - rho) * gv * gv;
            let dx = libm::sqrt(*ed + eps) / libm::sqrt(*eg + eps) * gv;
            *ed = rho * *ed + (1.0 - rho) * dx * dx;
            *x -= lr * dx;
        }
    }
    params.iteration += 1;
    finite(params)
}

/// Plain gradient descent `x <- x - lr g`.
pub fn sgd_step(params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
    check_grads(params, grads)?;
    for (p, g) in params.tensors_mut().zip(grads) {
        for (x, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * gv;
        }
    }
    params.iteration += 1;
    finite(params)
}

fn check_grads(params: &ParamStore, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::State(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::State(format!(
                "gradient {:?} for {name} {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    Ok(())
}

fn finite(params: &ParamStore) -> Result<()> {
    if params.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("optimizer update"))
    }
}

/// An optimizer with its learning rate and state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    state: AdadeltaState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            state: AdadeltaState::default(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        match self.kind {
            OptimizerKind::Adadelta { rho, eps } => {
                adadelta_step(params, grads, &mut self.state, self.lr, rho, eps)
            }
            OptimizerKind::Sgd => sgd_step(params, grads, self.lr),
        }
    }
}
