use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn new(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Matrix<T>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
        }
    }
}

/// One bias-corrected Adam update. Parameters whose gradient is `None`
/// did not take part in the loss and are left untouched.
pub fn adam_step<T: Scalar>(params: &mut [Matrix<T>], grads: &[Option<Matrix<T>>], state: &mut AdamState<T>, hyper: &AdamHyper) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape {
            operand: "gradients",
            expected: params.len().to_string(),
            actual: grads.len().to_string(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                operand: "gradient",
                expected: format!("{:?}", p.shape()),
                actual: format!("{:?}", g.shape()),
            });
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gj.as_f64();
            let mj = hyper.beta1 * m[j].as_f64() + (1.0 - hyper.beta1) * gj;
            let vj = hyper.beta2 * v[j].as_f64() + (1.0 - hyper.beta2) * gj * gj;
            m[j] = T::of(mj);
            v[j] = T::of(vj);
            let update = hyper.learning_rate * (mj / c1) / ((vj / c2).sqrt() + hyper.epsilon);
            *w = T::of(w.as_f64() - update);
        }
    }
    Ok(())
}
