use crate::error::{Error, Result};
use crate::field::{FieldGrads, FieldParams};

/// Smallest value the loss weights may take after an update.
pub const LAMBDA_MIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken.
    pub t: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, len: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One update over parameters and gradients visited in the same order.
    pub fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = &'a f64>,
    ) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut n = 0;
        for (((p, &g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            n += 1;
        }
        debug_assert_eq!(n, self.m.len());
    }

    /// Joint update of network weights and loss weights. Aborts on a
    /// non-finite gradient; clamps both loss weights to [`LAMBDA_MIN`].
    pub fn step_field(
        &mut self,
        params: &mut FieldParams,
        grads: &FieldGrads,
        iteration: usize,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NumericAbort {
                iteration,
                message: "non-finite gradient".into(),
            });
        }
        self.step(params.values_mut(), grads.values());
        params.lambda1 = params.lambda1.max(LAMBDA_MIN);
        params.lambda2 = params.lambda2.max(LAMBDA_MIN);
        if !params.is_finite() {
            return Err(Error::NumericAbort {
                iteration,
                message: "non-finite parameter after update".into(),
            });
        }
        Ok(())
    }
}
