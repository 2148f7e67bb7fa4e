use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS_ADAM: f64 = 1e-8;

/// Moment accumulators for Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = Shape>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS_ADAM,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update to each `(param, grad)` pair, in the order the
    /// state was created with. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step<'a>(
        &mut self,
        pairs: impl IntoIterator<Item = (&'a mut Tensor, &'a Tensor)>,
        learning_rate: f64,
    ) -> Result<()> {
        let pairs: Vec<_> = pairs.into_iter().collect();
        if pairs.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameters for {} moment slots", pairs.len(), self.m.len()),
            ));
        }
        for (i, (p, g)) in pairs.iter().enumerate() {
            if p.shape() != g.shape() || g.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {i}: {} with gradient {}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }

        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, g), (m, v)) in pairs.into_iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
