use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::numerics::Tensor;

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: &[Tensor]) -> Self {
        let zeros = || shapes.iter().map(|t| Tensor::zeros(t.dims().to_vec())).collect();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    fn check(&self, names: &[String], params: &[Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::arg(format!("learning rate must be positive, got {lr}")));
        }
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((name, g), m) in names.iter().zip(grads).zip(&self.m) {
            if g.dims() != m.dims() {
                return Err(Error::shape(format!("gradient of {name} has dims {:?}, expected {:?}", g.dims(), m.dims())));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in {name} at index {i}: {}", g.data()[i])));
            }
        }
        Ok(())
    }

    /// One update of plain tensors.
    pub fn update(&mut self, names: &[String], params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        self.check(names, params, grads, lr)?;
        self.step += 1;
        for (i, p) in params.iter_mut().enumerate() {
            self.apply(i, p, &grads[i], lr);
        }
        Ok(())
    }

    /// One update of a network's parameters; values are rounded back to f32.
    pub fn step_store(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        self.check(store.names(), store.values(), grads, lr)?;
        self.step += 1;
        store.update_each(|i, _, p| self.apply(i, p, &grads[i], lr));
        Ok(())
    }

    fn apply(&mut self, i: usize, p: &mut Tensor, g: &Tensor, lr: f64) {
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
        for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * gv;
            v[j] = b2 * v[j] + (1.0 - b2) * gv * gv;
            *pv -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
        }
    }
}
