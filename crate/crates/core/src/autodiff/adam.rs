//! Adam optimizer with bias correction and exportable state.

use std::collections::BTreeMap;

use super::checkpoint::CkptEntry;
use super::param::ParamSet;
use crate::scalar::Scalar;

pub struct Adam<T: Scalar = f64> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over every parameter carrying a gradient. Parameters with
    /// no gradient buffer (frozen or disconnected) are left untouched.
    pub fn step(&mut self, params: &ParamSet<T>, lr: f64) {
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let lr_t = T::from_f64(lr);
        let eps = T::from_f64(self.eps);
        let inv_bc1 = T::from_f64(1.0 / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);

        for p in params.iter() {
            let Some(grad) = p.tensor.grad() else { continue };
            let m = self
                .m
                .entry(p.name.clone())
                .or_insert_with(|| vec![T::ZERO; grad.len()]);
            let v = self
                .v
                .entry(p.name.clone())
                .or_insert_with(|| vec![T::ZERO; grad.len()]);
            let mut data = p.tensor.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let m_hat = m[i] * inv_bc1;
                let v_hat = v[i] * inv_bc2;
                data[i] = data[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Serialize moment buffers and step count for resumable training.
    pub fn export_state(&self) -> Vec<CkptEntry> {
        let mut out = vec![CkptEntry {
            name: "adam.t".into(),
            shape: vec![],
            data: vec![self.step_count as f64],
        }];
        for (name, buf) in &self.m {
            out.push(CkptEntry {
                name: format!("adam.m.{name}"),
                shape: vec![buf.len()],
                data: buf.iter().map(|x| x.as_f64()).collect(),
            });
        }
        for (name, buf) in &self.v {
            out.push(CkptEntry {
                name: format!("adam.v.{name}"),
                shape: vec![buf.len()],
                data: buf.iter().map(|x| x.as_f64()).collect(),
            });
        }
        out
    }

    pub fn import_state(&mut self, entries: &[CkptEntry]) {
        for e in entries {
            if e.name == "adam.t" {
                self.step_count = e.data[0] as u64;
            } else if let Some(name) = e.name.strip_prefix("adam.m.") {
                self.m
                    .insert(name.into(), e.data.iter().map(|&x| T::from_f64(x)).collect());
            } else if let Some(name) = e.name.strip_prefix("adam.v.") {
                self.v
                    .insert(name.into(), e.data.iter().map(|&x| T::from_f64(x)).collect());
            }
        }
    }
}
