use crate::error::{Error, Result};
use crate::tensor::{Element, ParamStore, Tensor};

/// First/second moment buffers mirroring a [`ParamStore`], plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Result<Self> {
        let zeros = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }

    /// One bias-corrected Adam update using the gradients stored on `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>, hp: AdamParams, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer state tracks {} tensors, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = params.ids().collect();
        for &id in &ids {
            if params.get(id).grad_data().is_none() {
                return Err(Error::contract(format!(
                    "parameter {} has no gradient",
                    params.name(id)
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - hp.beta1.powi(t);
        let c2 = 1.0 - hp.beta2.powi(t);
        for (i, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id);
            let g: Vec<f64> = p.grad_data().unwrap().iter().map(|g| g.as_f64()).collect();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let mj = hp.beta1 * m[j].as_f64() + (1.0 - hp.beta1) * g[j];
                let vj = hp.beta2 * v[j].as_f64() + (1.0 - hp.beta2) * g[j] * g[j];
                m[j] = T::from_f64_lossy(mj);
                v[j] = T::from_f64_lossy(vj);
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + hp.eps);
                *w = T::from_f64_lossy(w.as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore<f64>, crate::tensor::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut s, id) = scalar_store(1.25);
        let mut adam = AdamState::new(&s).unwrap();
        for _ in 0..3 {
            s.zero_grad();
            s.get_mut(id).accumulate_grad(&[0.0]).unwrap();
            adam.step(&mut s, AdamParams::default(), 1e-3).unwrap();
        }
        assert_eq!(s.get(id).item().unwrap(), 1.25);
        assert_eq!(adam.t, 3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(1.0);
        let mut adam = AdamState::new(&s).unwrap();
        s.get_mut(id).accumulate_grad(&[0.5]).unwrap();
        adam.step(&mut s, AdamParams::default(), 1e-4).unwrap();
        let expected = 1.0 - 1e-4 * (0.5 / (0.5 + 1e-8));
        assert!((s.get(id).item().unwrap() - expected).abs() < 1e-15);

        // t = 2 with the same gradient: m_hat = g, sqrt(v_hat) = |g|
        let before = s.get(id).item().unwrap();
        adam.step(&mut s, AdamParams::default(), 1e-4).unwrap();
        let delta = before - s.get(id).item().unwrap();
        assert!((delta - 1e-4 * (0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!(adam.v[0].data()[0] >= 0.0);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let (mut s, _) = scalar_store(1.0);
        let mut adam = AdamState::new(&s).unwrap();
        assert!(matches!(
            adam.step(&mut s, AdamParams::default(), 1e-4),
            Err(Error::Contract(_))
        ));
        assert_eq!(adam.t, 0);
    }
}
