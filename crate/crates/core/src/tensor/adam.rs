use super::{Element, Kind, ParamSet};
use crate::error::{Error, Result};

/// ADAM with bias correction.  Moments are created lazily, one store per
/// weight, on the first step that weight receives a gradient.
#[derive(Debug, Clone)]
pub struct AdamState<T: Element = f32> {
    pub first_moment: Vec<Option<Vec<T>>>,
    pub second_moment: Vec<Option<Vec<T>>>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Element> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step_count: 0,
            lr,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// Updates one flat parameter slice given its moment slot.
    fn update_slice(&self, m: &mut [T], v: &mut [T], param: &mut [T], grad: &[T]) {
        let t = self.step_count as i32;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let bc1 = T::from_f64(1.0 - self.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(t));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.epsilon);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (T::ONE - b1) * g;
            v[i] = b2 * v[i] + (T::ONE - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One optimizer step over every trainable weight that holds a gradient.
pub fn adam_step<T: Element>(params: &mut ParamSet<T>, state: &mut AdamState<T>) -> Result<()> {
    let n = params.len();
    if state.first_moment.len() < n {
        state.first_moment.resize(n, None);
        state.second_moment.resize(n, None);
    }
    state.step_count += 1;
    for (slot, (name, kind, tensor)) in params.iter_mut().enumerate() {
        if kind != Kind::Weight || !tensor.requires_grad {
            continue;
        }
        let Some(grad) = tensor.grad().map(<[T]>::to_vec) else {
            continue;
        };
        let len = tensor.numel();
        let m = state.first_moment[slot].get_or_insert_with(|| vec![T::ZERO; len]);
        if m.len() != len {
            return Err(Error::shape(format!("ADAM moment for {name} has length {} but weight has {len}", m.len())));
        }
        let mut m = std::mem::take(m);
        let mut v = state.second_moment[slot].take().unwrap_or_else(|| vec![T::ZERO; len]);
        if v.len() != len {
            return Err(Error::shape(format!("ADAM moment for {name} is misaligned")));
        }
        state.update_slice(&mut m, &mut v, tensor.data_mut(), &grad);
        state.first_moment[slot] = Some(m);
        state.second_moment[slot] = Some(v);
    }
    Ok(())
}
