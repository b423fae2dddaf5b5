use super::{AdError, Gradients, ParamId, ParamStore, Scalar, Tensor};

/// Dense per-parameter gradient accumulator aligned with a [`ParamStore`].
/// Batch training sums per-sentence gradients into it in a fixed order, so
/// results do not depend on which thread produced which summand.
#[derive(Debug, Clone)]
pub struct GradAccum<F> {
    grads: Vec<Tensor<F>>,
}

impl<F: Scalar> GradAccum<F> {
    pub fn zeros(store: &ParamStore<F>) -> Self {
        GradAccum {
            grads: store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape()))
                .collect(),
        }
    }

    pub fn add(&mut self, grads: &Gradients<F>) {
        for (id, g) in grads.iter() {
            let acc = &mut self.grads[id.0];
            assert_eq!(acc.shape(), g.shape(), "gradient shape drift");
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.grads[id.0]
    }

    /// L2 norm over all gradients jointly.
    pub fn global_norm(&self) -> F {
        self.grads
            .iter()
            .map(|g| g.sq_norm())
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }
}

/// Adam with global-norm gradient clipping applied first. The learning
/// rate is public so the training loop can decay it on dev plateaus.
#[derive(Debug, Clone)]
pub struct OptState<F> {
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    step: u64,
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Scalar> OptState<F> {
    pub fn new(store: &ParamStore<F>, lr: F, beta1: F, beta2: F, eps: F) -> Self {
        let zeros: Vec<Tensor<F>> = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        OptState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `clip` bounds the global gradient norm before the Adam
    /// moment updates; `None` disables clipping.
    pub fn adam_step(
        &mut self,
        store: &mut ParamStore<F>,
        grads: &GradAccum<F>,
        clip: Option<F>,
    ) -> Result<(), AdError> {
        for id in store.ids() {
            if !grads.get(id).is_all_finite() {
                return Err(AdError::NonFiniteGradient {
                    param: store.name(id).to_string(),
                });
            }
        }
        let norm = grads.global_norm();
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => F::one(),
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        for idx in 0..store.len() {
            let id = ParamId(idx);
            let g = grads.get(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let p = store.value_mut(id);
            for i in 0..p.len() {
                let gi = g.data()[i] * scale;
                let mi = self.beta1 * m.data()[i] + (F::one() - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (F::one() - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.data_mut()[i] = p.data()[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
