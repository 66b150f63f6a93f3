use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Scalar, Tensor, TensorError};

/// Rescales every gradient by `max_norm / norm` when the joint norm exceeds
/// `max_norm`. Returns the norm measured before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.95,
            momentum: 0.9,
            epsilon: 1e-6,
        }
    }
}

/// RMSProp with momentum:
///
/// ```text
/// ms  <- decay * ms + (1 - decay) * g^2
/// mom <- momentum * mom - lr * g / sqrt(ms + eps)
/// p   <- p + mom
/// ```
#[derive(Clone, Debug)]
pub struct RmsPropMomentum<T = f32> {
    config: OptimizerConfig,
    mean_square: Vec<Tensor<T>>,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> RmsPropMomentum<T> {
    pub fn new(params: &ParamStore<T>, config: OptimizerConfig) -> Self {
        assert!(config.learning_rate > 0.0, "learning rate must be positive");
        assert!(config.decay > 0.0 && config.decay < 1.0);
        assert!((0.0..1.0).contains(&config.momentum));
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            config,
            mean_square: zeros(),
            velocity: zeros(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        assert!(lr > 0.0, "learning rate must be positive");
        self.config.learning_rate = lr;
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Applies one update. If any updated value would be non-finite, nothing
    /// changes and the offending parameter is named in the error.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &Gradients<T>,
    ) -> Result<(), TensorError> {
        let decay = T::of(self.config.decay);
        let one_minus = T::of(1.0 - self.config.decay);
        let mu = T::of(self.config.momentum);
        let lr = T::of(self.config.learning_rate);
        let eps = T::of(self.config.epsilon);

        let mut staged = Vec::with_capacity(params.len());
        for id in params.ids() {
            let g = grads.get(id).data();
            let p = params.get(id).data();
            let mut ms = self.mean_square[id.0].data().to_vec();
            let mut mom = self.velocity[id.0].data().to_vec();
            let mut np = p.to_vec();
            for i in 0..g.len() {
                ms[i] = decay * ms[i] + one_minus * g[i] * g[i];
                mom[i] = mu * mom[i] - lr * g[i] / (ms[i] + eps).sqrt();
                np[i] = p[i] + mom[i];
            }
            if !np.iter().chain(&mom).chain(&ms).all(|x| x.is_finite()) {
                return Err(TensorError::NonFiniteUpdate {
                    name: params.name(id).to_string(),
                });
            }
            staged.push((ms, mom, np));
        }
        for (id, (ms, mom, np)) in params.ids().zip(staged) {
            self.mean_square[id.0].data_mut().copy_from_slice(&ms);
            self.velocity[id.0].data_mut().copy_from_slice(&mom);
            params.get_mut(id).data_mut().copy_from_slice(&np);
        }
        Ok(())
    }
}
