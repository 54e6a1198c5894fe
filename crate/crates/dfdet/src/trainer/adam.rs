//! Adam over the trainable entries of a parameter tree. Moment state lives
//! here in full precision regardless of the forward/backward precision.

use indexmap::IndexMap;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::backbone::params::ParamTree;
use crate::backbone::vit::GradStore;
use crate::error::{Error, Result};

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    moments: IndexMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(betas: (f64, f64), weight_decay: f64) -> Self {
        Self { beta1: betas.0, beta2: betas.1, eps: 1e-8, weight_decay, t: 0, moments: IndexMap::new() }
    }

    /// One update over every trainable entry that received a gradient.
    pub fn step(&mut self, tree: &mut ParamTree, grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);

        let names: Vec<String> =
            tree.iter().filter(|(_, e)| e.trainable).map(|(n, _)| n.to_string()).collect();
        // Gather (param data, grad, moments) per name, update independently,
        // write back. Each parameter's update is self-contained.
        let mut work: Vec<(String, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
        for name in names {
            let Some(g) = grads.get(&name) else { continue };
            let entry = tree
                .get(&name)
                .and_then(|e| e.data.as_ref())
                .ok_or_else(|| Error::Config(format!("trainable `{name}` has no data")))?;
            if g.len() != entry.len() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has {} values, parameter has {}",
                    g.len(),
                    entry.len()
                )));
            }
            let (m, v) = self
                .moments
                .shift_remove(&name)
                .unwrap_or_else(|| (vec![0.0; entry.len()], vec![0.0; entry.len()]));
            work.push((name, entry.clone(), g.to_vec(), m, v));
        }

        let (beta1, beta2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let update = |(name, mut theta, grad, mut m, mut v): (
            String,
            Vec<f64>,
            Vec<f64>,
            Vec<f64>,
            Vec<f64>,
        )| {
            for i in 0..theta.len() {
                let g = grad[i] + wd * theta[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                theta[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            (name, theta, m, v)
        };
        #[cfg(feature = "parallel")]
        let updated: Vec<_> = work.into_par_iter().map(update).collect();
        #[cfg(not(feature = "parallel"))]
        let updated: Vec<_> = work.into_iter().map(update).collect();

        for (name, theta, m, v) in updated {
            tree.get_mut(&name).unwrap().data = Some(theta);
            self.moments.insert(name, (m, v));
        }
        Ok(())
    }
}
