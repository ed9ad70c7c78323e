//! Small fully-connected networks with exact reverse-mode gradients.
//!
//! Hidden layers use `tanh`, the output layer is linear. All parameters live
//! in one flat buffer (per layer: row-major weights `[out][in]`, then biases),
//! which keeps optimizers, soft updates and perturbation methods trivial.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
}

/// Activations recorded by [`Mlp::forward_trace`], input first.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    layers: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.layers.last().expect("trace has input")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Real> Mlp<T> {
    /// All-zero network.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        Self {
            sizes: sizes.to_vec(),
            params: vec![T::zero(); param_count(sizes)],
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = w[0] * w[1] + w[1];
            for p in &mut net.params[off..off + n] {
                *p = T::lit(rng.random_range(-bound..bound));
            }
            off += n;
        }
        net
    }

    pub fn from_params(sizes: &[usize], params: Vec<T>) -> Result<Self> {
        if sizes.len() < 2 || params.len() != param_count(sizes) {
            return Err(Error::Dimension(format!(
                "{} parameters do not fit layer sizes {sizes:?}",
                params.len()
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let next = self.layer(off, w[0], w[1], &cur, l < last);
            off += w[0] * w[1] + w[1];
            cur = next;
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[T]) -> Result<Trace<T>> {
        self.check_input(x)?;
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(x.to_vec());
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let next = self.layer(off, w[0], w[1], layers.last().unwrap(), l < last);
            off += w[0] * w[1] + w[1];
            layers.push(next);
        }
        Ok(Trace { layers })
    }

    fn layer(&self, off: usize, n_in: usize, n_out: usize, x: &[T], hidden: bool) -> Vec<T> {
        let weights = &self.params[off..off + n_in * n_out];
        let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        weights
            .chunks_exact(n_in)
            .zip(bias)
            .map(|(row, &b)| {
                let z = row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi);
                if hidden {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    /// Adds the parameter gradient of `<grad_out, f(x)>` into `grads` and
    /// returns the gradient with respect to the input.
    pub fn backward_into(&self, trace: &Trace<T>, grad_out: &[T], grads: &mut [T]) -> Result<Vec<T>> {
        if grad_out.len() != self.output_dim() || grads.len() != self.params.len() {
            return Err(Error::Dimension("backward buffer sizes".into()));
        }
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &trace.layers[l];
            let off = offsets[l];
            {
                let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (o, &d) in delta.iter().enumerate() {
                    gb[o] = gb[o] + d;
                    for (g, &xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g = *g + d * xi;
                    }
                }
            }
            let weights = &self.params[off..off + n_in * n_out];
            let mut prev = vec![T::zero(); n_in];
            for (o, &d) in delta.iter().enumerate() {
                for (p, &w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *p = *p + d * w;
                }
            }
            if l > 0 {
                // input of layer l is tanh output of layer l-1
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p = *p * (T::one() - a * a);
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Parameter gradient and input gradient of `<grad_out, f(x)>`.
    pub fn backward(&self, x: &[T], grad_out: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let trace = self.forward_trace(x)?;
        let mut grads = vec![T::zero(); self.params.len()];
        let gin = self.backward_into(&trace, grad_out, &mut grads)?;
        Ok((grads, gin))
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, online: &Self, tau: T) -> Result<()> {
        soft_update(&mut self.params, &online.params, tau)
    }
}

/// Elementwise convex combination `target <- tau * online + (1 - tau) * target`.
pub fn soft_update<T: Real>(target: &mut [T], online: &[T], tau: T) -> Result<()> {
    if target.len() != online.len() {
        return Err(Error::Dimension(format!(
            "soft update of {} params from {}",
            target.len(),
            online.len()
        )));
    }
    if !(tau > T::zero() && tau <= T::one()) {
        return Err(Error::InvalidArgument("tau must be in (0, 1]".into()));
    }
    let keep = T::one() - tau;
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + keep * *t;
    }
    Ok(())
}

/// In-place parameter update from a gradient.
pub trait Optimizer<T> {
    fn step(&mut self, params: &mut [T], grads: &[T]);
}

/// Plain gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd<T> {
    pub lr: T,
}

impl<T: Real> Optimizer<T> for Sgd<T> {
    fn step(&mut self, params: &mut [T], grads: &[T]) {
        for (p, &g) in params.iter_mut().zip(grads) {
            *p = *p - self.lr * g;
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: T, n: usize) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut [T], grads: &[T]) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (T::one() - self.beta1) * g;
            *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p = *p - self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f64>::zeros(&[3, 5, 2]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let net32 = Mlp::<f32>::zeros(&[2, 1]);
        assert_eq!(net32.forward(&[7.0, 1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn linear_unit_by_hand() {
        let net = Mlp::from_params(&[1, 1], vec![2.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![6.0]);
        let (g, gin) = net.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g, vec![3.0, 1.0]);
        assert_eq!(gin, vec![2.0]);
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::<f64>::zeros(&[2, 1]);
        assert!(net.forward(&[1.0]).is_err());
        assert!(Mlp::<f64>::from_params(&[2, 1], vec![0.0; 2]).is_err());
        let mut a = Mlp::<f64>::zeros(&[2, 1]);
        assert!(a.soft_update_from(&Mlp::zeros(&[3, 1]), 0.5).is_err());
    }

    fn fd_check(sizes: &[usize], seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::<f64>::new(sizes, &mut rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let go: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (g, _) = net.backward(&x, &go).unwrap();
        let f = |n: &Mlp<f64>| -> f64 {
            n.forward(&x).unwrap().iter().zip(&go).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..net.num_params() {
            let mut p = net.clone();
            p.params_mut()[k] += h;
            let mut q = net.clone();
            q.params_mut()[k] -= h;
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            let err = (fd - g[k]).abs() / (fd.abs() + g[k].abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        assert!(fd_check(&[8, 16, 4], 1) < 1e-4);
    }

    #[test]
    fn soft_update_rules() {
        let online = Mlp::from_params(&[1, 1], vec![1.0, 1.0]).unwrap();
        let mut target = Mlp::<f64>::zeros(&[1, 1]);
        target.soft_update_from(&online, 0.01).unwrap();
        assert!((target.params()[0] - 0.01).abs() < 1e-15);
        target.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(target.params(), online.params());
        assert!(soft_update(&mut [0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn soft_update_converges_geometrically() {
        let mut t = vec![0.0f64];
        let tau = 0.1;
        for k in 1..=50 {
            soft_update(&mut t, &[1.0], tau).unwrap();
            let expected = 1.0 - (1.0 - tau).powi(k);
            assert!((t[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut x = vec![5.0f64, -3.0];
        let mut opt = Adam::new(0.1, 2);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }
}
