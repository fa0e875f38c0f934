//! Adam with bias correction. Updated parameters and moment buffers are
//! quantized through f32 after every step, so any step's state survives a
//! 32-bit checkpoint round trip bit-exactly.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for one named parameter set, aligned with
/// the declaration order of the network's `named_trainable`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub params: AdamParams,
    pub names: Vec<String>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: AdamParams, named: &[(String, &Tensor)]) -> Self {
        AdamState {
            params,
            names: named.iter().map(|(n, _)| n.clone()).collect(),
            m: named.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: named.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            step: 0,
        }
    }

    /// One update over tensors aligned with this state's declaration order.
    pub fn apply(&mut self, tensors: &mut [(String, &mut Tensor)], grads: &[Vec<f64>]) {
        assert_eq!(tensors.len(), self.m.len(), "parameter count drifted");
        assert_eq!(grads.len(), self.m.len(), "gradient count drifted");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.params.beta1.powi(t);
        let bc2 = 1.0 - self.params.beta2.powi(t);
        for (idx, (name, tensor)) in tensors.iter_mut().enumerate() {
            debug_assert_eq!(*name, self.names[idx], "parameter order drifted");
            let g = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let data = tensor.data_mut();
            for i in 0..data.len() {
                m[i] = self.params.beta1 * m[i] + (1.0 - self.params.beta1) * g[i];
                v[i] = self.params.beta2 * v[i] + (1.0 - self.params.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.params.lr * m_hat / (v_hat.sqrt() + self.params.eps);
                // f32 quantization keeps checkpoints lossless.
                data[i] = data[i] as f32 as f64;
                m[i] = m[i] as f32 as f64;
                v[i] = v[i] as f32 as f64;
            }
        }
    }
}
