//! Minimal feed-forward network engine: softmax classifiers built from
//! Dense / ReLU / Conv2d / Flatten layers, with reverse-mode gradients.
//!
//! `forward` returns the output together with a [`ForwardTrace`] of cached
//! activations; `backward` consumes a trace and accumulates parameter
//! gradients. Holding two traces at once is what lets a consistency penalty
//! backpropagate through two forward passes of the same network. Use
//! [`Network::output`] when no gradient is needed; it caches nothing and is
//! safe to call concurrently on shared read-only parameters.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod schedule;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::LayerSpec;
pub use schedule::LRSchedule;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Feed-forward softmax classifier.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    /// Parameters in layer order; weight before bias for layers that have them.
    params: Vec<Tensor>,
    /// First parameter index for each layer (length = #layers + 1).
    param_offsets: Vec<usize>,
    seed: u64,
}

/// Activations cached by one forward pass: `activations[0]` is the input
/// batch, `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    activations: Vec<Tensor>,
}

impl ForwardTrace {
    /// Final softmax output of the traced pass.
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds at least the input")
    }
}

impl Network {
    /// Builds a network and initializes parameters (He-uniform weights, zero
    /// biases) from the seed. The terminal layer must be Softmax so every
    /// output row is a probability distribution.
    pub fn new(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        if !matches!(specs.last(), Some(LayerSpec::Softmax)) {
            return Err(Error::InvalidParameter(
                "terminal layer must be softmax".into(),
            ));
        }
        for (i, spec) in specs.iter().enumerate() {
            match *spec {
                LayerSpec::Softmax if i + 1 != specs.len() => {
                    return Err(Error::InvalidParameter(format!(
                        "softmax only allowed as the terminal layer, found at {i}"
                    )));
                }
                LayerSpec::Dense { input, output } if input == 0 || output == 0 => {
                    return Err(Error::InvalidParameter(format!(
                        "dense layer {i} has a zero dimension"
                    )));
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. }
                    if in_channels == 0 || out_channels == 0 || kernel == 0 =>
                {
                    return Err(Error::InvalidParameter(format!(
                        "conv2d layer {i} has a zero dimension"
                    )));
                }
                _ => {}
            }
        }
        let mut rng = rng::substream(seed, "net-init");
        let mut params = Vec::new();
        let mut param_offsets = Vec::with_capacity(specs.len() + 1);
        for spec in &specs {
            param_offsets.push(params.len());
            let shapes = spec.param_shapes();
            if shapes.is_empty() {
                continue;
            }
            let limit = (6.0 / spec.fan_in() as f64).sqrt();
            // weight: He-uniform
            let wlen: usize = shapes[0].iter().product();
            let wdata: Vec<f64> =
                (0..wlen).map(|_| limit * (2.0 * rng.gen::<f64>() - 1.0)).collect();
            params.push(Tensor::new(shapes[0].clone(), wdata)?);
            // bias: zeros
            params.push(Tensor::zeros(shapes[1].clone()));
        }
        param_offsets.push(params.len());
        Ok(Self { specs, params, param_offsets, seed })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad_or_init();
            p.zero_grad();
        }
    }

    /// Used by the checkpoint loader, which restores parameters verbatim.
    pub(crate) fn from_parts(specs: Vec<LayerSpec>, params: Vec<Tensor>, seed: u64) -> Result<Self> {
        let mut net = Self::new(specs, seed)?;
        if net.params.len() != params.len() {
            return Err(Error::Format("parameter list does not match layer specs".into()));
        }
        for (slot, loaded) in net.params.iter_mut().zip(params) {
            if slot.shape() != loaded.shape() {
                return Err(Error::Format("parameter shape does not match layer specs".into()));
            }
            *slot = loaded;
        }
        Ok(net)
    }

    fn shape_error(
        &self,
        layer_index: usize,
        expected: String,
        actual: &[usize],
    ) -> Error {
        Error::LayerShape {
            layer_index,
            layer_kind: self.specs[layer_index].kind_name(),
            expected,
            actual: format!("{actual:?}"),
        }
    }

    fn conv_dims(&self, layer_index: usize, shape: &[usize]) -> Result<layers::ConvDims> {
        let LayerSpec::Conv2d { in_channels, out_channels, kernel, padding } =
            self.specs[layer_index]
        else {
            unreachable!("conv_dims called on a non-conv layer");
        };
        if shape.len() != 4 || shape[1] != in_channels {
            return Err(self.shape_error(
                layer_index,
                format!("[batch, {in_channels}, h, w]"),
                shape,
            ));
        }
        let (in_h, in_w) = (shape[2], shape[3]);
        let span = kernel as isize - 2 * padding as isize;
        let (oh, ow) = (in_h as isize - span + 1, in_w as isize - span + 1);
        if oh < 1 || ow < 1 {
            return Err(self.shape_error(
                layer_index,
                format!("spatial dims of at least {span}x{span}"),
                shape,
            ));
        }
        Ok(layers::ConvDims {
            in_channels,
            out_channels,
            kernel,
            padding,
            in_h,
            in_w,
            out_h: oh as usize,
            out_w: ow as usize,
        })
    }

    fn run_forward(&self, batch: &Tensor, keep_trace: bool) -> Result<(Tensor, Vec<Tensor>)> {
        if batch.shape().is_empty() || batch.batch_len() == 0 {
            return Err(Error::InvalidData("empty batch".into()));
        }
        let mut activations: Vec<Tensor> = Vec::new();
        let mut current = batch.clone();
        current.clear_grad();
        for (index, spec) in self.specs.iter().enumerate() {
            if keep_trace {
                activations.push(current.clone());
            }
            let pstart = self.param_offsets[index];
            let next = match *spec {
                LayerSpec::Dense { input, .. } => {
                    let shape = current.shape();
                    if shape.len() != 2 || shape[1] != input {
                        return Err(self.shape_error(index, format!("[batch, {input}]"), shape));
                    }
                    layers::dense_forward(&self.params[pstart], &self.params[pstart + 1], &current)
                }
                LayerSpec::Relu => layers::relu_forward(&current),
                LayerSpec::Conv2d { .. } => {
                    let dims = self.conv_dims(index, current.shape())?;
                    layers::conv2d_forward(
                        &self.params[pstart],
                        &self.params[pstart + 1],
                        &current,
                        &dims,
                    )
                }
                LayerSpec::Flatten => {
                    let b = current.batch_len();
                    let w = current.row_len();
                    current.reshaped(vec![b, w])?
                }
                LayerSpec::Softmax => {
                    let shape = current.shape();
                    if shape.len() != 2 {
                        return Err(self.shape_error(index, "[batch, classes]".into(), shape));
                    }
                    layers::softmax_forward(&current)
                }
            };
            current = next;
        }
        if keep_trace {
            activations.push(current.clone());
        }
        Ok((current, activations))
    }

    /// Forward pass with activation caching; the returned trace feeds
    /// [`Network::backward`].
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        let (out, activations) = self.run_forward(batch, true)?;
        Ok((out, ForwardTrace { activations }))
    }

    /// Forward pass without caching, for evaluation.
    pub fn output(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.run_forward(batch, false)?.0)
    }

    /// Reverse pass: propagates `loss_grad_wrt_output` (gradient of the loss
    /// with respect to the softmax output in the trace) down the stack,
    /// accumulating into each parameter's grad slot. Returns the gradient
    /// with respect to the input batch. Gradients accumulate across calls;
    /// callers zero them between steps.
    pub fn backward(&mut self, trace: &ForwardTrace, loss_grad_wrt_output: &Tensor) -> Result<Tensor> {
        if trace.activations.len() != self.specs.len() + 1 {
            return Err(Error::InvalidState(format!(
                "trace has {} activations, network with {} layers needs {}",
                trace.activations.len(),
                self.specs.len(),
                self.specs.len() + 1
            )));
        }
        if loss_grad_wrt_output.shape() != trace.output().shape() {
            return Err(Error::Dimension(format!(
                "upstream gradient shape {:?} does not match traced output {:?}",
                loss_grad_wrt_output.shape(),
                trace.output().shape()
            )));
        }
        let mut upstream = loss_grad_wrt_output.clone();
        upstream.clear_grad();
        for index in (0..self.specs.len()).rev() {
            let input = &trace.activations[index];
            let pstart = self.param_offsets[index];
            upstream = match self.specs[index] {
                LayerSpec::Dense { .. } => {
                    let (dw, db, dx) =
                        layers::dense_backward(&self.params[pstart], input, &upstream);
                    self.params[pstart].accumulate_grad(&dw)?;
                    self.params[pstart + 1].accumulate_grad(&db)?;
                    dx
                }
                LayerSpec::Relu => layers::relu_backward(input, &upstream),
                LayerSpec::Conv2d { .. } => {
                    let dims = self.conv_dims(index, input.shape())?;
                    let (dw, db, dx) =
                        layers::conv2d_backward(&self.params[pstart], input, &upstream, &dims);
                    self.params[pstart].accumulate_grad(&dw)?;
                    self.params[pstart + 1].accumulate_grad(&db)?;
                    dx
                }
                LayerSpec::Flatten => upstream.reshaped(input.shape().to_vec())?,
                LayerSpec::Softmax => {
                    layers::softmax_backward(&trace.activations[index + 1], &upstream)
                }
            };
        }
        Ok(upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn softmax_oracle(z: &[f64]) -> Vec<f64> {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn softmax_net() -> Network {
        Network::new(vec![LayerSpec::Softmax], 0).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let net = softmax_net();
        let out = net.output(&Tensor::from_rows(1, 2, vec![0.0, 0.0]).unwrap()).unwrap();
        assert!((out.row(0)[0] - 0.5).abs() < 1e-15);
        assert!((out.row(0)[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_ln2_zero() {
        let net = softmax_net();
        let logits = Tensor::from_rows(1, 2, vec![std::f64::consts::LN_2, 0.0]).unwrap();
        let out = net.output(&logits).unwrap();
        assert!((out.row(0)[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((out.row(0)[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant() {
        let net = Network::new(
            vec![LayerSpec::Dense { input: 3, output: 5 }, LayerSpec::Softmax],
            11,
        )
        .unwrap();
        let x = Tensor::from_rows(2, 3, vec![0.3, -2.0, 5.0, 1.0, 1.0, 1.0]).unwrap();
        let out = net.output(&x).unwrap();
        for b in 0..2 {
            let row = out.row(b);
            assert!(row.iter().all(|&p| p >= 0.0));
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        // shift invariance on the raw softmax
        let z = [3.0, -1.0, 0.5];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.456).collect();
        let a = softmax_oracle(&z);
        let b = softmax_oracle(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_identity_forward_matches_hand_computation() {
        let mut net = Network::new(
            vec![LayerSpec::Dense { input: 2, output: 2 }, LayerSpec::Softmax],
            0,
        )
        .unwrap();
        // identity weights, zero bias
        net.params_mut()[0] = Tensor::from_rows(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        net.params_mut()[1] = Tensor::zeros(vec![2]);
        let out = net.output(&Tensor::from_rows(1, 2, vec![3.0, -1.0]).unwrap()).unwrap();
        let expected = softmax_oracle(&[3.0, -1.0]);
        for (a, b) in out.row(0).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_networks_are_bit_identical() {
        let specs = vec![
            LayerSpec::Dense { input: 4, output: 8 },
            LayerSpec::Relu,
            LayerSpec::Dense { input: 8, output: 3 },
            LayerSpec::Softmax,
        ];
        let a = Network::new(specs.clone(), 42).unwrap();
        let b = Network::new(specs.clone(), 42).unwrap();
        let c = Network::new(specs, 43).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.data(), pb.data());
        }
        assert!(a.params().iter().zip(c.params()).any(|(pa, pc)| pa.data() != pc.data()));
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let net = Network::new(
            vec![LayerSpec::Dense { input: 4, output: 2 }, LayerSpec::Softmax],
            0,
        )
        .unwrap();
        let err = net.output(&Tensor::from_rows(1, 3, vec![0.0; 3]).unwrap()).unwrap_err();
        match err {
            Error::LayerShape { layer_index, layer_kind, .. } => {
                assert_eq!(layer_index, 0);
                assert_eq!(layer_kind, "dense");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn terminal_layer_must_be_softmax() {
        assert!(Network::new(vec![LayerSpec::Dense { input: 2, output: 2 }], 0).is_err());
        assert!(Network::new(
            vec![LayerSpec::Softmax, LayerSpec::Relu, LayerSpec::Softmax],
            0
        )
        .is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_param_grads() {
        let mut net = Network::new(
            vec![
                LayerSpec::Dense { input: 3, output: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 4, output: 2 },
                LayerSpec::Softmax,
            ],
            5,
        )
        .unwrap();
        let x = Tensor::from_rows(2, 3, vec![0.1, 0.2, 0.3, -0.1, 0.0, 0.4]).unwrap();
        let (out, trace) = net.forward(&x).unwrap();
        net.zero_grads();
        net.backward(&trace, &Tensor::zeros(out.shape().to_vec())).unwrap();
        for p in net.params() {
            assert!(p.grad().unwrap().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut net = Network::new(
            vec![LayerSpec::Dense { input: 2, output: 2 }, LayerSpec::Softmax],
            1,
        )
        .unwrap();
        let x = Tensor::from_rows(1, 2, vec![1.0, -1.0]).unwrap();
        let (_, trace) = net.forward(&x).unwrap();
        let g = Tensor::from_rows(1, 2, vec![1.0, -2.0]).unwrap();
        net.zero_grads();
        net.backward(&trace, &g).unwrap();
        let once: Vec<f64> = net.params()[0].grad().unwrap().to_vec();
        net.backward(&trace, &g).unwrap();
        let twice: Vec<f64> = net.params()[0].grad().unwrap().to_vec();
        for (a, b) in once.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_mismatched_trace() {
        let mut net = Network::new(
            vec![LayerSpec::Dense { input: 2, output: 2 }, LayerSpec::Softmax],
            1,
        )
        .unwrap();
        let x = Tensor::from_rows(1, 2, vec![1.0, -1.0]).unwrap();
        let (_, trace) = net.forward(&x).unwrap();
        let bad = Tensor::from_rows(2, 2, vec![0.0; 4]).unwrap();
        assert!(net.backward(&trace, &bad).is_err());
    }

    #[test]
    fn flatten_and_conv_shapes() {
        let net = Network::new(
            vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 2 * 4 * 4, output: 3 },
                LayerSpec::Softmax,
            ],
            3,
        )
        .unwrap();
        let x = Tensor::zeros(vec![2, 1, 4, 4]);
        let out = net.output(&x).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
    }
}
