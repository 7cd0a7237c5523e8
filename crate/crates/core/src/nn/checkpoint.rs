//! Flat binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            4 bytes  "NLAB"
//! version          u32      currently 1
//! layer count      u32
//! per layer:       kind u8, then kind-specific dims
//!   dense (0):     input u32, output u32
//!   relu (1):      -
//!   conv2d (2):    in_channels u32, out_channels u32, kernel u32, padding u32
//!   flatten (3):   -
//!   softmax (4):   -
//! parameters:      f64 buffers in layer order (weight then bias)
//! optimizer:       step_count u64, learning_rate f64, beta1 f64, beta2 f64,
//!                  epsilon f64, weight_decay f64,
//!                  first-moment buffers, second-moment buffers (f64, same
//!                  layout as the parameters)
//! ```
//!
//! Save -> load -> save reproduces the file byte-for-byte.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{AdamState, LayerSpec, Network};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NLAB";
pub const CHECKPOINT_VERSION: u32 = 1;

fn kind_tag(spec: &LayerSpec) -> u8 {
    match spec {
        LayerSpec::Dense { .. } => 0,
        LayerSpec::Relu => 1,
        LayerSpec::Conv2d { .. } => 2,
        LayerSpec::Flatten => 3,
        LayerSpec::Softmax => 4,
    }
}

/// Serializes a network and its optimizer state.
pub fn encode_checkpoint(net: &Network, adam: &AdamState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.specs().len() as u32).to_le_bytes());
    for spec in net.specs() {
        out.push(kind_tag(spec));
        match *spec {
            LayerSpec::Dense { input, output } => {
                out.extend_from_slice(&(input as u32).to_le_bytes());
                out.extend_from_slice(&(output as u32).to_le_bytes());
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, padding } => {
                for dim in [in_channels, out_channels, kernel, padding] {
                    out.extend_from_slice(&(dim as u32).to_le_bytes());
                }
            }
            _ => {}
        }
    }
    for p in net.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&adam.step_count().to_le_bytes());
    for v in [
        adam.learning_rate(),
        adam.beta1(),
        adam.beta2(),
        adam.epsilon(),
        adam.weight_decay(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for buf in adam.first_moment().iter().chain(adam.second_moment()) {
        for v in buf {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated reading {what}: need {} bytes, have {}",
                self.pos + n,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_buffer(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(len * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Deserializes a checkpoint. The returned network carries seed 0: its
/// parameters come verbatim from the file, not from an initializer.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Network, AdamState)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let layer_count = cur.u32("layer count")? as usize;
    let mut specs = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let tag = cur.take(1, "layer kind")?[0];
        let spec = match tag {
            0 => LayerSpec::Dense {
                input: cur.u32("dense input")? as usize,
                output: cur.u32("dense output")? as usize,
            },
            1 => LayerSpec::Relu,
            2 => LayerSpec::Conv2d {
                in_channels: cur.u32("conv in_channels")? as usize,
                out_channels: cur.u32("conv out_channels")? as usize,
                kernel: cur.u32("conv kernel")? as usize,
                padding: cur.u32("conv padding")? as usize,
            },
            3 => LayerSpec::Flatten,
            4 => LayerSpec::Softmax,
            other => {
                return Err(Error::Format(format!(
                    "unknown layer kind tag {other} at layer {i}"
                )));
            }
        };
        specs.push(spec);
    }
    let mut params = Vec::new();
    for spec in &specs {
        for shape in spec.param_shapes() {
            let len: usize = shape.iter().product();
            let data = cur.f64_buffer(len, "parameter buffer")?;
            params.push(Tensor::new(shape, data)?);
        }
    }
    let net = Network::from_parts(specs, params, 0)?;

    let step_count = cur.u64("optimizer step count")?;
    let learning_rate = cur.f64("learning rate")?;
    let beta1 = cur.f64("beta1")?;
    let beta2 = cur.f64("beta2")?;
    let epsilon = cur.f64("epsilon")?;
    let weight_decay = cur.f64("weight decay")?;
    let mut adam = AdamState::with_hyperparams(
        net.params(),
        learning_rate,
        weight_decay,
        beta1,
        beta2,
        epsilon,
    )?;
    let mut first = Vec::with_capacity(net.params().len());
    for p in net.params() {
        first.push(cur.f64_buffer(p.len(), "first moment")?);
    }
    let mut second = Vec::with_capacity(net.params().len());
    for p in net.params() {
        second.push(cur.f64_buffer(p.len(), "second moment")?);
    }
    adam.restore(step_count, first, second)?;
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok((net, adam))
}

pub fn save_checkpoint(net: &Network, adam: &AdamState, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(net, adam);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, AdamState)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_net() -> (Network, AdamState) {
        let net = Network::new(
            vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 2 * 4 * 4, output: 3 },
                LayerSpec::Softmax,
            ],
            99,
        )
        .unwrap();
        let adam = AdamState::new(net.params(), 1e-3, 1e-4).unwrap();
        (net, adam)
    }

    #[test]
    fn byte_exact_round_trip() {
        let (mut net, mut adam) = sample_net();
        // make the state nontrivial
        let x = Tensor::zeros(vec![2, 1, 4, 4]);
        let (out, trace) = net.forward(&x).unwrap();
        let g = Tensor::scalar_filled(out.shape().to_vec(), 0.1);
        net.zero_grads();
        net.backward(&trace, &g).unwrap();
        adam.step(net.params_mut()).unwrap();

        let bytes = encode_checkpoint(&net, &adam);
        let (net2, adam2) = decode_checkpoint(&bytes).unwrap();
        let bytes2 = encode_checkpoint(&net2, &adam2);
        assert_eq!(bytes, bytes2);
        assert_eq!(adam.step_count(), adam2.step_count());
        for (a, b) in net.params().iter().zip(net2.params()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn truncation_and_bad_magic_are_format_errors() {
        let (net, adam) = sample_net();
        let bytes = encode_checkpoint(&net, &adam);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut corrupted = bytes.clone();
        corrupted[0] = b'X';
        assert!(matches!(decode_checkpoint(&corrupted), Err(Error::Format(_))));
        let mut extended = bytes;
        extended.push(0);
        assert!(matches!(decode_checkpoint(&extended), Err(Error::Format(_))));
    }
}
