//! Layer descriptors and the forward/backward kernels behind them.
//!
//! Kernels assume shapes were validated by the caller (`Network::forward`
//! names the offending layer on mismatch). All math is plain f64 loops.

use crate::tensor::Tensor;

/// Architecture element. Dense and Conv2d carry parameters (weight, bias);
/// the rest are shape or activation transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Relu,
    /// Stride-1 2-d convolution over `[batch, channels, height, width]`
    /// inputs with zero padding.
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, padding: usize },
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Shapes of this layer's parameter tensors (weight, bias), if any.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { input, output } => vec![vec![input, output], vec![output]],
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            _ => Vec::new(),
        }
    }

    /// Fan-in used for He-uniform initialization.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, .. } => input,
            LayerSpec::Conv2d { in_channels, kernel, .. } => in_channels * kernel * kernel,
            _ => 0,
        }
    }
}

// y[b, j] = bias[j] + sum_i x[b, i] * w[i, j]
pub(crate) fn dense_forward(w: &Tensor, bias: &Tensor, input: &Tensor) -> Tensor {
    let batch = input.batch_len();
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    let mut out = Tensor::zeros(vec![batch, n_out]);
    for b in 0..batch {
        let x = input.row(b);
        let y = out.row_mut(b);
        y.copy_from_slice(bias.data());
        for (i, &xi) in x.iter().enumerate().take(n_in) {
            let wrow = &w.data()[i * n_out..(i + 1) * n_out];
            for (yj, wij) in y.iter_mut().zip(wrow) {
                *yj += xi * wij;
            }
        }
    }
    out
}

/// Returns (d_weight, d_bias, d_input).
pub(crate) fn dense_backward(
    w: &Tensor,
    input: &Tensor,
    upstream: &Tensor,
) -> (Vec<f64>, Vec<f64>, Tensor) {
    let batch = input.batch_len();
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    let mut dw = vec![0.0; n_in * n_out];
    let mut db = vec![0.0; n_out];
    let mut dx = Tensor::zeros(vec![batch, n_in]);
    for b in 0..batch {
        let x = input.row(b);
        let g = upstream.row(b);
        for (gj, dbj) in g.iter().zip(db.iter_mut()) {
            *dbj += gj;
        }
        let dxr = dx.row_mut(b);
        for i in 0..n_in {
            let wrow = &w.data()[i * n_out..(i + 1) * n_out];
            let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
            let xi = x[i];
            let mut acc = 0.0;
            for j in 0..n_out {
                dwrow[j] += xi * g[j];
                acc += g[j] * wrow[j];
            }
            dxr[i] = acc;
        }
    }
    (dw, db, dx)
}

pub(crate) fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.clear_grad();
    out.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
    out
}

pub(crate) fn relu_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    let mut dx = upstream.clone();
    dx.clear_grad();
    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Row softmax with max-shifted exponentials for overflow safety.
pub(crate) fn softmax_forward(input: &Tensor) -> Tensor {
    let batch = input.batch_len();
    let c = input.row_len();
    let mut out = Tensor::zeros(vec![batch, c]);
    for b in 0..batch {
        let z = input.row(b);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let y = out.row_mut(b);
        let mut total = 0.0;
        for (yi, &zi) in y.iter_mut().zip(z) {
            *yi = (zi - m).exp();
            total += *yi;
        }
        y.iter_mut().for_each(|v| *v /= total);
    }
    out
}

// dz_i = y_i * (g_i - sum_j g_j y_j), per row
pub(crate) fn softmax_backward(output: &Tensor, upstream: &Tensor) -> Tensor {
    let batch = output.batch_len();
    let c = output.row_len();
    let mut dz = Tensor::zeros(vec![batch, c]);
    for b in 0..batch {
        let y = output.row(b);
        let g = upstream.row(b);
        let dot: f64 = y.iter().zip(g).map(|(yi, gi)| yi * gi).sum();
        for (d, (yi, gi)) in dz.row_mut(b).iter_mut().zip(y.iter().zip(g)) {
            *d = yi * (gi - dot);
        }
    }
    dz
}

pub(crate) struct ConvDims {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn conv2d_forward(w: &Tensor, bias: &Tensor, input: &Tensor, d: &ConvDims) -> Tensor {
    let batch = input.batch_len();
    let mut out = Tensor::zeros(vec![batch, d.out_channels, d.out_h, d.out_w]);
    let in_plane = d.in_h * d.in_w;
    let out_plane = d.out_h * d.out_w;
    for b in 0..batch {
        let x = input.row(b);
        let y = out.row_mut(b);
        for oc in 0..d.out_channels {
            let bval = bias.data()[oc];
            for oy in 0..d.out_h {
                for ox in 0..d.out_w {
                    let mut acc = bval;
                    for ic in 0..d.in_channels {
                        let wbase = ((oc * d.in_channels + ic) * d.kernel) * d.kernel;
                        for ky in 0..d.kernel {
                            let iy = (oy + ky) as isize - d.padding as isize;
                            if iy < 0 || iy >= d.in_h as isize {
                                continue;
                            }
                            for kx in 0..d.kernel {
                                let ix = (ox + kx) as isize - d.padding as isize;
                                if ix < 0 || ix >= d.in_w as isize {
                                    continue;
                                }
                                acc += x[ic * in_plane + iy as usize * d.in_w + ix as usize]
                                    * w.data()[wbase + ky * d.kernel + kx];
                            }
                        }
                    }
                    y[oc * out_plane + oy * d.out_w + ox] = acc;
                }
            }
        }
    }
    out
}

/// Returns (d_weight, d_bias, d_input).
pub(crate) fn conv2d_backward(
    w: &Tensor,
    input: &Tensor,
    upstream: &Tensor,
    d: &ConvDims,
) -> (Vec<f64>, Vec<f64>, Tensor) {
    let batch = input.batch_len();
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.out_channels];
    let mut dx = Tensor::zeros(vec![batch, d.in_channels, d.in_h, d.in_w]);
    let in_plane = d.in_h * d.in_w;
    let out_plane = d.out_h * d.out_w;
    for b in 0..batch {
        let x = input.row(b);
        let g = upstream.row(b);
        let dxr = dx.row_mut(b);
        for oc in 0..d.out_channels {
            for oy in 0..d.out_h {
                for ox in 0..d.out_w {
                    let gval = g[oc * out_plane + oy * d.out_w + ox];
                    if gval == 0.0 {
                        continue;
                    }
                    db[oc] += gval;
                    for ic in 0..d.in_channels {
                        let wbase = ((oc * d.in_channels + ic) * d.kernel) * d.kernel;
                        for ky in 0..d.kernel {
                            let iy = (oy + ky) as isize - d.padding as isize;
                            if iy < 0 || iy >= d.in_h as isize {
                                continue;
                            }
                            for kx in 0..d.kernel {
                                let ix = (ox + kx) as isize - d.padding as isize;
                                if ix < 0 || ix >= d.in_w as isize {
                                    continue;
                                }
                                let xi = ic * in_plane + iy as usize * d.in_w + ix as usize;
                                let wi = wbase + ky * d.kernel + kx;
                                dw[wi] += gval * x[xi];
                                dxr[xi] += gval * w.data()[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dw, db, dx)
}
