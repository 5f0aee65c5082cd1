//! 2-D cross-correlation over NCHW batches with square stride and zero padding.

use super::Tensor;
use crate::error::{LdbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel || self.stride == 0 {
            return None;
        }
        Some(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(LdbError::Shape {
                op: "conv2d",
                lhs: s.to_vec(),
                rhs: self.weight_shape().to_vec(),
            });
        }
        let (oh, ow) = self.output_hw(s[2], s[3]).ok_or_else(|| LdbError::Shape {
            op: "conv2d",
            lhs: s.to_vec(),
            rhs: self.weight_shape().to_vec(),
        })?;
        Ok((s[0], s[2], s[3], oh, ow))
    }
}

/// Input coordinate read by output position `out` at kernel offset `k`, or
/// `None` when the tap falls in the zero padding.
#[inline]
fn input_coord(out: usize, k: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
    let pos = out * stride + k;
    if pos < pad || pos - pad >= limit {
        None
    } else {
        Some(pos - pad)
    }
}

pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, g: &Conv2dGeometry) -> Result<Tensor> {
    let (n, h, w, oh, ow) = g.check_input(x)?;
    if weight.shape() != g.weight_shape() || bias.len() != g.out_channels {
        return Err(LdbError::Shape {
            op: "conv2d",
            lhs: weight.shape().to_vec(),
            rhs: g.weight_shape().to_vec(),
        });
    }
    let (c_in, c_out, k) = (g.in_channels, g.out_channels, g.kernel);
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0; n * c_out * oh * ow];
    for b in 0..n {
        for o in 0..c_out {
            let plane = &mut out[(b * c_out + o) * oh * ow..(b * c_out + o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = bias.data()[o]);
            for c in 0..c_in {
                let xin = &xd[(b * c_in + c) * h * w..(b * c_in + c + 1) * h * w];
                for ki in 0..k {
                    for kj in 0..k {
                        let wv = wd[((o * c_in + c) * k + ki) * k + kj];
                        for r in 0..oh {
                            let Some(ir) = input_coord(r, ki, g.stride, g.padding, h) else {
                                continue;
                            };
                            for s in 0..ow {
                                if let Some(ic) = input_coord(s, kj, g.stride, g.padding, w) {
                                    plane[r * ow + s] += wv * xin[ir * w + ic];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, oh, ow], out)
}

/// Gradient with respect to the convolution input.
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    weight: &Tensor,
    input_shape: &[usize],
    g: &Conv2dGeometry,
) -> Result<Tensor> {
    let (n, h, w) = (input_shape[0], input_shape[2], input_shape[3]);
    let (oh, ow) = g.output_hw(h, w).ok_or_else(|| LdbError::Shape {
        op: "conv2d_backward_input",
        lhs: input_shape.to_vec(),
        rhs: g.weight_shape().to_vec(),
    })?;
    if grad_out.shape() != [n, g.out_channels, oh, ow] {
        return Err(LdbError::Shape {
            op: "conv2d_backward_input",
            lhs: grad_out.shape().to_vec(),
            rhs: vec![n, g.out_channels, oh, ow],
        });
    }
    let (c_in, c_out, k) = (g.in_channels, g.out_channels, g.kernel);
    let gd = grad_out.data();
    let wd = weight.data();
    let mut dx = vec![0.0; n * c_in * h * w];
    for b in 0..n {
        for o in 0..c_out {
            let gplane = &gd[(b * c_out + o) * oh * ow..(b * c_out + o + 1) * oh * ow];
            for c in 0..c_in {
                let dplane = &mut dx[(b * c_in + c) * h * w..(b * c_in + c + 1) * h * w];
                for ki in 0..k {
                    for kj in 0..k {
                        let wv = wd[((o * c_in + c) * k + ki) * k + kj];
                        for r in 0..oh {
                            let Some(ir) = input_coord(r, ki, g.stride, g.padding, h) else {
                                continue;
                            };
                            for s in 0..ow {
                                if let Some(ic) = input_coord(s, kj, g.stride, g.padding, w) {
                                    dplane[ir * w + ic] += wv * gplane[r * ow + s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Gradients with respect to the kernel and the per-channel bias.
pub fn conv2d_backward_weight(
    grad_out: &Tensor,
    input: &Tensor,
    g: &Conv2dGeometry,
) -> Result<(Tensor, Tensor)> {
    let (n, h, w, oh, ow) = g.check_input(input)?;
    if grad_out.shape() != [n, g.out_channels, oh, ow] {
        return Err(LdbError::Shape {
            op: "conv2d_backward_weight",
            lhs: grad_out.shape().to_vec(),
            rhs: vec![n, g.out_channels, oh, ow],
        });
    }
    let (c_in, c_out, k) = (g.in_channels, g.out_channels, g.kernel);
    let gd = grad_out.data();
    let xd = input.data();
    let mut dw = vec![0.0; c_out * c_in * k * k];
    let mut db = vec![0.0; c_out];
    for b in 0..n {
        for o in 0..c_out {
            let gplane = &gd[(b * c_out + o) * oh * ow..(b * c_out + o + 1) * oh * ow];
            db[o] += gplane.iter().sum::<f64>();
            for c in 0..c_in {
                let xin = &xd[(b * c_in + c) * h * w..(b * c_in + c + 1) * h * w];
                for ki in 0..k {
                    for kj in 0..k {
                        let mut acc = 0.0;
                        for r in 0..oh {
                            let Some(ir) = input_coord(r, ki, g.stride, g.padding, h) else {
                                continue;
                            };
                            for s in 0..ow {
                                if let Some(ic) = input_coord(s, kj, g.stride, g.padding, w) {
                                    acc += gplane[r * ow + s] * xin[ir * w + ic];
                                }
                            }
                        }
                        dw[((o * c_in + c) * k + ki) * k + kj] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(g.weight_shape().to_vec(), dw)?,
        Tensor::new(vec![c_out], db)?,
    ))
}
