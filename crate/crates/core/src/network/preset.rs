use std::fmt;
use std::str::FromStr;

use super::{Network, NetworkBuilder};
use crate::error::{LdbError, Result};

/// Small stand-in architectures.
///
/// `Mlp(depth)` is a stack of `depth` dense layers with ReLU between them;
/// `mlp-8` is the canonical one. `CnnSmall` has a two-conv stage and a dense
/// head. `ResnetToy` is a dense stem, two residual blocks, and a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Mlp(usize),
    CnnSmall,
    ResnetToy,
}

impl FromStr for Preset {
    type Err = LdbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn-small" => Ok(Preset::CnnSmall),
            "resnet-toy" => Ok(Preset::ResnetToy),
            _ => s
                .strip_prefix("mlp-")
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|&d| d >= 1)
                .map(Preset::Mlp)
                .ok_or_else(|| {
                    LdbError::Config(format!(
                        "unknown preset {s:?} (expected mlp-8, cnn-small, resnet-toy or mlp-<depth>)"
                    ))
                }),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Mlp(d) => write!(f, "mlp-{d}"),
            Preset::CnnSmall => f.write_str("cnn-small"),
            Preset::ResnetToy => f.write_str("resnet-toy"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetOptions {
    /// Hidden width of dense layers.
    pub width: usize,
    pub init_seed: u64,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions { width: 64, init_seed: 0 }
    }
}

fn flat(input_shape: &[usize]) -> NetworkBuilder {
    let b = NetworkBuilder::new(input_shape);
    if input_shape.len() > 1 {
        b.flatten()
    } else {
        b
    }
}

pub fn build_preset(name: &str, input_shape: &[usize], classes: usize, opts: &PresetOptions) -> Result<Network> {
    Preset::from_str(name)?.build(input_shape, classes, opts)
}

impl Preset {
    pub fn build(self, input_shape: &[usize], classes: usize, opts: &PresetOptions) -> Result<Network> {
        if classes < 2 {
            return Err(LdbError::Config(format!("need at least 2 classes, got {classes}")));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(LdbError::Config(format!("bad input shape {input_shape:?}")));
        }
        let w = opts.width.max(1);
        let b = match self {
            Preset::Mlp(depth) => {
                let mut b = flat(input_shape);
                for _ in 1..depth {
                    b = b.dense(w)?.relu();
                }
                b.dense(classes)?
            }
            Preset::CnnSmall => {
                if input_shape.len() != 3 {
                    return Err(LdbError::Config(format!(
                        "cnn-small needs a [C, H, W] input, got {input_shape:?}"
                    )));
                }
                NetworkBuilder::new(input_shape)
                    .conv2d(4, 3, 1, 1)?
                    .relu()
                    .conv2d(8, 3, 2, 1)?
                    .relu()
                    .flatten()
                    .dense(w)?
                    .relu()
                    .dense(classes)?
            }
            Preset::ResnetToy => {
                let mut b = flat(input_shape).dense(w)?.relu();
                for _ in 0..2 {
                    let block_in = b.next_id();
                    b = b.dense(w)?.relu().dense(w)?.residual_from(block_in)?.relu();
                }
                b.dense(classes)?
            }
        };
        Ok(b.build(opts.init_seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerOp;
    use crate::rng::{Purpose, RngStream};
    use crate::tensor::Tensor;

    #[test]
    fn mlp8_has_eight_param_layers() {
        let net = build_preset("mlp-8", &[32], 3, &PresetOptions::default()).unwrap();
        assert_eq!(net.param_layer_ids().len(), 8);
    }

    #[test]
    fn cnn_small_output_shape() {
        let net = build_preset("cnn-small", &[1, 14, 14], 10, &PresetOptions::default()).unwrap();
        let y = net.infer(&Tensor::zeros(&[3, 1, 14, 14])).unwrap();
        assert_eq!(y.shape(), &[3, 10]);
    }

    #[test]
    fn unknown_preset_is_config_error() {
        assert!(matches!(
            build_preset("vit-huge", &[4], 2, &PresetOptions::default()),
            Err(LdbError::Config(_))
        ));
        assert!(matches!("mlp-0".parse::<Preset>(), Err(LdbError::Config(_))));
        assert_eq!("mlp-20".parse::<Preset>().unwrap(), Preset::Mlp(20));
    }

    #[test]
    fn presets_are_deterministic() {
        let opts = PresetOptions { width: 16, init_seed: 9 };
        let a = build_preset("resnet-toy", &[5], 3, &opts).unwrap();
        let b = build_preset("resnet-toy", &[5], 3, &opts).unwrap();
        for ((_, wa, ba), (_, wb, bb)) in a.params().zip(b.params()) {
            assert_eq!(wa, wb);
            assert_eq!(ba, bb);
        }
    }

    /// With the last dense of each residual branch zeroed, the block is the
    /// identity, so the net reduces to stem -> relu -> classifier.
    #[test]
    fn resnet_zero_branch_equals_identity_path() {
        let (d, w, k) = (5, 7, 3);
        let mut net = build_preset("resnet-toy", &[d], k, &PresetOptions { width: w, init_seed: 4 }).unwrap();
        let residual_sources: Vec<usize> = net
            .layers()
            .iter()
            .filter_map(|l| match l.op {
                LayerOp::ResidualAdd { .. } => Some(l.id - 1),
                _ => None,
            })
            .collect();
        assert_eq!(residual_sources.len(), 2);
        for id in residual_sources {
            let l = net.layer_mut(id);
            l.weights.as_mut().unwrap().fill(0.0);
            l.bias.as_mut().unwrap().fill(0.0);
        }

        let mut rng = RngStream::derive(2, Purpose::Test, 0);
        let n = 4;
        let x: Vec<f64> = (0..n * d).map(|_| rng.next_normal()).collect();
        let got = net.infer(&Tensor::new(vec![n, d], x.clone()).unwrap()).unwrap();

        let stem = net.layer(0);
        let head = net.layer(*net.param_layer_ids().last().unwrap());
        let (sw, sb) = (stem.weights.as_ref().unwrap(), stem.bias.as_ref().unwrap());
        let (hw, hb) = (head.weights.as_ref().unwrap(), head.bias.as_ref().unwrap());
        for s in 0..n {
            let mut h = vec![0.0; w];
            for j in 0..w {
                let mut acc = sb.data()[j];
                for i in 0..d {
                    acc += x[s * d + i] * sw.data()[i * w + j];
                }
                h[j] = acc.max(0.0);
            }
            for c in 0..k {
                let mut acc = hb.data()[c];
                for j in 0..w {
                    acc += h[j] * hw.data()[j * k + c];
                }
                let g = got.data()[s * k + c];
                assert!((g - acc).abs() <= 1e-12 * acc.abs().max(1.0), "{g} vs {acc}");
            }
        }
    }
}
