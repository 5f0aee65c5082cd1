//! Finite-difference verification of selective weight gradients.
//!
//! For each random selected set the analytic gradients from
//! [`Network::backward_selective`] are compared against central differences
//! of the loss. Layers outside the set must come back with exactly zero
//! gradient.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LdbError, Result};
use crate::network::{build_preset, cross_entropy_loss, LayerSet, Network, Preset, PresetOptions};
use crate::rng::{Purpose, RngStream};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub sets: usize,
    pub step: f64,
    pub tolerance: f64,
    pub batch: usize,
    pub seed: u64,
    /// Scales dense weight gradients; a negative control for the checker.
    pub dense_grad_fault: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            sets: 10,
            step: FD_STEP,
            tolerance: FD_TOLERANCE,
            batch: 4,
            seed: 0,
            dense_grad_fault: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offender {
    pub set: usize,
    pub layer: usize,
    pub param: ParamKind,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl fmt::Display for Offender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "set {} layer {} {:?}[{}]: analytic {:.6e} numeric {:.6e} rel {:.3e}",
            self.set, self.layer, self.param, self.index, self.analytic, self.numeric, self.rel_error
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub preset: String,
    pub sets: Vec<Vec<usize>>,
    pub compared: usize,
    pub max_rel_error: f64,
    pub worst: Option<Offender>,
    /// Unselected layers whose gradient was not exactly zero.
    pub leaked_layers: Vec<usize>,
    /// Coordinates re-measured with a smaller step because the perturbation
    /// crossed a ReLU kink.
    pub kink_refinements: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.leaked_layers.is_empty()
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Small instance of a preset, sized so a full finite-difference sweep is
/// cheap.
pub fn gradcheck_network(preset: &str, seed: u64) -> Result<Network> {
    let p: Preset = preset.parse()?;
    let input: &[usize] = match p {
        Preset::CnnSmall => &[1, 8, 8],
        _ => &[6],
    };
    build_preset(preset, input, 3, &PresetOptions { width: 8, init_seed: seed })
}

fn loss_at(net: &Network, x: &Tensor, y: &[usize]) -> Result<f64> {
    Ok(cross_entropy_loss(&net.infer(x)?, y)?.0)
}

fn param_mut(net: &mut Network, layer: usize, kind: ParamKind) -> &mut Tensor {
    let l = net.layer_mut(layer);
    match kind {
        ParamKind::Weight => l.weights.as_mut(),
        ParamKind::Bias => l.bias.as_mut(),
    }
    .expect("parameterized layer")
}

fn central_difference(net: &mut Network, x: &Tensor, y: &[usize], at: (usize, ParamKind, usize), h: f64) -> Result<(f64, bool)> {
    let (layer, kind, i) = at;
    let orig = param_mut(net, layer, kind).data()[i];
    param_mut(net, layer, kind).data_mut()[i] = orig + h;
    let (lp, sp) = (loss_at(net, x, y)?, net.relu_signature(x)?);
    param_mut(net, layer, kind).data_mut()[i] = orig - h;
    let (lm, sm) = (loss_at(net, x, y)?, net.relu_signature(x)?);
    param_mut(net, layer, kind).data_mut()[i] = orig;
    Ok(((lp - lm) / (2.0 * h), sp == sm))
}

/// Numerical gradient of every parameter, keyed like [`Network::params`].
fn numeric_gradients(net: &Network, x: &Tensor, y: &[usize], h: f64, refinements: &mut usize) -> Result<Vec<(usize, Tensor, Tensor)>> {
    let mut work = net.clone();
    let mut out = Vec::new();
    for (id, w, b) in net.params() {
        let mut grads = [Tensor::zeros(w.shape()), Tensor::zeros(b.shape())];
        for (kind, g) in [ParamKind::Weight, ParamKind::Bias].into_iter().zip(&mut grads) {
            for i in 0..g.len() {
                let (mut d, mut same) = central_difference(&mut work, x, y, (id, kind, i), h)?;
                let mut step = h;
                // A kink between the probes makes the difference quotient
                // meaningless; shrink the step until both probes share one
                // activation pattern.
                while !same && step > h * 1e-4 {
                    *refinements += 1;
                    step /= 10.0;
                    let (d2, s2) = central_difference(&mut work, x, y, (id, kind, i), step)?;
                    d = d2;
                    same = s2;
                }
                g.data_mut()[i] = d;
            }
        }
        let [gw, gb] = grads;
        out.push((id, gw, gb));
    }
    Ok(out)
}

/// Draws a random subset of the parameterized layers (never empty).
fn random_set(ids: &[usize], rng: &mut RngStream) -> LayerSet {
    let mut s: LayerSet = ids.iter().copied().filter(|_| rng.next_uniform() < 0.5).collect();
    if s.is_empty() {
        s.insert(ids[rng.permutation(ids.len())[0]]);
    }
    s
}

pub fn gradcheck_preset(preset: &str, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.sets == 0 || opts.batch == 0 || !(opts.step > 0.0) {
        return Err(LdbError::Config("gradcheck needs sets, batch and step > 0".into()));
    }
    let mut net = gradcheck_network(preset, opts.seed)?;
    if let Some(f) = opts.dense_grad_fault {
        net.inject_dense_grad_fault(f);
    }
    let mut data_rng = RngStream::derive(opts.seed, Purpose::Test, 0);
    let mut shape = vec![opts.batch];
    shape.extend_from_slice(net.input_shape());
    let n: usize = shape.iter().product();
    let x = Tensor::new(shape, (0..n).map(|_| data_rng.next_normal()).collect())?;
    let classes = net.classes();
    let y: Vec<usize> = (0..opts.batch).map(|i| i % classes).collect();

    let mut refinements = 0;
    let numeric = numeric_gradients(&net, &x, &y, opts.step, &mut refinements)?;
    let ids = net.param_layer_ids().to_vec();
    let mut set_rng = RngStream::derive(opts.seed, Purpose::Test, 1);

    let mut report = GradcheckReport {
        preset: preset.to_string(),
        sets: Vec::new(),
        compared: 0,
        max_rel_error: 0.0,
        worst: None,
        leaked_layers: Vec::new(),
        kink_refinements: refinements,
        tolerance: opts.tolerance,
    };
    for set_idx in 0..opts.sets {
        let selected = random_set(&ids, &mut set_rng);
        let logits = net.forward(&x)?;
        let (_, g) = cross_entropy_loss(&logits, &y)?;
        net.backward_selective(&g, &selected, None)?;
        for (id, nw, nb) in &numeric {
            let layer = net.layer(*id);
            let (aw, ab) = (layer.weight_grad.as_ref().unwrap(), layer.bias_grad.as_ref().unwrap());
            if !selected.contains(id) {
                if aw.max_abs() != 0.0 || ab.max_abs() != 0.0 {
                    report.leaked_layers.push(*id);
                }
                continue;
            }
            for (kind, a, num) in [(ParamKind::Weight, aw, nw), (ParamKind::Bias, ab, nb)] {
                for (i, (&av, &nv)) in a.data().iter().zip(num.data()).enumerate() {
                    let r = rel_error(av, nv);
                    report.compared += 1;
                    if r > report.max_rel_error || report.worst.is_none() {
                        report.max_rel_error = report.max_rel_error.max(r);
                        report.worst = Some(Offender {
                            set: set_idx,
                            layer: *id,
                            param: kind,
                            index: i,
                            analytic: av,
                            numeric: nv,
                            rel_error: r,
                        });
                    }
                }
            }
        }
        report.sets.push(selected.into_iter().collect());
    }
    report.leaked_layers.sort_unstable();
    report.leaked_layers.dedup();
    Ok(report)
}
