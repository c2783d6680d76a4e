//! Central finite-difference checks of every backward pass, in f64.
//!
//! Single layers are checked under the loss `L = sum(R * y)` for a fixed
//! random `R`, against both the input and every parameter. Whole networks
//! are checked under mean cross-entropy plus the L2 penalty, the same
//! objective training minimizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::layers::{Layer, LayerSpec, Mode, Padding};
use crate::models::{self, ArchConfig, ModelKind, Network};
use crate::seed;
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub batch: usize,
    /// Check at most this many (randomly chosen) entries per tensor.
    pub max_entries: Option<usize>,
    pub seed: u64,
    /// Test hook: scale the analytic gradients of the named check.
    pub corrupt: Option<(String, f64)>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-6,
            tolerance: 1e-5,
            floor: 1e-4,
            batch: 2,
            max_entries: None,
            seed: 42,
            corrupt: None,
        }
    }
}

impl GradcheckConfig {
    fn rel_error(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    /// `<check>/<tensor>`, e.g. `conv_valid/input` or `proposed_cnn/layer14.param0`.
    pub label: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&CheckResult> {
        self.results
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |r| r.max_rel_error)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.results.iter().all(|r| r.max_rel_error < tolerance)
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "check,entries,max_rel_error,worst_index,analytic,numeric")?;
        for r in &self.results {
            writeln!(
                out,
                "{},{},{:e},{},{:e},{:e}",
                r.label, r.entries, r.max_rel_error, r.worst_index, r.analytic, r.numeric
            )?;
        }
        Ok(())
    }
}

fn uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Inputs bounded away from zero.
fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

fn entries(len: usize, cfg: &GradcheckConfig, rng: &mut impl Rng) -> Vec<usize> {
    match cfg.max_entries {
        Some(k) if k < len => {
            let mut v = rand::seq::index::sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Compare `analytic[i]` with `derivative(i)` over `idx`.
fn compare(
    label: String,
    cfg: &GradcheckConfig,
    analytic: &[f64],
    idx: &[usize],
    mut derivative: impl FnMut(usize) -> Result<f64>,
) -> Result<CheckResult> {
    let scale = match &cfg.corrupt {
        Some((target, factor)) if label.starts_with(target.as_str()) => *factor,
        _ => 1.0,
    };
    let mut res = CheckResult { label, entries: idx.len(), max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for &i in idx {
        let numeric = derivative(i)?;
        let a = analytic[i] * scale;
        let err = cfg.rel_error(a, numeric);
        if err > res.max_rel_error || res.entries == 0 {
            res.max_rel_error = err;
            res.worst_index = i;
            res.analytic = a;
            res.numeric = numeric;
        }
    }
    Ok(res)
}

/// `sum(R * (y+ - y-))`, differenced per element before weighting.
fn weighted_diff(plus: &Tensor<f64>, minus: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    plus.data().iter().zip(minus.data()).zip(r.data()).map(|((a, b), w)| (a - b) * w).sum()
}

/// Check one layer kind bound to `input_shape`.
pub fn check_layer(name: &str, spec: LayerSpec, input_shape: &[usize], cfg: &GradcheckConfig) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_named(cfg.seed, name));
    let mut layer = Layer::<f64>::new(spec, input_shape)?;
    let params: Vec<Tensor<f64>> = layer.params().iter().map(|p| uniform(p.shape(), &mut rng)).collect();
    layer.set_params(params)?;
    let batch_shape = [&[cfg.batch][..], input_shape].concat();
    let x = away_from_zero(&batch_shape, &mut rng);
    let out_shape = [&[cfg.batch][..], layer.output_shape()].concat();
    let r = uniform(&out_shape, &mut rng);
    let drop_seed = rng.random::<u64>();

    let h = cfg.step;

    layer.zero_grads();
    layer.forward(&x, Mode::Train, drop_seed)?;
    let gx = layer.backward(&r, true)?.expect("input gradient requested");
    layer.apply_l2();
    let grads: Vec<Tensor<f64>> = layer.grads().to_vec();

    let mut results = Vec::new();
    let idx = entries(x.len(), cfg, &mut rng);
    let (mut xp, mut xm) = (x.clone(), x.clone());
    results.push(compare(format!("{name}/input"), cfg, gx.data(), &idx, |i| {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + h;
        xm.data_mut()[i] = orig - h;
        let yp = layer.forward(&xp, Mode::Train, drop_seed)?;
        let ym = layer.forward(&xm, Mode::Train, drop_seed)?;
        xp.data_mut()[i] = orig;
        xm.data_mut()[i] = orig;
        Ok(weighted_diff(&yp, &ym, &r) / (2.0 * h))
    })?);
    for (p, g) in grads.iter().enumerate() {
        let idx = entries(g.len(), cfg, &mut rng);
        results.push(compare(format!("{name}/param{p}"), cfg, g.data(), &idx, |i| {
            let orig = layer.params()[p].data()[i];
            layer.params_mut()[p].data_mut()[i] = orig + h;
            let l2_plus = layer.l2_penalty();
            let yp = layer.forward(&x, Mode::Train, drop_seed)?;
            layer.params_mut()[p].data_mut()[i] = orig - h;
            let l2_minus = layer.l2_penalty();
            let ym = layer.forward(&x, Mode::Train, drop_seed)?;
            layer.params_mut()[p].data_mut()[i] = orig;
            Ok((weighted_diff(&yp, &ym, &r) + l2_plus - l2_minus) / (2.0 * h))
        })?);
    }
    Ok(results)
}

/// The layer instances covered by [`check_all_layers`]: every kind, on
/// 12x12 inputs with at most 8 channels.
pub fn layer_cases() -> Vec<(&'static str, LayerSpec, Vec<usize>)> {
    vec![
        ("conv_valid", LayerSpec::conv(4, Padding::Valid), vec![3, 12, 12]),
        ("conv_same", LayerSpec::conv(8, Padding::Same), vec![2, 12, 12]),
        ("conv_stride2", LayerSpec::Conv2D { filters: 3, kernel: 3, stride: 2, padding: Padding::Valid }, vec![2, 12, 12]),
        ("maxpool", LayerSpec::MaxPool2D { pool: 2 }, vec![4, 12, 12]),
        ("maxpool_odd", LayerSpec::MaxPool2D { pool: 2 }, vec![2, 11, 11]),
        ("dense", LayerSpec::dense(7), vec![36]),
        ("dense_l2", LayerSpec::Dense { units: 9, l2: 0.01 }, vec![20]),
        ("relu", LayerSpec::ReLU, vec![4, 12, 12]),
        ("softmax", LayerSpec::Softmax, vec![NUM_CLASSES]),
        ("dropout", LayerSpec::Dropout { rate: 0.25 }, vec![8, 12, 12]),
        ("flatten", LayerSpec::Flatten, vec![8, 6, 6]),
    ]
}

pub fn check_all_layers(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut report = GradcheckReport::default();
    for (name, spec, shape) in layer_cases() {
        report.results.extend(check_layer(name, spec, &shape, cfg)?);
    }
    Ok(report)
}

fn network_loss(net: &mut Network<f64>, x: &Tensor<f64>, labels: &[usize], drop_seed: u64) -> Result<f64> {
    let probs = net.forward(x, Mode::Train, drop_seed)?;
    let k = net.output_len();
    let ce: f64 = labels
        .iter()
        .enumerate()
        .map(|(n, &l)| -probs.data()[n * k + l].ln())
        .sum::<f64>()
        / labels.len() as f64;
    Ok(ce + net.l2_penalty())
}

/// Whole-network check of mean cross-entropy plus L2 against every
/// parameter, with dropout active under a fixed mask.
pub fn check_network(name: &str, net: &mut Network<f64>, cfg: &GradcheckConfig) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_named(cfg.seed, name));
    for layer in net.layers_mut() {
        for p in layer.params_mut() {
            let scale = 1.0 / (p.len() as f64).sqrt().max(1.0) * 3.0;
            *p = Tensor::from_fn(p.shape(), |_| rng.random_range(-scale..scale));
        }
    }
    let shape = [&[cfg.batch][..], net.input_shape()].concat();
    let x = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0));
    let labels: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..NUM_CLASSES)).collect();
    let onehot = Tensor::from_fn(&[cfg.batch, NUM_CLASSES], |i| f64::from(u8::from(labels[i / NUM_CLASSES] == i % NUM_CLASSES)));
    let drop_seed = rng.random::<u64>();

    net.zero_grads();
    let probs = net.forward(&x, Mode::Train, drop_seed)?;
    let inv_n = 1.0 / cfg.batch as f64;
    let grad = Tensor::new(
        probs.shape(),
        probs.data().iter().zip(onehot.data()).map(|(p, t)| (p - t) * inv_n).collect(),
    )?;
    net.backward_from_logits(&grad)?;
    net.apply_l2();
    let grads: Vec<Vec<Tensor<f64>>> = net.layers().iter().map(|l| l.grads().to_vec()).collect();

    let mut results = Vec::new();
    for (li, layer_grads) in grads.iter().enumerate() {
        for (p, g) in layer_grads.iter().enumerate() {
            let idx = entries(g.len(), cfg, &mut rng);
            let label = format!("{name}/layer{li}.{}.param{p}", net.layers()[li].spec().name());
            results.push(compare(label, cfg, g.data(), &idx, |i| {
                let orig = net.layers()[li].params()[p].data()[i];
                net.layers_mut()[li].params_mut()[p].data_mut()[i] = orig + cfg.step;
                let plus = network_loss(net, &x, &labels, drop_seed)?;
                net.layers_mut()[li].params_mut()[p].data_mut()[i] = orig - cfg.step;
                let minus = network_loss(net, &x, &labels, drop_seed)?;
                net.layers_mut()[li].params_mut()[p].data_mut()[i] = orig;
                Ok((plus - minus) / (2.0 * cfg.step))
            })?);
        }
    }
    Ok(results)
}

/// The three networks at toy scale: 12x12 input, at most 8 channels.
pub fn check_toy_networks(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let arch = ArchConfig::toy();
    let mut report = GradcheckReport::default();
    for kind in [ModelKind::Ffnn, ModelKind::SimpleCnn, ModelKind::ProposedCnn] {
        let mut net = models::build::<f64>(kind, &arch, cfg.seed)?;
        report.results.extend(check_network(kind.name(), &mut net, cfg)?);
    }
    Ok(report)
}

/// Every layer kind and every toy network.
pub fn run_all(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut report = check_all_layers(cfg)?;
    report.results.extend(check_toy_networks(cfg)?.results);
    Ok(report)
}
