//! SGD, RMSProp and Adam with inverse-time learning-rate decay
//! `lr_t = lr / (1 + decay * t)`, where `t` counts completed updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidConfig(format!(
                "unknown optimizer {other:?} (expected sgd, rmsprop or adam)"
            ))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub decay: f64,
    /// SGD momentum.
    pub momentum: f64,
    /// RMSProp squared-gradient averaging factor.
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig {
            kind,
            learning_rate,
            decay: 0.0,
            momentum: 0.0,
            rho: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::RmsProp, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    /// The out-of-the-box learning rate of each optimizer.
    pub fn default_learning_rate(kind: OptimizerKind) -> f64 {
        match kind {
            OptimizerKind::Sgd => 0.01,
            OptimizerKind::RmsProp | OptimizerKind::Adam => 0.001,
        }
    }

    pub fn with_decay(mut self, decay: f64) -> Self {
        self.decay = decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {v}")))
            }
        };
        // lr = 0 is accepted; negative or NaN is not.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("decay must be >= 0, got {}", self.decay)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        unit("momentum", self.momentum)?;
        unit("rho", self.rho)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)
    }

    /// Learning rate applied after `t` completed updates.
    pub fn learning_rate_at(&self, t: u64) -> f64 {
        self.learning_rate / (1.0 + self.decay * t as f64)
    }
}

/// Accumulators for one parameter tensor.
#[derive(Debug, Clone)]
struct Slot<T: Scalar> {
    shape: Vec<usize>,
    /// Adam first moment, or SGD velocity.
    first: Vec<T>,
    /// Adam/RMSProp second moment.
    second: Vec<T>,
}

/// Step counter and per-parameter moment tensors. Slots are bound to
/// parameter shapes on the first update and never change afterwards.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar = f32> {
    step: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Default for OptimizerState<T> {
    fn default() -> Self {
        OptimizerState {
            step: 0,
            slots: Vec::new(),
        }
    }
}

impl<T: Scalar> OptimizerState<T> {
    /// Completed update count.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> Option<&[T]> {
        self.slots.get(index).map(|s| s.first.as_slice())
    }

    pub fn second_moment(&self, index: usize) -> Option<&[T]> {
        self.slots.get(index).map(|s| s.second.as_slice())
    }

    fn bind(&mut self, index: usize, shape: &[usize], len: usize) -> Result<()> {
        match self.slots.get(index) {
            Some(slot) if slot.shape == shape => Ok(()),
            Some(slot) => Err(Error::shape(
                "optimizer",
                format!(
                    "parameter {index} has shape {shape:?}, state was bound to {:?}",
                    slot.shape
                ),
            )),
            None if index == self.slots.len() && self.step == 0 => {
                self.slots.push(Slot {
                    shape: shape.to_vec(),
                    first: vec![T::zero(); len],
                    second: vec![T::zero(); len],
                });
                Ok(())
            }
            None => Err(Error::shape(
                "optimizer",
                format!("parameter {index} was not present when the state was bound"),
            )),
        }
    }
}

/// An optimizer configuration with its bound state.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar = f32> {
    config: OptimizerConfig,
    state: OptimizerState<T>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: OptimizerState::default(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState<T> {
        &self.state
    }

    /// Learning rate the next update will use.
    pub fn current_learning_rate(&self) -> f64 {
        self.config.learning_rate_at(self.state.step)
    }

    /// Apply one update to every `(parameter, gradient)` pair, in order.
    pub fn step<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a mut Tensor<T>, &'a Tensor<T>)>,
    {
        let cfg = self.config;
        let t_prev = self.state.step;
        let lr = cfg.learning_rate_at(t_prev);
        let t = t_prev + 1;
        let bias1 = 1.0 - cfg.beta1.powf(t as f64);
        let bias2 = 1.0 - cfg.beta2.powf(t as f64);
        for (index, (w, g)) in pairs.into_iter().enumerate() {
            if w.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("parameter {:?} vs gradient {:?}", w.shape(), g.shape()),
                ));
            }
            self.state.bind(index, w.shape(), w.len())?;
            let slot = &mut self.state.slots[index];
            let w = w.data_mut();
            let g = g.data();
            match cfg.kind {
                OptimizerKind::Sgd => sgd_update(w, g, &mut slot.first, lr, cfg.momentum),
                OptimizerKind::RmsProp => {
                    rmsprop_update(w, g, &mut slot.second, lr, cfg.rho, cfg.epsilon)
                }
                OptimizerKind::Adam => adam_update(
                    w,
                    g,
                    (&mut slot.first, &mut slot.second),
                    lr,
                    &cfg,
                    (bias1, bias2),
                ),
            }
        }
        self.state.step = t;
        Ok(())
    }
}

fn sgd_update<T: Scalar>(w: &mut [T], g: &[T], velocity: &mut [T], lr: f64, momentum: f64) {
    let lr = T::from_f64_lossy(lr);
    if momentum == 0.0 {
        for (w, &g) in w.iter_mut().zip(g) {
            *w -= lr * g;
        }
        return;
    }
    let mu = T::from_f64_lossy(momentum);
    for ((w, &g), v) in w.iter_mut().zip(g).zip(velocity) {
        *v = mu * *v - lr * g;
        *w += *v;
    }
}

fn rmsprop_update<T: Scalar>(w: &mut [T], g: &[T], sq: &mut [T], lr: f64, rho: f64, eps: f64) {
    let (lr, rho, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(rho), T::from_f64_lossy(eps));
    let one_minus_rho = T::one() - rho;
    for ((w, &g), v) in w.iter_mut().zip(g).zip(sq) {
        *v = rho * *v + one_minus_rho * g * g;
        *w -= lr * g / (v.sqrt() + eps);
    }
}

fn adam_update<T: Scalar>(
    w: &mut [T],
    g: &[T],
    (m, v): (&mut [T], &mut [T]),
    lr: f64,
    cfg: &OptimizerConfig,
    (bias1, bias2): (f64, f64),
) {
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let inv_bias1 = T::from_f64_lossy(1.0 / bias1);
    let inv_bias2 = T::from_f64_lossy(1.0 / bias2);
    let lr = T::from_f64_lossy(lr);
    let eps = T::from_f64_lossy(cfg.epsilon);
    for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + c1 * g;
        *v = b2 * *v + c2 * g * g;
        let m_hat = *m * inv_bias1;
        let v_hat = *v * inv_bias2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

fn single_step<T: Scalar>(
    kind: OptimizerKind,
    w: &Tensor<T>,
    grad: &Tensor<T>,
    cfg: &OptimizerConfig,
    state: &mut OptimizerState<T>,
) -> Result<Tensor<T>> {
    let cfg = OptimizerConfig { kind, ..*cfg };
    let mut opt = Optimizer {
        config: cfg,
        state: std::mem::take(state),
    };
    let mut updated = w.clone();
    let result = opt.step([(&mut updated, grad)]);
    *state = opt.state;
    result.map(|()| updated)
}

/// One SGD update of a single parameter tensor.
pub fn sgd_step<T: Scalar>(
    w: &Tensor<T>,
    grad: &Tensor<T>,
    cfg: &OptimizerConfig,
    state: &mut OptimizerState<T>,
) -> Result<Tensor<T>> {
    single_step(OptimizerKind::Sgd, w, grad, cfg, state)
}

/// One RMSProp update of a single parameter tensor.
pub fn rmsprop_step<T: Scalar>(
    w: &Tensor<T>,
    grad: &Tensor<T>,
    cfg: &OptimizerConfig,
    state: &mut OptimizerState<T>,
) -> Result<Tensor<T>> {
    single_step(OptimizerKind::RmsProp, w, grad, cfg, state)
}

/// One Adam update of a single parameter tensor.
pub fn adam_step<T: Scalar>(
    w: &Tensor<T>,
    grad: &Tensor<T>,
    cfg: &OptimizerConfig,
    state: &mut OptimizerState<T>,
) -> Result<Tensor<T>> {
    single_step(OptimizerKind::Adam, w, grad, cfg, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(&[1], vec![v]).unwrap()
    }

    #[test]
    fn sgd_examples() {
        let cfg = OptimizerConfig::sgd(0.1);
        let mut st = OptimizerState::default();
        let w = sgd_step(&scalar(1.0), &scalar(0.5), &cfg, &mut st).unwrap();
        assert!((w.data()[0] - 0.95).abs() < 1e-15);

        let mut st = OptimizerState::default();
        let w = sgd_step(&scalar(1.0), &scalar(0.0), &cfg, &mut st).unwrap();
        assert_eq!(w.data()[0], 1.0);

        // one completed update, decay 1 -> lr_t = 0.1 / 2
        let cfg = OptimizerConfig::sgd(0.1).with_decay(1.0);
        let mut st = OptimizerState::default();
        sgd_step(&scalar(0.0), &scalar(0.0), &cfg, &mut st).unwrap();
        assert_eq!(st.step_count(), 1);
        let w = sgd_step(&scalar(1.0), &scalar(1.0), &cfg, &mut st).unwrap();
        assert!((w.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_examples() {
        let cfg = OptimizerConfig::rmsprop(0.01);
        let mut st = OptimizerState::default();
        let w = rmsprop_step(&scalar(1.0), &scalar(0.0), &cfg, &mut st).unwrap();
        assert_eq!(w.data()[0], 1.0);

        // v decays by rho under zero gradient
        let mut st = OptimizerState::default();
        rmsprop_step(&scalar(0.0), &scalar(2.0), &cfg, &mut st).unwrap();
        let v0 = st.second_moment(0).unwrap()[0];
        rmsprop_step(&scalar(0.0), &scalar(0.0), &cfg, &mut st).unwrap();
        assert!((st.second_moment(0).unwrap()[0] - 0.9 * v0).abs() < 1e-15);

        let mut st = OptimizerState::default();
        let w = rmsprop_step(&scalar(0.0), &scalar(0.37), &cfg, &mut st).unwrap();
        let expected = 0.01 / 0.1f64.sqrt();
        assert!((w.data()[0].abs() - expected).abs() / expected < 1e-5);
        assert!((expected / 0.01 - 3.1623).abs() < 1e-4);

        let mut st = OptimizerState::default();
        let g = Tensor::new(&[2], vec![0.003, 0.3]).unwrap();
        let w = rmsprop_step(&Tensor::zeros(&[2]), &g, &cfg, &mut st).unwrap();
        let ratio = w.data()[0] / w.data()[1];
        assert!((0.99..=1.01).contains(&ratio), "{ratio}");
    }

    #[test]
    fn adam_examples() {
        let cfg = OptimizerConfig::adam(0.001);
        let mut st = OptimizerState::default();
        let w = adam_step(&scalar(1.0), &scalar(0.0), &cfg, &mut st).unwrap();
        assert_eq!(w.data()[0], 1.0);

        let mut st = OptimizerState::default();
        let w = adam_step(&scalar(0.0), &scalar(-0.02), &cfg, &mut st).unwrap();
        assert!((w.data()[0] - 0.001).abs() / 0.001 < 0.01);

        let cfg = OptimizerConfig::adam(1e-4).with_decay(1e-6);
        assert!((cfg.learning_rate_at(1_000_000) - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn state_binds_shapes_once() {
        let mut opt = Optimizer::<f64>::new(OptimizerConfig::adam(0.1)).unwrap();
        let mut w = Tensor::zeros(&[3]);
        let g = Tensor::full(&[3], 1.0);
        opt.step([(&mut w, &g)]).unwrap();
        assert_eq!(opt.state().first_moment(0).unwrap().len(), 3);
        let mut other = Tensor::zeros(&[4]);
        assert!(opt.step([(&mut other, &Tensor::full(&[4], 1.0))]).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(OptimizerConfig::adam(-1.0).validate().is_err());
        assert!(OptimizerConfig { beta1: 1.0, ..OptimizerConfig::adam(0.1) }.validate().is_err());
        assert!(OptimizerConfig { epsilon: 0.0, ..OptimizerConfig::adam(0.1) }.validate().is_err());
        assert!(OptimizerConfig::sgd(0.1).with_decay(-1.0).validate().is_err());
        assert!("Adam".parse::<OptimizerKind>().is_ok());
        assert!("adagrad".parse::<OptimizerKind>().is_err());
    }
}
