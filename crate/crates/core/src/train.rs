//! Losses, AdamW, the learning-rate schedule and the self-supervised
//! training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::blocks::gaussian_highpass;
use crate::degradation::{degrade, eval_preset, DegradationSpec};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::rng::Stream;
use crate::tensor::{ParamStore, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub decay_window: usize,
    pub seed: u64,
    pub image_size: usize,
    /// Draw a fresh degradation for every image at every step. When false
    /// each image keeps one fixed degraded copy for the whole run.
    pub resample_degradation: bool,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub save_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr0: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            weight_decay: 1e-4,
            decay_window: 50,
            seed: 42,
            image_size: 512,
            resample_degradation: true,
            save_every: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults at 64² for CPU runs.
    pub fn toy() -> Self {
        Self {
            image_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.decay_window > self.epochs {
            return bad(format!("decay_window {} exceeds epochs {}", self.decay_window, self.epochs));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be a finite non-negative number, got {}", self.lr0));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.image_size < 8 {
            return bad(format!("image_size must be >= 8, got {}", self.image_size));
        }
        Ok(())
    }
}

// ---- losses -------------------------------------------------------------------

fn check_same<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean absolute error between `p_h` and the Gaussian high-pass of `p_g`.
pub fn loss_h<T: Scalar>(p_h: &Tensor<T>, p_g: &Tensor<T>, sigma: f64) -> Result<f64> {
    check_same(p_h, p_g, "loss_h")?;
    let target = gaussian_highpass(p_g, sigma)?;
    let sum: f64 = p_h
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a.to_f64().unwrap() - b.to_f64().unwrap()).abs())
        .sum();
    Ok(sum / p_h.len() as f64)
}

/// Mean squared error between `p_r` and `p_g`.
pub fn loss_r<T: Scalar>(p_r: &Tensor<T>, p_g: &Tensor<T>) -> Result<f64> {
    check_same(p_r, p_g, "loss_r")?;
    let sum: f64 = p_r
        .data()
        .iter()
        .zip(p_g.data())
        .map(|(a, b)| (a.to_f64().unwrap() - b.to_f64().unwrap()).powi(2))
        .sum();
    Ok(sum / p_r.len() as f64)
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")))
    }
}

/// `λ·lh + (1−λ)·lr`.
pub fn loss_total(lh: f64, lr: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * lh + (1.0 - lambda) * lr)
}

// ---- optimizer ----------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// One AdamW update from the gradients held in `store`. Moments are kept in
/// f64. Nothing is modified if any gradient is non-finite.
pub fn optimizer_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut OptState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if let Some((name, _)) = store.iter().find(|(_, p)| !p.grad.all_finite()) {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in store.iter_mut() {
        let n = p.value.len();
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let grad = p.grad.data();
        for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
            let g = grad[i].to_f64().unwrap();
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            let th = theta.to_f64().unwrap();
            let next = th - lr * (m_hat / (v_hat.sqrt() + 1e-8)) - lr * cfg.weight_decay * th;
            *theta = T::from(next).unwrap();
        }
    }
    Ok(())
}

/// Constant `lr0`, then a linear ramp over the last `decay_window` epochs
/// ending at `lr0 / decay_window`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let start = cfg.epochs.saturating_sub(cfg.decay_window);
    if epoch < start || cfg.decay_window == 0 {
        cfg.lr0
    } else {
        cfg.lr0 * cfg.epochs.saturating_sub(epoch) as f64 / cfg.decay_window as f64
    }
}

// ---- loop -----------------------------------------------------------------------

/// Degradation drawn for one training image: one of the eight evaluation
/// variants, chosen and parameterized by `seed`.
pub fn training_spec(seed: u64) -> DegradationSpec {
    let mut variants = eval_preset(seed);
    let i = Stream::new(seed).named("variant").at(0) % variants.len() as u64;
    variants.swap_remove(i as usize)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_h: f64,
    pub l_r: f64,
    pub l_t: f64,
    pub lr: f64,
}

pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("epoch,step,L_h,L_r,L_t,lr\n");
    for r in log {
        let _ = writeln!(s, "{},{},{:.9},{:.9},{:.9},{:e}", r.epoch, r.step, r.l_h, r.l_r, r.l_t, r.lr);
    }
    s
}

/// Losses of one forward/backward pass. Gradients are left in `store`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_h: f64,
    pub l_r: f64,
    pub l_t: f64,
}

/// Forward and backward on one batch; `store` gradients are overwritten.
pub fn compute_gradients<T: Scalar>(
    model: &Model,
    store: &mut ParamStore<T>,
    degraded: &Tensor<T>,
    clean: &Tensor<T>,
) -> Result<StepLosses> {
    check_same(degraded, clean, "training pair")?;
    let cfg = model.config();
    check_lambda(cfg.lambda)?;
    let target_h = gaussian_highpass(clean, cfg.highpass_sigma)?;
    let mut g = Graph::new();
    let x = g.constant(degraded.clone());
    let (p_h, p_r) = model.forward_graph(&mut g, store, x)?;
    let lh = g.mean_abs_error(p_h, &target_h)?;
    let lr = g.mean_sq_error(p_r, clean)?;
    let lt = g.weighted(lh, cfg.lambda, lr, 1.0 - cfg.lambda)?;
    let scalar = |v| g.value(v).data()[0].to_f64().unwrap();
    let (l_h, l_r) = (scalar(lh), scalar(lr));
    let losses = StepLosses {
        l_h,
        l_r,
        l_t: loss_total(l_h, l_r, cfg.lambda)?,
    };
    if !losses.l_t.is_finite() {
        return Ok(losses);
    }
    let grads = g.backward_scalar(lt)?;
    store.zero_grads();
    g.accumulate_param_grads(&grads, store)?;
    Ok(losses)
}

/// Self-supervised trainer over a fixed set of high-quality images.
#[derive(Debug)]
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    params: ParamStore,
    opt: OptState,
    images: Vec<Tensor>,
    fixed: Vec<Tensor>,
    log: Vec<LossRecord>,
    epoch: usize,
    step: usize,
}

impl Trainer {
    /// Each image is `[1, 3, H, W]`; all images must share one size.
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig, images: Vec<Tensor>) -> Result<Self> {
        let model = Model::new(model_cfg)?;
        let params = model.init_params();
        Self::with_params(model, cfg, images, params)
    }

    pub fn with_params(model: Model, cfg: TrainConfig, images: Vec<Tensor>, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        if images.is_empty() {
            return Err(Error::Dataset("no training images".into()));
        }
        let dims = images[0].dims();
        if let Some(bad) = images.iter().find(|t| t.dims() != dims || t.n() != 1) {
            return Err(Error::Dataset(format!(
                "training images must all be [1, 3, H, W] of one size; got {:?} and {:?}",
                dims,
                bad.dims()
            )));
        }
        let specs = model.specs();
        for s in &specs {
            if params.get(&s.name)?.dims() != s.dims {
                return Err(Error::Shape(format!("parameter `{}` does not match the model", s.name)));
            }
        }
        if params.len() != specs.len() {
            return Err(Error::Config("parameter store has entries the model does not use".into()));
        }
        let root = Stream::new(cfg.seed).named("degrade-fixed");
        let fixed = images
            .iter()
            .enumerate()
            .map(|(i, img)| degrade(img, &training_spec(root.split(i as u64).key())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            cfg,
            params,
            opt: OptState::default(),
            images,
            fixed,
            log: Vec::new(),
            epoch: 0,
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn log(&self) -> &[LossRecord] {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Continue counting from `epoch` (used when resuming).
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.step = epoch * self.images.len().div_ceil(self.cfg.batch_size);
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// Degraded input for image `i` at the current step.
    pub fn degraded(&self, i: usize) -> Result<Tensor> {
        if self.cfg.resample_degradation {
            let seed = Stream::new(self.cfg.seed)
                .named("degrade")
                .split(self.step as u64)
                .split(i as u64)
                .key();
            degrade(&self.images[i], &training_spec(seed))
        } else {
            Ok(self.fixed[i].clone())
        }
    }

    /// Image order for the current epoch.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.images.len()).collect();
        Stream::new(self.cfg.seed)
            .named("order")
            .split(self.epoch as u64)
            .shuffle(&mut idx);
        idx
    }

    pub fn run_epoch(&mut self) -> Result<()> {
        let lr = lr_schedule(self.epoch, &self.cfg);
        for batch in self.order().chunks(self.cfg.batch_size) {
            let degraded = batch.iter().map(|&i| self.degraded(i)).collect::<Result<Vec<_>>>()?;
            let x = Tensor::concat_batch(&degraded.iter().collect::<Vec<_>>())?;
            let y = Tensor::concat_batch(&batch.iter().map(|&i| &self.images[i]).collect::<Vec<_>>())?;
            let losses = compute_gradients(&self.model, &mut self.params, &x, &y)?;
            if !losses.l_t.is_finite() {
                return Err(Error::NonFiniteLoss { step: self.step });
            }
            optimizer_step(&mut self.params, &mut self.opt, lr, &self.cfg)?;
            self.log.push(LossRecord {
                epoch: self.epoch,
                step: self.step,
                l_h: losses.l_h,
                l_r: losses.l_r,
                l_t: losses.l_t,
                lr,
            });
            self.step += 1;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Runs the remaining epochs, calling `on_epoch` after each one.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while !self.finished() {
            self.run_epoch()?;
            on_epoch(self)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand(dims: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut s = Stream::new(seed);
        Tensor::from_fn(dims, |_, _, _, _| s.next_f64())
    }

    #[test]
    fn loss_h_examples() {
        let g = rand([1, 3, 16, 16], 1);
        let hp = gaussian_highpass(&g, 2.0).unwrap();
        assert_eq!(loss_h(&hp, &g, 2.0).unwrap(), 0.0);
        let c = Tensor::<f64>::full([1, 3, 16, 16], 0.4);
        let p = Tensor::<f64>::full([1, 3, 16, 16], 0.2);
        assert!((loss_h(&p, &c, 2.0).unwrap() - 0.2).abs() < 1e-12);
        assert!(loss_h(&p, &rand([1, 3, 8, 16], 2), 2.0).is_err());
    }

    #[test]
    fn loss_h_brute_force() {
        let (p, g) = (rand([2, 3, 12, 10], 3), rand([2, 3, 12, 10], 4));
        // direct blur: 2-D Gaussian weights over reflected neighbours
        let taps = crate::blocks::gaussian_taps(2.0);
        let r = (taps.len() / 2) as isize;
        let mut sum = 0.0;
        for n in 0..2 {
            for c in 0..3 {
                for y in 0..12isize {
                    for x in 0..10isize {
                        let mut blur = 0.0;
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let yy = crate::tensor::reflect_index(y + dy, 12);
                                let xx = crate::tensor::reflect_index(x + dx, 10);
                                blur += taps[(dy + r) as usize] * taps[(dx + r) as usize] * g.at(n, c, yy, xx);
                            }
                        }
                        let hp = g.at(n, c, y as usize, x as usize) - blur;
                        sum += (p.at(n, c, y as usize, x as usize) - hp).abs();
                    }
                }
            }
        }
        let want = sum / p.len() as f64;
        assert!((loss_h(&p, &g, 2.0).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn loss_r_examples() {
        let g = rand([1, 3, 8, 8], 5);
        assert_eq!(loss_r(&g, &g).unwrap(), 0.0);
        let shifted = g.map(|v| v + 0.5);
        assert!((loss_r(&shifted, &g).unwrap() - 0.25).abs() < 1e-12);
        let p = rand([1, 3, 8, 8], 6);
        let want: f64 = (0..p.len()).map(|i| (p.data()[i] - g.data()[i]).powi(2)).sum::<f64>() / p.len() as f64;
        assert!((loss_r(&p, &g).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn loss_total_examples() {
        assert_eq!(loss_total(0.3, 0.12, 1.0).unwrap(), 0.3);
        assert_eq!(loss_total(0.3, 0.12, 0.0).unwrap(), 0.12);
        assert!((loss_total(0.3, 0.12, 0.67).unwrap() - 0.2406).abs() < 1e-12);
        assert!(loss_total(0.3, 0.12, 1.5).is_err());
        assert!(loss_total(0.3, 0.12, -0.1).is_err());
    }

    fn scalar_store(theta: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(theta));
        s.accumulate_grad("w", &Tensor::scalar(grad)).unwrap();
        s
    }

    #[test]
    fn adamw_hand_trace() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut s = scalar_store(1.0, 1.0);
        let mut st = OptState::default();
        optimizer_step(&mut s, &mut st, 0.1, &cfg).unwrap();
        // m̂ = v̂ = 1
        let want = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((s.get("w").unwrap().data()[0] - want).abs() < 1e-15);
        assert!((want - 0.9).abs() < 1e-8);
    }

    #[test]
    fn adamw_zero_gradient() {
        let mut st = OptState::default();
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut s = scalar_store(0.7, 0.0);
        optimizer_step(&mut s, &mut st, 0.1, &cfg).unwrap();
        assert_eq!(s.get("w").unwrap().data()[0], 0.7);

        let cfg = TrainConfig {
            weight_decay: 0.01,
            ..TrainConfig::default()
        };
        let mut s = scalar_store(0.7, 0.0);
        optimizer_step(&mut s, &mut OptState::default(), 0.1, &cfg).unwrap();
        assert_eq!(s.get("w").unwrap().data()[0], 0.7 - 0.1 * 0.01 * 0.7);

        let mut s = scalar_store(0.7, 3.0);
        optimizer_step(&mut s, &mut OptState::default(), 0.0, &cfg).unwrap();
        assert_eq!(s.get("w").unwrap().data()[0], 0.7);
    }

    #[test]
    fn adamw_rejects_non_finite() {
        let mut s = scalar_store(1.0, f64::NAN);
        let err = optimizer_step(&mut s, &mut OptState::default(), 0.1, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"), "{err}");
        assert_eq!(s.get("w").unwrap().data()[0], 1.0);
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 2e-4);
        assert_eq!(lr_schedule(49, &cfg), 2e-4);
        assert_eq!(lr_schedule(50, &cfg), 2e-4);
        assert!((lr_schedule(75, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(99, &cfg) - 2e-4 / 50.0).abs() < 1e-18);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.batch_size, c.lr0, c.beta1, c.beta2, c.seed, c.image_size),
            (16, 2e-4, 0.5, 0.999, 42, 512)
        );
        assert_eq!(TrainConfig::toy().image_size, 64);
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 10, "decay_window": 5}"#).unwrap();
        c.validate().unwrap();
        let c = TrainConfig {
            epochs: 10,
            decay_window: 20,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 10}"#).is_err());
    }

    fn tiny_images(n: usize) -> Vec<Tensor> {
        (0..n)
            .map(|i| {
                let mut s = Stream::new(100 + i as u64);
                Tensor::from_fn([1, 3, 16, 16], |_, c, y, x| {
                    (0.3 + 0.1 * c as f32 + 0.02 * (y + x) as f32 + 0.05 * s.next_f64() as f32).min(1.0)
                })
            })
            .collect()
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            levels: 2,
            base_channels: 4,
            groups: 2,
            reduction: 2,
            ..ModelConfig::toy()
        }
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 2,
            decay_window: 1,
            image_size: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_log_deterministic() {
        let run = || {
            let mut t = Trainer::new(tiny_model(), tiny_train(), tiny_images(3)).unwrap();
            t.run(|_| Ok(())).unwrap();
            (loss_log_csv(t.log()), t.into_params())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.lines().count(), 1 + 3 * 2);
        assert!(a.starts_with("epoch,step,L_h,L_r,L_t,lr\n"));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            Trainer::new(tiny_model(), tiny_train(), vec![]),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn nan_loss_aborts_with_step() {
        let mut images = tiny_images(2);
        images[1].data_mut()[0] = f32::NAN;
        let cfg = TrainConfig {
            batch_size: 1,
            resample_degradation: false,
            ..tiny_train()
        };
        let mut t = Trainer::new(tiny_model(), cfg, images).unwrap();
        match t.run(|_| Ok(())) {
            Err(Error::NonFiniteLoss { step }) => assert!(step <= 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lambda_one_isolates_reconstruction_head() {
        let model = Model::new(ModelConfig {
            lambda: 1.0,
            ..tiny_model()
        })
        .unwrap();
        let mut ps = model.init_params::<f32>();
        let imgs = tiny_images(2);
        let x = Tensor::concat_batch(&[&imgs[0], &imgs[1]]).unwrap();
        compute_gradients(&model, &mut ps, &x, &x).unwrap();
        for (name, p) in ps.iter() {
            if name.starts_with("head.rec") {
                assert!(p.grad.data().iter().all(|&g| g == 0.0), "{name}");
            }
        }
        assert!(ps.grad("head.hf.weight").unwrap().data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn one_step_descends() {
        let imgs = tiny_images(2);
        let clean = Tensor::concat_batch(&[&imgs[0], &imgs[1]]).unwrap();
        let degraded = degrade(&clean, &training_spec(5)).unwrap();
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut wins = 0;
        for seed in 0..10 {
            let model = Model::new(ModelConfig { seed, ..tiny_model() }).unwrap();
            let mut ps = model.init_params::<f64>();
            let (x, y) = (degraded.cast::<f64>(), clean.cast::<f64>());
            let before = compute_gradients(&model, &mut ps, &x, &y).unwrap().l_t;
            optimizer_step(&mut ps, &mut OptState::default(), 1e-4, &cfg).unwrap();
            let after = compute_gradients(&model, &mut ps, &x, &y).unwrap().l_t;
            wins += (after < before) as usize;
        }
        assert!(wins >= 9, "{wins}/10");
    }
}
