//! Weighted cross-entropy loss, SGD with momentum/weight-decay and a stepped
//! schedule, and the training loop with static-sample interleaving.


use crate::data::{synthesize_static, ClipSample, ScenarioIter};
use crate::graph::GraphError;
use crate::model::Model;
use crate::tensor::{Dims5, Mask2, Tensor5, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite {what} in parameter {param} at iteration {iter} (max abs {max_abs:e})")]
    NonFinite { what: &'static str, param: String, iter: usize, max_abs: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Weight on the foreground (y = 1) term.
    pub alpha: f32,
    /// Probability clamp to keep the logs finite.
    pub epsilon: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 4.0, epsilon: 1e-7 }
    }
}

/// Mean weighted binary cross-entropy over all pixels, plus the gradient of
/// the loss with respect to the predictions.
pub fn weighted_bce(
    pred: &Tensor5<f32>,
    target: &Mask2,
    cfg: &LossConfig,
) -> Result<(f32, Tensor5<f32>), TrainError> {
    let d = pred.dims();
    if d.c != 1 || d.l != 1 || d.n != target.n || d.h != target.h || d.w != target.w {
        return Err(TrainError::Shape(format!(
            "prediction {:?} does not match {}x{}x{} mask",
            d, target.n, target.h, target.w
        )));
    }
    assert!(cfg.alpha > 0.0 && cfg.epsilon > 0.0 && cfg.epsilon < 0.5);
    let count = pred.data().len() as f64;
    let inv = 1.0 / count as f32;
    let mut grad = Tensor5::zeros(d)?;
    let gdata = grad.data_mut();
    let mut acc = 0.0f64;
    for (k, (&p, &y)) in pred.data().iter().zip(target.data()).enumerate() {
        let p = p.clamp(cfg.epsilon, 1.0 - cfg.epsilon);
        if y == 1 {
            acc -= cfg.alpha as f64 * (p as f64).ln();
            gdata[k] = -cfg.alpha / p * inv;
        } else {
            acc -= (1.0 - p as f64).ln();
            gdata[k] = 1.0 / (1.0 - p) * inv;
        }
    }
    Ok(((acc / count) as f32, grad))
}

#[derive(Debug, Clone)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub decay_every_iters: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iters: usize,
}

impl Default for OptimConfig {
    /// Schedule from the training protocol: lr 1e-6 multiplied by 0.1 every
    /// 20k iterations, momentum 0.9, weight decay 5e-4, batch 12, stop 80k.
    fn default() -> Self {
        OptimConfig {
            base_lr: 1e-6,
            lr_decay_factor: 0.1,
            decay_every_iters: 20_000,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 12,
            max_iters: 80_000,
        }
    }
}

impl OptimConfig {
    pub fn lr_at(&self, iter: usize) -> f64 {
        self.base_lr * self.lr_decay_factor.powi((iter / self.decay_every_iters) as i32)
    }
}

/// Optimizer state: momentum buffers (one per parameter) and the iteration
/// counter that drives the schedule.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub velocity: Vec<Tensor5<f32>>,
    pub iter: usize,
}

impl TrainState {
    pub fn new(model: &Model) -> Self {
        TrainState {
            velocity: model
                .graph
                .params()
                .iter()
                .map(|p| Tensor5::zeros(p.value.dims()).unwrap())
                .collect(),
            iter: 0,
        }
    }
}

/// v <- momentum*v + grad + wd*param; param <- param - lr(iter)*v.
pub fn sgd_step(
    model: &mut Model,
    state: &mut TrainState,
    grads: &[Tensor5<f32>],
    cfg: &OptimConfig,
) -> Result<(), TrainError> {
    let lr = cfg.lr_at(state.iter) as f32;
    let params = model.graph.params_mut();
    assert_eq!(params.len(), grads.len());
    for ((param, v), g) in params.iter_mut().zip(&mut state.velocity).zip(grads) {
        if g.dims() != param.value.dims() {
            return Err(TrainError::Shape(format!(
                "gradient dims {:?} != parameter {} dims {:?}",
                g.dims(),
                param.name,
                param.value.dims()
            )));
        }
        // note: f32::max ignores NaN, so track finiteness separately
        let mut max_abs = 0.0f32;
        let mut finite = true;
        for &x in g.data() {
            finite &= x.is_finite();
            max_abs = max_abs.max(x.abs());
        }
        if !finite {
            return Err(TrainError::NonFinite {
                what: "gradient",
                param: param.name.clone(),
                iter: state.iter,
                max_abs: max_abs as f64,
            });
        }
        let pv = param.value.data_mut();
        let vv = v.data_mut();
        for k in 0..pv.len() {
            vv[k] = cfg.momentum as f32 * vv[k] + g.data()[k] + cfg.weight_decay as f32 * pv[k];
            pv[k] -= lr * vv[k];
        }
    }
    state.iter += 1;
    Ok(())
}

/// Stack single-sample clips (and masks) into one batch tensor.
pub fn stack_batch(samples: &[&ClipSample]) -> Result<(Tensor5<f32>, Mask2), TrainError> {
    let first = samples
        .first()
        .ok_or_else(|| TrainError::Shape("empty batch".into()))?
        .clip
        .dims();
    let dims = Dims5::new(samples.len(), first.c, first.l, first.h, first.w);
    let mut clip = Tensor5::zeros(dims)?;
    let mut mask_data = Vec::with_capacity(samples.len() * first.h * first.w);
    let per = first.c * first.l * first.h * first.w;
    for (n, s) in samples.iter().enumerate() {
        if s.clip.dims() != first {
            return Err(TrainError::Shape(format!(
                "batch mixes clip shapes {:?} and {:?}",
                first,
                s.clip.dims()
            )));
        }
        clip.data_mut()[n * per..(n + 1) * per].copy_from_slice(s.clip.data());
        mask_data.extend_from_slice(s.mask.data());
    }
    let mask = Mask2::from_vec(samples.len(), first.h, first.w, mask_data)
        .map_err(TrainError::Tensor)?;
    Ok((clip, mask))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// "iter <n> lr <v> loss <v>" lines, one per logged iteration.
    pub loss_log: Vec<String>,
    pub losses: Vec<f32>,
}

/// Minibatch SGD over the scenario-balanced stream. When `static_synthesis`
/// is on, each batch is half native draws and half their synthesized-static
/// counterparts.
pub fn train(
    model: &mut Model,
    sampler: &mut ScenarioIter,
    loss_cfg: &LossConfig,
    optim_cfg: &OptimConfig,
    static_synthesis: bool,
    log_every: usize,
    mut on_log: impl FnMut(&str),
) -> Result<TrainReport, TrainError> {
    let mut state = TrainState::new(model);
    let mut report = TrainReport { loss_log: Vec::new(), losses: Vec::new() };
    let native_per_batch = if static_synthesis {
        (optim_cfg.batch_size + 1) / 2
    } else {
        optim_cfg.batch_size
    };
    for iter in 0..optim_cfg.max_iters {
        let mut batch: Vec<ClipSample> = Vec::with_capacity(optim_cfg.batch_size);
        for _ in 0..native_per_batch {
            batch.push(sampler.next_sample().clone());
        }
        if static_synthesis {
            let statics: Vec<ClipSample> = batch
                .iter()
                .take(optim_cfg.batch_size - native_per_batch)
                .map(synthesize_static)
                .collect();
            batch.extend(statics);
        }
        let refs: Vec<&ClipSample> = batch.iter().collect();
        let (clip, mask) = stack_batch(&refs)?;

        let acts = model.graph.forward(&clip)?;
        let (loss, dpred) = weighted_bce(acts.output(), &mask, loss_cfg)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite {
                what: "loss",
                param: "<batch loss>".into(),
                iter,
                max_abs: loss as f64,
            });
        }
        let grads = model.graph.backward(&acts, &dpred)?;
        sgd_step(model, &mut state, &grads.params, optim_cfg)?;

        report.losses.push(loss);
        if log_every > 0 && (iter % log_every == 0 || iter + 1 == optim_cfg.max_iters) {
            let line = format!("iter {iter} lr {:e} loss {loss}", optim_cfg.lr_at(iter));
            on_log(&line);
            report.loss_log.push(line);
        }
    }
    Ok(report)
}
