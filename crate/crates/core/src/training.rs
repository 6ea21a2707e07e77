//! Training of aggregation GNNs: smooth-L1 loss, Lipschitz penalties on the
//! first-layer filters, backpropagation, Adam and gradient checking.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datasets::RegressionTask;
use crate::error::{Error, Result};
use crate::filters::{Omega, PolyFilter};
use crate::graph::{GraphSignal, Matrix};
use crate::model::{AggGnnModel, ForwardTrace};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    #[serde(default = "default_beta")]
    pub smooth_l1_beta: f64,
    #[serde(default)]
    pub penalty_l0_weight: f64,
    #[serde(default)]
    pub penalty_l1_weight: f64,
    #[serde(default)]
    pub l0_target: f64,
    #[serde(default)]
    pub l1_target: f64,
    pub omega: Omega,
}

fn default_beta() -> f64 {
    1.0
}

impl LossSpec {
    /// Plain smooth-L1 with beta 1 and no penalty.
    pub fn unpenalized(omega: Omega) -> Self {
        Self {
            smooth_l1_beta: 1.0,
            penalty_l0_weight: 0.0,
            penalty_l1_weight: 0.0,
            l0_target: 0.0,
            l1_target: 0.0,
            omega,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.smooth_l1_beta > 0.0) {
            return Err(Error::param("smooth_l1_beta must be > 0"));
        }
        for (name, v) in [
            ("penalty_l0_weight", self.penalty_l0_weight),
            ("penalty_l1_weight", self.penalty_l1_weight),
            ("l0_target", self.l0_target),
            ("l1_target", self.l1_target),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name}={v} must be finite and >= 0")));
            }
        }
        self.omega.validate()
    }

    pub fn penalized(&self) -> bool {
        self.penalty_l0_weight > 0.0 || self.penalty_l1_weight > 0.0
    }
}

/// `0.5 d²/β` for `|d| < β`, else `|d| - β/2`.
pub fn smooth_l1(pred: f64, target: f64, beta: f64) -> f64 {
    let d = pred - target;
    if d.abs() < beta {
        0.5 * d * d / beta
    } else {
        d.abs() - 0.5 * beta
    }
}

pub fn smooth_l1_grad(pred: f64, target: f64, beta: f64) -> f64 {
    let d = pred - target;
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}

/// Soft hinge on `|p_m'(λ)|` and `|λ p_m'(λ)|` over every cyclic shift of
/// every filter, averaged over the grid nodes of `spec.omega`.
pub fn lipschitz_penalty(filters: &[PolyFilter], spec: &LossSpec) -> f64 {
    penalty_and_grad(filters, spec, None)
}

/// Penalty value; when `grad` is given, adds `d penalty / d coeff` to it with
/// the coefficients of all filters laid out back to back.
pub fn penalty_and_grad(filters: &[PolyFilter], spec: &LossSpec, mut grad: Option<&mut [f64]>) -> f64 {
    if !spec.penalized() {
        return 0.0;
    }
    let (w0, w1) = (spec.penalty_l0_weight, spec.penalty_l1_weight);
    let scale = 1.0 / spec.omega.node_count() as f64;
    let mut total = 0.0;
    let mut offset = 0;
    for f in filters {
        let len = f.taps();
        let h = f.coeffs();
        // dpow[k] = k λ^{k-1}: sensitivity of p'(λ) to the degree-k coefficient
        let mut dpow = vec![0.0; len];
        for lambda in spec.omega.nodes() {
            let mut p = 1.0;
            for (k, d) in dpow.iter_mut().enumerate() {
                if k == 0 {
                    *d = 0.0;
                } else {
                    *d = k as f64 * p;
                    p *= lambda;
                }
            }
            for m in 0..len {
                // coefficient at degree k of p_m is h[(k - m) mod len]
                let deriv: f64 = (1..len).map(|k| dpow[k] * h[(k + len - m) % len]).sum();
                let e0 = (deriv.abs() - spec.l0_target).max(0.0);
                let e1 = (lambda * deriv).abs() - spec.l1_target;
                let e1 = e1.max(0.0);
                total += scale * (w0 * e0 * e0 + w1 * e1 * e1);
                if let Some(g) = grad.as_deref_mut() {
                    let sgn = deriv.signum();
                    let coeff = scale
                        * (2.0 * w0 * e0 * sgn + 2.0 * w1 * e1 * sgn * lambda.abs());
                    if coeff != 0.0 {
                        for k in 1..len {
                            g[offset + (k + len - m) % len] += coeff * dpow[k];
                        }
                    }
                }
            }
        }
        offset += len;
    }
    total
}

/// First-layer filters as penalty inputs, padded to `a + 1` taps, together
/// with the map from padded coefficient index to model parameter index.
fn penalty_layout(model: &AggGnnModel) -> (Vec<PolyFilter>, Vec<Option<usize>>) {
    let filters = model.padded_first_layer_filters();
    let taps = model.layers[0].spec.taps;
    let len = model.a + 1;
    let mut map = Vec::with_capacity(filters.len() * len);
    for f in 0..filters.len() {
        for k in 0..len {
            map.push((k < taps).then_some(f * taps + k));
        }
    }
    (filters, map)
}

/// Total penalty of a model's first layer.
pub fn model_penalty(model: &AggGnnModel, spec: &LossSpec) -> f64 {
    lipschitz_penalty(&model.padded_first_layer_filters(), spec)
}

/// Loss and gradient of `mean smooth_l1 + penalty` over a batch.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub grad: Vec<f64>,
}

pub fn backward(model: &AggGnnModel, s: &Matrix, inputs: &[GraphSignal], targets: &[f64], spec: &LossSpec) -> Result<LossGrad> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::dim(format!(
            "{} inputs with {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mut grad = vec![0.0; model.param_count()];
    let scale = 1.0 / inputs.len() as f64;
    let mut data_loss = 0.0;
    for (x, &t) in inputs.iter().zip(targets) {
        let trace = model.forward_trace(s, x)?;
        data_loss += smooth_l1(trace.readout, t, spec.smooth_l1_beta);
        let upstream = scale * smooth_l1_grad(trace.readout, t, spec.smooth_l1_beta);
        model.backward_trace(&trace, upstream, &mut grad);
    }
    data_loss *= scale;
    let penalty = if spec.penalized() {
        let (filters, map) = penalty_layout(model);
        let mut pg = vec![0.0; map.len()];
        let p = penalty_and_grad(&filters, spec, Some(&mut pg));
        for (g, idx) in pg.iter().zip(&map) {
            if let Some(i) = idx {
                grad[*i] += g;
            }
        }
        p
    } else {
        0.0
    };
    Ok(LossGrad {
        loss: data_loss + penalty,
        data_loss,
        penalty,
        grad,
    })
}

/// Loss only, without gradients.
pub fn batch_loss(model: &AggGnnModel, s: &Matrix, inputs: &[GraphSignal], targets: &[f64], spec: &LossSpec) -> Result<f64> {
    let mut total = 0.0;
    for (x, &t) in inputs.iter().zip(targets) {
        total += smooth_l1(model.forward(s, x)?.readout, t, spec.smooth_l1_beta);
    }
    Ok(total / inputs.len().max(1) as f64 + model_penalty(model, spec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, params: usize) -> Result<Self> {
        if !(lr >= 0.0) {
            return Err(Error::param("learning rate must be >= 0"));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::param("Adam betas must lie in [0, 1)"));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; params],
            v: vec![0.0; params],
            step: 0,
        })
    }

    /// lr 0.005, betas (0.9, 0.999), eps 1e-8.
    pub fn with_defaults(params: usize) -> Self {
        Self::new(0.005, 0.9, 0.999, 1e-8, params).expect("defaults are valid")
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(state: &mut OptimizerState, weights: &mut [f64], grads: &[f64]) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != state.m.len() {
        return Err(Error::dim(format!(
            "weights {}, grads {}, state {}",
            weights.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..weights.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        weights[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_lr() -> f64 {
    0.005
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            seed,
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub penalty: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AggGnnModel,
    pub history: Vec<EpochRecord>,
}

/// Mean smooth-L1 over a set of samples (NaN when empty).
pub fn mean_loss<'a>(model: &AggGnnModel, s: &Matrix, samples: impl Iterator<Item = &'a crate::datasets::Sample>, beta: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for sample in samples {
        total += smooth_l1(model.forward(s, &sample.input)?.readout, sample.target, beta);
        count += 1;
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

/// Mini-batch Adam training with a seeded shuffle each epoch. Each history
/// entry is measured on the full splits after that epoch.
pub fn train(model: &AggGnnModel, task: &RegressionTask, spec: &LossSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    spec.validate()?;
    if task.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::param("batch_size must be >= 1"));
    }
    let s = task.graph.shift();
    let mut model = model.clone();
    let mut params = model.params();
    let mut opt = OptimizerState::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, params.len())?;
    let mut rng = rng::seeded(cfg.seed);
    let mut order = task.train.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<GraphSignal> = batch.iter().map(|&k| task.samples[k].input.clone()).collect();
            let targets: Vec<f64> = batch.iter().map(|&k| task.samples[k].target).collect();
            let lg = backward(&model, s, &inputs, &targets, spec)?;
            adam_step(&mut opt, &mut params, &lg.grad)?;
            model.set_params(&params)?;
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: mean_loss(&model, s, task.train_samples(), spec.smooth_l1_beta)?,
            penalty: model_penalty(&model, spec),
            test_loss: mean_loss(&model, s, task.test_samples(), spec.smooth_l1_beta)?,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Training history as CSV `epoch,train_loss,penalty,test_loss`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,penalty,test_loss\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            r.epoch, r.train_loss, r.penalty, r.test_loss
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_parameter: String,
    pub probe_count: usize,
    /// Probes skipped because the finite difference crossed a kink.
    pub skipped: usize,
}

/// Minimum number of probed weights.
pub const MIN_PROBES: usize = 32;

fn kink_signature(model: &AggGnnModel, traces: &[ForwardTrace]) -> Vec<i64> {
    let mut sig = Vec::new();
    for t in traces {
        for (layer, lt) in model.layers.iter().zip(&t.layers) {
            if layer.spec.nonlinearity.has_kink() {
                sig.extend(lt.pre.data.iter().map(|&u| u.signum() as i64 * (u != 0.0) as i64));
            }
            if matches!(layer.spec.pool, crate::model::Pooling::Max { .. }) {
                sig.extend(lt.argmax.iter().map(|&a| a as i64));
            }
        }
    }
    sig
}

fn near_kink(model: &AggGnnModel, traces: &[ForwardTrace]) -> bool {
    traces.iter().any(|t| {
        model.layers.iter().zip(&t.layers).any(|(layer, lt)| {
            layer.spec.nonlinearity.has_kink() && lt.pre.data.iter().any(|u| u.abs() < 1e-6)
        })
    })
}

/// Compares [`backward`] with central differences on randomly probed weights.
///
/// The relative error uses the denominator `max(|g|, 1e-8)` where `g` is the
/// larger magnitude of the two estimates. Probes whose perturbation changes a
/// relu/abs sign pattern or a max-pool winner are skipped.
pub fn grad_check(
    model: &AggGnnModel,
    s: &Matrix,
    inputs: &[GraphSignal],
    targets: &[f64],
    spec: &LossSpec,
    fd_step: f64,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(fd_step > 0.0) {
        return Err(Error::param("fd_step must be > 0"));
    }
    let analytic = backward(model, s, inputs, targets, spec)?;
    let params = model.params();
    let probes = probes.max(MIN_PROBES);
    let mut rng = rng::seeded(seed);
    let traces_at = |m: &AggGnnModel| -> Result<Vec<ForwardTrace>> {
        inputs.iter().map(|x| m.forward_trace(s, x)).collect()
    };
    let base_sig = kink_signature(model, &traces_at(model)?);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_parameter: String::new(),
        probe_count: 0,
        skipped: 0,
    };
    let mut probe_model = model.clone();
    for _ in 0..probes {
        let idx = rng.random_range(0..params.len());
        let mut eval = |delta: f64| -> Result<(f64, Vec<ForwardTrace>)> {
            let mut p = params.clone();
            p[idx] += delta;
            probe_model.set_params(&p)?;
            let traces = traces_at(&probe_model)?;
            Ok((batch_loss(&probe_model, s, inputs, targets, spec)?, traces))
        };
        let (plus, tp) = eval(fd_step)?;
        let (minus, tm) = eval(-fd_step)?;
        report.probe_count += 1;
        let crosses = kink_signature(model, &tp) != base_sig || kink_signature(model, &tm) != base_sig;
        if crosses || near_kink(model, &tp) || near_kink(model, &tm) {
            report.skipped += 1;
            continue;
        }
        let fd = (plus - minus) / (2.0 * fd_step);
        let g = analytic.grad[idx];
        let rel = (fd - g).abs() / g.abs().max(fd.abs()).max(1e-8);
        if rel > report.max_rel_error || report.worst_parameter.is_empty() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst_parameter = model.param_name(idx);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::certify_filter;
    use crate::graph::matrix_from_rows;
    use crate::model::{CnnLayerSpec, FilterBank, FirstLayerMode, Nonlinearity, Pooling, Readout, ReadoutKind};

    fn omega() -> Omega {
        Omega::new(-1.0, 1.0, 256).unwrap()
    }

    fn pf(c: &[f64]) -> PolyFilter {
        PolyFilter::new(c.to_vec()).unwrap()
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(3.0, 3.0, 1.0), 0.0);
        assert_eq!(smooth_l1(2.0, 0.0, 1.0), 1.5);
        assert_eq!(smooth_l1(0.5, 0.0, 1.0), 0.125);
        // continuity of value and slope at the transition
        let b = 0.7;
        assert!((smooth_l1(b - 1e-12, 0.0, b) - smooth_l1(b + 1e-12, 0.0, b)).abs() < 1e-11);
        assert!((smooth_l1_grad(b - 1e-12, 0.0, b) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn penalty_examples() {
        let spec = LossSpec {
            penalty_l0_weight: 1.0,
            l0_target: 1.0,
            l1_target: 100.0,
            ..LossSpec::unpenalized(omega())
        };
        assert!((lipschitz_penalty(&[pf(&[0., 2.])], &spec) - 1.0).abs() < 1e-12);
        assert_eq!(lipschitz_penalty(&[pf(&[0., 0.5])], &spec), 0.0);
        let off = LossSpec::unpenalized(omega());
        assert_eq!(lipschitz_penalty(&[pf(&[0., 2.])], &off), 0.0);
    }

    #[test]
    fn penalty_zero_iff_certified() {
        let spec = LossSpec {
            penalty_l0_weight: 1.0,
            penalty_l1_weight: 1.0,
            l0_target: 1.5,
            l1_target: 1.2,
            ..LossSpec::unpenalized(omega())
        };
        for c in [[0.1, 0.5, 0.2], [0.0, 1.0, 0.3], [1.0, -0.2, 0.1], [0.0, 0.0, 0.8]] {
            let f = pf(&c);
            let cert = certify_filter(&f, &spec.omega, spec.l0_target, spec.l1_target).unwrap();
            assert_eq!(lipschitz_penalty(&[f], &spec) == 0.0, cert.pass, "{c:?}");
        }
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let spec = LossSpec {
            penalty_l0_weight: 0.7,
            penalty_l1_weight: 0.3,
            l0_target: 0.5,
            l1_target: 0.4,
            ..LossSpec::unpenalized(omega())
        };
        let c = vec![0.3, -0.8, 0.6, 0.2];
        let mut g = vec![0.0; 4];
        penalty_and_grad(&[pf(&c)], &spec, Some(&mut g));
        for k in 0..4 {
            let h = 1e-6;
            let mut cp = c.clone();
            cp[k] += h;
            let mut cm = c.clone();
            cm[k] -= h;
            let fd = (lipschitz_penalty(&[pf(&cp)], &spec) - lipschitz_penalty(&[pf(&cm)], &spec)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn backward_hand_chain_rule() {
        // one identity layer, no penalty, 2 nodes, sum readout:
        // readout = h0 (x0 + x1) + h1 ((Sx)0 + (Sx)1) summed over positions
        let s = matrix_from_rows(&[vec![0., 1.], vec![1., 0.]]).unwrap();
        let model = AggGnnModel::from_filters(
            1,
            &FilterBank::Shared(vec![pf(&[0.2, 0.1])]),
            Nonlinearity::Identity,
            Pooling::None,
            Readout::Sum,
        )
        .unwrap();
        let x = GraphSignal(vec![1.0, 2.0]);
        // rows [1,2] and [2,1]; each row sums to 3 over both positions,
        // so readout = 2 * 3 * (h0 + h1) = 1.8 and d/dh_k = 6
        let out = model.forward(&s, &x).unwrap();
        assert!((out.readout - 1.8).abs() < 1e-14);
        let spec = LossSpec::unpenalized(omega());
        let lg = backward(&model, &s, std::slice::from_ref(&x), &[1.0], &spec).unwrap();
        // d = 0.8 inside the quadratic zone: dL/dy = 0.8
        assert!((lg.grad[0] - 0.8 * 6.0).abs() < 1e-12);
        assert!((lg.grad[1] - 0.8 * 6.0).abs() < 1e-12);

        let lg2 = backward(&model, &s, &[x.clone(), x.clone()], &[1.0, 1.0], &spec).unwrap();
        assert_eq!(lg.grad, lg2.grad);
    }

    #[test]
    fn backward_zero_model_zero_targets() {
        let specs = [CnnLayerSpec {
            taps: 3,
            features_in: 1,
            features_out: 2,
            nonlinearity: Nonlinearity::Relu,
            pool: Pooling::None,
        }];
        let mut model = AggGnnModel::init(2, FirstLayerMode::Shared, &specs, ReadoutKind::Sum, None, 1).unwrap();
        model.set_params(&vec![0.0; model.param_count()]).unwrap();
        let s = matrix_from_rows(&[vec![0., 1.], vec![1., 0.]]).unwrap();
        let lg = backward(&model, &s, &[GraphSignal(vec![1., -1.])], &[0.0], &LossSpec::unpenalized(omega())).unwrap();
        assert!(lg.grad.iter().all(|&g| g == 0.0));
        assert!(backward(&model, &s, &[], &[], &LossSpec::unpenalized(omega())).is_err());
    }

    #[test]
    fn adam_examples() {
        let mut st = OptimizerState::with_defaults(1);
        let mut w = vec![0.0];
        adam_step(&mut st, &mut w, &[0.0]).unwrap();
        assert_eq!(w, vec![0.0]);
        assert_eq!((st.m[0], st.v[0], st.step), (0.0, 0.0, 1));

        let mut st = OptimizerState::with_defaults(1);
        let mut w = vec![0.0];
        adam_step(&mut st, &mut w, &[1.0]).unwrap();
        assert!((w[0] + 0.005).abs() <= 1e-6);

        let mut st = OptimizerState::new(0.0, 0.9, 0.999, 1e-8, 2).unwrap();
        let mut w = vec![1.0, -2.0];
        adam_step(&mut st, &mut w, &[3.0, 4.0]).unwrap();
        assert_eq!(w, vec![1.0, -2.0]);
        assert!(adam_step(&mut st, &mut w, &[1.0]).is_err());
        assert!(OptimizerState::new(0.1, 1.0, 0.9, 1e-8, 1).is_err());
    }

    #[test]
    fn history_csv_header() {
        let csv = history_csv(&[EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            penalty: 0.0,
            test_loss: 0.25,
        }]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,train_loss,penalty,test_loss"));
        assert!(lines.next().unwrap().starts_with("1,5.0000000000000000e-1,"));
    }
}
