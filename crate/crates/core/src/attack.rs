//! The reconstruction loop: optimize a candidate image against the combined
//! loss with AdamW, clamp into the pixel box, and keep the best iterate.
//! Restarts and per-prior runs are independent jobs reduced by lowest loss.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::label::restore_label;
use crate::losses::{GradientCapture, LossComponents, LossWeights, ReconLoss};
use crate::model::{Model, ModelSpec, ParamStore};
use crate::optim::AdamW;
use crate::rng::{self, stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum InitScheme {
    /// Pixels drawn uniformly from [0, 1).
    Uniform01,
    /// Pixels drawn from N(0.5, 0.25), clamped into [0, 1].
    Gaussian,
    /// Start from a fixed image (clamped); not reachable from config files.
    Image(Arc<Tensor>),
}

#[derive(Clone, Debug)]
pub struct AttackConfig {
    pub iterations: u32,
    pub restarts: u32,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub init: InitScheme,
    pub seed: u64,
    pub weights: LossWeights,
    pub log_every: u32,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 2000,
            restarts: 1,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            init: InitScheme::Uniform01,
            seed: 0,
            weights: LossWeights::default(),
            log_every: 100,
        }
    }
}

impl AttackConfig {
    /// Invariants for configs coming from files; `reconstruct` itself also
    /// tolerates the degenerate lr = 0 no-op optimizer used in tests.
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Invalid("iterations must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Invalid("restarts must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Invalid(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.log_every == 0 {
            return Err(Error::Invalid("log_every must be >= 1".into()));
        }
        self.weights.validate()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TracePoint {
    pub iter: u32,
    pub l_r: f64,
    pub components: LossComponents,
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    /// Best-by-loss iterate, clamped into [0, 1].
    pub image: Tensor,
    /// Combined loss at the best iterate.
    pub l_r: f64,
    pub components: LossComponents,
    pub best_iter: u32,
    /// Combined loss at the final iterate (>= l_r by construction).
    pub last_l_r: f64,
    pub trace: Vec<TracePoint>,
    pub prior_id: Option<u64>,
    pub restart: u32,
    pub seed: u64,
    pub wall_time: Duration,
    /// Some iterate produced an exactly-zero candidate gradient.
    pub zero_grad_flagged: bool,
}

#[derive(Clone, Debug)]
pub struct PriorImage {
    pub image: Arc<Tensor>,
    pub class: usize,
    pub id: u64,
}

/// Attacker-held same-class images.
#[derive(Clone, Debug, Default)]
pub struct PriorSet {
    pub items: Vec<PriorImage>,
}

#[derive(Debug)]
pub struct AttackOutcome {
    pub results: Vec<ReconstructionResult>,
    /// Index into `results` of the lowest-loss run (ties: lower prior id,
    /// then lower restart id).
    pub best: usize,
    pub label: usize,
    /// No prior matched the restored class; ran gradient-only instead.
    pub fallback: bool,
}

impl AttackOutcome {
    pub fn best_result(&self) -> &ReconstructionResult {
        &self.results[self.best]
    }
}

/// Label used by the attack: restored from the gradient when possible,
/// otherwise the capture's claimed label.
pub fn resolve_label(capture: &GradientCapture, spec: &ModelSpec) -> Result<usize> {
    match restore_label(capture, spec) {
        Ok(label) => Ok(label),
        Err(err) => capture.label.ok_or(err),
    }
}

fn check_fingerprint(capture: &GradientCapture, spec: &ModelSpec) -> Result<()> {
    let model_fp = spec.fingerprint();
    if capture.fingerprint != model_fp {
        return Err(Error::FingerprintMismatch {
            capture: capture.fingerprint,
            model: model_fp,
        });
    }
    Ok(())
}

fn initial_image(init: &InitScheme, shape: &[usize], seed: u64) -> Tensor {
    let mut x = match init {
        InitScheme::Image(img) => (**img).clone(),
        InitScheme::Uniform01 => {
            let mut r = rng::rng_from(rng::derive(seed, stream::ATTACK_INIT));
            let mut t = Tensor::zeros(shape);
            for v in t.data_mut() {
                *v = r.gen::<f64>();
            }
            t
        }
        InitScheme::Gaussian => {
            let mut r = rng::rng_from(rng::derive(seed, stream::ATTACK_INIT));
            let normal = Normal::new(0.5, 0.25).expect("valid parameters");
            let mut t = Tensor::zeros(shape);
            for v in t.data_mut() {
                *v = normal.sample(&mut r);
            }
            t
        }
    };
    for v in x.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    x
}

/// Reconstruct the victim image behind `capture` from one initialization.
pub fn reconstruct(
    capture: &GradientCapture,
    spec: &ModelSpec,
    store: &ParamStore,
    prior: Option<&PriorImage>,
    config: &AttackConfig,
) -> Result<ReconstructionResult> {
    check_fingerprint(capture, spec)?;
    let label = resolve_label(capture, spec)?;
    reconstruct_job(capture, spec, store, prior, config, label, 0)
}

fn reconstruct_job(
    capture: &GradientCapture,
    spec: &ModelSpec,
    store: &ParamStore,
    prior: Option<&PriorImage>,
    config: &AttackConfig,
    label: usize,
    restart: u32,
) -> Result<ReconstructionResult> {
    if config.iterations == 0 {
        return Err(Error::Invalid("iterations must be >= 1".into()));
    }
    if config.weights.uses_prior() && prior.is_none() {
        return Err(Error::EmptyPriors);
    }
    let start = Instant::now();

    let prior_trace = match prior {
        Some(p) if config.weights.uses_prior() => {
            let model = Model::build(spec)?;
            Some(model.forward_with_trace(store, &p.image)?.1)
        }
        _ => None,
    };
    let loss_graph = ReconLoss::build(
        spec,
        store,
        capture,
        label,
        prior_trace.as_ref(),
        &config.weights,
        true,
    )?;

    let job_seed = config.seed.wrapping_add(restart as u64);
    let mut x = initial_image(&config.init, &spec.input, job_seed);
    let mut opt = AdamW::new(
        x.numel(),
        config.lr,
        config.beta1,
        config.beta2,
        config.eps,
        config.weight_decay,
    )?;

    let mut eval = loss_graph.eval(&x)?;
    if !eval.l_r.is_finite() {
        return Err(Error::NonFinite { context: "reconstruction loss at init".into() });
    }
    let mut zero_flagged = eval.components.zero_candidate_grad;
    let mut best_l_r = eval.l_r;
    let mut best_components = eval.components;
    let mut best_image = x.clone();
    let mut best_iter = 0;
    let mut trace = vec![TracePoint { iter: 0, l_r: eval.l_r, components: eval.components }];

    for t in 1..=config.iterations {
        let grad = eval.grad_x.as_ref().expect("built with gradient");
        opt.step(x.data_mut(), grad.data())?;
        for v in x.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        eval = loss_graph.eval(&x)?;
        if !eval.l_r.is_finite() {
            return Err(Error::NonFinite {
                context: format!("reconstruction loss at iteration {t}"),
            });
        }
        zero_flagged |= eval.components.zero_candidate_grad;
        if eval.l_r < best_l_r {
            best_l_r = eval.l_r;
            best_components = eval.components;
            best_image = x.clone();
            best_iter = t;
        }
        if t % config.log_every == 0 || t == config.iterations {
            trace.push(TracePoint { iter: t, l_r: eval.l_r, components: eval.components });
        }
    }

    Ok(ReconstructionResult {
        image: best_image,
        l_r: best_l_r,
        components: best_components,
        best_iter,
        last_l_r: eval.l_r,
        trace,
        prior_id: prior.map(|p| p.id),
        restart,
        seed: job_seed,
        wall_time: start.elapsed(),
        zero_grad_flagged: zero_flagged,
    })
}

/// Thread pool for per-(prior, restart) jobs; `GRADINVERT_THREADS` caps the
/// worker count. Job outputs are reduced in a fixed order, so scheduling
/// never affects results.
fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("GRADINVERT_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Invalid(format!("GRADINVERT_THREADS must be a number, got {v:?}")))?;
        if n > 0 {
            builder = builder.num_threads(n);
        }
    }
    builder
        .build()
        .map_err(|e| Error::Invalid(format!("failed to build worker pool: {e}")))
}

/// Run one reconstruction per (matching prior, restart) and keep the best by
/// combined loss. With no matching prior the attack falls back to the
/// gradient-only objective.
pub fn attack_with_priors(
    capture: &GradientCapture,
    spec: &ModelSpec,
    store: &ParamStore,
    priors: &PriorSet,
    config: &AttackConfig,
) -> Result<AttackOutcome> {
    check_fingerprint(capture, spec)?;
    let label = resolve_label(capture, spec)?;
    if config.restarts == 0 {
        return Err(Error::Invalid("restarts must be >= 1".into()));
    }

    let mut fallback = false;
    let mut job_weights = config.weights.clone();
    let mut matching: Vec<&PriorImage> = Vec::new();
    if config.weights.uses_prior() {
        if priors.items.is_empty() {
            return Err(Error::EmptyPriors);
        }
        matching = priors.items.iter().filter(|p| p.class == label).collect();
        matching.sort_by_key(|p| p.id);
        if matching.is_empty() {
            // No same-class prior: revert to the plain gradient attack.
            fallback = true;
            job_weights = LossWeights {
                s_a: 0.0,
                s_s: 0.0,
                ..config.weights.clone()
            };
        }
    }

    let mut jobs: Vec<(Option<&PriorImage>, u32)> = Vec::new();
    if matching.is_empty() {
        for r in 0..config.restarts {
            jobs.push((None, r));
        }
    } else {
        for prior in &matching {
            for r in 0..config.restarts {
                jobs.push((Some(*prior), r));
            }
        }
    }

    let job_config = AttackConfig { weights: job_weights, ..config.clone() };
    let pool = worker_pool()?;
    let results: Result<Vec<ReconstructionResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|(prior, restart)| {
                reconstruct_job(capture, spec, store, *prior, &job_config, label, *restart)
            })
            .collect()
    });
    let results = results?;

    // Jobs are ordered by (prior id, restart id); a strict comparison keeps
    // the earliest minimum, which implements the tie rule.
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.l_r < results[best].l_r {
            best = i;
        }
    }

    Ok(AttackOutcome { results, best, label, fallback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, param_gradient};

    fn toy_setup(seed: u64) -> (ModelSpec, ParamStore, Tensor, GradientCapture) {
        let spec = ModelSpec::convnet_s(3);
        let (model, store) = build_model(&spec, seed).unwrap();
        let mut victim = Tensor::zeros(&[1, 16, 16]);
        for (i, v) in victim.data_mut().iter_mut().enumerate() {
            *v = 0.2 + 0.6 * (((i / 16 + i % 16) % 8) as f64 / 7.0);
        }
        let grad = param_gradient(&model, &store, &victim, 1).unwrap();
        let capture = GradientCapture {
            flat: grad,
            fingerprint: spec.fingerprint(),
            label: Some(1),
            train_steps: 0,
        };
        (spec, store, victim, capture)
    }

    #[test]
    fn ground_truth_init_is_a_fixed_point() {
        let (spec, store, victim, capture) = toy_setup(31);
        let prior = PriorImage { image: Arc::new(victim.clone()), class: 1, id: 0 };
        let config = AttackConfig {
            iterations: 20,
            init: InitScheme::Image(Arc::new(victim.clone())),
            weights: LossWeights { alpha_tv: 0.0, ..LossWeights::default() },
            ..AttackConfig::default()
        };
        let result = reconstruct(&capture, &spec, &store, Some(&prior), &config).unwrap();
        assert!(result.l_r <= 1e-10, "L_r = {}", result.l_r);
        assert_eq!(result.image.data(), victim.data(), "image drifted from ground truth");
        assert_eq!(result.best_iter, 0);
    }

    #[test]
    fn one_iteration_zero_lr_returns_initialization() {
        let (spec, store, _, capture) = toy_setup(32);
        let init = initial_image(&InitScheme::Uniform01, &[1, 16, 16], 7);
        let config = AttackConfig {
            iterations: 1,
            lr: 0.0,
            seed: 7,
            weights: LossWeights::gradient_only(),
            ..AttackConfig::default()
        };
        let result = reconstruct(&capture, &spec, &store, None, &config).unwrap();
        assert_eq!(result.image.data(), init.data());
    }

    #[test]
    fn best_iterate_dominates_final_iterate() {
        let (spec, store, _, capture) = toy_setup(33);
        let config = AttackConfig {
            iterations: 60,
            weights: LossWeights::gradient_only(),
            seed: 3,
            log_every: 10,
            ..AttackConfig::default()
        };
        let result = reconstruct(&capture, &spec, &store, None, &config).unwrap();
        assert!(result.l_r <= result.last_l_r);
        assert!(result.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(result.trace.iter().all(|p| {
            p.l_r.is_finite()
                && p.components.l_g.is_finite()
                && p.components.tv.is_finite()
                && p.components.l_a.is_finite()
                && p.components.l_s.is_finite()
        }));
    }

    #[test]
    fn reconstruction_is_deterministic() {
        let (spec, store, _, capture) = toy_setup(34);
        let config = AttackConfig {
            iterations: 30,
            weights: LossWeights::gradient_only(),
            seed: 11,
            ..AttackConfig::default()
        };
        let a = reconstruct(&capture, &spec, &store, None, &config).unwrap();
        let b = reconstruct(&capture, &spec, &store, None, &config).unwrap();
        assert!(a
            .image
            .data()
            .iter()
            .zip(b.image.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.l_r.to_bits(), b.l_r.to_bits());
        assert_eq!(a.trace.len(), b.trace.len());
        for (p, q) in a.trace.iter().zip(&b.trace) {
            assert_eq!(p.l_r.to_bits(), q.l_r.to_bits());
        }
    }

    #[test]
    fn singleton_attack_equals_single_reconstruct() {
        let (spec, store, victim, capture) = toy_setup(35);
        let prior = PriorImage { image: Arc::new(victim.clone()), class: 1, id: 4 };
        let priors = PriorSet { items: vec![prior.clone()] };
        let config = AttackConfig { iterations: 15, seed: 2, ..AttackConfig::default() };
        let outcome = attack_with_priors(&capture, &spec, &store, &priors, &config).unwrap();
        assert_eq!(outcome.results.len(), 1);
        let solo = reconstruct(&capture, &spec, &store, Some(&prior), &config).unwrap();
        assert_eq!(outcome.best_result().l_r.to_bits(), solo.l_r.to_bits());
        assert!(!outcome.fallback);
        assert_eq!(outcome.label, 1);
    }

    #[test]
    fn duplicate_priors_tie_break_on_lower_id() {
        let (spec, store, victim, capture) = toy_setup(36);
        let img = Arc::new(victim.clone());
        let priors = PriorSet {
            items: vec![
                PriorImage { image: Arc::clone(&img), class: 1, id: 9 },
                PriorImage { image: Arc::clone(&img), class: 1, id: 2 },
            ],
        };
        let config = AttackConfig { iterations: 10, seed: 5, ..AttackConfig::default() };
        let outcome = attack_with_priors(&capture, &spec, &store, &priors, &config).unwrap();
        assert_eq!(outcome.results.len(), 2);
        assert_eq!(outcome.results[0].l_r.to_bits(), outcome.results[1].l_r.to_bits());
        assert_eq!(outcome.best_result().prior_id, Some(2));
    }

    #[test]
    fn missing_class_falls_back_to_gradient_only() {
        let (spec, store, victim, capture) = toy_setup(37);
        let priors = PriorSet {
            items: vec![PriorImage { image: Arc::new(victim.clone()), class: 0, id: 1 }],
        };
        let config = AttackConfig { iterations: 8, ..AttackConfig::default() };
        let outcome = attack_with_priors(&capture, &spec, &store, &priors, &config).unwrap();
        assert!(outcome.fallback);
        assert_eq!(outcome.results.len(), 1);
        assert_eq!(outcome.results[0].prior_id, None);
        assert_eq!(outcome.results[0].components.l_a, 0.0);
    }

    #[test]
    fn empty_priors_with_prior_weights_error() {
        let (spec, store, _, capture) = toy_setup(38);
        let config = AttackConfig { iterations: 5, ..AttackConfig::default() };
        assert!(matches!(
            attack_with_priors(&capture, &spec, &store, &PriorSet::default(), &config),
            Err(Error::EmptyPriors)
        ));
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let (spec, store, _, mut capture) = toy_setup(39);
        capture.fingerprint ^= 1;
        let config = AttackConfig::default();
        assert!(matches!(
            reconstruct(&capture, &spec, &store, None, &config),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn restart_minima_are_monotone() {
        let (spec, store, _, capture) = toy_setup(40);
        let config = AttackConfig {
            iterations: 25,
            restarts: 3,
            seed: 1,
            weights: LossWeights::gradient_only(),
            ..AttackConfig::default()
        };
        let outcome = attack_with_priors(&capture, &spec, &store, &PriorSet::default(), &config).unwrap();
        assert_eq!(outcome.results.len(), 3);
        let mut prefix_min = f64::INFINITY;
        let mut minima = Vec::new();
        for r in &outcome.results {
            prefix_min = prefix_min.min(r.l_r);
            minima.push(prefix_min);
        }
        for pair in minima.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }
}
