//! Built-in verification suites: finite-difference gradient checks for every
//! primitive, double-backprop checks, label-restoration trials, and metric
//! oracles. The same suites back `gradinvert selftest` and the test targets.
//!
//! The finite-difference oracle only ever evaluates forward passes, so it is
//! independent of the gradient construction it judges.

use rand::Rng as _;

use crate::attack::resolve_label;
use crate::autodiff::{Bindings, Graph, NodeId};
use crate::error::Result;
use crate::losses::{GradientCapture, LossWeights, ReconLoss};
use crate::metrics;
use crate::model::{build_model, param_gradient, LayerSpec, Model, ModelSpec, ParamStore};
use crate::rng::{rng_from, Rng};
use crate::tensor::Tensor;

/// Default per-primitive instance count for the fast self-test run.
pub const SELFTEST_GRADCHECK_INSTANCES: usize = 8;
pub const SELFTEST_IDLG_TRIALS: usize = 100;

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.passed == self.total && self.failures.is_empty()
    }
}

// ---- finite-difference oracle ----------------------------------------------

/// Central differences with step `1e-6 * max(1, |x_i|)` per coordinate.
pub fn finite_diff(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let h = 1e-6 * x.data()[i].abs().max(1.0);
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        out.push((f(&plus) - f(&minus)) / (2.0 * h));
    }
    out
}

/// Largest relative error between gradients. Coordinates where both values
/// fall below `floor` auto-pass (they sit under finite-difference
/// resolution); otherwise the error is `|a-n| / max(|a|, |n|)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            if a.abs() < floor && n.abs() < floor {
                0.0
            } else {
                (a - n).abs() / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

// ---- per-primitive gradient checks ------------------------------------------

struct Case {
    graph: Graph,
    inputs: Vec<(NodeId, Tensor)>,
    output: NodeId,
}

impl Case {
    fn eval_at(&self, replace: usize, value: &Tensor) -> f64 {
        let mut b = Bindings::new();
        for (i, (node, tensor)) in self.inputs.iter().enumerate() {
            if i == replace {
                b.bind(*node, value.clone());
            } else {
                b.bind(*node, tensor.clone());
            }
        }
        self.graph
            .eval(&b, &[self.output])
            .expect("case evaluates")
            .get(self.output)
            .item()
    }

    fn check(&mut self, tol: f64, floor: f64) -> std::result::Result<(), String> {
        let wrt: Vec<NodeId> = self.inputs.iter().map(|(n, _)| *n).collect();
        let grads = self
            .graph
            .grad(self.output, &wrt)
            .map_err(|e| format!("grad construction failed: {e}"))?;
        let mut b = Bindings::new();
        for (node, tensor) in &self.inputs {
            b.bind(*node, tensor.clone());
        }
        let mut outputs = vec![self.output];
        outputs.extend_from_slice(&grads);
        let values = self
            .graph
            .eval(&b, &outputs)
            .map_err(|e| format!("evaluation failed: {e}"))?;
        for (i, &gnode) in grads.iter().enumerate() {
            let analytic = values.get(gnode).data().to_vec();
            let numeric = finite_diff(|t| self.eval_at(i, t), &self.inputs[i].1);
            let err = max_rel_err(&analytic, &numeric, floor);
            if err >= tol {
                return Err(format!("input {i}: max rel err {err:.3e} >= {tol:.0e}"));
            }
        }
        Ok(())
    }
}

fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen::<f64>() * 2.0 - 1.0;
    }
    t
}

/// Push coordinates away from a kink at `c` (ReLU/abs/max subgradients).
fn nudge_away(t: &mut Tensor, c: f64, margin: f64) {
    for v in t.data_mut() {
        if (*v - c).abs() < margin {
            *v = c + margin * 4.0 * if *v >= c { 1.0 } else { -1.0 };
        }
    }
}

fn small_dims(rng: &mut Rng) -> Vec<usize> {
    let rank = rng.gen_range(1..=2);
    (0..rank).map(|_| rng.gen_range(1..=6)).collect()
}

/// Wrap a node into a scalar via an inner product with fixed random weights
/// (identity when the node is already scalar).
fn scalarize(g: &mut Graph, node: NodeId, rng: &mut Rng) -> NodeId {
    if g.shape_of(node).is_empty() {
        return node;
    }
    let shape = g.shape_of(node).to_vec();
    let weights = rand_tensor(rng, &shape);
    let w = g.constant(weights);
    g.inner_product(node, w).expect("same shape")
}

type CaseBuilder = fn(&mut Rng) -> Case;

fn case_binary(rng: &mut Rng, op: impl Fn(&mut Graph, NodeId, NodeId) -> NodeId) -> Case {
    let shape = small_dims(rng);
    let mut g = Graph::new();
    let a = g.input(&shape);
    let b = g.input(&shape);
    let out = op(&mut g, a, b);
    let s = scalarize(&mut g, out, rng);
    Case {
        graph: g,
        inputs: vec![(a, rand_tensor(rng, &shape)), (b, rand_tensor(rng, &shape))],
        output: s,
    }
}

fn case_unary(rng: &mut Rng, prep: impl Fn(&mut Tensor), op: impl Fn(&mut Graph, NodeId) -> NodeId) -> Case {
    let shape = small_dims(rng);
    let mut g = Graph::new();
    let a = g.input(&shape);
    let out = op(&mut g, a);
    let s = scalarize(&mut g, out, rng);
    let mut x = rand_tensor(rng, &shape);
    prep(&mut x);
    Case { graph: g, inputs: vec![(a, x)], output: s }
}

fn conv_geometry(rng: &mut Rng) -> ([usize; 3], [usize; 4], usize, usize) {
    let c_in = rng.gen_range(1..=3);
    let c_out = rng.gen_range(1..=3);
    let k = rng.gen_range(1..=3);
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=1);
    let h = rng.gen_range(k.max(2)..=6);
    let w = rng.gen_range(k.max(2)..=6);
    ([c_in, h, w], [c_out, c_in, k, k], stride, pad)
}

fn case_conv2d(rng: &mut Rng) -> Case {
    let (xs, ws, stride, pad) = conv_geometry(rng);
    let mut g = Graph::new();
    let x = g.input(&xs);
    let w = g.input(&ws);
    let out = g.conv2d(x, w, stride, pad).expect("valid geometry");
    let s = scalarize(&mut g, out, rng);
    Case {
        graph: g,
        inputs: vec![(x, rand_tensor(rng, &xs)), (w, rand_tensor(rng, &ws))],
        output: s,
    }
}

fn case_conv_input_grad(rng: &mut Rng) -> Case {
    // Differentiate a conv and treat the produced adjoint node as the output
    // under a fixed upstream seed, checking its gradient by finite
    // differences against fresh leaves.
    let (xs, ws, stride, pad) = conv_geometry(rng);
    let mut g = Graph::new();
    let x = g.input(&xs);
    let w = g.input(&ws);
    let y = g.conv2d(x, w, stride, pad).expect("valid geometry");
    let seed = g.constant(rand_tensor(rng, &g.shape_of(y).to_vec()));
    let weighted = g.inner_product(y, seed).expect("same shape");
    // d weighted / d x is exactly ConvInputGrad(seed, w).
    let ig = g.grad(weighted, &[x]).expect("scalar output")[0];
    let s = scalarize(&mut g, ig, rng);
    Case {
        graph: g,
        inputs: vec![(x, rand_tensor(rng, &xs)), (w, rand_tensor(rng, &ws))],
        output: s,
    }
}

fn case_conv_kernel_grad(rng: &mut Rng) -> Case {
    let (xs, ws, stride, pad) = conv_geometry(rng);
    let mut g = Graph::new();
    let x = g.input(&xs);
    let w = g.input(&ws);
    let y = g.conv2d(x, w, stride, pad).expect("valid geometry");
    let seed = g.constant(rand_tensor(rng, &g.shape_of(y).to_vec()));
    let weighted = g.inner_product(y, seed).expect("same shape");
    // d weighted / d w is exactly ConvKernelGrad(x, seed).
    let kg = g.grad(weighted, &[w]).expect("scalar output")[0];
    let s = scalarize(&mut g, kg, rng);
    Case {
        graph: g,
        inputs: vec![(x, rand_tensor(rng, &xs)), (w, rand_tensor(rng, &ws))],
        output: s,
    }
}

fn case_matmul(rng: &mut Rng) -> Case {
    let (m, k, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let mut g = Graph::new();
    let a = g.input(&[m, k]);
    let b = g.input(&[k, n]);
    let out = g.matmul(a, b).expect("compatible");
    let s = scalarize(&mut g, out, rng);
    Case {
        graph: g,
        inputs: vec![(a, rand_tensor(rng, &[m, k])), (b, rand_tensor(rng, &[k, n]))],
        output: s,
    }
}

fn case_softmax(rng: &mut Rng) -> Case {
    let k = rng.gen_range(2..=6);
    let mut g = Graph::new();
    let x = g.input(&[k]);
    let out = g.softmax(x).expect("rank 1");
    let s = scalarize(&mut g, out, rng);
    Case { graph: g, inputs: vec![(x, rand_tensor(rng, &[k]))], output: s }
}

fn case_softmax_cross_entropy(rng: &mut Rng) -> Case {
    let k = rng.gen_range(2..=6);
    let label = rng.gen_range(0..k);
    let mut g = Graph::new();
    let x = g.input(&[k]);
    let out = g.softmax_cross_entropy(x, label).expect("valid label");
    Case { graph: g, inputs: vec![(x, rand_tensor(rng, &[k]))], output: out }
}

fn primitive_cases() -> Vec<(&'static str, CaseBuilder)> {
    vec![
        ("add", |r| case_binary(r, |g, a, b| g.add(a, b).unwrap())),
        ("sub", |r| case_binary(r, |g, a, b| g.sub(a, b).unwrap())),
        ("mul", |r| case_binary(r, |g, a, b| g.mul(a, b).unwrap())),
        ("div", |r| {
            let mut c = case_binary(r, |g, a, b| g.div(a, b).unwrap());
            // Keep the denominator away from zero.
            for v in c.inputs[1].1.data_mut() {
                *v = v.signum() * (v.abs() + 0.5);
            }
            c
        }),
        ("scalar_mul", |r| {
            let factor = r.gen::<f64>() * 4.0 - 2.0;
            case_unary(r, |_| {}, move |g, a| g.scalar_mul(factor, a))
        }),
        ("matmul", case_matmul),
        ("transpose", |r| {
            let (m, n) = (r.gen_range(1..=4), r.gen_range(1..=4));
            let mut g = Graph::new();
            let a = g.input(&[m, n]);
            let out = g.transpose(a).unwrap();
            let s = scalarize(&mut g, out, r);
            Case { graph: g, inputs: vec![(a, rand_tensor(r, &[m, n]))], output: s }
        }),
        ("conv2d", case_conv2d),
        ("conv2d_input_grad", case_conv_input_grad),
        ("conv2d_kernel_grad", case_conv_kernel_grad),
        ("relu", |r| case_unary(r, |t| nudge_away(t, 0.0, 1e-4), |g, a| g.relu(a))),
        ("step_above", |r| {
            // Defined derivative is zero; finite differences agree away from
            // the threshold.
            case_unary(r, |t| nudge_away(t, 0.25, 1e-4), |g, a| g.step_above(a, 0.25))
        }),
        ("sign", |r| case_unary(r, |t| nudge_away(t, 0.0, 1e-4), |g, a| g.sign(a))),
        ("abs", |r| case_unary(r, |t| nudge_away(t, 0.0, 1e-4), |g, a| g.abs(a))),
        ("square", |r| case_unary(r, |_| {}, |g, a| g.square(a))),
        ("sqrt", |r| {
            case_unary(
                r,
                |t| {
                    for v in t.data_mut() {
                        *v = v.abs() + 0.5;
                    }
                },
                |g, a| g.sqrt(a),
            )
        }),
        ("max_const", |r| case_unary(r, |t| nudge_away(t, 0.1, 1e-4), |g, a| g.max_const(a, 0.1))),
        ("reshape", |r| {
            let (m, n) = (r.gen_range(1..=4), r.gen_range(1..=4));
            let mut g = Graph::new();
            let a = g.input(&[m, n]);
            let out = g.reshape(a, &[m * n]).unwrap();
            let s = scalarize(&mut g, out, r);
            Case { graph: g, inputs: vec![(a, rand_tensor(r, &[m, n]))], output: s }
        }),
        ("sum", |r| case_unary(r, |_| {}, |g, a| g.sum(a))),
        ("mean", |r| case_unary(r, |_| {}, |g, a| g.mean(a))),
        ("expand_scalar", |r| {
            let shape = small_dims(r);
            let mut g = Graph::new();
            let a = g.input(&[]);
            let out = g.expand_scalar(a, &shape).unwrap();
            let s = scalarize(&mut g, out, r);
            Case { graph: g, inputs: vec![(a, rand_tensor(r, &[]))], output: s }
        }),
        ("inner_product", |r| case_binary(r, |g, a, b| g.inner_product(a, b).unwrap())),
        ("l2_norm", |r| case_unary(r, |_| {}, |g, a| g.l2_norm(a))),
        ("softmax", case_softmax),
        ("softmax_cross_entropy", case_softmax_cross_entropy),
    ]
}

pub fn primitive_count() -> usize {
    primitive_cases().len()
}

/// Finite-difference check of every primitive on `instances` random cases
/// each, at relative tolerance `tol`.
pub fn run_gradient_checks(instances: usize, tol: f64, seed: u64) -> SuiteReport {
    let mut rng = rng_from(seed);
    let mut report = SuiteReport {
        name: "gradient-checks",
        total: primitive_count() * instances,
        passed: 0,
        failures: Vec::new(),
    };
    for (name, builder) in primitive_cases() {
        for instance in 0..instances {
            let mut case = builder(&mut rng);
            match case.check(tol, 1e-4) {
                Ok(()) => report.passed += 1,
                Err(msg) => report.failures.push(format!("{name}[{instance}]: {msg}")),
            }
        }
    }
    report
}

// ---- double backprop ---------------------------------------------------------

fn tiny_mlp_spec() -> ModelSpec {
    ModelSpec {
        input: [4, 1, 1],
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Linear { out_features: 5 },
            LayerSpec::Relu,
            LayerSpec::Linear { out_features: 3 },
        ],
        classes: 3,
    }
}

fn tiny_conv_spec() -> ModelSpec {
    ModelSpec {
        input: [1, 6, 6],
        layers: vec![
            LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Linear { out_features: 2 },
        ],
        classes: 2,
    }
}

/// d/dx of the squared norm of a gradient, against finite differences of
/// the norm computed by forward evaluation only.
fn check_grad_norm_double_backprop(
    spec: &ModelSpec,
    wrt_params: bool,
    seed: u64,
    tol: f64,
) -> std::result::Result<(), String> {
    let (_, store) = build_model(spec, seed).map_err(|e| e.to_string())?;
    let mut rng = rng_from(seed ^ 0x5a5a);
    let mut x0 = Tensor::zeros(&spec.input);
    for v in x0.data_mut() {
        *v = rng.gen::<f64>();
    }

    let build = || -> Result<(Graph, NodeId, NodeId)> {
        let mut g = Graph::new();
        let x = g.input(&spec.input);
        let params: Vec<NodeId> = store
            .tensors()
            .iter()
            .map(|t| g.constant_shared(std::sync::Arc::clone(t)))
            .collect();
        let (logits, _) = crate::model::build_forward(&mut g, spec, x, &params)?;
        let loss = g.softmax_cross_entropy(logits, 1)?;
        let wrt: Vec<NodeId> = if wrt_params { params } else { vec![x] };
        let grads = g.grad(loss, &wrt)?;
        let mut acc: Option<NodeId> = None;
        for gr in grads {
            let sq = g.square(gr);
            let s = g.sum(sq);
            acc = Some(match acc {
                None => s,
                Some(prev) => g.add(prev, s)?,
            });
        }
        let f = acc.expect("nonempty wrt");
        Ok((g, x, f))
    };

    let (mut g, x, f) = build().map_err(|e| e.to_string())?;
    let grad_f = g.grad(f, &[x]).map_err(|e| e.to_string())?[0];
    let mut b = Bindings::new();
    b.bind(x, x0.clone());
    let values = g.eval(&b, &[f, grad_f]).map_err(|e| e.to_string())?;
    let analytic = values.get(grad_f).data().to_vec();

    let numeric = finite_diff(
        |t| {
            let mut b = Bindings::new();
            b.bind(x, t.clone());
            g.eval(&b, &[f]).expect("forward").get(f).item()
        },
        &x0,
    );
    let err = max_rel_err(&analytic, &numeric, 1e-4);
    if err >= tol {
        return Err(format!("max rel err {err:.3e} >= {tol:.0e}"));
    }
    Ok(())
}

/// d/dx of the full combined loss on the default ConvNet, checked by finite
/// differences at `coords` random pixels.
pub fn check_recon_loss_gradient(coords: usize, seed: u64, tol: f64) -> std::result::Result<(), String> {
    let spec = ModelSpec::convnet_s(4);
    let (model, store) = build_model(&spec, seed).map_err(|e| e.to_string())?;
    let mut rng = rng_from(seed ^ 0xd1ce);
    let mut victim = Tensor::zeros(&spec.input);
    for v in victim.data_mut() {
        *v = rng.gen::<f64>();
    }
    let grad = param_gradient(&model, &store, &victim, 2).map_err(|e| e.to_string())?;
    let capture = GradientCapture {
        flat: grad,
        fingerprint: spec.fingerprint(),
        label: Some(2),
        train_steps: 0,
    };
    let mut prior = Tensor::zeros(&spec.input);
    for v in prior.data_mut() {
        *v = rng.gen::<f64>();
    }
    let (_, prior_trace) = model.forward_with_trace(&store, &prior).map_err(|e| e.to_string())?;
    let weights = LossWeights::default();
    let rl = ReconLoss::build(&spec, &store, &capture, 2, Some(&prior_trace), &weights, true)
        .map_err(|e| e.to_string())?;

    let mut x = Tensor::zeros(&spec.input);
    for v in x.data_mut() {
        *v = rng.gen::<f64>();
    }
    let eval = rl.eval(&x).map_err(|e| e.to_string())?;
    let analytic = eval.grad_x.expect("built with gradient");

    for _ in 0..coords {
        let i = rng.gen_range(0..x.numel());
        let h = 1e-6 * x.data()[i].abs().max(1.0);
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let fp = rl.eval(&plus).map_err(|e| e.to_string())?.l_r;
        let fm = rl.eval(&minus).map_err(|e| e.to_string())?.l_r;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let err = max_rel_err(&[a], &[numeric], 1e-4);
        if err >= tol {
            return Err(format!("pixel {i}: analytic {a:.6e}, numeric {numeric:.6e}, rel err {err:.3e}"));
        }
    }
    Ok(())
}

pub fn run_double_backprop_checks(seed: u64) -> SuiteReport {
    let mut report = SuiteReport {
        name: "double-backprop",
        total: 3,
        passed: 0,
        failures: Vec::new(),
    };
    let checks: Vec<(&str, std::result::Result<(), String>)> = vec![
        (
            "mlp-input-grad-norm",
            check_grad_norm_double_backprop(&tiny_mlp_spec(), false, seed, 1e-4),
        ),
        (
            "conv-param-grad-norm",
            check_grad_norm_double_backprop(&tiny_conv_spec(), true, seed.wrapping_add(1), 1e-4),
        ),
        ("recon-loss-grad", check_recon_loss_gradient(8, seed.wrapping_add(2), 1e-4)),
    ];
    for (name, result) in checks {
        match result {
            Ok(()) => report.passed += 1,
            Err(msg) => report.failures.push(format!("{name}: {msg}")),
        }
    }
    report
}

// ---- label restoration --------------------------------------------------------

pub fn run_idlg_trials(trials: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport {
        name: "idlg",
        total: trials,
        passed: 0,
        failures: Vec::new(),
    };
    let spec = ModelSpec::convnet_s(4);
    let model = match Model::build(&spec) {
        Ok(m) => m,
        Err(e) => {
            report.failures.push(format!("model build failed: {e}"));
            return report;
        }
    };
    let mut rng = rng_from(seed);
    for trial in 0..trials {
        let mut run = || -> Result<(usize, usize)> {
            let store = ParamStore::init(&spec, rng.gen())?;
            let mut x = Tensor::zeros(&spec.input);
            for v in x.data_mut() {
                *v = rng.gen::<f64>();
            }
            let label = rng.gen_range(0..spec.classes);
            let grad = param_gradient(&model, &store, &x, label)?;
            let capture = GradientCapture {
                flat: grad,
                fingerprint: spec.fingerprint(),
                label: None,
                train_steps: 0,
            };
            Ok((resolve_label(&capture, &spec)?, label))
        };
        match run() {
            Ok((restored, actual)) if restored == actual => report.passed += 1,
            Ok((restored, actual)) => report
                .failures
                .push(format!("trial {trial}: restored {restored}, actual {actual}")),
            Err(e) => report.failures.push(format!("trial {trial}: {e}")),
        }
    }
    report
}

// ---- metric oracles -------------------------------------------------------------

pub fn run_metric_oracles() -> SuiteReport {
    let mut report = SuiteReport {
        name: "metric-oracles",
        total: 6,
        passed: 0,
        failures: Vec::new(),
    };
    let mut check = |name: &str, ok: bool| {
        if ok {
            report.passed += 1;
        } else {
            report.failures.push(name.to_string());
        }
    };

    let mut rng = rng_from(99);
    let mut a = Tensor::zeros(&[1, 16, 16]);
    for v in a.data_mut() {
        *v = rng.gen::<f64>();
    }
    let mut offset = a.clone();
    for v in offset.data_mut() {
        *v += 0.1;
    }
    let mut b = Tensor::zeros(&[1, 16, 16]);
    for v in b.data_mut() {
        *v = rng.gen::<f64>();
    }

    check("mse identical == 0", metrics::mse(&a, &a).unwrap() == 0.0);
    check(
        "mse constant offset 0.1 -> 0.01",
        (metrics::mse(&a, &offset).unwrap() - 0.01).abs() < 1e-12,
    );
    check(
        "psnr of mse 0.01 == 20 dB",
        (metrics::psnr(&a, &offset, 1.0).unwrap() - 20.0).abs() < 1e-9,
    );
    check(
        "psnr identical == +inf",
        metrics::psnr(&a, &a, 1.0).unwrap() == f64::INFINITY,
    );
    check(
        "ssim identical == 1",
        (metrics::ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9,
    );
    check(
        "ssim symmetry",
        (metrics::ssim(&a, &b).unwrap() - metrics::ssim(&b, &a).unwrap()).abs() < 1e-12,
    );
    report
}

/// Suite names and their registered test counts for the fast self-test run.
pub fn suite_totals() -> Vec<(&'static str, usize)> {
    vec![
        ("gradient-checks", primitive_count() * SELFTEST_GRADCHECK_INSTANCES),
        ("double-backprop", 3),
        ("idlg", SELFTEST_IDLG_TRIALS),
        ("metric-oracles", 6),
    ]
}

/// The fast verification pass behind `gradinvert selftest`.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        run_gradient_checks(SELFTEST_GRADCHECK_INSTANCES, 1e-5, seed),
        run_double_backprop_checks(seed),
        run_idlg_trials(SELFTEST_IDLG_TRIALS, seed),
        run_metric_oracles(),
    ]
}
