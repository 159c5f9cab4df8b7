//! Named verification checks: gradient oracles, parameter identities and
//! unrolled-network equivalence.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{layer_param_counts, DrfnModel, ModelConfig, RecurrentResidualBlock, SUPPORTED_SCALES};
use crate::ops::{
    conv2d_backward, conv2d_forward, finite_difference_grad, prelu_backward, prelu_forward, relative_error,
    transposed_conv2d_backward, transposed_conv2d_forward, Conv2dParams, PReluParams, TransposedConv2dParams,
    FD_EPS_F32, FD_EPS_F64,
};
use crate::tensor::{Scalar, Tensor};
use crate::train::mse_loss;

pub const GRAD_TOL_F32: f64 = 1e-3;
pub const GRAD_TOL_F64: f64 = 1e-6;
pub const GRAD_INSTANCES: usize = 20;
pub const UNROLLED_TOL: f32 = 1e-5;
/// A gradient check comparing fewer than half its coordinates fails.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.5;
pub const SAVINGS_IDENTITY: usize = 443_136;

/// Alters an analytic gradient before comparison; used to prove the
/// checks can fail.
pub type Tamper = fn(op: &str, grad: &mut [f64]);

type CheckFn = Box<dyn Fn() -> Result<String, String> + Send + Sync>;

pub struct Check {
    pub name: String,
    run: CheckFn,
}

impl Check {
    pub fn new(name: impl Into<String>, run: impl Fn() -> Result<String, String> + Send + Sync + 'static) -> Self {
        Check {
            name: name.into(),
            run: Box::new(run),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelftestReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            out.push_str(&format!(
                "{} {:<32} {:>7.2}s  {}\n",
                if o.passed { "PASS" } else { "FAIL" },
                o.name,
                o.elapsed.as_secs_f64(),
                o.detail
            ));
        }
        let failed = self.failures();
        if failed.is_empty() {
            out.push_str(&format!("all {} checks passed\n", self.outcomes.len()));
        } else {
            out.push_str(&format!("{} of {} checks failed: {}\n", failed.len(), self.outcomes.len(), failed.join(", ")));
        }
        out
    }
}

/// Runs every check in order; a panic counts as a failure.
pub fn run_checks(checks: &[Check], mut on_done: impl FnMut(&CheckOutcome)) -> SelftestReport {
    let mut outcomes = Vec::with_capacity(checks.len());
    for c in checks {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| (c.run)())).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let o = CheckOutcome {
            name: c.name.clone(),
            passed,
            detail,
            elapsed: start.elapsed(),
        };
        on_done(&o);
        outcomes.push(o);
    }
    SelftestReport { outcomes }
}

/// The full suite.
pub fn default_checks() -> Vec<Check> {
    let mut checks = gradient_checks(None);
    checks.extend([
        Check::new("params/cycle_invariance", check_cycle_invariance),
        Check::new("params/savings_identity", check_savings_identity),
        Check::new("params/x4_enumeration", check_x4_enumeration),
        Check::new("shape/all_scales", check_shapes),
        Check::new("unrolled/block_equivalence", check_unrolled_equivalence),
        Check::new("unrolled/shared_gradient_sum", check_shared_gradient_sum),
    ]);
    checks
}

/// One check per differentiable component.
pub fn gradient_checks(tamper: Option<Tamper>) -> Vec<Check> {
    let wrap = |name: &'static str, f: fn(u64, Option<Tamper>) -> GradSummary| {
        Check::new(format!("gradient/{name}"), move || {
            let s = f(0x5eed, tamper);
            if s.passed() {
                Ok(s.describe())
            } else {
                Err(s.describe())
            }
        })
    };
    vec![
        wrap("conv2d", conv2d_gradient_summary),
        wrap("transposed_conv2d", transposed_gradient_summary),
        wrap("prelu", prelu_gradient_summary),
        wrap("mse_loss", mse_gradient_summary),
        wrap("network", network_gradient_summary),
    ]
}

/// Worst relative errors over a batch of random instances.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSummary {
    pub op: &'static str,
    pub instances: usize,
    pub worst_f32: f64,
    pub worst_f64: f64,
    /// Gradient coordinates per precision, summed over instances.
    pub coordinates: usize,
    /// Coordinates left out because their difference stencil crosses a
    /// non-differentiable point.
    pub excluded_f32: usize,
    pub excluded_f64: usize,
}

impl GradSummary {
    pub fn passed(&self) -> bool {
        let limit = MAX_EXCLUDED_FRACTION * self.coordinates as f64;
        self.worst_f32 <= GRAD_TOL_F32
            && self.worst_f64 <= GRAD_TOL_F64
            && self.excluded_f32 as f64 <= limit
            && self.excluded_f64 as f64 <= limit
    }

    pub fn describe(&self) -> String {
        let mut out = format!(
            "{} instances, worst relative error {:.2e} (32-bit, tol {:.0e}) / {:.2e} (64-bit, tol {:.0e})",
            self.instances, self.worst_f32, GRAD_TOL_F32, self.worst_f64, GRAD_TOL_F64
        );
        if self.excluded_f32 + self.excluded_f64 > 0 {
            out += &format!(
                "; {}/{} and {}/{} coordinates excluded at kinks",
                self.excluded_f32, self.coordinates, self.excluded_f64, self.coordinates
            );
        }
        out
    }
}

/// A differentiable scalar function of several tensors, evaluated at either
/// precision. The scalar is a fixed random projection of the op output so
/// every output element contributes.
trait Instance {
    fn inputs(&self) -> Vec<Tensor<f64>>;
    fn loss<S: Scalar>(&self, inputs: &[Tensor<S>]) -> f64;
    fn grads<S: Scalar>(&self, inputs: &[Tensor<S>]) -> Vec<Tensor<S>>;
    /// Elements left out of the comparison (non-differentiable points).
    fn excluded(&self, _input: usize, _idx: usize, _eps: f64) -> bool {
        false
    }
}

fn cast_all<S: Scalar>(v: &[Tensor<f64>]) -> Vec<Tensor<S>> {
    v.iter().map(Tensor::cast).collect()
}

/// Worst relative error, excluded coordinates and total coordinates.
fn worst_error<I: Instance, S: Scalar>(inst: &I, eps: f64, op: &str, tamper: Option<Tamper>) -> (f64, usize, usize) {
    let inputs = inst.inputs();
    let analytic = inst.grads::<S>(&cast_all(&inputs));
    let (mut worst, mut excluded, mut total) = (0.0f64, 0, 0);
    for (i, a) in analytic.iter().enumerate() {
        let numeric = finite_difference_grad(
            |t| {
                let mut v = inputs.clone();
                v[i] = t.clone();
                inst.loss::<f64>(&v)
            },
            &inputs[i],
            eps,
        );
        let mut av: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
        if let Some(t) = tamper {
            t(op, &mut av);
        }
        total += av.len();
        let (av, nv): (Vec<f64>, Vec<f64>) = av
            .into_iter()
            .zip(numeric.data().iter().copied())
            .enumerate()
            .filter(|(idx, _)| !inst.excluded(i, *idx, eps))
            .map(|(_, p)| p)
            .unzip();
        excluded += numeric.data().len() - av.len();
        worst = worst.max(relative_error(&av, &nv));
    }
    (worst, excluded, total)
}

fn summarize<I: Instance>(op: &'static str, instances: Vec<I>, tamper: Option<Tamper>) -> GradSummary {
    let mut s = GradSummary {
        op,
        instances: instances.len(),
        worst_f32: 0.0,
        worst_f64: 0.0,
        coordinates: 0,
        excluded_f32: 0,
        excluded_f64: 0,
    };
    for inst in &instances {
        let (w32, x32, n) = worst_error::<I, f32>(inst, FD_EPS_F32, op, tamper);
        let (w64, x64, _) = worst_error::<I, f64>(inst, FD_EPS_F64, op, tamper);
        s.worst_f32 = s.worst_f32.max(w32);
        s.worst_f64 = s.worst_f64.max(w64);
        s.coordinates += n;
        s.excluded_f32 += x32;
        s.excluded_f64 += x64;
    }
    s
}

/// Values exactly representable in 32-bit, so both precisions see the same
/// point.
fn random_tensor(rng: &mut ChaCha8Rng, dims: impl Into<crate::tensor::Dims>, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_, _, _, _| (rng.random_range(-scale..scale) as f32) as f64)
}

fn vec_tensor(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec((1, 1, 1, v.len()), v.to_vec()).expect("nonempty")
}

fn to_vec<S: Scalar>(t: &Tensor<S>) -> Vec<S> {
    t.data().to_vec()
}

fn project<S: Scalar>(out: &Tensor<S>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a.as_f64() * b).sum()
}

struct ConvInstance {
    x: Tensor<f64>,
    w: Tensor<f64>,
    b: Vec<f64>,
    stride: usize,
    pad: usize,
    r: Tensor<f64>,
}

impl ConvInstance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let (n, ci, co) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=1);
        let (h, w) = (rng.random_range(k.max(2)..=6), rng.random_range(k.max(2)..=6));
        let x = random_tensor(rng, (n, ci, h, w), 1.0);
        let wt = random_tensor(rng, (co, ci, k, k), 0.5);
        let b: Vec<f64> = (0..co).map(|_| (rng.random_range(-0.2..0.2) as f32) as f64).collect();
        let p = Conv2dParams::new(wt.clone(), b.clone(), stride, pad).expect("valid conv");
        let out = conv2d_forward(&x, &p).expect("valid conv");
        let r = random_tensor(rng, out.dims(), 1.0);
        ConvInstance { x, w: wt, b, stride, pad, r }
    }

    fn params<S: Scalar>(&self, v: &[Tensor<S>]) -> Conv2dParams<S> {
        Conv2dParams::new(v[1].clone(), to_vec(&v[2]), self.stride, self.pad).expect("valid conv")
    }
}

impl Instance for ConvInstance {
    fn inputs(&self) -> Vec<Tensor<f64>> {
        vec![self.x.clone(), self.w.clone(), vec_tensor(&self.b)]
    }
    fn loss<S: Scalar>(&self, v: &[Tensor<S>]) -> f64 {
        project(&conv2d_forward(&v[0], &self.params(v)).expect("forward"), &self.r)
    }
    fn grads<S: Scalar>(&self, v: &[Tensor<S>]) -> Vec<Tensor<S>> {
        let g = conv2d_backward(&v[0], &self.params(v), &self.r.cast()).expect("backward");
        let b = Tensor::from_vec((1, 1, 1, g.grad_bias.len()), g.grad_bias).expect("bias");
        vec![g.grad_x, g.grad_weight, b]
    }
}

struct TransposedInstance(ConvInstance);

impl TransposedInstance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let (n, ci, co) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
        let (k, stride, pad) = [(4, 2, 1), (5, 3, 1), (3, 1, 1), (2, 2, 0), (3, 2, 0)][rng.random_range(0..5)];
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let x = random_tensor(rng, (n, ci, h, w), 1.0);
        let wt = random_tensor(rng, (ci, co, k, k), 0.5);
        let b: Vec<f64> = (0..co).map(|_| (rng.random_range(-0.2..0.2) as f32) as f64).collect();
        let p = TransposedConv2dParams::new(wt.clone(), b.clone(), stride, pad).expect("valid tconv");
        let out = transposed_conv2d_forward(&x, &p).expect("valid tconv");
        let r = random_tensor(rng, out.dims(), 1.0);
        TransposedInstance(ConvInstance { x, w: wt, b, stride, pad, r })
    }

    fn params<S: Scalar>(&self, v: &[Tensor<S>]) -> TransposedConv2dParams<S> {
        TransposedConv2dParams::new(v[1].clone(), to_vec(&v[2]), self.0.stride, self.0.pad).expect("valid tconv")
    }
}

impl Instance for TransposedInstance {
    fn inputs(&self) -> Vec<Tensor<f64>> {
        self.0.inputs()
    }
    fn loss<S: Scalar>(&self, v: &[Tensor<S>]) -> f64 {
        project(&transposed_conv2d_forward(&v[0], &self.params(v)).expect("forward"), &self.0.r)
    }
    fn grads<S: Scalar>(&self, v: &[Tensor<S>]) -> Vec<Tensor<S>> {
        let g = transposed_conv2d_backward(&v[0], &self.params(v), &self.0.r.cast()).expect("backward");
        let b = Tensor::from_vec((1, 1, 1, g.grad_bias.len()), g.grad_bias).expect("bias");
        vec![g.grad_x, g.grad_weight, b]
    }
}

struct PReluInstance {
    x: Tensor<f64>,
    slope: Vec<f64>,
    r: Tensor<f64>,
}

impl Instance for PReluInstance {
    fn inputs(&self) -> Vec<Tensor<f64>> {
        vec![self.x.clone(), vec_tensor(&self.slope)]
    }
    fn loss<S: Scalar>(&self, v: &[Tensor<S>]) -> f64 {
        let p = PReluParams { slope: to_vec(&v[1]) };
        project(&prelu_forward(&v[0], &p).expect("forward"), &self.r)
    }
    fn grads<S: Scalar>(&self, v: &[Tensor<S>]) -> Vec<Tensor<S>> {
        let p = PReluParams { slope: to_vec(&v[1]) };
        let g = prelu_backward(&v[0], &p, &self.r.cast()).expect("backward");
        let s = Tensor::from_vec((1, 1, 1, g.grad_slope.len()), g.grad_slope).expect("slope");
        vec![g.grad_x, s]
    }
    /// Central differences straddling the kink are meaningless.
    fn excluded(&self, input: usize, idx: usize, eps: f64) -> bool {
        input == 0 && self.x.data()[idx].abs() <= 2.0 * eps
    }
}

struct MseInstance {
    pred: Tensor<f64>,
    target: Tensor<f64>,
}

impl Instance for MseInstance {
    fn inputs(&self) -> Vec<Tensor<f64>> {
        vec![self.pred.clone()]
    }
    fn loss<S: Scalar>(&self, v: &[Tensor<S>]) -> f64 {
        mse_loss(&v[0], &self.target.cast()).expect("loss").0
    }
    fn grads<S: Scalar>(&self, v: &[Tensor<S>]) -> Vec<Tensor<S>> {
        vec![mse_loss(&v[0], &self.target.cast()).expect("loss").1]
    }
}

/// Every registry tensor of a tiny network, flattened.
struct NetworkInstance {
    template: DrfnModel<f64>,
    x: Tensor<f64>,
    r: Tensor<f64>,
    /// PReLU branch taken by every activation at the unperturbed point.
    branches: Vec<bool>,
}

/// PReLU branch per activation; zero belongs to the identity side.
fn branches<S: Scalar>(model: &DrfnModel<S>, x: &Tensor<S>) -> Vec<bool> {
    let (_, tape) = model.forward(x).expect("forward");
    tape.preactivations()
        .flat_map(|t| t.data().iter().map(|v| *v >= S::zero()))
        .collect()
}

impl NetworkInstance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let cfg = ModelConfig {
            scale: [2, 3][rng.random_range(0..2)],
            channels: rng.random_range(2..=4),
            cycles: rng.random_range(1..=2),
            ..Default::default()
        };
        let mut template = DrfnModel::<f64>::build(cfg, rng.random()).expect("valid config");
        for e in template.registry_mut() {
            for v in e.values.iter_mut() {
                *v = (match e.kind {
                    crate::model::ParamKind::Weight => *v,
                    crate::model::ParamKind::Bias => rng.random_range(-0.1..0.1),
                    crate::model::ParamKind::Slope => rng.random_range(0.1..0.5),
                } as f32) as f64;
            }
        }
        let (h, w) = (rng.random_range(2..=3), rng.random_range(2..=3));
        let x = random_tensor(rng, (1, 1, h, w), 1.0).map_unary(|v| v.abs());
        let out = template.predict(&x).expect("forward");
        let r = random_tensor(rng, out.dims(), 1.0);
        let branches = branches(&template, &x);
        NetworkInstance {
            template,
            x,
            r,
            branches,
        }
    }

    fn model<S: Scalar>(&self, v: &[Tensor<S>]) -> DrfnModel<S> {
        let mut m = self.template.cast::<S>();
        for (e, t) in m.registry_mut().into_iter().zip(v) {
            e.values.copy_from_slice(t.data());
        }
        m
    }
}

impl Instance for NetworkInstance {
    fn inputs(&self) -> Vec<Tensor<f64>> {
        self.template.registry().iter().map(|e| vec_tensor(e.values)).collect()
    }
    fn loss<S: Scalar>(&self, v: &[Tensor<S>]) -> f64 {
        project(&self.model(v).predict(&self.x.cast()).expect("forward"), &self.r)
    }
    fn grads<S: Scalar>(&self, v: &[Tensor<S>]) -> Vec<Tensor<S>> {
        let m = self.model(v);
        let (_, tape) = m.forward(&self.x.cast()).expect("forward");
        let g = m.backward(&tape, &self.r.cast()).expect("backward");
        m.registry()
            .iter()
            .map(|e| {
                let gv = g.get(&e.name).expect("every registry entry has a gradient");
                Tensor::from_vec((1, 1, 1, gv.len()), gv.to_vec()).expect("nonempty")
            })
            .collect()
    }
    /// A stencil that moves any activation across its kink measures a
    /// one-sided blend, not the derivative.
    fn excluded(&self, input: usize, idx: usize, eps: f64) -> bool {
        let base = self.inputs();
        [eps, -eps].into_iter().any(|d| {
            let mut v = base.clone();
            v[input].data_mut()[idx] += d;
            branches(&self.model(&v), &self.x) != self.branches
        })
    }
}

fn instances<I>(seed: u64, make: impl Fn(&mut ChaCha8Rng) -> I) -> Vec<I> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..GRAD_INSTANCES).map(|_| make(&mut rng)).collect()
}

pub fn conv2d_gradient_summary(seed: u64, tamper: Option<Tamper>) -> GradSummary {
    summarize("conv2d", instances(seed, ConvInstance::random), tamper)
}

pub fn transposed_gradient_summary(seed: u64, tamper: Option<Tamper>) -> GradSummary {
    summarize("transposed_conv2d", instances(seed, TransposedInstance::random), tamper)
}

pub fn prelu_gradient_summary(seed: u64, tamper: Option<Tamper>) -> GradSummary {
    let make = |rng: &mut ChaCha8Rng| {
        let c = rng.random_range(1..=3);
        let dims = (rng.random_range(1..=2), c, rng.random_range(1..=4), rng.random_range(1..=4));
        let x = random_tensor(rng, dims, 1.0);
        let slope = (0..c).map(|_| (rng.random_range(-0.5..0.8) as f32) as f64).collect();
        let r = random_tensor(rng, dims, 1.0);
        PReluInstance { x, slope, r }
    };
    summarize("prelu", instances(seed, make), tamper)
}

pub fn mse_gradient_summary(seed: u64, tamper: Option<Tamper>) -> GradSummary {
    let make = |rng: &mut ChaCha8Rng| {
        let dims = (rng.random_range(1..=4), 1, rng.random_range(1..=5), rng.random_range(1..=5));
        MseInstance {
            pred: random_tensor(rng, dims, 1.0),
            target: random_tensor(rng, dims, 1.0),
        }
    };
    summarize("mse_loss", instances(seed, make), tamper)
}

pub fn network_gradient_summary(seed: u64, tamper: Option<Tamper>) -> GradSummary {
    summarize("network", instances(seed, NetworkInstance::random), tamper)
}

fn check_cycle_invariance() -> Result<String, String> {
    let counts: Vec<usize> = [1, 3, 5, 10]
        .iter()
        .map(|&c| DrfnModel::<f32>::zeros(ModelConfig { cycles: c, ..Default::default() }).map(|m| m.param_count()))
        .collect::<crate::Result<_>>()
        .map_err(|e| e.to_string())?;
    if counts.windows(2).all(|w| w[0] == w[1]) {
        Ok(format!("{} parameters for cycles 1, 3, 5, 10", counts[0]))
    } else {
        Err(format!("counts differ: {counts:?}"))
    }
}

fn check_savings_identity() -> Result<String, String> {
    let block = RecurrentResidualBlock::<f32>::zeros(64, 5);
    let saved = block.unrolled_conv_param_count() - block.conv_param_count();
    if saved == SAVINGS_IDENTITY {
        Ok(format!("unrolled {} - shared {} = {saved}", block.unrolled_conv_param_count(), block.conv_param_count()))
    } else {
        Err(format!("saved {saved}, expected {SAVINGS_IDENTITY}"))
    }
}

/// Closed-form count of the default ×4 network checked against the registry.
pub fn x4_closed_form_count(channels: usize) -> usize {
    let c = channels;
    let tconv = |ci: usize| ci * c * 16 + c;
    let conv = |ci: usize, co: usize| ci * co * 9 + co;
    let stages = tconv(1) + c + tconv(c) + c;
    let blocks = 2 * (3 * conv(c, c) + 2 * c);
    let levels = 3 * conv(c, c);
    stages + blocks + levels + conv(3 * c, 1)
}

fn check_x4_enumeration() -> Result<String, String> {
    let m = DrfnModel::<f32>::zeros(ModelConfig::default()).map_err(|e| e.to_string())?;
    let by_layer: usize = layer_param_counts(&m).iter().map(|(_, n)| n).sum();
    let closed = x4_closed_form_count(64);
    if m.param_count() == closed && by_layer == closed {
        Ok(format!("{closed} parameters (registry, per-layer sum and closed form agree)"))
    } else {
        Err(format!("registry {}, per-layer {by_layer}, closed form {closed}", m.param_count()))
    }
}

fn check_shapes() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for scale in SUPPORTED_SCALES {
        let m = DrfnModel::<f32>::build(
            ModelConfig {
                scale,
                channels: 2,
                cycles: 1,
                ..Default::default()
            },
            scale as u64,
        )
        .map_err(|e| e.to_string())?;
        for _ in 0..3 {
            let (n, h, w) = (rng.random_range(1..=2), rng.random_range(1..=7), rng.random_range(1..=7));
            let y = m.predict(&Tensor::full((n, 1, h, w), 0.5)).map_err(|e| e.to_string())?;
            let want = [n, 1, scale as usize * h, scale as usize * w];
            if y.dims().as_array() != want {
                return Err(format!("x{scale}: input {h}x{w} gave {}, expected {want:?}", y.dims()));
            }
        }
    }
    Ok("x2, x3, x4, x8 outputs are exactly scale x input".into())
}

fn check_unrolled_equivalence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f32;
    for trial in 0..6 {
        let channels = rng.random_range(2..=8);
        let cycles = rng.random_range(2..=6);
        let m = DrfnModel::<f32>::build(
            ModelConfig {
                scale: 2,
                channels,
                cycles,
                ..Default::default()
            },
            trial,
        )
        .map_err(|e| e.to_string())?;
        let x = random_tensor(&mut rng, (2, channels, 7, 6), 1.0).cast::<f32>();
        let (shared, _) = m.block2.forward(&x).map_err(|e| e.to_string())?;
        let mut t = x;
        for _ in 0..cycles {
            // an independent single-cycle copy per position
            let copy = m.block2.with_cycles(1);
            t = copy.forward(&t).map_err(|e| e.to_string())?.0;
        }
        worst = worst.max(shared.max_abs_diff(&t).map_err(|e| e.to_string())?);
    }
    if worst <= UNROLLED_TOL {
        Ok(format!("max abs difference {worst:.2e} over 6 random blocks"))
    } else {
        Err(format!("max abs difference {worst:.2e} exceeds {UNROLLED_TOL:.0e}"))
    }
}

fn check_shared_gradient_sum() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let m = DrfnModel::<f64>::build(
        ModelConfig {
            scale: 2,
            channels: 2,
            cycles: 2,
            ..Default::default()
        },
        29,
    )
    .map_err(|e| e.to_string())?;
    let x = random_tensor(&mut rng, (1, 2, 3, 3), 1.0);
    let g = random_tensor(&mut rng, (1, 2, 3, 3), 1.0);
    let e = |e: crate::Error| e.to_string();
    let (_, tape) = m.block1.forward(&x).map_err(e)?;
    let (_, shared) = m.block1.backward(&tape, &g).map_err(e)?;
    let (first, second) = (m.block1.with_cycles(1), m.block1.with_cycles(1));
    let (mid, t1) = first.forward(&x).map_err(e)?;
    let (_, t2) = second.forward(&mid).map_err(e)?;
    let (g_mid, g2) = second.backward(&t2, &g).map_err(e)?;
    let (_, g1) = first.backward(&t1, &g_mid).map_err(e)?;
    let mut worst = 0.0f64;
    for (s, a, b) in [
        (&shared.conv_a, &g1.conv_a, &g2.conv_a),
        (&shared.conv_b, &g1.conv_b, &g2.conv_b),
        (&shared.conv_c, &g1.conv_c, &g2.conv_c),
    ] {
        worst = worst.max(s.weight.max_abs_diff(&a.weight.add(&b.weight).map_err(e)?).map_err(e)?);
        for ((p, q), r) in s.bias.iter().zip(&a.bias).zip(&b.bias) {
            worst = worst.max((p - (q + r)).abs());
        }
    }
    for (s, a, b) in [(&shared.prelu_a, &g1.prelu_a, &g2.prelu_a), (&shared.prelu_b, &g1.prelu_b, &g2.prelu_b)] {
        for ((p, q), r) in s.slope.iter().zip(&a.slope).zip(&b.slope) {
            worst = worst.max((p - (q + r)).abs());
        }
    }
    if worst < 1e-12 {
        Ok(format!("shared gradient equals the per-cycle sum (max diff {worst:.1e})"))
    } else {
        Err(format!("shared gradient differs from per-cycle sum by {worst:.2e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_gradients_pass() {
        for s in [
            conv2d_gradient_summary(1, None),
            transposed_gradient_summary(2, None),
            prelu_gradient_summary(3, None),
            mse_gradient_summary(4, None),
        ] {
            assert_eq!(s.instances, GRAD_INSTANCES);
            assert!(s.passed(), "{}: {}", s.op, s.describe());
        }
    }

    #[test]
    fn structural_checks_pass() {
        let checks: Vec<_> = default_checks().into_iter().filter(|c| !c.name.starts_with("gradient/")).collect();
        let r = run_checks(&checks, |_| {});
        assert!(r.passed(), "{}", r.render());
    }

    #[test]
    fn closed_form_matches_hand_total() {
        assert_eq!(x4_closed_form_count(64), 401_153);
        assert_eq!(x4_closed_form_count(1), 16 + 1 + 1 + 16 + 1 + 1 + 2 * 32 + 30 + 28);
    }

    fn skew(op: &str, g: &mut [f64]) {
        if op == "conv2d" {
            if let Some(v) = g.first_mut() {
                *v = *v * 1.01 + 1e-3;
            }
        }
    }

    #[test]
    fn perturbed_backward_is_named() {
        let checks = gradient_checks(Some(skew));
        let conv_only: Vec<_> = checks.into_iter().filter(|c| c.name == "gradient/conv2d").collect();
        let r = run_checks(&conv_only, |_| {});
        assert!(!r.passed());
        assert_eq!(r.failures(), ["gradient/conv2d"]);
        assert!(r.render().contains("FAIL gradient/conv2d"));
    }

    #[test]
    fn panicking_check_is_a_failure() {
        let r = run_checks(&[Check::new("boom", || panic!("kaboom")), Check::new("fine", || Ok("ok".into()))], |_| {});
        assert_eq!(r.failures(), ["boom"]);
        assert!(r.outcomes[0].detail.contains("kaboom"));
    }
}
