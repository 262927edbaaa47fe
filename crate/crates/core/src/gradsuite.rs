//! Finite-difference checks for every primitive op and for the tiny network
//! in each attention variant.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::NUM_CLASSES;
use crate::error::Result;
use crate::model::{AttentionKind, FcaNet, ModelConfig, Placement, Session};
use crate::numerics::{
    grad_check, Activation, BatchNormMode, BatchNormState, GradCheckOptions, Graph, Padding, Tensor, Var,
};

/// Largest relative error a case may show.
pub const TOLERANCE: f64 = 1e-4;
/// Random draws per primitive.
pub const PRIMITIVE_SEEDS: u64 = 20;

type Program = Arc<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + Send + Sync>;

/// Parameters and a scalar-valued program over them.
pub struct Instance {
    pub params: Vec<Tensor>,
    pub program: Program,
}

/// A named family of instances, one per seed.
pub struct GradCase {
    pub name: String,
    pub seeds: Vec<u64>,
    build: Box<dyn Fn(u64) -> Result<Instance> + Send + Sync>,
}

impl GradCase {
    pub fn new(name: impl Into<String>, seeds: Vec<u64>, build: impl Fn(u64) -> Result<Instance> + Send + Sync + 'static) -> Self {
        GradCase { name: name.into(), seeds, build: Box::new(build) }
    }

    pub fn instance(&self, seed: u64) -> Result<Instance> {
        (self.build)(seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub seeds: usize,
    pub coords: usize,
    pub max_rel_error: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

pub fn run_case(case: &GradCase) -> Result<CaseResult> {
    let mut result = CaseResult { name: case.name.clone(), seeds: case.seeds.len(), coords: 0, max_rel_error: 0.0 };
    for &seed in &case.seeds {
        let inst = case.instance(seed)?;
        let program = inst.program.clone();
        let opts = GradCheckOptions { seed, ..GradCheckOptions::default() };
        let report = grad_check(move |g: &mut Graph, v: &[Var]| program(g, v), &inst.params, &opts)?;
        result.coords += report.coords_checked;
        result.max_rel_error = result.max_rel_error.max(report.max_rel_error);
    }
    Ok(result)
}

/// Runs cases in parallel; results keep the input order.
pub fn run_suite(cases: &[GradCase]) -> Result<Vec<CaseResult>> {
    cases.par_iter().map(run_case).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    Tensor::from_fn(dims.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    Tensor::from_fn(dims.to_vec(), |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(y * r)` for a fixed random `r`, so every output element matters.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = rand_tensor(&mut rng, g.value(y).dims());
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn instance(params: Vec<Tensor>, program: impl Fn(&mut Graph, &[Var]) -> Result<Var> + Send + Sync + 'static) -> Instance {
    Instance { params, program: Arc::new(program) }
}

fn primitive(name: &str, build: impl Fn(u64) -> Result<Instance> + Send + Sync + 'static) -> GradCase {
    GradCase::new(name, (0..PRIMITIVE_SEEDS).collect(), build)
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

/// One case per primitive op, each over [`PRIMITIVE_SEEDS`] random draws.
pub fn primitive_cases() -> Vec<GradCase> {
    let mut cases = vec![
        primitive("depthwise_conv2d", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, c, h, w) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 3), dim(&mut rng, 3, 6), dim(&mut rng, 3, 6));
            let (kh, kw) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
            let stride = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 2));
            let pad = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
            let params = vec![rand_tensor(&mut rng, &[n, c, h, w]), rand_tensor(&mut rng, &[c, kh, kw])];
            Ok(instance(params, move |g, v| {
                let y = g.depthwise_conv2d(v[0], v[1], stride, pad)?;
                project(g, y, seed)
            }))
        }),
        primitive("depthwise_conv1d", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, c, f, t) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 4, 9));
            let k = dim(&mut rng, 1, 4);
            let stride = dim(&mut rng, 1, 2);
            let pad = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
            let params = vec![rand_tensor(&mut rng, &[n, c, f, t]), rand_tensor(&mut rng, &[c, k])];
            Ok(instance(params, move |g, v| {
                let y = g.depthwise_conv1d(v[0], v[1], stride, pad)?;
                project(g, y, seed)
            }))
        }),
        primitive("conv2d", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, ci, co, h, w) =
                (dim(&mut rng, 1, 2), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 3, 5), dim(&mut rng, 3, 5));
            let pad = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
            let params = vec![
                rand_tensor(&mut rng, &[n, ci, h, w]),
                rand_tensor(&mut rng, &[co, ci, 3, 3]),
                rand_tensor(&mut rng, &[co]),
            ];
            Ok(instance(params, move |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), pad)?;
                project(g, y, seed)
            }))
        }),
        primitive("pointwise_conv", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, ci, co, s) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4), dim(&mut rng, 1, 6));
            let params =
                vec![rand_tensor(&mut rng, &[n, ci, s]), rand_tensor(&mut rng, &[co, ci]), rand_tensor(&mut rng, &[co])];
            Ok(instance(params, move |g, v| {
                let y = g.pointwise_conv(v[0], v[1], Some(v[2]))?;
                project(g, y, seed)
            }))
        }),
        primitive("linear", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, di, d_o) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 6), dim(&mut rng, 1, 6));
            let params =
                vec![rand_tensor(&mut rng, &[m, 2, di]), rand_tensor(&mut rng, &[d_o, di]), rand_tensor(&mut rng, &[d_o])];
            Ok(instance(params, move |g, v| {
                let y = g.linear(v[0], v[1], v[2])?;
                project(g, y, seed)
            }))
        }),
    ];
    for mode in [BatchNormMode::Train, BatchNormMode::Eval] {
        let name = if mode == BatchNormMode::Train { "batch_norm_train" } else { "batch_norm_eval" };
        cases.push(primitive(name, move |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, c, s) = (dim(&mut rng, 2, 3), dim(&mut rng, 1, 3), dim(&mut rng, 2, 5));
            let mut state = BatchNormState::new(c);
            state.running_mean = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            state.running_var = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
            let params = vec![
                rand_tensor(&mut rng, &[n, c, s]),
                rand_tensor(&mut rng, &[c]).map(|v| 1.0 + 0.5 * v),
                rand_tensor(&mut rng, &[c]),
            ];
            Ok(instance(params, move |g, v| {
                let y = g.batch_norm(v[0], v[1], v[2], &state, mode)?;
                project(g, y, seed)
            }))
        }));
    }
    for kind in [Activation::Swish, Activation::Gelu, Activation::Relu, Activation::Sigmoid] {
        let name = format!("activation_{}", format!("{kind:?}").to_lowercase());
        cases.push(primitive(&name, move |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = dim(&mut rng, 2, 12);
            let params = vec![off_zero(&mut rng, &[d]).map(|v| 3.0 * v)];
            Ok(instance(params, move |g, v| {
                let y = g.activation(v[0], kind)?;
                project(g, y, seed)
            }))
        }));
    }
    cases.extend([
        primitive("mean_last", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = [dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 1, 7)];
            let params = vec![rand_tensor(&mut rng, &dims)];
            Ok(instance(params, move |g, v| {
                let y = g.mean_last(v[0])?;
                project(g, y, seed)
            }))
        }),
        primitive("add_mul_scale_sum", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = [dim(&mut rng, 1, 3), dim(&mut rng, 1, 4)];
            let factor = rng.gen_range(-2.0..2.0);
            let params = vec![rand_tensor(&mut rng, &dims), rand_tensor(&mut rng, &dims)];
            Ok(instance(params, move |g, v| {
                let s = g.add(v[0], v[1])?;
                let p = g.mul(s, v[0])?;
                let p = g.scale(p, factor)?;
                g.sum(p)
            }))
        }),
        primitive("mul_prefix", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, c, f, t) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 1, 4));
            let w_dims: Vec<usize> = if rng.gen_bool(0.5) { vec![n, c] } else { vec![n, c, f] };
            let params = vec![rand_tensor(&mut rng, &[n, c, f, t]), rand_tensor(&mut rng, &w_dims)];
            Ok(instance(params, move |g, v| {
                let y = g.mul_prefix(v[0], v[1])?;
                project(g, y, seed)
            }))
        }),
        primitive("reshape_swap_last2", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
            let params = vec![rand_tensor(&mut rng, &[a, b * c])];
            Ok(instance(params, move |g, v| {
                let y = g.reshape(v[0], vec![a, b, c])?;
                let y = g.swap_last2(y)?;
                project(g, y, seed)
            }))
        }),
        primitive("softmax_cross_entropy", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, k) = (dim(&mut rng, 1, 4), dim(&mut rng, 2, 6));
            let raw = Tensor::from_fn(vec![n, k], |_| rng.gen_range(0.0..1.0));
            let targets = Tensor::from_fn(vec![n, k], |i| {
                let row = &raw.data()[(i / k) * k..][..k];
                raw.data()[i] / row.iter().sum::<f64>()
            });
            let params = vec![rand_tensor(&mut rng, &[n, k]).map(|v| 3.0 * v)];
            Ok(instance(params, move |g, v| g.softmax_cross_entropy(v[0], targets.clone())))
        }),
    ]);
    cases
}

/// The tiny network for one attention variant, checked with respect to its
/// weights and its input under a train-mode forward.
pub fn model_case(attention: AttentionKind, placement: Placement, seed: u64) -> GradCase {
    let cfg = ModelConfig::tiny(attention, placement);
    GradCase::new(cfg.variant_name(), vec![seed], move |seed| {
        let net = FcaNet::build(&cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &net.input_dims(2));
        let labels = [rng.gen_range(0..NUM_CLASSES), rng.gen_range(0..NUM_CLASSES)];
        let targets = Tensor::one_hot(&labels, NUM_CLASSES)?;
        let mut params = net.store().values().to_vec();
        params.push(x);
        Ok(instance(params, move |g, v| {
            let (weights, input) = v.split_at(v.len() - 1);
            let mut s = Session::with_vars(g, net.store(), weights.to_vec(), BatchNormMode::Train)?;
            let logits = net.forward(&mut s, input[0])?;
            s.graph.softmax_cross_entropy(logits, targets.clone())
        }))
    })
}

/// The baseline plus every attention kind at every placement.
pub fn model_cases(seed: u64) -> Vec<GradCase> {
    let mut cases = vec![model_case(AttentionKind::None, Placement::None, seed)];
    for kind in AttentionKind::MODULES {
        for p in Placement::INSERTING {
            cases.push(model_case(kind, p, seed));
        }
    }
    cases
}

/// A program whose recorded gradient is wrong: one factor of `x * x` is
/// detached as a constant, so the analytic gradient is half the true one.
pub fn corrupted_case() -> GradCase {
    GradCase::new("corrupted_backward", vec![0], |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = vec![off_zero(&mut rng, &[4])];
        Ok(instance(params, |g, v| {
            let copy = g.value(v[0]).clone();
            let c = g.constant(copy);
            let y = g.mul(v[0], c)?;
            g.sum(y)
        }))
    })
}
