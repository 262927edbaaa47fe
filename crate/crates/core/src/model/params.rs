use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{BatchNormMode, BatchNormState, Graph, Tensor, Var};
use crate::seed::rng_for;

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Index of a running-statistics slot in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnId(pub usize);

/// Rounds every value to the nearest `f32`. Stored weights always hold
/// f32-representable values so checkpoints reload bit-exactly.
pub fn round_to_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

/// Named trainable tensors and batch-norm statistics, in creation order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    seed: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
    bn_names: Vec<String>,
    bn: Vec<BatchNormState>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { seed, names: Vec::new(), values: Vec::new(), bn_names: Vec::new(), bn: Vec::new() }
    }

    /// Uniform in `±1/sqrt(fan_in)`. The draw depends only on the seed and
    /// the name, so networks that share layer names share their weights.
    pub fn uniform(&mut self, name: &str, dims: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = rng_for(self.seed, &format!("init/{name}"));
        let value = Tensor::from_fn(dims.to_vec(), |_| rng.gen_range(-bound..bound));
        self.insert(name, value)
    }

    pub fn filled(&mut self, name: &str, dims: &[usize], value: f64) -> ParamId {
        self.insert(name, Tensor::full(dims.to_vec(), value))
    }

    fn insert(&mut self, name: &str, mut value: Tensor) -> ParamId {
        assert!(!self.names.iter().any(|n| n == name), "duplicate parameter {name}");
        round_to_f32(value.data_mut());
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> BnId {
        self.bn_names.push(name.to_string());
        self.bn.push(BatchNormState::new(channels));
        BnId(self.bn.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total trainable scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| &self.values[id.0])
    }

    /// Replaces a tensor, keeping its shape; the value is rounded to f32.
    pub fn set(&mut self, id: ParamId, mut value: Tensor) -> Result<()> {
        if value.dims() != self.values[id.0].dims() {
            return Err(Error::shape(format!(
                "{} expects dims {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].dims(),
                value.dims()
            )));
        }
        round_to_f32(value.data_mut());
        self.values[id.0] = value;
        Ok(())
    }

    /// Applies `f` to each tensor in place, then rounds to f32.
    pub fn update_each(&mut self, mut f: impl FnMut(usize, &str, &mut Tensor)) {
        for (i, (name, value)) in self.names.iter().zip(&mut self.values).enumerate() {
            f(i, name, value);
            round_to_f32(value.data_mut());
        }
    }

    /// Sets every tensor whose name contains `pattern` to zero.
    pub fn zero_matching(&mut self, pattern: &str) -> usize {
        let mut hits = 0;
        for (name, value) in self.names.iter().zip(&mut self.values) {
            if name.contains(pattern) {
                value.data_mut().iter_mut().for_each(|v| *v = 0.0);
                hits += 1;
            }
        }
        hits
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn bn_states(&self) -> &[BatchNormState] {
        &self.bn
    }

    pub fn bn_state(&self, id: BnId) -> &BatchNormState {
        &self.bn[id.0]
    }

    pub fn set_bn_state(&mut self, id: BnId, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        let state = &mut self.bn[id.0];
        if mean.len() != state.channels() || var.len() != state.channels() {
            return Err(Error::shape(format!("{} expects {} channels", self.bn_names[id.0], state.channels())));
        }
        state.running_mean = mean;
        state.running_var = var;
        round_to_f32(&mut state.running_mean);
        round_to_f32(&mut state.running_var);
        Ok(())
    }

    /// Folds the batch statistics recorded by a train-mode forward into the
    /// running estimates.
    pub fn apply_bn_updates(&mut self, graph: &Graph, updates: &[(BnId, Var)]) -> Result<()> {
        for &(id, var) in updates {
            let (mean, batch_var) = graph
                .batch_stats(var)
                .ok_or_else(|| Error::arg(format!("{} has no batch statistics", self.bn_names[id.0])))?;
            let x = graph.value(var).dims();
            let count = x[0] * x[2..].iter().product::<usize>();
            let state = &mut self.bn[id.0];
            state.update(mean, batch_var, count);
            round_to_f32(&mut state.running_mean);
            round_to_f32(&mut state.running_var);
        }
        Ok(())
    }
}

/// One forward pass: the graph, a [`Var`] per stored tensor, and the
/// batch-norm nodes whose statistics the caller may fold back.
pub struct Session<'a> {
    pub graph: &'a mut Graph,
    pub store: &'a ParamStore,
    pub mode: BatchNormMode,
    vars: Vec<Var>,
    pub bn_updates: Vec<(BnId, Var)>,
}

impl<'a> Session<'a> {
    /// Binds every stored tensor as a trainable leaf.
    pub fn trainable(graph: &'a mut Graph, store: &'a ParamStore, mode: BatchNormMode) -> Self {
        let vars = store.values.iter().map(|v| graph.param(v.clone())).collect();
        Session { graph, store, mode, vars, bn_updates: Vec::new() }
    }

    /// Binds every stored tensor as a constant.
    pub fn frozen(graph: &'a mut Graph, store: &'a ParamStore, mode: BatchNormMode) -> Self {
        let vars = store.values.iter().map(|v| graph.constant(v.clone())).collect();
        Session { graph, store, mode, vars, bn_updates: Vec::new() }
    }

    /// Uses caller-provided leaves, one per stored tensor in order.
    pub fn with_vars(graph: &'a mut Graph, store: &'a ParamStore, vars: Vec<Var>, mode: BatchNormMode) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(Error::arg(format!("{} vars for {} parameters", vars.len(), store.len())));
        }
        Ok(Session { graph, store, mode, vars, bn_updates: Vec::new() })
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn batch_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, bn: BnId) -> Result<Var> {
        let (g, b) = (self.var(gamma), self.var(beta));
        let y = self.graph.batch_norm(x, g, b, self.store.bn_state(bn), self.mode)?;
        if self.mode == BatchNormMode::Train {
            self.bn_updates.push((bn, y));
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_on_seed_and_name_only() {
        let mut a = ParamStore::new(7);
        let mut b = ParamStore::new(7);
        a.uniform("x", &[3, 4], 4);
        let wa = a.uniform("w", &[5], 2);
        let wb = b.uniform("w", &[5], 2);
        assert!(a.get(wa).bit_eq(b.get(wb)));
        let mut c = ParamStore::new(8);
        let wc = c.uniform("w", &[5], 2);
        assert!(!a.get(wa).bit_eq(c.get(wc)));
        assert!(a.get(wa).data().iter().all(|v| v.abs() < 1.0 / 2f64.sqrt() && *v == *v as f32 as f64));
        assert_eq!(a.count(), 17);
    }

    #[test]
    fn running_stats_follow_batches() {
        let mut store = ParamStore::new(0);
        let gamma = store.filled("bn.gamma", &[1], 1.0);
        let beta = store.filled("bn.beta", &[1], 0.0);
        let bn = store.batch_norm("bn", 1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mut s = Session::trainable(&mut g, &store, BatchNormMode::Train);
        s.batch_norm(x, gamma, beta, bn).unwrap();
        let updates = std::mem::take(&mut s.bn_updates);
        store.apply_bn_updates(&g, &updates).unwrap();
        let st = store.bn_state(bn);
        assert_eq!(st.running_mean[0], (0.1f64 * 2.5) as f32 as f64);
        // population var 1.25, unbiased 5/3
        assert_eq!(st.running_var[0], (0.9 + 0.1 * 5.0 / 3.0) as f32 as f64);
    }
}
