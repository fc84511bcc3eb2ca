//! Actor-critic network: block-index embedding, ReLU MLP trunk, categorical
//! policy head and scalar value head, with hand-rolled exact gradients.
//!
//! The element type is generic over [`Real`]: training runs at `f32`, the
//! gradient-check tests instantiate the identical code paths at `f64`.
//! Reductions that feed log-domain quantities (log-sum-exp, entropy) always
//! accumulate in `f64` so the analytic gradients and the loss value stay
//! mutually consistent at either precision.

use ndarray::{Array1, Array2, Axis};

use crate::rng::{Domain, RngStream};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Embedding rows; must cover the largest observation index in the run
    /// (or the whole sweep, so one architecture serves every grid point).
    pub embed_rows: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub num_actions: usize,
    /// Give the value head its own embedding + trunk instead of sharing.
    pub separate_value_net: bool,
}

impl NetworkConfig {
    /// (out, in) shapes of the trunk's affine layers.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.hidden_dim, self.embed_dim)];
        dims.extend(std::iter::repeat_n((self.hidden_dim, self.hidden_dim), self.hidden_layers - 1));
        dims
    }

    fn assert_valid(&self) {
        assert!(self.embed_rows > 0, "embedding needs at least one row");
        assert!(self.embed_dim > 0 && self.hidden_dim > 0, "zero-width layer");
        assert!(self.hidden_layers >= 1, "trunk needs at least one layer");
        assert!(self.num_actions >= 1, "empty action space");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// Row-major (out x in).
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> Linear<F> {
    fn zeros(out: usize, input: usize) -> Self {
        Linear { w: Array2::zeros((out, input)), b: Array1::zeros(out) }
    }

    /// x (batch x in) -> x W^T + b (batch x out).
    fn apply(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }
}

/// Embedding plus MLP trunk; the network has one (shared) or two of these.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower<F> {
    pub embedding: Array2<F>,
    pub layers: Vec<Linear<F>>,
}

impl<F: Real> Tower<F> {
    fn zeros(cfg: &NetworkConfig) -> Self {
        Tower {
            embedding: Array2::zeros((cfg.embed_rows, cfg.embed_dim)),
            layers: cfg.layer_dims().iter().map(|&(o, i)| Linear::zeros(o, i)).collect(),
        }
    }

    /// Embeds `obs` and runs the trunk, returning every post-activation
    /// (index 0 is the embedded input) for use by the backward pass.
    fn forward(&self, obs: &[usize]) -> Vec<Array2<F>> {
        let dim = self.embedding.ncols();
        let mut x = Array2::zeros((obs.len(), dim));
        for (row, &o) in obs.iter().enumerate() {
            assert!(o < self.embedding.nrows(), "obs index {o} outside embedding table");
            x.row_mut(row).assign(&self.embedding.row(o));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for layer in &self.layers {
            let mut z = layer.apply(acts.last().expect("nonempty"));
            z.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
            acts.push(z);
        }
        acts
    }

    /// Backpropagates `d_out` (gradient at the trunk output) into parameter
    /// gradients, accumulating into `grads`.
    fn backward(&self, acts: &[Array2<F>], obs: &[usize], mut d_out: Array2<F>, grads: &mut Tower<F>) {
        for (i, layer) in self.layers.iter().enumerate().rev() {
            // d_out is the gradient at acts[i + 1]; mask by the ReLU.
            d_out.zip_mut_with(&acts[i + 1], |d, &a| {
                if a <= F::zero() {
                    *d = F::zero();
                }
            });
            grads.layers[i].w += &d_out.t().dot(&acts[i]);
            grads.layers[i].b += &d_out.sum_axis(Axis(0));
            d_out = d_out.dot(&layer.w);
        }
        for (row, &o) in obs.iter().enumerate() {
            let mut dst = grads.embedding.row_mut(o);
            dst += &d_out.row(row);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<F> {
    pub cfg: NetworkConfig,
    pub policy_tower: Tower<F>,
    /// Present only when `cfg.separate_value_net`.
    pub value_tower: Option<Tower<F>>,
    pub policy_head: Linear<F>,
    pub value_head: Linear<F>,
}

/// One tensor per parameter tensor, same shapes as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<F> {
    pub policy_tower: Tower<F>,
    pub value_tower: Option<Tower<F>>,
    pub policy_head: Linear<F>,
    pub value_head: Linear<F>,
}

fn tower_entries<'a, F>(prefix: &str, tower: &'a Tower<F>) -> Vec<(String, Vec<usize>, &'a [F])> {
    let mut out = Vec::with_capacity(1 + 2 * tower.layers.len());
    out.push((
        format!("{prefix}embedding"),
        tower.embedding.shape().to_vec(),
        tower.embedding.as_slice().expect("standard layout"),
    ));
    for (i, layer) in tower.layers.iter().enumerate() {
        out.push((format!("{prefix}trunk{i}.w"), layer.w.shape().to_vec(), layer.w.as_slice().expect("standard layout")));
        out.push((format!("{prefix}trunk{i}.b"), layer.b.shape().to_vec(), layer.b.as_slice().expect("standard layout")));
    }
    out
}

fn tower_entries_mut<'a, F>(prefix: &str, tower: &'a mut Tower<F>) -> Vec<(String, &'a mut [F])> {
    let mut out = Vec::with_capacity(1 + 2 * tower.layers.len());
    out.push((format!("{prefix}embedding"), tower.embedding.as_slice_mut().expect("standard layout")));
    for (i, layer) in tower.layers.iter_mut().enumerate() {
        out.push((format!("{prefix}trunk{i}.w"), layer.w.as_slice_mut().expect("standard layout")));
        out.push((format!("{prefix}trunk{i}.b"), layer.b.as_slice_mut().expect("standard layout")));
    }
    out
}

macro_rules! impl_tensor_access {
    ($ty:ident) => {
        impl<F: Real> $ty<F> {
            /// Tensors in declaration order: (name, shape, data).
            pub fn tensor_entries(&self) -> Vec<(String, Vec<usize>, &[F])> {
                let mut out = tower_entries("", &self.policy_tower);
                if let Some(vt) = &self.value_tower {
                    out.extend(tower_entries("value_", vt));
                }
                out.push((
                    "policy_head.w".into(),
                    self.policy_head.w.shape().to_vec(),
                    self.policy_head.w.as_slice().expect("standard layout"),
                ));
                out.push((
                    "policy_head.b".into(),
                    self.policy_head.b.shape().to_vec(),
                    self.policy_head.b.as_slice().expect("standard layout"),
                ));
                out.push((
                    "value_head.w".into(),
                    self.value_head.w.shape().to_vec(),
                    self.value_head.w.as_slice().expect("standard layout"),
                ));
                out.push((
                    "value_head.b".into(),
                    self.value_head.b.shape().to_vec(),
                    self.value_head.b.as_slice().expect("standard layout"),
                ));
                out
            }

            /// Mutable view of the same tensors, same order.
            pub fn tensor_slices_mut(&mut self) -> Vec<(String, &mut [F])> {
                let mut out = tower_entries_mut("", &mut self.policy_tower);
                if let Some(vt) = &mut self.value_tower {
                    out.extend(tower_entries_mut("value_", vt));
                }
                out.push(("policy_head.w".into(), self.policy_head.w.as_slice_mut().expect("standard layout")));
                out.push(("policy_head.b".into(), self.policy_head.b.as_slice_mut().expect("standard layout")));
                out.push(("value_head.w".into(), self.value_head.w.as_slice_mut().expect("standard layout")));
                out.push(("value_head.b".into(), self.value_head.b.as_slice_mut().expect("standard layout")));
                out
            }

            pub fn param_count(&self) -> usize {
                self.tensor_entries().iter().map(|(_, _, d)| d.len()).sum()
            }

            pub fn all_finite(&self) -> bool {
                self.tensor_entries().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
            }

            /// Reads the parameter at a flat index over the tensor order.
            pub fn get_flat(&self, mut index: usize) -> F {
                for (_, _, data) in self.tensor_entries() {
                    if index < data.len() {
                        return data[index];
                    }
                    index -= data.len();
                }
                panic!("flat index out of range");
            }

            /// Writes the parameter at a flat index over the tensor order.
            pub fn set_flat(&mut self, mut index: usize, value: F) {
                for (_, data) in self.tensor_slices_mut() {
                    if index < data.len() {
                        data[index] = value;
                        return;
                    }
                    index -= data.len();
                }
                panic!("flat index out of range");
            }
        }
    };
}

impl_tensor_access!(NetworkParams);
impl_tensor_access!(GradientSet);

impl<F: Real> GradientSet<F> {
    fn zeros(cfg: &NetworkConfig) -> Self {
        GradientSet {
            policy_tower: Tower::zeros(cfg),
            value_tower: cfg.separate_value_net.then(|| Tower::zeros(cfg)),
            policy_head: Linear::zeros(cfg.num_actions, cfg.hidden_dim),
            value_head: Linear::zeros(1, cfg.hidden_dim),
        }
    }

    /// Global L2 norm over every gradient entry (f64 accumulation).
    pub fn global_norm(&self) -> f64 {
        self.tensor_entries()
            .iter()
            .flat_map(|(_, _, d)| d.iter())
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Scales every gradient entry in place.
    pub fn scale(&mut self, factor: f64) {
        let f = F::from_f64(factor);
        let mut towers: Vec<&mut Tower<F>> = vec![&mut self.policy_tower];
        if let Some(vt) = &mut self.value_tower {
            towers.push(vt);
        }
        for tower in towers {
            tower.embedding.mapv_inplace(|v| v * f);
            for layer in &mut tower.layers {
                layer.w.mapv_inplace(|v| v * f);
                layer.b.mapv_inplace(|v| v * f);
            }
        }
        for head in [&mut self.policy_head, &mut self.value_head] {
            head.w.mapv_inplace(|v| v * f);
            head.b.mapv_inplace(|v| v * f);
        }
    }

    /// Elementwise sum with another gradient set (used by linearity tests).
    pub fn add(&mut self, other: &GradientSet<F>) {
        fn add_tower<F: Real>(a: &mut Tower<F>, b: &Tower<F>) {
            a.embedding += &b.embedding;
            for (la, lb) in a.layers.iter_mut().zip(&b.layers) {
                la.w += &lb.w;
                la.b += &lb.b;
            }
        }
        add_tower(&mut self.policy_tower, &other.policy_tower);
        if let (Some(a), Some(b)) = (&mut self.value_tower, &other.value_tower) {
            add_tower(a, b);
        }
        self.policy_head.w += &other.policy_head.w;
        self.policy_head.b += &other.policy_head.b;
        self.value_head.w += &other.value_head.w;
        self.value_head.b += &other.value_head.b;
    }
}

impl<F: Real> NetworkParams<F> {
    /// All-zero parameters (uniform policy, zero values).
    pub fn zeros(cfg: NetworkConfig) -> Self {
        cfg.assert_valid();
        NetworkParams {
            policy_tower: Tower::zeros(&cfg),
            value_tower: cfg.separate_value_net.then(|| Tower::zeros(&cfg)),
            policy_head: Linear::zeros(cfg.num_actions, cfg.hidden_dim),
            value_head: Linear::zeros(1, cfg.hidden_dim),
            cfg,
        }
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardPass<F> {
    pub logits: Array2<F>,
    pub values: Array1<F>,
    obs: Vec<usize>,
    policy_acts: Vec<Array2<F>>,
    value_acts: Option<Vec<Array2<F>>>,
}

/// Forward pass returning logits (batch x A_c) and values (batch).
pub fn forward<F: Real>(params: &NetworkParams<F>, obs: &[usize]) -> (Array2<F>, Array1<F>) {
    let pass = forward_cached(params, obs);
    (pass.logits, pass.values)
}

/// Forward pass that also keeps the activations for [`backward`].
pub fn forward_cached<F: Real>(params: &NetworkParams<F>, obs: &[usize]) -> ForwardPass<F> {
    let policy_acts = params.policy_tower.forward(obs);
    let value_acts = params.value_tower.as_ref().map(|t| t.forward(obs));
    let h_policy = policy_acts.last().expect("trunk has layers");
    let h_value = value_acts.as_ref().map_or(h_policy, |acts| acts.last().expect("trunk has layers"));

    let logits = params.policy_head.apply(h_policy);
    let mut values = h_value.dot(&params.value_head.w.row(0));
    values += params.value_head.b[0];
    ForwardPass { logits, values, obs: obs.to_vec(), policy_acts, value_acts }
}

/// Exact reverse-mode gradients given the loss gradient at the outputs
/// (`d_logits` for the policy head, `d_values` for the value head).
pub fn backward<F: Real>(
    params: &NetworkParams<F>,
    pass: &ForwardPass<F>,
    d_logits: &Array2<F>,
    d_values: &Array1<F>,
) -> GradientSet<F> {
    let batch = pass.obs.len();
    assert_eq!(d_logits.nrows(), batch);
    assert_eq!(d_values.len(), batch);

    let mut grads = GradientSet::zeros(&params.cfg);
    let h_policy = pass.policy_acts.last().expect("trunk has layers");
    let h_value = pass.value_acts.as_ref().map_or(h_policy, |acts| acts.last().expect("trunk has layers"));

    grads.policy_head.w = d_logits.t().dot(h_policy);
    grads.policy_head.b = d_logits.sum_axis(Axis(0));
    let d_h_policy = d_logits.dot(&params.policy_head.w);

    grads.value_head.w.row_mut(0).assign(&h_value.t().dot(d_values));
    grads.value_head.b[0] = d_values.sum();
    let d_values_col = d_values.view().insert_axis(Axis(1));
    let w_value_row = params.value_head.w.row(0).insert_axis(Axis(0));
    let d_h_value = d_values_col.dot(&w_value_row);

    match (&params.value_tower, &pass.value_acts) {
        (Some(tower), Some(acts)) => {
            params.policy_tower.backward(&pass.policy_acts, &pass.obs, d_h_policy, &mut grads.policy_tower);
            let value_grads = grads.value_tower.as_mut().expect("shape congruence");
            tower.backward(acts, &pass.obs, d_h_value, value_grads);
        }
        _ => {
            let d_h = d_h_policy + &d_h_value;
            params.policy_tower.backward(&pass.policy_acts, &pass.obs, d_h, &mut grads.policy_tower);
        }
    }
    grads
}

/// Row-wise log-softmax. Accumulates the log-sum-exp in f64.
pub fn log_softmax<F: Real>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let log_z = max + sum.ln();
        row.mapv_inplace(|v| F::from_f64(v.as_f64() - log_z));
    }
    out
}

/// Entropy of each log-softmax row: -sum(p * log p), f64 accumulation.
pub fn entropy_rows<F: Real>(log_probs: &Array2<F>) -> Vec<F> {
    log_probs
        .rows()
        .into_iter()
        .map(|row| {
            let h: f64 = row.iter().map(|lp| {
                let lp = lp.as_f64();
                -(lp.exp() * lp)
            }).sum();
            F::from_f64(h)
        })
        .collect()
}

/// Samples from one log-softmax row by inverse CDF; one uniform draw.
/// Returns (action, log_prob at the action).
pub fn sample_from_log_probs<F: Real>(row: ndarray::ArrayView1<F>, rng: &mut RngStream) -> (usize, F) {
    let u = rng.next_f64();
    let mut acc = 0.0f64;
    let mut action = row.len() - 1;
    for (a, lp) in row.iter().enumerate() {
        acc += lp.as_f64().exp();
        if u < acc {
            action = a;
            break;
        }
    }
    (action, row[action])
}

/// Samples one action per row from the softmax-categorical distribution,
/// using each row's own stream. Returns (actions, log_probs at the actions).
pub fn sample_actions<F: Real>(logits: &Array2<F>, rngs: &mut [RngStream]) -> (Vec<usize>, Vec<F>) {
    assert_eq!(logits.nrows(), rngs.len(), "one stream per row");
    let log_probs = log_softmax(logits);
    let mut actions = Vec::with_capacity(rngs.len());
    let mut picked = Vec::with_capacity(rngs.len());
    for (row, rng) in log_probs.rows().into_iter().zip(rngs.iter_mut()) {
        let (action, lp) = sample_from_log_probs(row, rng);
        actions.push(action);
        picked.push(lp);
    }
    (actions, picked)
}

/// Log-probs, entropies, and values for given (obs, action) pairs.
pub fn evaluate_actions<F: Real>(
    params: &NetworkParams<F>,
    obs: &[usize],
    actions: &[usize],
) -> (Vec<F>, Vec<F>, Array1<F>) {
    assert_eq!(obs.len(), actions.len());
    let (logits, values) = forward(params, obs);
    let log_probs = log_softmax(&logits);
    let picked: Vec<F> = actions.iter().enumerate().map(|(row, &a)| log_probs[(row, a)]).collect();
    let entropies = entropy_rows(&log_probs);
    (picked, entropies, values)
}

/// Standard normal via Box-Muller (two uniform draws per sample).
fn next_normal(rng: &mut RngStream) -> f64 {
    let u1 = 1.0 - rng.next_f64(); // (0, 1]: keeps the log finite
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// (Semi-)orthogonal matrix scaled by `gain`: rows orthonormal when
/// out <= in, columns orthonormal otherwise (modified Gram-Schmidt on the
/// shorter side of a standard-normal draw).
fn orthogonal(out_dim: usize, in_dim: usize, gain: f64, rng: &mut RngStream) -> Vec<f64> {
    let (rows, cols, transpose) =
        if out_dim <= in_dim { (out_dim, in_dim, false) } else { (in_dim, out_dim, true) };
    let mut q: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| next_normal(rng)).collect()).collect();
    for i in 0..rows {
        for j in 0..i {
            let dot: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            let (qi, qj) = {
                let (head, tail) = q.split_at_mut(i);
                (&mut tail[0], &head[j])
            };
            qi.iter_mut().zip(qj).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = q[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1e-12, "degenerate draw during orthogonal init");
        // Unit norm here; projections above rely on it. Gain applies at emit.
        q[i].iter_mut().for_each(|v| *v /= norm);
    }
    // Emit row-major (out x in).
    let mut flat = Vec::with_capacity(out_dim * in_dim);
    for r in 0..out_dim {
        for c in 0..in_dim {
            flat.push(gain * if transpose { q[c][r] } else { q[r][c] });
        }
    }
    flat
}

fn orthogonal_linear<F: Real>(out_dim: usize, in_dim: usize, gain: f64, rng: &mut RngStream) -> Linear<F> {
    let flat = orthogonal(out_dim, in_dim, gain, rng);
    let w = Array2::from_shape_vec((out_dim, in_dim), flat.into_iter().map(F::from_f64).collect())
        .expect("shape matches draw");
    Linear { w, b: Array1::zeros(out_dim) }
}

fn init_tower<F: Real>(cfg: &NetworkConfig, rng: &mut RngStream) -> Tower<F> {
    // Unit-variance rows keep the block representations well separated at
    // init; scaling them down makes early cross-block generalization bleed
    // strong enough to poison the policy at not-yet-visited blocks.
    let embedding = Array2::from_shape_vec(
        (cfg.embed_rows, cfg.embed_dim),
        (0..cfg.embed_rows * cfg.embed_dim).map(|_| F::from_f64(next_normal(rng))).collect(),
    )
    .expect("shape matches draw");
    let layers =
        cfg.layer_dims().iter().map(|&(o, i)| orthogonal_linear(o, i, std::f64::consts::SQRT_2, rng)).collect();
    Tower { embedding, layers }
}

/// Seed-deterministic initialization: orthogonal trunk (gain sqrt(2)),
/// orthogonal heads (gain 0.01 policy, 1.0 value), unit-normal embedding.
pub fn init_params<F: Real>(cfg: NetworkConfig, seed: u64) -> NetworkParams<F> {
    cfg.assert_valid();
    let mut rng = RngStream::new(seed, Domain::NetInit, 0);
    let policy_tower = init_tower(&cfg, &mut rng);
    let value_tower = cfg.separate_value_net.then(|| init_tower(&cfg, &mut rng));
    let policy_head = orthogonal_linear(cfg.num_actions, cfg.hidden_dim, 0.01, &mut rng);
    let value_head = orthogonal_linear(1, cfg.hidden_dim, 1.0, &mut rng);
    NetworkParams { cfg, policy_tower, value_tower, policy_head, value_head }
}
