//! GNN-encoded policy gradient for frame-scale service orchestration.
//!
//! Node features are embedded in three levels: nodes aggregate their
//! eAP neighbours (`x = h1(sum f1(.)) + lift(s)`), eAP summaries aggregate
//! their nodes (`y = h2(sum f2(x))`) and a cluster summary aggregates the
//! eAPs (`z = h3(sum f3(y))`). A scoring head picks `H` nodes by softmax over
//! `g(x, y, z)` and a scaling head picks one delta in `[-W, W]` per picked
//! node. All sums are taken coordinate-wise over sorted terms so the result
//! does not depend on node order.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterState, OrchestrationAction};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, softmax, Activation, Adam, ForwardCache, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Every node aggregates its neighbours' lifted raw features.
    Parallel,
    /// Nodes are embedded one by one in ascending id; already embedded
    /// neighbours contribute their embedding, the rest their lifted features.
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpgConfig {
    /// High-value nodes picked per frame.
    pub h: usize,
    /// Frames per training episode.
    pub episode_frames: usize,
    pub lr: f64,
    pub embed_dim: usize,
    pub gnn_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    pub aggregation: Aggregation,
    /// Factor on the initial last-layer weights of the selection and
    /// scaling heads; small values start both distributions near uniform.
    pub head_init_scale: f64,
}

impl Default for GpgConfig {
    fn default() -> Self {
        Self {
            h: 2,
            episode_frames: 20,
            lr: 1e-3,
            embed_dim: 32,
            gnn_hidden: vec![64],
            policy_hidden: vec![128, 64, 32],
            aggregation: Aggregation::Parallel,
            head_init_scale: 0.01,
        }
    }
}

impl GpgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::config("gpg.h", "must be positive"));
        }
        if self.episode_frames == 0 {
            return Err(Error::config("gpg.episode_frames", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("gpg.lr", "must be positive"));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("gpg.embed_dim", "must be positive"));
        }
        if !(self.head_init_scale >= 0.0) {
            return Err(Error::config("gpg.head_init_scale", "must be non-negative"));
        }
        Ok(())
    }
}

/// Coordinate-wise sum of equally long vectors, each coordinate summed in
/// ascending order.
pub fn sorted_sum(terms: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut column = Vec::with_capacity(terms.len());
    (0..dim)
        .map(|k| {
            column.clear();
            column.extend(terms.iter().map(|t| t[k]));
            column.sort_by(f64::total_cmp);
            column.iter().sum()
        })
        .collect()
}

/// Zero-pads or truncates `features` to `dim`.
pub fn lift(features: &[f64], dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = features.iter().copied().take(dim).collect();
    v.resize(dim, 0.0);
    v
}

/// Node features and eAP grouping of one cluster snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    pub features: Vec<Vec<f64>>,
    /// Node ids of each eAP, ascending.
    pub groups: Vec<Vec<usize>>,
}

impl GraphInput {
    pub fn of(state: &ClusterState) -> Self {
        Self {
            features: (0..state.nodes().len()).map(|n| state.node_features(n)).collect(),
            groups: (0..state.eap_count())
                .map(|b| {
                    let mut g = state.eap_nodes(b).to_vec();
                    g.sort_unstable();
                    g
                })
                .collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.features.len()
    }

    fn node_group(&self) -> Vec<usize> {
        let mut of = vec![0; self.node_count()];
        for (b, g) in self.groups.iter().enumerate() {
            for &n in g {
                of[n] = b;
            }
        }
        of
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

/// The eight networks, in flat-parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct GpgNets {
    pub f1: Mlp,
    pub h1: Mlp,
    pub f2: Mlp,
    pub h2: Mlp,
    pub f3: Mlp,
    pub h3: Mlp,
    pub g: Mlp,
    pub q: Mlp,
}

pub const NET_NAMES: [&str; 8] = ["f1", "h1", "f2", "h2", "f3", "h3", "g", "q"];

impl GpgNets {
    pub fn new(config: &GpgConfig, service_count: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = config.embed_dim;
        let mut gnn = || Mlp::with_hidden(d, &config.gnn_hidden, d, Activation::Linear, rng);
        let (f1, h1, f2, h2, f3, h3) = (gnn()?, gnn()?, gnn()?, gnn()?, gnn()?, gnn()?);
        let mut head = |outputs: usize| -> Result<Mlp> {
            let mut net = Mlp::with_hidden(3 * d, &config.policy_hidden, outputs, Activation::Linear, rng)?;
            let last = net.layer_count() - 1;
            net.weights_mut(last).iter_mut().for_each(|w| *w *= config.head_init_scale);
            Ok(net)
        };
        let g = head(1)?;
        let q = head(2 * service_count + 1)?;
        Ok(Self {
            f1,
            h1,
            f2,
            h2,
            f3,
            h3,
            g,
            q,
        })
    }

    pub fn all(&self) -> [&Mlp; 8] {
        [&self.f1, &self.h1, &self.f2, &self.h2, &self.f3, &self.h3, &self.g, &self.q]
    }

    pub fn all_mut(&mut self) -> [&mut Mlp; 8] {
        [
            &mut self.f1,
            &mut self.h1,
            &mut self.f2,
            &mut self.h2,
            &mut self.f3,
            &mut self.h3,
            &mut self.g,
            &mut self.q,
        ]
    }

    pub fn embed_dim(&self) -> usize {
        self.f1.input_len()
    }

    pub fn param_count(&self) -> usize {
        self.all().iter().map(|n| n.param_count()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.all().iter().flat_map(|n| n.params().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::contract("flat parameter length mismatch"));
        }
        let mut at = 0;
        for net in self.all_mut() {
            let k = net.param_count();
            net.params_mut().copy_from_slice(&flat[at..at + k]);
            at += k;
        }
        Ok(())
    }

    fn policy_input(e: &Embeddings, n: usize, b: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * e.z.len());
        v.extend_from_slice(&e.x[n]);
        v.extend_from_slice(&e.y[b]);
        v.extend_from_slice(&e.z);
        v
    }

    fn trace(&self, input: &GraphInput, mode: Aggregation) -> Result<Trace> {
        let d = self.embed_dim();
        let n_count = input.node_count();
        let x0: Vec<Vec<f64>> = input.features.iter().map(|f| lift(f, d)).collect();
        let f1_x0 = x0.iter().map(|v| self.f1.forward_cached(v)).collect::<Result<Vec<_>>>()?;
        let mut f1_x: Vec<Option<ForwardCache>> = vec![None; n_count];
        let mut x: Vec<Vec<f64>> = vec![Vec::new(); n_count];
        let mut h1: Vec<Option<ForwardCache>> = vec![None; n_count];
        let mut uses_embedded: Vec<Vec<(usize, bool)>> = vec![Vec::new(); n_count];

        for group in &input.groups {
            let mut embedded = vec![false; n_count];
            for &n in group {
                let neighbours: Vec<(usize, bool)> = group
                    .iter()
                    .filter(|&&m| m != n)
                    .map(|&m| (m, mode == Aggregation::Sequential && embedded[m]))
                    .collect();
                let terms: Vec<&[f64]> = neighbours
                    .iter()
                    .map(|&(m, emb)| {
                        if emb {
                            f1_x[m].as_ref().expect("embedded before use").output()
                        } else {
                            f1_x0[m].output()
                        }
                    })
                    .collect();
                let agg = sorted_sum(&terms, d);
                let cache = self.h1.forward_cached(&agg)?;
                x[n] = cache.output().iter().zip(&x0[n]).map(|(a, b)| a + b).collect();
                h1[n] = Some(cache);
                uses_embedded[n] = neighbours;
                if mode == Aggregation::Sequential {
                    f1_x[n] = Some(self.f1.forward_cached(&x[n])?);
                    embedded[n] = true;
                }
            }
        }

        let f2 = x.iter().map(|v| self.f2.forward_cached(v)).collect::<Result<Vec<_>>>()?;
        let mut h2 = Vec::with_capacity(input.groups.len());
        for group in &input.groups {
            let terms: Vec<&[f64]> = group.iter().map(|&n| f2[n].output()).collect();
            h2.push(self.h2.forward_cached(&sorted_sum(&terms, d))?);
        }
        let y: Vec<Vec<f64>> = h2.iter().map(|c| c.output().to_vec()).collect();
        let f3 = y.iter().map(|v| self.f3.forward_cached(v)).collect::<Result<Vec<_>>>()?;
        let terms: Vec<&[f64]> = f3.iter().map(|c| c.output()).collect();
        let h3 = self.h3.forward_cached(&sorted_sum(&terms, d))?;
        let z = h3.output().to_vec();

        Ok(Trace {
            mode,
            f1_x0,
            f1_x,
            h1: h1.into_iter().map(|c| c.expect("every node is in a group")).collect(),
            uses_embedded,
            f2,
            h2,
            f3,
            h3,
            embeddings: Embeddings { x, y, z },
        })
    }

    pub fn embed(&self, input: &GraphInput, mode: Aggregation) -> Result<Embeddings> {
        validate_groups(input)?;
        Ok(self.trace(input, mode)?.embeddings)
    }

    /// Node-selection distribution `sigma` over all nodes.
    pub fn selection_probs(&self, input: &GraphInput, e: &Embeddings) -> Result<Vec<f64>> {
        let group = input.node_group();
        let scores = (0..input.node_count())
            .map(|n| Ok(self.g.forward(&Self::policy_input(e, n, group[n]))?[0]))
            .collect::<Result<Vec<f64>>>()?;
        Ok(softmax(&scores))
    }

    /// Distribution over the `2W + 1` deltas for node `n`; index `k` means
    /// delta `k - W`.
    pub fn scaling_probs(&self, input: &GraphInput, e: &Embeddings, n: usize) -> Result<Vec<f64>> {
        let b = input.node_group()[n];
        Ok(softmax(&self.q.forward(&Self::policy_input(e, n, b))?))
    }

    /// `log pi` of a joint action (sum of the selected nodes' log `sigma`
    /// plus their scaling log-probabilities) and its gradient with respect
    /// to the flat parameters.
    pub fn log_prob_grad(&self, input: &GraphInput, choice: &Choice, mode: Aggregation) -> Result<(f64, Vec<f64>)> {
        validate_groups(input)?;
        let trace = self.trace(input, mode)?;
        let e = &trace.embeddings;
        let d = self.embed_dim();
        let n_count = input.node_count();
        let group = input.node_group();
        let w_count = (self.q.output_len() - 1) / 2;

        let mut grads: Vec<Vec<f64>> = self.all().iter().map(|n| n.zero_grads()).collect();
        let mut gx = vec![vec![0.0; d]; n_count];
        let mut gy = vec![vec![0.0; input.groups.len()]; 0];
        gy.resize(input.groups.len(), vec![0.0; d]);
        let mut gz = vec![0.0; d];

        let mut add_policy_grad = |net_index: usize, net: &Mlp, cache: &ForwardCache, out: &[f64], n: usize, grads: &mut Vec<Vec<f64>>| -> Result<()> {
            let gin = net.backward(cache, out, &mut grads[net_index])?;
            let b = group[n];
            for k in 0..d {
                gx[n][k] += gin[k];
                gy[b][k] += gin[d + k];
                gz[k] += gin[2 * d + k];
            }
            Ok(())
        };

        // Selection: d(sum_k log sigma_{n_k}) / d g_j = count_j - H sigma_j.
        let g_caches = (0..n_count)
            .map(|n| self.g.forward_cached(&Self::policy_input(e, n, group[n])))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<f64> = g_caches.iter().map(|c| c.output()[0]).collect();
        let sigma = softmax(&scores);
        let mut log_prob = 0.0;
        let mut counts = vec![0.0; n_count];
        for &n in &choice.nodes {
            counts[n] += 1.0;
            log_prob += sigma[n].ln();
        }
        let picks = choice.nodes.len() as f64;
        for n in 0..n_count {
            let dg = counts[n] - picks * sigma[n];
            add_policy_grad(6, &self.g, &g_caches[n], &[dg], n, &mut grads)?;
        }

        for (&n, &k) in choice.nodes.iter().zip(&choice.delta_index) {
            if k > 2 * w_count {
                return Err(Error::contract(format!("delta index {k} outside the scaling head")));
            }
            let cache = self.q.forward_cached(&Self::policy_input(e, n, group[n]))?;
            let p = softmax(cache.output());
            log_prob += p[k].ln();
            let dq: Vec<f64> = p.iter().enumerate().map(|(j, &pj)| if j == k { 1.0 - pj } else { -pj }).collect();
            add_policy_grad(7, &self.q, &cache, &dq, n, &mut grads)?;
        }

        // Cluster summary.
        let gsum3 = self.h3.backward(&trace.h3, &gz, &mut grads[5])?;
        for (b, cache) in trace.f3.iter().enumerate() {
            let gin = self.f3.backward(cache, &gsum3, &mut grads[4])?;
            for k in 0..d {
                gy[b][k] += gin[k];
            }
        }
        // eAP summaries.
        for (b, members) in input.groups.iter().enumerate() {
            let gsum2 = self.h2.backward(&trace.h2[b], &gy[b], &mut grads[3])?;
            for &n in members {
                let gin = self.f2.backward(&trace.f2[n], &gsum2, &mut grads[2])?;
                for k in 0..d {
                    gx[n][k] += gin[k];
                }
            }
        }
        // Nodes, in reverse traversal order so every embedding's gradient is
        // complete before it flows further back.
        let mut f1_x_grad = vec![vec![0.0; d]; n_count];
        let mut f1_x0_grad = vec![vec![0.0; d]; n_count];
        for members in &input.groups {
            for &n in members.iter().rev() {
                if trace.mode == Aggregation::Sequential {
                    if let Some(cache) = &trace.f1_x[n] {
                        let gin = self.f1.backward(cache, &f1_x_grad[n], &mut grads[0])?;
                        for k in 0..d {
                            gx[n][k] += gin[k];
                        }
                    }
                }
                let gagg = self.h1.backward(&trace.h1[n], &gx[n], &mut grads[1])?;
                for &(m, emb) in &trace.uses_embedded[n] {
                    let target = if emb { &mut f1_x_grad[m] } else { &mut f1_x0_grad[m] };
                    for k in 0..d {
                        target[k] += gagg[k];
                    }
                }
            }
        }
        for n in 0..n_count {
            if f1_x0_grad[n].iter().any(|&g| g != 0.0) {
                self.f1.backward(&trace.f1_x0[n], &f1_x0_grad[n], &mut grads[0])?;
            }
        }
        Ok((log_prob, grads.concat()))
    }

    /// `log pi` without gradients.
    pub fn log_prob(&self, input: &GraphInput, choice: &Choice, mode: Aggregation) -> Result<f64> {
        let e = self.embed(input, mode)?;
        let sigma = self.selection_probs(input, &e)?;
        let mut lp = 0.0;
        for (&n, &k) in choice.nodes.iter().zip(&choice.delta_index) {
            lp += sigma[n].ln() + self.scaling_probs(input, &e, n)?[k].ln();
        }
        Ok(lp)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, net) in NET_NAMES.iter().zip(self.all()) {
            checkpoint::save(&dir.join(format!("gpg_{name}.bin")), net)?;
        }
        Ok(())
    }

    /// Loads checkpoints saved by [`GpgNets::save`] into nets shaped like `self`.
    pub fn load_like(&self, dir: &Path) -> Result<Self> {
        let mut out = self.clone();
        for (name, net) in NET_NAMES.iter().zip(out.all_mut()) {
            *net = checkpoint::load_like(&dir.join(format!("gpg_{name}.bin")), net)?;
        }
        Ok(out)
    }
}

struct Trace {
    mode: Aggregation,
    f1_x0: Vec<ForwardCache>,
    f1_x: Vec<Option<ForwardCache>>,
    h1: Vec<ForwardCache>,
    /// Per node: each neighbour and whether its embedding (rather than its
    /// lifted features) entered the aggregation.
    uses_embedded: Vec<Vec<(usize, bool)>>,
    f2: Vec<ForwardCache>,
    h2: Vec<ForwardCache>,
    f3: Vec<ForwardCache>,
    h3: ForwardCache,
    embeddings: Embeddings,
}

fn validate_groups(input: &GraphInput) -> Result<()> {
    let mut seen = vec![false; input.node_count()];
    for g in &input.groups {
        for &n in g {
            if n >= seen.len() || std::mem::replace(&mut seen[n], true) {
                return Err(Error::contract(format!("node {n} missing or in two groups")));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::contract("every node must belong to exactly one eAP"));
    }
    Ok(())
}

/// Selected nodes and, per node, the index of the chosen delta.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Choice {
    pub nodes: Vec<usize>,
    pub delta_index: Vec<usize>,
}

impl Choice {
    pub fn to_action(&self, service_count: usize) -> OrchestrationAction {
        OrchestrationAction {
            selected_nodes: self.nodes.clone(),
            deltas: self.delta_index.iter().map(|&k| k as i32 - service_count as i32).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub input: GraphInput,
    pub choice: Choice,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct Gpg {
    pub config: GpgConfig,
    nets: GpgNets,
    adam: Adam,
    service_count: usize,
    /// Per frame index: sum and count of past returns-to-go.
    baseline: Vec<(f64, u64)>,
    episode: Vec<FrameRecord>,
    /// Frames per episode in the current run; at most `episode_frames`.
    episode_target: usize,
    /// Last action, waiting for its reward at the next frame boundary.
    pending: Option<(GraphInput, Choice)>,
    rng: ChaCha8Rng,
}

impl Gpg {
    pub fn new(config: GpgConfig, service_count: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let nets = GpgNets::new(&config, service_count, &mut init)?;
        Ok(Self {
            adam: Adam::new(nets.param_count(), config.lr),
            baseline: vec![(0.0, 0); config.episode_frames],
            episode: Vec::new(),
            episode_target: config.episode_frames,
            pending: None,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x0bca_57e5),
            config,
            nets,
            service_count,
        })
    }

    pub fn nets(&self) -> &GpgNets {
        &self.nets
    }

    pub fn set_nets(&mut self, nets: GpgNets) -> Result<()> {
        if nets.param_count() != self.nets.param_count()
            || nets.all().iter().zip(self.nets.all()).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::Incompatible("gpg network shapes do not match".into()));
        }
        self.nets = nets;
        Ok(())
    }

    pub fn episode_len(&self) -> usize {
        self.episode.len()
    }

    /// Starts a run of `frames` decision frames. Runs shorter than
    /// `episode_frames` use one episode of their own length; longer runs
    /// are cut into full episodes and a trailing partial one is discarded.
    pub fn begin_run(&mut self, frames: usize) {
        self.reset_episode();
        self.episode_target = frames.clamp(1, self.config.episode_frames);
    }

    /// Chooses `H` nodes and one delta for each.
    pub fn choose(&mut self, input: &GraphInput, mode: Mode) -> Result<Choice> {
        let n = input.node_count();
        if self.config.h > n {
            return Err(Error::contract(format!("H = {} exceeds {n} nodes", self.config.h)));
        }
        let e = self.nets.embed(input, self.config.aggregation)?;
        let sigma = self.nets.selection_probs(input, &e)?;
        let nodes = match mode {
            Mode::Greedy => {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
                order.truncate(self.config.h);
                order
            }
            Mode::Sample => {
                let mut weights = sigma.clone();
                let mut picked = Vec::with_capacity(self.config.h);
                for _ in 0..self.config.h {
                    let k = WeightedIndex::new(&weights)
                        .map_err(|e| Error::contract(format!("selection weights: {e}")))?
                        .sample(&mut self.rng);
                    weights[k] = 0.0;
                    picked.push(k);
                }
                picked
            }
        };
        let mut delta_index = Vec::with_capacity(nodes.len());
        for &h in &nodes {
            let p = self.nets.scaling_probs(input, &e, h)?;
            delta_index.push(match mode {
                Mode::Greedy => p
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                    .0,
                Mode::Sample => WeightedIndex::new(&p)
                    .map_err(|e| Error::contract(format!("scaling weights: {e}")))?
                    .sample(&mut self.rng),
            });
        }
        Ok(Choice { nodes, delta_index })
    }

    /// Frame-boundary step: credits `reward` to the previous action (if
    /// any), trains when an episode completes and, when `learn` is set,
    /// remembers the new action for the next reward.
    pub fn act(&mut self, state: &ClusterState, reward: Option<f64>, mode: Mode, learn: bool) -> Result<OrchestrationAction> {
        if let (Some((input, choice)), Some(r)) = (self.pending.take(), reward) {
            self.episode.push(FrameRecord { input, choice, reward: r });
            if self.episode.len() == self.episode_target {
                self.train_episode()?;
            }
        }
        let input = GraphInput::of(state);
        let choice = self.choose(&input, mode)?;
        let action = choice.to_action(self.service_count);
        if learn {
            self.pending = Some((input, choice));
        }
        Ok(action)
    }

    /// Credits the final reward of a run without acting again.
    pub fn finish(&mut self, reward: f64) -> Result<()> {
        if let Some((input, choice)) = self.pending.take() {
            self.episode.push(FrameRecord { input, choice, reward });
            if self.episode.len() == self.episode_target {
                self.train_episode()?;
            }
        }
        Ok(())
    }

    /// Drops a partial episode and any pending action.
    pub fn reset_episode(&mut self) {
        self.episode.clear();
        self.pending = None;
    }

    pub fn push_record(&mut self, record: FrameRecord) {
        self.episode.push(record);
    }

    /// One Adam step on `-sum_t log pi(a_t | s_t) (R_t - mu_t)` over the
    /// completed episode, where `R_t` is the reward-to-go and `mu_t` its
    /// mean over previous episodes (the current return for the first one).
    pub fn train_episode(&mut self) -> Result<f64> {
        if self.episode.len() != self.episode_target {
            return Err(Error::contract(format!(
                "episode has {} of {} frames",
                self.episode.len(),
                self.episode_target
            )));
        }
        let episode = std::mem::take(&mut self.episode);
        let mut returns = vec![0.0; episode.len()];
        let mut acc = 0.0;
        for t in (0..episode.len()).rev() {
            acc += episode[t].reward;
            returns[t] = acc;
        }
        let mut grads = vec![0.0; self.nets.param_count()];
        let mut objective = 0.0;
        for (t, record) in episode.iter().enumerate() {
            let (sum, count) = self.baseline[t];
            let mu = if count == 0 { returns[t] } else { sum / count as f64 };
            let adv = returns[t] - mu;
            if adv == 0.0 {
                continue;
            }
            let (lp, g) = self.nets.log_prob_grad(&record.input, &record.choice, self.config.aggregation)?;
            objective += adv * lp;
            for (a, b) in grads.iter_mut().zip(g) {
                *a -= adv * b;
            }
        }
        for (t, &r) in returns.iter().enumerate() {
            self.baseline[t].0 += r;
            self.baseline[t].1 += 1;
        }
        let mut flat = self.nets.flat_params();
        self.adam.step(&mut flat, &grads)?;
        self.nets.set_flat_params(&flat)?;
        Ok(objective)
    }
}
