use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gat::{dropout_mask, gat_layer_tape, AttentionMode, GatLayerParams, GatLayerVars, SnapshotInput};
use super::gru::{temporal_tape, GruLayerVars, TemporalParams};
use crate::error::{domain_err, shape_err, Result, ScafdsError};
use crate::numkernel::{DiffTensor, Tape, Var};
use crate::optim::AdamWConfig;

/// How the configured number of spatial diffusion steps maps to layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMode {
    /// An input layer followed by one layer reused for every further step.
    #[default]
    Shared,
    /// A separate layer per step.
    Stacked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StgatConfig {
    pub in_dim: usize,
    pub edge_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub diffusion_steps: usize,
    pub diffusion_mode: DiffusionMode,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    /// When false the last spatial embedding is used directly.
    pub temporal: bool,
    pub attention: AttentionMode,
    /// Add a projection of `e_vu` to each message.
    pub edge_messages: bool,
    /// Give every head its own projection of `e_vu` in the score.
    pub edge_projection: bool,
    /// Weight of the co-occurrence pair terms against the focal loss.
    pub pair_weight: f64,
    pub margin: f64,
    pub tau_fco: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for StgatConfig {
    fn default() -> Self {
        Self {
            in_dim: 6,
            edge_dim: 3,
            heads: 8,
            head_dim: 32,
            diffusion_steps: 4,
            diffusion_mode: DiffusionMode::Shared,
            leaky_slope: 0.2,
            dropout: 0.3,
            gru_hidden: 128,
            gru_layers: 2,
            temporal: true,
            attention: AttentionMode::EdgeAware,
            edge_messages: true,
            edge_projection: false,
            pair_weight: 1.0,
            margin: 0.5,
            tau_fco: 0.05,
            focal_gamma: 2.0,
            focal_alpha: 0.75,
            epochs: 300,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl StgatConfig {
    /// Reduced sizes that train a 1,000-node network in seconds on one core.
    pub fn desk() -> Self {
        Self {
            heads: 4,
            head_dim: 8,
            diffusion_steps: 2,
            dropout: 0.0,
            gru_hidden: 16,
            gru_layers: 1,
            epochs: 150,
            pair_weight: 0.1,
            optimizer: AdamWConfig {
                lr: 1e-2,
                ..AdamWConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ScafdsError::Config(m.to_string()));
        if self.heads == 0 || self.head_dim == 0 || self.diffusion_steps == 0 {
            return bad("heads, head_dim and diffusion_steps must be positive");
        }
        if self.temporal && (self.gru_hidden == 0 || self.gru_layers == 0) {
            return bad("temporal model needs a positive GRU size and layer count");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.margin <= 0.0 {
            return bad("margin must be positive");
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || self.focal_gamma < 0.0 {
            return bad("focal_alpha must lie in [0, 1] and focal_gamma be nonnegative");
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        if self.temporal {
            self.gru_hidden
        } else {
            self.heads * self.head_dim
        }
    }

    fn n_layers(&self) -> usize {
        match self.diffusion_mode {
            DiffusionMode::Shared => self.diffusion_steps.min(2),
            DiffusionMode::Stacked => self.diffusion_steps,
        }
    }

    fn layer_for_step(&self, step: usize) -> usize {
        match self.diffusion_mode {
            DiffusionMode::Shared => step.min(1),
            DiffusionMode::Stacked => step,
        }
    }

    fn uses_edge_messages(&self) -> bool {
        self.edge_messages && self.attention == AttentionMode::EdgeAware
    }
}

/// Spatial-temporal graph attention model with a node readout and the
/// bilinear form used by the co-occurrence pair terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StgatModel {
    pub config: StgatConfig,
    pub layers: Vec<GatLayerParams>,
    pub temporal: Option<TemporalParams>,
    pub head_w: DiffTensor,
    pub head_b: DiffTensor,
    pub m: DiffTensor,
}

/// Tape handles for every parameter of a [`StgatModel`].
#[derive(Clone, Debug)]
pub struct StgatVars {
    pub layers: Vec<GatLayerVars>,
    pub gru: Vec<GruLayerVars>,
    pub head_w: Var,
    pub head_b: Var,
    pub m: Var,
}

impl StgatVars {
    /// Handles in the order of [`StgatModel::tensors`].
    pub fn list(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.layers.iter().flat_map(|l| l.list()).collect();
        v.extend(self.gru.iter().flat_map(|g| [g.w, g.u, g.b]));
        v.extend([self.head_w, self.head_b, self.m]);
        v
    }
}

/// Values recorded by one forward pass.
pub struct StgatForward {
    /// Contagion embeddings, `n × G`.
    pub c: Var,
    /// Readout probabilities, `n × 1`.
    pub p: Var,
    /// Attention of the last propagation step on the last snapshot, `E × H`.
    pub alpha: Var,
}

impl StgatModel {
    pub fn new(config: StgatConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let hd = config.heads * config.head_dim;
        let edge_msgs = config.uses_edge_messages();
        let layers = (0..config.n_layers())
            .map(|l| {
                GatLayerParams::init(
                    if l == 0 { config.in_dim } else { hd },
                    config.heads,
                    config.head_dim,
                    config.edge_dim,
                    edge_msgs,
                    config.edge_projection,
                    config.leaky_slope,
                    config.dropout,
                    &mut rng,
                )
            })
            .collect();
        let temporal = config
            .temporal
            .then(|| TemporalParams::init(hd, config.gru_hidden, config.gru_layers, &mut rng));
        let g = config.embedding_dim();
        let head_w = DiffTensor::glorot(g, 1, &mut rng);
        let head_b = DiffTensor::zeros_param(vec![1]);
        let m = DiffTensor::randn(vec![g, g], 0.1 / (g as f64).sqrt(), &mut rng);
        Ok(Self {
            config,
            layers,
            temporal,
            head_w,
            head_b,
            m,
        })
    }

    pub fn tensors(&self) -> Vec<&DiffTensor> {
        let mut v: Vec<&DiffTensor> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        if let Some(t) = &self.temporal {
            v.extend(t.tensors());
        }
        v.extend([&self.head_w, &self.head_b, &self.m]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DiffTensor> {
        let mut v: Vec<&mut DiffTensor> = self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        if let Some(t) = &mut self.temporal {
            v.extend(t.tensors_mut());
        }
        v.extend([&mut self.head_w, &mut self.head_b, &mut self.m]);
        v
    }

    pub fn bind(&self, tape: &mut Tape) -> StgatVars {
        StgatVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            gru: self.temporal.as_ref().map(|t| t.bind(tape)).unwrap_or_default(),
            head_w: tape.leaf(&self.head_w),
            head_b: tape.leaf(&self.head_b),
            m: tape.leaf(&self.m),
        }
    }

    /// Rebuilds typed handles from a flat list in [`StgatModel::tensors`]
    /// order, for callers that bind the parameters themselves.
    pub fn vars_from_list(&self, list: &[Var]) -> Result<StgatVars> {
        let want = self.tensors().len();
        if list.len() != want {
            return Err(shape_err!("{} handles for {want} parameter tensors", list.len()));
        }
        let mut it = list.iter().copied();
        let mut next = || it.next().expect("length checked");
        let layers = self
            .layers
            .iter()
            .map(|l| GatLayerVars {
                w: next(),
                a: next(),
                we: l.we.as_ref().map(|_| next()),
                pe: l.pe.as_ref().map(|_| next()),
            })
            .collect();
        let gru = self
            .temporal
            .as_ref()
            .map(|t| {
                t.layers
                    .iter()
                    .map(|_| GruLayerVars {
                        w: next(),
                        u: next(),
                        b: next(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(StgatVars {
            layers,
            gru,
            head_w: next(),
            head_b: next(),
            m: next(),
        })
    }

    fn check_inputs(&self, snaps: &[SnapshotInput]) -> Result<usize> {
        let first = snaps.first().ok_or_else(|| domain_err!("no snapshots"))?;
        let n = first.n;
        for s in snaps {
            if s.n != n {
                return Err(domain_err!("snapshots disagree on the node set ({} vs {n})", s.n));
            }
            if s.in_dim != self.config.in_dim {
                return Err(shape_err!("node features have {} columns, model expects {}", s.in_dim, self.config.in_dim));
            }
            if s.edge_dim != self.config.edge_dim {
                return Err(shape_err!("edge features have {} columns, model expects {}", s.edge_dim, self.config.edge_dim));
            }
        }
        Ok(n)
    }

    /// Spatial embedding of one snapshot after every diffusion step.
    pub fn spatial_tape(
        &self,
        tape: &mut Tape,
        vars: &StgatVars,
        snap: &SnapshotInput,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var)> {
        let cfg = &self.config;
        let mut h = tape.constant(vec![snap.n, snap.in_dim], snap.x.clone())?;
        let e = tape.constant(vec![snap.n_edges(), snap.edge_dim], snap.e.clone())?;
        let mut alpha = None;
        for step in 0..cfg.diffusion_steps {
            let li = cfg.layer_for_step(step);
            let layer = &self.layers[li];
            let width = tape.shape(h).last().copied().unwrap_or(0);
            let mask = match rng.as_deref_mut() {
                Some(r) => dropout_mask(snap.n, width, cfg.dropout, r),
                None => None,
            };
            let (next, a) = gat_layer_tape(
                tape,
                layer,
                &vars.layers[li],
                snap,
                h,
                e,
                cfg.attention,
                cfg.uses_edge_messages(),
                mask,
            )?;
            h = next;
            alpha = Some(a);
        }
        Ok((h, alpha.expect("at least one step")))
    }

    /// Full forward pass. Dropout is active only when `rng` is supplied.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &StgatVars,
        snaps: &[SnapshotInput],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StgatForward> {
        let n = self.check_inputs(snaps)?;
        let mut zs = Vec::with_capacity(snaps.len());
        let mut alpha = None;
        for s in snaps {
            let (z, a) = self.spatial_tape(tape, vars, s, rng.as_deref_mut())?;
            zs.push(z);
            alpha = Some(a);
        }
        let c = match &self.temporal {
            Some(t) => temporal_tape(tape, t, &vars.gru, &zs, n)?,
            None => *zs.last().expect("nonempty"),
        };
        let logit = tape.matmul(c, vars.head_w)?;
        let logit = tape.add_row(logit, vars.head_b)?;
        let p = tape.sigmoid(logit)?;
        Ok(StgatForward {
            c,
            p,
            alpha: alpha.expect("nonempty"),
        })
    }

    /// Embeddings, probabilities and last-step attention without dropout.
    pub fn infer(&self, snaps: &[SnapshotInput]) -> Result<StgatOutput> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let f = self.forward_tape(&mut tape, &vars, snaps, None)?;
        Ok(StgatOutput {
            n: snaps[0].n,
            dim: self.config.embedding_dim(),
            embeddings: tape.value(f.c).to_vec(),
            probabilities: tape.value(f.p).to_vec(),
            attention: tape.value(f.alpha).to_vec(),
            heads: self.config.heads,
        })
    }
}

/// Inference results of a [`StgatModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StgatOutput {
    pub n: usize,
    pub dim: usize,
    /// `n × dim` contagion embeddings.
    pub embeddings: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// `E × heads` attention of the final step on the last snapshot.
    pub attention: Vec<f64>,
    pub heads: usize,
}

impl StgatOutput {
    pub fn embedding(&self, v: usize) -> &[f64] {
        &self.embeddings[v * self.dim..(v + 1) * self.dim]
    }
}

/// Row indices as a shareable index list.
pub fn rows(idx: &[usize]) -> Arc<[usize]> {
    Arc::from(idx.to_vec())
}
