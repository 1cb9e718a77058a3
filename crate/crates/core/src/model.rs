//! The next-POI network: a semantic-aware mobility encoder over check-in
//! embeddings, attention over neighbors' mobility features, an auxiliary
//! coordinate-forecasting branch, a fused user-conditioned representation,
//! and two heads (POI classification and coordinate regression).
//!
//! Graphs are assembled per neighbor count `m` (0..=k_max) and cached; all
//! per-instance values (ids, coordinates, targets) enter as input bindings,
//! so one graph serves every instance with the same neighbor count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{History, TrajectoryWindow, WEEK_SLOTS};
use crate::error::{Error, Result};
use crate::graph::{Graph, LeafKind, NodeId};
use crate::rng::stream;
use crate::tensor::Tensor;
use crate::autodiff::{Evaluation, TensorMap};

/// Ablation variants: which context inputs are wired and which loss terms
/// carry weight. `AuxOnly` is the degenerate baseline that trains only the
/// coordinate branch and ranks POIs by distance to its prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    V0,
    V1,
    V2,
    V3,
    V4,
    V5,
    Full,
    AuxOnly,
}

impl Variant {
    pub const ALL: [Variant; 7] =
        [Variant::V0, Variant::V1, Variant::V2, Variant::V3, Variant::V4, Variant::V5, Variant::Full];

    /// (use_semantic, use_social, use_aux, use_mobility, theta)
    fn wiring(self) -> (bool, bool, bool, bool, (f64, f64, f64)) {
        match self {
            Variant::V0 => (false, false, false, true, (1.0, 0.0, 0.0)),
            Variant::V1 => (true, false, false, true, (1.0, 0.0, 0.0)),
            Variant::V2 => (true, false, true, true, (1.0, 0.0, 0.0)),
            Variant::V3 => (true, false, true, true, (1.0, 1.0, 0.0)),
            Variant::V4 => (true, false, true, true, (1.0, 0.0, 1.0)),
            Variant::V5 => (true, false, true, true, (1.0, 1.0, 1.0)),
            Variant::Full => (true, true, true, true, (1.0, 1.0, 1.0)),
            Variant::AuxOnly => (true, false, true, false, (0.0, 1.0, 0.0)),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::V0 => "V0",
            Variant::V1 => "V1",
            Variant::V2 => "V2",
            Variant::V3 => "V3",
            Variant::V4 => "V4",
            Variant::V5 => "V5",
            Variant::Full => "full",
            Variant::AuxOnly => "aux-only",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v0" => Ok(Variant::V0),
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "v3" => Ok(Variant::V3),
            "v4" => Ok(Variant::V4),
            "v5" => Ok(Variant::V5),
            "full" => Ok(Variant::Full),
            "aux-only" | "aux_only" | "auxonly" => Ok(Variant::AuxOnly),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected V0..V5, full, or aux-only)"
            ))),
        }
    }
}

/// Architecture and wiring configuration.
///
/// The embedding widths concatenate to the model width:
/// `d_model = d_poi + d_cat + d_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Observation length: historical check-ins per prediction instance.
    pub n: usize,
    pub d_poi: usize,
    pub d_cat: usize,
    pub d_time: usize,
    /// Encoder depth (both the mobility and the geographic encoder).
    pub layers: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub dropout: f64,
    pub d_user: usize,
    /// Maximum number of neighbor trajectories attended per instance.
    pub k_max: usize,
    /// How many of the window's coordinates feed the geographic branch:
    /// either `n` (default) or `n - 1`.
    pub aux_input_len: usize,
    pub use_semantic: bool,
    pub use_social: bool,
    pub use_aux: bool,
    /// The mobility/classification path. Disabled only by the
    /// auxiliary-only baseline, which keeps just the coordinate branch.
    pub use_mobility: bool,
    /// Loss weights (classification, coordinate, consistency).
    pub theta: (f64, f64, f64),
    pub n_pois: usize,
    pub n_cats: usize,
    pub n_users: usize,
}

impl ModelConfig {
    /// Reference configuration (d_model 128 = 80 + 24 + 24, two encoder
    /// layers, eight heads) sized for a given dataset.
    pub fn new(n_pois: usize, n_cats: usize, n_users: usize) -> Self {
        Self {
            n: 20,
            d_poi: 80,
            d_cat: 24,
            d_time: 24,
            layers: 2,
            heads: 8,
            d_ffn: 256,
            dropout: 0.1,
            d_user: 40,
            k_max: 8,
            aux_input_len: 20,
            use_semantic: true,
            use_social: true,
            use_aux: true,
            use_mobility: true,
            theta: (1.0, 1.0, 1.0),
            n_pois,
            n_cats,
            n_users,
        }
    }

    /// Desk-scale configuration for tests and small fixtures.
    pub fn desk(n_pois: usize, n_cats: usize, n_users: usize) -> Self {
        Self {
            n: 5,
            d_poi: 10,
            d_cat: 3,
            d_time: 3,
            layers: 1,
            heads: 2,
            d_ffn: 32,
            dropout: 0.1,
            d_user: 4,
            k_max: 1,
            aux_input_len: 5,
            ..Self::new(n_pois, n_cats, n_users)
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        let (sem, soc, aux, mob, theta) = v.wiring();
        self.use_semantic = sem;
        self.use_social = soc;
        self.use_aux = aux;
        self.use_mobility = mob;
        self.theta = theta;
        self
    }

    /// Sets the observation length, keeping `aux_input_len` at its default
    /// of the full window.
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self.aux_input_len = n;
        self
    }

    pub fn d_model(&self) -> usize {
        self.d_poi + self.d_cat + self.d_time
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let d = self.d_model();
        if self.n == 0 {
            return fail("observation length n must be >= 1".into());
        }
        if [self.d_poi, self.d_cat, self.d_time, self.layers, self.heads, self.d_ffn, self.d_user]
            .iter()
            .any(|&v| v == 0)
        {
            return fail("all width/depth fields must be >= 1".into());
        }
        if d % self.heads != 0 {
            return fail(format!("d_model {d} not divisible by heads {}", self.heads));
        }
        if d % 2 != 0 {
            return fail(format!("d_model {d} must be even for sinusoidal positions"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.n_pois == 0 || self.n_cats == 0 || self.n_users == 0 {
            return fail("dataset sizes must be >= 1".into());
        }
        if self.aux_input_len != self.n && self.aux_input_len + 1 != self.n {
            return fail(format!(
                "aux_input_len {} must be n ({}) or n-1",
                self.aux_input_len, self.n
            ));
        }
        if self.aux_input_len == 0 {
            return fail("aux_input_len must be >= 1".into());
        }
        let (t1, t2, t3) = self.theta;
        if t1 < 0.0 || t2 < 0.0 || t3 < 0.0 {
            return fail("loss weights must be non-negative".into());
        }
        if t1 + t2 + t3 == 0.0 {
            return fail("at least one loss weight must be positive".into());
        }
        if (t2 > 0.0 || t3 > 0.0) && !self.use_aux {
            return fail("coordinate losses require the geographic branch (use_aux)".into());
        }
        if (t1 > 0.0 || t3 > 0.0) && !self.use_mobility {
            return fail("classification losses require the mobility path (use_mobility)".into());
        }
        if !self.use_mobility && !self.use_aux {
            return fail("at least one of use_mobility/use_aux must be set".into());
        }
        if self.use_social && !self.use_mobility {
            return fail("social attention requires the mobility path".into());
        }
        Ok(())
    }
}

/// Sinusoidal positional encodings, one row per position:
/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(...)`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    assert!(d % 2 == 0, "positional encoding needs an even width");
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d / 2 {
            let denom = 10000f64.powf(2.0 * i as f64 / d as f64);
            let angle = pos as f64 / denom;
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(vec![n, d], data).expect("sized by construction")
}

/// `x · w + b` with the bias broadcast over rows.
fn affine(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let product = g.matmul(x, w)?;
    g.add(product, b)
}

/// Multi-head self-attention block. Returns the projected output
/// `[rows, d]` and, when `row0` is supplied, the head-averaged attention
/// row for position 0 (`[1, slots]`).
///
/// `masked` marks padded key slots; they receive exactly zero attention.
fn mha(
    g: &mut Graph,
    prefix: &str,
    x: NodeId,
    d: usize,
    heads: usize,
    masked: Option<Vec<bool>>,
    row0: Option<NodeId>,
) -> Result<(NodeId, Option<NodeId>)> {
    let dh = d / heads;
    let wq = g.shared_param(&format!("{prefix}/wq"), &[d, d])?;
    let bq = g.shared_param(&format!("{prefix}/bq"), &[d])?;
    // No key bias: a constant added to every key shifts each score row
    // uniformly, which the softmax cancels — the parameter would be an
    // exactly-null direction of the loss.
    let wk = g.shared_param(&format!("{prefix}/wk"), &[d, d])?;
    let wv = g.shared_param(&format!("{prefix}/wv"), &[d, d])?;
    let bv = g.shared_param(&format!("{prefix}/bv"), &[d])?;
    let wo = g.shared_param(&format!("{prefix}/wo"), &[d, d])?;
    let bo = g.shared_param(&format!("{prefix}/bo"), &[d])?;

    let q = affine(g, x, wq, bq)?;
    let k = g.matmul(x, wk)?;
    let v = affine(g, x, wv, bv)?;

    let mut head_outs = Vec::with_capacity(heads);
    let mut alpha_sum: Option<NodeId> = None;
    for h in 0..heads {
        let qi = g.slice_last(q, h * dh, dh)?;
        let ki = g.slice_last(k, h * dh, dh)?;
        let vi = g.slice_last(v, h * dh, dh)?;
        let kt = g.transpose(ki)?;
        let scores = g.matmul(qi, kt)?;
        let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let att = match &masked {
            Some(m) => g.masked_softmax(scaled, m.clone())?,
            None => g.softmax(scaled)?,
        };
        if let Some(idx0) = row0 {
            let row = g.gather(att, idx0)?;
            alpha_sum = Some(match alpha_sum {
                Some(acc) => g.add(acc, row)?,
                None => row,
            });
        }
        head_outs.push(g.matmul(att, vi)?);
    }
    let merged = g.concat(&head_outs)?;
    let out = affine(g, merged, wo, bo)?;
    let alpha = match alpha_sum {
        Some(acc) => Some(g.scale(acc, 1.0 / heads as f64)?),
        None => None,
    };
    Ok((out, alpha))
}

/// Pre-norm transformer encoder: per layer, x += dropout(MHA(LN(x))) then
/// x += dropout(FFN(LN(x))); a final layer norm closes the stack.
fn encoder(g: &mut Graph, cfg: &ModelConfig, prefix: &str, mut x: NodeId) -> Result<NodeId> {
    let d = cfg.d_model();
    for l in 0..cfg.layers {
        let p = format!("{prefix}/l{l}");
        let gain1 = g.shared_param(&format!("{p}/ln1/gain"), &[d])?;
        let bias1 = g.shared_param(&format!("{p}/ln1/bias"), &[d])?;
        let normed = g.layer_norm(x, gain1, bias1, 1e-5)?;
        let (att, _) = mha(g, &format!("{p}/attn"), normed, d, cfg.heads, None, None)?;
        let att = maybe_dropout(g, att, cfg.dropout)?;
        x = g.add(x, att)?;

        let gain2 = g.shared_param(&format!("{p}/ln2/gain"), &[d])?;
        let bias2 = g.shared_param(&format!("{p}/ln2/bias"), &[d])?;
        let normed = g.layer_norm(x, gain2, bias2, 1e-5)?;
        let w1 = g.shared_param(&format!("{p}/ffn/w1"), &[d, cfg.d_ffn])?;
        let b1 = g.shared_param(&format!("{p}/ffn/b1"), &[cfg.d_ffn])?;
        let w2 = g.shared_param(&format!("{p}/ffn/w2"), &[cfg.d_ffn, d])?;
        let b2 = g.shared_param(&format!("{p}/ffn/b2"), &[d])?;
        let pre = affine(g, normed, w1, b1)?;
        let hidden = g.relu(pre)?;
        let ff = affine(g, hidden, w2, b2)?;
        let ff = maybe_dropout(g, ff, cfg.dropout)?;
        x = g.add(x, ff)?;
    }
    let gain = g.shared_param(&format!("{prefix}/ln/gain"), &[d])?;
    let bias = g.shared_param(&format!("{prefix}/ln/bias"), &[d])?;
    g.layer_norm(x, gain, bias, 1e-5)
}

fn maybe_dropout(g: &mut Graph, x: NodeId, rate: f64) -> Result<NodeId> {
    if rate > 0.0 {
        g.dropout(x, rate)
    } else {
        Ok(x)
    }
}

/// One attention block over `[self, neighbor_1, ..]` feature rows.
/// Returns the aggregated context (the output at position 0) and the
/// head-averaged attention row for position 0. Slots at index >= `active`
/// are padding and receive exactly zero attention.
fn social_block(
    g: &mut Graph,
    prefix: &str,
    stacked: NodeId,
    slots: usize,
    active: usize,
    d: usize,
    heads: usize,
    idx0: NodeId,
) -> Result<(NodeId, NodeId)> {
    let masked: Vec<bool> = (0..slots).map(|i| i >= active).collect();
    let (out, alpha) = mha(g, prefix, stacked, d, heads, Some(masked), Some(idx0))?;
    let h0 = g.gather(out, idx0)?;
    Ok((h0, alpha.expect("row0 requested")))
}

/// Embeds one trajectory's ids and encodes it; returns the feature at the
/// final position (`[1, d]`). `tag` distinguishes the self window ("")
/// from neighbor windows ("nb0/", ...); encoder and table parameters are
/// shared across all of them.
struct TrajectoryInputs {
    poi: NodeId,
    cat: NodeId,
    slot: NodeId,
}

fn declare_trajectory_inputs(g: &mut Graph, tag: &str, n: usize) -> Result<TrajectoryInputs> {
    Ok(TrajectoryInputs {
        poi: g.input(&format!("{tag}poi_ids"), &[n])?,
        cat: g.input(&format!("{tag}cat_ids"), &[n])?,
        slot: g.input(&format!("{tag}slot_ids"), &[n])?,
    })
}

struct Builder<'c> {
    cfg: &'c ModelConfig,
    g: Graph,
    phi_poi: NodeId,
    phi_cat: NodeId,
    phi_time: NodeId,
    pe: NodeId,
    idx0: NodeId,
    idx_last: NodeId,
}

impl<'c> Builder<'c> {
    fn new(cfg: &'c ModelConfig) -> Result<Self> {
        let mut g = Graph::new();
        let phi_poi = g.param("embed/poi", &[cfg.n_pois, cfg.d_poi])?;
        let phi_cat = g.param("embed/cat", &[cfg.n_cats, cfg.d_cat])?;
        let phi_time = g.param("embed/time", &[WEEK_SLOTS, cfg.d_time])?;
        let pe = g.input("pe", &[cfg.n, cfg.d_model()])?;
        let idx0 = g.input("idx0", &[1])?;
        let idx_last = g.input("idx_last", &[1])?;
        Ok(Self { cfg, g, phi_poi, phi_cat, phi_time, pe, idx0, idx_last })
    }

    /// Concatenated embedding of a trajectory: POI block, category block
    /// (zeroed when semantic input is ablated), time-slot block.
    fn embed(&mut self, inputs: &TrajectoryInputs) -> Result<NodeId> {
        let g = &mut self.g;
        let e_p = g.gather(self.phi_poi, inputs.poi)?;
        let e_c = g.gather(self.phi_cat, inputs.cat)?;
        let e_c = if self.cfg.use_semantic { e_c } else { g.scale(e_c, 0.0)? };
        let e_t = g.gather(self.phi_time, inputs.slot)?;
        g.concat(&[e_p, e_c, e_t])
    }

    /// Embedded + position-encoded trajectory through the shared mobility
    /// encoder; feature at the final position.
    fn mobility_feature(&mut self, inputs: &TrajectoryInputs) -> Result<(NodeId, NodeId)> {
        let embedded = self.embed(inputs)?;
        let x = self.g.add(embedded, self.pe)?;
        let enc = encoder(&mut self.g, self.cfg, "enc", x)?;
        let h = self.g.gather(enc, self.idx_last)?;
        Ok((h, embedded))
    }
}

/// Assembles the full computation for one instance with exactly `m`
/// neighbor trajectories. Outputs (when the wiring includes them):
/// `probs`, `pred_coord`, `inferred_coord`, `l1`, `l2`, `l3`, `loss`,
/// `h`, `social_ctx`, `alpha`, `geo_ctx`, `fused`, `embedded`.
fn build_graph(cfg: &ModelConfig, m: usize) -> Result<Graph> {
    cfg.validate()?;
    let d = cfg.d_model();
    let mut b = Builder::new(cfg)?;

    // Mobility path: own feature plus neighbor features through the shared
    // encoder, optionally aggregated by social attention.
    let mut ctx = None;
    if cfg.use_mobility {
        let own = declare_trajectory_inputs(&mut b.g, "", cfg.n)?;
        let (h, embedded) = b.mobility_feature(&own)?;
        b.g.mark_output("embedded", embedded)?;
        b.g.mark_output("h", h)?;
        ctx = Some(h);
        if cfg.use_social && m > 0 {
            let mut rows = vec![h];
            for j in 0..m {
                let nb = declare_trajectory_inputs(&mut b.g, &format!("nb{j}/"), cfg.n)?;
                let (hj, _) = b.mobility_feature(&nb)?;
                rows.push(hj);
            }
            let joined = b.g.concat(&rows)?;
            let stacked = b.g.reshape(joined, &[m + 1, d])?;
            let (agg, alpha) =
                social_block(&mut b.g, "soc", stacked, m + 1, m + 1, d, cfg.heads, b.idx0)?;
            b.g.mark_output("alpha", alpha)?;
            ctx = Some(agg);
        }
        b.g.mark_output("social_ctx", ctx.unwrap())?;
    }

    // Geographic branch: coordinate sequence through its own encoder.
    let mut geo = None;
    if cfg.use_aux {
        let coords = b.g.input("aux_coords", &[cfg.aux_input_len, 2])?;
        let w_in = b.g.param("geo/in/w", &[2, d])?;
        let b_in = b.g.param("geo/in/b", &[d])?;
        let projected = affine(&mut b.g, coords, w_in, b_in)?;
        let pe_aux = b.g.input("pe_aux", &[cfg.aux_input_len, d])?;
        let x = b.g.add(projected, pe_aux)?;
        let enc = encoder(&mut b.g, cfg, "geo", x)?;
        let idx_last_aux = b.g.input("idx_last_aux", &[1])?;
        let g_vec = b.g.gather(enc, idx_last_aux)?;
        b.g.mark_output("geo_ctx", g_vec)?;
        geo = Some(g_vec);
    }

    // Fusion: context ⊕ geographic ⊕ user embedding → model width.
    let g = &mut b.g;
    let ctx_block = match ctx {
        Some(c) => c,
        // Auxiliary-only baseline: the mobility slot is a zero block.
        None => g.scale(geo.expect("validated: some path exists"), 0.0)?,
    };
    let geo_block = match geo {
        Some(v) => v,
        None => g.scale(ctx_block, 0.0)?,
    };
    let phi_user = g.param("embed/user", &[cfg.n_users, cfg.d_user])?;
    let user_id = g.input("user_id", &[1])?;
    let e_u = g.gather(phi_user, user_id)?;
    let fused_in = g.concat(&[ctx_block, geo_block, e_u])?;
    let w_fuse = g.param("fuse/w", &[2 * d + cfg.d_user, d])?;
    let b_fuse = g.param("fuse/b", &[d])?;
    let fused_pre = affine(g, fused_in, w_fuse, b_fuse)?;
    let fused = g.relu(fused_pre)?;
    g.mark_output("fused", fused)?;

    let (t1, t2, t3) = cfg.theta;
    let mut loss_terms: Vec<NodeId> = Vec::new();

    // Classification head and its loss.
    let mut probs_flat = None;
    if cfg.use_mobility {
        let w1 = g.param("poihead/w1", &[d, d])?;
        let b1 = g.param("poihead/b1", &[d])?;
        let w2 = g.param("poihead/w2", &[d, cfg.n_pois])?;
        let b2 = g.param("poihead/b2", &[cfg.n_pois])?;
        let pre = affine(g, fused, w1, b1)?;
        let hidden = g.relu(pre)?;
        let logits = affine(g, hidden, w2, b2)?;
        let probs = g.softmax(logits)?;
        g.mark_output("probs", probs)?;
        probs_flat = Some(g.reshape(probs, &[cfg.n_pois])?);

        let logp = g.log_softmax(logits)?;
        let target = g.input("target_poi", &[1])?;
        let logp_col = g.transpose(logp)?;
        let picked = g.gather(logp_col, target)?;
        let picked = g.reshape(picked, &[1])?;
        let l1 = g.scale(picked, -1.0)?;
        g.mark_output("l1", l1)?;
        if t1 > 0.0 {
            loss_terms.push(g.scale(l1, t1)?);
        }
    }

    // Coordinate head, its loss, and the inferred-coordinate consistency.
    if cfg.use_aux {
        let w1 = g.param("coordhead/w1", &[d, d])?;
        let b1 = g.param("coordhead/b1", &[d])?;
        let w2 = g.param("coordhead/w2", &[d, 2])?;
        let b2 = g.param("coordhead/b2", &[2])?;
        let pre = affine(g, fused, w1, b1)?;
        let hidden = g.relu(pre)?;
        let pred = affine(g, hidden, w2, b2)?;
        g.mark_output("pred_coord", pred)?;

        let target_coord = g.input("target_coord", &[1, 2])?;
        let l2 = g.squared_error(pred, target_coord)?;
        g.mark_output("l2", l2)?;
        if t2 > 0.0 {
            loss_terms.push(g.scale(l2, t2)?);
        }

        if let Some(weights) = probs_flat {
            // The inferred coordinate is a constant w.r.t. differentiation:
            // gradient reaches only the coordinate prediction.
            let table = g.input("coord_table", &[cfg.n_pois, 2])?;
            let inferred = g.argmax_gather(weights, table)?;
            let inferred = g.reshape(inferred, &[1, 2])?;
            g.mark_output("inferred_coord", inferred)?;
            let l3 = g.squared_error(inferred, pred)?;
            g.mark_output("l3", l3)?;
            if t3 > 0.0 {
                loss_terms.push(g.scale(l3, t3)?);
            }
        }
    }

    let mut loss = loss_terms[0];
    for &term in &loss_terms[1..] {
        loss = g.add(loss, term)?;
    }
    g.mark_output("loss", loss)?;
    Ok(b.g)
}

/// Per-instance forward results, extracted from an evaluation by output
/// name. Fields are `None` when the variant does not produce them.
#[derive(Debug, Clone)]
pub struct InstanceOutputs {
    pub loss: f64,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub l3: Option<f64>,
    pub probs: Option<Vec<f64>>,
    pub pred_coord: Option<(f64, f64)>,
    pub inferred_coord: Option<(f64, f64)>,
    pub alpha: Option<Vec<f64>>,
}

/// The network with its per-neighbor-count graph cache.
#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    graphs: BTreeMap<usize, Graph>,
}

impl Model {
    /// Builds the graphs for every neighbor count the configuration can
    /// produce (0..=k_max with social attention, just 0 without).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let top = if config.use_social { config.k_max } else { 0 };
        let mut graphs = BTreeMap::new();
        for m in 0..=top {
            graphs.insert(m, build_graph(&config, m)?);
        }
        Ok(Self { config, graphs })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Neighbor count actually attended given how many are available.
    pub fn effective_neighbors(&self, available: usize) -> usize {
        if self.config.use_social {
            available.min(self.config.k_max)
        } else {
            0
        }
    }

    /// The computation graph for exactly `m` attended neighbors.
    pub fn graph(&self, m: usize) -> &Graph {
        &self.graphs[&self.effective_neighbors(m)]
    }

    /// Fresh parameters for every leaf the fullest graph declares, drawn
    /// from per-parameter named streams: weight matrices uniform at Xavier
    /// scale, embedding tables uniform in ±0.1, norm gains 1, biases 0.
    pub fn init_params(&self, seed: u64) -> Result<TensorMap> {
        let graph = self.graph(self.config.k_max);
        let specs: Vec<(String, Vec<usize>)> = graph
            .leaves()
            .filter(|(_, _, kind)| *kind == LeafKind::Param)
            .map(|(name, id, _)| (name.to_string(), graph.node(id).shape.clone()))
            .collect();
        let mut params = TensorMap::new();
        for (name, shape) in specs {
            params.insert(name.clone(), init_tensor(&name, &shape, seed));
        }
        Ok(params)
    }

    /// Bindings that are constant across instances: positional encodings,
    /// index selectors, and the POI coordinate table.
    pub fn shared_bindings(&self, coord_table: &Tensor) -> Result<TensorMap> {
        let cfg = &self.config;
        if coord_table.shape() != [cfg.n_pois, 2] {
            return Err(Error::Config(format!(
                "coordinate table shape {:?} does not match {} POIs",
                coord_table.shape(),
                cfg.n_pois
            )));
        }
        let d = cfg.d_model();
        let mut map = TensorMap::new();
        map.insert("pe".into(), positional_encoding(cfg.n, d));
        map.insert("pe_aux".into(), positional_encoding(cfg.aux_input_len, d));
        map.insert("idx0".into(), Tensor::vector(&[0.0]));
        map.insert("idx_last".into(), Tensor::vector(&[(cfg.n - 1) as f64]));
        map.insert(
            "idx_last_aux".into(),
            Tensor::vector(&[(cfg.aux_input_len - 1) as f64]),
        );
        map.insert("coord_table".into(), coord_table.clone());
        Ok(map)
    }

    /// Inserts the per-instance bindings (overwriting any previous
    /// instance's) and returns the neighbor count whose graph applies.
    pub fn bind_window(
        &self,
        map: &mut TensorMap,
        window: &TrajectoryWindow,
        neighbors: &[History],
    ) -> Result<usize> {
        let cfg = &self.config;
        let m = self.effective_neighbors(neighbors.len());
        bind_history(map, "", &window.history, cfg.n)?;
        for (j, nb) in neighbors.iter().take(m).enumerate() {
            bind_history(map, &format!("nb{j}/"), nb, cfg.n)?;
        }
        map.insert("user_id".into(), Tensor::vector(&[f64::from(window.user)]));
        let coords = &window.history.coords;
        let aux: Vec<f64> = coords[..cfg.aux_input_len]
            .iter()
            .flat_map(|&(x, y)| [x, y])
            .collect();
        map.insert("aux_coords".into(), Tensor::new(vec![cfg.aux_input_len, 2], aux)?);
        map.insert("target_poi".into(), Tensor::vector(&[f64::from(window.target_poi)]));
        map.insert(
            "target_coord".into(),
            Tensor::new(vec![1, 2], vec![window.target_coord.0, window.target_coord.1])?,
        );
        Ok(m)
    }

    /// Reads every output the graph produced into an [`InstanceOutputs`].
    pub fn outputs(&self, graph: &Graph, eval: &Evaluation) -> Result<InstanceOutputs> {
        let scalar = |name: &str| -> Result<Option<f64>> {
            match graph.output_id(name) {
                Ok(id) => Ok(Some(eval.value(id).item())),
                Err(_) => Ok(None),
            }
        };
        let pair = |name: &str| -> Option<(f64, f64)> {
            graph.output_id(name).ok().map(|id| {
                let d = eval.value(id).data();
                (d[0], d[1])
            })
        };
        Ok(InstanceOutputs {
            loss: eval.output(graph, "loss")?.item(),
            l1: scalar("l1")?,
            l2: scalar("l2")?,
            l3: scalar("l3")?,
            probs: graph
                .output_id("probs")
                .ok()
                .map(|id| eval.value(id).data().to_vec()),
            pred_coord: pair("pred_coord"),
            inferred_coord: pair("inferred_coord"),
            alpha: graph
                .output_id("alpha")
                .ok()
                .map(|id| eval.value(id).data().to_vec()),
        })
    }
}

fn bind_history(map: &mut TensorMap, tag: &str, h: &History, n: usize) -> Result<()> {
    if h.len() != n {
        return Err(Error::Config(format!(
            "history length {} does not match observation length {n}",
            h.len()
        )));
    }
    let to_f64 = |v: &[u32]| -> Vec<f64> { v.iter().map(|&x| f64::from(x)).collect() };
    map.insert(format!("{tag}poi_ids"), Tensor::vector(&to_f64(&h.poi_ids)));
    map.insert(format!("{tag}cat_ids"), Tensor::vector(&to_f64(&h.category_ids)));
    map.insert(
        format!("{tag}slot_ids"),
        Tensor::vector(&h.time_slots.iter().map(|&s| f64::from(s)).collect::<Vec<_>>()),
    );
    Ok(())
}

fn init_tensor(name: &str, shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed, &format!("init/{name}"), &[]);
    let field = name.rsplit('/').next().unwrap_or(name);
    let mut t = Tensor::zeros(shape);
    if field == "gain" {
        t.data_mut().fill(1.0);
    } else if field.starts_with('b') {
        // biases stay zero
    } else if name.starts_with("embed/") {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    } else if shape.len() == 2 {
        let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
        for v in t.data_mut() {
            *v = rng.gen_range(-limit..limit);
        }
    }
    t
}
