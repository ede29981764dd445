//! Global structure module.
//!
//! Category channels become nodes of a low-level graph, are pooled into a
//! few high-level nodes through a learned soft assignment, reasoned over, and
//! decoupled back. The reasoned node features become per-category channel
//! weights.
//!
//! ```text
//! X_low   = [φ(F_i) · Ω_i]_i                      [c × d]
//! Z_low   = relu(A_low · X_low · W_low)           [c × d]
//! C_agg   = rowsoftmax(A_low · X_low · V_low)     [c × n_high]
//! X_high  = C_aggᵀ · X_low                        [n_high × d]
//! A_high  = C_aggᵀ · A_low · C_agg                [n_high × n_high]
//! Z_high  = relu(A_high · X_high · W_high)        [n_high × d]
//! C_dec   = rowsoftmax(A_high · X_high · V_high)  [n_high × c]
//! Ẑ_low   = C_decᵀ · Z_high,  Â_low = C_decᵀ · A_high · C_dec
//! Z_g     = Ẑ_low + Z_low
//! θ_g     = softmax(gap(Z_g));   output = θ_g ⊙ F
//! ```

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Error, Result};
use crate::graph::{graph_convolve, GraphLevel, GraphModel};
use crate::params::{fan_in_uniform, join, Binder, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GsmConfig {
    /// Number of categories, which is also the low-level node count.
    pub categories: usize,
    /// Spatial size of the category feature map.
    pub height: usize,
    pub width: usize,
    /// Node feature dimension.
    pub node_dim: usize,
    /// Number of high-level nodes; must be below `categories`.
    pub high_nodes: usize,
    /// Multiply θ_g by the category count so weights average one.
    pub rescale_by_c: bool,
}

impl GsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories == 0 || self.node_dim == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("GSM sizes must be positive".into()));
        }
        if self.high_nodes == 0 || self.high_nodes >= self.categories {
            return Err(Error::Config(format!(
                "GSM needs 0 < n_high < n_low, got n_high={} with {} categories",
                self.high_nodes, self.categories
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsmParams<T> {
    pub config: GsmConfig,
    /// One `[(h·w)×d]` projection per category.
    pub omega: Vec<Tensor<T>>,
    /// Trainable low-level adjacency, kept symmetric.
    pub a_low: Tensor<T>,
    pub w_low: Tensor<T>,
    pub w_high: Tensor<T>,
    /// `[d×n_high]`
    pub v_low: Tensor<T>,
    /// `[d×n_low]`
    pub v_high: Tensor<T>,
}

impl<T: Scalar> GsmParams<T> {
    pub fn init(config: GsmConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let GsmConfig { categories: c, height, width, node_dim: d, high_nodes, .. } = config;
        let hw = height * width;
        let omega = (0..c).map(|_| fan_in_uniform([hw, d], hw, rng)).collect();
        let off = T::of(0.1 / c as f64);
        let a_low = Tensor::from_fn([c, c], |i| if i / c == i % c { T::one() + off } else { off });
        Ok(Self {
            config,
            omega,
            a_low,
            w_low: fan_in_uniform([d, d], d, rng),
            w_high: fan_in_uniform([d, d], d, rng),
            v_low: fan_in_uniform([d, high_nodes], d, rng),
            v_high: fan_in_uniform([d, c], d, rng),
        })
    }

    pub fn bind(&self, prefix: &str, b: &mut Binder<'_, T>) -> GsmVars {
        let omega =
            self.omega.iter().enumerate().map(|(i, t)| b.bind(join(prefix, &format!("omega.{i}")), t)).collect();
        GsmVars {
            omega,
            a_low: b.bind(join(prefix, "a_low"), &self.a_low),
            w_low: b.bind(join(prefix, "w_low"), &self.w_low),
            w_high: b.bind(join(prefix, "w_high"), &self.w_high),
            v_low: b.bind(join(prefix, "v_low"), &self.v_low),
            v_high: b.bind(join(prefix, "v_high"), &self.v_high),
        }
    }

    /// Restores the undirected-graph invariant after an optimizer step.
    pub fn symmetrize_adjacency(&mut self) -> Result<()> {
        self.a_low.symmetrize_in_place()
    }
}

impl<T: Scalar> Parameterized<T> for GsmParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, t) in self.omega.iter().enumerate() {
            f(&join(prefix, &format!("omega.{i}")), t);
        }
        f(&join(prefix, "a_low"), &self.a_low);
        f(&join(prefix, "w_low"), &self.w_low);
        f(&join(prefix, "w_high"), &self.w_high);
        f(&join(prefix, "v_low"), &self.v_low);
        f(&join(prefix, "v_high"), &self.v_high);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, t) in self.omega.iter_mut().enumerate() {
            f(&join(prefix, &format!("omega.{i}")), t);
        }
        f(&join(prefix, "a_low"), &mut self.a_low);
        f(&join(prefix, "w_low"), &mut self.w_low);
        f(&join(prefix, "w_high"), &mut self.w_high);
        f(&join(prefix, "v_low"), &mut self.v_low);
        f(&join(prefix, "v_high"), &mut self.v_high);
    }
}

/// GSM parameters bound onto a tape.
#[derive(Debug, Clone)]
pub struct GsmVars {
    pub omega: Vec<Var>,
    pub a_low: Var,
    pub w_low: Var,
    pub w_high: Var,
    pub v_low: Var,
    pub v_high: Var,
}

/// Maps each category channel of `f_head [c×h×w]` to one graph node.
pub fn project_to_graph<T: Scalar>(
    tape: &mut Tape<T>,
    f_head: Var,
    vars: &GsmVars,
    config: &GsmConfig,
) -> Result<GraphModel> {
    let (c, h, w) = tape.value(f_head).dims3()?;
    if c != config.categories || c != vars.omega.len() {
        return Err(contract!("category feature map has {c} channels, GSM expects {}", config.categories));
    }
    if (h, w) != (config.height, config.width) {
        return Err(contract!("category feature map is {h}x{w}, GSM expects {}x{}", config.height, config.width));
    }
    let flat = tape.reshape(f_head, [c, h * w])?;
    let mut rows = Vec::with_capacity(c);
    for (i, &omega) in vars.omega.iter().enumerate() {
        let r = tape.row(flat, i)?;
        rows.push(tape.matmul(r, omega)?);
    }
    let x = tape.concat_rows(&rows)?;
    GraphModel::new(tape, x, vars.a_low, GraphLevel::Low)
}

fn require_level(g: &GraphModel, level: GraphLevel) -> Result<()> {
    if g.level != level {
        return Err(contract!("expected a {level:?}-level graph, got {:?}", g.level));
    }
    Ok(())
}

/// Soft assignment of low-level nodes to high-level nodes, `[n_low×n_high]`,
/// each row a distribution.
pub fn compute_aggregation<T: Scalar>(tape: &mut Tape<T>, g: &GraphModel, v_low: Var) -> Result<Var> {
    require_level(g, GraphLevel::Low)?;
    let ax = tape.matmul(g.adjacency, g.nodes)?;
    let raw = tape.matmul(ax, v_low)?;
    tape.row_softmax(raw)
}

/// Pools a low-level graph into the high-level graph `(Cᵀ·X, Cᵀ·A·C)`.
pub fn aggregate<T: Scalar>(tape: &mut Tape<T>, g: &GraphModel, c_agg: Var) -> Result<GraphModel> {
    let n = g.node_count(tape);
    let (rows, _) = tape.value(c_agg).dims2()?;
    if rows != n {
        return Err(contract!("aggregation matrix has {rows} rows for {n} nodes"));
    }
    let ct = tape.transpose(c_agg)?;
    let x = tape.matmul(ct, g.nodes)?;
    let ca = tape.matmul(ct, g.adjacency)?;
    let a = tape.matmul(ca, c_agg)?;
    GraphModel::new(tape, x, a, GraphLevel::High)
}

/// Soft assignment of high-level nodes back to low-level nodes,
/// `[n_high×n_low]`, each row a distribution.
pub fn compute_decoupling<T: Scalar>(tape: &mut Tape<T>, g: &GraphModel, v_high: Var) -> Result<Var> {
    require_level(g, GraphLevel::High)?;
    let ax = tape.matmul(g.adjacency, g.nodes)?;
    let raw = tape.matmul(ax, v_high)?;
    tape.row_softmax(raw)
}

/// `(C_decᵀ·Z_high, C_decᵀ·A_high·C_dec)`.
pub fn decouple<T: Scalar>(tape: &mut Tape<T>, z_high: Var, a_high: Var, c_dec: Var) -> Result<(Var, Var)> {
    let ct = tape.transpose(c_dec)?;
    let z = tape.matmul(ct, z_high)?;
    let ca = tape.matmul(ct, a_high)?;
    let a = tape.matmul(ca, c_dec)?;
    Ok((z, a))
}

/// Everything the module computes besides the reweighted map.
#[derive(Debug, Clone, Copy)]
pub struct GsmReasoning {
    pub low: GraphModel,
    pub z_low: Var,
    pub c_agg: Var,
    pub high: GraphModel,
    pub z_high: Var,
    pub c_dec: Var,
    pub z_low_hat: Var,
    pub a_low_hat: Var,
    /// Skip-connected node features `[c×d]`.
    pub z_g: Var,
    /// Category distribution `[c]`.
    pub theta_g: Var,
    /// θ_g as applied to the channels, scaled by c when `rescale_by_c` is set.
    pub channel_weights: Var,
}

/// Runs the graph reasoning and produces θ_g without applying it.
pub fn gsm_reason<T: Scalar>(
    tape: &mut Tape<T>,
    f_head: Var,
    vars: &GsmVars,
    config: &GsmConfig,
) -> Result<GsmReasoning> {
    let low = project_to_graph(tape, f_head, vars, config)?;
    let z_low = graph_convolve(tape, &low, vars.w_low, true)?;
    let c_agg = compute_aggregation(tape, &low, vars.v_low)?;
    let high = aggregate(tape, &low, c_agg)?;
    let z_high = graph_convolve(tape, &high, vars.w_high, true)?;
    let c_dec = compute_decoupling(tape, &high, vars.v_high)?;
    let (z_low_hat, a_low_hat) = decouple(tape, z_high, high.adjacency, c_dec)?;
    let z_g = tape.add(z_low_hat, z_low)?;
    let pooled = tape.gap(z_g)?;
    let theta_g = tape.softmax(pooled)?;
    tape.tag(theta_g, "gsm.theta");
    let channel_weights =
        if config.rescale_by_c { tape.scale(theta_g, T::of(config.categories as f64))? } else { theta_g };
    Ok(GsmReasoning { low, z_low, c_agg, high, z_high, c_dec, z_low_hat, a_low_hat, z_g, theta_g, channel_weights })
}

#[derive(Debug, Clone, Copy)]
pub struct GsmOutput {
    /// `θ_g ⊙ F_head`, same shape as the input.
    pub rectified: Var,
    pub reasoning: GsmReasoning,
}

impl GsmOutput {
    pub fn z_g(&self) -> Var {
        self.reasoning.z_g
    }

    pub fn theta_g(&self) -> Var {
        self.reasoning.theta_g
    }
}

pub fn gsm_forward<T: Scalar>(
    tape: &mut Tape<T>,
    f_head: Var,
    vars: &GsmVars,
    config: &GsmConfig,
) -> Result<GsmOutput> {
    let reasoning = gsm_reason(tape, f_head, vars, config)?;
    let rectified = tape.channel_scale(reasoning.channel_weights, f_head)?;
    tape.tag(rectified, "gsm.reweighted");
    Ok(GsmOutput { rectified, reasoning })
}
