//! Local consistency module.
//!
//! Pixels of `F [c'×h'×w']` are projected onto `c` graph nodes, so relations
//! between pixels are captured through node relations at `O(c)` nodes
//! regardless of image size:
//!
//! ```text
//! X_l = Ω_l1 · reshape(F) · Ω_l2      [c × d]
//! A_l = rowsoftmax(X_l · X_lᵀ)
//! Z_l = relu(A_l · X_l · W_l)
//! θ_l = softmax(gap(Z_l + α·Z_g))      (α·Z_g only when global features are supplied)
//! output = lift(θ_l) ⊙ F
//! ```
//!
//! `lift` maps the `c` category weights onto the `c'` input channels through
//! `Ω_l1ᵀ`, or is the identity when `c = c'` and configured so.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Error, Result};
use crate::graph::{data_adjacency, graph_convolve, GraphLevel, GraphModel};
use crate::params::{fan_in_uniform, join, Binder, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How category weights reach the input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelLift {
    /// `θ̃ = Ω_l1ᵀ · θ`.
    Projection,
    /// `θ̃ = θ`; requires `c = c'`.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcmConfig {
    /// Channels of the input feature map (c').
    pub in_channels: usize,
    /// Graph node count (c).
    pub categories: usize,
    pub height: usize,
    pub width: usize,
    pub node_dim: usize,
    /// Weight of the global features in the channel weights.
    pub alpha: f64,
    pub lift: ChannelLift,
    /// Multiply the lifted channel weights by c so they average one.
    pub rescale_by_c: bool,
}

impl LcmConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.in_channels, self.categories, self.height, self.width, self.node_dim].contains(&0) {
            return Err(Error::Config("LCM sizes must be positive".into()));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.lift == ChannelLift::Identity && self.in_channels != self.categories {
            return Err(Error::Config("identity channel lift needs c = c'".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcmParams<T> {
    pub config: LcmConfig,
    /// `[c×c']`
    pub omega_l1: Tensor<T>,
    /// `[(h'·w')×d]`
    pub omega_l2: Tensor<T>,
    /// `[d×d]`
    pub w_l: Tensor<T>,
}

impl<T: Scalar> LcmParams<T> {
    pub fn init(config: LcmConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let hw = config.height * config.width;
        Ok(Self {
            config,
            omega_l1: fan_in_uniform([config.categories, config.in_channels], config.in_channels, rng),
            omega_l2: fan_in_uniform([hw, config.node_dim], hw, rng),
            w_l: fan_in_uniform([config.node_dim, config.node_dim], config.node_dim, rng),
        })
    }

    pub fn bind(&self, prefix: &str, b: &mut Binder<'_, T>) -> LcmVars {
        LcmVars {
            omega_l1: b.bind(join(prefix, "omega_l1"), &self.omega_l1),
            omega_l2: b.bind(join(prefix, "omega_l2"), &self.omega_l2),
            w_l: b.bind(join(prefix, "w_l"), &self.w_l),
        }
    }
}

impl<T: Scalar> Parameterized<T> for LcmParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "omega_l1"), &self.omega_l1);
        f(&join(prefix, "omega_l2"), &self.omega_l2);
        f(&join(prefix, "w_l"), &self.w_l);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "omega_l1"), &mut self.omega_l1);
        f(&join(prefix, "omega_l2"), &mut self.omega_l2);
        f(&join(prefix, "w_l"), &mut self.w_l);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LcmVars {
    pub omega_l1: Var,
    pub omega_l2: Var,
    pub w_l: Var,
}

/// Projects the pixels of `f [c'×h'×w']` onto a `c`-node local graph.
pub fn project_pixels_to_graph<T: Scalar>(
    tape: &mut Tape<T>,
    f: Var,
    vars: &LcmVars,
    config: &LcmConfig,
) -> Result<GraphModel> {
    let (c_in, h, w) = tape.value(f).dims3()?;
    if c_in != config.in_channels || (h, w) != (config.height, config.width) {
        return Err(contract!(
            "LCM input is [{c_in}x{h}x{w}], expected [{}x{}x{}]",
            config.in_channels,
            config.height,
            config.width
        ));
    }
    let flat = tape.reshape(f, [c_in, h * w])?;
    let left = tape.matmul(vars.omega_l1, flat)?;
    let x = tape.matmul(left, vars.omega_l2)?;
    let a = data_adjacency(tape, x)?;
    GraphModel::new(tape, x, a, GraphLevel::Low)
}

#[derive(Debug, Clone, Copy)]
pub struct LcmReasoning {
    pub graph: GraphModel,
    /// `[c×d]`
    pub z_l: Var,
    /// Category weights `[c]`.
    pub theta_l: Var,
    /// Weights lifted to the input channels `[c']`.
    pub channel_weights: Var,
}

/// Computes the local graph reasoning and channel weights without applying
/// them. `z_g`, when given, must be `[c×d]` and enters scaled by `alpha`.
pub fn lcm_reason<T: Scalar>(
    tape: &mut Tape<T>,
    f: Var,
    vars: &LcmVars,
    config: &LcmConfig,
    z_g: Option<Var>,
) -> Result<LcmReasoning> {
    let graph = project_pixels_to_graph(tape, f, vars, config)?;
    let z_l = graph_convolve(tape, &graph, vars.w_l, true)?;
    let mixed = match z_g {
        Some(zg) => {
            if tape.shape(zg) != tape.shape(z_l) {
                return Err(contract!(
                    "global features {:?} do not match local features {:?}",
                    tape.shape(zg),
                    tape.shape(z_l)
                ));
            }
            let scaled = tape.scale(zg, T::of(config.alpha))?;
            tape.add(z_l, scaled)?
        }
        None => z_l,
    };
    let pooled = tape.gap(mixed)?;
    let theta_l = tape.softmax(pooled)?;
    tape.tag(theta_l, "lcm.theta");
    let channel_weights = match config.lift {
        ChannelLift::Identity => theta_l,
        ChannelLift::Projection => {
            let col = tape.reshape(theta_l, [config.categories, 1])?;
            let t1 = tape.transpose(vars.omega_l1)?;
            let lifted = tape.matmul(t1, col)?;
            tape.reshape(lifted, [config.in_channels])?
        }
    };
    let channel_weights = if config.rescale_by_c {
        tape.scale(channel_weights, T::of(config.categories as f64))?
    } else {
        channel_weights
    };
    Ok(LcmReasoning { graph, z_l, theta_l, channel_weights })
}

#[derive(Debug, Clone, Copy)]
pub struct LcmOutput {
    /// Reweighted feature map, same shape as the input.
    pub rectified: Var,
    pub reasoning: LcmReasoning,
}

pub fn lcm_forward<T: Scalar>(
    tape: &mut Tape<T>,
    f: Var,
    vars: &LcmVars,
    config: &LcmConfig,
    z_g: Option<Var>,
) -> Result<LcmOutput> {
    let reasoning = lcm_reason(tape, f, vars, config, z_g)?;
    let rectified = tape.channel_scale(reasoning.channel_weights, f)?;
    tape.tag(rectified, "lcm.reweighted");
    Ok(LcmOutput { rectified, reasoning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> LcmConfig {
        LcmConfig {
            in_channels: 3,
            categories: 2,
            height: 2,
            width: 2,
            node_dim: 4,
            alpha: 1.0,
            lift: ChannelLift::Projection,
            rescale_by_c: false,
        }
    }

    #[test]
    fn zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LcmParams::<f64>::init(cfg(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let vars = p.bind("lcm", &mut Binder::new(&mut tape, false));
        let f = tape.constant(Tensor::zeros([3, 2, 2]));
        let out = lcm_forward(&mut tape, f, &vars, &p.config, None).unwrap();
        assert!(tape.value(out.reasoning.graph.nodes).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(out.reasoning.graph.adjacency).data().iter().all(|&v| v == 0.5));
        assert!(tape.value(out.reasoning.z_l).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(out.reasoning.theta_l).data().iter().all(|&v| v == 0.5));
        assert!(tape.value(out.rectified).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_lift_needs_matching_channels() {
        let mut c = cfg();
        c.lift = ChannelLift::Identity;
        assert!(c.validate().is_err());
        c.in_channels = 2;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn negative_alpha_rejected() {
        let mut c = cfg();
        c.alpha = -0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mismatched_global_features_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LcmParams::<f64>::init(cfg(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let vars = p.bind("lcm", &mut Binder::new(&mut tape, false));
        let f = tape.constant(Tensor::ones([3, 2, 2]));
        let zg = tape.constant(Tensor::ones([3, 4]));
        assert!(lcm_forward(&mut tape, f, &vars, &p.config, Some(zg)).is_err());
    }

    #[test]
    fn node_count_is_independent_of_image_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for side in [2, 5, 9] {
            let c = LcmConfig { height: side, width: side, ..cfg() };
            let p = LcmParams::<f64>::init(c, &mut rng).unwrap();
            let mut tape = Tape::new();
            let vars = p.bind("lcm", &mut Binder::new(&mut tape, false));
            let f = tape.constant(Tensor::ones([3, side, side]));
            let g = project_pixels_to_graph(&mut tape, f, &vars, &c).unwrap();
            assert_eq!(g.node_count(&tape), 2);
            assert_eq!(tape.shape(g.adjacency), &[2, 2]);
        }
    }
}
