use std::str::FromStr;
use std::time::Duration;

use crate::approx::{CemConfig, GaConfig};
use crate::bounds::BoundMethod;
use crate::cluster::Norm;
use crate::error::{CaqlError, Result};
use crate::mip::MipConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossKind {
    #[default]
    L2,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SolverKind {
    Mip,
    #[default]
    Ga,
    Cem,
    /// No exact solve: every target uses the dual bound.
    Dual,
}

/// Label used to regress the action function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ActionFnLabel {
    /// `Q_θ(x', a')` at the solved action.
    #[default]
    NextState,
    /// The value reported by the max-Q solver.
    MaxQ,
    /// Solver value where available, the dual bound `q̃` on resolved samples.
    Dual,
}

macro_rules! name_enum {
    ($ty:ty, $what:literal, { $($name:literal => $v:expr),* $(,)? }) => {
        impl FromStr for $ty {
            type Err = CaqlError;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($v),)*
                    other => Err(CaqlError::InvalidConfig(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }

        impl $ty {
            pub fn as_str(self) -> &'static str {
                $(if self == $v { return $name; })*
                unreachable!()
            }
        }
    };
}

name_enum!(LossKind, "loss", { "l2" => LossKind::L2, "hinge" => LossKind::Hinge });
name_enum!(SolverKind, "solver", {
    "mip" => SolverKind::Mip,
    "ga" => SolverKind::Ga,
    "cem" => SolverKind::Cem,
    "dual" => SolverKind::Dual,
});
name_enum!(ActionFnLabel, "action-function label", {
    "next_state" => ActionFnLabel::NextState,
    "max_q" => ActionFnLabel::MaxQ,
    "dual" => ActionFnLabel::Dual,
});

/// `τ_t = mean|residual| · k1 · k2^t`, applied as `max(τ_t, floor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtolConfig {
    pub k1: f64,
    pub k2: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClusterRadius {
    Fixed(f64),
    /// `b_t = k3 · k4^t`
    Dynamic { k3: f64, k4: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    pub radius: ClusterRadius,
    pub norm: Norm,
}

/// Training hyperparameters. Defaults follow the reference Pendulum setup.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau_soft: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub episode_len: usize,
    pub buffer_capacity: usize,
    pub sigma: f64,
    pub sigma_decay: f64,
    pub sigma_min: f64,
    pub loss: LossKind,
    pub hinge_lambda: f64,
    pub solver: SolverKind,
    pub dtol: Option<DtolConfig>,
    pub dual_filter: bool,
    pub cluster: Option<ClusterConfig>,
    pub bound_method: BoundMethod,
    pub q_lr: f64,
    pub action_lr: f64,
    pub hidden: Vec<usize>,
    pub action_hidden: Vec<usize>,
    pub action_fn_label: ActionFnLabel,
    pub mip: MipConfig<f64>,
    pub ga: GaConfig<f64>,
    pub cem: CemConfig<f64>,
    /// Training steps between evaluations.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Training steps between checkpoints; `None` disables them.
    pub checkpoint_interval: Option<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau_soft: 0.001,
            batch_size: 64,
            steps_per_epoch: 20,
            episode_len: 200,
            buffer_capacity: 100_000,
            sigma: 1.0,
            sigma_decay: 0.9995,
            sigma_min: 0.01,
            loss: LossKind::L2,
            hinge_lambda: 1.0,
            solver: SolverKind::Ga,
            dtol: None,
            dual_filter: false,
            cluster: None,
            bound_method: BoundMethod::DualTightened,
            q_lr: 1e-3,
            action_lr: 1e-3,
            hidden: vec![32, 16],
            action_hidden: vec![32, 16],
            action_fn_label: ActionFnLabel::NextState,
            mip: MipConfig {
                gap_tol: 1e-4,
                time_limit: Duration::from_secs(60),
                node_limit: 1_000_000,
                bounds: BoundMethod::DualTightened,
            },
            ga: GaConfig::default(),
            cem: CemConfig::default(),
            eval_interval: 1000,
            eval_episodes: 10,
            checkpoint_interval: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CaqlError::InvalidConfig(msg));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau_soft > 0.0 && self.tau_soft <= 1.0) {
            return bad(format!("tau_soft must lie in (0, 1], got {}", self.tau_soft));
        }
        if !(0.0..=1.0).contains(&self.sigma_decay) || self.sigma_min < 0.0 || self.sigma < 0.0 {
            return bad("exploration noise settings out of range".into());
        }
        if self.batch_size == 0 || self.episode_len == 0 || self.eval_interval == 0 {
            return bad("batch size, episode length and eval interval must be positive".into());
        }
        if self.hinge_lambda < 0.0 || self.q_lr <= 0.0 || self.action_lr <= 0.0 {
            return bad("learning rates and hinge penalty must be positive".into());
        }
        if self.hidden.is_empty() || self.action_hidden.is_empty() {
            return bad("networks need at least one hidden layer".into());
        }
        if self.dual_filter && self.gamma == 0.0 {
            return bad("dual filtering needs gamma > 0".into());
        }
        if let Some(d) = self.dtol {
            if !(d.k1 > 0.0 && (0.0..1.0).contains(&d.k2) && d.floor > 0.0) {
                return bad(format!("dynamic tolerance needs k1 > 0, k2 in [0, 1), floor > 0: {d:?}"));
            }
        }
        if let Some(c) = self.cluster {
            let ok = match c.radius {
                ClusterRadius::Fixed(b) => b >= 0.0,
                ClusterRadius::Dynamic { k3, k4 } => k3 > 0.0 && (0.0..1.0).contains(&k4),
            };
            if !ok {
                return bad(format!("invalid cluster radius {:?}", c.radius));
            }
        }
        self.ga.validate()?;
        self.cem.validate()?;
        Ok(())
    }

    /// Action-function label in effect: the dual solver always uses `q̃`.
    pub fn effective_label(&self) -> ActionFnLabel {
        if self.solver == SolverKind::Dual {
            ActionFnLabel::Dual
        } else {
            self.action_fn_label
        }
    }

    /// Tolerance floor used when the dynamic schedule is off or decays below it.
    pub fn base_tolerance(&self) -> f64 {
        match self.solver {
            SolverKind::Mip => self.mip.gap_tol,
            SolverKind::Ga => self.ga.tolerance,
            SolverKind::Cem => self.cem.tolerance,
            SolverKind::Dual => 0.0,
        }
    }
}
