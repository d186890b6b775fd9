//! The CAQL training loop.
//!
//! Each epoch collects one episode with Gaussian exploration around the
//! action function, then runs `steps_per_epoch` training steps:
//!
//! 1. sample a minibatch from the replay buffer;
//! 2. compute TD targets ([`compute_targets`]);
//! 3. one Adam step on the ℓ2 or hinge loss of the Q-network;
//! 4. one Adam step on the action-function regression loss;
//! 5. a soft update of the target network.
//!
//! The exploration noise decays once per epoch.

mod buffer;
mod config;
mod loss;
mod targets;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

pub use buffer::{ReplayBuffer, Transition};
pub use config::{ActionFnLabel, AgentConfig, ClusterConfig, ClusterRadius, DtolConfig, LossKind, SolverKind};
pub use loss::{
    action_fn_loss_and_grad, action_fn_step, hinge_loss, l2_loss, loss_and_seeds, q_update, soft_update,
};
pub use targets::{compute_targets, solve_maxq, TargetContext, Targets};

use crate::approx::{dynamic_tolerance, geometric};
use crate::bounds::BoxDomain;
use crate::env::Environment;
use crate::error::{CaqlError, Result};
use crate::net::{save_checkpoint, AdamState, ReluNet};
use crate::scalar::Scalar;

const EVAL_SALT: u64 = 0x5eed_e7a1_0000_0001;

/// Runs one episode of `len` steps with actions `clip(π(x) + N(0, σ))`,
/// storing every transition. Returns the undiscounted return.
pub fn collect_episode<T: Scalar>(
    env: &mut dyn Environment,
    policy: &ReluNet<T>,
    sigma: f64,
    domain: &BoxDomain<T>,
    len: usize,
    buffer: &mut ReplayBuffer<T>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let noise = Normal::new(0.0, sigma.max(0.0))
        .map_err(|e| CaqlError::InvalidConfig(format!("exploration noise: {e}")))?;
    let mut obs: Vec<T> = to_t(&env.reset(rng));
    let mut total = 0.0;
    for _ in 0..len {
        let mut a = policy.act(&obs)?;
        if sigma > 0.0 {
            for v in &mut a {
                *v += T::lit(noise.sample(rng));
            }
        }
        domain.clip_in_place(&mut a);
        let step = env.step(&to_f64(&a), rng);
        total += step.reward;
        let next = to_t(&step.observation);
        buffer.push(Transition {
            state: obs,
            action: a,
            reward: T::lit(step.reward),
            next_state: next.clone(),
        });
        obs = next;
        if step.done {
            obs = to_t(&env.reset(rng));
        }
    }
    Ok(total)
}

/// Noise-free returns of `episodes` episodes of `len` steps under `clip(π(x))`.
pub fn evaluate_policy<T: Scalar>(
    env: &mut dyn Environment,
    policy: &ReluNet<T>,
    domain: &BoxDomain<T>,
    len: usize,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs: Vec<T> = to_t(&env.reset(&mut rng));
        let mut total = 0.0;
        for _ in 0..len {
            let a = domain.clip(&policy.act(&obs)?);
            let step = env.step(&to_f64(&a), &mut rng);
            total += step.reward;
            obs = to_t(&step.observation);
            if step.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}

fn to_t<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|x| T::lit(*x)).collect()
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[m - 1] + v[m]) } else { v[m] })
}

/// Diagnostics of one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub action_loss: f64,
    /// Raw `τ_t` before the floor, when the dynamic tolerance is on.
    pub tolerance: Option<f64>,
    pub tolerance_applied: Option<f64>,
    pub max_residual: Option<f64>,
    pub filtered_fraction: f64,
    pub centroid_fraction: f64,
    pub solve_times: Vec<Duration>,
    pub exact_solves: usize,
}

/// One line of the metrics log, written at every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub loss: Option<f64>,
    pub action_loss: Option<f64>,
    pub tolerance: Option<f64>,
    pub tolerance_applied: Option<f64>,
    /// Step index `t` at which `tolerance` was computed.
    pub tolerance_step: Option<u64>,
    pub max_residual: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub filtered_fraction: f64,
    pub centroid_fraction: f64,
    pub maxq_elapsed_median_ms: Option<f64>,
    pub maxq_elapsed_sd_ms: Option<f64>,
    pub exact_solves: usize,
    pub sigma: f64,
    pub solver: String,
    pub seed: u64,
}

#[derive(Debug, Default)]
struct Window {
    losses: Vec<f64>,
    action_losses: Vec<f64>,
    filtered: Vec<f64>,
    centroid: Vec<f64>,
    solve_ms: Vec<f64>,
    exact_solves: usize,
    last: Option<(u64, StepStats)>,
}

impl Window {
    fn add(&mut self, step: u64, s: StepStats) {
        self.losses.push(s.loss);
        self.action_losses.push(s.action_loss);
        self.filtered.push(s.filtered_fraction);
        self.centroid.push(s.centroid_fraction);
        self.solve_ms
            .extend(s.solve_times.iter().map(|d| d.as_secs_f64() * 1e3));
        self.exact_solves += s.exact_solves;
        self.last = Some((step, s));
    }
}

/// A CAQL learner: Q-network, target network, action function and replay.
#[derive(Debug, Clone)]
pub struct Agent<T> {
    pub cfg: AgentConfig,
    pub q: ReluNet<T>,
    pub q_target: ReluNet<T>,
    pub policy: ReluNet<T>,
    pub buffer: ReplayBuffer<T>,
    pub sigma: f64,
    q_adam: AdamState<T>,
    policy_adam: AdamState<T>,
    domain: BoxDomain<T>,
    seed: u64,
    rng: ChaCha8Rng,
    train_steps: u64,
    epoch: u64,
}

impl<T: Scalar> Agent<T> {
    pub fn new(cfg: AgentConfig, state_dim: usize, action_box: &BoxDomain<f64>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = action_box.dim();
        let q = ReluNet::q_network(state_dim, d, &cfg.hidden, &mut rng)?;
        let policy = ReluNet::action_network(state_dim, d, &cfg.action_hidden, &mut rng)?;
        let domain = BoxDomain::new(to_t(action_box.lower()), to_t(action_box.upper()))?;
        Ok(Self {
            q_adam: AdamState::new(q.num_params(), T::lit(cfg.q_lr)),
            policy_adam: AdamState::new(policy.num_params(), T::lit(cfg.action_lr)),
            q_target: q.clone(),
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            sigma: cfg.sigma,
            q,
            policy,
            domain,
            seed,
            rng,
            train_steps: 0,
            epoch: 0,
            cfg,
        })
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }

    /// Greedy action of the action function, clipped to the box.
    pub fn act(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.domain.clip(&self.policy.act(x)?))
    }

    pub fn collect_episode(&mut self, env: &mut dyn Environment) -> Result<f64> {
        collect_episode(
            env,
            &self.policy,
            self.sigma,
            &self.domain,
            self.cfg.episode_len,
            &mut self.buffer,
            &mut self.rng,
        )
    }

    /// Noise-free evaluation with the run's fixed evaluation seed.
    pub fn evaluate(&self, env: &mut dyn Environment) -> Result<Vec<f64>> {
        evaluate_policy(
            env,
            &self.policy,
            &self.domain,
            self.cfg.episode_len,
            self.cfg.eval_episodes,
            self.seed ^ EVAL_SALT,
        )
    }

    /// `|r + γ Q_target(x', clip(π(x'))) - Q(x, a)|` per sample.
    pub fn bellman_residuals(&self, batch: &[Transition<T>]) -> Result<Vec<T>> {
        let gamma = T::lit(self.cfg.gamma);
        batch
            .iter()
            .map(|t| {
                let a_next = self.act(&t.next_state)?;
                let r = t.reward + gamma * self.q_target.q(&t.next_state, &a_next)?
                    - self.q.q(&t.state, &t.action)?;
                Ok(r.abs())
            })
            .collect()
    }

    /// One training step on a fresh minibatch.
    pub fn train_step(&mut self) -> Result<StepStats> {
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rng)?;
        self.train_on(&batch)
    }

    /// One training step on `batch`.
    pub fn train_on(&mut self, batch: &[Transition<T>]) -> Result<StepStats> {
        let t = self.train_steps;
        let (tolerance, applied, max_residual) = match self.cfg.dtol {
            Some(d) if self.cfg.solver != SolverKind::Dual => {
                let res = self.bellman_residuals(batch)?;
                let tau = dynamic_tolerance(&res, T::lit(d.k1), T::lit(d.k2), t)?.to_f64_lossy();
                let max_res = res.iter().map(|r| r.to_f64_lossy()).fold(0.0, f64::max);
                (Some(tau), Some(tau.max(d.floor)), Some(max_res))
            }
            _ => (None, None, None),
        };
        let targets = compute_targets(
            batch,
            &TargetContext {
                q: &self.q,
                q_target: &self.q_target,
                policy: &self.policy,
                domain: &self.domain,
                cfg: &self.cfg,
                tolerance: applied.map(T::lit),
                step: t,
                seed: self.seed,
            },
        )?;

        let loss = q_update(
            &mut self.q,
            &mut self.q_adam,
            batch,
            &targets.targets,
            self.cfg.loss,
            T::lit(self.cfg.hinge_lambda),
        )?
        .to_f64_lossy();

        let next_states: Vec<Vec<T>> = batch.iter().map(|t| t.next_state.clone()).collect();
        let labels = self.action_labels(&next_states, &targets)?;
        let action_loss = action_fn_step(&self.q, &mut self.policy, &mut self.policy_adam, &next_states, &labels)?
            .to_f64_lossy();
        soft_update(&mut self.q_target, &self.q, T::lit(self.cfg.tau_soft))?;
        self.train_steps += 1;

        if !loss.is_finite() || !action_loss.is_finite() || !self.q.is_finite() || !self.policy.is_finite() {
            return Err(CaqlError::Diverged {
                step: t as usize,
                detail: format!(
                    "loss {loss}, action loss {action_loss}, q finite {}, policy finite {}",
                    self.q.is_finite(),
                    self.policy.is_finite()
                ),
            });
        }
        Ok(StepStats {
            loss,
            action_loss,
            tolerance,
            tolerance_applied: applied,
            max_residual,
            filtered_fraction: targets.filtered_fraction,
            centroid_fraction: targets.centroid_fraction,
            solve_times: targets.solve_times,
            exact_solves: targets.exact_solves,
        })
    }

    fn action_labels(&self, next_states: &[Vec<T>], targets: &Targets<T>) -> Result<Vec<Option<T>>> {
        let n = next_states.len();
        let mut labels = vec![None; n];
        for i in 0..n {
            labels[i] = match self.cfg.effective_label() {
                ActionFnLabel::NextState => match &targets.actions[i] {
                    Some(a) => Some(self.q.q(&next_states[i], a)?),
                    None => None,
                },
                ActionFnLabel::MaxQ => targets.solver_values[i],
                ActionFnLabel::Dual => targets.solver_values[i].or(targets.q_tilde[i]),
            };
        }
        Ok(labels)
    }

    fn record(&self, returns: &[f64], window: &Window) -> EvalRecord {
        let (mean_return, std_return) = mean_std(returns);
        let avg = |v: &[f64]| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
        let mut solve_ms = window.solve_ms.clone();
        let (_, sd) = mean_std(&solve_ms);
        let last = window.last.as_ref();
        EvalRecord {
            step: self.train_steps,
            epoch: self.epoch,
            mean_return,
            std_return,
            loss: avg(&window.losses),
            action_loss: avg(&window.action_losses),
            tolerance: last.and_then(|(_, s)| s.tolerance),
            tolerance_applied: last.and_then(|(_, s)| s.tolerance_applied),
            tolerance_step: last.filter(|(_, s)| s.tolerance.is_some()).map(|(t, _)| *t),
            max_residual: last.and_then(|(_, s)| s.max_residual),
            k1: self.cfg.dtol.map(|d| d.k1),
            k2: self.cfg.dtol.map(|d| d.k2),
            filtered_fraction: avg(&window.filtered).unwrap_or(0.0),
            centroid_fraction: avg(&window.centroid).unwrap_or(0.0),
            maxq_elapsed_median_ms: median(&mut solve_ms),
            maxq_elapsed_sd_ms: if solve_ms.is_empty() { None } else { Some(sd) },
            exact_solves: window.exact_solves,
            sigma: self.sigma,
            solver: self.cfg.solver.as_str().to_string(),
            seed: self.seed,
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(&self.q, dir.join(format!("q_step{}.ckpt", self.train_steps)))?;
        save_checkpoint(&self.policy, dir.join(format!("policy_step{}.ckpt", self.train_steps)))
    }

    fn dump_divergence(&self, dir: &Path, err: &CaqlError) {
        let dump = serde_json::json!({
            "error": err.to_string(),
            "step": self.train_steps,
            "epoch": self.epoch,
            "sigma": self.sigma,
            "q_finite": self.q.is_finite(),
            "policy_finite": self.policy.is_finite(),
            "buffer_len": self.buffer.len(),
        });
        let _ = fs::write(dir.join("diverged.json"), dump.to_string());
        let _ = save_checkpoint(&self.q, dir.join("q_diverged.ckpt"));
    }

    /// Trains for `total_steps` training steps, evaluating at step 0 and every
    /// `eval_interval` steps. With `out_dir`, writes `metrics.jsonl`,
    /// periodic checkpoints and the final networks there.
    pub fn train(
        &mut self,
        env: &mut dyn Environment,
        eval_env: &mut dyn Environment,
        total_steps: u64,
        out_dir: Option<&Path>,
    ) -> Result<Vec<EvalRecord>> {
        let mut metrics = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?))
            }
            None => None,
        };
        let mut records = Vec::new();
        let mut window = Window::default();
        let mut emit = |agent: &Self, window: &mut Window, env: &mut dyn Environment| -> Result<()> {
            let returns = agent.evaluate(env)?;
            let rec = agent.record(&returns, window);
            if let Some(w) = metrics.as_mut() {
                let line = serde_json::to_string(&rec).map_err(|e| CaqlError::InvalidConfig(e.to_string()))?;
                writeln!(w, "{line}")?;
                w.flush()?;
            }
            records.push(rec);
            *window = Window::default();
            Ok(())
        };
        emit(self, &mut window, eval_env)?;
        let interval = self.cfg.eval_interval as u64;
        let mut next_eval = self.train_steps + interval;
        let ckpt = self.cfg.checkpoint_interval.map(|c| c as u64);

        while self.train_steps < total_steps {
            self.epoch += 1;
            self.collect_episode(env)?;
            for _ in 0..self.cfg.steps_per_epoch {
                if self.train_steps >= total_steps || self.buffer.len() < self.cfg.batch_size {
                    break;
                }
                let step = self.train_steps;
                match self.train_step() {
                    Ok(stats) => window.add(step, stats),
                    Err(e) => {
                        if let Some(dir) = out_dir {
                            self.dump_divergence(dir, &e);
                        }
                        return Err(e);
                    }
                }
                if self.train_steps >= next_eval {
                    emit(self, &mut window, eval_env)?;
                    next_eval += interval;
                }
                if let (Some(c), Some(dir)) = (ckpt, out_dir) {
                    if c > 0 && self.train_steps % c == 0 {
                        self.save(dir)?;
                    }
                }
            }
            self.sigma = (self.sigma * self.cfg.sigma_decay).max(self.cfg.sigma_min);
        }
        if let Some(dir) = out_dir {
            save_checkpoint(&self.q, dir.join("q_final.ckpt"))?;
            save_checkpoint(&self.policy, dir.join("policy_final.ckpt"))?;
        }
        Ok(records)
    }
}

/// Checks `τ_t <= k1 · k2^t · max_residual` for a logged record; `None` when
/// the record carries no tolerance.
pub fn tolerance_within_decay(rec: &EvalRecord) -> Option<bool> {
    let (tau, t, r, k1, k2) = (rec.tolerance?, rec.tolerance_step?, rec.max_residual?, rec.k1?, rec.k2?);
    let bound = k1 * geometric(k2, t) * r;
    Some(tau <= bound * (1.0 + 1e-12) + 1e-300)
}

/// Output directory for one seed of a multi-seed run.
pub fn seed_dir(base: &Path, seed: u64) -> PathBuf {
    base.join(format!("seed{seed}"))
}
