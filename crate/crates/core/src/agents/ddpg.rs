use ndarray::{s, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{action_from_logits, softmax_backward, softmax_rows, states_matrix, Act, ReplayBuffer};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{soft_update, Activation, Adam, AdamConfig, Mlp};
use crate::rng;
use crate::topo::OverlayNetwork;
use crate::traffic::DemandVector;

const DDPG_STREAM: u64 = 0x6464_7067;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub tau: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    /// Logit noise standard deviation at the start of training.
    pub exploration_sd: f64,
    /// Standard deviation reached after `anneal_steps` exploring actions.
    pub exploration_sd_final: f64,
    pub anneal_steps: u64,
    pub batch: usize,
    /// Gradient steps per scheduled update.
    pub gradient_steps: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub actor_init_gain: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            gamma: 0.7,
            buffer_capacity: 100_000,
            exploration_sd: 0.2,
            exploration_sd_final: 0.05,
            anneal_steps: 50_000,
            batch: 256,
            gradient_steps: 32,
            learning_rate: 1e-5,
            hidden: vec![512, 512, 512],
            actor_init_gain: 0.01,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("ddpg: {m}")));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.buffer_capacity == 0 || self.batch == 0 || self.gradient_steps == 0 {
            return bad("buffer_capacity, batch and gradient_steps must be >= 1");
        }
        if !(self.exploration_sd >= 0.0 && self.exploration_sd_final >= 0.0) {
            return bad("exploration noise must be >= 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DdpgDiagnostics {
    /// Mean squared Bellman error before the critic step.
    pub critic_loss: f64,
    /// Mean critic value of the actor's actions before the actor step.
    pub actor_objective: f64,
}

/// Deterministic actor-critic agent with target networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdpgAgent {
    cfg: DdpgConfig,
    offsets: Vec<usize>,
    state_scale: f64,
    actor: Mlp,
    critic: Mlp,
    actor_target: Mlp,
    critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    #[serde(with = "rng::saved")]
    rng: ChaCha8Rng,
    explore_steps: u64,
}

impl DdpgAgent {
    pub fn new(net: &OverlayNetwork, cfg: DdpgConfig, state_scale: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if !(state_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("state scale {state_scale} must be > 0")));
        }
        let mut init = rng::keyed(&[DDPG_STREAM, seed, 0]);
        let k = net.tunnel_count();
        let p = net.path_count();
        let dims = |input: usize, out: usize| -> Vec<usize> {
            let mut d = vec![input];
            d.extend(&cfg.hidden);
            d.push(out);
            d
        };
        let actor = Mlp::random(&dims(k, p), Activation::Linear, cfg.actor_init_gain, &mut init)?;
        let critic = Mlp::random(&dims(k + p, 1), Activation::Linear, 1.0, &mut init)?;
        let adam = AdamConfig::with_lr(cfg.learning_rate);
        Ok(Self {
            actor_opt: Adam::new(actor.param_count(), adam.clone()),
            critic_opt: Adam::new(critic.param_count(), adam),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            offsets: net.offsets().to_vec(),
            state_scale,
            actor,
            critic,
            rng: rng::keyed(&[DDPG_STREAM, seed, 1]),
            explore_steps: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.cfg
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn actor_target(&self) -> &Mlp {
        &self.actor_target
    }

    pub fn critic_target(&self) -> &Mlp {
        &self.critic_target
    }

    /// Current logit noise level, annealed linearly over `anneal_steps`.
    pub fn exploration_sd(&self) -> f64 {
        let frac = if self.cfg.anneal_steps == 0 {
            1.0
        } else {
            (self.explore_steps as f64 / self.cfg.anneal_steps as f64).min(1.0)
        };
        (1.0 - frac) * self.cfg.exploration_sd + frac * self.cfg.exploration_sd_final
    }

    pub fn act(&mut self, state: &DemandVector, explore: bool) -> Result<Act> {
        ensure_len("state", self.actor.input_dim(), state.len())?;
        let mut logits = self.actor.forward(&super::normalize_state(state, self.state_scale))?;
        if explore {
            let sd = self.exploration_sd();
            for l in logits.iter_mut() {
                let xi: f64 = StandardNormal.sample(&mut self.rng);
                *l += sd * xi;
            }
            self.explore_steps += 1;
        }
        Ok(Act {
            action: action_from_logits(&logits, &self.offsets)?,
            logits,
            log_prob: None,
        })
    }

    /// Critic value of a state and split vector.
    pub fn q_value(&self, state: &DemandVector, ratios: &[f64]) -> Result<f64> {
        let mut x = super::normalize_state(state, self.state_scale);
        x.extend_from_slice(ratios);
        Ok(self.critic.forward(&x)?[0])
    }

    /// One critic step, one actor step, then a soft target update. Learns
    /// from the deployed (projected) actions.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<DdpgDiagnostics> {
        let b = self.cfg.batch;
        let batch = buffer.sample(&mut self.rng, b)?;
        let k = self.actor.input_dim();
        let p = self.actor.output_dim();
        let s = states_matrix(batch.iter().map(|e| &e.state), b, k, self.state_scale)?;
        let s_next = states_matrix(batch.iter().map(|e| &e.next_state), b, k, self.state_scale)?;
        let mut a = Array2::zeros((b, p));
        for (mut row, e) in a.rows_mut().into_iter().zip(&batch) {
            ensure_len("deployed action", p, e.deployed_action.ratios().len())?;
            row.as_slice_mut().unwrap().copy_from_slice(e.deployed_action.ratios());
        }

        let a_next = softmax_rows(&self.actor_target.forward_batch(s_next.view())?, &self.offsets);
        let q_next = self
            .critic_target
            .forward_batch(ndarray::concatenate![Axis(1), s_next, a_next].view())?;
        let y: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let cont = if e.done { 0.0 } else { 1.0 };
                e.reward + self.cfg.gamma * cont * q_next[[i, 0]]
            })
            .collect();

        let mut diag = DdpgDiagnostics::default();
        let cache = self.critic.forward_train(ndarray::concatenate![Axis(1), s, a])?;
        let mut dq = Array2::zeros((b, 1));
        for i in 0..b {
            let err = cache.output()[[i, 0]] - y[i];
            diag.critic_loss += err * err / b as f64;
            dq[[i, 0]] = 2.0 * err / b as f64;
        }
        let mut cgrads = vec![0.0; self.critic.param_count()];
        self.critic.backward(&cache, dq.view(), &mut cgrads)?;
        self.critic_opt.step(self.critic.params_mut(), &mut cgrads, None)?;

        let acache = self.actor.forward_train(s.clone())?;
        let probs = softmax_rows(acache.output(), &self.offsets);
        let qcache = self.critic.forward_train(ndarray::concatenate![Axis(1), s, probs])?;
        diag.actor_objective = qcache.output().mean().unwrap_or(0.0);
        let ascend = Array2::from_elem((b, 1), -1.0 / b as f64);
        let dx = self.critic.backward(&qcache, ascend.view(), &mut cgrads)?;
        let dlogits = softmax_backward(probs.view(), dx.slice(s![.., k..]), &self.offsets);
        let mut agrads = vec![0.0; self.actor.param_count()];
        self.actor.backward(&acache, dlogits.view(), &mut agrads)?;
        self.actor_opt.step(self.actor.params_mut(), &mut agrads, None)?;

        soft_update(&mut self.critic_target, &self.critic, self.cfg.tau)?;
        soft_update(&mut self.actor_target, &self.actor, self.cfg.tau)?;
        Ok(diag)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Experience;
    use super::*;
    use crate::env::SplitAction;
    use crate::topo::build_hub_spoke;

    fn small_cfg() -> DdpgConfig {
        DdpgConfig {
            hidden: vec![16, 16],
            batch: 8,
            learning_rate: 1e-3,
            ..Default::default()
        }
    }

    fn net() -> OverlayNetwork {
        build_hub_spoke(3, 15.0, 6.0, 0.001).unwrap()
    }

    fn filled(n: usize, reward: f64, done: bool) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(100).unwrap();
        let net = net();
        for i in 0..n {
            let a = SplitAction::uniform(&net);
            buf.push(Experience {
                state: DemandVector::new(i as u64, vec![2.0; 6]).unwrap(),
                deployed_action: a.clone(),
                raw_action: a,
                raw_logits: vec![0.0; 12],
                log_prob: None,
                reward,
                next_state: DemandVector::new(i as u64 + 1, vec![2.0; 6]).unwrap(),
                done,
            });
        }
        buf
    }

    #[test]
    fn deterministic_without_exploration() {
        let mut agent = DdpgAgent::new(&net(), small_cfg(), 15.0, 0).unwrap();
        let s = DemandVector::new(0, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(agent.act(&s, false).unwrap(), agent.act(&s, false).unwrap());
        assert_ne!(agent.act(&s, true).unwrap(), agent.act(&s, true).unwrap());
    }

    #[test]
    fn exploration_anneals() {
        let mut cfg = small_cfg();
        cfg.anneal_steps = 10;
        let mut agent = DdpgAgent::new(&net(), cfg, 15.0, 0).unwrap();
        assert_eq!(agent.exploration_sd(), 0.2);
        let s = DemandVector::new(0, vec![1.0; 6]).unwrap();
        for _ in 0..5 {
            agent.act(&s, true).unwrap();
        }
        assert!((agent.exploration_sd() - 0.125).abs() < 1e-12);
        for _ in 0..20 {
            agent.act(&s, true).unwrap();
        }
        assert_eq!(agent.exploration_sd(), 0.05);
    }

    #[test]
    fn tau_one_copies_online_networks() {
        let mut cfg = small_cfg();
        cfg.tau = 1.0;
        let mut agent = DdpgAgent::new(&net(), cfg, 15.0, 1).unwrap();
        agent.update(&filled(20, -1.0, false)).unwrap();
        assert_eq!(agent.actor_target, agent.actor);
        assert_eq!(agent.critic_target, agent.critic);
    }

    #[test]
    fn target_gap_shrinks_by_one_minus_tau() {
        let mut agent = DdpgAgent::new(&net(), small_cfg(), 15.0, 2).unwrap();
        for p in agent.actor_target.params_mut() {
            *p += 0.5;
        }
        let gap = |a: &DdpgAgent| {
            a.actor_target
                .params()
                .iter()
                .zip(a.actor.params())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let before = gap(&agent);
        let buf = filled(20, -1.0, false);
        agent.update(&buf).unwrap();
        // The online actor also moved, by at most lr per parameter.
        assert!((gap(&agent) - 0.95 * before).abs() <= 2.0 * agent.cfg.learning_rate);
    }

    #[test]
    fn gamma_zero_regresses_to_immediate_reward() {
        let mut cfg = small_cfg();
        cfg.gamma = 0.0;
        cfg.learning_rate = 1e-2;
        let mut agent = DdpgAgent::new(&net(), cfg, 15.0, 3).unwrap();
        let buf = filled(20, -0.7, false);
        for _ in 0..500 {
            agent.update(&buf).unwrap();
        }
        let q = agent.q_value(&DemandVector::new(0, vec![2.0; 6]).unwrap(), SplitAction::uniform(&net()).ratios()).unwrap();
        assert!((q + 0.7).abs() < 1e-2, "{q}");
    }

    #[test]
    fn critic_loss_decreases_on_identical_transitions() {
        let mut agent = DdpgAgent::new(&net(), small_cfg(), 15.0, 4).unwrap();
        let buf = filled(30, -2.0, true);
        let first = agent.update(&buf).unwrap().critic_loss;
        let mut last = first;
        for _ in 0..100 {
            last = agent.update(&buf).unwrap().critic_loss;
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn insufficient_buffer() {
        let mut agent = DdpgAgent::new(&net(), small_cfg(), 15.0, 5).unwrap();
        assert!(matches!(agent.update(&filled(3, 0.0, false)), Err(Error::InsufficientData(_))));
    }
}
