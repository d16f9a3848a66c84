use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{action_from_logits, states_matrix, Act, Experience};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Mlp};
use crate::rng;
use crate::topo::OverlayNetwork;
use crate::traffic::DemandVector;

const PPO_STREAM: u64 = 0x0070_706f;

/// An epoch whose KL exceeds `KL_STOP_FACTOR * target_kl` ends the update.
const KL_STOP_FACTOR: f64 = 1.5;
/// An epoch whose KL exceeds `KL_LIMIT_FACTOR * target_kl` is undone.
const KL_LIMIT_FACTOR: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub target_kl: f64,
    pub grad_clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs_per_update: usize,
    pub batch: usize,
    pub rollout: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    /// Initial log standard deviation of the logit noise.
    pub init_log_std: f64,
    /// Scale of the actor's initial output weights; small values start near
    /// the uniform split.
    pub actor_init_gain: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            target_kl: 0.03,
            grad_clip: 0.5,
            gamma: 0.7,
            gae_lambda: 0.95,
            epochs_per_update: 10,
            batch: 256,
            rollout: 256,
            learning_rate: 1e-5,
            hidden: vec![512, 512, 512],
            init_log_std: -0.5,
            actor_init_gain: 0.01,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("ppo: {m}")));
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be > 0");
        }
        if !(self.target_kl > 0.0) {
            return bad("target_kl must be > 0");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be > 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.epochs_per_update == 0 || self.batch == 0 || self.rollout == 0 {
            return bad("epochs, batch and rollout must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        Ok(())
    }
}

/// Summary of one [`PpoAgent::update`].
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PpoDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean KL(old || new) of the policy that the update leaves in place.
    pub kl: f64,
    pub clip_fraction: f64,
    pub epochs_completed: usize,
    /// The last epoch overshot the KL limit and was undone.
    pub rolled_back: bool,
    /// Largest `|ratio - 1|` before any parameter moved.
    pub initial_ratio_deviation: f64,
    pub grad_norm: f64,
}

/// Log-density of `z` under independent normals with the given means and
/// log standard deviations.
pub fn gaussian_log_prob(z: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let half_log_two_pi = 0.5 * (2.0 * PI).ln();
    z.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((z, m), ls)| {
            let u = (z - m) / ls.exp();
            -0.5 * u * u - ls - half_log_two_pi
        })
        .sum()
}

fn gaussian_kl(m_old: &[f64], ls_old: &[f64], m_new: &[f64], ls_new: &[f64]) -> f64 {
    (0..m_old.len())
        .map(|j| {
            let v_old = (2.0 * ls_old[j]).exp();
            let v_new = (2.0 * ls_new[j]).exp();
            let dm = m_old[j] - m_new[j];
            ls_new[j] - ls_old[j] + (v_old + dm * dm) / (2.0 * v_new) - 0.5
        })
        .sum()
}

/// Generalized advantage estimates and the matching value targets.
pub(crate) fn gae(rewards: &[f64], values: &[f64], next_values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * cont * next_values[t] - values[t];
        running = delta + gamma * lambda * cont * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Clipped-surrogate policy gradient agent with a Gaussian over logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoAgent {
    cfg: PpoConfig,
    offsets: Vec<usize>,
    state_scale: f64,
    actor: Mlp,
    log_std: Vec<f64>,
    critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    #[serde(with = "rng::saved")]
    rng: ChaCha8Rng,
}

impl PpoAgent {
    pub fn new(net: &OverlayNetwork, cfg: PpoConfig, state_scale: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if !(state_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("state scale {state_scale} must be > 0")));
        }
        let mut init = rng::keyed(&[PPO_STREAM, seed, 0]);
        let k = net.tunnel_count();
        let p = net.path_count();
        let dims = |out: usize| -> Vec<usize> {
            let mut d = vec![k];
            d.extend(&cfg.hidden);
            d.push(out);
            d
        };
        let actor = Mlp::random(&dims(p), Activation::Linear, cfg.actor_init_gain, &mut init)?;
        let critic = Mlp::random(&dims(1), Activation::Linear, 1.0, &mut init)?;
        let adam = AdamConfig::with_lr(cfg.learning_rate);
        Ok(Self {
            actor_opt: Adam::new(actor.param_count() + p, adam.clone()),
            critic_opt: Adam::new(critic.param_count(), adam),
            log_std: vec![cfg.init_log_std; p],
            offsets: net.offsets().to_vec(),
            state_scale,
            actor,
            critic,
            rng: rng::keyed(&[PPO_STREAM, seed, 1]),
            cfg,
        })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    fn input(&self, state: &DemandVector) -> Result<Vec<f64>> {
        ensure_len("state", self.actor.input_dim(), state.len())?;
        Ok(super::normalize_state(state, self.state_scale))
    }

    /// Samples logits when exploring; otherwise uses the mean logits and
    /// reports no log-probability.
    pub fn act(&mut self, state: &DemandVector, explore: bool) -> Result<Act> {
        let mean = self.actor.forward(&self.input(state)?)?;
        let (logits, log_prob) = if explore {
            let z: Vec<f64> = mean
                .iter()
                .zip(&self.log_std)
                .map(|(m, ls)| {
                    let xi: f64 = StandardNormal.sample(&mut self.rng);
                    m + ls.exp() * xi
                })
                .collect();
            let lp = gaussian_log_prob(&z, &mean, &self.log_std);
            (z, Some(lp))
        } else {
            (mean, None)
        };
        Ok(Act {
            action: action_from_logits(&logits, &self.offsets)?,
            logits,
            log_prob,
        })
    }

    /// State value estimate.
    pub fn value(&self, state: &DemandVector) -> Result<f64> {
        Ok(self.critic.forward(&self.input(state)?)?[0])
    }

    fn policy_params(&self) -> Vec<f64> {
        self.actor.params().iter().chain(&self.log_std).copied().collect()
    }

    fn set_policy_params(&mut self, p: &[f64]) {
        let na = self.actor.param_count();
        self.actor.params_mut().copy_from_slice(&p[..na]);
        self.log_std.copy_from_slice(&p[na..]);
    }

    fn mean_kl(&self, s: &Array2<f64>, m_old: &Array2<f64>, ls_old: &[f64]) -> Result<f64> {
        let m_new = self.actor.forward_batch(s.view())?;
        let total: f64 = m_old
            .rows()
            .into_iter()
            .zip(m_new.rows())
            .map(|(a, b)| gaussian_kl(a.as_slice().unwrap(), ls_old, b.as_slice().unwrap(), &self.log_std))
            .sum();
        Ok(total / s.nrows() as f64)
    }

    /// One clipped-surrogate update over an on-policy rollout.
    pub fn update(&mut self, rollout: &[Experience]) -> Result<PpoDiagnostics> {
        let n = rollout.len();
        if n != self.cfg.rollout {
            return Err(Error::InsufficientData(format!(
                "ppo rollout has {n} experiences, expected {}",
                self.cfg.rollout
            )));
        }
        let k = self.actor.input_dim();
        let p = self.actor.output_dim();
        let mut lp_old = Vec::with_capacity(n);
        for (i, e) in rollout.iter().enumerate() {
            lp_old.push(e.log_prob.ok_or_else(|| {
                Error::InvalidConfig(format!("experience {i} has no log-probability; ppo needs exploring actions"))
            })?);
            ensure_len("raw logits", p, e.raw_logits.len())?;
        }
        let s = states_matrix(rollout.iter().map(|e| &e.state), n, k, self.state_scale)?;
        let s_next = states_matrix(rollout.iter().map(|e| &e.next_state), n, k, self.state_scale)?;
        let z = Array2::from_shape_vec((n, p), rollout.iter().flat_map(|e| e.raw_logits.iter().copied()).collect()).unwrap();

        let values = self.critic.forward_batch(s.view())?.into_raw_vec_and_offset().0;
        let next_values = self.critic.forward_batch(s_next.view())?.into_raw_vec_and_offset().0;
        let rewards: Vec<f64> = rollout.iter().map(|e| e.reward).collect();
        let dones: Vec<bool> = rollout.iter().map(|e| e.done).collect();
        let (mut adv, ret) = gae(&rewards, &values, &next_values, &dones, self.cfg.gamma, self.cfg.gae_lambda);
        if self.cfg.normalize_advantages {
            let mean = adv.iter().sum::<f64>() / n as f64;
            let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            adv.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));
        }

        let m_old = self.actor.forward_batch(s.view())?;
        let ls_old = self.log_std.clone();
        let mut diag = PpoDiagnostics::default();
        for (i, &lp0) in lp_old.iter().enumerate() {
            let lp = gaussian_log_prob(z.row(i).as_slice().unwrap(), m_old.row(i).as_slice().unwrap(), &ls_old);
            diag.initial_ratio_deviation = diag.initial_ratio_deviation.max(((lp - lp0).exp() - 1.0).abs());
        }

        let na = self.actor.param_count();
        let mut pol_grads = vec![0.0; na + p];
        let mut val_grads = vec![0.0; self.critic.param_count()];
        let mut order: Vec<usize> = (0..n).collect();
        let mut kl_prev = 0.0;

        for _epoch in 0..self.cfg.epochs_per_update {
            let snapshot = (self.policy_params(), self.actor_opt.clone());
            order.shuffle(&mut self.rng);
            let mut clipped = 0usize;
            let (mut pol_loss_sum, mut val_loss_sum, mut batches) = (0.0, 0.0, 0usize);

            for chunk in order.chunks(self.cfg.batch) {
                let b = chunk.len();
                let sb = s.select(ndarray::Axis(0), chunk);
                let zb = z.select(ndarray::Axis(0), chunk);
                let cache = self.actor.forward_train(sb.clone())?;
                let mean = cache.output();
                let sd: Vec<f64> = self.log_std.iter().map(|l| l.exp()).collect();

                let mut dmean = Array2::<f64>::zeros((b, p));
                let mut dls = vec![0.0; p];
                let mut loss = 0.0;
                for (r, &i) in chunk.iter().enumerate() {
                    let lp = gaussian_log_prob(zb.row(r).as_slice().unwrap(), mean.row(r).as_slice().unwrap(), &self.log_std);
                    let ratio = (lp - lp_old[i]).exp();
                    let a = adv[i];
                    let clip_r = ratio.clamp(1.0 - self.cfg.clip_eps, 1.0 + self.cfg.clip_eps);
                    loss -= (ratio * a).min(clip_r * a);
                    if (ratio - 1.0).abs() > self.cfg.clip_eps {
                        clipped += 1;
                    }
                    let active = if a >= 0.0 { ratio <= 1.0 + self.cfg.clip_eps } else { ratio >= 1.0 - self.cfg.clip_eps };
                    if !active {
                        continue;
                    }
                    let dlp = -ratio * a / b as f64;
                    for j in 0..p {
                        let u = (zb[[r, j]] - mean[[r, j]]) / sd[j];
                        dmean[[r, j]] = dlp * u / sd[j];
                        dls[j] += dlp * (u * u - 1.0);
                    }
                }
                pol_loss_sum += loss / b as f64;
                self.actor.backward(&cache, dmean.view(), &mut pol_grads[..na])?;
                pol_grads[na..].copy_from_slice(&dls);
                let mut params = self.policy_params();
                diag.grad_norm = self.actor_opt.step(&mut params, &mut pol_grads, Some(self.cfg.grad_clip))?;
                self.set_policy_params(&params);

                let vcache = self.critic.forward_train(sb)?;
                let v = vcache.output();
                let mut dv = Array2::<f64>::zeros((b, 1));
                let mut vloss = 0.0;
                for (r, &i) in chunk.iter().enumerate() {
                    let err = v[[r, 0]] - ret[i];
                    vloss += err * err / b as f64;
                    dv[[r, 0]] = 2.0 * err / b as f64;
                }
                val_loss_sum += vloss;
                self.critic.backward(&vcache, dv.view(), &mut val_grads)?;
                self.critic_opt.step(self.critic.params_mut(), &mut val_grads, Some(self.cfg.grad_clip))?;
                batches += 1;
            }

            let kl = self.mean_kl(&s, &m_old, &ls_old)?;
            if kl > KL_LIMIT_FACTOR * self.cfg.target_kl {
                self.set_policy_params(&snapshot.0);
                self.actor_opt = snapshot.1;
                diag.rolled_back = true;
                diag.kl = kl_prev;
                break;
            }
            diag.kl = kl;
            diag.epochs_completed += 1;
            diag.policy_loss = pol_loss_sum / batches as f64;
            diag.value_loss = val_loss_sum / batches as f64;
            diag.clip_fraction = clipped as f64 / n as f64;
            kl_prev = kl;
            if kl > KL_STOP_FACTOR * self.cfg.target_kl {
                break;
            }
        }
        Ok(diag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, RewardConfig};
    use crate::topo::build_hub_spoke;
    use crate::traffic::TrafficConfig;
    use std::sync::Arc;

    fn small_cfg() -> PpoConfig {
        PpoConfig {
            hidden: vec![16, 16],
            rollout: 64,
            batch: 64,
            learning_rate: 1e-3,
            ..Default::default()
        }
    }

    fn net() -> Arc<OverlayNetwork> {
        Arc::new(build_hub_spoke(3, 15.0, 6.0, 0.001).unwrap())
    }

    fn collect(agent: &mut PpoAgent, net: &Arc<OverlayNetwork>, n: usize) -> Vec<Experience> {
        let mut env = Environment::new(net.clone(), TrafficConfig::default(), RewardConfig::default(), 32, 0).unwrap();
        (0..n)
            .map(|_| {
                let s = env.state().clone();
                let act = agent.act(&s, true).unwrap();
                let tr = env.step(&act.action).unwrap();
                Experience {
                    state: s,
                    deployed_action: act.action.clone(),
                    raw_action: act.action,
                    raw_logits: act.logits,
                    log_prob: act.log_prob,
                    reward: tr.outcome.reward,
                    next_state: tr.next_state,
                    done: tr.done,
                }
            })
            .collect()
    }

    #[test]
    fn zero_actor_gives_even_splits() {
        let net = net();
        let mut agent = PpoAgent::new(&net, small_cfg(), 15.0, 0).unwrap();
        agent.actor.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let act = agent.act(&DemandVector::new(0, vec![1.0; 6]).unwrap(), false).unwrap();
        assert!(act.action.ratios().iter().all(|&x| x == 0.5));
        assert!(act.log_prob.is_none());
    }

    #[test]
    fn log_prob_matches_density_formula() {
        let net = net();
        let mut agent = PpoAgent::new(&net, small_cfg(), 15.0, 3).unwrap();
        agent.log_std = (0..12).map(|j| -1.0 + 0.1 * j as f64).collect();
        let s = DemandVector::new(0, vec![2.0, 3.0, 1.0, 0.5, 4.0, 2.5]).unwrap();
        for _ in 0..20 {
            let act = agent.act(&s, true).unwrap();
            let mean = agent.actor.forward(&super::super::normalize_state(&s, 15.0)).unwrap();
            // Product of univariate densities, evaluated independently.
            let density: f64 = (0..12)
                .map(|j| {
                    let sd = agent.log_std[j].exp();
                    (-(act.logits[j] - mean[j]).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * PI).sqrt())
                })
                .product();
            assert!((act.log_prob.unwrap() - density.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic_act_repeats() {
        let net = net();
        let mut agent = PpoAgent::new(&net, small_cfg(), 15.0, 1).unwrap();
        let s = DemandVector::new(0, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(agent.act(&s, false).unwrap(), agent.act(&s, false).unwrap());
    }

    #[test]
    fn gae_constant_reward_approaches_geometric_sum() {
        let gamma = 0.7;
        let n = 200;
        let r = vec![-2.0; n];
        let zeros = vec![0.0; n];
        let (_, ret) = gae(&r, &zeros, &zeros, &vec![false; n], gamma, 1.0);
        assert!((ret[0] - (-2.0 / (1.0 - gamma))).abs() < 1e-12);
        let (_, short) = gae(&r[..5], &zeros[..5], &zeros[..5], &[false; 5], gamma, 1.0);
        assert!(short[0] > ret[0]);
    }

    #[test]
    fn gae_zero_lambda_is_td_error() {
        let (adv, _) = gae(&[1.0, 2.0], &[0.5, 0.25], &[0.25, 4.0], &[false, true], 0.9, 0.0);
        assert_eq!(adv, vec![1.0 + 0.9 * 0.25 - 0.5, 2.0 - 0.25]);
    }

    #[test]
    fn first_epoch_ratios_are_one() {
        let net = net();
        let mut agent = PpoAgent::new(&net, small_cfg(), 15.0, 4).unwrap();
        let roll = collect(&mut agent, &net, 64);
        let d = agent.update(&roll).unwrap();
        assert!(d.initial_ratio_deviation < 1e-6, "{}", d.initial_ratio_deviation);
    }

    #[test]
    fn zero_advantage_leaves_policy_unchanged() {
        let net = net();
        let mut cfg = small_cfg();
        cfg.gamma = 0.0;
        let mut agent = PpoAgent::new(&net, cfg, 15.0, 5).unwrap();
        let mut roll = collect(&mut agent, &net, 64);
        // With gamma 0 the advantage is r - V(s); make it zero.
        for e in roll.iter_mut() {
            e.reward = agent.value(&e.state).unwrap();
        }
        let before = (agent.actor.clone(), agent.log_std.clone());
        let d = agent.update(&roll).unwrap();
        assert_eq!(agent.actor, before.0);
        assert_eq!(agent.log_std, before.1);
        assert_eq!(d.clip_fraction, 0.0);
    }

    #[test]
    fn kl_stays_within_limit() {
        let net = net();
        let mut cfg = small_cfg();
        cfg.learning_rate = 3e-2;
        let mut agent = PpoAgent::new(&net, cfg.clone(), 15.0, 6).unwrap();
        for _ in 0..5 {
            let roll = collect(&mut agent, &net, 64);
            let d = agent.update(&roll).unwrap();
            assert!((0.0..=2.0 * cfg.target_kl).contains(&d.kl), "{d:?}");
        }
    }

    #[test]
    fn missing_log_prob_rejected() {
        let net = net();
        let mut agent = PpoAgent::new(&net, small_cfg(), 15.0, 7).unwrap();
        let mut roll = collect(&mut agent, &net, 64);
        roll[3].log_prob = None;
        assert!(agent.update(&roll).is_err());
        assert!(agent.update(&roll[..10]).is_err());
    }

    #[test]
    fn gaussian_kl_properties() {
        assert_eq!(gaussian_kl(&[1.0], &[0.2], &[1.0], &[0.2]), 0.0);
        // Equal variances: KL = dm^2 / (2 var).
        let kl = gaussian_kl(&[0.0], &[0.0], &[0.5], &[0.0]);
        assert!((kl - 0.125).abs() < 1e-15);
    }
}
