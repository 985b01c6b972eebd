//! Per-ego risk monitoring and the hysteresis policy switch.
//!
//! A gatekeeper estimates Cumulative Risk Exposure by rolling cloned worlds
//! forward under perturbed behaviour and averaging the discounted ego loss.
//! With entropy terms dropped this is exactly the discounted expected loss.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{interpolate_params, PolicyKind, PolicyParams, PresetTable, VehicleId, VehicleState};
use crate::error::{Error, Result};
use crate::fep::cumulative_risk;
use crate::reward::RewardConfig;
use crate::world::{Perturbation, WorldState};

/// Steps a policy change takes to complete.
pub const TRANSITION_STEPS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MCConfig {
    pub n_mc: usize,
    /// Rollout length in world steps.
    pub horizon: u32,
    /// World steps between evaluations.
    pub cadence: u32,
    /// Std dev of per-substep acceleration noise on non-exempt vehicles, m/s².
    pub accel_noise_sigma: f64,
    pub lane_change_flip_prob: f64,
    /// Mixed into every rollout seed so independent batches can be drawn from one world.
    pub rollout_stream: u64,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self {
            n_mc: 128,
            horizon: 10,
            cadence: 5,
            accel_noise_sigma: 0.5,
            lane_change_flip_prob: 0.05,
            rollout_stream: 0,
        }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 {
            return Err(Error::domain("n_mc must be at least 1"));
        }
        if self.horizon == 0 || self.cadence == 0 {
            return Err(Error::domain("horizon and cadence must be at least 1"));
        }
        if !(self.accel_noise_sigma >= 0.0 && self.accel_noise_sigma.is_finite()) {
            return Err(Error::domain("accel_noise_sigma must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.lane_change_flip_prob) {
            return Err(Error::domain("lane_change_flip_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for rollout `index` of the evaluation at `step` in the world seeded `world_seed`.
pub fn rollout_seed(world_seed: u64, step: u32, stream: u64, index: usize) -> u64 {
    let mut h = splitmix64(world_seed);
    h = splitmix64(h ^ u64::from(step));
    h = splitmix64(h ^ stream);
    splitmix64(h ^ index as u64)
}

/// Per-step ego losses of one rollout, indexed `[ego][t]`.
pub fn rollout_losses(
    world: &WorldState,
    seed: u64,
    config: &MCConfig,
    reward: &RewardConfig,
    exempt: &[VehicleId],
) -> Result<BTreeMap<VehicleId, Vec<f64>>> {
    if world.terminated().is_some() {
        return Err(Error::State("cannot roll out a terminated world".into()));
    }
    let mut sim = world.fork(seed);
    sim.disable_termination();
    sim.set_perturbation(Some(Perturbation {
        accel_noise_sigma: config.accel_noise_sigma,
        lane_change_flip_prob: config.lane_change_flip_prob,
        exempt: exempt.to_vec(),
    }));
    let mut losses: BTreeMap<VehicleId, Vec<f64>> = world
        .ego_ids()
        .map(|id| (id, Vec::with_capacity(config.horizon as usize)))
        .collect();
    for _ in 0..config.horizon {
        sim.step()?;
        for (id, r) in sim.score_egos(reward) {
            losses.get_mut(&id).expect("ego set is fixed").push(r.loss);
        }
    }
    Ok(losses)
}

/// Discounted loss per ego over one rollout of `config.horizon` steps.
///
/// `exempt` vehicles (the monitored egos) keep their own controllers free of
/// noise and lane-change flips.
pub fn rollout(
    world: &WorldState,
    seed: u64,
    config: &MCConfig,
    reward: &RewardConfig,
    exempt: &[VehicleId],
) -> Result<BTreeMap<VehicleId, f64>> {
    rollout_losses(world, seed, config, reward, exempt)?
        .into_iter()
        .map(|(id, l)| Ok((id, cumulative_risk(&l, reward.gamma)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub vehicle_id: VehicleId,
    /// Mean discounted rollout loss.
    pub cre: f64,
    /// Discounted sum of the per-step expected losses. Equals `cre` up to rounding.
    pub energy_mean: f64,
    /// Expected loss at each rollout step, averaged over rollouts.
    pub per_step_energy: Vec<f64>,
    /// Sample standard deviation of the discounted loss (n − 1 denominator).
    pub sample_std: f64,
    pub n_samples: usize,
}

impl RiskEstimate {
    pub fn standard_error(&self) -> f64 {
        self.sample_std / (self.n_samples as f64).sqrt()
    }

    /// Undiscounted expected loss per rollout step.
    pub fn mean_step_energy(&self) -> f64 {
        self.per_step_energy.iter().sum::<f64>() / self.per_step_energy.len() as f64
    }
}

/// One shared batch of `n_mc` rollouts scores every ego.
pub fn estimate_cre(
    world: &WorldState,
    config: &MCConfig,
    reward: &RewardConfig,
    exempt: &[VehicleId],
) -> Result<BTreeMap<VehicleId, RiskEstimate>> {
    config.validate()?;
    let step = world.step_count();
    let batch: Vec<BTreeMap<VehicleId, Vec<f64>>> = (0..config.n_mc)
        .into_par_iter()
        .map(|i| {
            let seed = rollout_seed(world.seed(), step, config.rollout_stream, i);
            rollout_losses(world, seed, config, reward, exempt)
        })
        .collect::<Result<_>>()?;

    let n = config.n_mc as f64;
    let horizon = config.horizon as usize;
    let mut out = BTreeMap::new();
    for id in world.ego_ids() {
        let discounted: Vec<f64> = batch
            .iter()
            .map(|b| cumulative_risk(&b[&id], reward.gamma))
            .collect::<Result<_>>()?;
        // Shifted by the first sample so identical rollouts give an exact mean and zero spread.
        let first = discounted[0];
        let cre = first + discounted.iter().map(|d| d - first).sum::<f64>() / n;
        let sample_std = if config.n_mc > 1 {
            (discounted.iter().map(|d| (d - cre).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let per_step_energy: Vec<f64> = (0..horizon)
            .map(|t| batch.iter().map(|b| b[&id][t]).sum::<f64>() / n)
            .collect();
        let energy_mean = cumulative_risk(&per_step_energy, reward.gamma)?;
        out.insert(
            id,
            RiskEstimate {
                vehicle_id: id,
                cre,
                energy_mean,
                per_step_energy,
                sample_std,
                n_samples: config.n_mc,
            },
        );
    }
    Ok(out)
}

/// Mean CRE over the online egos within `radius` metres of each online ego (itself included).
pub fn neighborhood_average(
    risks: &BTreeMap<VehicleId, RiskEstimate>,
    world: &WorldState,
    radius: f64,
) -> BTreeMap<VehicleId, f64> {
    let road = world.geometry();
    let position = |id: VehicleId| world.vehicle(id).map(|v| v.position);
    risks
        .iter()
        .map(|(&id, own)| {
            let Some(here) = position(id) else {
                return (id, own.cre);
            };
            let (sum, count) = risks
                .iter()
                .filter(|(&other, _)| position(other).is_some_and(|p| road.ring_distance(here, p) <= radius))
                .fold((0.0, 0usize), |(s, c), (_, r)| (s + r.cre, c + 1));
            (id, sum / count as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub rho_star: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
}

impl Thresholds {
    pub fn new(rho_star: f64) -> Result<Self> {
        if !(rho_star > 0.0 && rho_star.is_finite()) {
            return Err(Error::domain(format!("rho_star must be positive and finite, got {rho_star}")));
        }
        Ok(Self {
            rho_star,
            rho_plus: 1.1 * rho_star,
            rho_minus: 0.9 * rho_star,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hotshot,
    Defensive,
}

impl Mode {
    pub fn policy(self) -> PolicyKind {
        match self {
            Mode::Hotshot => PolicyKind::Hotshot,
            Mode::Defensive => PolicyKind::Defensive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: PolicyParams,
    pub to: PolicyParams,
    pub steps_remaining: u32,
}

impl Transition {
    pub fn fraction(&self) -> f64 {
        f64::from(TRANSITION_STEPS - self.steps_remaining) / f64::from(TRANSITION_STEPS)
    }

    pub fn current_params(&self) -> Result<PolicyParams> {
        interpolate_params(&self.from, &self.to, self.fraction())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatekeeperState {
    pub vehicle_id: VehicleId,
    /// Target mode; switches as soon as a transition begins.
    pub mode: Mode,
    pub transition: Option<Transition>,
    pub last_risk: Option<f64>,
}

impl GatekeeperState {
    pub fn new(vehicle_id: VehicleId, mode: Mode) -> Self {
        Self {
            vehicle_id,
            mode,
            transition: None,
            last_risk: None,
        }
    }
}

/// Hysteresis switch. `current` are the vehicle's active parameters, the
/// starting point of any new transition.
pub fn decide(
    state: &GatekeeperState,
    averaged_risk: f64,
    thresholds: &Thresholds,
    presets: &PresetTable,
    current: &PolicyParams,
) -> GatekeeperState {
    let target = match state.mode {
        Mode::Hotshot if averaged_risk > thresholds.rho_plus => Some(Mode::Defensive),
        Mode::Defensive if averaged_risk < thresholds.rho_minus => Some(Mode::Hotshot),
        _ => None,
    };
    let mut next = state.clone();
    next.last_risk = Some(averaged_risk);
    if let Some(mode) = target {
        next.mode = mode;
        next.transition = Some(Transition {
            from: *current,
            to: presets.get(mode.policy()).params,
            steps_remaining: TRANSITION_STEPS,
        });
    }
    next
}

/// Advances the active transition by one step and writes the blended
/// parameters into the vehicle.
pub fn apply_transition(state: &mut GatekeeperState, vehicle: &mut VehicleState) -> Result<()> {
    let Some(t) = state.transition.as_mut() else {
        return Err(Error::State(format!("vehicle {} has no active transition", state.vehicle_id)));
    };
    t.steps_remaining -= 1;
    vehicle.active_params = t.current_params()?;
    if t.steps_remaining == 0 {
        vehicle.active_params = t.to;
        state.transition = None;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Role;
    use crate::world::{init_world, SimConfig};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn world(seed: u64) -> WorldState {
        init_world(Arc::new(SimConfig::default()), seed).unwrap()
    }

    fn quiet() -> MCConfig {
        MCConfig {
            n_mc: 4,
            accel_noise_sigma: 0.0,
            lane_change_flip_prob: 0.0,
            ..MCConfig::default()
        }
    }

    fn estimate(id: VehicleId, cre: f64) -> (VehicleId, RiskEstimate) {
        (
            id,
            RiskEstimate {
                vehicle_id: id,
                cre,
                energy_mean: cre,
                per_step_energy: vec![cre],
                sample_std: 0.0,
                n_samples: 1,
            },
        )
    }

    fn hotshot_state() -> GatekeeperState {
        GatekeeperState::new(0, Mode::Hotshot)
    }

    #[test]
    fn zero_noise_rollout_matches_plain_evolution() {
        let w = world(3);
        let reward = RewardConfig::default();
        let cfg = quiet();
        let got = rollout(&w, 123, &cfg, &reward, &[]).unwrap();

        let mut plain = w.clone();
        plain.disable_termination();
        let mut losses: BTreeMap<VehicleId, Vec<f64>> = BTreeMap::new();
        for _ in 0..cfg.horizon {
            for (id, r) in plain.step().unwrap().per_ego_rewards {
                losses.entry(id).or_default().push(r.loss);
            }
        }
        for (id, l) in losses {
            let expected = cumulative_risk(&l, reward.gamma).unwrap();
            assert_eq!(got[&id], expected);
        }
    }

    #[test]
    fn same_seed_same_rollout() {
        let w = world(4);
        let cfg = MCConfig::default();
        let reward = RewardConfig::default();
        let a = rollout(&w, 9, &cfg, &reward, &[0]).unwrap();
        let b = rollout(&w, 9, &cfg, &reward, &[0]).unwrap();
        assert_eq!(a, b);
        let c = rollout(&w, 10, &cfg, &reward, &[0]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constant_loss_with_unit_discount_sums() {
        // One stationary ego alone in its lane: constant loss every step.
        let cfg = Arc::new(SimConfig {
            n_ego: 1,
            n_alter: 0,
            n_tracked: 1,
            ..SimConfig::default()
        });
        let mut w = init_world(cfg, 0).unwrap();
        let params = w.vehicle(0).unwrap().active_params;
        let v = w.vehicle_mut(0).unwrap();
        v.speed = params.desired_speed;
        let reward = RewardConfig {
            gamma: 1.0,
            ..RewardConfig::default()
        };
        let per_step = w.score_egos(&reward)[&0].loss;
        let got = rollout(&w, 0, &quiet(), &reward, &[]).unwrap();
        assert_abs_diff_eq!(got[&0], 10.0 * per_step, epsilon = 1e-12);
    }

    #[test]
    fn terminated_world_cannot_roll_out() {
        let cfg = Arc::new(SimConfig {
            n_steps: 1,
            ..SimConfig::default()
        });
        let mut w = init_world(cfg, 0).unwrap();
        w.step().unwrap();
        let err = rollout(&w, 0, &MCConfig::default(), &RewardConfig::default(), &[]).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn estimate_single_rollout_and_zero_noise() {
        let w = world(5);
        let reward = RewardConfig::default();
        let one = MCConfig {
            n_mc: 1,
            ..MCConfig::default()
        };
        let est = estimate_cre(&w, &one, &reward, &[]).unwrap();
        let seed = rollout_seed(w.seed(), 0, 0, 0);
        let direct = rollout(&w, seed, &one, &reward, &[]).unwrap();
        for (id, e) in &est {
            assert_eq!(e.cre, direct[id]);
            assert_eq!(e.n_samples, 1);
        }

        let est = estimate_cre(&w, &quiet(), &reward, &[]).unwrap();
        for e in est.values() {
            assert_eq!(e.sample_std, 0.0);
            assert_abs_diff_eq!(e.cre, e.energy_mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn estimate_rejects_zero_rollouts() {
        let cfg = MCConfig {
            n_mc: 0,
            ..MCConfig::default()
        };
        let err = estimate_cre(&world(1), &cfg, &RewardConfig::default(), &[]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn estimate_is_independent_of_thread_count() {
        let w = world(6);
        let cfg = MCConfig {
            n_mc: 16,
            ..MCConfig::default()
        };
        let reward = RewardConfig::default();
        let parallel = estimate_cre(&w, &cfg, &reward, &[0, 1]).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| estimate_cre(&w, &cfg, &reward, &[0, 1]).unwrap());
        assert_eq!(parallel, single);
        for e in parallel.values() {
            assert_abs_diff_eq!(e.cre, e.energy_mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn neighborhood_examples() {
        let w = world(2);
        let lone: BTreeMap<_, _> = [estimate(0, 1.7)].into();
        assert_eq!(neighborhood_average(&lone, &w, 60.0)[&0], 1.7);

        let mut w = world(2);
        w.vehicle_mut(0).unwrap().position = 100.0;
        w.vehicle_mut(1).unwrap().position = 130.0;
        w.vehicle_mut(2).unwrap().position = 500.0;
        let risks: BTreeMap<_, _> = [estimate(0, 1.0), estimate(1, 3.0), estimate(2, 7.0)].into();
        let avg = neighborhood_average(&risks, &w, 60.0);
        assert_eq!(avg[&0], 2.0);
        assert_eq!(avg[&1], 2.0);
        assert_eq!(avg[&2], 7.0);
    }

    #[test]
    fn neighborhood_wraps_around_the_ring() {
        let mut w = world(2);
        w.vehicle_mut(0).unwrap().position = 990.0;
        w.vehicle_mut(1).unwrap().position = 20.0;
        let risks: BTreeMap<_, _> = [estimate(0, 0.0), estimate(1, 4.0)].into();
        assert_eq!(neighborhood_average(&risks, &w, 60.0)[&0], 2.0);
    }

    #[test]
    fn thresholds_scale() {
        let t = Thresholds::new(2.0).unwrap();
        assert_abs_diff_eq!(t.rho_plus, 2.2, epsilon = 1e-15);
        assert_abs_diff_eq!(t.rho_minus, 1.8, epsilon = 1e-15);
        assert!(Thresholds::new(0.0).is_err());
        assert!(Thresholds::new(-1.0).is_err());
    }

    #[test]
    fn decide_examples() {
        let t = Thresholds::new(2.0).unwrap();
        let presets = PresetTable::default();
        let hot = presets.hotshot;

        let s = decide(&hotshot_state(), 2.0, &t, &presets, &hot);
        assert_eq!(s.mode, Mode::Hotshot);
        assert!(s.transition.is_none());
        assert_eq!(s.last_risk, Some(2.0));

        let s = decide(&hotshot_state(), 2.3, &t, &presets, &hot);
        assert_eq!(s.mode, Mode::Defensive);
        let tr = s.transition.unwrap();
        assert_eq!((tr.from, tr.to, tr.steps_remaining), (hot, presets.defensive, 10));

        let d = GatekeeperState::new(0, Mode::Defensive);
        assert_eq!(decide(&d, 2.0, &t, &presets, &presets.defensive).mode, Mode::Defensive);
        assert_eq!(decide(&d, 1.7, &t, &presets, &presets.defensive).mode, Mode::Hotshot);
    }

    fn vehicle() -> VehicleState {
        VehicleState {
            id: 0,
            role: Role::Ego,
            lane: 0,
            position: 0.0,
            speed: 30.0,
            length: 5.0,
            crashed: false,
            active_params: PolicyParams::hotshot(),
            cooldown_remaining: 0,
        }
    }

    #[test]
    fn graduation_endpoints() {
        let t = Thresholds::new(2.0).unwrap();
        let presets = PresetTable::default();
        let mut v = vehicle();
        let mut s = decide(&hotshot_state(), 5.0, &t, &presets, &v.active_params);

        apply_transition(&mut s, &mut v).unwrap();
        let first = interpolate_params(&presets.hotshot, &presets.defensive, 0.1).unwrap();
        assert_eq!(v.active_params, first);
        assert_eq!(s.transition.unwrap().steps_remaining, 9);

        for _ in 1..10 {
            apply_transition(&mut s, &mut v).unwrap();
        }
        assert_eq!(v.active_params, presets.defensive);
        assert!(s.transition.is_none());
        assert!(matches!(apply_transition(&mut s, &mut v), Err(Error::State(_))));
    }

    #[test]
    fn retarget_starts_from_midpoint() {
        let t = Thresholds::new(2.0).unwrap();
        let presets = PresetTable::default();
        let mut v = vehicle();
        let mut s = decide(&hotshot_state(), 5.0, &t, &presets, &v.active_params);
        for _ in 0..5 {
            apply_transition(&mut s, &mut v).unwrap();
        }
        let midpoint = interpolate_params(&presets.hotshot, &presets.defensive, 0.5).unwrap();
        assert_eq!(v.active_params, midpoint);

        let s = decide(&s, 0.0, &t, &presets, &v.active_params);
        let tr = s.transition.unwrap();
        assert_eq!(s.mode, Mode::Hotshot);
        assert_eq!(tr.from, midpoint);
        assert_eq!(tr.steps_remaining, 10);
        assert_eq!(tr.current_params().unwrap(), midpoint);
    }
}
