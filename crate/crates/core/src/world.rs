//! The authoritative world: a multi-lane ring populated by egos and alters.
//!
//! One world step is `substeps × dt` seconds of simulated time (1 s by
//! default). Each substep computes IDM accelerations against the same-lane
//! leader, integrates with semi-implicit Euler and checks for collisions.
//! Lane changes are decided once per world step, after the physics, in
//! ascending id order on a common snapshot and applied together.
//!
//! All randomness comes from the world's own ChaCha stream, so a world is a
//! pure function of `(config, seed)` and every clone evolves bit-identically
//! to its original.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    idm_acceleration, lane_neighbours, mobil_lane_change, LaneDecision, Leader, PolicyKind, PresetTable, Role,
    VehicleId, VehicleState,
};
use crate::error::{Error, Result};
use crate::geometry::RoadGeometry;
use crate::reward::{score_vehicle, RewardBreakdown, RewardConfig};

/// Everything needed to build and advance a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub geometry: RoadGeometry,
    pub n_ego: usize,
    pub n_alter: usize,
    /// Egos (lowest ids first) whose crash ends a run.
    pub n_tracked: usize,
    /// Run length in world steps.
    pub n_steps: u32,
    pub substeps: u32,
    /// Physics substep, seconds.
    pub dt: f64,
    pub vehicle_length: f64,
    /// Hardest physically available braking, m/s². Crashed vehicles brake at this rate.
    pub brake_limit: f64,
    pub init_speed_min: f64,
    pub init_speed_max: f64,
    /// Crashed-vehicle count that counts as a jam.
    pub jam_threshold: usize,
    /// Policy every ego starts with. Derived from the experiment, not read from files.
    #[serde(skip)]
    pub ego_policy: PolicyKind,
    pub presets: PresetTable,
    pub reward: RewardConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: RoadGeometry::default(),
            n_ego: 12,
            n_alter: 12,
            n_tracked: 4,
            n_steps: 80,
            substeps: 10,
            dt: 0.1,
            vehicle_length: 5.0,
            brake_limit: 6.0,
            init_speed_min: 20.0,
            init_speed_max: 30.0,
            jam_threshold: 6,
            ego_policy: PolicyKind::Hotshot,
            presets: PresetTable::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn n_vehicles(&self) -> usize {
        self.n_ego + self.n_alter
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.presets.validate()?;
        self.reward.validate()?;
        if self.n_vehicles() == 0 {
            return Err(Error::Config("world needs at least one vehicle".into()));
        }
        if self.n_tracked > self.n_ego {
            return Err(Error::Config(format!(
                "n_tracked ({}) exceeds n_ego ({})",
                self.n_tracked, self.n_ego
            )));
        }
        if self.ego_policy == PolicyKind::Alter {
            return Err(Error::Config("egos must start as defensive or hotshot".into()));
        }
        if self.substeps == 0 || !(self.dt > 0.0) {
            return Err(Error::Config("substeps and dt must be positive".into()));
        }
        if !(self.vehicle_length > 0.0) || !(self.brake_limit > 0.0) {
            return Err(Error::Config("vehicle_length and brake_limit must be positive".into()));
        }
        if !(0.0 <= self.init_speed_min && self.init_speed_min <= self.init_speed_max) {
            return Err(Error::Config("initial speed range is empty or negative".into()));
        }
        if self.jam_threshold == 0 {
            return Err(Error::Config("jam_threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    TrackedCrash,
    Jam,
    HorizonReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Termination {
    pub reason: TerminationReason,
    /// Step counter value when the world stopped.
    pub step: u32,
}

/// Stochastic behaviour injected into rollout worlds.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub accel_noise_sigma: f64,
    pub lane_change_flip_prob: f64,
    /// Vehicles driven by their own unperturbed controller.
    pub exempt: Vec<VehicleId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub per_ego_rewards: BTreeMap<VehicleId, RewardBreakdown>,
    /// Newly detected `(lower id, higher id)` pairs.
    pub new_collisions: Vec<(VehicleId, VehicleId)>,
    pub terminated: Option<TerminationReason>,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    config: Arc<SimConfig>,
    vehicles: Vec<VehicleState>,
    step: u32,
    seed: u64,
    rng: ChaCha8Rng,
    tracked: Vec<VehicleId>,
    terminated: Option<Termination>,
    perturbation: Option<Perturbation>,
    check_termination: bool,
}

/// Builds the initial world for `seed`.
///
/// Vehicles occupy evenly spaced slots around the ring with a random role
/// permutation, random lane, jittered position and random speed. Jitter is
/// bounded so every pair keeps at least `length + 2·s0` between centres.
pub fn init_world(config: Arc<SimConfig>, seed: u64) -> Result<WorldState> {
    config.validate()?;
    let n = config.n_vehicles();
    let ring = config.geometry.ring_length;
    let p = &config.presets;
    let max_min_gap = p.defensive.min_gap.max(p.hotshot.min_gap).max(p.alter.min_gap);
    let required = config.vehicle_length + 2.0 * max_min_gap;
    let spacing = ring / n as f64;
    if spacing < required {
        return Err(Error::Placement {
            seed,
            reason: format!(
                "{n} vehicles on a {ring} m ring leave {spacing:.2} m each, need {required:.2} m"
            ),
        });
    }
    let jitter = 0.5 * (spacing - required);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    let ego_params = p.get(config.ego_policy).params;
    let mut vehicles = Vec::with_capacity(n);
    for (id, slot) in slots.into_iter().enumerate() {
        let (role, params) = if id < config.n_ego {
            (Role::Ego, ego_params)
        } else {
            (Role::Alter, p.alter)
        };
        let offset = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
        let lane = rng.random_range(0..config.geometry.lane_count);
        let speed = if config.init_speed_max > config.init_speed_min {
            rng.random_range(config.init_speed_min..config.init_speed_max)
        } else {
            config.init_speed_min
        };
        vehicles.push(VehicleState {
            id,
            role,
            lane,
            position: config.geometry.wrap(slot as f64 * spacing + offset),
            speed,
            length: config.vehicle_length,
            crashed: false,
            active_params: params,
            cooldown_remaining: 0,
        });
    }
    let tracked = (0..config.n_tracked).collect();
    Ok(WorldState {
        config,
        vehicles,
        step: 0,
        seed,
        rng,
        tracked,
        terminated: None,
        perturbation: None,
        check_termination: true,
    })
}

/// All same-lane pairs whose centres are closer than their mean length.
pub fn find_collisions(vehicles: &[VehicleState], road: &RoadGeometry) -> Vec<(VehicleId, VehicleId)> {
    let mut pairs = Vec::new();
    for (i, a) in vehicles.iter().enumerate() {
        for b in &vehicles[i + 1..] {
            if a.lane == b.lane && road.ring_distance(a.position, b.position) < 0.5 * (a.length + b.length) {
                pairs.push((a.id.min(b.id), a.id.max(b.id)));
            }
        }
    }
    pairs
}

impl WorldState {
    /// Builds a world from explicit vehicles, for scenario tests and tools.
    pub fn from_vehicles(config: Arc<SimConfig>, vehicles: Vec<VehicleState>, seed: u64) -> Result<Self> {
        config.validate()?;
        if vehicles.iter().enumerate().any(|(i, v)| v.id != i) {
            return Err(Error::Config("vehicle ids must equal their index".into()));
        }
        if vehicles.iter().any(|v| v.lane >= config.geometry.lane_count) {
            return Err(Error::Config("vehicle lane outside the road".into()));
        }
        let tracked = vehicles
            .iter()
            .filter(|v| v.role == Role::Ego)
            .map(|v| v.id)
            .take(config.n_tracked)
            .collect();
        Ok(Self {
            config,
            vehicles,
            step: 0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tracked,
            terminated: None,
            perturbation: None,
            check_termination: true,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn geometry(&self) -> &RoadGeometry {
        &self.config.geometry
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles.get(id)
    }

    pub fn vehicle_mut(&mut self, id: VehicleId) -> Option<&mut VehicleState> {
        self.vehicles.get_mut(id)
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tracked_ego_ids(&self) -> &[VehicleId] {
        &self.tracked
    }

    pub fn ego_ids(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.vehicles.iter().filter(|v| v.role == Role::Ego).map(|v| v.id)
    }

    pub fn terminated(&self) -> Option<Termination> {
        self.terminated
    }

    pub fn crashed_count(&self) -> usize {
        self.vehicles.iter().filter(|v| v.crashed).count()
    }

    /// Replaces the random stream, e.g. to give each rollout its own future.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn set_perturbation(&mut self, perturbation: Option<Perturbation>) {
        self.perturbation = perturbation;
    }

    /// Rollout worlds run to their horizon regardless of crashes.
    pub fn disable_termination(&mut self) {
        self.check_termination = false;
    }

    /// Deep copy with its own random stream.
    pub fn fork(&self, seed: u64) -> WorldState {
        let mut clone = self.clone();
        clone.reseed(seed);
        clone
    }

    /// Flags every vehicle in a same-lane overlap as crashed and returns the
    /// pairs involving at least one previously intact vehicle.
    pub fn detect_collisions(&mut self) -> Vec<(VehicleId, VehicleId)> {
        let pairs = find_collisions(&self.vehicles, &self.config.geometry);
        let mut fresh = Vec::new();
        for &(a, b) in &pairs {
            if !(self.vehicles[a].crashed && self.vehicles[b].crashed) {
                fresh.push((a, b));
            }
        }
        for &(a, b) in &pairs {
            self.vehicles[a].crashed = true;
            self.vehicles[b].crashed = true;
        }
        fresh
    }

    pub fn check_termination(&self) -> Option<TerminationReason> {
        if self.tracked.iter().any(|&id| self.vehicles[id].crashed) {
            Some(TerminationReason::TrackedCrash)
        } else if self.crashed_count() >= self.config.jam_threshold {
            Some(TerminationReason::Jam)
        } else if self.step >= self.config.n_steps {
            Some(TerminationReason::HorizonReached)
        } else {
            None
        }
    }

    /// Per-ego rewards for the current state.
    pub fn score_egos(&self, config: &RewardConfig) -> BTreeMap<VehicleId, RewardBreakdown> {
        self.vehicles
            .iter()
            .filter(|v| v.role == Role::Ego)
            .map(|v| (v.id, score_vehicle(v, &self.vehicles, &self.config.geometry, config)))
            .collect()
    }

    /// Advances one world step.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if let Some(t) = self.terminated {
            return Err(Error::State(format!(
                "world terminated at step {} ({:?})",
                t.step, t.reason
            )));
        }
        let mut new_collisions = Vec::new();
        let mut accel = vec![0.0; self.vehicles.len()];
        for _ in 0..self.config.substeps {
            self.compute_accelerations(&mut accel);
            self.perturb_accelerations(&mut accel);
            let dt = self.config.dt;
            for (v, a) in self.vehicles.iter_mut().zip(&accel) {
                v.speed = (v.speed + a * dt).max(0.0);
                v.position = self.config.geometry.wrap(v.position + v.speed * dt);
            }
            new_collisions.extend(self.detect_collisions());
        }

        for v in &mut self.vehicles {
            v.cooldown_remaining = v.cooldown_remaining.saturating_sub(1);
        }
        self.change_lanes()?;
        new_collisions.extend(self.detect_collisions());

        self.step += 1;
        let per_ego_rewards = self.score_egos(&self.config.reward);
        let terminated = if self.check_termination {
            self.check_termination()
        } else {
            None
        };
        self.terminated = terminated.map(|reason| Termination { reason, step: self.step });
        Ok(StepOutcome {
            per_ego_rewards,
            new_collisions,
            terminated,
        })
    }

    fn lanes_sorted(&self) -> Vec<Vec<usize>> {
        let mut lanes = vec![Vec::new(); self.config.geometry.lane_count];
        for v in &self.vehicles {
            lanes[v.lane].push(v.id);
        }
        for lane in &mut lanes {
            lane.sort_by(|&a, &b| {
                self.vehicles[a]
                    .position
                    .total_cmp(&self.vehicles[b].position)
                    .then(a.cmp(&b))
            });
        }
        lanes
    }

    fn compute_accelerations(&self, accel: &mut [f64]) {
        let road = &self.config.geometry;
        let brake = self.config.brake_limit;
        for lane in self.lanes_sorted() {
            let m = lane.len();
            for (k, &id) in lane.iter().enumerate() {
                let v = &self.vehicles[id];
                accel[id] = if v.crashed {
                    -brake
                } else {
                    let leader = (m > 1).then(|| {
                        let l = &self.vehicles[lane[(k + 1) % m]];
                        Leader {
                            gap: road.forward_distance(v.position, l.position) - 0.5 * (v.length + l.length),
                            speed: l.speed,
                        }
                    });
                    match leader {
                        Some(l) if l.gap <= 0.0 => -brake,
                        _ => idm_acceleration(v.speed, leader, &v.active_params, brake)
                            .expect("gap checked positive"),
                    }
                };
            }
        }
    }

    fn perturb_accelerations(&mut self, accel: &mut [f64]) {
        let Some(p) = &self.perturbation else { return };
        if p.accel_noise_sigma <= 0.0 {
            return;
        }
        let normal = Normal::new(0.0, p.accel_noise_sigma).expect("sigma validated positive");
        for v in &self.vehicles {
            // Draw for every vehicle so the stream does not depend on crash state.
            let noise = normal.sample(&mut self.rng);
            if v.crashed || p.exempt.contains(&v.id) {
                continue;
            }
            accel[v.id] = (accel[v.id] + noise).clamp(-self.config.brake_limit, v.active_params.max_accel);
        }
    }

    /// Candidate lanes in ascending order.
    fn adjacent_lanes(&self, lane: usize) -> impl Iterator<Item = usize> {
        let count = self.config.geometry.lane_count;
        [lane.checked_sub(1), Some(lane + 1)]
            .into_iter()
            .flatten()
            .filter(move |&l| l < count)
    }

    fn change_lanes(&mut self) -> Result<()> {
        let road = self.config.geometry;
        let mut proposals: Vec<(VehicleId, usize)> = Vec::new();
        for id in 0..self.vehicles.len() {
            let v = &self.vehicles[id];
            let mut choice: Option<(usize, f64)> = None;
            if !v.crashed && v.cooldown_remaining == 0 {
                for lane in self.adjacent_lanes(v.lane) {
                    if let LaneDecision::Change { incentive } =
                        mobil_lane_change(v, lane, &self.vehicles, &v.active_params, &road)?
                    {
                        if choice.is_none_or(|(_, best)| incentive > best) {
                            choice = Some((lane, incentive));
                        }
                    }
                }
            }
            if let Some(p) = &self.perturbation {
                if p.lane_change_flip_prob > 0.0 {
                    let flip = self.rng.random::<f64>() < p.lane_change_flip_prob;
                    let pick = self.rng.random::<f64>();
                    let v = &self.vehicles[id];
                    if flip && !v.crashed && v.cooldown_remaining == 0 && !p.exempt.contains(&id) {
                        choice = match choice {
                            Some(_) => None,
                            None => {
                                let open: Vec<usize> =
                                    self.adjacent_lanes(v.lane).filter(|&l| !self.overlaps_in_lane(v, l)).collect();
                                if open.is_empty() {
                                    None
                                } else {
                                    let i = ((pick * open.len() as f64) as usize).min(open.len() - 1);
                                    Some((open[i], 0.0))
                                }
                            }
                        };
                    }
                }
            }
            if let Some((lane, _)) = choice {
                proposals.push((id, lane));
            }
        }

        // Two movers aiming at the same gap within one vehicle length: lower id wins.
        let all: Vec<&VehicleState> = self.vehicles.iter().collect();
        let mut accepted: Vec<(VehicleId, usize, Option<usize>, Option<usize>)> = Vec::new();
        for (id, lane) in proposals {
            let v = &self.vehicles[id];
            let nb = lane_neighbours(&all, lane, v.position, id, &road);
            let gap = (nb.leader.map(|(i, _)| all[i].id), nb.follower.map(|(i, _)| all[i].id));
            let conflict = accepted.iter().any(|&(other, other_lane, l, f)| {
                let o = &self.vehicles[other];
                other_lane == lane
                    && (l, f) == gap
                    && road.ring_distance(o.position, v.position) < 0.5 * (o.length + v.length)
            });
            if !conflict {
                accepted.push((id, lane, gap.0, gap.1));
            }
        }
        for (id, lane, _, _) in accepted {
            let v = &mut self.vehicles[id];
            v.lane = lane;
            v.cooldown_remaining = v.active_params.lane_change_cooldown;
        }
        Ok(())
    }

    fn overlaps_in_lane(&self, v: &VehicleState, lane: usize) -> bool {
        self.vehicles.iter().any(|o| {
            o.id != v.id
                && o.lane == lane
                && self.config.geometry.ring_distance(o.position, v.position) <= 0.5 * (o.length + v.length)
        })
    }
}
