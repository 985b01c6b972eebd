use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PolicyKind, VehicleId};
use crate::error::{Error, Result};
use crate::gatekeeper::{apply_transition, decide, estimate_cre, neighborhood_average, GatekeeperState, Mode};
use crate::world::{init_world, Termination, WorldState};

use super::ExperimentConfig;

/// Gatekeeper output at one evaluation, averaged over the online egos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    /// World step the estimate was taken at (before that step runs).
    pub step: u32,
    /// Mean neighbourhood-averaged CRE.
    pub risk: f64,
    /// Mean expected loss per rollout step.
    pub energy: f64,
}

/// Realized per-step series of one world. Entry `i` describes the state after world step `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub world_index: usize,
    pub seed: u64,
    pub termination: Termination,
    /// Mean over egos.
    pub r_speed: Vec<f64>,
    pub r_defensive: Vec<f64>,
    pub loss: Vec<f64>,
    /// 1 once any tracked ego has crashed.
    pub crashed: Vec<f64>,
    /// Share of egos in defensive mode.
    pub defensive_fraction: Vec<f64>,
    pub risk: Vec<RiskPoint>,
    pub gatekeeper_evaluations: u32,
    pub policy_switches: u32,
}

impl RunRecord {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    /// Step at which a tracked ego crashed, if any.
    pub fn crash_step(&self) -> Option<u32> {
        self.crashed.iter().position(|&c| c > 0.0).map(|i| i as u32 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleFrame {
    pub id: VehicleId,
    pub lane: usize,
    pub s: f64,
    pub v: f64,
    pub crashed: bool,
    pub mode: PolicyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFrame {
    pub seed: u64,
    pub step: u32,
    pub vehicles: Vec<VehicleFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskLogEntry {
    pub seed: u64,
    pub step: u32,
    pub ego: VehicleId,
    pub cre: f64,
    pub averaged_cre: f64,
    pub mode: Mode,
    pub sample_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub record: RunRecord,
    /// Filled when `dump_trajectories` is set.
    pub trajectory: Vec<TrajectoryFrame>,
    /// Filled when `dump_risk` is set.
    pub risk_log: Vec<RiskLogEntry>,
}

fn frame(world: &WorldState, gatekeepers: &[GatekeeperState], ego_policy: PolicyKind) -> TrajectoryFrame {
    let vehicles = world
        .vehicles()
        .iter()
        .map(|v| {
            let mode = match gatekeepers.iter().find(|g| g.vehicle_id == v.id) {
                Some(g) => g.mode.policy(),
                None if v.role == crate::dynamics::Role::Ego => ego_policy,
                None => PolicyKind::Alter,
            };
            VehicleFrame {
                id: v.id,
                lane: v.lane,
                s: v.position,
                v: v.speed,
                crashed: v.crashed,
                mode,
            }
        })
        .collect();
    TrajectoryFrame {
        seed: world.seed(),
        step: world.step_count(),
        vehicles,
    }
}

/// Runs world `index` of the experiment to termination.
pub fn run_world(config: &ExperimentConfig, index: usize) -> Result<RunOutput> {
    let sim = Arc::new(config.sim_config());
    let seed = config.base_seed.wrapping_add(index as u64);
    let mut world = init_world(sim.clone(), seed)?;
    let thresholds = config.thresholds()?;
    let reward = &sim.reward;
    let online: Vec<VehicleId> = world.ego_ids().take(config.n_online).collect();
    let n_ego = world.ego_ids().count();
    let mut gatekeepers: Vec<GatekeeperState> = online
        .iter()
        .map(|&id| GatekeeperState::new(id, Mode::Hotshot))
        .collect();
    let fixed_defensive = sim.ego_policy == PolicyKind::Defensive;

    let mut record = RunRecord {
        world_index: index,
        seed,
        termination: Termination {
            reason: crate::world::TerminationReason::HorizonReached,
            step: 0,
        },
        r_speed: Vec::new(),
        r_defensive: Vec::new(),
        loss: Vec::new(),
        crashed: Vec::new(),
        defensive_fraction: Vec::new(),
        risk: Vec::new(),
        gatekeeper_evaluations: 0,
        policy_switches: 0,
    };
    let mut trajectory = Vec::new();
    let mut risk_log = Vec::new();
    if config.dump_trajectories {
        trajectory.push(frame(&world, &gatekeepers, sim.ego_policy));
    }

    let mut tracked_crash = false;
    while world.terminated().is_none() {
        let step = world.step_count();
        if !online.is_empty() && step % config.mc.cadence == 0 {
            let mut risks = estimate_cre(&world, &config.mc, reward, &online)?;
            record.gatekeeper_evaluations += 1;
            risks.retain(|id, _| online.contains(id));
            let averaged = neighborhood_average(&risks, &world, reward.neighbor_radius);
            for gk in &mut gatekeepers {
                if config.observe_only {
                    gk.last_risk = Some(averaged[&gk.vehicle_id]);
                    continue;
                }
                let current = world.vehicle(gk.vehicle_id).expect("online ego exists").active_params;
                let next = decide(gk, averaged[&gk.vehicle_id], &thresholds, &sim.presets, &current);
                if next.mode != gk.mode {
                    record.policy_switches += 1;
                }
                *gk = next;
            }
            let n = online.len() as f64;
            record.risk.push(RiskPoint {
                step,
                risk: averaged.values().sum::<f64>() / n,
                energy: risks.values().map(|r| r.mean_step_energy()).sum::<f64>() / n,
            });
            if config.dump_risk {
                for gk in &gatekeepers {
                    let r = &risks[&gk.vehicle_id];
                    risk_log.push(RiskLogEntry {
                        seed,
                        step,
                        ego: gk.vehicle_id,
                        cre: r.cre,
                        averaged_cre: averaged[&gk.vehicle_id],
                        mode: gk.mode,
                        sample_std: r.sample_std,
                    });
                }
            }
        }
        for gk in gatekeepers.iter_mut().filter(|g| g.transition.is_some()) {
            let vehicle = world.vehicle_mut(gk.vehicle_id).expect("online ego exists");
            apply_transition(gk, vehicle)?;
        }

        let outcome = world.step()?;
        let n = outcome.per_ego_rewards.len().max(1) as f64;
        let mean = |f: fn(&crate::reward::RewardBreakdown) -> f64| outcome.per_ego_rewards.values().map(f).sum::<f64>() / n;
        record.r_speed.push(mean(|r| r.r_speed));
        record.r_defensive.push(mean(|r| r.r_defensive));
        record.loss.push(mean(|r| r.loss));
        tracked_crash |= world
            .tracked_ego_ids()
            .iter()
            .any(|&id| world.vehicle(id).is_some_and(|v| v.crashed));
        record.crashed.push(if tracked_crash { 1.0 } else { 0.0 });
        let defensive = if fixed_defensive {
            n_ego
        } else {
            gatekeepers.iter().filter(|g| g.mode == Mode::Defensive).count()
        };
        record.defensive_fraction.push(if n_ego == 0 {
            0.0
        } else {
            defensive as f64 / n_ego as f64
        });
        if config.dump_trajectories {
            trajectory.push(frame(&world, &gatekeepers, sim.ego_policy));
        }
    }
    record.termination = world.terminated().expect("loop exits on termination");
    Ok(RunOutput {
        record,
        trajectory,
        risk_log,
    })
}

/// Runs every world of the experiment, in parallel, ordered by world index.
pub fn run_batch_full(config: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    let outputs: Vec<Result<RunOutput>> =
        pool.install(|| (0..config.n_worlds).into_par_iter().map(|i| run_world(config, i)).collect());
    // Report the lowest failing index regardless of scheduling.
    outputs.into_iter().collect()
}

pub fn run_batch(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    Ok(run_batch_full(config)?.into_iter().map(|o| o.record).collect())
}
