//! Driver behaviour: IDM car following, MOBIL lane changes and policy presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RoadGeometry;

pub type VehicleId = usize;

/// IDM/MOBIL behavioural parameters. Speeds in m/s, accelerations in m/s².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub desired_speed: f64,
    /// Seconds.
    pub time_headway: f64,
    /// Bumper-to-bumper standstill gap, metres.
    pub min_gap: f64,
    pub max_accel: f64,
    /// Positive magnitude.
    pub comfort_decel: f64,
    pub accel_exponent: f64,
    pub politeness: f64,
    pub lane_change_threshold: f64,
    /// Largest deceleration a lane change may impose on the new follower. Positive magnitude.
    pub safe_brake: f64,
    /// World steps a vehicle must wait after changing lane.
    pub lane_change_cooldown: u32,
}

impl PolicyParams {
    pub fn defensive() -> Self {
        Self {
            desired_speed: 30.0,
            time_headway: 2.0,
            min_gap: 10.0,
            max_accel: 3.0,
            comfort_decel: 5.0,
            accel_exponent: 4.0,
            politeness: 0.3,
            lane_change_threshold: 0.4,
            safe_brake: 4.0,
            lane_change_cooldown: 5,
        }
    }

    pub fn hotshot() -> Self {
        Self {
            desired_speed: 32.0,
            time_headway: 0.6,
            min_gap: 4.0,
            max_accel: 5.0,
            comfort_decel: 10.0,
            accel_exponent: 4.0,
            politeness: 0.05,
            lane_change_threshold: 0.1,
            safe_brake: 10.0,
            lane_change_cooldown: 5,
        }
    }

    pub fn alter() -> Self {
        Self {
            desired_speed: 25.0,
            time_headway: 1.2,
            min_gap: 6.0,
            max_accel: 4.0,
            comfort_decel: 6.0,
            accel_exponent: 4.0,
            politeness: 0.1,
            lane_change_threshold: 0.15,
            safe_brake: 5.0,
            lane_change_cooldown: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("desired_speed", self.desired_speed > 0.0),
            ("time_headway", self.time_headway >= 0.0),
            ("min_gap", self.min_gap > 0.0),
            ("max_accel", self.max_accel > 0.0),
            ("comfort_decel", self.comfort_decel > 0.0),
            ("safe_brake", self.safe_brake > 0.0),
            ("accel_exponent", self.accel_exponent >= 1.0),
            ("politeness", (0.0..=1.0).contains(&self.politeness)),
            ("lane_change_threshold", self.lane_change_threshold.is_finite()),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(Error::domain(format!("policy parameter {name} out of range"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Defensive,
    Hotshot,
    Alter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyPreset {
    pub name: PolicyKind,
    pub params: PolicyParams,
}

/// The three presets used by a run, individually overridable from config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetTable {
    pub defensive: PolicyParams,
    pub hotshot: PolicyParams,
    pub alter: PolicyParams,
}

impl Default for PresetTable {
    fn default() -> Self {
        Self {
            defensive: PolicyParams::defensive(),
            hotshot: PolicyParams::hotshot(),
            alter: PolicyParams::alter(),
        }
    }
}

impl PresetTable {
    pub fn get(&self, kind: PolicyKind) -> PolicyPreset {
        let params = match kind {
            PolicyKind::Defensive => self.defensive,
            PolicyKind::Hotshot => self.hotshot,
            PolicyKind::Alter => self.alter,
        };
        PolicyPreset { name: kind, params }
    }

    pub fn validate(&self) -> Result<()> {
        self.defensive.validate()?;
        self.hotshot.validate()?;
        self.alter.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ego,
    Alter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub role: Role,
    pub lane: usize,
    /// Along-track centre position, metres in `[0, ring_length)`.
    pub position: f64,
    pub speed: f64,
    pub length: f64,
    pub crashed: bool,
    pub active_params: PolicyParams,
    pub cooldown_remaining: u32,
}

/// The vehicle directly ahead in the same lane, as seen by a follower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// Bumper-to-bumper gap, metres.
    pub gap: f64,
    pub speed: f64,
}

/// IDM acceleration, clamped to `[-brake_limit, max_accel]`.
///
/// Pass `f64::INFINITY` as `brake_limit` to get the raw demand.
pub fn idm_acceleration(
    speed: f64,
    leader: Option<Leader>,
    params: &PolicyParams,
    brake_limit: f64,
) -> Result<f64> {
    let free = 1.0 - (speed / params.desired_speed).powf(params.accel_exponent);
    let raw = match leader {
        None => params.max_accel * free,
        Some(Leader { gap, speed: lead_speed }) => {
            if !(gap > 0.0) {
                return Err(Error::DegenerateGap { gap });
            }
            let closing = speed - lead_speed;
            let dynamic = speed * params.time_headway
                + speed * closing / (2.0 * (params.max_accel * params.comfort_decel).sqrt());
            let desired_gap = params.min_gap + dynamic.max(0.0);
            params.max_accel * (free - (desired_gap / gap).powi(2))
        }
    };
    Ok(raw.clamp(-brake_limit, params.max_accel))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaneDecision {
    Stay,
    /// `incentive` is the politeness-weighted acceleration gain that cleared the threshold.
    Change { incentive: f64 },
}

impl LaneDecision {
    pub fn is_change(&self) -> bool {
        matches!(self, LaneDecision::Change { .. })
    }
}

/// Nearest vehicles ahead and behind `position` in `lane`, ignoring `exclude`,
/// as indices into `vehicles` plus the centre distance to each. A lone vehicle
/// in the lane is both leader and follower.
pub(crate) struct LaneNeighbours {
    pub leader: Option<(usize, f64)>,
    pub follower: Option<(usize, f64)>,
}

pub(crate) fn lane_neighbours(
    vehicles: &[&VehicleState],
    lane: usize,
    position: f64,
    exclude: VehicleId,
    road: &RoadGeometry,
) -> LaneNeighbours {
    let mut leader: Option<(usize, f64)> = None;
    let mut follower: Option<(usize, f64)> = None;
    for (i, v) in vehicles.iter().enumerate() {
        if v.id == exclude || v.lane != lane {
            continue;
        }
        let ahead = road.forward_distance(position, v.position);
        let behind = road.forward_distance(v.position, position);
        if leader.is_none_or(|(_, d)| ahead < d) {
            leader = Some((i, ahead));
        }
        if follower.is_none_or(|(_, d)| behind < d) {
            follower = Some((i, behind));
        }
    }
    LaneNeighbours { leader, follower }
}

fn bumper_gap(centre_distance: f64, a: &VehicleState, b: &VehicleState) -> f64 {
    centre_distance - 0.5 * (a.length + b.length)
}

/// MOBIL lane-change criterion for one candidate lane.
///
/// Safety: the new follower's IDM demand after the change must not be below
/// `-params.safe_brake`. Incentive: own gain plus politeness times the gains of
/// the new and old followers must exceed `params.lane_change_threshold`.
/// A vehicle whose body overlaps the subject's in the target lane vetoes.
pub fn mobil_lane_change(
    subject: &VehicleState,
    candidate_lane: usize,
    neighbours: &[VehicleState],
    params: &PolicyParams,
    road: &RoadGeometry,
) -> Result<LaneDecision> {
    if candidate_lane >= road.lane_count || candidate_lane.abs_diff(subject.lane) != 1 {
        return Err(Error::domain(format!(
            "lane {candidate_lane} is not adjacent to lane {}",
            subject.lane
        )));
    }
    if subject.crashed || subject.cooldown_remaining > 0 {
        return Ok(LaneDecision::Stay);
    }
    let others: Vec<&VehicleState> = neighbours.iter().filter(|v| v.id != subject.id).collect();

    for v in others.iter().filter(|v| v.lane == candidate_lane) {
        if road.ring_distance(subject.position, v.position) <= 0.5 * (subject.length + v.length) {
            return Ok(LaneDecision::Stay);
        }
    }

    let raw = f64::INFINITY;
    let idm = |v: &VehicleState, leader: Option<Leader>| idm_acceleration(v.speed, leader, &v.active_params, raw);
    let leader_of = |follower: &VehicleState, lead: &VehicleState, centre: f64| Leader {
        gap: bumper_gap(centre, follower, lead),
        speed: lead.speed,
    };

    // Current lane.
    let cur = lane_neighbours(&others, subject.lane, subject.position, subject.id, road);
    let cur_leader = cur.leader.map(|(i, d)| (others[i], d));
    let a_self = idm_acceleration(
        subject.speed,
        cur_leader.map(|(l, d)| leader_of(subject, l, d)),
        params,
        raw,
    )?;

    // Target lane.
    let tgt = lane_neighbours(&others, candidate_lane, subject.position, subject.id, road);
    let new_leader = tgt.leader.map(|(i, d)| (others[i], d));
    let a_self_new = idm_acceleration(
        subject.speed,
        new_leader.map(|(l, d)| leader_of(subject, l, d)),
        params,
        raw,
    )?;

    let mut new_follower_gain = 0.0;
    if let Some((fi, behind)) = tgt.follower {
        let f = others[fi];
        if !f.crashed {
            // Before: the follower trails the subject's new leader unless it is alone in the lane.
            let before_leader = new_leader
                .filter(|(l, _)| l.id != f.id)
                .map(|(l, d)| leader_of(f, l, d + behind));
            let before = idm(f, before_leader)?;
            let after = idm(f, Some(leader_of(f, subject, behind)))?;
            if after < -params.safe_brake {
                return Ok(LaneDecision::Stay);
            }
            new_follower_gain = after - before;
        }
    }

    let mut old_follower_gain = 0.0;
    if let Some((oi, behind)) = cur.follower {
        let o = others[oi];
        if !o.crashed {
            let before = idm(o, Some(leader_of(o, subject, behind)))?;
            let after_leader = cur_leader
                .filter(|(l, _)| l.id != o.id)
                .map(|(l, d)| leader_of(o, l, d + behind));
            let after = idm(o, after_leader)?;
            old_follower_gain = after - before;
        }
    }

    let incentive = (a_self_new - a_self) + params.politeness * (new_follower_gain + old_follower_gain);
    if incentive > params.lane_change_threshold {
        Ok(LaneDecision::Change { incentive })
    } else {
        Ok(LaneDecision::Stay)
    }
}

/// Convex blend of two parameter sets; exact at both endpoints.
pub fn interpolate_params(from: &PolicyParams, to: &PolicyParams, fraction: f64) -> Result<PolicyParams> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::domain(format!("fraction {fraction} outside [0, 1]")));
    }
    let lerp = |a: f64, b: f64| a * (1.0 - fraction) + b * fraction;
    Ok(PolicyParams {
        desired_speed: lerp(from.desired_speed, to.desired_speed),
        time_headway: lerp(from.time_headway, to.time_headway),
        min_gap: lerp(from.min_gap, to.min_gap),
        max_accel: lerp(from.max_accel, to.max_accel),
        comfort_decel: lerp(from.comfort_decel, to.comfort_decel),
        accel_exponent: lerp(from.accel_exponent, to.accel_exponent),
        politeness: lerp(from.politeness, to.politeness),
        lane_change_threshold: lerp(from.lane_change_threshold, to.lane_change_threshold),
        safe_brake: lerp(from.safe_brake, to.safe_brake),
        lane_change_cooldown: lerp(f64::from(from.lane_change_cooldown), f64::from(to.lane_change_cooldown))
            .round() as u32,
    })
}
