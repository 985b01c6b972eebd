//! Free-energy numerics on finite discrete distributions.
//!
//! Everything here is a pure function of immutable inputs. Logs are natural
//! (results in nats) and `0 · ln 0` is taken as `0`. Whenever a log-expectation
//! would be infinite because the reference assigns zero mass where the
//! weighting distribution does not, the operation returns
//! [`Error::AbsoluteContinuity`] instead of producing `inf` or `NaN`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a distribution.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Probability vector over a finite, ordered outcome set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} = {} is negative or not finite",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("mass sums to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn delta(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::InvalidDistribution(format!(
                "index {index} outside support of size {n}"
            )));
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probs[index]
    }
}

/// `KL(q || p) = Σ q ln(q / p)`.
pub fn kl_divergence(q: &DiscreteDistribution, p: &DiscreteDistribution) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch {
            left: q.len(),
            right: p.len(),
        });
    }
    let mut total = 0.0;
    for (i, (&qi, &pi)) in q.probs.iter().zip(&p.probs).enumerate() {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(Error::AbsoluteContinuity { index: i });
        }
        total += qi * (qi / pi).ln();
    }
    // Rounding can leave a tiny negative value for near-identical inputs.
    Ok(total.max(0.0))
}

/// Shannon entropy in nats.
pub fn entropy(q: &DiscreteDistribution) -> f64 {
    -q.probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Joint distribution over (state x, observation o), stored row-major by state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointModel {
    n_states: usize,
    n_obs: usize,
    joint: Vec<f64>,
}

impl JointModel {
    /// Builds a model from rows indexed by state, columns by observation.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_obs = rows.first().map_or(0, Vec::len);
        if n_states == 0 || n_obs == 0 {
            return Err(Error::InvalidDistribution("empty joint".into()));
        }
        if let Some(row) = rows.iter().find(|r| r.len() != n_obs) {
            return Err(Error::DimensionMismatch {
                left: n_obs,
                right: row.len(),
            });
        }
        let joint: Vec<f64> = rows.into_iter().flatten().collect();
        // Reuse the distribution checks on the flattened table.
        DiscreteDistribution::new(joint.clone())?;
        Ok(Self {
            n_states,
            n_obs,
            joint,
        })
    }

    /// `p(x, o) = p(x) · p(o | x)` from a state prior and one observation channel per state.
    pub fn from_prior_and_channel(
        prior: &DiscreteDistribution,
        channel: &[DiscreteDistribution],
    ) -> Result<Self> {
        if channel.len() != prior.len() {
            return Err(Error::DimensionMismatch {
                left: prior.len(),
                right: channel.len(),
            });
        }
        let n_obs = channel[0].len();
        let rows = channel
            .iter()
            .zip(prior.probs())
            .map(|(row, &px)| {
                if row.len() != n_obs {
                    return Err(Error::DimensionMismatch {
                        left: n_obs,
                        right: row.len(),
                    });
                }
                Ok(row.probs().iter().map(|&po| px * po).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::new(rows)
    }

    /// `p(x, o) = p(o) · p(x | o)` from an observation marginal and one state posterior per observation.
    pub fn from_observation_marginal_and_posteriors(
        marginal: &DiscreteDistribution,
        posteriors: &[DiscreteDistribution],
    ) -> Result<Self> {
        if posteriors.len() != marginal.len() {
            return Err(Error::DimensionMismatch {
                left: marginal.len(),
                right: posteriors.len(),
            });
        }
        let n_states = posteriors[0].len();
        if let Some(p) = posteriors.iter().find(|p| p.len() != n_states) {
            return Err(Error::DimensionMismatch {
                left: n_states,
                right: p.len(),
            });
        }
        let rows = (0..n_states)
            .map(|x| {
                posteriors
                    .iter()
                    .zip(marginal.probs())
                    .map(|(post, &po)| po * post.get(x))
                    .collect()
            })
            .collect();
        Self::new(rows)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_observations(&self) -> usize {
        self.n_obs
    }

    pub fn get(&self, x: usize, o: usize) -> f64 {
        self.joint[x * self.n_obs + o]
    }

    fn row(&self, x: usize) -> &[f64] {
        &self.joint[x * self.n_obs..(x + 1) * self.n_obs]
    }

    pub fn state_marginal(&self) -> DiscreteDistribution {
        let probs = (0..self.n_states).map(|x| self.row(x).iter().sum()).collect();
        DiscreteDistribution { probs }
    }

    pub fn observation_marginal(&self) -> DiscreteDistribution {
        let probs = (0..self.n_obs)
            .map(|o| (0..self.n_states).map(|x| self.get(x, o)).sum())
            .collect();
        DiscreteDistribution { probs }
    }

    /// `p(x | o)`.
    pub fn posterior(&self, o: usize) -> Result<DiscreteDistribution> {
        if o >= self.n_obs {
            return Err(Error::domain(format!("observation {o} out of range")));
        }
        let col: Vec<f64> = (0..self.n_states).map(|x| self.get(x, o)).collect();
        let po: f64 = col.iter().sum();
        if po <= 0.0 {
            return Err(Error::ImpossibleObservation(o));
        }
        Ok(DiscreteDistribution {
            probs: col.into_iter().map(|v| v / po).collect(),
        })
    }

    /// `p(o | x)`.
    pub fn likelihood(&self, x: usize) -> Result<DiscreteDistribution> {
        if x >= self.n_states {
            return Err(Error::domain(format!("state {x} out of range")));
        }
        let row = self.row(x);
        let px: f64 = row.iter().sum();
        if px <= 0.0 {
            return Err(Error::domain(format!("state {x} has zero marginal mass")));
        }
        Ok(DiscreteDistribution {
            probs: row.iter().map(|v| v / px).collect(),
        })
    }

    fn same_axes(&self, other: &JointModel) -> Result<()> {
        if self.n_states != other.n_states {
            return Err(Error::DimensionMismatch {
                left: self.n_states,
                right: other.n_states,
            });
        }
        if self.n_obs != other.n_obs {
            return Err(Error::DimensionMismatch {
                left: self.n_obs,
                right: other.n_obs,
            });
        }
        Ok(())
    }
}

/// Variational free energy `F(q) = −E_q[ln p(x, o)] − H[q]` for an observed outcome.
///
/// Satisfies `ln p(o) = −F(q) + KL(q || p(x|o))`.
pub fn vfe(q: &DiscreteDistribution, model: &JointModel, observed: usize) -> Result<f64> {
    if q.len() != model.n_states() {
        return Err(Error::DimensionMismatch {
            left: q.len(),
            right: model.n_states(),
        });
    }
    if observed >= model.n_observations() {
        return Err(Error::domain(format!("observation {observed} out of range")));
    }
    let po: f64 = (0..model.n_states()).map(|x| model.get(x, observed)).sum();
    if po <= 0.0 {
        return Err(Error::ImpossibleObservation(observed));
    }
    let mut energy = 0.0;
    for (x, &qx) in q.probs().iter().enumerate() {
        if qx == 0.0 {
            continue;
        }
        let pxo = model.get(x, observed);
        if pxo == 0.0 {
            return Err(Error::AbsoluteContinuity { index: x });
        }
        energy -= qx * pxo.ln();
    }
    Ok(energy - entropy(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreeEnergyKind {
    Efe,
    Fef,
}

/// A free-energy value split into its extrinsic and epistemic parts.
///
/// `extrinsic` and `epistemic` hold the value quantities, so
/// `total = −extrinsic − epistemic` for the expected free energy and
/// `total = −extrinsic + epistemic` for the free energy of the future.
/// `approximation_gap` is whatever the definitional total differs from that
/// recombination by; it vanishes when the preference joint factorizes through
/// the predictive posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeEnergyBreakdown {
    pub total: f64,
    pub extrinsic: f64,
    pub epistemic: f64,
    pub kind: FreeEnergyKind,
    pub approximation_gap: f64,
}

impl FreeEnergyBreakdown {
    fn from_parts(kind: FreeEnergyKind, total: f64, extrinsic: f64, epistemic: f64) -> Self {
        let mut out = Self {
            total,
            extrinsic,
            epistemic,
            kind,
            approximation_gap: 0.0,
        };
        out.approximation_gap = total - out.recombined();
        out
    }

    /// Total rebuilt from the two value terms.
    pub fn recombined(&self) -> f64 {
        match self.kind {
            FreeEnergyKind::Efe => -self.extrinsic - self.epistemic,
            FreeEnergyKind::Fef => -self.extrinsic + self.epistemic,
        }
    }
}

fn ln_checked(value: f64, index: usize) -> Result<f64> {
    if value > 0.0 {
        Ok(value.ln())
    } else {
        Err(Error::AbsoluteContinuity { index })
    }
}

/// `E_{q(o)} KL[q(x|o) || q(x)]`, shared by both state-space forms.
fn state_space_epistemic(predictive: &JointModel) -> Result<f64> {
    let qx = predictive.state_marginal();
    let qo = predictive.observation_marginal();
    let mut total = 0.0;
    for (o, &po) in qo.probs().iter().enumerate() {
        if po == 0.0 {
            continue;
        }
        total += po * kl_divergence(&predictive.posterior(o)?, &qx)?;
    }
    Ok(total)
}

/// `E_{q(x)} KL[q(o|x) || q(o)]`, the observation-space information gain.
fn observation_space_information_gain(predictive: &JointModel) -> Result<f64> {
    let qx = predictive.state_marginal();
    let qo = predictive.observation_marginal();
    let mut total = 0.0;
    for (x, &px) in qx.probs().iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        total += px * kl_divergence(&predictive.likelihood(x)?, &qo)?;
    }
    Ok(total)
}

/// Expected free energy `E_{q(o,x|π)}[ln q(x|π) − ln p̃(o, x)]`.
pub fn efe(predictive: &JointModel, preference: &JointModel) -> Result<FreeEnergyBreakdown> {
    predictive.same_axes(preference)?;
    let qx = predictive.state_marginal();
    let pref_o = preference.observation_marginal();
    let n_obs = predictive.n_observations();
    let mut total = 0.0;
    let mut extrinsic = 0.0;
    for x in 0..predictive.n_states() {
        for o in 0..n_obs {
            let q = predictive.get(x, o);
            if q == 0.0 {
                continue;
            }
            let idx = x * n_obs + o;
            total += q * (qx.get(x).ln() - ln_checked(preference.get(x, o), idx)?);
            extrinsic += q * ln_checked(pref_o.get(o), o)?;
        }
    }
    let epistemic = state_space_epistemic(predictive)?;
    Ok(FreeEnergyBreakdown::from_parts(
        FreeEnergyKind::Efe,
        total,
        extrinsic,
        epistemic,
    ))
}

/// Free energy of the future `E_{q(o,x|π)}[ln q(x|o) − ln p̃(o, x)]`.
pub fn fef(predictive: &JointModel, preference: &JointModel) -> Result<FreeEnergyBreakdown> {
    predictive.same_axes(preference)?;
    let qo = predictive.observation_marginal();
    let pref_x = preference.state_marginal();
    let n_obs = predictive.n_observations();
    let mut total = 0.0;
    let mut extrinsic = 0.0;
    for x in 0..predictive.n_states() {
        for o in 0..n_obs {
            let q = predictive.get(x, o);
            if q == 0.0 {
                continue;
            }
            let idx = x * n_obs + o;
            let ln_pref = ln_checked(preference.get(x, o), idx)?;
            total += q * ((q / qo.get(o)).ln() - ln_pref);
            extrinsic += q * (ln_pref - pref_x.get(x).ln());
        }
    }
    let epistemic = state_space_epistemic(predictive)?;
    Ok(FreeEnergyBreakdown::from_parts(
        FreeEnergyKind::Fef,
        total,
        extrinsic,
        epistemic,
    ))
}

/// Expected free energy with a preference stated over observations only:
/// `−E[ln p̃(o)] − E_{q(x)} KL[q(o|x) || q(o)]`.
pub fn efe_observation_space(
    predictive: &JointModel,
    preference: &DiscreteDistribution,
) -> Result<FreeEnergyBreakdown> {
    if preference.len() != predictive.n_observations() {
        return Err(Error::DimensionMismatch {
            left: predictive.n_observations(),
            right: preference.len(),
        });
    }
    let qo = predictive.observation_marginal();
    let mut extrinsic = 0.0;
    for (o, &po) in qo.probs().iter().enumerate() {
        if po == 0.0 {
            continue;
        }
        extrinsic += po * ln_checked(preference.get(o), o)?;
    }
    let gain = observation_space_information_gain(predictive)?;
    Ok(FreeEnergyBreakdown::from_parts(
        FreeEnergyKind::Efe,
        -extrinsic - gain,
        extrinsic,
        gain,
    ))
}

/// Free energy of the future with a preference channel `p̃(o|x)`:
/// `−E[ln p̃(o|x)] + E_{q(x)} KL[q(o|x) || q(o)]`.
pub fn fef_observation_space(
    predictive: &JointModel,
    preference_channel: &[DiscreteDistribution],
) -> Result<FreeEnergyBreakdown> {
    if preference_channel.len() != predictive.n_states() {
        return Err(Error::DimensionMismatch {
            left: predictive.n_states(),
            right: preference_channel.len(),
        });
    }
    let n_obs = predictive.n_observations();
    let mut extrinsic = 0.0;
    for (x, row) in preference_channel.iter().enumerate() {
        if row.len() != n_obs {
            return Err(Error::DimensionMismatch {
                left: n_obs,
                right: row.len(),
            });
        }
        for o in 0..n_obs {
            let q = predictive.get(x, o);
            if q == 0.0 {
                continue;
            }
            extrinsic += q * ln_checked(row.get(o), x * n_obs + o)?;
        }
    }
    let gain = observation_space_information_gain(predictive)?;
    Ok(FreeEnergyBreakdown::from_parts(
        FreeEnergyKind::Fef,
        -extrinsic + gain,
        extrinsic,
        gain,
    ))
}

/// Boltzmann preference prior `p̃(L) ∝ exp(−β L)` over a finite set of losses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferenceModel {
    beta: f64,
    loss_values: Vec<f64>,
    probabilities: DiscreteDistribution,
    log_partition: f64,
}

impl PreferenceModel {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn loss_values(&self) -> &[f64] {
        &self.loss_values
    }

    pub fn probabilities(&self) -> &DiscreteDistribution {
        &self.probabilities
    }

    /// `ln Z`.
    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    pub fn log_probability(&self, index: usize) -> f64 {
        -self.beta * self.loss_values[index] - self.log_partition
    }

    /// `−ln p̃(L) = β L + ln Z`; the energy of a loss value under this prior.
    pub fn surprisal(&self, loss: f64) -> f64 {
        self.beta * loss + self.log_partition
    }
}

pub fn boltzmann_prior(loss_values: &[f64], beta: f64) -> Result<PreferenceModel> {
    if loss_values.is_empty() {
        return Err(Error::domain("loss values must be non-empty"));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::domain(format!("beta must be finite and >= 0, got {beta}")));
    }
    if loss_values.iter().any(|l| !l.is_finite()) {
        return Err(Error::domain("loss values must be finite"));
    }
    let logits: Vec<f64> = loss_values.iter().map(|l| -beta * l).collect();
    let shift = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_partition = shift + logits.iter().map(|z| (z - shift).exp()).sum::<f64>().ln();
    let probs: Vec<f64> = logits.iter().map(|z| (z - log_partition).exp()).collect();
    Ok(PreferenceModel {
        beta,
        loss_values: loss_values.to_vec(),
        probabilities: DiscreteDistribution::new(probs)?,
        log_partition,
    })
}

/// Inverse temperature from the desirabilities assigned to the extreme losses.
///
/// `p_max_desirability` is the preference mass of `loss_max` and
/// `p_min_desirability` that of `loss_min`; the latter must be at least as large.
pub fn calibrate_beta(
    p_max_desirability: f64,
    p_min_desirability: f64,
    loss_min: f64,
    loss_max: f64,
) -> Result<f64> {
    for (name, p) in [
        ("p_max_desirability", p_max_desirability),
        ("p_min_desirability", p_min_desirability),
    ] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::domain(format!("{name} must lie in (0, 1], got {p}")));
        }
    }
    if !(loss_max > loss_min) {
        return Err(Error::domain(format!(
            "loss_max ({loss_max}) must exceed loss_min ({loss_min})"
        )));
    }
    let ratio = p_min_desirability / p_max_desirability;
    if ratio < 1.0 {
        return Err(Error::domain(
            "the minimum loss must be at least as desirable as the maximum loss",
        ));
    }
    Ok(ratio.ln() / (loss_max - loss_min))
}

/// Sign of the entropic term in the instantaneous risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySign {
    Plus,
    Minus,
    /// Fully observable regime: the entropic contribution is ignored.
    #[default]
    Dropped,
}

impl EntropySign {
    pub fn value(self) -> f64 {
        match self {
            EntropySign::Plus => 1.0,
            EntropySign::Minus => -1.0,
            EntropySign::Dropped => 0.0,
        }
    }
}

/// `⟨E⟩ ± H / β`.
pub fn instantaneous_risk(energy: f64, entropy_term: f64, beta: f64, sign: EntropySign) -> Result<f64> {
    if sign == EntropySign::Dropped {
        return Ok(energy);
    }
    if !(beta > 0.0) {
        return Err(Error::domain(format!(
            "beta must be positive when the entropic term is kept, got {beta}"
        )));
    }
    Ok(energy + sign.value() * entropy_term / beta)
}

/// Cumulative risk exposure `Σ_t γ^t · risk_t`.
pub fn cumulative_risk(per_step_risks: &[f64], gamma: f64) -> Result<f64> {
    if per_step_risks.is_empty() {
        return Err(Error::domain("need at least one per-step risk"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in per_step_risks {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total)
}
