//! Three-term car-following reward: safety, gap efficiency and jerk comfort.
//!
//! The same functions score simulator steps and relabeled dataset rows, so the
//! two paths agree bit-for-bit on identical inputs.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_safe: f64,
    pub w_gap: f64,
    pub w_jerk: f64,
    /// Comfortable deceleration, m/s^2.
    pub b_comf: f64,
    /// Desired time gap, s.
    pub t_gap: f64,
    /// Desired minimum space gap, m.
    pub g_min: f64,
    /// Time gap at which the gap reward reaches zero, s.
    pub t_lim: f64,
    /// Comfortable jerk, m/s^3.
    pub j_comf: f64,
    pub a_min: f64,
    /// Reward assigned to a step that ends with gap <= 0.
    pub collision_reward: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_safe: 1.0,
            w_gap: 0.5,
            w_jerk: 0.004,
            b_comf: 2.0,
            t_gap: 1.5,
            g_min: 2.0,
            t_lim: 15.0,
            j_comf: 2.0,
            a_min: -9.0,
            collision_reward: -5.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_safe < 0.0 || self.w_gap < 0.0 || self.w_jerk < 0.0 {
            return invalid("reward weights must be non-negative");
        }
        if !(self.b_comf > 0.0 && self.j_comf > 0.0) {
            return invalid("b_comf and j_comf must be positive");
        }
        if !(self.t_lim > self.t_gap) {
            return invalid("t_lim must exceed t_gap");
        }
        if !(self.a_min < 0.0) {
            return invalid("a_min must be negative");
        }
        Ok(())
    }

    /// `v T + g_min`, the gap at which the efficiency term peaks.
    pub fn optimal_gap(&self, v: f64) -> f64 {
        v * self.t_gap + self.g_min
    }

    /// `v T_lim + 2 g_min`, where the efficiency term reaches zero.
    pub fn limit_gap(&self, v: f64) -> f64 {
        v * self.t_lim + 2.0 * self.g_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_safe: f64,
    pub r_gap: f64,
    pub r_jerk: f64,
    pub total: f64,
    pub b_kin: f64,
    pub g_opt: f64,
    pub g_lim: f64,
}

/// Closing-speed-over-gap term, zero unless the follower is faster.
/// Kept exactly as `(v - v_l) / g` (units 1/s) to match the published form.
pub fn kinematic_decel(v: f64, v_l: f64, g: f64) -> f64 {
    if v > v_l {
        (v - v_l) / g
    } else {
        0.0
    }
}

pub fn reward_safe(v: f64, v_l: f64, g: f64, cfg: &RewardConfig) -> Result<f64> {
    if !(g > 0.0) {
        return invalid(format!("reward_safe needs a positive gap, got {g}"));
    }
    let b_kin = kinematic_decel(v, v_l, g);
    if b_kin > cfg.b_comf {
        Ok(-((b_kin - cfg.b_comf) / -cfg.a_min).tanh())
    } else {
        Ok(0.0)
    }
}

/// Standard normal density ratio `phi(z) / phi(0)`.
fn density_ratio(z: f64) -> f64 {
    (-0.5 * z * z).exp()
}

pub fn reward_gap(v: f64, g: f64, cfg: &RewardConfig) -> Result<f64> {
    if v < 0.0 || g < 0.0 {
        return invalid("reward_gap needs v >= 0 and g >= 0");
    }
    let g_opt = cfg.optimal_gap(v);
    let g_var = 0.5 * g_opt;
    let g_lim = cfg.limit_gap(v);
    let bell = density_ratio((g - g_opt) / g_var);
    // The taper starts at the optimum gap.
    let g_star = g_opt;
    if g < g_star {
        Ok(bell)
    } else {
        Ok((bell * (1.0 - (g - g_star) / (g_lim - g_star))).max(0.0))
    }
}

pub fn reward_jerk(jerk: f64, cfg: &RewardConfig) -> Result<f64> {
    ensure_finite("jerk", jerk)?;
    let x = jerk / cfg.j_comf;
    Ok(-(x * x))
}

pub fn reward_total(v: f64, v_l: f64, g: f64, jerk: f64, cfg: &RewardConfig) -> Result<RewardBreakdown> {
    let r_safe = reward_safe(v, v_l, g, cfg)?;
    let r_gap = reward_gap(v, g, cfg)?;
    let r_jerk = reward_jerk(jerk, cfg)?;
    Ok(RewardBreakdown {
        r_safe,
        r_gap,
        r_jerk,
        total: cfg.w_safe * r_safe + cfg.w_gap * r_gap + cfg.w_jerk * r_jerk,
        b_kin: kinematic_decel(v, v_l, g),
        g_opt: cfg.optimal_gap(v),
        g_lim: cfg.limit_gap(v),
    })
}

/// Reward for one transition landing in `(v, v_l, g)` with the given jerk.
/// A non-positive gap is a collision and yields `collision_reward`.
pub fn step_reward(
    v: f64,
    v_l: f64,
    g: f64,
    jerk: f64,
    cfg: &RewardConfig,
) -> Result<(f64, Option<RewardBreakdown>)> {
    if g <= 0.0 {
        return Ok((cfg.collision_reward, None));
    }
    let b = reward_total(v, v_l, g, jerk, cfg)?;
    Ok((b.total, Some(b)))
}
