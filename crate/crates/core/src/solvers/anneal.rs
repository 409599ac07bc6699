use serde::{Deserialize, Serialize};

/// Temperature update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnnealRule {
    /// `tau = 10^-floor(t / 1000)`.
    Type1,
    /// `tau <- ratio * tau`.
    Type2 { ratio: f64 },
    /// `tau <- tau + step * L / min(dL/dtau, -L)`.
    Type3 { step: f64 },
}

/// Temperature schedule with its shared gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub rule: AnnealRule,
    pub initial_tau: f64,
    pub min_temperature: f64,
    pub min_iters_per_temp: usize,
    pub loss_threshold: f64,
}

impl AnnealSchedule {
    pub fn new(rule: AnnealRule) -> Self {
        Self {
            rule,
            initial_tau: 1.0,
            min_temperature: 1e-2,
            min_iters_per_temp: 50,
            loss_threshold: 1e-1,
        }
    }

    pub fn type1() -> Self {
        Self::new(AnnealRule::Type1)
    }

    pub fn type2() -> Self {
        Self::new(AnnealRule::Type2 { ratio: 0.8 })
    }

    pub fn type3() -> Self {
        Self::new(AnnealRule::Type3 { step: 0.1 })
    }

    /// Schedule by its numeric type (1, 2 or 3).
    pub fn from_type(kind: u8) -> Option<Self> {
        match kind {
            1 => Some(Self::type1()),
            2 => Some(Self::type2()),
            3 => Some(Self::type3()),
            _ => None,
        }
    }

    pub fn type_number(&self) -> u8 {
        match self.rule {
            AnnealRule::Type1 => 1,
            AnnealRule::Type2 { .. } => 2,
            AnnealRule::Type3 { .. } => 3,
        }
    }

    pub fn with_initial_tau(mut self, tau: f64) -> Self {
        self.initial_tau = tau;
        self
    }

    pub fn with_min_temperature(mut self, tau: f64) -> Self {
        self.min_temperature = tau;
        self
    }

    pub fn needs_slope(&self) -> bool {
        matches!(self.rule, AnnealRule::Type3 { .. })
    }
}

/// Inputs to one annealing decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealState {
    pub t: usize,
    pub tau: f64,
    pub iters_at_tau: usize,
    pub loss: f64,
    /// Estimate of `dL/dtau`, required by Type 3 only.
    pub dloss_dtau: Option<f64>,
}

pub fn gates_open(schedule: &AnnealSchedule, state: &AnnealState) -> bool {
    state.iters_at_tau >= schedule.min_iters_per_temp && state.loss <= schedule.loss_threshold
}

/// Next temperature. Gated, clamped at the minimum temperature, and never
/// above the current temperature.
pub fn anneal_step(schedule: &AnnealSchedule, state: &AnnealState) -> f64 {
    if !gates_open(schedule, state) {
        return state.tau;
    }
    let proposed = match schedule.rule {
        AnnealRule::Type1 => 10f64.powi(-((state.t / 1000) as i32)),
        AnnealRule::Type2 { ratio } => state.tau * ratio,
        AnnealRule::Type3 { step } => {
            let Some(slope) = state.dloss_dtau else {
                return state.tau;
            };
            let denom = slope.min(-state.loss);
            if !(denom.abs() >= 1e-12) {
                return state.tau;
            }
            state.tau + step * state.loss / denom
        }
    };
    let clamped = proposed.max(schedule.min_temperature);
    if clamped < state.tau {
        clamped
    } else {
        state.tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(t: usize, tau: f64) -> AnnealState {
        AnnealState { t, tau, iters_at_tau: 60, loss: 0.05, dloss_dtau: None }
    }

    #[test]
    fn type1_uses_thousands() {
        assert_eq!(anneal_step(&AnnealSchedule::type1(), &state(1500, 1.0)), 0.1);
    }

    #[test]
    fn type2_ratio() {
        let tau = anneal_step(&AnnealSchedule::type2(), &state(10, 0.05));
        assert!((tau - 0.04).abs() < 1e-15);
    }

    #[test]
    fn closed_gates_keep_tau() {
        let mut s = state(1500, 1.0);
        s.iters_at_tau = 49;
        assert_eq!(anneal_step(&AnnealSchedule::type1(), &s), 1.0);
        let mut s = state(1500, 1.0);
        s.loss = 0.2;
        assert_eq!(anneal_step(&AnnealSchedule::type2(), &s), 1.0);
    }

    #[test]
    fn floor_and_no_raise() {
        assert_eq!(anneal_step(&AnnealSchedule::type2(), &state(0, 0.011)), 0.01);
        assert_eq!(anneal_step(&AnnealSchedule::type1(), &state(5000, 0.0)), 0.0);
    }

    #[test]
    fn type3_rule() {
        let mut s = state(10, 0.5);
        s.dloss_dtau = Some(-0.2);
        // denominator min(-0.2, -0.05) = -0.2
        let tau = anneal_step(&AnnealSchedule::type3(), &s);
        assert!((tau - (0.5 - 0.1 * 0.05 / 0.2)).abs() < 1e-15);
        s.dloss_dtau = Some(1.0);
        s.loss = 0.0;
        assert_eq!(anneal_step(&AnnealSchedule::type3(), &s), 0.5);
        s.dloss_dtau = None;
        assert_eq!(anneal_step(&AnnealSchedule::type3(), &s), 0.5);
    }
}
