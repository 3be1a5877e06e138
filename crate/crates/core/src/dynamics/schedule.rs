use serde::{Deserialize, Serialize};

/// Rule producing the step size `dt` for a `K`-step recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Constant `dt`, 0.5 by default.
    Fixed {
        #[serde(default = "default_fixed")]
        value: f64,
    },
    /// `dt = 1 / K`.
    InverseK,
    /// `dt = 0.1 + 0.4 * sigmoid(alpha)` with a trainable scalar `alpha`.
    Learnable {
        #[serde(default)]
        alpha_init: f64,
    },
}

fn default_fixed() -> f64 {
    0.5
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::InverseK
    }
}

impl Schedule {
    pub const HALF: Schedule = Schedule::Fixed { value: 0.5 };

    /// Step size for `k >= 1` steps. `alpha` overrides the initial value of
    /// a learnable schedule.
    pub fn value(&self, k: usize, alpha: Option<f64>) -> f64 {
        match *self {
            Schedule::Fixed { value } => value,
            Schedule::InverseK => 1.0 / k.max(1) as f64,
            Schedule::Learnable { alpha_init } => learnable_dt(alpha.unwrap_or(alpha_init)),
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, Schedule::Learnable { .. })
    }
}

/// `0.1 + 0.4 * sigmoid(alpha)`, always inside `(0.1, 0.5)`.
pub fn learnable_dt(alpha: f64) -> f64 {
    0.1 + 0.4 / (1.0 + (-alpha).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_k_at_four_steps() {
        assert_eq!(Schedule::InverseK.value(4, None), 0.25);
    }

    #[test]
    fn fixed_half_ignores_k() {
        for k in 1..10 {
            assert_eq!(Schedule::HALF.value(k, None), 0.5);
        }
    }

    #[test]
    fn learnable_at_zero_alpha() {
        let s = Schedule::Learnable { alpha_init: 0.0 };
        assert!((s.value(4, None) - 0.3).abs() < 1e-15);
        for a in [-50.0, -3.0, 0.0, 3.0, 50.0] {
            let v = s.value(4, Some(a));
            assert!((0.1..=0.5).contains(&v));
        }
    }

    #[test]
    fn serde_shape() {
        let s: Schedule = serde_json::from_str(r#"{"kind":"fixed"}"#).unwrap();
        assert_eq!(s, Schedule::HALF);
        let s: Schedule = serde_json::from_str(r#"{"kind":"inverse_k"}"#).unwrap();
        assert_eq!(s, Schedule::InverseK);
    }
}
