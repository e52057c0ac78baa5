use serde::{Deserialize, Serialize};

/// Linear anneal from `start` to `end` over the first `fraction` of `total`
/// steps, constant at `end` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
    pub total: u64,
}

impl Schedule {
    pub fn new(start: f64, end: f64, fraction: f64, total: u64) -> Self {
        Self {
            start,
            end,
            fraction,
            total,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(value, value, 0.0, 0)
    }

    /// Same endpoints and fraction, stretched over a different step count.
    pub fn with_total(self, total: u64) -> Self {
        Self { total, ..self }
    }

    /// Value at step `t`; steps past `total` clamp to `end`.
    pub fn value(&self, t: u64) -> f64 {
        let horizon = self.fraction * self.total as f64;
        let t = t as f64;
        if t >= horizon {
            self.end
        } else {
            self.start + (self.end - self.start) * t / horizon
        }
    }
}

/// Free-function form of [`Schedule::value`].
pub fn schedule_value(s: &Schedule, t: u64) -> f64 {
    s.value(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lr() -> Schedule {
        Schedule::new(0.005, 0.0005, 0.9, 30_000)
    }

    #[test]
    fn learning_rate_endpoints() {
        assert_eq!(lr().value(0), 0.005);
        assert_eq!(lr().value(27_000), 0.0005);
        assert_eq!(lr().value(30_000), 0.0005);
        assert_eq!(lr().value(1_000_000), 0.0005);
    }

    #[test]
    fn linear_midpoint() {
        assert!((lr().value(13_500) - 0.00275).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(start in -5.0f64..5.0, end in -5.0f64..5.0,
                                fraction in 0.0f64..1.0, total in 1u64..10_000,
                                t in 0u64..12_000) {
            let s = Schedule::new(start, end, fraction, total);
            let v = s.value(t);
            prop_assert!(v >= start.min(end) - 1e-12 && v <= start.max(end) + 1e-12);
            let next = s.value(t + 1);
            if end >= start { prop_assert!(next >= v - 1e-12) } else { prop_assert!(next <= v + 1e-12) }
        }
    }
}
