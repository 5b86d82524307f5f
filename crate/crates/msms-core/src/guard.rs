//! Overflow-guarded exponentials with a clamp diagnostic.
//!
//! All exponentials in likelihood and effect computations go through
//! [`NumGuard::exp`], which clamps the argument to ±700 before
//! exponentiating and counts how often clamping fired. A converged fit must
//! report zero clamps; a nonzero count flags that some linear predictor ran
//! away during optimization.

use std::sync::atomic::{AtomicU64, Ordering};

pub const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Default)]
pub struct NumGuard {
    clamps: AtomicU64,
}

impl NumGuard {
    pub fn new() -> Self {
        Self::default()
    }

    /// `exp(clamp(v, -700, 700))`, counting clamp events.
    #[inline]
    pub fn exp(&self, v: f64) -> f64 {
        if v > EXP_CLAMP {
            self.clamps.fetch_add(1, Ordering::Relaxed);
            EXP_CLAMP.exp()
        } else if v < -EXP_CLAMP {
            self.clamps.fetch_add(1, Ordering::Relaxed);
            (-EXP_CLAMP).exp()
        } else {
            v.exp()
        }
    }

    /// Number of clamp events since construction (or the last `reset`).
    pub fn clamps(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.clamps.store(0, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_are_counted() {
        let g = NumGuard::new();
        assert_eq!(g.exp(0.0), 1.0);
        assert_eq!(g.clamps(), 0);
        assert!(g.exp(1.0e4).is_finite());
        assert_eq!(g.exp(-1.0e4), (-EXP_CLAMP).exp());
        assert_eq!(g.clamps(), 2);
        g.reset();
        assert_eq!(g.clamps(), 0);
    }
}
