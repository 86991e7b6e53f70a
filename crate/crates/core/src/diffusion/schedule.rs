use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Offset in the square-root schedule; keeps `ᾱ_0` just below one.
pub const SQRT_OFFSET: f64 = 1e-4;
pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 2e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Sqrt,
    Linear,
}

/// Noise schedule over `t = 0..T`: `β_t ∈ (0,1)`, `ᾱ_t` strictly decreasing.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Posterior `q(z_prev | z_t, z_0)` between two (possibly respaced)
    /// steps `t > prev`: `(coef_x0, coef_xt, variance)`.
    pub fn posterior(&self, t: usize, prev: usize) -> (f64, f64, f64) {
        let ab = self.alpha_bars[t];
        let ab_prev = self.alpha_bars[prev];
        let beta = 1.0 - ab / ab_prev;
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = beta * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct, var)
    }
}

pub fn make_schedule(t_total: usize, kind: ScheduleKind) -> Result<Schedule, DiffusionError> {
    if t_total == 0 {
        return Err(DiffusionError::InvalidT(t_total));
    }
    let n = t_total as f64;
    let (betas, alpha_bars) = match kind {
        ScheduleKind::Sqrt => {
            let ab: Vec<f64> = (0..t_total)
                .map(|t| 1.0 - ((t as f64 + 1.0) / (n + SQRT_OFFSET)).sqrt())
                .collect();
            let betas = (0..t_total)
                .map(|t| if t == 0 { 1.0 - ab[0] } else { 1.0 - ab[t] / ab[t - 1] })
                .collect();
            (betas, ab)
        }
        ScheduleKind::Linear => {
            let betas: Vec<f64> = (0..t_total)
                .map(|t| {
                    if t_total == 1 {
                        LINEAR_BETA_START
                    } else {
                        LINEAR_BETA_START + (LINEAR_BETA_END - LINEAR_BETA_START) * t as f64 / (n - 1.0)
                    }
                })
                .collect();
            let ab = betas
                .iter()
                .scan(1.0, |acc, b| {
                    *acc *= 1.0 - b;
                    Some(*acc)
                })
                .collect();
            (betas, ab)
        }
    };
    Ok(Schedule {
        kind,
        betas,
        alpha_bars,
    })
}

/// `k` evenly spaced steps from `T−1` down to `0`, both endpoints included.
pub fn respace_steps(t_total: usize, k: usize) -> Result<Vec<usize>, DiffusionError> {
    if k == 0 || k > t_total {
        return Err(DiffusionError::InvalidK { k, t_total });
    }
    if k == 1 {
        return Ok(vec![t_total - 1]);
    }
    let last = (t_total - 1) as f64;
    Ok((0..k)
        .map(|i| (last * (k - 1 - i) as f64 / (k - 1) as f64).round() as usize)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sqrt_full_length() {
        let s = make_schedule(1000, ScheduleKind::Sqrt).unwrap();
        assert!(s.alpha_bars[0] > 0.96);
        // closed form at the first step: 1 − sqrt(1/(1000 + 1e-4))
        assert!((s.alpha_bars[0] - 0.968_377_2).abs() < 1e-6);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.betas.iter().all(|&b| b > 0.0 && b < 1.0));
    }

    #[test]
    fn single_step_schedules() {
        for kind in [ScheduleKind::Sqrt, ScheduleKind::Linear] {
            let s = make_schedule(1, kind).unwrap();
            assert_eq!(s.len(), 1);
            assert!(s.betas[0] > 0.0 && s.betas[0] < 1.0);
        }
        assert_eq!(make_schedule(0, ScheduleKind::Sqrt), Err(DiffusionError::InvalidT(0)));
    }

    #[test]
    fn respacing() {
        let r = respace_steps(1000, 100).unwrap();
        assert_eq!((r.len(), r[0], r[99]), (100, 999, 0));
        assert_eq!(respace_steps(5, 5).unwrap(), vec![4, 3, 2, 1, 0]);
        assert_eq!(respace_steps(7, 1).unwrap(), vec![6]);
        assert!(respace_steps(3, 4).is_err());
        assert!(respace_steps(3, 0).is_err());
    }

    #[test]
    fn posterior_between_adjacent_steps() {
        let s = make_schedule(10, ScheduleKind::Linear).unwrap();
        let (c0, ct, var) = s.posterior(5, 4);
        let b = s.betas[5];
        let (ab, abp) = (s.alpha_bars[5], s.alpha_bars[4]);
        assert!((c0 - abp.sqrt() * b / (1.0 - ab)).abs() < 1e-12);
        assert!((ct - (1.0 - b).sqrt() * (1.0 - abp) / (1.0 - ab)).abs() < 1e-12);
        assert!((var - b * (1.0 - abp) / (1.0 - ab)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn schedules_are_monotone(t in 2usize..2000, sqrt in any::<bool>()) {
            let kind = if sqrt { ScheduleKind::Sqrt } else { ScheduleKind::Linear };
            let s = make_schedule(t, kind).unwrap();
            prop_assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(s.betas.iter().all(|&b| b > 0.0 && b < 1.0));
        }

        #[test]
        fn respaced_steps_are_strictly_decreasing(t in 1usize..1500, frac in 0.0f64..1.0) {
            let k = 1 + ((t - 1) as f64 * frac) as usize;
            let r = respace_steps(t, k).unwrap();
            prop_assert_eq!(r.len(), k);
            prop_assert_eq!(r[0], t - 1);
            prop_assert!(r.windows(2).all(|w| w[1] < w[0]));
            if k > 1 { prop_assert_eq!(*r.last().unwrap(), 0); }
        }
    }
}
