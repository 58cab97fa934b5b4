//! Conjugate-gradient solver for damped symmetric positive-definite systems
//! `(A + damping·I)s = b`, where `A` is only available as a matrix-vector
//! product (the training-loss curvature operator).

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{add_scaled, dot, norm2};
use crate::model::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgConfig {
    /// Added to the diagonal before solving; stabilizes indefinite or
    /// ill-conditioned curvature.
    pub damping: f64,
    pub max_iters: usize,
    /// Relative residual target: stop once ‖r‖ ≤ tolerance·‖b‖.
    pub tolerance: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            damping: 0.01,
            max_iters: 200,
            tolerance: 1e-8,
        }
    }
}

impl CgConfig {
    /// Defaults keyed to the model family: ridge-regularized logistic
    /// regression has a positive-definite Hessian and needs no damping; the
    /// non-convex families get a small stabilizer.
    pub fn default_for(arch: &Architecture) -> Self {
        let damping = match arch {
            Architecture::Lr { l2_reg, .. } if *l2_reg > 0.0 => 0.0,
            _ => 0.01,
        };
        CgConfig {
            damping,
            ..CgConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(CoreError::Param(format!(
                "cg tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !self.damping.is_finite() || self.damping < 0.0 {
            return Err(CoreError::Param(format!(
                "cg damping must be finite and non-negative, got {}",
                self.damping
            )));
        }
        if self.max_iters == 0 {
            return Err(CoreError::Param("cg max_iters must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) struct CgSolution {
    pub x: Vec<f64>,
    pub converged: bool,
}

/// Run CG on `(A + damping·I)x = b`. Returns `Err` only on numerical
/// breakdown (non-finite iterates); hitting the iteration cap is reported
/// through `converged = false` so callers can flag rather than abort.
pub(crate) fn solve(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    cfg: &CgConfig,
) -> std::result::Result<CgSolution, ()> {
    let n = b.len();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            converged: true,
        });
    }
    let target = cfg.tolerance * b_norm;

    let apply_damped = |v: &[f64]| -> Vec<f64> {
        let mut av = apply(v);
        if cfg.damping != 0.0 {
            add_scaled(&mut av, v, cfg.damping);
        }
        av
    };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rs = dot(&r, &r);

    for _ in 0..cfg.max_iters {
        if rs.sqrt() <= target {
            return Ok(CgSolution { x, converged: true });
        }
        let ap = apply_damped(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(());
        }
        let alpha = rs / pap;
        add_scaled(&mut x, &p, alpha);
        add_scaled(&mut r, &ap, -alpha);
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(());
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }
    let converged = rs.sqrt() <= target;
    Ok(CgSolution { x, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_apply(v: &[f64]) -> Vec<f64> {
        // Fixed SPD matrix [[4,1,0],[1,3,1],[0,1,2]].
        vec![
            4.0 * v[0] + v[1],
            v[0] + 3.0 * v[1] + v[2],
            v[1] + 2.0 * v[2],
        ]
    }

    #[test]
    fn solves_small_spd_system() {
        let b = vec![1.0, -2.0, 0.5];
        let cfg = CgConfig {
            damping: 0.0,
            max_iters: 50,
            tolerance: 1e-12,
        };
        let sol = solve(spd_apply, &b, &cfg).unwrap();
        assert!(sol.converged);
        let back = spd_apply(&sol.x);
        for (got, want) in back.iter().zip(&b) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn damping_shifts_the_system() {
        let b = vec![1.0, 0.0, 0.0];
        let cfg = CgConfig {
            damping: 2.0,
            max_iters: 50,
            tolerance: 1e-12,
        };
        let sol = solve(spd_apply, &b, &cfg).unwrap();
        let mut back = spd_apply(&sol.x);
        add_scaled(&mut back, &sol.x, 2.0);
        for (got, want) in back.iter().zip(&b) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rhs_returns_zero_immediately() {
        let sol = solve(spd_apply, &[0.0; 3], &CgConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.x, vec![0.0; 3]);
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let cfg = CgConfig {
            damping: 0.0,
            max_iters: 1,
            tolerance: 1e-14,
        };
        let sol = solve(spd_apply, &[1.0, 1.0, 1.0], &cfg).unwrap();
        assert!(!sol.converged);
    }

    #[test]
    fn config_validation() {
        assert!(CgConfig::default().validate().is_ok());
        assert!(CgConfig {
            tolerance: 0.0,
            ..CgConfig::default()
        }
        .validate()
        .is_err());
        assert!(CgConfig {
            damping: -1.0,
            ..CgConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn lr_defaults_drop_damping() {
        let lr = Architecture::Lr {
            dim: 3,
            classes: 2,
            l2_reg: 0.1,
        };
        assert_eq!(CgConfig::default_for(&lr).damping, 0.0);
        let mlp = Architecture::Mlp {
            dim: 3,
            classes: 2,
            hidden: vec![4],
            l2_reg: 0.0,
        };
        assert_eq!(CgConfig::default_for(&mlp).damping, 0.01);
    }
}
