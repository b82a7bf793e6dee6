use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{HybridError, Result};
use crate::hybrid::EPS_TRANS;

/// Label of a discrete mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeId(pub usize);

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type FieldFn = Box<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type FieldJacFn = Box<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type GuardFn = Box<dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync>;
/// Returns (Dt g, Dx g) at (t, x); Dx g is a row gradient stored as a vector.
pub type GuardGradFn = Box<dyn Fn(f64, &DVector<f64>) -> (f64, DVector<f64>) + Send + Sync>;
pub type ResetFn = Box<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Returns (Dt R, Dx R) at (t, x).
pub type ResetJacFn = Box<dyn Fn(f64, &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync>;

/// One directed transition of the hybrid system: guard, reset, and their
/// differentials. The guard follows the sublevel-set convention: the
/// transition fires when g crosses from positive to non-positive.
pub struct TransitionSpec {
    pub from: ModeId,
    pub to: ModeId,
    pub guard: GuardFn,
    pub guard_gradient: GuardGradFn,
    pub reset: ResetFn,
    pub reset_jacobian: ResetJacFn,
}

impl TransitionSpec {
    /// Guard rate along the flow, Dt g + Dx g . F, at (t, x).
    pub fn guard_rate(&self, sys: &HybridSystemDef, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let (dtg, dxg) = (self.guard_gradient)(t, x);
        let f_minus = sys.field(self.from, t, x, u);
        dtg + dxg.dot(&f_minus)
    }
}

/// An event-driven hybrid dynamical system with a shared state dimension
/// across modes. Domains are implicit: a state is inside mode I's domain
/// while every outgoing guard of I is positive.
pub struct HybridSystemDef {
    /// Shared state dimension n.
    pub n: usize,
    pub modes: Vec<ModeId>,
    /// Per-mode vector fields F_I(t, x, u), indexed by mode id.
    pub vector_fields: Vec<FieldFn>,
    /// Per-mode field Jacobians dF/dx. `None` falls back to central finite
    /// differences of the field.
    pub field_jacobians: Vec<Option<FieldJacFn>>,
    pub transitions: Vec<TransitionSpec>,
}

impl HybridSystemDef {
    /// Evaluate mode I's vector field.
    pub fn field(&self, mode: ModeId, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.vector_fields[mode.0])(t, x, u)
    }

    /// Evaluate dF/dx for mode I, analytically when available, otherwise by
    /// central finite differences on the field.
    pub fn field_jacobian(
        &self,
        mode: ModeId,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DMatrix<f64> {
        match &self.field_jacobians[mode.0] {
            Some(jac) => jac(t, x, u),
            None => {
                let mut j = DMatrix::zeros(self.n, self.n);
                for col in 0..self.n {
                    let h = 1e-6 * x[col].abs().max(1.0);
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[col] += h;
                    xm[col] -= h;
                    let fp = self.field(mode, t, &xp, u);
                    let fm = self.field(mode, t, &xm, u);
                    j.set_column(col, &((fp - fm) / (2.0 * h)));
                }
                j
            }
        }
    }

    /// Whether mode I has an analytic field Jacobian.
    pub fn has_analytic_jacobian(&self, mode: ModeId) -> bool {
        self.field_jacobians[mode.0].is_some()
    }

    pub fn outgoing(&self, mode: ModeId) -> impl Iterator<Item = &TransitionSpec> {
        self.transitions.iter().filter(move |tr| tr.from == mode)
    }

    pub fn find_transition(&self, from: ModeId, to: ModeId) -> Option<&TransitionSpec> {
        self.transitions.iter().find(|tr| tr.from == from && tr.to == to)
    }

    /// Check that every mode referenced by a transition is declared.
    pub fn validate(&self) -> Result<()> {
        for tr in &self.transitions {
            for m in [tr.from, tr.to] {
                if !self.modes.contains(&m) {
                    return Err(HybridError::ParameterError(format!(
                        "transition references undeclared mode {m}"
                    )));
                }
            }
        }
        if self.vector_fields.len() != self.modes.len()
            || self.field_jacobians.len() != self.modes.len()
        {
            return Err(HybridError::ParameterError(
                "one vector field and one Jacobian slot required per mode".into(),
            ));
        }
        Ok(())
    }
}

/// Continuous state tagged with its mode and time.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub mode: ModeId,
    pub x: DVector<f64>,
    pub t: f64,
}

impl HybridState {
    pub fn new(mode: ModeId, x: DVector<f64>, t: f64) -> Self {
        Self { mode, x, t }
    }
}

/// Saltation matrix of a transition at the pre-impact point (t, x_minus):
///
/// Xi = Dx R + (F+_J - Dx R . F-_I - Dt R) (Dx g) / (Dt g + Dx g . F-_I)
///
/// where F+_J is evaluated at the reset point R(t, x_minus). Xi maps
/// pre-transition state variations to post-transition variations to first
/// order. Fails with `TangentialCrossing` when the guard rate magnitude is
/// at or below the transversality threshold.
pub fn saltation(
    sys: &HybridSystemDef,
    tr: &TransitionSpec,
    t: f64,
    x_minus: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let (dtg, dxg) = (tr.guard_gradient)(t, x_minus);
    let f_minus = sys.field(tr.from, t, x_minus, u);
    let denom = dtg + dxg.dot(&f_minus);
    if denom.abs() <= EPS_TRANS {
        return Err(HybridError::TangentialCrossing {
            from: tr.from,
            to: tr.to,
            rate: denom.abs(),
            threshold: EPS_TRANS,
        });
    }

    let (dtr, dxr) = (tr.reset_jacobian)(t, x_minus);
    let x_plus = (tr.reset)(t, x_minus);
    let f_plus = sys.field(tr.to, t, &x_plus, u);

    let numerator = f_plus - &dxr * &f_minus - dtr;
    // Rank-1 correction: outer product of the field jump with the guard gradient.
    let mut xi = dxr;
    xi.ger(1.0 / denom, &numerator, &dxg, 1.0);
    Ok(xi)
}
