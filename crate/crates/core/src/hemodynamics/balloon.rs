//! Balloon–Windkessel hemodynamics: four-state ODE per region plus the BOLD
//! output nonlinearity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest integration step accepted by [`integrate_balloon`].
pub const MAX_DT: f64 = 0.1;

/// Biophysical parameters of one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalloonParams {
    /// Signal decay rate (1/s).
    pub kappa: f64,
    /// Flow-dependent elimination rate (1/s).
    pub gamma: f64,
    /// Hemodynamic transit time (s).
    pub tau: f64,
    /// Grubb exponent.
    pub alpha: f64,
    /// Resting oxygen extraction fraction.
    pub rho: f64,
}

impl BalloonParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kappa > 0.0
            && self.gamma > 0.0
            && self.tau > 0.0
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.rho > 0.0
            && self.rho < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("balloon parameters out of range: {self:?}")))
        }
    }
}

/// Hemodynamic state `(s, f, v, q)`; also used for its time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalloonState {
    pub s: f64,
    pub f: f64,
    pub v: f64,
    pub q: f64,
}

impl BalloonState {
    pub const EQUILIBRIUM: BalloonState = BalloonState {
        s: 0.0,
        f: 1.0,
        v: 1.0,
        q: 1.0,
    };

    fn axpy(&self, h: f64, d: &BalloonState) -> BalloonState {
        BalloonState {
            s: self.s + h * d.s,
            f: self.f + h * d.f,
            v: self.v + h * d.v,
            q: self.q + h * d.q,
        }
    }

    fn is_admissible(&self) -> bool {
        self.f > 0.0 && self.v > 0.0 && self.q > 0.0 && self.s.is_finite()
    }
}

/// Scanner and vessel constants entering the BOLD output equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputConstants {
    pub v0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub t_e: f64,
    pub theta0: f64,
    pub epsilon: f64,
    pub r0: f64,
}

/// Physical constants from which [`OutputConstants`] are derived for a given
/// oxygen extraction fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoldPhysics {
    pub v0: f64,
    /// Echo time (s).
    pub t_e: f64,
    /// Frequency offset at the outer vessel surface (1/s).
    pub theta0: f64,
    /// Intra- to extravascular signal ratio.
    pub epsilon: f64,
    /// Intravascular relaxation slope (1/s).
    pub r0: f64,
}

impl Default for BoldPhysics {
    fn default() -> Self {
        Self {
            v0: 0.4,
            t_e: 0.04,
            theta0: 40.3,
            epsilon: 0.4,
            r0: 25.0,
        }
    }
}

impl OutputConstants {
    pub fn derive(physics: &BoldPhysics, rho: f64) -> Self {
        Self {
            v0: physics.v0,
            k1: 4.3 * physics.theta0 * rho * physics.t_e,
            k2: physics.epsilon * physics.r0 * rho * physics.t_e,
            k3: 1.0 - physics.epsilon,
            t_e: physics.t_e,
            theta0: physics.theta0,
            epsilon: physics.epsilon,
            r0: physics.r0,
        }
    }
}

/// Right-hand side of the hemodynamic ODE driven by neuronal input `x`.
pub fn balloon_derivatives(state: &BalloonState, x: f64, p: &BalloonParams) -> Result<BalloonState> {
    let BalloonState { s, f, v, q } = *state;
    if !(f > 0.0) || !(v > 0.0) {
        return Err(Error::Domain(format!(
            "inflow and volume must be positive, got f={f}, v={v}"
        )));
    }
    let outflow = v.powf(1.0 / p.alpha);
    let extraction = (f / p.rho) * (1.0 - (1.0 - p.rho).powf(1.0 / f));
    Ok(BalloonState {
        s: x - p.kappa * s - p.gamma * (f - 1.0),
        f: s,
        v: (f - outflow) / p.tau,
        q: (extraction - outflow * q / v) / p.tau,
    })
}

/// Noiseless BOLD signal for a hemodynamic state.
pub fn bold_output(state: &BalloonState, c: &OutputConstants) -> Result<f64> {
    let BalloonState { v, q, .. } = *state;
    if !(v > 0.0) {
        return Err(Error::Domain(format!("volume must be positive, got v={v}")));
    }
    Ok(c.v0 * (c.k1 * (1.0 - q) + c.k2 * (1.0 - q / v) + c.k3 * (1.0 - v)))
}

fn rk4_step(state: &BalloonState, x: f64, p: &BalloonParams, dt: f64) -> Result<BalloonState> {
    let k1 = balloon_derivatives(state, x, p)?;
    let k2 = balloon_derivatives(&state.axpy(0.5 * dt, &k1), x, p)?;
    let k3 = balloon_derivatives(&state.axpy(0.5 * dt, &k2), x, p)?;
    let k4 = balloon_derivatives(&state.axpy(dt, &k3), x, p)?;
    Ok(BalloonState {
        s: state.s + dt / 6.0 * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s),
        f: state.f + dt / 6.0 * (k1.f + 2.0 * k2.f + 2.0 * k3.f + k4.f),
        v: state.v + dt / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
        q: state.q + dt / 6.0 * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q),
    })
}

/// Integrates the hemodynamic ODE from equilibrium with fixed-step RK4.
///
/// `x[k]` is held constant over `[k·dt, (k+1)·dt)`; the returned `y[k]` is
/// the BOLD value at time `k·dt`, so `y[0]` is always the equilibrium output.
pub fn integrate_balloon(
    x: &[f64],
    params: &BalloonParams,
    consts: &OutputConstants,
    dt: f64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::invalid(format!("dt must lie in (0, {MAX_DT}], got {dt}")));
    }
    params.validate()?;
    let mut state = BalloonState::EQUILIBRIUM;
    let mut y = Vec::with_capacity(x.len());
    for (k, &xk) in x.iter().enumerate() {
        if !xk.is_finite() {
            return Err(Error::Integration {
                step: k,
                reason: "non-finite input".into(),
            });
        }
        y.push(bold_output(&state, consts)?);
        let next = rk4_step(&state, xk, params, dt).map_err(|e| Error::Integration {
            step: k,
            reason: e.to_string(),
        })?;
        if !next.is_admissible() {
            return Err(Error::Integration {
                step: k,
                reason: format!("state left the positive orthant: {next:?}"),
            });
        }
        state = next;
    }
    Ok(y)
}
