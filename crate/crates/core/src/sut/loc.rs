//! Built-in lubricating-oil-cooling reference model.
//!
//! A PI controller positions the cooler valve to hold the oil temperature at
//! its set-point. The model is synthetic: equations and parameters were chosen
//! so the closed loop settles well inside a 3000 s horizon.

use serde::{Deserialize, Serialize};

use crate::signals::{SignalBundle, Trace};

use super::{check_inputs, loc_interface, BackendKind, Simulator, SutDescriptor, SutError, LOC_PARAMETERS};

pub const ENGINE_LOAD: &str = "engine_load";
pub const COOLANT_TEMP_IN: &str = "temperature_cooling_liquid_in";
pub const COOLANT_FLOW_IN: &str = "mass_flow_cooling_liquid_in";
pub const SETPOINT: &str = "setpoint_temperature_oil";
pub const OIL_TEMP: &str = "temperature_oil";
pub const VALVE: &str = "position_valve";
pub const COOLANT_TEMP_OUT: &str = "temperature_cooling_liquid_out";
pub const COOLANT_FLOW_OUT: &str = "mass_flow_cooling_liquid_out";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocParams {
    /// J/K
    pub oil_heat_capacity: f64,
    /// W at full engine load
    pub max_heat_load: f64,
    /// W/K with the valve fully open
    pub cooler_conductance: f64,
    pub kp: f64,
    pub ki: f64,
    /// J/(kg K)
    pub water_heat_capacity: f64,
    /// kg/s, floor used in the outlet temperature
    pub min_water_flow: f64,
    /// s
    pub max_substep: f64,
}

impl Default for LocParams {
    fn default() -> Self {
        serde_json::from_str(LOC_PARAMETERS).expect("bundled LOC parameters are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocInputs {
    pub engine_load: f64,
    pub coolant_temp_in: f64,
    pub coolant_flow_in: f64,
    pub setpoint: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocOutputs {
    pub oil_temp: f64,
    pub valve: f64,
    pub coolant_temp_out: f64,
    pub coolant_flow_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocState {
    pub oil_temperature: f64,
    pub valve_integrator: f64,
    pub time: f64,
}

impl LocState {
    /// Oil at the set-point, integrator empty.
    pub fn start(setpoint: f64, time: f64) -> Self {
        Self {
            oil_temperature: setpoint,
            valve_integrator: 0.0,
            time,
        }
    }
}

impl LocParams {
    fn valve(&self, state: &LocState, u: &LocInputs) -> (f64, f64) {
        let error = state.oil_temperature - u.setpoint;
        let raw = self.kp * error + self.ki * state.valve_integrator;
        (raw.clamp(0.0, 1.0), raw)
    }

    /// Outputs for the current state.
    pub fn outputs(&self, state: &LocState, u: &LocInputs) -> LocOutputs {
        let (valve, _) = self.valve(state, u);
        let q_cool = self.heat_removed(state, u, valve);
        LocOutputs {
            oil_temp: state.oil_temperature,
            valve,
            coolant_temp_out: u.coolant_temp_in
                + q_cool / (u.coolant_flow_in.max(self.min_water_flow) * self.water_heat_capacity),
            coolant_flow_out: u.coolant_flow_in,
        }
    }

    fn heat_removed(&self, state: &LocState, u: &LocInputs, valve: f64) -> f64 {
        (self.cooler_conductance * valve * (state.oil_temperature - u.coolant_temp_in)).max(0.0)
    }

    /// Equilibrium for constant inputs `u`: oil at the set-point and the
    /// integrator holding the valve where cooling balances the load. When
    /// full cooling cannot balance the load the valve starts saturated.
    pub fn steady_state(&self, u: &LocInputs, time: f64) -> LocState {
        let span = self.cooler_conductance * (u.setpoint - u.coolant_temp_in);
        let valve = if span > 0.0 {
            (self.max_heat_load * u.engine_load / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        LocState {
            oil_temperature: u.setpoint,
            valve_integrator: valve / self.ki,
            time,
        }
    }

    /// One explicit-Euler step of length `dt`. The integrator is frozen while
    /// the valve is saturated in the direction the error pushes it.
    pub fn euler(&self, state: &LocState, u: &LocInputs, dt: f64) -> LocState {
        let error = state.oil_temperature - u.setpoint;
        let (valve, raw) = self.valve(state, u);
        let winding_up = (raw > 1.0 && error > 0.0) || (raw < 0.0 && error < 0.0);
        let q_gen = self.max_heat_load * u.engine_load;
        let q_cool = self.heat_removed(state, u, valve);
        LocState {
            oil_temperature: state.oil_temperature + dt * (q_gen - q_cool) / self.oil_heat_capacity,
            valve_integrator: if winding_up {
                state.valve_integrator
            } else {
                state.valve_integrator + error * dt
            },
            time: state.time + dt,
        }
    }
}

/// Advances the state by `dt` under constant inputs, sub-stepping so no
/// Euler step exceeds `max_substep`, and returns the outputs at the new state.
pub fn loc_step(
    params: &LocParams,
    state: &LocState,
    u: &LocInputs,
    dt: f64,
) -> Result<(LocState, LocOutputs), SutError> {
    if !(dt > 0.0) {
        return Err(SutError::Numeric {
            time: state.time,
            message: format!("step {dt} is not positive"),
        });
    }
    let n = (dt / params.max_substep).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut s = *state;
    for _ in 0..n {
        s = params.euler(&s, u, h);
    }
    s.time = state.time + dt;
    if !(s.oil_temperature.is_finite() && s.valve_integrator.is_finite()) {
        return Err(SutError::Numeric {
            time: s.time,
            message: "state is not finite".into(),
        });
    }
    Ok((s, params.outputs(&s, u)))
}

pub struct LocSimulator {
    descriptor: SutDescriptor,
    params: LocParams,
}

impl LocSimulator {
    pub fn new() -> Result<Self, SutError> {
        Ok(Self::with_params(LocParams::default()))
    }

    pub fn with_params(params: LocParams) -> Self {
        Self {
            descriptor: SutDescriptor {
                id: "builtin:loc".into(),
                interface: loc_interface(),
                backend: BackendKind::BuiltinLoc,
            },
            params,
        }
    }

    pub fn params(&self) -> &LocParams {
        &self.params
    }
}

impl Simulator for LocSimulator {
    fn descriptor(&self) -> &SutDescriptor {
        &self.descriptor
    }

    /// Inputs are held constant over each grid interval; the model starts in
    /// equilibrium with the first input sample.
    fn simulate(&mut self, inputs: &SignalBundle) -> Result<SignalBundle, SutError> {
        check_inputs(&self.descriptor.interface, inputs)?;
        let grid = inputs.grid;
        let series = |name: &str| inputs.values(name).expect("checked by check_inputs");
        let (load, t_in, flow, sp) = (
            series(ENGINE_LOAD),
            series(COOLANT_TEMP_IN),
            series(COOLANT_FLOW_IN),
            series(SETPOINT),
        );
        let at = |i: usize| LocInputs {
            engine_load: load[i],
            coolant_temp_in: t_in[i],
            coolant_flow_in: flow[i],
            setpoint: sp[i],
        };

        let n = grid.len();
        let mut columns: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
        // Runs start at the operating point of the first input sample.
        let mut state = self.params.steady_state(&at(0), grid.start);
        for i in 0..n {
            let u = at(i);
            if i > 0 {
                let dt = grid.time(i) - grid.time(i - 1);
                let (next, _) = loc_step(&self.params, &state, &at(i - 1), dt)?;
                state = next;
            }
            let y = self.params.outputs(&state, &u);
            for (column, value) in columns
                .iter_mut()
                .zip([y.oil_temp, y.valve, y.coolant_temp_out, y.coolant_flow_out])
            {
                column.push(value);
            }
        }

        let mut out = SignalBundle::new(grid);
        let [oil, valve, t_out, f_out] = columns;
        for (name, values) in [
            (OIL_TEMP, oil),
            (VALVE, valve),
            (COOLANT_TEMP_OUT, t_out),
            (COOLANT_FLOW_OUT, f_out),
        ] {
            out.insert(Trace::new(name, grid, values)?)?;
        }
        Ok(out)
    }
}
