//! Interactive session: a simulation driven by velocity commands, plus the
//! JSON frames exchanged with remote viewers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observer::Slot;
use crate::scenario::Scenario;
use crate::sim::{SimError, Simulation, StepEvent};

pub const FRAME_VERSION: u32 = 1;
/// Commanded speeds are clamped to this magnitude per axis (m/s).
pub const MAX_COMMAND_SPEED: f64 = 1.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StateFlags {
    pub saturated: bool,
    pub negative_clamped: bool,
    pub omega_max_clamped: bool,
    pub envelope_clamped: bool,
    pub offset_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerFrame {
    State {
        v: u32,
        t: f64,
        p1: [f64; 3],
        theta1: [f64; 3],
        xc1: [f64; 3],
        xc1_hat: [f64; 3],
        landed: bool,
        flags: StateFlags,
    },
    Event {
        v: u32,
        name: String,
        t: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientFrame {
    Cmd { v: u32, vx: f64, vy: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unsupported frame version {0}")]
    Version(u32),
    #[error("non-finite command")]
    NonFinite,
}

impl ClientFrame {
    pub fn cmd(vx: f64, vy: f64) -> Self {
        Self::Cmd { v: FRAME_VERSION, vx, vy }
    }

    /// Parses and validates a text frame.
    pub fn parse(text: &str) -> Result<Self, FrameError> {
        let f: Self = serde_json::from_str(text).map_err(|e| FrameError::Malformed(e.to_string()))?;
        let Self::Cmd { v, vx, vy } = f;
        if v != FRAME_VERSION {
            return Err(FrameError::Version(v));
        }
        if !vx.is_finite() || !vy.is_finite() {
            return Err(FrameError::NonFinite);
        }
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }
}

impl ServerFrame {
    pub fn landed(t: f64) -> Self {
        Self::Event { v: FRAME_VERSION, name: "landed".into(), t }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }
}

/// Owns the simulation for one interactive run. Time only advances through
/// [`TeleopSession::advance`]; once landed the state is frozen.
pub struct TeleopSession {
    sim: Simulation<f64>,
    command: (f64, f64),
    finished: bool,
}

impl TeleopSession {
    /// The scenario's reference must be a velocity-command driver.
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let mut sim = Simulation::new(scenario)?;
        sim.set_logging(false);
        sim.set_velocity_command(0.0, 0.0)?;
        Ok(Self { sim, command: (0.0, 0.0), finished: false })
    }

    pub fn simulation(&self) -> &Simulation<f64> {
        &self.sim
    }

    pub fn command(&self) -> (f64, f64) {
        self.command
    }

    /// Sets the ground-vehicle velocity command, clamped per axis.
    pub fn set_command(&mut self, vx: f64, vy: f64) {
        let c = |v: f64| v.clamp(-MAX_COMMAND_SPEED, MAX_COMMAND_SPEED);
        self.command = (c(vx), c(vy));
        self.sim.set_velocity_command(self.command.0, self.command.1).expect("driver accepts commands");
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    /// Steps until simulated time reaches `until` or the run ends. Returns
    /// the landing event when it happens during this call.
    pub fn advance(&mut self, until: f64) -> Result<Option<ServerFrame>, SimError> {
        while !self.finished && self.sim.time() < until - 0.5 * self.sim.scenario().timing.dt_plant {
            match self.sim.step()? {
                StepEvent::Running => {}
                StepEvent::Landed => {
                    self.finished = self.sim.scenario().stop_on_landing;
                    return Ok(Some(ServerFrame::landed(self.sim.time())));
                }
                StepEvent::Finished => self.finished = true,
            }
        }
        Ok(None)
    }

    pub fn snapshot(&self) -> ServerFrame {
        let r = self.sim.record();
        ServerFrame::State {
            v: FRAME_VERSION,
            t: r.t,
            p1: r.p1,
            theta1: r.theta1,
            xc1: r.xc1,
            xc1_hat: r.slot_hat(Slot::Xc1),
            landed: r.landed,
            flags: StateFlags {
                saturated: r.sat_clipped > 0,
                negative_clamped: r.negative_clamped,
                omega_max_clamped: r.omega_max_clamped,
                envelope_clamped: r.envelope_clamped,
                offset_active: r.offset_active,
            },
        }
    }
}
