//! Fixed-step scenario engine.
//!
//! Per plant step the order is: draw measurement noise, run the controller
//! if this step is a controller tick (or evaluate it inside every derivative
//! call when the controller is continuous), log, then advance plant,
//! reference, observer and simulated rotors together with one RK4 step.

use nalgebra::{DVector, Vector3};
use thiserror::Error;

use crate::control::{
    output_feedback_step, rotational_stage, translational_stage, AllocationFlags, Allocator, ControlError,
    ControlGains, EstimateView, TranslationalInputs,
};
use crate::disturbance::DisturbanceSpec;
use crate::integrate::{rk4_step, NonFiniteState};
use crate::log::{self, FlagCounts, LogRecord, Summary, LOG_FORMAT_VERSION};
use crate::noise::{Channel, NoiseStream};
use crate::observer::{observer_derivative, saturate_estimates, set_slot, slot, Chi, ObserverGains, ObserverInputs, Slot, N_EST};
use crate::scalar::{lit, to_f64, Real};
use crate::scenario::{
    FeedbackMode, NoiseConfig, ReferenceHold, Rho1Source, RotorEstimateInit, RotorInit, SaturationBounds, Scenario,
    ScenarioError,
};
use crate::vehicle::{
    actuator_derivative, euler_rate_matrix_inv, mixer_forward, reference_derivative, rotational_derivative,
    translational_derivative, DynamicsError, ReferenceDriver, ReferenceState, VehicleParams, VehicleState,
};

/// Any state component above this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    NonFinite(#[from] NonFiniteState),
    #[error("state diverged at t = {t}: max |x| = {norm:e}")]
    Diverged { t: f64, norm: f64 },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Unsupported(String),
}

impl SimError {
    /// True for failures of the numerics (as opposed to configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::Dynamics(_) | Self::Control(_) | Self::NonFinite(_) | Self::Diverged { .. })
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    omega: usize,
    xc1: usize,
    xc2: usize,
    chi: usize,
    omega_hat: usize,
    len: usize,
}

impl Layout {
    fn new(n: usize) -> Self {
        let omega = 12;
        let xc1 = omega + n;
        let xc2 = xc1 + 3;
        let chi = xc2 + 3;
        let omega_hat = chi + N_EST;
        Self { n, omega, xc1, xc2, chi, omega_hat, len: omega_hat + n }
    }
}

fn v3<T: Real>(x: &DVector<T>, at: usize) -> Vector3<T> {
    x.fixed_rows::<3>(at).into_owned()
}

/// Controller outputs held between updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Held<T: Real> {
    pub omega_des: DVector<T>,
    pub theta_r: Vector3<T>,
    pub theta_r_dot: Vector3<T>,
    /// Time of the update that produced these values.
    pub t_k: T,
    pub u_fd: T,
    pub torque_d: Vector3<T>,
    pub flags: AllocationFlags,
    pub sat_clipped: u32,
    /// Exact lumped rotational term; known only in state feedback.
    pub varsigma_true: Option<Vector3<T>>,
}

#[derive(Debug, Clone, Copy)]
struct StepNoise<T: Real> {
    p1: Vector3<T>,
    theta1: Vector3<T>,
    xc1: Vector3<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    Running,
    Landed,
    Finished,
}

pub struct Simulation<T: Real> {
    scenario: Scenario,
    params: VehicleParams<T>,
    gains: ControlGains<T>,
    obs: ObserverGains<T>,
    bounds: Option<SaturationBounds>,
    allocator: Allocator<T>,
    driver: ReferenceDriver<T>,
    dist: DisturbanceSpec,
    noise: NoiseStream,
    layout: Layout,
    dt: f64,
    ctrl_div: Option<u64>,
    log_div: u64,
    k: u64,
    x: DVector<T>,
    held: Held<T>,
    offset_active: bool,
    offset_removed_at: Option<f64>,
    landed_at: Option<f64>,
    counts: FlagCounts,
    box_violation: Option<f64>,
    logging: bool,
    records: Vec<LogRecord>,
}

impl<T: Real> Simulation<T> {
    /// Builds the engine; missing saturation bounds are resolved with a
    /// state-feedback rehearsal first.
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let needs_bounds = scenario.mode == FeedbackMode::OutputFeedback && scenario.observer.saturation.enabled;
        let bounds = if needs_bounds { Some(resolve_saturation_bounds(scenario)?) } else { None };
        Self::with_bounds(scenario, bounds)
    }

    fn with_bounds(scenario: &Scenario, bounds: Option<SaturationBounds>) -> Result<Self, SimError> {
        let params = scenario.vehicle.build::<T>()?;
        let gains = scenario.gains.build::<T>()?;
        let mut oc = scenario.observer.clone();
        if scenario.mode == FeedbackMode::StateFeedback {
            oc.saturation.enabled = false;
        }
        let obs = oc.build::<T>(bounds.as_ref())?;
        let allocator = Allocator::new(&params)?;
        let driver = scenario.reference.build::<T>()?;
        let n = params.n_rotors();
        let layout = Layout::new(n);
        let noise = NoiseStream::new(scenario.seed);
        let ic = &scenario.initial;

        let mut x = DVector::zeros(layout.len);
        let put = |x: &mut DVector<T>, at: usize, v: [f64; 3]| {
            for i in 0..3 {
                x[at + i] = lit(v[i]);
            }
        };
        put(&mut x, 0, ic.theta1);
        put(&mut x, 3, ic.theta2);
        put(&mut x, 6, ic.p1);
        put(&mut x, 9, ic.p2);
        put(&mut x, layout.xc1, ic.xc1);
        put(&mut x, layout.xc2, ic.xc2);
        let rotor0 = match ic.rotors {
            RotorInit::Hover => params.hover_rotor_speed(),
            RotorInit::Zero => T::zero(),
        };
        for i in 0..n {
            x[layout.omega + i] = rotor0;
        }
        if scenario.mode == FeedbackMode::OutputFeedback {
            let xc1 = v3(&x, layout.xc1);
            let first = noise.inject(&xc1, scenario.noise.reference_position, Channel::ReferencePosition, 0);
            let mut chi = Chi::<T>::zeros();
            set_slot(&mut chi, Slot::Xc1, &first);
            x.rows_mut(layout.chi, N_EST).copy_from(&chi);
            if scenario.observer.initial_rotor_estimate == RotorEstimateInit::MatchPlant {
                for i in 0..n {
                    x[layout.omega_hat + i] = rotor0;
                }
            }
        }

        let held = Held {
            omega_des: DVector::from_element(n, rotor0),
            theta_r: Vector3::zeros(),
            theta_r_dot: Vector3::zeros(),
            t_k: T::zero(),
            u_fd: T::zero(),
            torque_d: Vector3::zeros(),
            flags: AllocationFlags::default(),
            sat_clipped: 0,
            varsigma_true: None,
        };
        let mut sim = Self {
            ctrl_div: scenario.controller_divisor(),
            log_div: scenario.log_divisor(),
            dt: scenario.timing.dt_plant,
            offset_active: scenario.gains.approach_offset > 0.0,
            scenario: scenario.clone(),
            params,
            gains,
            obs,
            bounds,
            allocator,
            driver,
            dist: scenario.disturbances.clone(),
            noise,
            layout,
            k: 0,
            x,
            held,
            offset_removed_at: None,
            landed_at: None,
            counts: FlagCounts::default(),
            box_violation: None,
            logging: true,
            records: Vec::new(),
        };
        if sim.ctrl_div.is_none() {
            sim.update_controller()?;
        }
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn params(&self) -> &VehicleParams<T> {
        &self.params
    }

    pub fn saturation_bounds(&self) -> Option<&SaturationBounds> {
        self.bounds.as_ref()
    }

    pub fn set_logging(&mut self, on: bool) {
        self.logging = on;
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn take_records(&mut self) -> Vec<LogRecord> {
        std::mem::take(&mut self.records)
    }

    pub fn step_index(&self) -> u64 {
        self.k
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.dt
    }

    fn t(&self) -> T {
        lit(self.time())
    }

    pub fn landed_at(&self) -> Option<f64> {
        self.landed_at
    }

    pub fn offset_active(&self) -> bool {
        self.offset_active
    }

    pub fn held(&self) -> &Held<T> {
        &self.held
    }

    pub fn counts(&self) -> &FlagCounts {
        &self.counts
    }

    pub fn operating_box_violation(&self) -> Option<f64> {
        self.box_violation
    }

    pub fn plant(&self) -> VehicleState<T> {
        self.vehicle_state(&self.x)
    }

    pub fn reference(&self) -> ReferenceState<T> {
        ReferenceState { xc1: v3(&self.x, self.layout.xc1), xc2: v3(&self.x, self.layout.xc2) }
    }

    /// Raw (unsaturated) observer estimates.
    pub fn estimates(&self) -> Chi<T> {
        self.x.fixed_rows::<N_EST>(self.layout.chi).into_owned()
    }

    pub fn omega_hat(&self) -> DVector<T> {
        self.x.rows(self.layout.omega_hat, self.layout.n).into_owned()
    }

    /// Replaces the commanded planar velocity of a velocity-command driver.
    pub fn set_velocity_command(&mut self, vx: f64, vy: f64) -> Result<(), SimError> {
        match &mut self.driver {
            ReferenceDriver::VelocityCommand { command, .. } => {
                command[0] = lit(vx);
                command[1] = lit(vy);
                Ok(())
            }
            _ => Err(SimError::Unsupported("reference driver does not accept velocity commands".into())),
        }
    }

    fn vehicle_state(&self, x: &DVector<T>) -> VehicleState<T> {
        VehicleState {
            theta1: v3(x, 0),
            theta2: v3(x, 3),
            p1: v3(x, 6),
            p2: v3(x, 9),
            omega: x.rows(self.layout.omega, self.layout.n).into_owned(),
        }
    }

    fn step_noise(&self, k: u64) -> StepNoise<T> {
        let n: &NoiseConfig = &self.scenario.noise;
        let z = Vector3::zeros();
        StepNoise {
            p1: self.noise.inject(&z, n.position, Channel::Position, k),
            theta1: self.noise.inject(&z, n.attitude, Channel::Attitude, k),
            xc1: self.noise.inject(&z, n.reference_position, Channel::ReferencePosition, k),
        }
    }

    /// Measurement noise drawn for plant step `k`: position, attitude and
    /// reference position, three components each.
    pub fn measurement_noise(&self, k: u64) -> [f64; 9] {
        let n = self.step_noise(k);
        let mut out = [0.0; 9];
        for (i, v) in [n.p1, n.theta1, n.xc1].iter().enumerate() {
            for j in 0..3 {
                out[3 * i + j] = to_f64(v[j]);
            }
        }
        out
    }

    fn offset_vec(&self) -> Vector3<T> {
        if self.offset_active {
            Vector3::new(T::zero(), T::zero(), -self.gains.approach_offset)
        } else {
            Vector3::zeros()
        }
    }

    /// Squared rotor rates the observer believes are acting.
    fn model_input(&self, x: &DVector<T>, held: &Held<T>) -> DVector<T> {
        if self.scenario.observer.include_actuator_dynamics {
            x.rows(self.layout.omega_hat, self.layout.n).map(|w| w * w)
        } else {
            held.omega_des.map(|w| w * w)
        }
    }

    fn saturated(&self, chi: &Chi<T>) -> (Chi<T>, u32) {
        match &self.obs.sat_bounds {
            Some(b) => {
                let (s, n) = saturate_estimates(chi, b);
                (s, n as u32)
            }
            None => (*chi, 0),
        }
    }

    fn estimate_view(&self, x: &DVector<T>) -> (EstimateView<T>, u32) {
        let chi: Chi<T> = x.fixed_rows::<N_EST>(self.layout.chi).into_owned();
        let (chis, clipped) = self.saturated(&chi);
        let est = EstimateView {
            rho1: slot(&chis, Slot::Rho1) - self.offset_vec(),
            rho2: slot(&chis, Slot::Rho2),
            sigma_rho: slot(&chis, Slot::SigmaRho),
            xi1: slot(&chis, Slot::Xi1),
            xi2: slot(&chis, Slot::Xi2),
            varsigma: slot(&chis, Slot::Varsigma),
            xc3: slot(&chis, Slot::Xc3),
            sigma_xc: slot(&chis, Slot::SigmaXc),
        };
        (est, clipped)
    }

    fn model_thrust(&self, x: &DVector<T>, held: &Held<T>) -> T {
        let omega_s = self.model_input(x, held);
        self.params.mixer.row(0).transpose().dot(&omega_s) * self.params.thrust_coeff
    }

    /// Attitude reference and its rate from the current estimates.
    fn estimated_reference(&self, x: &DVector<T>, nz: &StepNoise<T>, held: &Held<T>) -> Result<(Vector3<T>, Vector3<T>), SimError> {
        let (est, _) = self.estimate_view(x);
        let inp = TranslationalInputs {
            rho1: est.rho1,
            rho2: est.rho2,
            sigma_rho: est.sigma_rho,
            sigma_rho_dot: Vector3::zeros(),
            ref_accel: est.xc3,
            ref_jerk: est.sigma_xc,
            theta1: v3(x, 0) + nz.theta1,
            thrust: Some(self.model_thrust(x, held)),
            envelope: Some(self.gains.envelope),
        };
        let cmd = translational_stage(&inp, &self.params, &self.gains)?;
        Ok((cmd.theta_r, cmd.theta_r_dot_est))
    }

    fn output_feedback_control(&self, t: T, x: &DVector<T>, nz: &StepNoise<T>) -> Result<Held<T>, SimError> {
        let (est, clipped) = self.estimate_view(x);
        let theta1 = v3(x, 0) + nz.theta1;
        let thrust = self.model_thrust(x, &self.held);
        let out = output_feedback_step(&est, &theta1, Some(thrust), &self.params, &self.gains, &self.allocator)?;
        Ok(Held {
            omega_des: out.omega_des,
            theta_r: out.attitude_cmd.theta_r,
            theta_r_dot: out.attitude_cmd.theta_r_dot_est,
            t_k: t,
            u_fd: out.u_fd,
            torque_d: out.torque_d,
            flags: out.flags,
            sat_clipped: clipped,
            varsigma_true: None,
        })
    }

    fn translational_inputs(&self, t: T, x: &DVector<T>) -> Result<TranslationalInputs<T>, SimError> {
        let l = &self.layout;
        let reference = ReferenceState { xc1: v3(x, l.xc1), xc2: v3(x, l.xc2) };
        Ok(TranslationalInputs {
            rho1: v3(x, 6) - reference.xc1 - self.offset_vec(),
            rho2: v3(x, 9) - reference.xc2,
            sigma_rho: self.dist.sigma_rho(t),
            sigma_rho_dot: self.dist.sigma_rho_dot(t),
            ref_accel: self.driver.acceleration(t, &reference)?,
            ref_jerk: self.driver.jerk(t, &reference)?,
            theta1: v3(x, 0),
            thrust: None,
            envelope: None,
        })
    }

    /// State feedback with exact disturbances. The reference acceleration
    /// `theta_r''` inside the lumped term is a centered difference of the
    /// analytic `theta_r'` along the flow; `theta_r'` does not depend on the
    /// torque, so the difference needs only torque-free state derivatives.
    fn state_feedback_control(&self, t: T, x: &DVector<T>) -> Result<Held<T>, SimError> {
        let l = &self.layout;
        let inp = self.translational_inputs(t, x)?;
        let cmd = translational_stage(&inp, &self.params, &self.gains)?;

        let st = self.vehicle_state(x);
        let reference = ReferenceState { xc1: v3(x, l.xc1), xc2: v3(x, l.xc2) };
        let (_, p2dot) = translational_derivative(&st, cmd.u_fd, &inp.sigma_rho, &self.params);
        let (_, xc2dot) = reference_derivative(&reference, t, &self.driver)?;
        let mut flow = DVector::zeros(l.len);
        flow.fixed_rows_mut::<3>(0).copy_from(&st.theta2);
        flow.fixed_rows_mut::<3>(6).copy_from(&st.p2);
        flow.fixed_rows_mut::<3>(9).copy_from(&p2dot);
        flow.fixed_rows_mut::<3>(l.xc1).copy_from(&reference.xc2);
        flow.fixed_rows_mut::<3>(l.xc2).copy_from(&xc2dot);
        let h: T = lit(1e-5);
        let rate_at = |s: T| -> Result<Vector3<T>, SimError> {
            let xs = x + &flow * s;
            let inp = self.translational_inputs(t + s, &xs)?;
            Ok(translational_stage(&inp, &self.params, &self.gains)?.theta_r_dot_est)
        };
        // One-sided near t = 0, where the reference is undefined for t < 0.
        let accel_r = if t >= h {
            (rate_at(h)? - rate_at(-h)?) / (h + h)
        } else {
            let three: T = lit(3.0);
            let four: T = lit(4.0);
            (rate_at(h)? * four - cmd.theta_r_dot_est * three - rate_at(h + h)?) / (h + h)
        };
        let varsigma = self.dist.sigma_xi(t) - accel_r;

        let xi1 = st.theta1 - cmd.theta_r;
        let xi2 = st.theta2 - cmd.theta_r_dot_est;
        let out = rotational_stage(&xi1, &xi2, &varsigma, &st.theta1, cmd, &self.params, &self.gains, &self.allocator)?;
        Ok(Held {
            omega_des: out.omega_des,
            theta_r: out.attitude_cmd.theta_r,
            theta_r_dot: out.attitude_cmd.theta_r_dot_est,
            t_k: t,
            u_fd: out.u_fd,
            torque_d: out.torque_d,
            flags: out.flags,
            sat_clipped: 0,
            varsigma_true: Some(varsigma),
        })
    }

    fn control(&self, t: T, x: &DVector<T>, nz: &StepNoise<T>) -> Result<Held<T>, SimError> {
        match self.scenario.mode {
            FeedbackMode::OutputFeedback => self.output_feedback_control(t, x, nz),
            FeedbackMode::StateFeedback => self.state_feedback_control(t, x),
        }
    }

    fn derivative(&self, t: T, x: &DVector<T>, nz: &StepNoise<T>) -> Result<DVector<T>, SimError> {
        let l = self.layout;
        let continuous;
        let held = if self.ctrl_div.is_none() {
            continuous = self.control(t, x, nz)?;
            &continuous
        } else {
            &self.held
        };
        let st = self.vehicle_state(x);
        let reference = ReferenceState { xc1: v3(x, l.xc1), xc2: v3(x, l.xc2) };
        let mut d = DVector::zeros(l.len);

        let sf = self.scenario.mode == FeedbackMode::StateFeedback;
        let (u, tau) = if sf { mixer_forward(&held.omega_des, &self.params) } else { mixer_forward(&st.omega, &self.params) };
        let (th1d, th2d) = rotational_derivative(&st, &tau, &self.dist.sigma_xi(t), &self.params)?;
        let (p1d, p2d) = translational_derivative(&st, u, &self.dist.sigma_rho(t), &self.params);
        let (xc1d, xc2d) = reference_derivative(&reference, t, &self.driver)?;
        d.fixed_rows_mut::<3>(0).copy_from(&th1d);
        d.fixed_rows_mut::<3>(3).copy_from(&th2d);
        d.fixed_rows_mut::<3>(6).copy_from(&p1d);
        d.fixed_rows_mut::<3>(9).copy_from(&p2d);
        d.fixed_rows_mut::<3>(l.xc1).copy_from(&xc1d);
        d.fixed_rows_mut::<3>(l.xc2).copy_from(&xc2d);
        if sf {
            return Ok(d);
        }

        let tau_m = self.params.motor_time_constant;
        d.rows_mut(l.omega, l.n).copy_from(&actuator_derivative(&st.omega, &held.omega_des, tau_m));

        let chi: Chi<T> = x.fixed_rows::<N_EST>(l.chi).into_owned();
        let p1m = st.p1 + nz.p1;
        let theta1m = st.theta1 + nz.theta1;
        let xc1m = reference.xc1 + nz.xc1;
        let y_rho1 = match self.scenario.observer.rho1_source {
            Rho1Source::ReferenceEstimate => p1m - slot(&chi, Slot::Xc1),
            Rho1Source::ReferenceMeasurement => p1m - xc1m,
            Rho1Source::Oracle => st.p1 - reference.xc1,
        };
        let (theta_r, theta_r_dot) = match self.scenario.observer.reference_hold {
            ReferenceHold::ZeroOrder => (held.theta_r, held.theta_r_dot),
            ReferenceHold::FirstOrder => (held.theta_r + held.theta_r_dot * (t - held.t_k), held.theta_r_dot),
            ReferenceHold::Continuous => self.estimated_reference(x, nz, held)?,
        };
        let inputs = ObserverInputs {
            y_rho1,
            y_xi1: theta1m - theta_r,
            y_xc1: xc1m,
            theta1: theta1m,
            theta_r_dot_est: theta_r_dot,
            omega_s: self.model_input(x, held),
        };
        let chid = observer_derivative(&chi, &inputs, &self.params, &self.obs)?;
        d.fixed_rows_mut::<N_EST>(l.chi).copy_from(&chid);
        let omega_hat = x.rows(l.omega_hat, l.n).into_owned();
        d.rows_mut(l.omega_hat, l.n).copy_from(&actuator_derivative(&omega_hat, &held.omega_des, tau_m));
        Ok(d)
    }

    /// Latches the approach offset off once the horizontal error estimate is
    /// inside the landing radius.
    fn check_offset_latch(&mut self, chi_sat: Option<&Chi<T>>) {
        if !self.offset_active || self.time() < self.scenario.gains.offset_latch_delay {
            return;
        }
        let rho1 = match chi_sat {
            Some(c) => slot(c, Slot::Rho1),
            None => v3(&self.x, 6) - v3(&self.x, self.layout.xc1),
        };
        let horiz = (rho1[0] * rho1[0] + rho1[1] * rho1[1]).sqrt();
        if horiz <= self.gains.landing_radius {
            self.offset_active = false;
            self.offset_removed_at = Some(self.time());
        }
    }

    fn update_controller(&mut self) -> Result<(), SimError> {
        let t = self.t();
        let nz = self.step_noise(self.k);
        match self.scenario.mode {
            FeedbackMode::OutputFeedback => {
                let (chis, _) = self.saturated(&self.estimates());
                self.check_offset_latch(Some(&chis));
            }
            FeedbackMode::StateFeedback => self.check_offset_latch(None),
        }
        self.held = self.control(t, &self.x, &nz)?;
        if self.scenario.mode == FeedbackMode::StateFeedback {
            let (o, n) = (self.layout.omega, self.layout.n);
            self.x.rows_mut(o, n).copy_from(&self.held.omega_des);
        }
        self.counts.controller_updates += 1;
        self.counts.saturated_updates += u64::from(self.held.sat_clipped > 0);
        self.counts.negative_clamped_updates += u64::from(self.held.flags.negative_clamped);
        self.counts.omega_max_clamped_updates += u64::from(self.held.flags.omega_max_clamped);
        self.counts.envelope_clamped_updates += u64::from(self.held.flags.envelope_clamped);
        Ok(())
    }

    /// True values of the 30 estimated quantities at the current step.
    pub fn true_chi(&self) -> Chi<f64> {
        let t = self.t();
        let st = self.plant();
        let r = self.reference();
        let h = &self.held;
        let held_ref = (h.theta_r + h.theta_r_dot * (t - h.t_k), h.theta_r_dot);
        let (theta_r, theta_r_dot) = match self.scenario.observer.reference_hold {
            _ if self.scenario.mode == FeedbackMode::StateFeedback => held_ref,
            ReferenceHold::ZeroOrder => (h.theta_r, h.theta_r_dot),
            ReferenceHold::FirstOrder => held_ref,
            ReferenceHold::Continuous => {
                self.estimated_reference(&self.x, &self.step_noise(self.k), h).unwrap_or(held_ref)
            }
        };
        let vs = h.varsigma_true.unwrap_or_else(|| self.dist.sigma_xi(t));
        let accel = self.driver.acceleration(t, &r).unwrap_or_else(|_| Vector3::zeros());
        let jerk = self.driver.jerk(t, &r).unwrap_or_else(|_| Vector3::zeros());
        let mut chi = Chi::<T>::zeros();
        set_slot(&mut chi, Slot::Rho1, &(st.p1 - r.xc1));
        set_slot(&mut chi, Slot::Rho2, &(st.p2 - r.xc2));
        set_slot(&mut chi, Slot::SigmaRho, &self.dist.sigma_rho(t));
        set_slot(&mut chi, Slot::Xi1, &(st.theta1 - theta_r));
        set_slot(&mut chi, Slot::Xi2, &(st.theta2 - theta_r_dot));
        set_slot(&mut chi, Slot::Varsigma, &vs);
        set_slot(&mut chi, Slot::Xc1, &r.xc1);
        set_slot(&mut chi, Slot::Xc2, &r.xc2);
        set_slot(&mut chi, Slot::Xc3, &accel);
        set_slot(&mut chi, Slot::SigmaXc, &jerk);
        chi.map(to_f64)
    }

    pub fn record(&self) -> LogRecord {
        let a3 = |v: Vector3<T>| [to_f64(v[0]), to_f64(v[1]), to_f64(v[2])];
        let vecf = |v: &DVector<T>| v.iter().map(|x| to_f64(*x)).collect::<Vec<f64>>();
        let st = self.plant();
        let r = self.reference();
        let mut chi_true = [0.0; N_EST];
        chi_true.copy_from_slice(self.true_chi().as_slice());
        let mut chi_hat = [0.0; N_EST];
        for (i, v) in self.estimates().iter().enumerate() {
            chi_hat[i] = to_f64(*v);
        }
        let h = &self.held;
        LogRecord {
            t: self.time(),
            theta1: a3(st.theta1),
            theta2: a3(st.theta2),
            p1: a3(st.p1),
            p2: a3(st.p2),
            omega: vecf(&st.omega),
            xc1: a3(r.xc1),
            xc2: a3(r.xc2),
            chi_true,
            chi_hat,
            omega_hat: vecf(&self.omega_hat()),
            theta_r: a3(h.theta_r),
            theta_r_dot: a3(h.theta_r_dot),
            u_fd: to_f64(h.u_fd),
            torque_d: a3(h.torque_d),
            omega_des: vecf(&h.omega_des),
            sat_clipped: h.sat_clipped,
            negative_clamped: h.flags.negative_clamped,
            omega_max_clamped: h.flags.omega_max_clamped,
            envelope_clamped: h.flags.envelope_clamped,
            offset_active: self.offset_active,
            landed: self.landed_at.is_some(),
        }
    }

    fn check_operating_box(&mut self) -> Result<(), SimError> {
        if self.box_violation.is_some() {
            return Ok(());
        }
        let st = self.plant();
        let b = &self.scenario.operating_box;
        let tilt = to_f64(st.theta1[0].cos() * st.theta1[1].cos()).clamp(-1.0, 1.0).acos();
        let body = euler_rate_matrix_inv(&st.theta1, self.params.euler_guard)? * st.theta2;
        let rate = to_f64(body.amax());
        let speed = to_f64(st.p2.norm());
        if tilt > b.max_tilt || rate > b.max_body_rate || speed > b.max_speed {
            self.box_violation = Some(self.time());
        }
        Ok(())
    }

    pub fn is_finished(&self) -> bool {
        (self.scenario.stop_on_landing && self.landed_at.is_some())
            || self.time() >= self.scenario.timing.duration - 0.5 * self.dt
    }

    /// Advances one plant step.
    pub fn step(&mut self) -> Result<StepEvent, SimError> {
        let nz = self.step_noise(self.k);
        if let Some(div) = self.ctrl_div {
            if self.k % div == 0 {
                self.update_controller()?;
            }
        }
        if self.logging && self.k % self.log_div == 0 {
            self.records.push(self.record());
        }
        let t = self.t();
        let dt: T = lit(self.dt);
        let next = rk4_step(|tt, xx| self.derivative(tt, xx, &nz), &self.x, t, dt)?;
        let norm = to_f64(next.amax());
        self.x = next;
        self.k += 1;
        if norm > DIVERGENCE_LIMIT {
            return Err(SimError::Diverged { t: self.time(), norm });
        }
        if self.ctrl_div.is_none() {
            self.update_controller()?;
        }
        self.check_operating_box()?;

        if self.landed_at.is_none() && !self.offset_active {
            let st = self.plant();
            let r = self.reference();
            let close = to_f64((st.p1 - r.xc1).norm()) <= to_f64(self.gains.landing_radius);
            let slow = to_f64((st.p2 - r.xc2).norm()) < to_f64(self.gains.landing_speed);
            if close && slow {
                self.landed_at = Some(self.time());
                if self.scenario.stop_on_landing {
                    if self.logging {
                        self.records.push(self.record());
                    }
                    return Ok(StepEvent::Landed);
                }
            }
        }
        if self.is_finished() {
            if self.logging {
                self.records.push(self.record());
            }
            return Ok(StepEvent::Finished);
        }
        Ok(StepEvent::Running)
    }

    /// Steps until landing (when configured to stop) or the end of the run.
    pub fn run(&mut self) -> Result<(), SimError> {
        self.run_with(|_| {})
    }

    /// Like [`Self::run`], calling `f` after every step.
    pub fn run_with(&mut self, mut f: impl FnMut(&Self)) -> Result<(), SimError> {
        while !self.is_finished() {
            self.step()?;
            f(self);
        }
        Ok(())
    }

    pub fn summary(&self, error: Option<&SimError>) -> Summary {
        let q = log::final_quarter(&self.records);
        let (rms, max) = log::tracking_stats(q);
        Summary {
            log_version: LOG_FORMAT_VERSION,
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            landed: self.landed_at.is_some(),
            landing_time: self.landed_at,
            offset_removed_time: self.offset_removed_at,
            final_time: self.time(),
            steps: self.k,
            tracking_rms_final_quarter: rms,
            tracking_max_final_quarter: max,
            estimation_rms_final_quarter: log::BlockErrors {
                sigma_rho: log::slot_rms(q, &[Slot::SigmaRho]),
                varsigma: log::slot_rms(q, &[Slot::Varsigma]),
                xc: log::slot_rms(q, &[Slot::Xc1, Slot::Xc2, Slot::Xc3, Slot::SigmaXc]),
            },
            flags: self.counts.clone(),
            operating_box_violation: self.box_violation,
            error: error.map(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<LogRecord>,
    pub summary: Summary,
    pub n_rotors: usize,
    pub saturation_bounds: Option<SaturationBounds>,
}

#[derive(Debug)]
pub struct RunFailure {
    pub error: SimError,
    /// Log up to the failure, when the engine got far enough to produce one.
    pub partial: Option<RunResult>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {}

/// Runs a scenario to completion in `f64`.
pub fn run_scenario(scenario: &Scenario) -> Result<RunResult, RunFailure> {
    let mut sim = Simulation::<f64>::new(scenario).map_err(|error| RunFailure { error, partial: None })?;
    let outcome = sim.run();
    if let Err(e) = &outcome {
        if sim.logging {
            let rec = sim.record();
            if rec.p1.iter().chain(rec.chi_hat.iter()).all(|v| v.is_finite()) {
                sim.records.push(rec);
            }
        }
        let _ = e;
    }
    let summary = sim.summary(outcome.as_ref().err());
    let result = RunResult {
        n_rotors: sim.layout.n,
        saturation_bounds: sim.bounds.clone(),
        records: sim.take_records(),
        summary,
    };
    match outcome {
        Ok(()) => Ok(result),
        Err(error) => Err(RunFailure { error, partial: Some(result) }),
    }
}

/// Lower limits on automatically chosen saturation bounds, per slot.
fn bound_floor(s: Slot) -> f64 {
    match s {
        Slot::Xi1 => 0.2,
        Slot::Varsigma => 2.0,
        _ => 1.0,
    }
}

/// Fills missing saturation bounds with twice the largest magnitude each
/// quantity reaches in a noise-free state-feedback rehearsal of the same
/// scenario (disturbances included), floored per slot.
pub fn resolve_saturation_bounds(scenario: &Scenario) -> Result<SaturationBounds, SimError> {
    let given = &scenario.observer.saturation.bounds;
    if given.is_complete() {
        return Ok(given.clone());
    }
    let peaks = rehearsal_peaks(scenario)?;
    let mut out = given.clone();
    for s in Slot::ALL {
        if out.get(s).is_none() {
            let o = s.offset();
            let b = [0, 1, 2].map(|i| (2.0 * peaks[o + i]).max(bound_floor(s)));
            out.set(s, b);
        }
    }
    Ok(out)
}

/// Componentwise peak of `|chi|` along a state-feedback rehearsal.
pub fn rehearsal_peaks(scenario: &Scenario) -> Result<[f64; N_EST], SimError> {
    let mut r = scenario.clone();
    r.mode = FeedbackMode::StateFeedback;
    r.noise = NoiseConfig::off();
    r.timing.dt_plant = scenario.timing.dt_plant.max(1e-3);
    r.timing.controller_rate = None;
    r.timing.log_rate = 1.0 / r.timing.dt_plant;
    r.stop_on_landing = false;
    r.observer.saturation.enabled = false;
    let mut sim = Simulation::<f64>::with_bounds(&r, None)?;
    sim.set_logging(false);
    let mut peaks = [0.0f64; N_EST];
    let mut track = |sim: &Simulation<f64>| {
        for (p, v) in peaks.iter_mut().zip(sim.true_chi().iter()) {
            *p = p.max(v.abs());
        }
    };
    track(&sim);
    sim.run_with(&mut track)?;
    Ok(peaks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disturbance::DisturbanceSpec;
    use crate::scenario::ReferenceConfig;

    fn hover_scenario() -> Scenario {
        let mut s = Scenario::landing();
        s.disturbances = DisturbanceSpec::none();
        s.noise = NoiseConfig::off();
        s.initial.p1 = [0.0, 0.0, -1.0];
        s.initial.xc1 = [0.0, 0.0, -1.0];
        s.initial.xc2 = [0.0; 3];
        s.reference = ReferenceConfig::ConstantVelocity;
        s.gains.approach_offset = 0.0;
        s.timing.duration = 2.0;
        s.stop_on_landing = false;
        s
    }

    #[test]
    fn layout_sizes() {
        let l = Layout::new(6);
        assert_eq!(l.len, 60);
        assert_eq!(l.chi, 24);
    }

    #[test]
    fn state_feedback_hover_equilibrium_stays_put() {
        let mut s = hover_scenario();
        s.mode = FeedbackMode::StateFeedback;
        s.timing.dt_plant = 1e-3;
        let mut sim = Simulation::<f64>::new(&s).unwrap();
        sim.run().unwrap();
        let st = sim.plant();
        assert!((st.p1 - Vector3::new(0.0, 0.0, -1.0)).amax() < 1e-9);
    }

    #[test]
    fn perfect_start_output_feedback_hover() {
        let mut s = hover_scenario();
        s.observer.initial_rotor_estimate = RotorEstimateInit::MatchPlant;
        s.observer.saturation.bounds = SaturationBounds {
            rho1: Some([1.0; 3]), rho2: Some([1.0; 3]), sigma_rho: Some([1.0; 3]), xi1: Some([0.2; 3]),
            xi2: Some([1.0; 3]), varsigma: Some([2.0; 3]), xc1: Some([2.0; 3]), xc2: Some([1.0; 3]),
            xc3: Some([1.0; 3]), sigma_xc: Some([1.0; 3]),
        };
        let mut sim = Simulation::<f64>::new(&s).unwrap();
        // Start the estimates at the truth.
        let truth = sim.true_chi();
        let l = sim.layout;
        for i in 0..N_EST {
            sim.x[l.chi + i] = truth[i];
        }
        let mut worst: f64 = 0.0;
        sim.run_with(|s| {
            let st = s.plant();
            worst = worst.max((st.p1 - Vector3::new(0.0, 0.0, -1.0)).amax());
        })
        .unwrap();
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn f32_engine_runs() {
        let mut s = hover_scenario();
        s.timing.duration = 0.05;
        let mut sim = Simulation::<f32>::new(&s).unwrap();
        sim.run().unwrap();
        assert!(sim.plant().p1.iter().all(|v| v.is_finite()));
    }
}
