//! Direct-summation Newtonian gravity and the kick-drift-kick leapfrog integrator.
//!
//! All quantities are dimensionless simulation units in 64-bit floating point.
//! Accelerations use Plummer softening:
//!
//! ```text
//! a_i = G * sum_{j != i} m_j (r_j - r_i) / (|r_j - r_i|^2 + eps^2)^(3/2)
//! ```

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

/// Positions, velocities and masses of `N` bodies at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
}

impl ParticleSet {
    pub fn new(positions: Vec<Vec3>, velocities: Vec<Vec3>, masses: Vec<f64>) -> Result<Self> {
        let set = Self {
            positions,
            velocities,
            masses,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if n == 0 {
            return Err(Error::arg("particle set is empty"));
        }
        if self.positions.len() != n || self.velocities.len() != n {
            return Err(Error::arg(format!(
                "particle set length mismatch: {} positions, {} velocities, {} masses",
                self.positions.len(),
                self.velocities.len(),
                n
            )));
        }
        if let Some(i) = self.masses.iter().position(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::arg(format!(
                "mass of particle {i} must be positive and finite, got {}",
                self.masses[i]
            )));
        }
        if let Some(i) = self
            .positions
            .iter()
            .zip(&self.velocities)
            .position(|(r, v)| !(r.is_finite() && v.is_finite()))
        {
            return Err(Error::arg(format!("particle {i} has a non-finite state")));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Integrator and force-law parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    pub dt: f64,
    /// Gravitational constant.
    pub g: f64,
    /// Plummer softening length.
    pub eps: f64,
    pub steps: usize,
    /// Evaluate the force sum over particles on the rayon pool.
    pub parallel: bool,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            g: 4.5e-6,
            eps: 0.05,
            steps: 1000,
            parallel: false,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::arg(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.g.is_finite() && self.g > 0.0) {
            return Err(Error::arg(format!("G must be positive, got {}", self.g)));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::arg(format!(
                "eps must be non-negative, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// One stored snapshot of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub accelerations: Vec<Vec3>,
}

/// Time-ordered snapshots of one simulation.
///
/// `frames[t]` is the state after step `t + 1`; `initial` holds the starting
/// condition together with the accelerations evaluated there.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub masses: Vec<f64>,
    pub initial: Frame,
    pub frames: Vec<Frame>,
}

impl Trace {
    pub fn particle_count(&self) -> usize {
        self.masses.len()
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// The state stored at frame `t`.
    pub fn state(&self, t: usize) -> ParticleSet {
        let f = &self.frames[t];
        ParticleSet {
            positions: f.positions.clone(),
            velocities: f.velocities.clone(),
            masses: self.masses.clone(),
        }
    }

    /// The initial frame followed by every stored frame.
    pub fn frames_with_initial(&self) -> impl Iterator<Item = &Frame> {
        std::iter::once(&self.initial).chain(self.frames.iter())
    }
}

/// Anything that can supply per-particle accelerations to the integrator.
///
/// The integrator calls this exactly once per step with the freshly drifted
/// positions, plus once up front for the initial condition.
pub trait AccelerationField {
    fn accelerations(&mut self, positions: &[Vec3], masses: &[f64]) -> Result<Vec<Vec3>>;
}

/// Exact softened Newtonian gravity.
#[derive(Debug, Clone, Copy)]
pub struct Newtonian {
    pub g: f64,
    pub eps: f64,
    pub parallel: bool,
}

impl Newtonian {
    pub fn new(g: f64, eps: f64) -> Self {
        Self {
            g,
            eps,
            parallel: false,
        }
    }

    pub fn from_params(params: &PhysicsParams) -> Self {
        Self {
            g: params.g,
            eps: params.eps,
            parallel: params.parallel,
        }
    }
}

impl AccelerationField for Newtonian {
    fn accelerations(&mut self, positions: &[Vec3], masses: &[f64]) -> Result<Vec<Vec3>> {
        if self.parallel {
            pairwise_accelerations_par(positions, masses, self.g, self.eps)
        } else {
            pairwise_accelerations(positions, masses, self.g, self.eps)
        }
    }
}

fn check_force_inputs(positions: &[Vec3], masses: &[f64], eps: f64) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::arg("no particles"));
    }
    if positions.len() != masses.len() {
        return Err(Error::arg(format!(
            "{} positions but {} masses",
            positions.len(),
            masses.len()
        )));
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::arg(format!("eps must be non-negative, got {eps}")));
    }
    Ok(())
}

/// Structure-of-arrays copy of the source particles.
struct Sources {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    m: Vec<f64>,
}

impl Sources {
    fn new(positions: &[Vec3], masses: &[f64]) -> Self {
        Self {
            x: positions.iter().map(|p| p.x).collect(),
            y: positions.iter().map(|p| p.y).collect(),
            z: positions.iter().map(|p| p.z).collect(),
            m: masses.to_vec(),
        }
    }

    /// Acceleration on particle `i`, summed over sources in ascending index order.
    fn acceleration_on(&self, i: usize, g: f64, eps2: f64) -> Result<Vec3> {
        let (xi, yi, zi) = (self.x[i], self.y[i], self.z[i]);
        let (mut ax, mut ay, mut az) = (0.0, 0.0, 0.0);
        for j in 0..self.m.len() {
            if j == i {
                continue;
            }
            let dx = self.x[j] - xi;
            let dy = self.y[j] - yi;
            let dz = self.z[j] - zi;
            let r2 = dx * dx + dy * dy + dz * dz + eps2;
            if r2 == 0.0 {
                return Err(Error::NumericalDomain(format!(
                    "particles {i} and {j} coincide and softening is zero"
                )));
            }
            let s = self.m[j] / (r2 * r2.sqrt());
            ax += s * dx;
            ay += s * dy;
            az += s * dz;
        }
        let a = Vec3::new(g * ax, g * ay, g * az);
        if !a.is_finite() {
            return Err(Error::NumericalDomain(format!(
                "non-finite acceleration on particle {i}"
            )));
        }
        Ok(a)
    }
}

/// Softened gravitational acceleration of every particle.
pub fn pairwise_accelerations(
    positions: &[Vec3],
    masses: &[f64],
    g: f64,
    eps: f64,
) -> Result<Vec<Vec3>> {
    check_force_inputs(positions, masses, eps)?;
    let src = Sources::new(positions, masses);
    let eps2 = eps * eps;
    (0..positions.len())
        .map(|i| src.acceleration_on(i, g, eps2))
        .collect()
}

/// Same as [`pairwise_accelerations`], split over particles on the rayon pool.
///
/// Each particle's sum runs in the same order as the serial kernel, so the
/// result is bitwise identical for any worker count.
#[cfg(feature = "parallel")]
pub fn pairwise_accelerations_par(
    positions: &[Vec3],
    masses: &[f64],
    g: f64,
    eps: f64,
) -> Result<Vec<Vec3>> {
    use rayon::prelude::*;
    check_force_inputs(positions, masses, eps)?;
    let src = Sources::new(positions, masses);
    let eps2 = eps * eps;
    (0..positions.len())
        .into_par_iter()
        .map(|i| src.acceleration_on(i, g, eps2))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn pairwise_accelerations_par(
    positions: &[Vec3],
    masses: &[f64],
    g: f64,
    eps: f64,
) -> Result<Vec<Vec3>> {
    pairwise_accelerations(positions, masses, g, eps)
}

/// Advances `state` by one kick-drift-kick step using the accelerations from `field`.
///
/// `accel` must be the acceleration at `state.positions`; the accelerations at the
/// new positions are returned so the caller can thread them into the next step.
pub fn leapfrog_step_with<F: AccelerationField + ?Sized>(
    mut state: ParticleSet,
    accel: &[Vec3],
    dt: f64,
    field: &mut F,
) -> Result<(ParticleSet, Vec<Vec3>)> {
    if accel.len() != state.len() {
        return Err(Error::arg(format!(
            "{} accelerations for {} particles",
            accel.len(),
            state.len()
        )));
    }
    let half = dt / 2.0;
    for ((r, v), a) in state
        .positions
        .iter_mut()
        .zip(state.velocities.iter_mut())
        .zip(accel)
    {
        *v += *a * half;
        *r += *v * dt;
    }
    let next = field.accelerations(&state.positions, &state.masses)?;
    if next.len() != state.len() {
        return Err(Error::config(format!(
            "acceleration field returned {} vectors for {} particles",
            next.len(),
            state.len()
        )));
    }
    for (v, a) in state.velocities.iter_mut().zip(&next) {
        *v += *a * half;
    }
    Ok((state, next))
}

/// One leapfrog step under exact gravity.
pub fn leapfrog_step(
    state: ParticleSet,
    accel: &[Vec3],
    params: &PhysicsParams,
) -> Result<(ParticleSet, Vec<Vec3>)> {
    params.validate()?;
    leapfrog_step_with(state, accel, params.dt, &mut Newtonian::from_params(params))
}

/// Integrates `steps` leapfrog steps driven by an arbitrary acceleration field.
pub fn simulate_with<F: AccelerationField + ?Sized>(
    initial: &ParticleSet,
    dt: f64,
    steps: usize,
    field: &mut F,
) -> Result<Trace> {
    initial.validate()?;
    if steps == 0 {
        return Err(Error::arg("step count must be at least 1"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::arg(format!("dt must be positive, got {dt}")));
    }
    let mut accel = field.accelerations(&initial.positions, &initial.masses)?;
    let init_frame = Frame {
        positions: initial.positions.clone(),
        velocities: initial.velocities.clone(),
        accelerations: accel.clone(),
    };
    let mut state = initial.clone();
    let mut frames = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (next, next_accel) = leapfrog_step_with(state, &accel, dt, field)?;
        frames.push(Frame {
            positions: next.positions.clone(),
            velocities: next.velocities.clone(),
            accelerations: next_accel.clone(),
        });
        state = next;
        accel = next_accel;
    }
    Ok(Trace {
        masses: initial.masses.clone(),
        initial: init_frame,
        frames,
    })
}

/// Runs `params.steps` leapfrog steps under exact gravity.
pub fn simulate(initial: &ParticleSet, params: &PhysicsParams) -> Result<Trace> {
    params.validate()?;
    simulate_with(
        initial,
        params.dt,
        params.steps,
        &mut Newtonian::from_params(params),
    )
}

/// Kinetic plus Plummer-softened potential energy.
pub fn total_energy(state: &ParticleSet, g: f64, eps: f64) -> Result<f64> {
    state.validate()?;
    let n = state.len();
    let eps2 = eps * eps;
    let kinetic: f64 = state
        .masses
        .iter()
        .zip(&state.velocities)
        .map(|(m, v)| 0.5 * m * v.norm_squared())
        .sum();
    let mut potential = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let r2 = (state.positions[i] - state.positions[j]).norm_squared() + eps2;
            if r2 == 0.0 {
                return Err(Error::NumericalDomain(format!(
                    "particles {i} and {j} coincide and softening is zero"
                )));
            }
            potential -= g * state.masses[i] * state.masses[j] / r2.sqrt();
        }
    }
    Ok(kinetic + potential)
}

pub fn total_momentum(state: &ParticleSet) -> Vec3 {
    state
        .masses
        .iter()
        .zip(&state.velocities)
        .fold(Vec3::ZERO, |acc, (m, v)| acc + *v * *m)
}
