//! Seeded initial-condition generators.
//!
//! Every generator draws from a [`SplitMix64`] stream seeded with [`Seed`], so
//! output is a pure function of the arguments.
//!
//! Disc recipe: cylindrical radii follow the exponential surface density
//! `Sigma(R) ~ exp(-R / h)`, i.e. `R` has density `R exp(-R / h)` (a Gamma(2, h)
//! law, drawn as `-h ln(u1 u2)`). Heights are Gaussian with standard deviation of
//! the vertical scale. Stars move on circular orbits with speed
//! `sqrt(G M_enc(R) / sqrt(R^2 + eps^2))`, where `M_enc` counts the central black
//! hole and every star at a strictly smaller radius. Spiral galaxies perturb
//! each azimuth by `A cos(arms (theta - ln(R / h)))` with `A = 0.3` rad.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::physics::{ParticleSet, Vec3};

/// Azimuthal amplitude of the spiral-arm perturbation, in radians.
pub const ARM_AMPLITUDE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> SplitMix64 {
        SplitMix64::seed_from_u64(self.0)
    }

    /// A decorrelated child seed; used to give each sub-generator its own stream.
    pub fn derive(self, index: u64) -> Seed {
        let mut rng = SplitMix64::seed_from_u64(self.0 ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Seed(rng.random())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalaxyParams {
    pub total_mass: f64,
    pub radial_scale: f64,
    pub vertical_scale: f64,
    pub bh_mass_fraction: f64,
    pub arms: u32,
    pub g: f64,
    /// Softening used in the circular-speed formula.
    pub eps: f64,
}

impl Default for GalaxyParams {
    fn default() -> Self {
        Self {
            total_mass: 1.0,
            radial_scale: 3.0,
            vertical_scale: 0.3,
            bh_mass_fraction: 0.01,
            arms: 2,
            g: 4.5e-6,
            eps: 0.05,
        }
    }
}

impl GalaxyParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::arg(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.total_mass, "total_mass")?;
        positive(self.radial_scale, "radial_scale")?;
        positive(self.vertical_scale, "vertical_scale")?;
        positive(self.g, "G")?;
        if !(self.bh_mass_fraction > 0.0 && self.bh_mass_fraction < 1.0) {
            return Err(Error::arg(format!(
                "bh_mass_fraction must lie in (0, 1), got {}",
                self.bh_mass_fraction
            )));
        }
        if self.arms == 0 {
            return Err(Error::arg("arms must be at least 1"));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::arg(format!("eps must be non-negative, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Uniform draw in (0, 1].
fn open_unit(rng: &mut SplitMix64) -> f64 {
    1.0 - rng.random::<f64>()
}

fn exponential_disc(n: usize, params: &GalaxyParams, seed: Seed, spiral: bool) -> Result<ParticleSet> {
    if n < 2 {
        return Err(Error::arg(format!("a disc needs at least 2 particles, got {n}")));
    }
    params.validate()?;
    let mut rng = seed.rng();
    let h = params.radial_scale;
    let heights = Normal::new(0.0, params.vertical_scale)
        .map_err(|e| Error::arg(format!("vertical_scale: {e}")))?;

    let stars = n - 1;
    let bh_mass = params.bh_mass_fraction * params.total_mass;
    let star_mass = (params.total_mass - bh_mass) / stars as f64;

    let mut radii = Vec::with_capacity(stars);
    let mut azimuths = Vec::with_capacity(stars);
    let mut zs = Vec::with_capacity(stars);
    for _ in 0..stars {
        let r = -h * (open_unit(&mut rng) * open_unit(&mut rng)).ln();
        let mut theta = rng.random::<f64>() * TAU;
        if spiral && r > 0.0 {
            theta += ARM_AMPLITUDE * (params.arms as f64 * (theta - (r / h).ln())).cos();
        }
        radii.push(r);
        azimuths.push(theta);
        zs.push(heights.sample(&mut rng));
    }

    // Enclosed mass: black hole plus every star at a strictly smaller radius.
    let mut order: Vec<usize> = (0..stars).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]).then(a.cmp(&b)));
    let mut interior = vec![0usize; stars];
    let mut k = 0;
    while k < stars {
        let mut end = k;
        while end < stars && radii[order[end]] == radii[order[k]] {
            end += 1;
        }
        for &idx in &order[k..end] {
            interior[idx] = k;
        }
        k = end;
    }

    let eps2 = params.eps * params.eps;
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    let mut masses = Vec::with_capacity(n);
    positions.push(Vec3::ZERO);
    velocities.push(Vec3::ZERO);
    masses.push(bh_mass);
    for i in 0..stars {
        let (r, theta) = (radii[i], azimuths[i]);
        let (s, c) = theta.sin_cos();
        let enclosed = bh_mass + star_mass * interior[i] as f64;
        let soft_r = (r * r + eps2).sqrt();
        if soft_r == 0.0 {
            return Err(Error::NumericalDomain(
                "star sampled at the centre with zero softening".into(),
            ));
        }
        let speed = (params.g * enclosed / soft_r).sqrt();
        positions.push(Vec3::new(r * c, r * s, zs[i]));
        velocities.push(Vec3::new(-s * speed, c * speed, 0.0));
        masses.push(star_mass);
    }
    ParticleSet::new(positions, velocities, masses)
}

/// Exponential disc with a central black hole (particle 0) and `arms` logarithmic spiral arms.
pub fn spiral_galaxy(n: usize, params: &GalaxyParams, seed: Seed) -> Result<ParticleSet> {
    exponential_disc(n, params, seed, true)
}

/// Axisymmetric exponential disc with a central black hole.
pub fn disc_3d(n: usize, params: &GalaxyParams, seed: Seed) -> Result<ParticleSet> {
    exponential_disc(n, params, seed, false)
}

/// Equal-mass particles at rest, uniform in `[-half_width, half_width]^3`.
pub fn random_cloud(n: usize, half_width: f64, total_mass: f64, seed: Seed) -> Result<ParticleSet> {
    if n == 0 {
        return Err(Error::arg("a cloud needs at least 1 particle"));
    }
    if !(half_width.is_finite() && half_width > 0.0) {
        return Err(Error::arg(format!("half_width must be positive, got {half_width}")));
    }
    if !(total_mass.is_finite() && total_mass > 0.0) {
        return Err(Error::arg(format!("total_mass must be positive, got {total_mass}")));
    }
    let mut rng = seed.rng();
    let mut coord = || (2.0 * rng.random::<f64>() - 1.0) * half_width;
    let positions = (0..n).map(|_| Vec3::new(coord(), coord(), coord())).collect();
    ParticleSet::new(positions, vec![Vec3::ZERO; n], vec![total_mass / n as f64; n])
}

/// `count` axisymmetric discs centred on the x axis, `separation` apart, with no bulk motion.
pub fn multi_disc(
    count: usize,
    n_per_disc: usize,
    params: &GalaxyParams,
    separation: f64,
    seed: Seed,
) -> Result<ParticleSet> {
    if count < 2 {
        return Err(Error::arg(format!("multi_disc needs at least 2 discs, got {count}")));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(Error::arg(format!("separation must be positive, got {separation}")));
    }
    let mut positions = Vec::with_capacity(count * n_per_disc);
    let mut velocities = Vec::with_capacity(count * n_per_disc);
    let mut masses = Vec::with_capacity(count * n_per_disc);
    let mid = (count - 1) as f64 / 2.0;
    for c in 0..count {
        let disc = disc_3d(n_per_disc, params, seed.derive(c as u64))?;
        let offset = Vec3::new((c as f64 - mid) * separation, 0.0, 0.0);
        positions.extend(disc.positions.iter().map(|p| *p + offset));
        velocities.extend(disc.velocities);
        masses.extend(disc.masses);
    }
    ParticleSet::new(positions, velocities, masses)
}
