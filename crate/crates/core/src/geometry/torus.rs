//! Torus with a removed sector of the azimuthal angle.
//!
//! Chart coordinates are `(θ, φ)`: `θ` runs around the tube, `φ` around the
//! central axis. The embedding is
//! `((R + r cos θ) cos φ, (R + r cos θ) sin φ, r sin θ)`.

use std::f64::consts::TAU;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BittenTorus {
    major: f64,
    minor: f64,
    bite_start: f64,
    bite_width: f64,
}

impl BittenTorus {
    /// `major` is the distance from the tube centre to the torus centre, `minor`
    /// the tube radius, and `bite` the excluded open interval of `φ` (radians).
    pub fn new(major: f64, minor: f64, bite: (f64, f64)) -> Result<Self> {
        if !(major.is_finite() && minor.is_finite() && minor > 0.0 && major > minor) {
            return Err(Error::input(format!(
                "torus needs R > r > 0, got R = {major}, r = {minor}"
            )));
        }
        let width = bite.1 - bite.0;
        if !(bite.0.is_finite() && width.is_finite()) || !(0.0..TAU).contains(&width) {
            return Err(Error::input(format!(
                "bite interval length must lie in [0, 2π), got {width}"
            )));
        }
        Ok(Self {
            major,
            minor,
            bite_start: bite.0.rem_euclid(TAU),
            bite_width: width,
        })
    }

    pub fn major(&self) -> f64 {
        self.major
    }

    pub fn minor(&self) -> f64 {
        self.minor
    }

    /// The excluded `φ` interval, with its start reduced to `[0, 2π)`.
    pub fn bite(&self) -> (f64, f64) {
        (self.bite_start, self.bite_start + self.bite_width)
    }

    pub fn bite_width(&self) -> f64 {
        self.bite_width
    }

    /// Without a bite, `φ` wraps around like `θ`.
    pub fn phi_is_periodic(&self) -> bool {
        self.bite_width == 0.0
    }

    /// Lower end of the stored `φ` range, i.e. the cut face just after the bite.
    pub fn phi_start(&self) -> f64 {
        if self.phi_is_periodic() {
            0.0
        } else {
            self.bite_start + self.bite_width
        }
    }

    /// Length of the admissible `φ` range.
    pub fn phi_span(&self) -> f64 {
        TAU - self.bite_width
    }

    /// Reduces `φ` into `[phi_start, phi_start + 2π)`.
    pub fn reduce_phi(&self, phi: f64) -> f64 {
        let start = self.phi_start();
        start + (phi - start).rem_euclid(TAU)
    }

    pub fn embed(&self, theta: f64, phi: f64) -> [f64; 3] {
        let ring = self.major + self.minor * theta.cos();
        [ring * phi.cos(), ring * phi.sin(), self.minor * theta.sin()]
    }

    /// Metric tensor `diag(r², (R + r cos θ)²)` and its partial derivatives
    /// with respect to `θ` and `φ`.
    pub fn metric_with_derivatives(&self, theta: f64) -> (Matrix2<f64>, [Matrix2<f64>; 2]) {
        let (s, c) = theta.sin_cos();
        let ring = self.major + self.minor * c;
        let g = Matrix2::new(self.minor * self.minor, 0.0, 0.0, ring * ring);
        let dg_dtheta = Matrix2::new(0.0, 0.0, 0.0, -2.0 * ring * self.minor * s);
        (g, [dg_dtheta, Matrix2::zeros()])
    }

    /// Hand-derived drift and diffusion of Brownian motion in `(θ, φ)`:
    /// `dθ = -½ r⁻¹ sin θ (R + r cos θ)⁻¹ dt + r⁻¹ dB₁`, `dφ = |R + r cos θ|⁻¹ dB₂`.
    pub fn closed_form_sde(&self, theta: f64) -> (Vector2<f64>, Matrix2<f64>) {
        let (s, c) = theta.sin_cos();
        let ring = self.major + self.minor * c;
        let drift = Vector2::new(-0.5 * s / (self.minor * ring), 0.0);
        let diffusion = Matrix2::new(1.0 / self.minor, 0.0, 0.0, 1.0 / ring.abs());
        (drift, diffusion)
    }
}
