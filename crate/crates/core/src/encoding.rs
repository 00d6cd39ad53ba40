//! Sinusoidal joint encoder.
//!
//! Each coordinate `c` of a joint is mapped to `sin(β·c / α^(k/d))` and
//! `cos(β·c / α^(k/d))` for `k = 0..d`. A joint embedding is laid out as
//! `[sin X | sin Y | sin Z | cos X | cos Y | cos Z]`, each block `d` long.

use serde::{Deserialize, Serialize};

use crate::data::MotionSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinusoidalParams {
    /// Frequency base, > 1.
    pub alpha: f64,
    /// Coordinate scale, > 0.
    pub beta: f64,
    /// Frequencies per coordinate.
    pub dims_per_coord: usize,
}

impl Default for SinusoidalParams {
    fn default() -> Self {
        Self {
            alpha: 10000.0,
            beta: 100.0,
            dims_per_coord: 8,
        }
    }
}

impl SinusoidalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be > 1, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.dims_per_coord == 0 {
            return Err(Error::config("dims_per_coord must be at least 1"));
        }
        Ok(())
    }

    /// Angular frequency `β / α^(k/d)` of embedding index `k`.
    pub fn frequency(&self, k: usize) -> f64 {
        self.beta / self.alpha.powf(k as f64 / self.dims_per_coord as f64)
    }

    /// Width of one joint embedding, `6·d`.
    pub fn embedding_len(&self) -> usize {
        6 * self.dims_per_coord
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl JointPosition {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointEmbedding {
    pub values: Vec<f64>,
}

impl JointEmbedding {
    pub fn sin_block(&self) -> &[f64] {
        &self.values[..self.values.len() / 2]
    }

    pub fn cos_block(&self) -> &[f64] {
        &self.values[self.values.len() / 2..]
    }
}

pub fn encode_coordinate(c: f64, params: &SinusoidalParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if !c.is_finite() {
        return Err(Error::NonFinite(format!("coordinate {c}")));
    }
    params.validate()?;
    let d = params.dims_per_coord;
    let mut sin = Vec::with_capacity(d);
    let mut cos = Vec::with_capacity(d);
    for k in 0..d {
        let (s, co) = (c * params.frequency(k)).sin_cos();
        sin.push(s);
        cos.push(co);
    }
    Ok((sin, cos))
}

pub fn encode_joint(p: JointPosition, params: &SinusoidalParams) -> Result<JointEmbedding> {
    let mut values = vec![0.0; params.embedding_len()];
    write_joint(p.coords(), params, &mut values)?;
    Ok(JointEmbedding { values })
}

fn write_joint(coords: [f64; 3], params: &SinusoidalParams, out: &mut [f64]) -> Result<()> {
    let d = params.dims_per_coord;
    let (sin_half, cos_half) = out.split_at_mut(3 * d);
    for (axis, &c) in coords.iter().enumerate() {
        let (s, co) = encode_coordinate(c, params)?;
        sin_half[axis * d..(axis + 1) * d].copy_from_slice(&s);
        cos_half[axis * d..(axis + 1) * d].copy_from_slice(&co);
    }
    Ok(())
}

/// Encode every node of every frame into a `[T, V, 6d]` tensor. Nodes whose
/// validity flag is clear become an all-zero row, which no genuine point can
/// produce since its cos block always has unit norm per frequency.
pub fn encode_sequence(motion: &MotionSequence, params: &SinusoidalParams) -> Result<Tensor> {
    params.validate()?;
    let (t, v) = (motion.frames(), motion.nodes());
    if t == 0 {
        return Err(Error::arg("cannot encode an empty motion sequence"));
    }
    let e = params.embedding_len();
    let mut data = vec![0.0; t * v * e];
    for f in 0..t {
        for n in 0..v {
            if !motion.is_valid(f, n) {
                continue;
            }
            let off = (f * v + n) * e;
            write_joint(motion.position(f, n), params, &mut data[off..off + e])?;
        }
    }
    Tensor::new([t, v, e], data)
}

/// Raw `[T, V, 3]` coordinates, the input when sinusoidal encoding is off.
pub fn raw_sequence(motion: &MotionSequence) -> Result<Tensor> {
    if motion.frames() == 0 {
        return Err(Error::arg("cannot encode an empty motion sequence"));
    }
    Ok(motion.positions().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_coordinate() {
        let (s, c) = encode_coordinate(0.0, &SinusoidalParams::default()).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn quarter_period() {
        let p = SinusoidalParams {
            alpha: 10000.0,
            beta: 1.0,
            dims_per_coord: 1,
        };
        let (s, c) = encode_coordinate(FRAC_PI_2, &p).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!(c[0].abs() < 1e-12);
    }

    #[test]
    fn scalar_reference() {
        let p = SinusoidalParams {
            alpha: 10000.0,
            beta: 100.0,
            dims_per_coord: 4,
        };
        let (s, c) = encode_coordinate(0.37, &p).unwrap();
        for k in 0..4 {
            // independent evaluation via exp/ln of the frequency factor
            let arg = 100.0 * 0.37 * (-(k as f64 / 4.0) * 10000f64.ln()).exp();
            assert!((s[k] - arg.sin()).abs() < 1e-12);
            assert!((c[k] - arg.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let p = SinusoidalParams::default();
        assert!(encode_coordinate(f64::NAN, &p).is_err());
        assert!(encode_joint(JointPosition::new(0.0, f64::INFINITY, 0.0), &p).is_err());
    }

    #[test]
    fn joint_layout_and_length() {
        for d in [1, 4, 16] {
            let p = SinusoidalParams {
                dims_per_coord: d,
                ..Default::default()
            };
            let e = encode_joint(JointPosition::new(0.0, 0.0, 0.0), &p).unwrap();
            assert_eq!(e.values.len(), 6 * d);
            assert!(e.sin_block().iter().all(|&v| v == 0.0));
            assert!(e.cos_block().iter().all(|&v| v == 1.0));
        }
        let p = SinusoidalParams::default();
        let j = JointPosition::new(0.12, -0.4, 1.3);
        let e = encode_joint(j, &p).unwrap();
        let d = p.dims_per_coord;
        for (axis, c) in j.coords().into_iter().enumerate() {
            let (s, co) = encode_coordinate(c, &p).unwrap();
            assert_eq!(&e.values[axis * d..(axis + 1) * d], s.as_slice());
            assert_eq!(&e.values[3 * d + axis * d..3 * d + (axis + 1) * d], co.as_slice());
        }
    }

    #[test]
    fn frequencies_strictly_decrease() {
        let p = SinusoidalParams::default();
        for k in 0..p.dims_per_coord - 1 {
            assert!(p.frequency(k + 1) < p.frequency(k));
        }
    }

    #[test]
    fn invalid_params() {
        let bad = [
            SinusoidalParams { alpha: 1.0, ..Default::default() },
            SinusoidalParams { beta: 0.0, ..Default::default() },
            SinusoidalParams { dims_per_coord: 0, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err());
        }
    }
}
