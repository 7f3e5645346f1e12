//! Shoebox room impulse responses by the image-source method.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Fraction of total energy allowed in the discarded tail.
const TAIL_ENERGY: f64 = 1e-6;

/// Room and placement description. Serialized alongside every generated
/// response so reverberant audio can be regenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirParams {
    /// Room dimensions in metres.
    pub room: [f64; 3],
    pub source: [f64; 3],
    pub mic: [f64; 3],
    /// Wall absorption coefficient in (0, 1]; reflection coefficient is
    /// `sqrt(1 - absorption)`.
    pub absorption: f64,
    pub max_order: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub meta: RirParams,
}

impl RirParams {
    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            let l = self.room[axis];
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::Geometry(format!("room dimension {axis} is {l}")));
            }
            for (what, p) in [("source", self.source), ("mic", self.mic)] {
                if !(p[axis] > 0.0 && p[axis] < l) {
                    return Err(Error::Geometry(format!(
                        "{what} coordinate {axis} = {} is outside (0, {l})",
                        p[axis]
                    )));
                }
            }
        }
        if distance(self.source, self.mic) < 1e-9 {
            return Err(Error::Geometry("source and microphone coincide".into()));
        }
        if !(self.absorption > 0.0 && self.absorption <= 1.0) {
            return Err(Error::Geometry(format!(
                "absorption {} outside (0, 1]",
                self.absorption
            )));
        }
        Ok(())
    }

    pub fn reflection_coefficient(&self) -> f64 {
        (1.0 - self.absorption).max(0.0).sqrt()
    }

    pub fn direct_distance(&self) -> f64 {
        distance(self.source, self.mic)
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Sums every image source with at most `max_order` wall reflections. Each
/// image adds `beta^order / (4 pi d)` at tap `round(d / c * fs)`. The tail is
/// cut where the remaining energy falls below 1e-6 of the total.
pub fn image_method_rir(params: &RirParams, sample_rate: u32) -> Result<Rir> {
    params.validate()?;
    let fs = f64::from(sample_rate);
    let beta = params.reflection_coefficient();
    let order = params.max_order as i64;
    let span = (order + 1) / 2;

    // Per axis: image coordinate (1 - 2q) s + 2 n L, with |n - q| + |n| reflections.
    let axis_images = |axis: usize| -> Vec<(f64, i64)> {
        let s = params.source[axis];
        let l = params.room[axis];
        let mut out = Vec::new();
        for n in -span..=span {
            for q in 0..=1i64 {
                let refl = (n - q).abs() + n.abs();
                if refl <= order {
                    out.push(((1 - 2 * q) as f64 * s + 2.0 * n as f64 * l, refl));
                }
            }
        }
        out
    };
    let (xs, ys, zs) = (axis_images(0), axis_images(1), axis_images(2));

    let mut taps: Vec<f64> = Vec::new();
    for &(x, rx) in &xs {
        for &(y, ry) in &ys {
            for &(z, rz) in &zs {
                let refl = rx + ry + rz;
                if refl > order {
                    continue;
                }
                let gain = if refl == 0 { 1.0 } else { beta.powi(refl as i32) };
                if gain == 0.0 {
                    continue;
                }
                let d = distance([x, y, z], params.mic);
                let idx = (d / SPEED_OF_SOUND * fs).round() as usize;
                if idx >= taps.len() {
                    taps.resize(idx + 1, 0.0);
                }
                taps[idx] += gain / (4.0 * PI * d);
            }
        }
    }

    let total: f64 = taps.iter().map(|t| t * t).sum();
    let mut tail = 0.0;
    let mut keep = taps.len();
    while keep > 0 {
        let e = taps[keep - 1] * taps[keep - 1];
        if tail + e >= TAIL_ENERGY * total {
            break;
        }
        tail += e;
        keep -= 1;
    }
    taps.truncate(keep);

    Ok(Rir {
        taps,
        sample_rate,
        meta: params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn params(absorption: f64, max_order: u32) -> RirParams {
        RirParams {
            room: [5.0, 4.0, 3.0],
            source: [1.2, 1.5, 1.6],
            mic: [3.7, 2.1, 1.1],
            absorption,
            max_order,
        }
    }

    /// Independent oracle: breadth-first mirroring of the source across the six
    /// wall planes. The first depth at which an image position appears is its
    /// reflection count.
    fn brute_force(p: &RirParams, fs: u32) -> Vec<f64> {
        let key = |v: [f64; 3]| -> [i64; 3] {
            [
                (v[0] * 1e6).round() as i64,
                (v[1] * 1e6).round() as i64,
                (v[2] * 1e6).round() as i64,
            ]
        };
        let mut seen: HashMap<[i64; 3], ([f64; 3], u32)> = HashMap::new();
        let mut frontier = vec![p.source];
        seen.insert(key(p.source), (p.source, 0));
        for depth in 1..=p.max_order {
            let mut next = Vec::new();
            for img in &frontier {
                for axis in 0..3 {
                    for plane in [0.0, p.room[axis]] {
                        let mut r = *img;
                        r[axis] = 2.0 * plane - r[axis];
                        if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(key(r)) {
                            e.insert((r, depth));
                            next.push(r);
                        }
                    }
                }
            }
            frontier = next;
        }
        let beta = (1.0 - p.absorption).sqrt();
        let mut taps = vec![0.0; 4096];
        for (pos, depth) in seen.values() {
            let d = distance(*pos, p.mic);
            let idx = (d / 343.0 * f64::from(fs)).round() as usize;
            taps[idx] += beta.powi(*depth as i32) / (4.0 * PI * d);
        }
        taps
    }

    #[test]
    fn order_zero_is_the_direct_path() {
        let p = params(0.3, 0);
        let rir = image_method_rir(&p, 8000).unwrap();
        let d = p.direct_distance();
        let idx = (d / 343.0 * 8000.0).round() as usize;
        let nonzero: Vec<usize> = (0..rir.taps.len()).filter(|&i| rir.taps[i] != 0.0).collect();
        assert_eq!(nonzero, vec![idx]);
        assert!((rir.taps[idx] - 1.0 / (4.0 * PI * d)).abs() < 1e-15);
    }

    #[test]
    fn fully_absorbing_walls_leave_only_direct_path() {
        let direct = image_method_rir(&params(1.0, 0), 8000).unwrap();
        for order in [1, 2, 5] {
            let rir = image_method_rir(&params(1.0, order), 8000).unwrap();
            assert_eq!(rir.taps, direct.taps);
        }
    }

    #[test]
    fn matches_brute_force_enumeration_up_to_order_two() {
        for order in 0..=2 {
            let p = params(0.5, order);
            let rir = image_method_rir(&p, 8000).unwrap();
            let oracle = brute_force(&p, 8000);
            for (i, &o) in oracle.iter().enumerate() {
                let t = rir.taps.get(i).copied().unwrap_or(0.0);
                assert!((t - o).abs() <= 1e-12 * o.abs().max(1e-3), "order {order} tap {i}: {t} vs {o}");
            }
        }
    }

    #[test]
    fn first_tap_is_the_direct_delay() {
        let p = params(0.4, 3);
        let rir = image_method_rir(&p, 16000).unwrap();
        let first = rir.taps.iter().position(|&t| t != 0.0).unwrap();
        assert_eq!(first, (p.direct_distance() / SPEED_OF_SOUND * 16000.0).round() as usize);
    }

    #[test]
    fn bad_geometry_is_rejected() {
        let mut p = params(0.5, 1);
        p.mic = p.source;
        assert!(matches!(image_method_rir(&p, 8000), Err(Error::Geometry(_))));
        let mut p = params(0.5, 1);
        p.source[2] = 3.5;
        assert!(matches!(image_method_rir(&p, 8000), Err(Error::Geometry(_))));
        let p = params(0.0, 1);
        assert!(image_method_rir(&p, 8000).is_err());
    }
}
