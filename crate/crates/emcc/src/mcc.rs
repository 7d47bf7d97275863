//! Cylinder features: a local descriptor per minutia.
//!
//! Each minutia gets a cylinder of `n_s * n_s` spatial cells stacked over
//! `n_d` directional sections. A cell accumulates spatial and directional
//! closeness of the other minutiae, and the sum is squashed into `[0, 1]`.
//! Cells are linearized section-major: `s * n_s * n_s + i * n_s + j`.
//!
//! Alongside the cell values sits a base validity mask over the spatial
//! grid: a cell is usable when its center lies inside the cylinder radius
//! and, if image bounds are declared, inside the image.

use crate::bits::Bits;
use crate::minutiae::{Minutia, MinutiaeRecord};
use thiserror::Error;

/// Midpoint of the logistic squash applied to accumulated contributions.
const SQUASH_MIDPOINT: f64 = 0.005;
/// Slope of the logistic squash.
const SQUASH_SLOPE: f64 = 400.0;

#[derive(Debug, Error)]
pub enum MccError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("base mask has {got} bits, expected {expected}")]
    Length { expected: usize, got: usize },
}

/// Geometry and smoothing parameters for cylinder construction.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MccParams {
    /// Spatial cells per cylinder side.
    pub n_s: usize,
    /// Directional sections.
    pub n_d: usize,
    /// Cylinder radius in pixels.
    pub radius: f64,
    /// Spatial Gaussian spread in pixels.
    pub sigma_s: f64,
    /// Directional Gaussian spread in radians.
    pub sigma_d: f64,
    /// Minimum other minutiae within `radius` for a feature to be valid.
    pub min_neighbors: usize,
}

impl Default for MccParams {
    fn default() -> Self {
        MccParams {
            n_s: 16,
            n_d: 5,
            radius: 70.0,
            sigma_s: 28.0 / 3.0,
            sigma_d: 2.0 * std::f64::consts::PI / 9.0,
            min_neighbors: 2,
        }
    }
}

impl MccParams {
    /// Spatial cells per section.
    pub fn l_b(&self) -> usize {
        self.n_s * self.n_s
    }

    /// Total cells per cylinder.
    pub fn l_c(&self) -> usize {
        self.n_s * self.n_s * self.n_d
    }

    pub fn validate(&self) -> Result<(), MccError> {
        if self.n_s < 2 {
            return Err(MccError::Param(format!("n_s = {} (need >= 2)", self.n_s)));
        }
        if self.n_d < 1 {
            return Err(MccError::Param("n_d = 0".into()));
        }
        if !(self.radius > 0.0) {
            return Err(MccError::Param(format!("radius = {}", self.radius)));
        }
        if !(self.sigma_s > 0.0) || !(self.sigma_d > 0.0) {
            return Err(MccError::Param("sigma_s and sigma_d must be positive".into()));
        }
        Ok(())
    }

    /// Replicate a spatial base mask across all `n_d` sections, yielding the
    /// full-length cell validity vector.
    pub fn expand_mask(&self, base: &Bits) -> Result<Bits, MccError> {
        if base.len() != self.l_b() {
            return Err(MccError::Length { expected: self.l_b(), got: base.len() });
        }
        let mut out = Bits::zeros(self.l_c());
        for s in 0..self.n_d {
            for i in 0..self.l_b() {
                if base.get(i) {
                    out.set(s * self.l_b() + i, true);
                }
            }
        }
        Ok(out)
    }
}

/// Cylinder descriptor for one minutia.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderFeature {
    pub center: Minutia,
    /// Cell values in `[0, 1]`, section-major, length `l_c`.
    pub cells: Vec<f64>,
    /// Spatial validity mask, length `l_b`.
    pub base_mask: Bits,
    /// False when too few neighbors fall inside the radius.
    pub valid: bool,
}

/// Difference of two angles wrapped to `(-π, π]`.
fn ang_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b).rem_euclid(2.0 * std::f64::consts::PI);
    if d > std::f64::consts::PI {
        d -= 2.0 * std::f64::consts::PI;
    }
    d
}

fn logistic(v: f64, midpoint: f64, slope: f64) -> f64 {
    1.0 / (1.0 + (-slope * (v - midpoint)).exp())
}

/// Build one cylinder per minutia, in record order.
pub fn build_cylinders(
    record: &MinutiaeRecord,
    params: &MccParams,
) -> Result<Vec<CylinderFeature>, MccError> {
    params.validate()?;
    let minutiae = &record.minutiae;
    let bounds = match (record.width, record.height) {
        (Some(w), Some(h)) => Some((w as f64, h as f64)),
        _ => None,
    };
    Ok((0..minutiae.len())
        .map(|idx| build_one(minutiae, idx, params, bounds))
        .collect())
}

fn build_one(
    minutiae: &[Minutia],
    idx: usize,
    params: &MccParams,
    bounds: Option<(f64, f64)>,
) -> CylinderFeature {
    let m = &minutiae[idx];
    let n_s = params.n_s;
    let n_d = params.n_d;
    let l_b = params.l_b();
    let delta_s = 2.0 * params.radius / n_s as f64;
    let delta_d = 2.0 * std::f64::consts::PI / n_d as f64;
    let (cos_t, sin_t) = (m.theta.cos(), m.theta.sin());
    let (mx, my) = (m.x as f64, m.y as f64);

    let neighbors: Vec<&Minutia> = minutiae
        .iter()
        .enumerate()
        .filter(|&(t, _)| t != idx)
        .map(|(_, n)| n)
        .collect();

    let r2 = params.radius * params.radius;
    let inside = neighbors
        .iter()
        .filter(|n| {
            let dx = n.x as f64 - mx;
            let dy = n.y as f64 - my;
            dx * dx + dy * dy <= r2
        })
        .count();
    let valid = inside >= params.min_neighbors;

    // Directional contribution depends only on (neighbor, section): the area
    // of a Gaussian centered at the direction difference over one section.
    let inv_sqrt2_sd = 1.0 / (params.sigma_d * std::f64::consts::SQRT_2);
    let dir: Vec<f64> = neighbors
        .iter()
        .flat_map(|n| {
            let dphi = ang_diff(m.theta, n.theta);
            (0..n_d).map(move |s| {
                let section_angle = -std::f64::consts::PI + (s as f64 + 0.5) * delta_d;
                let alpha = ang_diff(section_angle, dphi);
                0.5 * (libm::erf((alpha + delta_d / 2.0) * inv_sqrt2_sd)
                    - libm::erf((alpha - delta_d / 2.0) * inv_sqrt2_sd))
            })
        })
        .collect();

    let gauss_norm = 1.0 / (params.sigma_s * (2.0 * std::f64::consts::PI).sqrt());
    let inv_2s2 = 1.0 / (2.0 * params.sigma_s * params.sigma_s);
    let reach2 = (3.0 * params.sigma_s) * (3.0 * params.sigma_s);

    let mut cells = vec![0.0; params.l_c()];
    let mut base_mask = Bits::zeros(l_b);
    for i in 0..n_s {
        let it = (i as f64 + 0.5) - n_s as f64 / 2.0;
        for j in 0..n_s {
            let jt = (j as f64 + 0.5) - n_s as f64 / 2.0;
            let cx = mx + delta_s * (cos_t * it + sin_t * jt);
            let cy = my + delta_s * (-sin_t * it + cos_t * jt);

            let dcx = cx - mx;
            let dcy = cy - my;
            let mut usable = dcx * dcx + dcy * dcy <= r2;
            if let Some((w, h)) = bounds {
                usable &= cx >= 0.0 && cx < w && cy >= 0.0 && cy < h;
            }
            if usable {
                base_mask.set(i * n_s + j, true);
            }

            for (t, n) in neighbors.iter().enumerate() {
                let dx = n.x as f64 - cx;
                let dy = n.y as f64 - cy;
                let d2 = dx * dx + dy * dy;
                if d2 > reach2 {
                    continue;
                }
                let spatial = gauss_norm * (-d2 * inv_2s2).exp();
                for s in 0..n_d {
                    cells[s * l_b + i * n_s + j] += spatial * dir[t * n_d + s];
                }
            }
        }
    }
    for c in cells.iter_mut() {
        *c = logistic(*c, SQUASH_MIDPOINT, SQUASH_SLOPE);
    }

    CylinderFeature { center: m.clone(), cells, base_mask, valid }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(minutiae: Vec<Minutia>) -> MinutiaeRecord {
        MinutiaeRecord { minutiae, ..MinutiaeRecord::default() }
    }

    fn cluster(n: usize) -> MinutiaeRecord {
        // deterministic blob of minutiae well inside a 388x374 canvas
        let minutiae = (0..n)
            .map(|i| {
                let k = i as u32;
                Minutia::new(
                    150 + (k * 37) % 90,
                    140 + (k * 53) % 80,
                    (i as f64 * 0.7) % (2.0 * std::f64::consts::PI),
                )
            })
            .collect();
        record(minutiae)
    }

    #[test]
    fn lengths_and_defaults() {
        let p = MccParams::default();
        assert_eq!(p.l_b(), 256);
        assert_eq!(p.l_c(), 1280);
        p.validate().unwrap();
    }

    #[test]
    fn single_minutia_is_invalid() {
        let feats =
            build_cylinders(&record(vec![Minutia::new(100, 100, 0.0)]), &MccParams::default())
                .unwrap();
        assert_eq!(feats.len(), 1);
        assert!(!feats[0].valid);
    }

    #[test]
    fn coincident_minutiae_stay_in_range() {
        let r = record(vec![
            Minutia::new(100, 100, 1.0),
            Minutia::new(100, 100, 1.0),
            Minutia::new(110, 104, 2.0),
        ]);
        let feats = build_cylinders(&r, &MccParams::default()).unwrap();
        for f in &feats {
            assert!(f.valid);
            assert!(f.cells.iter().all(|&c| (0.0..=1.0).contains(&c)), "cell out of range");
        }
    }

    #[test]
    fn fifty_minutiae_full_shape() {
        let feats = build_cylinders(&cluster(50), &MccParams::default()).unwrap();
        assert_eq!(feats.len(), 50);
        for f in &feats {
            assert_eq!(f.cells.len(), 1280);
            assert_eq!(f.base_mask.len(), 256);
            assert!(f.cells.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)));
        }
        assert!(feats.iter().all(|f| f.valid));
    }

    #[test]
    fn deterministic_rebuild() {
        let r = cluster(30);
        let p = MccParams::default();
        let a = build_cylinders(&r, &p).unwrap();
        let b = build_cylinders(&r, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bounds_clip_the_mask() {
        // minutia near the corner: without bounds more cells are usable
        let near_edge = vec![Minutia::new(5, 5, 0.4), Minutia::new(20, 12, 1.0)];
        let unbounded = build_cylinders(&record(near_edge.clone()), &MccParams::default()).unwrap();
        let mut bounded_rec = record(near_edge);
        bounded_rec.width = Some(388);
        bounded_rec.height = Some(374);
        let bounded = build_cylinders(&bounded_rec, &MccParams::default()).unwrap();
        assert!(bounded[0].base_mask.count_ones() < unbounded[0].base_mask.count_ones());
    }

    #[test]
    fn expand_mask_replication() {
        let p = MccParams::default();
        let mut base = Bits::zeros(256);
        base.set(77, true);
        let full = p.expand_mask(&base).unwrap();
        assert_eq!(full.len(), 1280);
        assert_eq!(full.count_ones(), 5);
        for s in 0..5 {
            assert!(full.get(77 + 256 * s));
        }

        let ones = Bits::from_bools(&vec![true; 256]);
        assert_eq!(p.expand_mask(&ones).unwrap().count_ones(), 1280);
        let zeros = Bits::zeros(256);
        assert_eq!(p.expand_mask(&zeros).unwrap().count_ones(), 0);
    }

    #[test]
    fn expand_mask_length_check() {
        let p = MccParams::default();
        assert!(matches!(
            p.expand_mask(&Bits::zeros(100)),
            Err(MccError::Length { expected: 256, got: 100 })
        ));
    }

    #[test]
    fn mask_center_cell_inside_radius() {
        let r = record(vec![Minutia::new(200, 200, 0.0), Minutia::new(210, 200, 0.0)]);
        let feats = build_cylinders(&r, &MccParams::default()).unwrap();
        let mask = &feats[0].base_mask;
        // cells adjacent to the center are within the radius
        assert!(mask.get(7 * 16 + 7));
        assert!(mask.get(8 * 16 + 8));
        // corner cells are outside the inscribed circle
        assert!(!mask.get(0));
        assert!(!mask.get(255));
    }
}
