//! Hexagonal focal-plane lattice of a photonic-lantern beamformer.
//!
//! Elements sit on a hexagon of `rings` rings around the focal center and are
//! addressed either by a 1-based id or by axial coordinates `(q, r)`. Ids
//! follow a row-major scan: top row first (largest `y`), left to right within
//! a row. For four rings this puts the center element at id 31.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("element id {id} outside 1..={count}")]
    InvalidId { id: u16, count: u16 },
    #[error("axial coordinate ({q}, {r}) outside a lattice of {rings} rings")]
    InvalidAxial { q: i32, r: i32, rings: u32 },
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
}

/// 1-based element id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub u16);

impl std::fmt::Display for ElementId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Axial hexagon coordinate. `x = pitch·(q + r/2)`, `y = pitch·(√3/2)·r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Axial {
    pub q: i32,
    pub r: i32,
}

impl Axial {
    pub const CENTER: Axial = Axial { q: 0, r: 0 };

    pub fn new(q: i32, r: i32) -> Self {
        Self { q, r }
    }

    /// Hex distance from the center, i.e. the ring number.
    pub fn ring(self) -> u32 {
        let s = -self.q - self.r;
        self.q.unsigned_abs().max(self.r.unsigned_abs()).max(s.unsigned_abs())
    }

    pub fn opposite(self) -> Self {
        Self::new(-self.q, -self.r)
    }

    /// Reflection `y -> -y` expressed on the lattice.
    pub fn mirror_y(self) -> Self {
        Self::new(self.q + self.r, -self.r)
    }
}

/// A resolved element: id together with its axial coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElementIndex {
    pub id: ElementId,
    pub axial: Axial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HexLattice {
    pub pitch_m: f64,
    pub rings: u32,
    pub mode_field_diameter_m: f64,
    order: Vec<Axial>,
}

impl HexLattice {
    pub fn new(pitch_m: f64, rings: u32, mode_field_diameter_m: f64) -> Result<Self, GeometryError> {
        if !(pitch_m > 0.0 && pitch_m.is_finite()) {
            return Err(GeometryError::NonPositive("pitch_m"));
        }
        if !(mode_field_diameter_m > 0.0 && mode_field_diameter_m.is_finite()) {
            return Err(GeometryError::NonPositive("mode_field_diameter_m"));
        }
        let n = rings as i32;
        let mut order = Vec::with_capacity(Self::count_for(rings));
        for r in (-n..=n).rev() {
            for q in (-n).max(-n - r)..=n.min(n - r) {
                order.push(Axial::new(q, r));
            }
        }
        Ok(Self { pitch_m, rings, mode_field_diameter_m, order })
    }

    /// The 61-core lantern: 36.9 μm pitch, 8.4 μm MFD.
    pub fn lantern61() -> Self {
        Self::new(36.9e-6, 4, 8.4e-6).expect("constant lattice")
    }

    pub fn count_for(rings: u32) -> usize {
        let r = rings as usize;
        1 + 3 * r * (r + 1)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Maximum number of elements along one axis, `2·rings + 1`.
    pub fn elements_per_axis(&self) -> u32 {
        2 * self.rings + 1
    }

    pub fn center(&self) -> ElementIndex {
        self.by_axial(Axial::CENTER).expect("center always exists")
    }

    pub fn by_id(&self, id: ElementId) -> Result<ElementIndex, GeometryError> {
        let count = self.order.len() as u16;
        if id.0 == 0 || id.0 > count {
            return Err(GeometryError::InvalidId { id: id.0, count });
        }
        Ok(ElementIndex { id, axial: self.order[(id.0 - 1) as usize] })
    }

    pub fn by_axial(&self, axial: Axial) -> Result<ElementIndex, GeometryError> {
        let n = self.rings as i32;
        let err = GeometryError::InvalidAxial { q: axial.q, r: axial.r, rings: self.rings };
        if axial.ring() > self.rings {
            return Err(err);
        }
        // rows above r contribute their full widths
        let mut offset = 0usize;
        for row in ((axial.r + 1)..=n).rev() {
            offset += (2 * n + 1 - row.abs()) as usize;
        }
        let q_min = (-n).max(-n - axial.r);
        let id = offset + (axial.q - q_min) as usize + 1;
        debug_assert_eq!(self.order[id - 1], axial);
        Ok(ElementIndex { id: ElementId(id as u16), axial })
    }

    pub fn elements(&self) -> impl Iterator<Item = ElementIndex> + '_ {
        self.order.iter().enumerate().map(|(i, &axial)| ElementIndex { id: ElementId(i as u16 + 1), axial })
    }

    /// Planar focal-plane offset `(x, y)` of an element in meters.
    pub fn position(&self, axial: Axial) -> [f64; 2] {
        let (q, r) = (axial.q as f64, axial.r as f64);
        [self.pitch_m * (q + r / 2.0), self.pitch_m * (3f64.sqrt() / 2.0) * r]
    }

    pub fn element_position(&self, idx: ElementIndex) -> Result<[f64; 2], GeometryError> {
        let resolved = self.by_axial(idx.axial)?;
        if resolved.id != idx.id {
            return Err(GeometryError::InvalidId { id: idx.id.0, count: self.len() as u16 });
        }
        Ok(self.position(idx.axial))
    }

    /// The `n` elements closest to the center; ties are broken by id so the
    /// result is deterministic. With `n = 31` on four rings this is every
    /// element within `√7·pitch`, which is point-symmetric.
    pub fn central_subset(&self, n: usize) -> Vec<ElementIndex> {
        let mut all: Vec<_> = self.elements().collect();
        all.sort_by(|a, b| {
            let da = axial_norm2(a.axial);
            let db = axial_norm2(b.axial);
            da.cmp(&db).then(a.id.cmp(&b.id))
        });
        all.truncate(n);
        all.sort_by_key(|e| e.id);
        all
    }

    /// Fraction of the focal plane covered by mode fields, `(MFD/pitch)²`.
    pub fn fill_factor(&self) -> f64 {
        (self.mode_field_diameter_m / self.pitch_m).powi(2)
    }

    pub fn fill_factor_db(&self) -> f64 {
        10.0 * self.fill_factor().log10()
    }
}

/// Squared lattice norm in units of pitch² ×4 (integer, exact).
fn axial_norm2(a: Axial) -> i64 {
    // |x|² + |y|² with x = q + r/2, y = (√3/2) r, scaled by 4
    let (q, r) = (a.q as i64, a.r as i64);
    (2 * q + r).pow(2) + 3 * r * r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollimatorSpec {
    pub focal_length_m: f64,
    pub aperture_diameter_m: f64,
}

impl CollimatorSpec {
    pub fn new(focal_length_m: f64, aperture_diameter_m: f64) -> Result<Self, GeometryError> {
        if !(focal_length_m > 0.0 && focal_length_m.is_finite()) {
            return Err(GeometryError::NonPositive("focal_length_m"));
        }
        if !(aperture_diameter_m > 0.0 && aperture_diameter_m.is_finite()) {
            return Err(GeometryError::NonPositive("aperture_diameter_m"));
        }
        Ok(Self { focal_length_m, aperture_diameter_m })
    }

    /// 2-inch lens with f = 150 mm.
    pub fn two_inch_150mm() -> Self {
        Self { focal_length_m: 0.150, aperture_diameter_m: 0.0508 }
    }
}

/// Small-angle emission direction of an element: `-(x, y)/f`.
pub fn steering_angle(lattice: &HexLattice, collimator: &CollimatorSpec, axial: Axial) -> [f64; 2] {
    let [x, y] = lattice.position(axial);
    [-x / collimator.focal_length_m, -y / collimator.focal_length_m]
}

/// Addressable field of view `N·pitch/f`, in radians.
pub fn field_of_view_rad(lattice: &HexLattice, collimator: &CollimatorSpec) -> f64 {
    lattice.elements_per_axis() as f64 * lattice.pitch_m / collimator.focal_length_m
}

pub fn field_of_view_deg(lattice: &HexLattice, collimator: &CollimatorSpec) -> f64 {
    field_of_view_rad(lattice, collimator).to_degrees()
}

/// Lateral extent covered by the field of view at `distance_m`.
pub fn footprint_m(lattice: &HexLattice, collimator: &CollimatorSpec, distance_m: f64) -> f64 {
    field_of_view_rad(lattice, collimator) * distance_m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn counts() {
        let l = HexLattice::lantern61();
        assert_eq!(l.len(), 61);
        assert_eq!(l.elements_per_axis(), 9);
        assert_eq!(HexLattice::count_for(1), 7);
        assert_eq!(l.center().id, ElementId(31));
    }

    #[test]
    fn positions() {
        let l = HexLattice::lantern61();
        assert_eq!(l.position(Axial::CENTER), [0.0, 0.0]);
        let [x, y] = l.position(Axial::new(1, 0));
        assert_relative_eq!(x, 36.9e-6);
        assert_eq!(y, 0.0);
        let [x, y] = l.position(Axial::new(0, 1));
        assert_relative_eq!(x, 18.45e-6);
        assert_relative_eq!(y, 31.956e-6, max_relative = 1e-4);
    }

    #[test]
    fn id_round_trip_is_bijective() {
        let l = HexLattice::lantern61();
        let mut seen = std::collections::HashSet::new();
        for id in 1..=61u16 {
            let e = l.by_id(ElementId(id)).unwrap();
            assert!(e.axial.q.abs() <= 4 && e.axial.r.abs() <= 4 && (e.axial.q + e.axial.r).abs() <= 4);
            assert_eq!(l.by_axial(e.axial).unwrap().id, ElementId(id));
            assert!(seen.insert(e.axial));
        }
        assert_eq!(seen.len(), 61);
    }

    #[test]
    fn ids_scan_top_row_first() {
        let l = HexLattice::lantern61();
        let first = l.by_id(ElementId(1)).unwrap();
        let second = l.by_id(ElementId(2)).unwrap();
        assert_eq!(first.axial.r, 4);
        assert!(l.position(second.axial)[0] > l.position(first.axial)[0]);
        assert_eq!(l.by_id(ElementId(61)).unwrap().axial.r, -4);
    }

    #[test]
    fn invalid_indices() {
        let l = HexLattice::lantern61();
        assert!(l.by_id(ElementId(0)).is_err());
        assert!(l.by_id(ElementId(62)).is_err());
        assert!(l.by_axial(Axial::new(3, 2)).is_err());
        let bogus = ElementIndex { id: ElementId(5), axial: Axial::CENTER };
        assert!(l.element_position(bogus).is_err());
    }

    #[test]
    fn pairwise_distances_at_least_one_pitch() {
        let l = HexLattice::lantern61();
        let pts: Vec<_> = l.elements().map(|e| l.position(e.axial)).collect();
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                assert!(d >= l.pitch_m * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn point_symmetric() {
        let l = HexLattice::lantern61();
        for e in l.elements() {
            assert!(l.by_axial(e.axial.opposite()).is_ok());
            assert!(l.by_axial(e.axial.mirror_y()).is_ok());
            let [x, y] = l.position(e.axial);
            let [mx, my] = l.position(e.axial.mirror_y());
            assert_relative_eq!(mx, x, epsilon = 1e-18);
            assert_relative_eq!(my, -y, epsilon = 1e-18);
        }
    }

    #[test]
    fn steering() {
        let l = HexLattice::lantern61();
        let c = CollimatorSpec::two_inch_150mm();
        assert_eq!(steering_angle(&l, &c, Axial::CENTER), [0.0, 0.0]);
        let [tx, ty] = steering_angle(&l, &c, Axial::new(1, 0));
        assert_relative_eq!((tx * tx + ty * ty).sqrt(), 246e-6, max_relative = 1e-12);
        let [tx, _] = steering_angle(&l, &c, Axial::new(4, 0));
        assert_relative_eq!(tx.abs(), 984e-6, max_relative = 1e-12);
        // linear in offset
        let one = steering_angle(&l, &c, Axial::new(1, 1));
        let two = steering_angle(&l, &c, Axial::new(2, 2));
        assert_eq!([2.0 * one[0], 2.0 * one[1]], two);
    }

    #[test]
    fn field_of_view_values() {
        let l = HexLattice::lantern61();
        let c = CollimatorSpec::two_inch_150mm();
        assert_relative_eq!(field_of_view_deg(&l, &c), 0.127, epsilon = 5e-4);
        assert_relative_eq!(footprint_m(&l, &c, 63.0), 0.139, epsilon = 1e-3);
        let rt = field_of_view_rad(&l, &c) * c.focal_length_m / (9.0 * l.pitch_m);
        assert_relative_eq!(rt, 1.0, max_relative = 1e-12);
        let c2 = CollimatorSpec::new(0.3, 0.0508).unwrap();
        assert_relative_eq!(field_of_view_deg(&l, &c2) * 2.0, field_of_view_deg(&l, &c), max_relative = 1e-12);
    }

    #[test]
    fn fill_factor_square_law() {
        let l = HexLattice::lantern61();
        assert_relative_eq!(l.fill_factor(), 0.0518, epsilon = 1e-4);
        assert!((l.fill_factor_db() - (-12.7)).abs() <= 0.3);
        let unit = HexLattice::new(10e-6, 4, 10e-6).unwrap();
        assert_relative_eq!(unit.fill_factor(), 1.0);
        assert_relative_eq!(unit.fill_factor_db(), 0.0);
        let tenth = HexLattice::new(10e-6, 4, 1e-6).unwrap();
        assert_relative_eq!(tenth.fill_factor(), 0.01, max_relative = 1e-12);
        assert_relative_eq!(tenth.fill_factor_db(), -20.0, max_relative = 1e-12);
    }

    #[test]
    fn central_subset_is_symmetric() {
        let l = HexLattice::lantern61();
        let s = l.central_subset(31);
        assert_eq!(s.len(), 31);
        assert!(s.contains(&l.center()));
        let set: std::collections::HashSet<_> = s.iter().map(|e| e.axial).collect();
        for e in &s {
            assert!(set.contains(&e.axial.opposite()));
            assert!(axial_norm2(e.axial) <= 4 * 7);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(HexLattice::new(0.0, 4, 1e-6).is_err());
        assert!(HexLattice::new(1e-6, 4, -1.0).is_err());
        assert!(CollimatorSpec::new(0.0, 0.05).is_err());
    }
}
