//! Array geometry, candidate grids and TDOA tables.
//!
//! Microphone pairs are indexed `(m, m')` with `m > m'` and enumerated by
//! ascending `m'` first, then ascending `m`. Candidate grids are enumerated
//! row-major with the first declared axis varying fastest, so candidate indices
//! are reproducible across runs.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrpError};

/// Cartesian coordinate in meters, or a unit direction for far-field grids.
pub type Point3 = [f64; 3];

pub const DEFAULT_SPEED_OF_SOUND: f64 = 340.0;

const UNIT_NORM_TOL: f64 = 1e-9;

pub(crate) fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn distance(a: &Point3, b: &Point3) -> f64 {
    norm(&sub(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Propagation {
    NearField,
    FarField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicrophoneArray {
    positions: Vec<Point3>,
    speed_of_sound: f64,
}

impl MicrophoneArray {
    pub fn new(positions: Vec<Point3>, speed_of_sound: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(SrpError::InvalidGeometry(format!(
                "at least 2 microphones are required, got {}",
                positions.len()
            )));
        }
        if !(speed_of_sound > 0.0 && speed_of_sound.is_finite()) {
            return Err(SrpError::InvalidGeometry(format!(
                "speed of sound must be positive, got {speed_of_sound}"
            )));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SrpError::InvalidGeometry(
                "microphone coordinates must be finite".into(),
            ));
        }
        for (a, pa) in positions.iter().enumerate() {
            for (b, pb) in positions.iter().enumerate().skip(a + 1) {
                if distance(pa, pb) == 0.0 {
                    return Err(SrpError::InvalidGeometry(format!("microphones {a} and {b} coincide")));
                }
            }
        }
        Ok(Self {
            positions,
            speed_of_sound,
        })
    }

    /// `count` microphones equispaced on a horizontal circle, the first one
    /// along the +x axis.
    pub fn circular(center: Point3, radius: f64, count: usize, speed_of_sound: f64) -> Result<Self> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(SrpError::InvalidGeometry(format!(
                "circular array radius must be positive, got {radius}"
            )));
        }
        let positions = (0..count)
            .map(|m| {
                let phi = 2.0 * std::f64::consts::PI * m as f64 / count as f64;
                [
                    center[0] + radius * phi.cos(),
                    center[1] + radius * phi.sin(),
                    center[2],
                ]
            })
            .collect();
        Self::new(positions, speed_of_sound)
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    pub fn centroid(&self) -> Point3 {
        let m = self.positions.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            for d in 0..3 {
                c[d] += p[d] / m;
            }
        }
        c
    }
}

/// One microphone pair, `m > m_prime` (0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicPair {
    pub m: usize,
    pub m_prime: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pairs: Vec<MicPair>,
}

impl PairTable {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[MicPair] {
        &self.pairs
    }

    pub fn max_distance(&self) -> f64 {
        self.pairs.iter().map(|p| p.distance).fold(0.0, f64::max)
    }
}

/// All `M(M-1)/2` pairs, ordered by `(m', m)` ascending.
pub fn enumerate_pairs(array: &MicrophoneArray) -> PairTable {
    let pos = array.positions();
    let mut pairs = Vec::with_capacity(pos.len() * (pos.len() - 1) / 2);
    for m_prime in 0..pos.len() {
        for m in m_prime + 1..pos.len() {
            pairs.push(MicPair {
                m,
                m_prime,
                distance: distance(&pos[m], &pos[m_prime]),
            });
        }
    }
    PairTable { pairs }
}

/// Declarative grid description as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    /// Near-field lattice spanning `origin .. origin + extent`.
    Volume {
        origin: Point3,
        extent: Point3,
        resolution: f64,
    },
    /// Far-field lower half-sphere of incident directions, zenith along +z.
    HalfSphere { resolution_deg: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridAxes {
    Volume {
        origin: Point3,
        resolution: f64,
        counts: [usize; 3],
    },
    HalfSphere {
        polar_deg: Vec<f64>,
        azimuth_deg: Vec<f64>,
    },
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    mode: Propagation,
    points: Vec<Point3>,
    axes: GridAxes,
}

impl CandidateGrid {
    /// Wraps explicit candidates; far-field directions must be unit vectors.
    pub fn from_points(mode: Propagation, points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(SrpError::InvalidGrid("grid has no candidates".into()));
        }
        if mode == Propagation::FarField {
            check_unit(&points)?;
        }
        Ok(Self {
            mode,
            points,
            axes: GridAxes::Explicit,
        })
    }

    pub fn mode(&self) -> Propagation {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    pub fn axes(&self) -> &GridAxes {
        &self.axes
    }

    /// Axis-aligned bounding box `(min, max)` of all candidates.
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }
}

fn check_unit(points: &[Point3]) -> Result<()> {
    for (i, q) in points.iter().enumerate() {
        if (norm(q) - 1.0).abs() > UNIT_NORM_TOL {
            return Err(SrpError::InvalidGrid(format!(
                "far-field candidate {i} is not a unit vector (norm {})",
                norm(q)
            )));
        }
    }
    Ok(())
}

fn lattice_count(extent: f64, step: f64) -> usize {
    (extent / step + 1e-6).floor() as usize + 1
}

/// Builds the candidate grid. `room`, when given, must contain every
/// near-field candidate.
pub fn build_grid(spec: &GridSpec, room: Option<Point3>) -> Result<CandidateGrid> {
    match spec {
        GridSpec::Volume {
            origin,
            extent,
            resolution,
        } => {
            if !(*resolution > 0.0 && resolution.is_finite()) {
                return Err(SrpError::InvalidGrid(format!(
                    "resolution must be positive, got {resolution}"
                )));
            }
            if extent.iter().chain(origin.iter()).any(|v| !v.is_finite()) || extent.iter().any(|&e| e < 0.0) {
                return Err(SrpError::InvalidGrid(format!("empty extent {extent:?}")));
            }
            if let Some(room) = room {
                for d in 0..3 {
                    if origin[d] < 0.0 || origin[d] + extent[d] > room[d] {
                        return Err(SrpError::InvalidGrid(format!(
                            "grid axis {d} spans {}..{} outside the room (0..{})",
                            origin[d],
                            origin[d] + extent[d],
                            room[d]
                        )));
                    }
                }
            }
            let counts = [
                lattice_count(extent[0], *resolution),
                lattice_count(extent[1], *resolution),
                lattice_count(extent[2], *resolution),
            ];
            let mut points = Vec::with_capacity(counts.iter().product());
            for iz in 0..counts[2] {
                for iy in 0..counts[1] {
                    for ix in 0..counts[0] {
                        points.push([
                            origin[0] + ix as f64 * resolution,
                            origin[1] + iy as f64 * resolution,
                            origin[2] + iz as f64 * resolution,
                        ]);
                    }
                }
            }
            Ok(CandidateGrid {
                mode: Propagation::NearField,
                points,
                axes: GridAxes::Volume {
                    origin: *origin,
                    resolution: *resolution,
                    counts,
                },
            })
        }
        GridSpec::HalfSphere { resolution_deg } => {
            let res = *resolution_deg;
            if !(res > 0.0 && res.is_finite()) {
                return Err(SrpError::InvalidGrid(format!(
                    "angular resolution must be positive, got {res}"
                )));
            }
            let rings = 90.0 / res;
            let azimuths = 360.0 / res;
            if (rings - rings.round()).abs() > 1e-9 || (azimuths - azimuths.round()).abs() > 1e-9 {
                return Err(SrpError::InvalidGrid(format!(
                    "angular resolution {res} deg does not divide 90 and 360 deg"
                )));
            }
            let (rings, azimuths) = (rings.round() as usize, azimuths.round() as usize);
            // Polar angle from +z: rings at 90, 90+res, ..., 180-res, then the nadir once.
            let polar_deg: Vec<f64> = (0..=rings).map(|r| 90.0 + r as f64 * res).collect();
            let azimuth_deg: Vec<f64> = (0..azimuths).map(|a| a as f64 * res).collect();
            let mut points = Vec::with_capacity(rings * azimuths + 1);
            for &theta in &polar_deg[..rings] {
                let (st, ct) = theta.to_radians().sin_cos();
                for &phi in &azimuth_deg {
                    let (sp, cp) = phi.to_radians().sin_cos();
                    // azimuth 0 points along +y
                    points.push([st * sp, st * cp, ct]);
                }
            }
            points.push([0.0, 0.0, -1.0]);
            Ok(CandidateGrid {
                mode: Propagation::FarField,
                points,
                axes: GridAxes::HalfSphere { polar_deg, azimuth_deg },
            })
        }
    }
}

/// Per-candidate, per-pair TDOAs (seconds), stored candidate-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaTable {
    candidates: usize,
    pairs: usize,
    delays: Vec<f64>,
    limits: Vec<f64>,
}

impl TdoaTable {
    /// Builds a table from explicit values; used for synthetic operators in tests
    /// and experiments. `delays` is candidate-major (`J x P`).
    pub fn from_raw(candidates: usize, limits: Vec<f64>, delays: Vec<f64>) -> Result<Self> {
        let pairs = limits.len();
        if delays.len() != candidates * pairs {
            return Err(SrpError::Dimension {
                what: "tdoa values",
                expected: candidates * pairs,
                found: delays.len(),
            });
        }
        Ok(Self {
            candidates,
            pairs,
            delays,
            limits,
        })
    }

    pub fn candidates(&self) -> usize {
        self.candidates
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn delay(&self, i: usize, p: usize) -> f64 {
        self.delays[i * self.pairs + p]
    }

    /// TDOAs of candidate `i` for all pairs.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.delays[i * self.pairs..(i + 1) * self.pairs]
    }

    /// `d_p / c` per pair.
    pub fn limits(&self) -> &[f64] {
        &self.limits
    }
}

pub fn tdoa_table(array: &MicrophoneArray, pairs: &PairTable, grid: &CandidateGrid) -> Result<TdoaTable> {
    let c = array.speed_of_sound();
    let pos = array.positions();
    if let Some(bad) = pairs
        .pairs()
        .iter()
        .find(|pr| pr.m >= pos.len() || pr.m_prime >= pos.len())
    {
        return Err(SrpError::Dimension {
            what: "pair table microphone index",
            expected: pos.len(),
            found: bad.m.max(bad.m_prime) + 1,
        });
    }
    if grid.mode() == Propagation::FarField {
        check_unit(grid.points())?;
    }
    let mut delays = Vec::with_capacity(grid.len() * pairs.len());
    for q in grid.points() {
        for pr in pairs.pairs() {
            let (pm, pn) = (&pos[pr.m], &pos[pr.m_prime]);
            let dt = match grid.mode() {
                Propagation::NearField => (distance(pm, q) - distance(pn, q)) / c,
                // q points from the array toward the source, so the microphone
                // further along q hears the wavefront first.
                Propagation::FarField => dot(&sub(pn, pm), q) / c,
            };
            delays.push(dt);
        }
    }
    let limits = pairs.pairs().iter().map(|pr| pr.distance / c).collect();
    Ok(TdoaTable {
        candidates: grid.len(),
        pairs: pairs.len(),
        delays,
        limits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line_array(xs: &[f64]) -> MicrophoneArray {
        MicrophoneArray::new(xs.iter().map(|&x| [x, 0.0, 0.0]).collect(), 340.0).unwrap()
    }

    #[test]
    fn pair_counts_for_four_and_six_mics() {
        assert_eq!(enumerate_pairs(&line_array(&[0.0, 1.0, 2.0, 3.0])).len(), 6);
        let six = MicrophoneArray::circular([0.0; 3], 0.3, 6, 340.0).unwrap();
        assert_eq!(enumerate_pairs(&six).len(), 15);
    }

    #[test]
    fn two_microphones_give_one_pair() {
        let pairs = enumerate_pairs(&line_array(&[0.0, 1.0]));
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs.pairs()[0].m, pairs.pairs()[0].m_prime), (1, 0));
    }

    #[test]
    fn pair_order_is_lexicographic_in_m_prime_then_m() {
        let pairs = enumerate_pairs(&line_array(&[0.0, 1.0, 2.0, 3.0]));
        let idx: Vec<_> = pairs.pairs().iter().map(|p| (p.m_prime, p.m)).collect();
        assert_eq!(idx, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn rejects_degenerate_arrays() {
        assert!(matches!(
            MicrophoneArray::new(vec![[0.0; 3]], 340.0),
            Err(SrpError::InvalidGeometry(_))
        ));
        assert!(MicrophoneArray::new(vec![[0.0; 3], [0.0; 3]], 340.0).is_err());
        assert!(MicrophoneArray::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], 0.0).is_err());
    }

    #[test]
    fn full_scale_grid_sizes() {
        let nf = GridSpec::Volume {
            origin: [0.45, 0.45, 1.45],
            extent: [4.0, 5.0, 0.1],
            resolution: 0.0333,
        };
        assert_eq!(build_grid(&nf, Some([4.9, 5.9, 3.5])).unwrap().len(), 73084);
        let ff = GridSpec::HalfSphere { resolution_deg: 2.0 };
        assert_eq!(build_grid(&ff, None).unwrap().len(), 8101);
    }

    #[test]
    fn corner_lattice_has_eight_points() {
        let g = GridSpec::Volume {
            origin: [0.0; 3],
            extent: [0.1; 3],
            resolution: 0.1,
        };
        let grid = build_grid(&g, None).unwrap();
        assert_eq!(grid.len(), 8);
        // x fastest
        assert_relative_eq!(grid.point(1)[0], 0.1);
        assert_relative_eq!(grid.point(2)[1], 0.1);
        assert_relative_eq!(grid.point(4)[2], 0.1);
    }

    #[test]
    fn grid_errors() {
        let empty = GridSpec::Volume {
            origin: [0.0; 3],
            extent: [-1.0, 1.0, 1.0],
            resolution: 0.1,
        };
        assert!(matches!(build_grid(&empty, None), Err(SrpError::InvalidGrid(_))));
        let outside = GridSpec::Volume {
            origin: [0.0; 3],
            extent: [5.0, 1.0, 1.0],
            resolution: 0.1,
        };
        assert!(build_grid(&outside, Some([4.0, 4.0, 4.0])).is_err());
        assert!(build_grid(&GridSpec::HalfSphere { resolution_deg: 7.0 }, None).is_err());
        assert!(build_grid(&GridSpec::HalfSphere { resolution_deg: 0.0 }, None).is_err());
    }

    #[test]
    fn half_sphere_is_unit_lower_and_pole_once() {
        let grid = build_grid(&GridSpec::HalfSphere { resolution_deg: 10.0 }, None).unwrap();
        assert_eq!(grid.len(), 9 * 36 + 1);
        for q in grid.points() {
            assert!((norm(q) - 1.0).abs() < 1e-12);
            assert!(q[2] <= 1e-12);
        }
        let poles = grid.points().iter().filter(|q| q[2] < -1.0 + 1e-12).count();
        assert_eq!(poles, 1);
        // azimuth runs fastest
        let g1 = grid.point(1);
        assert!(g1[2].abs() < 1e-12);
        assert_relative_eq!(g1[0], 10f64.to_radians().sin(), epsilon = 1e-12);
    }

    #[test]
    fn near_field_equidistant_candidate_has_zero_tdoa() {
        let array = line_array(&[0.0, 1.0]);
        let pairs = enumerate_pairs(&array);
        let grid = CandidateGrid::from_points(Propagation::NearField, vec![[0.5, 10.0, 0.0]]).unwrap();
        let t = tdoa_table(&array, &pairs, &grid).unwrap();
        assert!(t.delay(0, 0).abs() < 1e-15);
    }

    #[test]
    fn far_field_colinear_reaches_limit() {
        let array = line_array(&[0.0, 0.6]);
        let pairs = enumerate_pairs(&array);
        let grid = CandidateGrid::from_points(Propagation::FarField, vec![[1.0, 0.0, 0.0]]).unwrap();
        let t = tdoa_table(&array, &pairs, &grid).unwrap();
        // microphone 1 sits further toward the source, so it leads
        assert_relative_eq!(t.delay(0, 0), -0.6 / 340.0, max_relative = 1e-14);
        assert_relative_eq!(t.delay(0, 0).abs(), t.limits()[0]);
        assert_relative_eq!(t.limits()[0] * 1e3, 1.7647, epsilon = 1e-4);
    }

    #[test]
    fn largest_limit_of_corner_geometry() {
        let array = MicrophoneArray::new(
            vec![
                [0.45, 0.45, 3.0],
                [4.45, 0.45, 3.0],
                [0.45, 5.45, 3.0],
                [4.45, 5.45, 3.0],
            ],
            340.0,
        )
        .unwrap();
        let pairs = enumerate_pairs(&array);
        let twice_ms = 2.0 * pairs.max_distance() / 340.0 * 1e3;
        assert!((37.6..=37.7).contains(&twice_ms), "{twice_ms}");
    }

    #[test]
    fn non_unit_far_field_vector_is_rejected() {
        assert!(CandidateGrid::from_points(Propagation::FarField, vec![[1.0, 1.0, 0.0]]).is_err());
    }

    #[test]
    fn near_field_converges_to_far_field() {
        let array = MicrophoneArray::circular([0.0; 3], 0.3, 6, 340.0).unwrap();
        let pairs = enumerate_pairs(&array);
        let dir = {
            let v = [0.3, -0.5, -0.8];
            let n = norm(&v);
            [v[0] / n, v[1] / n, v[2] / n]
        };
        let aperture = 0.6;
        let far = 100.0 * aperture;
        let nf = CandidateGrid::from_points(Propagation::NearField, vec![[dir[0] * far, dir[1] * far, dir[2] * far]])
            .unwrap();
        let ff = CandidateGrid::from_points(Propagation::FarField, vec![dir]).unwrap();
        let tn = tdoa_table(&array, &pairs, &nf).unwrap();
        let tf = tdoa_table(&array, &pairs, &ff).unwrap();
        let num: f64 = (0..pairs.len())
            .map(|p| (tn.delay(0, p) - tf.delay(0, p)).powi(2))
            .sum();
        let den: f64 = (0..pairs.len()).map(|p| tf.delay(0, p).powi(2)).sum();
        assert!((num / den).sqrt() < 1e-3, "{}", (num / den).sqrt());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tdoa_within_limits(
                qx in -5.0..5.0f64, qy in -5.0..5.0f64, qz in -5.0..5.0f64,
            ) {
                let array = MicrophoneArray::new(
                    vec![[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.3, 1.1, 0.4], [-0.7, 0.2, 0.9]],
                    343.0,
                ).unwrap();
                let pairs = enumerate_pairs(&array);
                let nf = CandidateGrid::from_points(Propagation::NearField, vec![[qx, qy, qz]]).unwrap();
                let t = tdoa_table(&array, &pairs, &nf).unwrap();
                for p in 0..pairs.len() {
                    prop_assert!(t.delay(0, p).abs() <= t.limits()[p] + 1e-12);
                }
                let n = norm(&[qx, qy, qz]);
                prop_assume!(n > 1e-6);
                let dir = [qx / n, qy / n, qz / n];
                let neg = [-dir[0], -dir[1], -dir[2]];
                let ff = CandidateGrid::from_points(Propagation::FarField, vec![dir, neg]).unwrap();
                let t = tdoa_table(&array, &pairs, &ff).unwrap();
                for p in 0..pairs.len() {
                    prop_assert!(t.delay(0, p).abs() <= t.limits()[p] + 1e-12);
                    prop_assert!((t.delay(0, p) + t.delay(1, p)).abs() < 1e-15);
                }
            }
        }
    }
}
