//! Array geometries, steering vectors and the off-grid dictionaries.
//!
//! Element positions are expressed in half-wavelength units, so element `n`
//! of the steering vector is `exp(j * pi * p_n * sin(theta))`. All public
//! angles are degrees; the angular derivative is taken with respect to
//! radians, which is the variable the first-order expansion
//! `a(theta) ~ a(theta_m) + b(theta_m) * (theta - theta_m)` is written in.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// 18-element sparse array used for training and evaluation.
pub const SLA18: [f64; 18] = [
    0.0, 1.0, 2.0, 3.0, 4.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0, 18.0,
    19.0,
];

/// 10-element sparse array spanning the same aperture as [`SLA18`].
pub const SLA10: [f64; 10] = [0.0, 3.0, 4.0, 5.0, 6.0, 7.0, 11.0, 16.0, 18.0, 19.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    positions: Vec<f64>,
    name: Option<String>,
}

impl ArrayGeometry {
    /// Validates an explicit list of positions (half-wavelength units).
    pub fn new(positions: Vec<f64>, name: Option<String>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::Geometry(format!(
                "need at least 2 elements, got {}",
                positions.len()
            )));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::Geometry("positions must be finite".into()));
        }
        if positions[0] != 0.0 {
            return Err(Error::Geometry(format!(
                "first position must be 0, got {}",
                positions[0]
            )));
        }
        if let Some(w) = positions.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Geometry(format!(
                "positions must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { positions, name })
    }

    pub fn sla18() -> Self {
        Self::new(SLA18.to_vec(), Some("sla18".into())).expect("valid preset")
    }

    pub fn sla10() -> Self {
        Self::new(SLA10.to_vec(), Some("sla10".into())).expect("valid preset")
    }

    pub fn ula(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i as f64).collect(), Some(format!("ula:{n}")))
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    /// Number of elements N.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

impl fmt::Display for ArrayGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.name {
            Some(name) => f.write_str(name),
            None => {
                let parts: Vec<String> = self.positions.iter().map(|p| p.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

/// Accepts `sla18`, `sla10`, `ula:<N>` or a comma-separated position list.
impl FromStr for ArrayGeometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "sla18" => return Ok(Self::sla18()),
            "sla10" => return Ok(Self::sla10()),
            _ => {}
        }
        if let Some(n) = s.strip_prefix("ula:").or_else(|| s.strip_prefix("ULA:")) {
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| Error::Geometry(format!("bad ULA size `{n}`")))?;
            return Self::ula(n);
        }
        let positions = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Geometry(format!("bad position `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(positions, None)
    }
}

/// Equispaced angular grid in degrees; `step_deg` is the grid interval r.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub fov_min_deg: f64,
    pub fov_max_deg: f64,
    pub step_deg: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            fov_min_deg: -60.0,
            fov_max_deg: 60.0,
            step_deg: 2.0,
        }
    }
}

impl GridSpec {
    pub fn new(fov_min_deg: f64, fov_max_deg: f64, step_deg: f64) -> Result<Self> {
        let grid = Self {
            fov_min_deg,
            fov_max_deg,
            step_deg,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// The full-hemisphere grid: [-90, 90] with 2 degree steps (91 points).
    pub fn full_hemisphere() -> Self {
        Self {
            fov_min_deg: -90.0,
            fov_max_deg: 90.0,
            step_deg: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_min_deg.is_finite() && self.fov_max_deg.is_finite()) {
            return Err(Error::Grid("field of view must be finite".into()));
        }
        if self.fov_min_deg >= self.fov_max_deg {
            return Err(Error::Grid(format!(
                "fov_min {} must be below fov_max {}",
                self.fov_min_deg, self.fov_max_deg
            )));
        }
        if !(self.step_deg > 0.0 && self.step_deg.is_finite()) {
            return Err(Error::Grid(format!("step must be positive, got {}", self.step_deg)));
        }
        if self.fov_min_deg < -90.0 || self.fov_max_deg > 90.0 {
            return Err(Error::Grid("field of view must lie within [-90, 90]".into()));
        }
        Ok(())
    }

    /// Number of grid points M.
    pub fn len(&self) -> usize {
        let span = (self.fov_max_deg - self.fov_min_deg) / self.step_deg;
        (span + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, m: usize) -> f64 {
        self.fov_min_deg + m as f64 * self.step_deg
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.point(m)).collect()
    }

    pub fn half_step(&self) -> f64 {
        0.5 * self.step_deg
    }

    /// Index of the grid point nearest to `theta_deg`, or `None` outside the
    /// field of view.
    pub fn nearest_index(&self, theta_deg: f64) -> Option<usize> {
        if !(self.fov_min_deg..=self.fov_max_deg).contains(&theta_deg) {
            return None;
        }
        let m = ((theta_deg - self.fov_min_deg) / self.step_deg).round() as usize;
        Some(m.min(self.len() - 1))
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.fov_min_deg, self.step_deg, self.fov_max_deg)
    }
}

/// Parses `min:step:max` (degrees).
impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Grid(format!("expected min:step:max, got `{s}`")));
        }
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Grid(format!("bad number `{t}`")))
        };
        Self::new(parse(parts[0])?, parse(parts[2])?, parse(parts[1])?)
    }
}

fn check_angle(theta_deg: f64) -> Result<()> {
    if theta_deg.is_nan() || theta_deg.abs() > 90.0 {
        return Err(Error::AngleOutOfRange(theta_deg));
    }
    Ok(())
}

// cos(theta) is evaluated as sin(90 - |theta|) so that it vanishes exactly at
// the endfire angles.
fn sin_cos_deg(theta_deg: f64) -> (f64, f64) {
    let s = theta_deg.to_radians().sin();
    let c = (90.0 - theta_deg.abs()).to_radians().sin();
    (s, c)
}

/// Steering vector `a(theta)` for `theta` in degrees.
pub fn steering_vector(geom: &ArrayGeometry, theta_deg: f64) -> Result<DVector<C64>> {
    check_angle(theta_deg)?;
    let (s, _) = sin_cos_deg(theta_deg);
    Ok(DVector::from_iterator(
        geom.len(),
        geom.positions.iter().map(|&p| C64::from_polar(1.0, PI * p * s)),
    ))
}

/// Derivative `da/dtheta` (per radian) at `theta` in degrees.
pub fn steering_derivative(geom: &ArrayGeometry, theta_deg: f64) -> Result<DVector<C64>> {
    check_angle(theta_deg)?;
    let (s, c) = sin_cos_deg(theta_deg);
    Ok(DVector::from_iterator(
        geom.len(),
        geom.positions.iter().map(|&p| {
            let a = C64::from_polar(1.0, PI * p * s);
            C64::new(0.0, PI * p * c) * a
        }),
    ))
}

/// On-grid dictionary `A` and derivative dictionary `B` over a fixed grid.
#[derive(Debug, Clone)]
pub struct DictionaryPair {
    pub a: DMatrix<C64>,
    pub b: DMatrix<C64>,
    pub grid: GridSpec,
    pub geometry: ArrayGeometry,
}

impl DictionaryPair {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.ncols()
    }
}

pub fn build_dictionary(geom: &ArrayGeometry, grid: &GridSpec) -> Result<DictionaryPair> {
    grid.validate()?;
    let points = grid.points();
    let n = geom.len();
    let mut a = DMatrix::zeros(n, points.len());
    let mut b = DMatrix::zeros(n, points.len());
    for (m, &theta) in points.iter().enumerate() {
        a.set_column(m, &steering_vector(geom, theta)?);
        b.set_column(m, &steering_derivative(geom, theta)?);
    }
    Ok(DictionaryPair {
        a,
        b,
        grid: *grid,
        geometry: geom.clone(),
    })
}

/// `C(beta) = A + B diag(beta)`, with `beta` in degrees.
pub fn effective_dictionary(dict: &DictionaryPair, beta_deg: &[f64]) -> Result<DMatrix<C64>> {
    if beta_deg.len() != dict.m() {
        return Err(Error::Dimension(format!(
            "beta has length {}, dictionary has {} columns",
            beta_deg.len(),
            dict.m()
        )));
    }
    let half = dict.grid.half_step();
    let mut c = dict.a.clone();
    for (m, &beta) in beta_deg.iter().enumerate() {
        if !(beta.abs() <= half * (1.0 + 1e-12)) {
            return Err(Error::GapOutOfRange {
                index: m,
                value: beta,
                half_step: half,
            });
        }
        if beta != 0.0 {
            let scale = C64::new(beta.to_radians(), 0.0);
            let mut col = c.column_mut(m);
            col += dict.b.column(m) * scale;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn presets_and_parsing() {
        let g: ArrayGeometry = "sla10".parse().unwrap();
        assert_eq!(g.positions(), &[0.0, 3.0, 4.0, 5.0, 6.0, 7.0, 11.0, 16.0, 18.0, 19.0]);
        assert_eq!("sla18".parse::<ArrayGeometry>().unwrap().len(), 18);
        let u: ArrayGeometry = "ula:4".parse().unwrap();
        assert_eq!(u.positions(), &[0.0, 1.0, 2.0, 3.0]);
        let e: ArrayGeometry = "0,2,5".parse().unwrap();
        assert_eq!(e.len(), 3);
    }

    #[test]
    fn geometry_errors() {
        assert!(ArrayGeometry::new(vec![0.0, 2.0, 2.0], None).is_err());
        assert!(ArrayGeometry::new(vec![0.0, 3.0, 1.0], None).is_err());
        assert!(ArrayGeometry::new(vec![1.0, 2.0], None).is_err());
        assert!(ArrayGeometry::new(vec![0.0], None).is_err());
        assert!("ula:1".parse::<ArrayGeometry>().is_err());
        assert!("0,x".parse::<ArrayGeometry>().is_err());
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(GridSpec::default().len(), 61);
        assert_eq!(GridSpec::full_hemisphere().len(), 91);
        let g: GridSpec = "-90:90:90".parse().unwrap();
        assert_eq!(g.points(), vec![-90.0, 0.0, 90.0]);
        // not an integer multiple: last point stays inside the field of view
        let g = GridSpec::new(0.0, 5.0, 2.0).unwrap();
        assert_eq!(g.points(), vec![0.0, 2.0, 4.0]);
        assert!(GridSpec::new(1.0, 1.0, 1.0).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0).is_err());
        assert!(GridSpec::new(-100.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn nearest_index() {
        let g = GridSpec::default();
        assert_eq!(g.point(g.nearest_index(20.56).unwrap()), 20.0);
        assert_eq!(g.point(g.nearest_index(-10.28).unwrap()), -10.0);
        assert_eq!(g.nearest_index(60.5), None);
    }

    #[test]
    fn steering_examples() {
        let sla10 = ArrayGeometry::sla10();
        let a0 = steering_vector(&sla10, 0.0).unwrap();
        assert!(a0.iter().all(|&z| z == C64::new(1.0, 0.0)));

        let ula2 = ArrayGeometry::ula(2).unwrap();
        let a = steering_vector(&ula2, 30.0).unwrap();
        assert_eq!(a[0], C64::new(1.0, 0.0));
        assert!(close(a[1], C64::new(0.0, 1.0), 1e-12));

        let a = steering_vector(&sla10, 30.0).unwrap();
        assert!(close(a[1], C64::new(0.0, -1.0), 1e-12));
        assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));

        assert!(steering_vector(&sla10, 90.5).is_err());
        assert!(steering_derivative(&sla10, -91.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        let sla18 = ArrayGeometry::sla18();
        let b = steering_derivative(&sla18, 90.0).unwrap();
        assert!(b.iter().all(|z| *z == C64::new(0.0, 0.0)));

        let ula2 = ArrayGeometry::ula(2).unwrap();
        let b = steering_derivative(&ula2, 0.0).unwrap();
        assert_eq!(b[0], C64::new(0.0, 0.0));
        assert!(close(b[1], C64::new(0.0, PI), 1e-15));

        let b = steering_derivative(&sla18, 37.0).unwrap();
        for (z, p) in b.iter().zip(sla18.positions()) {
            let expected = PI * p * 37f64.to_radians().cos();
            assert!((z.norm() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let geom = ArrayGeometry::sla18();
        let h = 1e-6_f64;
        for &theta in &[-58.0, -10.28, 0.0, 20.56, 45.0] {
            let b = steering_derivative(&geom, theta).unwrap();
            let hd = h.to_degrees();
            let fd = (steering_vector(&geom, theta + hd).unwrap()
                - steering_vector(&geom, theta - hd).unwrap())
                / C64::new(2.0 * h, 0.0);
            let rel = (&fd - &b).norm() / b.norm();
            assert!(rel < 1e-6, "theta {theta}: rel {rel}");
        }
    }

    #[test]
    fn dictionary_shapes_and_columns() {
        let d = build_dictionary(&ArrayGeometry::sla18(), &GridSpec::default()).unwrap();
        assert_eq!((d.a.nrows(), d.a.ncols()), (18, 61));
        assert!(d.a.row(0).iter().all(|&z| z == C64::new(1.0, 0.0)));
        assert!(d.b.row(0).iter().all(|&z| z == C64::new(0.0, 0.0)));
        assert!(d.a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        for (m, theta) in d.grid.points().into_iter().enumerate() {
            assert_eq!(d.a.column(m), steering_vector(&d.geometry, theta).unwrap());
            assert_eq!(d.b.column(m), steering_derivative(&d.geometry, theta).unwrap());
        }

        let g: GridSpec = "-90:90:90".parse().unwrap();
        let d = build_dictionary(&ArrayGeometry::ula(2).unwrap(), &g).unwrap();
        assert_eq!((d.a.nrows(), d.a.ncols()), (2, 3));
        assert!(d.a.column(1).iter().all(|&z| z == C64::new(1.0, 0.0)));
    }

    #[test]
    fn effective_dictionary_cases() {
        let d = build_dictionary(&ArrayGeometry::sla10(), &GridSpec::default()).unwrap();
        let zero = vec![0.0; d.m()];
        assert_eq!(effective_dictionary(&d, &zero).unwrap(), d.a);

        let mut beta = vec![0.0; d.m()];
        beta[3] = 1.0;
        beta[40] = -0.37;
        let c = effective_dictionary(&d, &beta).unwrap();
        for m in 0..d.m() {
            for n in 0..d.n() {
                let expected = d.a[(n, m)] + d.b[(n, m)] * beta[m].to_radians();
                assert!(close(c[(n, m)], expected, 1e-15));
            }
        }

        beta[5] = 1.01;
        assert!(matches!(
            effective_dictionary(&d, &beta),
            Err(Error::GapOutOfRange { index: 5, .. })
        ));
        assert!(effective_dictionary(&d, &[0.0; 3]).is_err());
    }

    #[test]
    fn single_column_expansion() {
        let g = GridSpec::new(10.0, 11.0, 2.0).unwrap();
        let geom = ArrayGeometry::sla10();
        let d = build_dictionary(&geom, &g).unwrap();
        assert_eq!(d.m(), 1);
        let c = effective_dictionary(&d, &[1.0]).unwrap();
        let a = steering_vector(&geom, 10.0).unwrap();
        let b = steering_derivative(&geom, 10.0).unwrap();
        let expected = a + b * C64::new(1f64.to_radians(), 0.0);
        assert!((c.column(0) - expected).norm() < 1e-14);
    }
}
