//! Concave flow-density laws and their convex transforms.
//!
//! Every link solver in the crate reduces to evaluating three things on a
//! diagram: the flux `Q(k)`, the right derivative `∂₊Q(k)` (characteristic
//! speed) and the convex transform `R(u) = sup_k (Q(k) - u·k)`. Congested
//! wave speeds are always stored signed (negative).

use thiserror::Error;

/// Relative slack applied to range checks on densities, speeds and flows.
pub(crate) const RANGE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FdError {
    #[error("density {value} veh/m outside [0, {k_jam}]")]
    DensityOutOfRange { value: f64, k_jam: f64 },
    #[error("speed {value} m/s outside [{w_min}, {v_max}]")]
    SpeedOutOfRange { value: f64, w_min: f64, v_max: f64 },
    #[error("invalid diagram parameter: {0}")]
    InvalidParameter(String),
    #[error("inconsistent triangular parameters: {0}")]
    Inconsistent(String),
}

fn slack(scale: f64) -> f64 {
    RANGE_SLACK * scale.abs().max(1.0)
}

/// Behaviour shared by every concave diagram on `[0, k_jam]` with
/// `Q(0) = Q(k_jam) = 0`.
///
/// The `*_at` methods are unchecked and clamp their argument into the
/// domain; the plain-named methods validate and return [`FdError`].
pub trait ConcaveFd {
    fn jam_density(&self) -> f64;
    /// Smallest density at which the capacity is reached.
    fn critical_density(&self) -> f64;
    fn capacity(&self) -> f64;
    /// `∂₊Q(0)`, the fastest forward characteristic.
    fn free_speed(&self) -> f64;
    /// `∂₊Q(k_jam)` (signed, negative), the fastest backward characteristic.
    fn backward_speed(&self) -> f64;

    fn flux_at(&self, k: f64) -> f64;
    fn conjugate_at(&self, u: f64) -> f64;
    /// Right derivative of the flux.
    fn speed_at(&self, k: f64) -> f64;
    /// `inf { ρ : Q(ρ) = q }`, with `q` clamped into `[0, q_max]`.
    fn free_density_for(&self, q: f64) -> f64;
    /// `sup { ρ : Q(ρ) = q }`, with `q` clamped into `[0, q_max]`.
    fn congested_density_for(&self, q: f64) -> f64;

    fn check_density(&self, k: f64) -> Result<f64, FdError> {
        let k_jam = self.jam_density();
        if !k.is_finite() || k < -slack(k_jam) || k > k_jam + slack(k_jam) {
            return Err(FdError::DensityOutOfRange { value: k, k_jam });
        }
        Ok(k.clamp(0.0, k_jam))
    }

    fn check_speed(&self, u: f64) -> Result<f64, FdError> {
        let (w_min, v_max) = (self.backward_speed(), self.free_speed());
        let s = slack(v_max.max(-w_min));
        if !u.is_finite() || u < w_min - s || u > v_max + s {
            return Err(FdError::SpeedOutOfRange { value: u, w_min, v_max });
        }
        Ok(u.clamp(w_min, v_max))
    }

    fn flux(&self, k: f64) -> Result<f64, FdError> {
        Ok(self.flux_at(self.check_density(k)?))
    }

    fn conjugate(&self, u: f64) -> Result<f64, FdError> {
        Ok(self.conjugate_at(self.check_speed(u)?))
    }

    fn characteristic_speed(&self, k: f64) -> Result<f64, FdError> {
        Ok(self.speed_at(self.check_density(k)?))
    }

    /// Lebacque demand and supply at density `k`.
    fn demand_supply(&self, k: f64) -> Result<(f64, f64), FdError> {
        let k = self.check_density(k)?;
        Ok(self.demand_supply_at(k))
    }

    fn demand_supply_at(&self, k: f64) -> (f64, f64) {
        let q_max = self.capacity();
        if k <= self.critical_density() {
            (self.flux_at(k), q_max)
        } else {
            (q_max, self.flux_at(k))
        }
    }
}

/// Triangular diagram: free branch `v·k`, congested branch `w·(k - k_jam)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularFd {
    v_free: f64,
    w_cong: f64,
    k_crit: f64,
    k_jam: f64,
    q_max: f64,
}

impl TriangularFd {
    /// Builds from all five parameters and rejects any inconsistency above
    /// `1e-12` relative.
    pub fn new(v_free: f64, w_cong: f64, k_crit: f64, k_jam: f64, q_max: f64) -> Result<Self, FdError> {
        let w_cong = normalize_congested_speed(w_cong)?;
        check_positive("v_free", v_free)?;
        check_positive("k_crit", k_crit)?;
        check_positive("q_max", q_max)?;
        if !(k_jam > k_crit) {
            return Err(FdError::InvalidParameter(format!(
                "k_jam ({k_jam}) must exceed k_crit ({k_crit})"
            )));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        if !close(q_max, v_free * k_crit) {
            return Err(FdError::Inconsistent(format!(
                "q_max = {q_max} but v_free * k_crit = {}",
                v_free * k_crit
            )));
        }
        if !close(q_max, w_cong * (k_crit - k_jam)) {
            return Err(FdError::Inconsistent(format!(
                "q_max = {q_max} but w_cong * (k_crit - k_jam) = {}",
                w_cong * (k_crit - k_jam)
            )));
        }
        Ok(Self { v_free, w_cong, k_crit, k_jam, q_max })
    }

    /// Free speed, congested speed (either sign) and jam density.
    pub fn from_speeds(v_free: f64, w_cong: f64, k_jam: f64) -> Result<Self, FdError> {
        check_positive("v_free", v_free)?;
        check_positive("k_jam", k_jam)?;
        let w_cong = normalize_congested_speed(w_cong)?;
        let k_crit = -w_cong * k_jam / (v_free - w_cong);
        Ok(Self { v_free, w_cong, k_crit, k_jam, q_max: v_free * k_crit })
    }

    pub fn from_capacity(v_free: f64, k_jam: f64, q_max: f64) -> Result<Self, FdError> {
        check_positive("v_free", v_free)?;
        check_positive("k_jam", k_jam)?;
        check_positive("q_max", q_max)?;
        let k_crit = q_max / v_free;
        if !(k_crit < k_jam) {
            return Err(FdError::InvalidParameter(format!(
                "q_max / v_free = {k_crit} must be below k_jam = {k_jam}"
            )));
        }
        let w_cong = -q_max / (k_jam - k_crit);
        Ok(Self { v_free, w_cong, k_crit, k_jam, q_max })
    }

    pub fn from_critical(v_free: f64, k_crit: f64, k_jam: f64) -> Result<Self, FdError> {
        check_positive("v_free", v_free)?;
        check_positive("k_crit", k_crit)?;
        if !(k_crit < k_jam) {
            return Err(FdError::InvalidParameter(format!(
                "k_crit ({k_crit}) must be below k_jam ({k_jam})"
            )));
        }
        let q_max = v_free * k_crit;
        Ok(Self { v_free, w_cong: -q_max / (k_jam - k_crit), k_crit, k_jam, q_max })
    }

    pub fn v_free(&self) -> f64 {
        self.v_free
    }

    /// Signed congested wave speed (negative).
    pub fn w_cong(&self) -> f64 {
        self.w_cong
    }

    pub fn k_crit(&self) -> f64 {
        self.k_crit
    }

    pub fn k_jam(&self) -> f64 {
        self.k_jam
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    /// Multi-lane diagram: densities and flows scale, speeds do not.
    pub fn scaled(&self, lanes: f64) -> Self {
        Self {
            k_crit: self.k_crit * lanes,
            k_jam: self.k_jam * lanes,
            q_max: self.q_max * lanes,
            ..*self
        }
    }
}

fn check_positive(name: &str, value: f64) -> Result<(), FdError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(FdError::InvalidParameter(format!("{name} must be positive and finite, got {value}")))
    }
}

/// Accepts a congested speed magnitude or a signed slope; returns the slope.
pub fn normalize_congested_speed(w: f64) -> Result<f64, FdError> {
    if !w.is_finite() || w == 0.0 {
        return Err(FdError::InvalidParameter(format!(
            "congested wave speed must be finite and non-zero, got {w}"
        )));
    }
    Ok(-w.abs())
}

impl ConcaveFd for TriangularFd {
    fn jam_density(&self) -> f64 {
        self.k_jam
    }

    fn critical_density(&self) -> f64 {
        self.k_crit
    }

    fn capacity(&self) -> f64 {
        self.q_max
    }

    fn free_speed(&self) -> f64 {
        self.v_free
    }

    fn backward_speed(&self) -> f64 {
        self.w_cong
    }

    fn flux_at(&self, k: f64) -> f64 {
        let k = k.clamp(0.0, self.k_jam);
        if k <= self.k_crit {
            self.v_free * k
        } else {
            self.w_cong * (k - self.k_jam)
        }
    }

    fn conjugate_at(&self, u: f64) -> f64 {
        self.k_crit * (self.v_free - u.clamp(self.w_cong, self.v_free))
    }

    fn speed_at(&self, k: f64) -> f64 {
        if k < self.k_crit {
            self.v_free
        } else {
            self.w_cong
        }
    }

    fn free_density_for(&self, q: f64) -> f64 {
        q.clamp(0.0, self.q_max) / self.v_free
    }

    fn congested_density_for(&self, q: f64) -> f64 {
        self.k_jam + q.clamp(0.0, self.q_max) / self.w_cong
    }
}

/// Parabolic diagram `Q(k) = v_free·k·(1 - k/k_jam)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenshieldsFd {
    v_free: f64,
    k_jam: f64,
}

impl GreenshieldsFd {
    pub fn new(v_free: f64, k_jam: f64) -> Result<Self, FdError> {
        check_positive("v_free", v_free)?;
        check_positive("k_jam", k_jam)?;
        Ok(Self { v_free, k_jam })
    }

    pub fn v_free(&self) -> f64 {
        self.v_free
    }

    pub fn k_jam(&self) -> f64 {
        self.k_jam
    }

    pub fn scaled(&self, lanes: f64) -> Self {
        Self { v_free: self.v_free, k_jam: self.k_jam * lanes }
    }

    fn discriminant(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, self.capacity());
        (1.0 - 4.0 * q / (self.v_free * self.k_jam)).max(0.0).sqrt()
    }
}

impl ConcaveFd for GreenshieldsFd {
    fn jam_density(&self) -> f64 {
        self.k_jam
    }

    fn critical_density(&self) -> f64 {
        0.5 * self.k_jam
    }

    fn capacity(&self) -> f64 {
        0.25 * self.v_free * self.k_jam
    }

    fn free_speed(&self) -> f64 {
        self.v_free
    }

    fn backward_speed(&self) -> f64 {
        -self.v_free
    }

    fn flux_at(&self, k: f64) -> f64 {
        let k = k.clamp(0.0, self.k_jam);
        self.v_free * k * (1.0 - k / self.k_jam)
    }

    fn conjugate_at(&self, u: f64) -> f64 {
        let d = self.v_free - u.clamp(-self.v_free, self.v_free);
        self.k_jam * d * d / (4.0 * self.v_free)
    }

    fn speed_at(&self, k: f64) -> f64 {
        self.v_free * (1.0 - 2.0 * k.clamp(0.0, self.k_jam) / self.k_jam)
    }

    fn free_density_for(&self, q: f64) -> f64 {
        // Rationalized form of k_jam/2·(1 - sqrt(1 - 4q/(v·k_jam))).
        let q = q.clamp(0.0, self.capacity());
        2.0 * q / (self.v_free * (1.0 + self.discriminant(q)))
    }

    fn congested_density_for(&self, q: f64) -> f64 {
        0.5 * self.k_jam * (1.0 + self.discriminant(q))
    }
}

/// Concave diagram given by breakpoints `(k, q)`, from `(0, 0)` to `(k_jam, 0)`.
/// Trapezoidal diagrams are expressed this way.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearFd {
    points: Vec<(f64, f64)>,
    slopes: Vec<f64>,
    peak: usize,
}

impl PiecewiseLinearFd {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, FdError> {
        if points.len() < 3 {
            return Err(FdError::InvalidParameter("a piecewise-linear diagram needs at least 3 breakpoints".into()));
        }
        if points.iter().any(|&(k, q)| !k.is_finite() || !q.is_finite() || q < 0.0) {
            return Err(FdError::InvalidParameter("breakpoints must be finite with nonnegative flow".into()));
        }
        let first = points[0];
        let last = points[points.len() - 1];
        if first != (0.0, 0.0) || last.1 != 0.0 {
            return Err(FdError::InvalidParameter(
                "breakpoints must start at (0, 0) and end at (k_jam, 0)".into(),
            ));
        }
        let mut slopes = Vec::with_capacity(points.len() - 1);
        for pair in points.windows(2) {
            let (k0, q0) = pair[0];
            let (k1, q1) = pair[1];
            if !(k1 > k0) {
                return Err(FdError::InvalidParameter("breakpoint densities must be strictly increasing".into()));
            }
            slopes.push((q1 - q0) / (k1 - k0));
        }
        for pair in slopes.windows(2) {
            if pair[1] > pair[0] + slack(pair[0]) {
                return Err(FdError::InvalidParameter(format!(
                    "slopes must be nonincreasing (concavity), found {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if !(slopes[0] > 0.0) || !(slopes[slopes.len() - 1] < 0.0) {
            return Err(FdError::InvalidParameter(
                "first segment must rise and last segment must fall".into(),
            ));
        }
        let q_max = points.iter().map(|p| p.1).fold(0.0, f64::max);
        let peak = points.iter().position(|p| p.1 == q_max).unwrap_or(0);
        Ok(Self { points, slopes, peak })
    }

    /// Triangular diagram re-expressed as three breakpoints.
    pub fn from_triangular(fd: &TriangularFd) -> Self {
        Self::new(vec![(0.0, 0.0), (fd.k_crit, fd.q_max), (fd.k_jam, 0.0)])
            .expect("triangular diagram is a valid piecewise-linear diagram")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn scaled(&self, lanes: f64) -> Self {
        let points = self.points.iter().map(|&(k, q)| (k * lanes, q * lanes)).collect();
        Self::new(points).expect("scaling preserves validity")
    }

    /// Segment index `m` with `k_m <= k < k_{m+1}` (last segment at `k_jam`).
    fn segment(&self, k: f64) -> usize {
        let i = self.points.partition_point(|p| p.0 <= k);
        i.saturating_sub(1).min(self.slopes.len() - 1)
    }
}

impl ConcaveFd for PiecewiseLinearFd {
    fn jam_density(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    fn critical_density(&self) -> f64 {
        self.points[self.peak].0
    }

    fn capacity(&self) -> f64 {
        self.points[self.peak].1
    }

    fn free_speed(&self) -> f64 {
        self.slopes[0]
    }

    fn backward_speed(&self) -> f64 {
        self.slopes[self.slopes.len() - 1]
    }

    fn flux_at(&self, k: f64) -> f64 {
        let k = k.clamp(0.0, self.jam_density());
        let m = self.segment(k);
        let (k0, q0) = self.points[m];
        q0 + self.slopes[m] * (k - k0)
    }

    fn conjugate_at(&self, u: f64) -> f64 {
        // The supremum of a concave piecewise-linear function minus a
        // linear one is attained at a breakpoint.
        self.points.iter().map(|&(k, q)| q - u * k).fold(f64::NEG_INFINITY, f64::max)
    }

    fn speed_at(&self, k: f64) -> f64 {
        self.slopes[self.segment(k.clamp(0.0, self.jam_density()))]
    }

    fn free_density_for(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, self.capacity());
        for m in 0..self.peak {
            let (k0, q0) = self.points[m];
            let q1 = self.points[m + 1].1;
            if q <= q1 {
                return if q1 > q0 { k0 + (q - q0) / self.slopes[m] } else { k0 };
            }
        }
        self.critical_density()
    }

    fn congested_density_for(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, self.capacity());
        for m in (self.peak..self.slopes.len()).rev() {
            let (_, q0) = self.points[m];
            let (k1, q1) = self.points[m + 1];
            if q <= q0 {
                return if q0 > q1 { k1 + (q - q1) / self.slopes[m] } else { k1 };
            }
        }
        self.critical_density()
    }
}

/// Any of the supported diagram families.
#[derive(Debug, Clone, PartialEq)]
pub enum FundamentalDiagram {
    Triangular(TriangularFd),
    Greenshields(GreenshieldsFd),
    PiecewiseLinear(PiecewiseLinearFd),
}

impl FundamentalDiagram {
    pub fn as_triangular(&self) -> Option<&TriangularFd> {
        match self {
            Self::Triangular(fd) => Some(fd),
            _ => None,
        }
    }

    pub fn scaled(&self, lanes: f64) -> Self {
        match self {
            Self::Triangular(fd) => Self::Triangular(fd.scaled(lanes)),
            Self::Greenshields(fd) => Self::Greenshields(fd.scaled(lanes)),
            Self::PiecewiseLinear(fd) => Self::PiecewiseLinear(fd.scaled(lanes)),
        }
    }
}

impl From<TriangularFd> for FundamentalDiagram {
    fn from(fd: TriangularFd) -> Self {
        Self::Triangular(fd)
    }
}

impl From<GreenshieldsFd> for FundamentalDiagram {
    fn from(fd: GreenshieldsFd) -> Self {
        Self::Greenshields(fd)
    }
}

impl From<PiecewiseLinearFd> for FundamentalDiagram {
    fn from(fd: PiecewiseLinearFd) -> Self {
        Self::PiecewiseLinear(fd)
    }
}

macro_rules! dispatch {
    ($self:ident, $fd:ident => $body:expr) => {
        match $self {
            FundamentalDiagram::Triangular($fd) => $body,
            FundamentalDiagram::Greenshields($fd) => $body,
            FundamentalDiagram::PiecewiseLinear($fd) => $body,
        }
    };
}

impl ConcaveFd for FundamentalDiagram {
    fn jam_density(&self) -> f64 {
        dispatch!(self, fd => fd.jam_density())
    }

    fn critical_density(&self) -> f64 {
        dispatch!(self, fd => fd.critical_density())
    }

    fn capacity(&self) -> f64 {
        dispatch!(self, fd => fd.capacity())
    }

    fn free_speed(&self) -> f64 {
        dispatch!(self, fd => fd.free_speed())
    }

    fn backward_speed(&self) -> f64 {
        dispatch!(self, fd => fd.backward_speed())
    }

    fn flux_at(&self, k: f64) -> f64 {
        dispatch!(self, fd => fd.flux_at(k))
    }

    fn conjugate_at(&self, u: f64) -> f64 {
        dispatch!(self, fd => fd.conjugate_at(u))
    }

    fn speed_at(&self, k: f64) -> f64 {
        dispatch!(self, fd => fd.speed_at(k))
    }

    fn free_density_for(&self, q: f64) -> f64 {
        dispatch!(self, fd => fd.free_density_for(q))
    }

    fn congested_density_for(&self, q: f64) -> f64 {
        dispatch!(self, fd => fd.congested_density_for(q))
    }
}
