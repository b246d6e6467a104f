//! One-dimensional interpolants over strictly increasing knots.
//!
//! Three flavours are used by the pipeline: piecewise linear (synthetic-curve
//! resampling), shape-preserving cubic Hermite with Fritsch–Carlson slope
//! limiting (laboratory data preprocessing), and natural cubic splines
//! (sparse field data). All are exact at the knots; evaluation outside the
//! knot span extends the boundary segment's polynomial, and callers that must
//! not extrapolate are expected to guard the range themselves.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("need at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("x and y lengths differ ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("knot positions must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("knot data must be finite (index {0})")]
    NonFinite(usize),
}

fn check_knots(x: &[f64], y: &[f64]) -> Result<(), InterpError> {
    if x.len() != y.len() {
        return Err(InterpError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(InterpError::TooFewKnots(x.len()));
    }
    for i in 0..x.len() {
        if !x[i].is_finite() || !y[i].is_finite() {
            return Err(InterpError::NonFinite(i));
        }
        if i > 0 && x[i] <= x[i - 1] {
            return Err(InterpError::NotIncreasing(i));
        }
    }
    Ok(())
}

/// Index of the segment containing `xq`, clamped to the boundary segments.
fn segment(x: &[f64], xq: f64) -> usize {
    if xq <= x[0] {
        0
    } else if xq >= x[x.len() - 1] {
        x.len() - 2
    } else {
        x.partition_point(|&xi| xi <= xq) - 1
    }
}

/// Returns y[k] when xq lands bit-exactly on knot k.
fn exact_knot(x: &[f64], y: &[f64], xq: f64) -> Option<f64> {
    x.binary_search_by(|xi| xi.partial_cmp(&xq).unwrap())
        .ok()
        .map(|k| y[k])
}

/// Piecewise-linear interpolant.
#[derive(Debug, Clone)]
pub struct Linear {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Linear {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self, InterpError> {
        check_knots(x, y)?;
        Ok(Self { x: x.to_vec(), y: y.to_vec() })
    }

    pub fn eval(&self, xq: f64) -> f64 {
        if let Some(v) = exact_knot(&self.x, &self.y, xq) {
            return v;
        }
        let k = segment(&self.x, xq);
        let t = (xq - self.x[k]) / (self.x[k + 1] - self.x[k]);
        self.y[k] + t * (self.y[k + 1] - self.y[k])
    }
}

/// Shape-preserving piecewise cubic Hermite interpolant.
///
/// Node slopes follow the Fritsch–Carlson construction: a weighted harmonic
/// mean of adjacent secants in the interior (zero across sign changes or flat
/// segments) and limited one-sided three-point estimates at the ends. The
/// resulting curve never leaves the value range of the bracketing knot pair.
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self, InterpError> {
        check_knots(x, y)?;
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = y
            .windows(2)
            .zip(&h)
            .map(|(w, hi)| (w[1] - w[0]) / hi)
            .collect();

        let mut d = vec![0.0; n];
        for k in 1..n - 1 {
            let (s1, s2) = (delta[k - 1], delta[k]);
            if s1 == 0.0 || s2 == 0.0 || s1.signum() != s2.signum() {
                d[k] = 0.0;
            } else {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / s1 + w2 / s2);
            }
        }
        d[0] = if n == 2 {
            delta[0]
        } else {
            Self::end_slope(h[0], h[1], delta[0], delta[1])
        };
        d[n - 1] = if n == 2 {
            delta[0]
        } else {
            Self::end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3])
        };

        Ok(Self { x: x.to_vec(), y: y.to_vec(), d })
    }

    /// Non-centered three-point end slope with the standard limiter.
    fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
        let mut d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
        if d.signum() != s0.signum() {
            d = 0.0;
        } else if s0.signum() != s1.signum() && d.abs() > 3.0 * s0.abs() {
            d = 3.0 * s0;
        }
        d
    }

    pub fn eval(&self, xq: f64) -> f64 {
        if let Some(v) = exact_knot(&self.x, &self.y, xq) {
            return v;
        }
        let k = segment(&self.x, xq);
        let h = self.x[k + 1] - self.x[k];
        let t = (xq - self.x[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

/// Natural cubic spline (second derivative zero at both ends).
#[derive(Debug, Clone)]
pub struct NaturalCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>, // second derivatives at the knots
}

impl NaturalCubic {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self, InterpError> {
        check_knots(x, y)?;
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior tridiagonal system.
            let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
            }
            for i in 1..k {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * h[i];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (1..k).rev() {
                m[i] = (rhs[i - 1] - h[i] * m[i + 1]) / diag[i - 1];
            }
        }
        Ok(Self { x: x.to_vec(), y: y.to_vec(), m })
    }

    pub fn eval(&self, xq: f64) -> f64 {
        if let Some(v) = exact_knot(&self.x, &self.y, xq) {
            return v;
        }
        let k = segment(&self.x, xq);
        let h = self.x[k + 1] - self.x[k];
        let a = self.x[k + 1] - xq;
        let b = xq - self.x[k];
        self.m[k] * a * a * a / (6.0 * h)
            + self.m[k + 1] * b * b * b / (6.0 * h)
            + (self.y[k] / h - self.m[k] * h / 6.0) * a
            + (self.y[k + 1] / h - self.m[k + 1] * h / 6.0) * b
    }
}
