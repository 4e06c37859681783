//! Rectangular observation windows, point patterns, and the geometric
//! quantities behind the edge corrections: window erosion for minus
//! sampling and translation-overlap volumes for the translation correction.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("window needs dim >= 1")]
    EmptyDimension,
    #[error("axis {axis}: bounds [{lo}, {hi}] are not a proper interval")]
    DegenerateAxis { axis: usize, lo: f64, hi: f64 },
    #[error("point {index} has {got} coordinates, window has dim {dim}")]
    DimensionMismatch { index: usize, got: usize, dim: usize },
    #[error("point {index} at {point:?} lies outside the window")]
    PointOutsideWindow { index: usize, point: Vec<f64> },
    #[error("duplicate point at index {index}: patterns must be simple")]
    DuplicatePoint { index: usize },
    #[error("{path}:{line}: parse error: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Axis-aligned rectangular window `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    bounds: Vec<(f64, f64)>,
}

impl Window {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, GeometryError> {
        if bounds.is_empty() {
            return Err(GeometryError::EmptyDimension);
        }
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(GeometryError::DegenerateAxis { axis, lo, hi });
            }
        }
        Ok(Self { bounds })
    }

    /// Square `[0, side]^dim`.
    pub fn square(side: f64, dim: usize) -> Result<Self, GeometryError> {
        Self::new(vec![(0.0, side); dim])
    }

    /// Unit square `[0, 1]^2`.
    pub fn unit_square() -> Self {
        Self::square(1.0, 2).expect("unit square is valid")
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn side(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        hi - lo
    }

    pub fn min_side(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(&self.bounds)
                .all(|(x, &(lo, hi))| *x >= lo && *x <= hi)
    }

    /// Distance from `point` to the window boundary; the largest `t` with
    /// `B(point, t)` still inside the window.
    pub fn boundary_distance(&self, point: &[f64]) -> f64 {
        point
            .iter()
            .zip(&self.bounds)
            .map(|(x, &(lo, hi))| (x - lo).min(hi - x))
            .fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for &(lo, hi) in &self.bounds {
            if !first {
                write!(f, " x ")?;
            }
            write!(f, "[{lo}, {hi}]")?;
            first = false;
        }
        Ok(())
    }
}

/// Lebesgue volume of the window.
pub fn volume(w: &Window) -> f64 {
    (0..w.dim()).map(|i| w.side(i)).product()
}

/// Erosion `W^(-t) = {x in W : B(x, t) in W}`: the rectangle shrunk by `t`
/// on every face. Returns `None` when some side collapses.
pub fn erode(w: &Window, t: f64) -> Option<Window> {
    assert!(t >= 0.0, "erosion distance must be nonnegative");
    let bounds: Vec<(f64, f64)> = w
        .bounds()
        .iter()
        .map(|&(lo, hi)| (lo + t, hi - t))
        .collect();
    if bounds.iter().all(|&(lo, hi)| hi > lo) {
        Some(Window { bounds })
    } else {
        None
    }
}

/// Volume of the eroded window, zero when the erosion is empty.
pub fn eroded_volume(w: &Window, t: f64) -> f64 {
    erode(w, t).map(|e| volume(&e)).unwrap_or(0.0)
}

/// Overlap volume `|W ∩ W^z|` between the window and its translate by `z`,
/// i.e. `prod_i max(0, side_i - |z_i|)`.
pub fn shift_overlap_volume(w: &Window, z: &[f64]) -> f64 {
    assert_eq!(z.len(), w.dim());
    (0..w.dim())
        .map(|i| (w.side(i) - z[i].abs()).max(0.0))
        .product()
}

/// A simple point pattern observed in a rectangular window.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    window: Window,
    points: Vec<Vec<f64>>,
}

impl PointPattern {
    /// Builds a pattern, checking containment, dimensions and simplicity.
    pub fn new(window: Window, points: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        let dim = window.dim();
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(GeometryError::DimensionMismatch {
                    index,
                    got: p.len(),
                    dim,
                });
            }
            if !window.contains(p) {
                return Err(GeometryError::PointOutsideWindow {
                    index,
                    point: p.clone(),
                });
            }
        }
        // O(n^2) simplicity check is fine at the pattern sizes handled here.
        for i in 1..points.len() {
            if points[..i].iter().any(|q| q == &points[i]) {
                return Err(GeometryError::DuplicatePoint { index: i });
            }
        }
        Ok(Self { window, points })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Translates the pattern and its window by `shift`.
    pub fn translate(&self, shift: &[f64]) -> PointPattern {
        assert_eq!(shift.len(), self.window.dim());
        let bounds = self
            .window
            .bounds()
            .iter()
            .zip(shift)
            .map(|(&(lo, hi), s)| (lo + s, hi + s))
            .collect();
        let points = self
            .points
            .iter()
            .map(|p| p.iter().zip(shift).map(|(x, s)| x + s).collect())
            .collect();
        PointPattern {
            window: Window { bounds },
            points,
        }
    }
}

/// Reads a pattern file: `window lo1 hi1 ... lod hid` header, one point per
/// line, `#` comments ignored.
pub fn read_pattern(path: impl AsRef<Path>) -> Result<PointPattern, GeometryError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: pstr.clone(),
        source,
    })?;
    let mut window: Option<Window> = None;
    let mut points = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |path: &str, msg: String| GeometryError::Parse {
            path: path.to_string(),
            line: lineno,
            msg,
        };
        if window.is_none() {
            let mut tokens = line.split_whitespace();
            if tokens.next() != Some("window") {
                return Err(parse(&pstr, "expected `window <lo> <hi> ...` header".into()));
            }
            let vals: Result<Vec<f64>, _> = tokens.map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| parse(&pstr, format!("bad window bound: {e}")))?;
            if vals.is_empty() || vals.len() % 2 != 0 {
                return Err(parse(&pstr, "window header needs an even, positive number of bounds".into()));
            }
            let bounds: Vec<(f64, f64)> = vals.chunks(2).map(|c| (c[0], c[1])).collect();
            window = Some(Window::new(bounds).map_err(|e| parse(&pstr, e.to_string()))?);
        } else {
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| parse(&pstr, format!("bad coordinate: {e}")))?;
            let w = window.as_ref().unwrap();
            if vals.len() != w.dim() {
                return Err(parse(
                    &pstr,
                    format!("expected {} coordinates, found {}", w.dim(), vals.len()),
                ));
            }
            if !w.contains(&vals) {
                return Err(GeometryError::PointOutsideWindow {
                    index: points.len(),
                    point: vals,
                });
            }
            points.push(vals);
        }
    }
    let window = window.ok_or_else(|| GeometryError::Parse {
        path: pstr.clone(),
        line: 0,
        msg: "missing window header".into(),
    })?;
    PointPattern::new(window, points)
}

/// Writes a pattern in the plain-text format accepted by [`read_pattern`].
/// Coordinates are written with 17 significant digits so a round trip is
/// exact.
pub fn write_pattern(p: &PointPattern, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let io = |source| GeometryError::Io {
        path: pstr.clone(),
        source,
    };
    let mut out = String::new();
    out.push_str("window");
    for &(lo, hi) in p.window().bounds() {
        out.push_str(&format!(" {lo:.17e} {hi:.17e}"));
    }
    out.push('\n');
    for point in p.points() {
        let coords: Vec<String> = point.iter().map(|x| format!("{x:.17e}")).collect();
        out.push_str(&coords.join(" "));
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(out.as_bytes()).map_err(|source| GeometryError::Io {
        path: pstr.clone(),
        source,
    })
}

/// Squared Euclidean distance between two points.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
