use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Coarse in-vehicle region a driver is looking at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GlanceClass {
    Road,
    CenterStack,
    InstrumentCluster,
    RearviewMirror,
    Left,
    Right,
}

impl GlanceClass {
    pub const ALL: [GlanceClass; 6] = [
        GlanceClass::Road,
        GlanceClass::CenterStack,
        GlanceClass::InstrumentCluster,
        GlanceClass::RearviewMirror,
        GlanceClass::Left,
        GlanceClass::Right,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Config(format!("glance class code {code} outside 0..6")))
    }

    pub fn name(self) -> &'static str {
        match self {
            GlanceClass::Road => "road",
            GlanceClass::CenterStack => "center_stack",
            GlanceClass::InstrumentCluster => "instrument_cluster",
            GlanceClass::RearviewMirror => "rearview_mirror",
            GlanceClass::Left => "left",
            GlanceClass::Right => "right",
        }
    }

    /// Canonical pupil direction `(dx, dy)`, image axes (y grows downward).
    pub fn gaze_code(self) -> (f64, f64) {
        match self {
            GlanceClass::Road => (0.0, 0.0),
            GlanceClass::CenterStack => (0.75, 0.75),
            GlanceClass::InstrumentCluster => (0.0, 0.75),
            GlanceClass::RearviewMirror => (0.7, -0.7),
            GlanceClass::Left => (-1.0, 0.0),
            GlanceClass::Right => (1.0, 0.0),
        }
    }

    /// Smallest distance between two gaze codes.
    pub fn min_code_distance() -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in Self::ALL.iter().enumerate() {
            for b in &Self::ALL[i + 1..] {
                let ((ax, ay), (bx, by)) = (a.gaze_code(), b.gaze_code());
                best = best.min((ax - bx).hypot(ay - by));
            }
        }
        best
    }

    /// Class whose gaze code is closest to `(dx, dy)`.
    pub fn nearest(dx: f64, dy: f64) -> Self {
        let dist = |c: &GlanceClass| {
            let (x, y) = c.gaze_code();
            (x - dx).hypot(y - dy)
        };
        *Self::ALL.iter().min_by(|a, b| dist(a).total_cmp(&dist(b))).expect("six classes")
    }
}

impl fmt::Display for GlanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GlanceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown glance class {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_and_names_are_bijective() {
        for (i, c) in GlanceClass::ALL.iter().enumerate() {
            assert_eq!(c.code() as usize, i);
            assert_eq!(GlanceClass::from_code(i as u8).unwrap(), *c);
            assert_eq!(c.name().parse::<GlanceClass>().unwrap(), *c);
        }
        assert!(GlanceClass::from_code(6).is_err());
    }

    #[test]
    fn road_is_the_origin_and_codes_are_separated() {
        assert_eq!(GlanceClass::Road.gaze_code(), (0.0, 0.0));
        assert!((GlanceClass::min_code_distance() - 0.75).abs() < 1e-12);
        for c in GlanceClass::ALL {
            let (x, y) = c.gaze_code();
            assert_eq!(GlanceClass::nearest(x, y), c);
        }
    }
}
