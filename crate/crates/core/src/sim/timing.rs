use crate::error::{invalid, Result};

/// Per-row capture time relative to the middle scanline, in frame intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeOffsetMap {
    offsets: Vec<f64>,
    readout_ratio: f64,
    shift: f64,
}

impl TimeOffsetMap {
    pub fn new(height: usize, readout_ratio: f64) -> Result<Self> {
        if height == 0 {
            return invalid("time offset map needs at least one row");
        }
        if !(0.0..=1.0).contains(&readout_ratio) {
            return invalid(format!("readout ratio {readout_ratio} outside [0,1]"));
        }
        let offsets = if height == 1 {
            vec![0.0]
        } else {
            // integer numerator keeps offsets[i] == -offsets[H-1-i] exactly
            let k = readout_ratio / (2.0 * (height - 1) as f64);
            (0..height)
                .map(|i| (2.0 * i as f64 - (height - 1) as f64) * k)
                .collect()
        };
        Ok(Self {
            offsets,
            readout_ratio,
            shift: 0.0,
        })
    }

    /// Offsets measured from a reference `delta` intervals earlier: row `i`
    /// of the frame captured `delta` intervals after the reference.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            offsets: self.offsets.iter().map(|o| o + delta).collect(),
            readout_ratio: self.readout_ratio,
            shift: self.shift + delta,
        }
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    #[inline]
    pub fn offset(&self, row: usize) -> f64 {
        self.offsets[row]
    }

    pub fn height(&self) -> usize {
        self.offsets.len()
    }

    pub fn readout_ratio(&self) -> f64 {
        self.readout_ratio
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Offset at a fractional row, linear in the row coordinate.
    pub fn offset_at(&self, row: f64) -> f64 {
        let h = self.offsets.len();
        if h == 1 {
            return self.shift;
        }
        (row - (h - 1) as f64 / 2.0) * self.readout_ratio / (h - 1) as f64 + self.shift
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn middle_row_is_zero_and_span_is_ratio() {
        let t = TimeOffsetMap::new(65, 0.5).unwrap();
        assert_eq!(t.offset(32), 0.0);
        assert_eq!(t.offset(0), -0.25);
        assert_eq!(t.offset(64), 0.25);
        assert!(TimeOffsetMap::new(4, 1.5).is_err());
        assert!(TimeOffsetMap::new(0, 0.5).is_err());
        assert_eq!(TimeOffsetMap::new(1, 0.8).unwrap().offsets(), &[0.0]);
    }

    #[test]
    fn fractional_offset_agrees_with_rows() {
        let t = TimeOffsetMap::new(20, 0.8).unwrap().shifted(-1.0);
        for i in 0..20 {
            assert!((t.offset_at(i as f64) - t.offset(i)).abs() < 1e-14);
        }
    }

    proptest::proptest! {
        #[test]
        fn antisymmetric_and_increasing(h in 2usize..300, s in 0.0f64..=1.0) {
            let t = TimeOffsetMap::new(h, s).unwrap();
            for i in 0..h {
                proptest::prop_assert_eq!(t.offset(i), -t.offset(h - 1 - i));
                if s > 0.0 && i + 1 < h {
                    proptest::prop_assert!(t.offset(i + 1) > t.offset(i));
                }
            }
        }
    }
}
