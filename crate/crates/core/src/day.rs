use core::fmt;

/// A calendar day, counted from 1970-01-01.
///
/// Conversion to and from ISO-8601 text lives in the IO crate; here days are
/// only ordered integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Day(pub i32);

impl Day {
    /// 2017-01-02, a Monday.
    pub const SYNTH_EPOCH: Day = Day(17168);

    pub fn next(self) -> Day {
        Day(self.0 + 1)
    }

    pub fn prev(self) -> Day {
        Day(self.0 - 1)
    }

    /// Monday = 0 .. Sunday = 6.
    pub fn weekday(self) -> u32 {
        (self.0 + 3).rem_euclid(7) as u32
    }

    pub fn is_weekend(self) -> bool {
        self.weekday() >= 5
    }

    /// The next Monday-to-Friday day strictly after `self`.
    pub fn next_weekday(self) -> Day {
        let mut d = self.next();
        while d.is_weekend() {
            d = d.next();
        }
        d
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "day#{}", self.0)
    }
}
