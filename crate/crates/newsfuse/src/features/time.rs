use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// UTC calendar decomposition of an epoch-seconds timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeFeatures {
    pub minute: u32,
    pub hour: u32,
    pub day: u32,
    pub month: u32,
    pub year: i32,
    /// 0 = Monday .. 6 = Sunday.
    pub weekday: u32,
    pub is_weekend: u8,
}

impl TimeFeatures {
    pub fn as_values(&self) -> [f64; 7] {
        [
            f64::from(self.minute),
            f64::from(self.hour),
            f64::from(self.day),
            f64::from(self.month),
            f64::from(self.year),
            f64::from(self.weekday),
            f64::from(self.is_weekend),
        ]
    }
}

/// Decode epoch-seconds into calendar fields (UTC). Saturday and Sunday count
/// as the weekend.
pub fn decode_timestamp(ts: i64) -> Result<TimeFeatures> {
    if ts < 0 {
        return Err(Error::Data(format!("negative timestamp {ts}")));
    }
    let dt = DateTime::from_timestamp(ts, 0)
        .ok_or_else(|| Error::Data(format!("timestamp {ts} out of range")))?;
    let weekday = dt.weekday().num_days_from_monday();
    Ok(TimeFeatures {
        minute: dt.minute(),
        hour: dt.hour(),
        day: dt.day(),
        month: dt.month(),
        year: dt.year(),
        weekday,
        is_weekend: u8::from(weekday >= 5),
    })
}
