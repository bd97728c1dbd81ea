use std::collections::BTreeSet;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::ingest::DrEvent;
use crate::series::HourlySeries;

/// Hours of a user's series split by their role relative to DR events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverSplit {
    /// The input series with event and spillover hours turned into gaps.
    pub training: HourlySeries,
    /// Every hour covered by an event.
    pub dr_hours: BTreeSet<NaiveDateTime>,
    /// Post-event hours withheld from both training and evaluation.
    pub removed: BTreeSet<NaiveDateTime>,
}

impl SpilloverSplit {
    pub fn is_clean(&self, ts: NaiveDateTime) -> bool {
        !self.dr_hours.contains(&ts) && !self.removed.contains(&ts)
    }
}

/// Withholds the `spillover_hours` hours after each event's last hour.
pub fn remove_spillover(
    series: &HourlySeries,
    events: &[DrEvent],
    spillover_hours: u32,
) -> SpilloverSplit {
    let dr_hours: BTreeSet<NaiveDateTime> = events.iter().flat_map(DrEvent::hours).collect();
    let removed: BTreeSet<NaiveDateTime> = events
        .iter()
        .flat_map(|e| {
            let last = e.last_hour();
            (1..=spillover_hours as i64).map(move |h| last + Duration::hours(h))
        })
        .filter(|ts| !dr_hours.contains(ts))
        .collect();
    let training = series.mask(dr_hours.iter().chain(&removed));
    SpilloverSplit {
        training,
        dr_hours,
        removed,
    }
}
