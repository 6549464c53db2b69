//! Flow analyzer: wakes up on high occupancy and picks long-lived rules.

use serde::Serialize;

use crate::flowtable::TableSnapshot;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Analysis {
    Inactive {
        occupancy: f64,
    },
    /// Indices into the snapshot of rules older than the duration threshold.
    Active {
        occupancy: f64,
        suspicious: Vec<usize>,
    },
}

impl Analysis {
    pub fn is_active(&self) -> bool {
        matches!(self, Analysis::Active { .. })
    }

    pub fn suspicious(&self) -> &[usize] {
        match self {
            Analysis::Active { suspicious, .. } => suspicious,
            Analysis::Inactive { .. } => &[],
        }
    }
}

/// `occupancy_threshold` is a fraction of capacity.
pub fn analyze_table(
    snapshot: &TableSnapshot,
    occupancy_threshold: f64,
    duration_threshold: f64,
) -> Analysis {
    let occupancy = if snapshot.capacity == 0 {
        1.0
    } else {
        snapshot.len() as f64 / snapshot.capacity as f64
    };
    if occupancy < occupancy_threshold {
        return Analysis::Inactive { occupancy };
    }
    let suspicious = snapshot
        .rules()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.duration > duration_threshold)
        .map(|(i, _)| i)
        .collect();
    Analysis::Active {
        occupancy,
        suspicious,
    }
}
