//! Online branch selection.
//!
//! Every branch scores the same search region; the one whose weighted
//! response has the largest peak-to-floor spread is used until the next
//! scheduled selection.

use serde::{Deserialize, Serialize};

use crate::branches::BranchId;
use crate::correlation::ResponseMap;
use crate::error::{Error, Result};

/// Default number of frames between selections.
pub const DEFAULT_SELECTION_INTERVAL: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub branch_id: BranchId,
    /// Maximum of the response map.
    pub peak: f64,
    /// Minimum of the response map.
    pub floor: f64,
    pub weight: f64,
    /// `weight * (peak - floor)`.
    pub power: f64,
}

/// Scores `map` (tagged with its branch id) as `weight * (max - min)`.
pub fn discriminative_power(map: &ResponseMap, weight: f64) -> Result<SelectionScore> {
    if !(weight.is_finite() && weight >= 0.0) {
        return Err(Error::Selection(format!("weight {weight} must be finite and >= 0")));
    }
    let (peak, floor) = match (map.max(), map.min()) {
        (Some(p), Some(m)) => (p, m),
        _ => return Err(Error::Empty("response map")),
    };
    Ok(SelectionScore {
        branch_id: map.branch_id,
        peak,
        floor,
        weight,
        power: weight * (peak - floor),
    })
}

/// Branch with the largest power; equal powers go to the lowest id.
pub fn select_branch(scores: &[SelectionScore]) -> Result<BranchId> {
    let mut best: Option<&SelectionScore> = None;
    for s in scores {
        if s.power.is_nan() {
            return Err(Error::Selection(format!("branch {} has NaN power", s.branch_id)));
        }
        best = match best {
            Some(b) if b.power > s.power || (b.power == s.power && b.branch_id < s.branch_id) => Some(b),
            _ => Some(s),
        };
    }
    best.map(|s| s.branch_id).ok_or(Error::Empty("selection scores"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub active_branch: BranchId,
    /// Frames tracked since the last selection, in `0..interval`.
    pub frames_since_selection: usize,
    pub interval: usize,
    pub last_scores: Vec<SelectionScore>,
}

impl SelectionState {
    pub fn new(interval: usize) -> Result<Self> {
        if interval == 0 {
            return Err(Error::Selection("selection interval must be >= 1".into()));
        }
        Ok(Self {
            active_branch: 0,
            frames_since_selection: 0,
            interval,
            last_scores: Vec::new(),
        })
    }
}

/// A selection runs whenever the hold counter is back at zero: on the first
/// frame and then every `interval` frames.
pub fn selection_due(state: &SelectionState) -> bool {
    state.frames_since_selection == 0
}

/// Steps the schedule by one frame. `chosen` must be given exactly on the
/// frames where a selection was due.
pub fn advance(state: &SelectionState, chosen: Option<BranchId>) -> Result<SelectionState> {
    let due = selection_due(state);
    let mut next = state.clone();
    match (due, chosen) {
        (true, Some(id)) => next.active_branch = id,
        (false, None) => {}
        (false, Some(id)) => {
            return Err(Error::Selection(format!(
                "branch {id} chosen off-schedule ({} frames since last selection)",
                state.frames_since_selection
            )))
        }
        (true, None) => return Err(Error::Selection("selection due but no branch chosen".into())),
    }
    next.frames_since_selection = (state.frames_since_selection + 1) % state.interval;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn score(id: BranchId, power: f64) -> SelectionScore {
        SelectionScore {
            branch_id: id,
            peak: power,
            floor: 0.0,
            weight: 1.0,
            power,
        }
    }

    fn map(data: Vec<f64>) -> ResponseMap {
        let n = data.len();
        ResponseMap::new(1, n, data).unwrap()
    }

    #[test]
    fn power_examples() {
        let s = discriminative_power(&map(vec![0.1, 0.5, 0.9]), 1.0).unwrap();
        assert!((s.power - 0.8).abs() < 1e-12);
        assert_eq!((s.peak, s.floor), (0.9, 0.1));
        assert_eq!(discriminative_power(&map(vec![0.4; 9]), 3.0).unwrap().power, 0.0);
        let deep = discriminative_power(&map(vec![0.05, 0.3]), 10.5).unwrap();
        assert!((deep.power - 2.625).abs() < 1e-12);
    }

    #[test]
    fn power_errors() {
        assert!(matches!(discriminative_power(&map(vec![]), 1.0), Err(Error::Empty(_))));
        assert!(discriminative_power(&map(vec![1.0]), -1.0).is_err());
        assert!(discriminative_power(&map(vec![1.0]), f64::NAN).is_err());
    }

    #[test]
    fn select_examples() {
        let s = [score(0, 0.8), score(1, 2.625), score(2, 0.5)];
        assert_eq!(select_branch(&s).unwrap(), 1);
        let tie = [score(2, 1.0), score(0, 1.0), score(1, 1.0)];
        assert_eq!(select_branch(&tie).unwrap(), 0);
        assert_eq!(select_branch(&[score(4, 0.0)]).unwrap(), 4);
        assert!(select_branch(&[]).is_err());
    }

    #[test]
    fn schedule_with_interval_seven() {
        let mut st = SelectionState::new(7).unwrap();
        let mut due_frames = Vec::new();
        for frame in 1..=20 {
            let due = selection_due(&st);
            if due {
                due_frames.push(frame);
            }
            st = advance(&st, due.then_some(frame % 3)).unwrap();
        }
        assert_eq!(due_frames, vec![1, 8, 15]);
    }

    #[test]
    fn advance_examples() {
        let st = SelectionState::new(7).unwrap();
        let st = advance(&st, Some(2)).unwrap();
        assert_eq!((st.active_branch, st.frames_since_selection), (2, 1));
        let held = advance(&st, None).unwrap();
        assert_eq!((held.active_branch, held.frames_since_selection), (2, 2));
        assert!(advance(&st, Some(1)).is_err());
        let mut wrap = st.clone();
        wrap.frames_since_selection = 6;
        assert_eq!(advance(&wrap, None).unwrap().frames_since_selection, 0);
        let every = SelectionState::new(1).unwrap();
        assert!(selection_due(&advance(&every, Some(0)).unwrap()));
        assert!(SelectionState::new(0).is_err());
    }

    proptest! {
        #[test]
        fn power_ignores_constant_offset(
            data in proptest::collection::vec(-5.0f64..5.0, 1..40),
            shift in -100.0f64..100.0,
            w in 0.0f64..20.0,
        ) {
            let a = discriminative_power(&map(data.clone()), w).unwrap();
            let b = discriminative_power(&map(data.iter().map(|v| v + shift).collect()), w).unwrap();
            prop_assert!((a.power - b.power).abs() <= 1e-9 * (1.0 + a.power.abs()));
            prop_assert!(a.power >= 0.0);
        }

        #[test]
        fn common_weight_scale_keeps_the_winner(
            maps in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 1..20), 1..6),
            weights in proptest::collection::vec(0.0f64..30.0, 6),
            c in prop_oneof![Just(0.5f64), Just(2.0), Just(10.0)],
        ) {
            let pick = |scale: f64| {
                let scores: Vec<SelectionScore> = maps
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let mut m = map(d.clone());
                        m.branch_id = i;
                        discriminative_power(&m, weights[i] * scale).unwrap()
                    })
                    .collect();
                select_branch(&scores).unwrap()
            };
            prop_assert_eq!(pick(1.0), pick(c));
        }

        #[test]
        fn branch_held_for_interval_minus_one_frames(interval in 1usize..15, frames in 1usize..80) {
            let mut st = SelectionState::new(interval).unwrap();
            let mut since_change = 0usize;
            for f in 0..frames {
                let due = selection_due(&st);
                prop_assert_eq!(due, f % interval == 0);
                let next = advance(&st, due.then_some(f)).unwrap();
                if due {
                    since_change = 0;
                } else {
                    prop_assert_eq!(next.active_branch, st.active_branch);
                    since_change += 1;
                    prop_assert!(since_change < interval);
                }
                st = next;
            }
        }
    }
}
