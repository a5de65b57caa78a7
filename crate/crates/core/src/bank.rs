//! Fixed-capacity memory bank with a pinned initial slot.
//!
//! Slot 0 always holds the frame-0 memory. Slots `1..capacity` are dynamic
//! and written in place by [`Action::Replace`]; they are never compacted or
//! sorted, so slot order is part of the state the controller sees.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 7;

/// One stored memory. `feature_id` names the frame whose prediction produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub frame_index: usize,
    pub feature_id: usize,
}

impl MemoryEntry {
    /// Memory produced by frame `frame_index`.
    pub fn for_frame(frame_index: usize) -> Self {
        Self {
            frame_index,
            feature_id: frame_index,
        }
    }
}

/// A dynamic slot index, guaranteed non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot(usize);

impl Slot {
    pub fn new(index: usize) -> Result<Self> {
        if index == 0 {
            return Err(Error::invariant(
                "slot 0 holds the initial frame and cannot be replaced",
            ));
        }
        Ok(Slot(index))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Discard,
    Replace(Slot),
}

impl Action {
    pub fn replace(slot: usize) -> Result<Self> {
        Slot::new(slot).map(Action::Replace)
    }

    /// Dense index in `0..capacity`: 0 is `Discard`, `i` is `Replace(i)`.
    pub fn index(self) -> usize {
        match self {
            Action::Discard => 0,
            Action::Replace(slot) => slot.get(),
        }
    }

    pub fn from_index(index: usize, capacity: usize) -> Result<Self> {
        if index >= capacity {
            return Err(Error::OutOfRange {
                what: "action index",
                value: index.to_string(),
                valid: format!("0..{capacity}"),
            });
        }
        Ok(match index {
            0 => Action::Discard,
            i => Action::Replace(Slot(i)),
        })
    }

    /// All `capacity` actions in index order.
    pub fn all(capacity: usize) -> impl Iterator<Item = Action> {
        (0..capacity).map(|i| match i {
            0 => Action::Discard,
            i => Action::Replace(Slot(i)),
        })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Discard => f.write_str("discard"),
            Action::Replace(slot) => write!(f, "replace:{}", slot.get()),
        }
    }
}

impl std::str::FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discard" => Ok(Action::Discard),
            other => {
                let slot = other
                    .strip_prefix("replace:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| Error::Parse(format!("bad action {other:?}")))?;
                Action::replace(slot)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemoryBank {
    capacity: usize,
    slots: Vec<MemoryEntry>,
}

impl MemoryBank {
    pub fn new(capacity: usize, initial: MemoryEntry) -> Result<Self> {
        if capacity < 2 {
            return Err(Error::config(format!(
                "bank capacity must be at least 2, got {capacity}"
            )));
        }
        if initial.frame_index != 0 {
            return Err(Error::invariant(format!(
                "initial memory must come from frame 0, got frame {}",
                initial.frame_index
            )));
        }
        let mut slots = Vec::with_capacity(capacity);
        slots.push(initial);
        Ok(Self { capacity, slots })
    }

    /// Rebuilds a bank from frame indices in slot order (feature_id == frame_index).
    pub fn from_frames(capacity: usize, frames: &[usize]) -> Result<Self> {
        let (&first, rest) = frames
            .split_first()
            .ok_or_else(|| Error::invariant("bank needs at least the initial slot"))?;
        let mut bank = Self::new(capacity, MemoryEntry::for_frame(first))?;
        if frames.len() > capacity {
            return Err(Error::invariant(format!(
                "{} slots exceed capacity {capacity}",
                frames.len()
            )));
        }
        for &frame in rest {
            if bank.slots.iter().any(|e| e.frame_index == frame) {
                return Err(Error::invariant(format!("frame {frame} stored twice")));
            }
            bank.slots.push(MemoryEntry::for_frame(frame));
        }
        Ok(bank)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn slots(&self) -> &[MemoryEntry] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    /// Frame indices in slot order.
    pub fn frames(&self) -> Vec<usize> {
        self.slots.iter().map(|e| e.frame_index).collect()
    }

    pub fn max_frame(&self) -> usize {
        self.slots.iter().map(|e| e.frame_index).max().unwrap_or(0)
    }

    fn check_incoming(&self, incoming: &MemoryEntry) -> Result<()> {
        if incoming.frame_index <= self.max_frame() {
            return Err(Error::invariant(format!(
                "incoming frame {} is not newer than stored frame {}",
                incoming.frame_index,
                self.max_frame()
            )));
        }
        Ok(())
    }

    /// Controller transition on a full bank.
    pub fn apply_action(&self, action: Action, incoming: MemoryEntry) -> Result<Self> {
        if !self.is_full() {
            return Err(Error::precondition(format!(
                "actions apply only to a full bank ({} of {} slots used)",
                self.len(),
                self.capacity
            )));
        }
        self.check_incoming(&incoming)?;
        match action {
            Action::Discard => Ok(self.clone()),
            Action::Replace(slot) => {
                let i = slot.get();
                if i >= self.capacity {
                    return Err(Error::OutOfRange {
                        what: "replace slot",
                        value: i.to_string(),
                        valid: format!("1..{}", self.capacity),
                    });
                }
                let mut next = self.clone();
                next.slots[i] = incoming;
                Ok(next)
            }
        }
    }

    /// Warm-up fill while the bank still has free slots.
    pub fn auto_append(&self, incoming: MemoryEntry) -> Result<Self> {
        if self.is_full() {
            return Err(Error::precondition("auto_append on a full bank"));
        }
        self.check_incoming(&incoming)?;
        let mut next = self.clone();
        next.slots.push(incoming);
        Ok(next)
    }

    pub fn encode_observation(&self, t: usize, video_length: usize) -> Result<Observation> {
        if t >= video_length {
            return Err(Error::OutOfRange {
                what: "timestep",
                value: t.to_string(),
                valid: format!("0..{video_length}"),
            });
        }
        if self.max_frame() >= t {
            return Err(Error::invariant(format!(
                "stored frame {} is not older than t={t}",
                self.max_frame()
            )));
        }
        let mut bits = vec![0u8; video_length];
        for entry in &self.slots {
            bits[entry.frame_index] = 1;
        }
        bits[t] = 1;
        Ok(Observation { bits })
    }
}

/// Binary encoding of (stored frame indices, current timestep).
///
/// Stored frames are strictly older than `t`, so the highest set bit is `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    bits: Vec<u8>,
}

impl Observation {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(|(i, _)| i)
    }

    pub fn timestep(&self) -> Option<usize> {
        self.bits.iter().rposition(|&b| b != 0)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_bank() -> MemoryBank {
        MemoryBank::from_frames(7, &[0, 3, 4, 5, 6, 7, 8]).unwrap()
    }

    #[test]
    fn new_bank_capacity_rules() {
        let bank = MemoryBank::new(7, MemoryEntry::for_frame(0)).unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(bank.capacity() - bank.len(), 6);

        let bank = MemoryBank::new(2, MemoryEntry::for_frame(0)).unwrap();
        assert_eq!(bank.len(), 1);
        assert!(!bank.is_full());

        assert!(matches!(
            MemoryBank::new(1, MemoryEntry::for_frame(0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            MemoryBank::new(7, MemoryEntry::for_frame(3)),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn discard_and_replace() {
        let bank = full_bank();
        let incoming = MemoryEntry::for_frame(9);
        assert_eq!(bank.apply_action(Action::Discard, incoming).unwrap(), bank);
        let next = bank
            .apply_action(Action::replace(1).unwrap(), incoming)
            .unwrap();
        assert_eq!(next.frames(), vec![0, 9, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn slot_zero_is_unrepresentable() {
        assert!(Action::replace(0).is_err());
        assert!(Slot::new(0).is_err());
    }

    #[test]
    fn replace_beyond_capacity_rejected() {
        let bank = MemoryBank::from_frames(3, &[0, 1, 2]).unwrap();
        let err = bank
            .apply_action(Action::replace(3).unwrap(), MemoryEntry::for_frame(3))
            .unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }));
    }

    #[test]
    fn apply_action_requires_full_bank() {
        let bank = MemoryBank::from_frames(7, &[0, 1]).unwrap();
        let err = bank
            .apply_action(Action::Discard, MemoryEntry::for_frame(2))
            .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn stale_incoming_rejected() {
        let err = full_bank()
            .apply_action(Action::Discard, MemoryEntry::for_frame(8))
            .unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn auto_append_fills_then_refuses() {
        let bank = MemoryBank::new(7, MemoryEntry::for_frame(0)).unwrap();
        let bank = bank.auto_append(MemoryEntry::for_frame(1)).unwrap();
        assert_eq!(bank.frames(), vec![0, 1]);

        let bank = MemoryBank::from_frames(7, &[0, 1, 2, 3, 4, 5]).unwrap();
        let bank = bank.auto_append(MemoryEntry::for_frame(6)).unwrap();
        assert!(bank.is_full());
        assert_eq!(bank.frames(), (0..7).collect::<Vec<_>>());

        let err = full_bank()
            .auto_append(MemoryEntry::for_frame(9))
            .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn observation_examples() {
        let obs = full_bank().encode_observation(9, 12).unwrap();
        let expected: Vec<u8> = (0..12)
            .map(|i| u8::from([0, 3, 4, 5, 6, 7, 8, 9].contains(&i)))
            .collect();
        assert_eq!(obs.bits(), expected.as_slice());
        assert_eq!(obs.timestep(), Some(9));

        let bank = MemoryBank::new(7, MemoryEntry::for_frame(0)).unwrap();
        assert_eq!(bank.encode_observation(1, 4).unwrap().bits(), &[1, 1, 0, 0]);
    }

    #[test]
    fn observation_rejects_bad_timestep() {
        let bank = full_bank();
        assert!(bank.encode_observation(12, 12).is_err());
        assert!(bank.encode_observation(8, 12).is_err());
    }

    #[test]
    fn action_index_round_trip() {
        for (i, action) in Action::all(7).enumerate() {
            assert_eq!(action.index(), i);
            assert_eq!(Action::from_index(i, 7).unwrap(), action);
            assert_eq!(action.to_string().parse::<Action>().unwrap(), action);
        }
        assert_eq!(Action::all(7).count(), 7);
        assert!(Action::from_index(7, 7).is_err());
    }
}
