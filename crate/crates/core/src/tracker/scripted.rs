use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Prediction, Tracker};
use crate::bank::MemoryBank;
use crate::env::enumerate_reachable_states;
use crate::error::{Error, Result};

/// Exact `(t, slot tuple) -> (q, predicted_empty)` lookup.
///
/// Text form: a `T N` header line, then one tab-separated record per state,
/// `t<TAB>f0,f1,...<TAB>q<TAB>predicted_empty`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedTable {
    video_length: usize,
    capacity: usize,
    entries: BTreeMap<(usize, Vec<usize>), (f64, bool)>,
}

impl ScriptedTable {
    /// Builds a table and checks it covers every reachable state.
    pub fn new(
        video_length: usize,
        capacity: usize,
        entries: impl IntoIterator<Item = ((usize, Vec<usize>), (f64, bool))>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (key, value) in entries {
            if !(0.0..=1.0).contains(&value.0) {
                return Err(Error::OutOfRange {
                    what: "table quality",
                    value: format!("{} at t={} bank={:?}", value.0, key.0, key.1),
                    valid: "[0, 1]".into(),
                });
            }
            if let Some(prev) = map.insert(key.clone(), value) {
                if prev != value {
                    return Err(Error::Parse(format!(
                        "duplicate table key t={} bank={:?}",
                        key.0, key.1
                    )));
                }
            }
        }
        let table = Self {
            video_length,
            capacity,
            entries: map,
        };
        table.check_total(crate::env::DEFAULT_STATE_BUDGET)?;
        Ok(table)
    }

    fn check_total(&self, budget: usize) -> Result<()> {
        for state in enumerate_reachable_states(self.video_length, self.capacity, budget)? {
            if !self.entries.contains_key(&(state.t, state.frames.clone())) {
                return Err(Error::MissingKey {
                    t: state.t,
                    bank: state.frames,
                });
            }
        }
        Ok(())
    }

    /// Tabulates any counterfactual tracker over all reachable states.
    pub fn dump(tracker: &mut dyn Tracker, capacity: usize, budget: usize) -> Result<Self> {
        if !tracker.supports_counterfactual() {
            return Err(Error::Unsupported(
                "tabulating a tracker that cannot be queried out of order".into(),
            ));
        }
        let length = tracker.video_length();
        let mut entries = BTreeMap::new();
        for state in enumerate_reachable_states(length, capacity, budget)? {
            let bank = state.bank(capacity)?;
            let p = tracker.predict(state.t, &bank)?;
            entries.insert((state.t, state.frames), (p.q, p.predicted_empty));
        }
        Ok(Self {
            video_length: length,
            capacity,
            entries,
        })
    }

    pub fn video_length(&self) -> usize {
        self.video_length
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, t: usize, frames: &[usize]) -> Result<(f64, bool)> {
        self.entries
            .get(&(t, frames.to_vec()))
            .copied()
            .ok_or_else(|| Error::MissingKey {
                t,
                bank: frames.to_vec(),
            })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.video_length, self.capacity);
        for ((t, frames), (q, empty)) in &self.entries {
            let frames = frames
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(",");
            // f64 Display is the shortest representation that parses back exactly
            writeln!(out, "{t}\t{frames}\t{q}\t{empty}").expect("write to string");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty table file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad header {header:?}: {e}")))?;
        let [video_length, capacity] = dims[..] else {
            return Err(Error::Parse(format!(
                "header must be `T N`, got {header:?}"
            )));
        };
        let mut entries = Vec::new();
        for (lineno, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("line {}: {what}: {line:?}", lineno + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let [t, frames, q, empty] = fields[..] else {
                return Err(bad("expected 4 tab-separated fields"));
            };
            let t = t.parse::<usize>().map_err(|_| bad("bad timestep"))?;
            let frames = frames
                .split(',')
                .map(|f| f.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad frame list"))?;
            let q = q.parse::<f64>().map_err(|_| bad("bad quality"))?;
            let empty = empty
                .parse::<bool>()
                .map_err(|_| bad("bad predicted_empty"))?;
            entries.push(((t, frames), (q, empty)));
        }
        Self::new(video_length, capacity, entries)
    }
}

/// Replays a [`ScriptedTable`].
#[derive(Debug, Clone)]
pub struct ScriptedTracker {
    video_id: String,
    table: ScriptedTable,
}

impl ScriptedTracker {
    pub fn new(video_id: impl Into<String>, table: ScriptedTable) -> Self {
        Self {
            video_id: video_id.into(),
            table,
        }
    }

    pub fn table(&self) -> &ScriptedTable {
        &self.table
    }
}

impl Tracker for ScriptedTracker {
    fn video_id(&self) -> &str {
        &self.video_id
    }

    fn video_length(&self) -> usize {
        self.table.video_length
    }

    fn begin_episode(&mut self, capacity: usize) -> Result<()> {
        if capacity != self.table.capacity {
            return Err(Error::config(format!(
                "table built for capacity {}, environment uses {capacity}",
                self.table.capacity
            )));
        }
        Ok(())
    }

    fn predict(&mut self, t: usize, bank: &MemoryBank) -> Result<Prediction> {
        let (q, empty) = self.table.lookup(t, &bank.frames())?;
        Ok(Prediction::inferred(q, empty))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::bank::Action;
    use crate::env::TrackingEnv;

    fn pivotal() -> ScriptedTable {
        ScriptedTable::new(
            4,
            2,
            [
                ((1, vec![0]), (0.3, false)),
                ((2, vec![0, 1]), (0.5, false)),
                ((3, vec![0, 1]), (1.0, false)),
                ((3, vec![0, 2]), (0.2, false)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn lookup_hits_and_misses() {
        let table = pivotal();
        assert_eq!(table.lookup(1, &[0]).unwrap(), (0.3, false));
        let err = table.lookup(3, &[0, 3]).unwrap_err();
        assert!(err.to_string().contains("t=3"));
        assert!(matches!(err, Error::MissingKey { t: 3, .. }));
    }

    #[test]
    fn incomplete_table_rejected_at_load() {
        let err = ScriptedTable::new(4, 2, [((1, vec![0]), (0.3, false))]).unwrap_err();
        assert!(matches!(err, Error::MissingKey { t: 2, .. }));
    }

    #[test]
    fn fifo_replay_follows_table() {
        // FIFO on N=2 always replaces slot 1: banks [0], [0,1], [0,2]
        let mut env = TrackingEnv::new(ScriptedTracker::new("pivot", pivotal()), 2, 1.0).unwrap();
        let mut rewards = vec![];
        while !env.is_done() {
            rewards.push(env.step(Action::replace(1).unwrap()).unwrap().reward);
        }
        assert_eq!(rewards, vec![0.3, 0.5, 0.2]);
    }

    #[test]
    fn text_format() {
        let text = pivotal().to_text();
        assert_eq!(
            text,
            "4 2\n1\t0\t0.3\tfalse\n2\t0,1\t0.5\tfalse\n3\t0,1\t1\tfalse\n3\t0,2\t0.2\tfalse\n"
        );
        assert_eq!(ScriptedTable::parse(&text).unwrap(), pivotal());
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(ScriptedTable::parse("").is_err());
        assert!(ScriptedTable::parse("4\n").is_err());
        assert!(ScriptedTable::parse("4 2\n1\t0\t0.3\n").is_err());
        assert!(ScriptedTable::parse("4 2\n1\t0\tx\tfalse\n").is_err());
        assert!(ScriptedTable::parse("3 2\n1\t0\t1.5\tfalse\n2\t0,1\t1\tfalse\n").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(
            qs in proptest::collection::vec(0.0f64..=1.0, 64),
            empties in proptest::collection::vec(any::<bool>(), 64),
        ) {
            let states = enumerate_reachable_states(6, 3, 1000).unwrap();
            prop_assert!(states.len() <= 64);
            let entries = states
                .into_iter()
                .zip(qs.iter().zip(&empties))
                .map(|(s, (&q, &e))| ((s.t, s.frames), (q, e)));
            let table = ScriptedTable::new(6, 3, entries).unwrap();
            let text = table.to_text();
            let back = ScriptedTable::parse(&text).unwrap();
            prop_assert_eq!(&back, &table);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}
