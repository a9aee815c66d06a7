use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVENTS_SCHEMA: &str = "feedshape-events/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// A feed visit. `target` is the visitor.
    Session,
    /// An item shown to and examined by `actor`; `target` is its creator.
    Impression,
    /// A private engagement (open/click) on an examined item.
    Click,
    /// A public reaction (like/comment/reshare) delivered to the creator.
    Feedback,
    /// A new item; `target` is the creator.
    Create,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u32,
    pub kind: EventKind,
    pub actor: u32,
    pub target: u32,
    pub item: Option<u32>,
}

/// Timestamped record of a simulation run. `n_ticks` is the simulated span
/// `[0, n_ticks)`, which may extend past the last event.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub seed: u64,
    pub n_ticks: u32,
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn new(seed: u64, n_ticks: u32) -> Self {
        Self { seed, n_ticks, events: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Copy of the log keeping only events strictly before `tick`.
    pub fn truncated(&self, tick: u32) -> EventLog {
        EventLog {
            seed: self.seed,
            n_ticks: self.n_ticks.min(tick),
            events: self.events.iter().copied().filter(|e| e.tick < tick).collect(),
        }
    }

    /// Checks ordering and referential integrity.
    pub fn validate(&self) -> Result<()> {
        let mut last_tick = 0;
        let mut created: HashSet<u32> = HashSet::new();
        let mut shown: HashSet<(u32, u32)> = HashSet::new();
        for (i, e) in self.events.iter().enumerate() {
            if e.tick < last_tick {
                return Err(Error::schema(format!("event {i}: tick {} after {last_tick}", e.tick)));
            }
            if e.tick >= self.n_ticks {
                return Err(Error::schema(format!("event {i}: tick {} beyond span", e.tick)));
            }
            last_tick = e.tick;
            match e.kind {
                EventKind::Session => {}
                EventKind::Create => {
                    let item = e.item.ok_or_else(|| Error::schema(format!("event {i}: create without item")))?;
                    if !created.insert(item) {
                        return Err(Error::schema(format!("event {i}: item {item} created twice")));
                    }
                }
                EventKind::Impression => {
                    let item = e.item.ok_or_else(|| Error::schema(format!("event {i}: impression without item")))?;
                    if !created.contains(&item) {
                        return Err(Error::schema(format!("event {i}: item {item} shown before creation")));
                    }
                    shown.insert((e.actor, item));
                }
                EventKind::Click | EventKind::Feedback => {
                    let item = e.item.ok_or_else(|| Error::schema(format!("event {i}: reaction without item")))?;
                    if !shown.contains(&(e.actor, item)) {
                        return Err(Error::schema(format!("event {i}: reaction by {} on unseen item {item}", e.actor)));
                    }
                }
            }
        }
        Ok(())
    }

    /// JSON-lines with a leading `#` header recording schema, seed and span.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {EVENTS_SCHEMA} seed={} ticks={}", self.seed, self.n_ticks)?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::schema("empty event file"))??;
        let (seed, n_ticks) = parse_header(&header)?;
        let mut events = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Event =
                serde_json::from_str(&line).map_err(|err| Error::schema(format!("event line {}: {err}", n + 2)))?;
            events.push(e);
        }
        Ok(Self { seed, n_ticks, events })
    }
}

fn parse_header(line: &str) -> Result<(u64, u32)> {
    let rest = line
        .strip_prefix("# ")
        .and_then(|r| r.strip_prefix(EVENTS_SCHEMA))
        .ok_or_else(|| Error::schema(format!("expected `# {EVENTS_SCHEMA}` header, got {line:?}")))?;
    let mut seed = None;
    let mut ticks = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("seed", v)) => seed = v.parse().ok(),
            Some(("ticks", v)) => ticks = v.parse().ok(),
            _ => {}
        }
    }
    match (seed, ticks) {
        (Some(s), Some(t)) => Ok((s, t)),
        _ => Err(Error::schema(format!("malformed event header {line:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(tick: u32, kind: EventKind, actor: u32, target: u32, item: Option<u32>) -> Event {
        Event { tick, kind, actor, target, item }
    }

    #[test]
    fn jsonl_round_trip() {
        let log = EventLog {
            seed: 9,
            n_ticks: 3,
            events: vec![
                ev(0, EventKind::Create, 1, 1, Some(0)),
                ev(1, EventKind::Session, 2, 2, None),
                ev(1, EventKind::Impression, 2, 1, Some(0)),
                ev(1, EventKind::Feedback, 2, 1, Some(0)),
            ],
        };
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# feedshape-events/1 seed=9 ticks=3\n"));
        assert!(text.contains(r#"{"tick":1,"kind":"Session","actor":2,"target":2,"item":null}"#));
        let back = EventLog::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, log);
        back.validate().unwrap();
    }

    #[test]
    fn validation_catches_broken_references() {
        let bad_feedback = EventLog {
            seed: 0,
            n_ticks: 2,
            events: vec![ev(0, EventKind::Create, 1, 1, Some(0)), ev(1, EventKind::Feedback, 2, 1, Some(0))],
        };
        assert!(bad_feedback.validate().is_err());

        let unknown_item = EventLog { seed: 0, n_ticks: 2, events: vec![ev(0, EventKind::Impression, 2, 1, Some(5))] };
        assert!(unknown_item.validate().is_err());

        let backwards = EventLog {
            seed: 0,
            n_ticks: 5,
            events: vec![ev(3, EventKind::Session, 1, 1, None), ev(2, EventKind::Session, 1, 1, None)],
        };
        assert!(backwards.validate().is_err());
    }

    #[test]
    fn bad_header_is_a_schema_error() {
        let text = "{\"tick\":0}\n";
        assert!(matches!(EventLog::read_jsonl(text.as_bytes()), Err(Error::Schema(_))));
    }
}
