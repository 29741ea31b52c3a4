use std::collections::BTreeMap;

use rand::Rng;

use crate::engine::{Engine, QuerySpec};
use crate::error::{Error, Result};
use crate::events::Event;

type Key = (u16, u8);

/// Which harmony notes each performed note is holding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HarmonyMap {
    entries: BTreeMap<Key, Vec<Key>>,
}

impl HarmonyMap {
    pub fn get(&self, performed: Key) -> Option<&[Key]> {
        self.entries.get(&performed).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sounding_harmonies(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// The performed note holding harmony `h`, if any.
    pub fn owner_of(&self, h: Key) -> Option<Key> {
        self.entries.iter().find(|(_, hs)| hs.contains(&h)).map(|(k, _)| *k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Vec<Key>)> {
        self.entries.iter()
    }
}

/// Answers every performed note-on with `fan_out` simultaneous notes and
/// releases them together with it.
#[derive(Clone, Debug)]
pub struct Harmonizer {
    /// Extra constraints on harmony notes, e.g. a pinned instrument.
    pub template: QuerySpec,
    pub fan_out: usize,
    map: HarmonyMap,
}

impl Default for Harmonizer {
    fn default() -> Self {
        Harmonizer::new(QuerySpec::default(), 1)
    }
}

fn key(e: &Event) -> Key {
    (e.instrument.get(), e.pitch)
}

impl Harmonizer {
    pub fn new(template: QuerySpec, fan_out: usize) -> Self {
        Harmonizer {
            template,
            fan_out,
            map: HarmonyMap::default(),
        }
    }

    pub fn map(&self) -> &HarmonyMap {
        &self.map
    }

    /// Feed a performed event and return everything to emit for it in
    /// order: cleanup note-offs, the performed event, its harmonies.
    pub fn perform<R: Rng + ?Sized>(&mut self, engine: &mut Engine, e: &Event, rng: &mut R) -> Result<Vec<Event>> {
        let mut out = Vec::new();
        let k = key(e);
        if e.is_noteoff() {
            engine.feed(e)?;
            out.push(*e);
            out.extend(self.harmonize_off(engine, e)?);
            return Ok(out);
        }
        // a re-struck performed note releases its old harmonies first, and
        // a performed note landing on a sounding note ends that note
        let mut dt = e.time_delta;
        let offs = self.release(engine, k, dt)?;
        if !offs.is_empty() {
            dt = 0.0;
            out.extend(offs);
        }
        if engine.is_held(k.0, k.1) {
            let off = Event::new(k.0, k.1, dt, 0.0)?;
            engine.feed(&off)?;
            if let Some(owner) = self.map.owner_of(k) {
                self.map.entries.get_mut(&owner).unwrap().retain(|h| *h != k);
            }
            out.push(off);
            dt = 0.0;
        }
        let lead = Event { time_delta: dt, ..*e };
        engine.feed(&lead)?;
        out.push(lead);
        out.extend(self.harmonize_on(engine, &lead, rng)?);
        Ok(out)
    }

    /// Sample and feed the harmony notes for a performed note-on that has
    /// already been fed.
    pub fn harmonize_on<R: Rng + ?Sized>(&mut self, engine: &mut Engine, e: &Event, rng: &mut R) -> Result<Vec<Event>> {
        if e.is_noteoff() {
            return Err(Error::InvalidQuery("harmonize_on needs a note-on".into()));
        }
        let mut spec = QuerySpec {
            start_silent: true,
            ..self.template.clone().fix_time(0.0).note_on()
        };
        let mut out = Vec::new();
        for _ in 0..self.fan_out {
            let p = match engine.query(&spec, rng) {
                Ok(p) => p,
                // nothing left to add to the chord
                Err(Error::EmptySupport(_)) if !out.is_empty() => break,
                Err(err) => return Err(err),
            };
            engine.feed(&p.event)?;
            spec.exclude_pitches.push(p.event.pitch);
            out.push(p.event);
        }
        self.map.entries.entry(key(e)).or_default().extend(out.iter().map(key));
        Ok(out)
    }

    /// Note-offs for every harmony of a performed note that has been
    /// released (and already fed).
    pub fn harmonize_off(&mut self, engine: &mut Engine, e: &Event) -> Result<Vec<Event>> {
        let k = key(e);
        if self.map.get(k).is_none() {
            log::debug!("release of unharmonized note {k:?}");
            return Ok(Vec::new());
        }
        self.release(engine, k, 0.0)
    }

    /// Feed and return note-offs for the harmonies of `k`, the first one
    /// `first_dt` after the previous event.
    fn release(&mut self, engine: &mut Engine, k: Key, first_dt: f32) -> Result<Vec<Event>> {
        let hs = self.map.entries.remove(&k).unwrap_or_default();
        let mut out = Vec::with_capacity(hs.len());
        for (n, (i, p)) in hs.into_iter().enumerate() {
            let off = Event::new(i, p, if n == 0 { first_dt } else { 0.0 }, 0.0)?;
            engine.feed(&off)?;
            out.push(off);
        }
        Ok(out)
    }

    /// Note-offs for everything the harmonizer holds.
    pub fn flush(&mut self, engine: &mut Engine) -> Result<Vec<Event>> {
        let keys: Vec<Key> = self.map.entries.keys().copied().collect();
        let mut out = Vec::new();
        for k in keys {
            out.extend(self.release(engine, k, 0.0)?);
        }
        Ok(out)
    }
}
