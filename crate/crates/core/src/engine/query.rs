use serde::{Deserialize, Serialize};

use crate::distributions::{SamplingControls, TIME_DISCRETIZATION, VELOCITY_DISCRETIZATION};
use crate::error::{Error, Result};
use crate::events::{Event, InstrumentId, Modality};

/// Sampling order used when a query does not give one: instrument first,
/// then pitch, time and velocity.
pub const AUTO_ORDER: [Modality; 4] = [
    Modality::Instrument,
    Modality::Pitch,
    Modality::Time,
    Modality::Velocity,
];

/// Some or all of the sub-events of one event.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartialEvent {
    pub instrument: Option<u16>,
    pub pitch: Option<u8>,
    pub time: Option<f64>,
    pub velocity: Option<f64>,
}

impl PartialEvent {
    pub fn get(&self, m: Modality) -> Option<f64> {
        match m {
            Modality::Instrument => self.instrument.map(f64::from),
            Modality::Pitch => self.pitch.map(f64::from),
            Modality::Time => self.time,
            Modality::Velocity => self.velocity,
        }
    }

    pub fn set(&mut self, m: Modality, v: f64) {
        match m {
            Modality::Instrument => self.instrument = Some(v as u16),
            Modality::Pitch => self.pitch = Some(v as u8),
            Modality::Time => self.time = Some(v),
            Modality::Velocity => self.velocity = Some(v),
        }
    }

    pub fn is_known(&self, m: Modality) -> bool {
        self.get(m).is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.instrument {
            InstrumentId::new(i)?;
        }
        if let Some(p) = self.pitch {
            if p > 127 {
                return Err(Error::InvalidPitch(p as u32));
            }
        }
        for (m, d) in [(Modality::Time, TIME_DISCRETIZATION), (Modality::Velocity, VELOCITY_DISCRETIZATION)] {
            if let Some(x) = self.get(m) {
                if !d.contains(x) {
                    return Err(Error::OutsideDomain { value: x, lo: d.lo, hi: d.hi });
                }
            }
        }
        Ok(())
    }

    pub fn to_event(&self) -> Option<Event> {
        Event::new(
            self.instrument?,
            self.pitch?,
            self.time? as f32,
            self.velocity? as f32,
        )
        .ok()
    }
}

impl From<&Event> for PartialEvent {
    fn from(e: &Event) -> Self {
        PartialEvent {
            instrument: Some(e.instrument.get()),
            pitch: Some(e.pitch),
            time: Some(e.time_delta as f64),
            velocity: Some(e.velocity as f64),
        }
    }
}

/// Sampling temperatures. Zero means greedy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Temperatures {
    pub instrument: f64,
    pub pitch: f64,
    /// Mixture-weight temperature for time ("rhythm").
    pub rhythm: f64,
    /// Component-scale temperature for time ("timing").
    pub timing: f64,
    pub velocity_weights: f64,
    pub velocity_scales: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures {
            instrument: 1.0,
            pitch: 1.0,
            rhythm: 1.0,
            timing: 1.0,
            velocity_weights: 1.0,
            velocity_scales: 1.0,
        }
    }
}

impl Temperatures {
    pub fn greedy() -> Self {
        Self::uniform(0.0)
    }

    pub fn uniform(t: f64) -> Self {
        Temperatures {
            instrument: t,
            pitch: t,
            rhythm: t,
            timing: t,
            velocity_weights: t,
            velocity_scales: t,
        }
    }
}

/// Everything a caller can say about the next event before asking for it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuerySpec {
    pub fixed: PartialEvent,
    /// Allowed instrument ids.
    pub instruments: Option<Vec<u16>>,
    pub exclude_instruments: Vec<u16>,
    pub pitches: Option<Vec<u8>>,
    pub exclude_pitches: Vec<u8>,
    pub time_range: Option<(f64, f64)>,
    pub velocity_range: Option<(f64, f64)>,
    /// Only allow events that end a currently sounding note. Implies a
    /// velocity of zero.
    pub end_held: bool,
    /// Only allow note-ons of notes that are not already sounding.
    pub start_silent: bool,
    /// Sampling order of the unfixed sub-events. May also list fixed ones,
    /// which only affects the order their log-probs are chained in.
    pub order: Option<Vec<Modality>>,
    pub temperatures: Temperatures,
    pub include_eos: bool,
}

impl QuerySpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fix_instrument(mut self, id: u16) -> Self {
        self.fixed.instrument = Some(id);
        self
    }

    pub fn fix_pitch(mut self, p: u8) -> Self {
        self.fixed.pitch = Some(p);
        self
    }

    pub fn fix_time(mut self, t: f64) -> Self {
        self.fixed.time = Some(t);
        self
    }

    pub fn fix_velocity(mut self, v: f64) -> Self {
        self.fixed.velocity = Some(v);
        self
    }

    pub fn fix_event(mut self, e: &Event) -> Self {
        self.fixed = PartialEvent::from(e);
        self
    }

    pub fn with_order(mut self, order: impl IntoIterator<Item = Modality>) -> Self {
        self.order = Some(order.into_iter().collect());
        self
    }

    pub fn note_on(mut self) -> Self {
        self.velocity_range = Some((0.5, 127.0));
        self
    }

    pub fn with_temperatures(mut self, t: Temperatures) -> Self {
        self.temperatures = t;
        self
    }

    fn allows_instrument(&self, id: u16) -> bool {
        self.instruments.as_ref().map_or(true, |w| w.contains(&id)) && !self.exclude_instruments.contains(&id)
    }

    fn allows_pitch(&self, p: u8) -> bool {
        self.pitches.as_ref().map_or(true, |w| w.contains(&p)) && !self.exclude_pitches.contains(&p)
    }

    /// Velocity range with the one implied by `start_silent` folded in.
    pub(crate) fn effective_velocity_range(&self) -> Option<(f64, f64)> {
        match (self.start_silent, self.velocity_range) {
            (false, r) => r,
            (true, None) => Some((0.5, 127.0)),
            (true, Some((lo, hi))) => Some((lo.max(0.5), hi)),
        }
    }

    fn fixed_velocity(&self) -> Option<f64> {
        if self.end_held {
            Some(self.fixed.velocity.unwrap_or(0.0))
        } else {
            self.fixed.velocity
        }
    }

    /// Fixed values with implied ones filled in.
    pub(crate) fn effective_fixed(&self) -> PartialEvent {
        PartialEvent {
            velocity: self.fixed_velocity(),
            ..self.fixed
        }
    }

    /// Check the spec is self-consistent and return the full chain order:
    /// fixed sub-events first, then the sampled ones.
    pub fn resolve(&self) -> Result<Vec<Modality>> {
        let fixed = self.effective_fixed();
        fixed.validate()?;
        if self.end_held && fixed.velocity != Some(0.0) {
            return Err(Error::InvalidQuery("end_held requires velocity 0".into()));
        }
        if self.end_held && self.start_silent {
            return Err(Error::InvalidQuery("end_held and start_silent exclude each other".into()));
        }
        if let Some(i) = fixed.instrument {
            if !self.allows_instrument(i) {
                return Err(Error::InvalidQuery(format!("fixed instrument {i} violates its constraint")));
            }
        }
        if let Some(p) = fixed.pitch {
            if !self.allows_pitch(p) {
                return Err(Error::InvalidQuery(format!("fixed pitch {p} violates its constraint")));
            }
        }
        for (m, range) in [(Modality::Time, self.time_range), (Modality::Velocity, self.effective_velocity_range())] {
            if let Some((lo, hi)) = range {
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    return Err(Error::InvalidQuery(format!("{} range [{lo}, {hi}] is empty", m.name())));
                }
                if let Some(x) = fixed.get(m) {
                    if x < lo || x > hi {
                        return Err(Error::InvalidQuery(format!(
                            "fixed {} {x} outside [{lo}, {hi}]",
                            m.name()
                        )));
                    }
                }
            }
        }
        for w in [self.instruments.as_ref().map(Vec::len), self.pitches.as_ref().map(Vec::len)] {
            if w == Some(0) {
                return Err(Error::InvalidQuery("whitelist is empty".into()));
            }
        }
        let base: Vec<Modality> = match &self.order {
            None => AUTO_ORDER.to_vec(),
            Some(o) => {
                let mut seen = [false; 4];
                for m in o {
                    if std::mem::replace(&mut seen[m.index()], true) {
                        return Err(Error::InvalidQuery(format!("{} appears twice in order", m.name())));
                    }
                }
                if let Some(m) = Modality::ALL.into_iter().find(|m| !seen[m.index()] && !fixed.is_known(*m)) {
                    return Err(Error::InvalidQuery(format!("order is missing {}", m.name())));
                }
                let mut full = o.clone();
                full.extend(Modality::ALL.into_iter().filter(|m| !seen[m.index()]));
                full
            }
        };
        let (mut chain, rest): (Vec<_>, Vec<_>) = base.into_iter().partition(|m| fixed.is_known(*m));
        chain.extend(rest);
        Ok(chain)
    }

    /// Sampling controls for one modality, in class-index units for the
    /// categorical ones. `held` narrows the support when `end_held` is set.
    pub(crate) fn controls(&self, m: Modality, known: &PartialEvent, held: &[(u16, u8)]) -> SamplingControls {
        let t = &self.temperatures;
        let mut c = SamplingControls::default();
        match m {
            Modality::Instrument => {
                c.class_temperature = t.instrument;
                let ok = |id: u16| {
                    self.allows_instrument(id)
                        && (!self.end_held
                            || held.iter().any(|&(i, p)| i == id && known.pitch.map_or(true, |q| q == p)))
                        && !(self.start_silent && known.pitch.is_some_and(|q| held.contains(&(id, q))))
                };
                c.whitelist = Some((1..=272u16).filter(|&id| ok(id)).map(|id| id as usize - 1).collect());
            }
            Modality::Pitch => {
                c.class_temperature = t.pitch;
                let ok = |p: u8| {
                    self.allows_pitch(p)
                        && (!self.end_held
                            || held.iter().any(|&(i, q)| q == p && known.instrument.map_or(true, |j| j == i)))
                        && !(self.start_silent && known.instrument.is_some_and(|i| held.contains(&(i, p))))
                };
                c.whitelist = Some((0..=127u8).filter(|&p| ok(p)).map(usize::from).collect());
            }
            Modality::Time => {
                c.weight_temperature = t.rhythm;
                c.scale_temperature = t.timing;
                c.truncation = self.time_range;
            }
            Modality::Velocity => {
                c.weight_temperature = t.velocity_weights;
                c.scale_temperature = t.velocity_scales;
                c.truncation = self.effective_velocity_range();
            }
        }
        c
    }
}

/// The answer to a query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub event: Event,
    /// Log-probability of each sub-event, indexed by modality.
    pub log_probs: [f64; 4],
    pub total: f64,
    pub eos_prob: Option<f64>,
    /// Chain order, fixed sub-events first.
    pub order: Vec<Modality>,
}

/// Chain-rule log-likelihood of an event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLogProb {
    pub log_probs: [f64; 4],
    pub total: f64,
    pub order: Vec<Modality>,
}

/// Parse an order such as `"iptv"`.
pub fn parse_order(s: &str) -> Result<Vec<Modality>> {
    s.chars()
        .map(|c| Modality::from_short(c).ok_or_else(|| Error::InvalidQuery(format!("unknown modality `{c}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_order_puts_fixed_first() {
        let spec = QuerySpec::new().fix_velocity(0.0);
        assert_eq!(spec.resolve().unwrap(), parse_order("vipt").unwrap());
        let spec = QuerySpec::new().fix_pitch(60).with_order(parse_order("tvi").unwrap());
        assert_eq!(spec.resolve().unwrap(), parse_order("ptvi").unwrap());
    }

    #[test]
    fn order_lists_fixed_ones_too() {
        let e = Event::new(3, 64, 0.5, 90.0).unwrap();
        let spec = QuerySpec::new().fix_event(&e).with_order(parse_order("vtpi").unwrap());
        assert_eq!(spec.resolve().unwrap(), parse_order("vtpi").unwrap());
    }

    #[test]
    fn bad_specs_are_rejected() {
        let missing = QuerySpec::new().with_order(parse_order("ipt").unwrap());
        assert!(missing.resolve().is_err());
        let twice = QuerySpec::new().with_order(parse_order("iptvi").unwrap());
        assert!(twice.resolve().is_err());
        let clash = QuerySpec { pitches: Some(vec![1, 2]), ..QuerySpec::new().fix_pitch(3) };
        assert!(clash.resolve().is_err());
        let range = QuerySpec::new().note_on().fix_velocity(0.0);
        assert!(range.resolve().is_err());
        assert!(QuerySpec::new().fix_instrument(0).resolve().is_err());
        assert!(QuerySpec::new().fix_time(11.0).resolve().is_err());
        assert!(parse_order("ipx").is_err());
    }

    #[test]
    fn instrument_controls_are_zero_based() {
        let spec = QuerySpec { instruments: Some(vec![1, 130]), ..Default::default() };
        let c = spec.controls(Modality::Instrument, &PartialEvent::default(), &[]);
        assert_eq!(c.whitelist, Some(vec![0, 129]));
    }

    #[test]
    fn end_held_narrows_to_sounding_notes() {
        let spec = QuerySpec { end_held: true, ..Default::default() };
        let held = [(1, 60), (1, 64), (2, 60)];
        let known = PartialEvent { instrument: Some(1), ..Default::default() };
        let c = spec.controls(Modality::Pitch, &known, &held);
        assert_eq!(c.whitelist, Some(vec![60, 64]));
        let known = PartialEvent { pitch: Some(60), ..Default::default() };
        let c = spec.controls(Modality::Instrument, &known, &held);
        assert_eq!(c.whitelist, Some(vec![0, 1]));
        assert_eq!(spec.effective_fixed().velocity, Some(0.0));
    }

    #[test]
    fn start_silent_skips_sounding_notes() {
        let spec = QuerySpec { start_silent: true, ..Default::default() };
        let held = [(1, 60), (2, 61)];
        let known = PartialEvent { instrument: Some(1), ..Default::default() };
        let c = spec.controls(Modality::Pitch, &known, &held);
        let w = c.whitelist.unwrap();
        assert_eq!(w.len(), 127);
        assert!(!w.contains(&60));
        let c = spec.controls(Modality::Velocity, &known, &held);
        assert_eq!(c.truncation, Some((0.5, 127.0)));
        assert!(QuerySpec { end_held: true, ..spec.clone() }.resolve().is_err());
        assert!(spec.fix_velocity(0.0).resolve().is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = QuerySpec { exclude_instruments: vec![5], ..QuerySpec::new().fix_pitch(61).note_on() };
        let back: QuerySpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let sparse: QuerySpec = serde_json::from_str(r#"{"fixed":{"velocity":0}}"#).unwrap();
        assert_eq!(sparse.fixed.velocity, Some(0.0));
    }
}
