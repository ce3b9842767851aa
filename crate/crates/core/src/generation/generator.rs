use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Poisson};
use serde::{Deserialize, Serialize};

use crate::micro::DriverParams;
use crate::network::{LaneSet, RoadIx, SinkIx};

use super::DriverDistribution;

/// How whole vehicles are extracted from a flow rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arrivals {
    /// Accumulate `q·dt` and release one vehicle per whole unit.
    Deterministic,
    /// Draw a Poisson count with mean `q·dt` every step.
    Poisson,
}

impl Arrivals {
    pub fn as_str(self) -> &'static str {
        match self {
            Arrivals::Deterministic => "deterministic",
            Arrivals::Poisson => "poisson",
        }
    }
}

/// Flow rate in force from `from` seconds on (veh/h per lane).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateStep {
    pub from: f64,
    pub rate: f64,
}

/// One vehicle fully specified by a script.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedEvent {
    pub time: f64,
    pub lane: usize,
    pub speed: f64,
    pub length: f64,
    pub params: DriverParams,
    /// Sink id; the generator's destination applies when absent.
    pub destination: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rhythm {
    /// Piecewise-constant flow profile, steps sorted by `from`.
    Flow { profile: Vec<RateStep>, arrivals: Arrivals },
    /// Events sorted by time.
    Script(Vec<ScriptedEvent>),
}

impl Rhythm {
    /// Flow rate at `t` (veh/h per lane); zero before the first step and for scripts.
    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            Rhythm::Flow { profile, .. } => profile.iter().take_while(|s| s.from <= t).last().map_or(0.0, |s| s.rate),
            Rhythm::Script(_) => 0.0,
        }
    }
}

/// Vehicle source declared on an input point.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    /// Input point id, also the rng stream name.
    pub id: String,
    pub road: String,
    pub lanes: LaneSet,
    pub destination: Option<String>,
    pub driver: DriverDistribution,
    pub rhythm: Rhythm,
    /// File the driver distribution was read from, relative to the scenario root.
    pub parameters_ref: String,
    pub rhythm_ref: String,
}

/// A vehicle waiting to enter the network at a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Insertion {
    pub lane: usize,
    /// Fixed insertion speed; `None` lets the engine pick one.
    pub speed: Option<f64>,
    pub length: f64,
    pub params: DriverParams,
    pub destination: Option<SinkIx>,
}

/// 64-bit FNV-1a, used to derive per-generator rng streams from their ids.
pub fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seeded generator for `name`, independent of every other stream.
pub fn stream_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

/// Threshold below one at which an accumulator counts as a whole vehicle,
/// absorbing rounding in rates such as 1200 veh/h · 0.25 s.
const WHOLE: f64 = 1.0 - 1e-9;

/// Runtime state of one source.
#[derive(Debug, Clone)]
pub struct Generator {
    pub id: String,
    pub road: RoadIx,
    pub lanes: Vec<usize>,
    pub destination: Option<SinkIx>,
    driver: DriverDistribution,
    rhythm: Rhythm,
    /// Resolved sink of each scripted event.
    event_destinations: Vec<Option<SinkIx>>,
    /// Fractional vehicles per lane.
    accumulators: Vec<f64>,
    script_cursor: usize,
    /// Insertions that failed their gap check, retried first-in first-out.
    pub queue: VecDeque<Insertion>,
    rng: ChaCha8Rng,
    /// Mass produced so far (whole and fractional vehicles).
    pub generated: f64,
    /// Whole vehicles produced so far.
    pub emitted: u64,
}

impl Generator {
    /// `resolve` maps sink ids named by scripted events to sink indices.
    pub fn new(
        spec: &GeneratorSpec,
        road: RoadIx,
        lanes: Vec<usize>,
        destination: Option<SinkIx>,
        resolve: impl Fn(&str) -> Option<SinkIx>,
        seed: u64,
    ) -> Self {
        let event_destinations = match &spec.rhythm {
            Rhythm::Script(events) => events.iter().map(|e| e.destination.as_deref().and_then(&resolve)).collect(),
            Rhythm::Flow { .. } => Vec::new(),
        };
        Self {
            event_destinations,
            id: spec.id.clone(),
            road,
            accumulators: vec![0.0; lanes.len()],
            lanes,
            destination,
            driver: spec.driver.clone(),
            rhythm: spec.rhythm.clone(),
            script_cursor: 0,
            queue: VecDeque::new(),
            rng: stream_rng(seed, &spec.id),
            generated: 0.0,
            emitted: 0,
        }
    }

    /// Vehicle mass held by the generator: accumulators plus queued vehicles.
    pub fn mass(&self) -> f64 {
        self.accumulators.iter().sum::<f64>() + self.queue.len() as f64
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    /// Insertions produced during `[t, t + dt)`, in emission order.
    pub fn generation_influences(&mut self, t: f64, dt: f64) -> Vec<Insertion> {
        let mut out = Vec::new();
        match &self.rhythm {
            Rhythm::Flow { arrivals, .. } => {
                let per_lane = self.rhythm.rate_at(t) * dt / 3600.0;
                let arrivals = *arrivals;
                for k in 0..self.lanes.len() {
                    let count = match arrivals {
                        Arrivals::Deterministic => {
                            self.accumulators[k] += per_lane;
                            self.generated += per_lane;
                            let mut n = 0;
                            while self.accumulators[k] >= WHOLE {
                                self.accumulators[k] -= 1.0;
                                n += 1;
                            }
                            n
                        }
                        Arrivals::Poisson => {
                            let n = if per_lane > 0.0 {
                                Poisson::new(per_lane).expect("positive mean").sample(&mut self.rng) as u64
                            } else {
                                0
                            };
                            self.generated += n as f64;
                            n
                        }
                    };
                    for _ in 0..count {
                        let (params, length) = self.driver.sample(&mut self.rng);
                        out.push(Insertion { lane: self.lanes[k], speed: None, length, params, destination: self.destination });
                    }
                }
            }
            Rhythm::Script(events) => {
                while let Some(e) = events.get(self.script_cursor) {
                    if e.time >= t + dt {
                        break;
                    }
                    out.push(Insertion {
                        lane: e.lane,
                        speed: Some(e.speed),
                        length: e.length,
                        params: e.params,
                        destination: self.event_destinations[self.script_cursor].or(self.destination),
                    });
                    self.script_cursor += 1;
                    self.generated += 1.0;
                }
            }
        }
        self.emitted += out.len() as u64;
        out
    }

    /// Moves fractional mass into the accumulators, e.g. when backlog held for
    /// this source has to be returned.
    pub fn deposit(&mut self, mass: f64) {
        if self.accumulators.is_empty() {
            return;
        }
        let share = mass / self.accumulators.len() as f64;
        for a in &mut self.accumulators {
            *a += share;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rhythm: Rhythm) -> GeneratorSpec {
        GeneratorSpec {
            id: "G".into(),
            road: "R".into(),
            lanes: LaneSet::All,
            destination: None,
            driver: DriverDistribution::default(),
            rhythm,
            parameters_ref: "p.xml".into(),
            rhythm_ref: "r.xml".into(),
        }
    }

    fn flow(rate: f64) -> Rhythm {
        Rhythm::Flow { profile: vec![RateStep { from: 0.0, rate }], arrivals: Arrivals::Deterministic }
    }

    #[test]
    fn zero_rate_never_inserts() {
        let mut g = Generator::new(&spec(flow(0.0)), 0, vec![0], None, |_| None, 1);
        for step in 0..1000 {
            assert!(g.generation_influences(step as f64 * 0.25, 0.25).is_empty());
        }
    }

    #[test]
    fn accumulator_releases_every_eighth_step() {
        let mut g = Generator::new(&spec(flow(1800.0)), 0, vec![0], None, |_| None, 1);
        let mut steps = Vec::new();
        for step in 1..=24 {
            if !g.generation_influences((step - 1) as f64 * 0.25, 0.25).is_empty() {
                steps.push(step);
            }
            assert!(g.accumulators()[0] < 1.0 && g.accumulators()[0] >= 0.0);
        }
        assert_eq!(steps, vec![8, 16, 24]);
    }

    #[test]
    fn script_window_is_half_open() {
        let event = |time: f64| ScriptedEvent {
            time,
            lane: 0,
            speed: 10.0,
            length: 4.0,
            params: DriverParams::default(),
            destination: None,
        };
        let mut g = Generator::new(&spec(Rhythm::Script(vec![event(1.0), event(1.1), event(1.25)])), 0, vec![0], None, |_| None, 1);
        assert!(g.generation_influences(0.75, 0.25).is_empty());
        assert_eq!(g.generation_influences(1.0, 0.25).len(), 2);
        assert_eq!(g.generation_influences(1.25, 0.25).len(), 1);
    }

    #[test]
    fn streams_differ_per_generator() {
        use rand::Rng;
        let a: u64 = stream_rng(7, "A").random();
        let b: u64 = stream_rng(7, "B").random();
        assert_ne!(a, b);
        assert_eq!(a, stream_rng(7, "A").random::<u64>());
    }

    #[test]
    fn profile_lookup() {
        let r = Rhythm::Flow {
            profile: vec![RateStep { from: 0.0, rate: 100.0 }, RateStep { from: 60.0, rate: 300.0 }],
            arrivals: Arrivals::Deterministic,
        };
        assert_eq!(r.rate_at(0.0), 100.0);
        assert_eq!(r.rate_at(59.9), 100.0);
        assert_eq!(r.rate_at(60.0), 300.0);
    }
}
