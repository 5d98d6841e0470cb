//! Event stream data model, file formats and the analytic scene generator.

mod format;
mod synth;

pub use format::{parse_event_stream, write_csv, write_raw_bin, EventFormat, ParseOptions};
pub use synth::{synth_rigid_scene, GroundTruth, RigidSceneConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single polarity event. `t` is in microseconds, `p` is `-1` or `+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: i8,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: i8) -> Self {
        Self { t, x, y, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorSize {
    pub height: usize,
    pub width: usize,
}

impl SensorSize {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive: fx={}, fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    /// Pinhole projection of a camera-frame point to pixel coordinates.
    pub fn project(&self, point: [f64; 3]) -> [f64; 2] {
        [
            self.fx * point[0] / point[2] + self.cx,
            self.fy * point[1] / point[2] + self.cy,
        ]
    }
}

/// Time-ordered events on a sensor, restricted to a window `[start, end]`
/// in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    sensor: SensorSize,
    window: (u64, u64),
}

impl EventStream {
    /// Builds a stream from events that are already sorted by time.
    pub fn new(events: Vec<Event>, sensor: SensorSize, window: (u64, u64)) -> Result<Self> {
        if window.0 > window.1 {
            return Err(Error::InvalidWindow {
                start: window.0,
                end: window.1,
            });
        }
        let mut previous = window.0;
        for (i, e) in events.iter().enumerate() {
            if e.p != 1 && e.p != -1 {
                return Err(Error::InvalidStream(format!(
                    "event {i} has polarity {}",
                    e.p
                )));
            }
            if !sensor.contains(e.x as i64, e.y as i64) {
                return Err(Error::OutOfBounds {
                    row: i,
                    x: e.x as i64,
                    y: e.y as i64,
                    width: sensor.width,
                    height: sensor.height,
                });
            }
            if e.t < previous {
                return Err(Error::NonMonotonicTime {
                    row: i,
                    t: e.t,
                    previous,
                });
            }
            if e.t > window.1 {
                return Err(Error::InvalidStream(format!(
                    "event {i} at t={} lies after the window end {}",
                    e.t, window.1
                )));
            }
            previous = e.t;
        }
        Ok(Self {
            events,
            sensor,
            window,
        })
    }

    /// Stable-sorts `events` by time before validating.
    pub fn from_unsorted(
        mut events: Vec<Event>,
        sensor: SensorSize,
        window: (u64, u64),
    ) -> Result<Self> {
        events.sort_by_key(|e| e.t);
        Self::new(events, sensor, window)
    }

    pub fn empty(sensor: SensorSize, window: (u64, u64)) -> Result<Self> {
        Self::new(Vec::new(), sensor, window)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn sensor(&self) -> SensorSize {
        self.sensor
    }

    pub fn window(&self) -> (u64, u64) {
        self.window
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration_us(&self) -> u64 {
        self.window.1 - self.window.0
    }

    /// Same stream with every polarity flipped.
    pub fn negated(&self) -> Self {
        let events = self
            .events
            .iter()
            .map(|e| Event { p: -e.p, ..*e })
            .collect();
        Self {
            events,
            sensor: self.sensor,
            window: self.window,
        }
    }

    /// Time-ordered union of two streams over the same sensor. Events of
    /// `self` come first among equal timestamps; the window is the union.
    pub fn merge(&self, other: &EventStream) -> Result<Self> {
        if self.sensor != other.sensor {
            return Err(Error::ShapeMismatch(format!(
                "sensor {:?} vs {:?}",
                self.sensor, other.sensor
            )));
        }
        let mut merged = Vec::with_capacity(self.len() + other.len());
        let (mut a, mut b) = (self.events.iter().peekable(), other.events.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(ea), Some(eb)) => {
                    if eb.t < ea.t {
                        merged.push(*b.next().unwrap());
                    } else {
                        merged.push(*a.next().unwrap());
                    }
                }
                (Some(_), None) => merged.push(*a.next().unwrap()),
                (None, Some(_)) => merged.push(*b.next().unwrap()),
                (None, None) => break,
            }
        }
        let window = (
            self.window.0.min(other.window.0),
            self.window.1.max(other.window.1),
        );
        Self::new(merged, self.sensor, window)
    }
}

/// Events with `t0 <= t < t1`; the result's window is `(t0, t1)`.
pub fn slice_window(stream: &EventStream, t0: u64, t1: u64) -> Result<EventStream> {
    if t0 >= t1 {
        return Err(Error::InvalidWindow { start: t0, end: t1 });
    }
    let events = stream.events();
    let lo = events.partition_point(|e| e.t < t0);
    let hi = events.partition_point(|e| e.t < t1);
    Ok(EventStream {
        events: events[lo..hi].to_vec(),
        sensor: stream.sensor,
        window: (t0, t1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(times: &[u64]) -> EventStream {
        let events = times.iter().map(|&t| Event::new(t, 1, 1, 1)).collect();
        EventStream::new(events, SensorSize::new(4, 4), (0, 20)).unwrap()
    }

    #[test]
    fn slice_is_half_open() {
        let s = stream(&[0, 10, 20]);
        let sliced = slice_window(&s, 0, 15).unwrap();
        let times: Vec<u64> = sliced.events().iter().map(|e| e.t).collect();
        assert_eq!(times, vec![0, 10]);
        assert_eq!(sliced.window(), (0, 15));
    }

    #[test]
    fn slice_rejects_empty_interval() {
        let s = stream(&[0, 10, 20]);
        assert!(matches!(
            slice_window(&s, 5, 5),
            Err(Error::InvalidWindow { .. })
        ));
    }

    #[test]
    fn slice_over_full_window_is_identity() {
        let s = stream(&[0, 10, 19]);
        let sliced = slice_window(&s, 0, 20).unwrap();
        assert_eq!(sliced, s);
    }

    #[test]
    fn slice_may_be_empty() {
        let s = stream(&[0, 10, 20]);
        let sliced = slice_window(&s, 11, 19).unwrap();
        assert!(sliced.is_empty());
    }

    #[test]
    fn rejects_bad_polarity_and_bounds() {
        let sensor = SensorSize::new(4, 4);
        assert!(EventStream::new(vec![Event::new(0, 0, 0, 0)], sensor, (0, 1)).is_err());
        assert!(matches!(
            EventStream::new(vec![Event::new(0, 4, 0, 1)], sensor, (0, 1)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn merge_keeps_left_first_on_ties() {
        let sensor = SensorSize::new(4, 4);
        let a = EventStream::new(vec![Event::new(5, 0, 0, 1)], sensor, (0, 10)).unwrap();
        let b = EventStream::new(vec![Event::new(5, 1, 1, -1)], sensor, (0, 10)).unwrap();
        let m = a.merge(&b).unwrap();
        assert_eq!(m.events()[0].x, 0);
        assert_eq!(m.events()[1].x, 1);
    }

    #[test]
    fn negated_flips_every_polarity() {
        let s = stream(&[0, 3]);
        assert!(s.negated().events().iter().all(|e| e.p == -1));
    }
}
