//! Events, ternary event frames, and the two ways of producing a frame:
//! thresholded differences of rendered log-intensity frames (simulation) and
//! last-write-wins accumulation of a recorded event stream (deployment).

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::scene::IntensityFrame;
use crate::{Error, Result};

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i8)]
pub enum Polarity {
    /// Log intensity rose by the threshold.
    On = 1,
    /// Log intensity fell by the threshold.
    Off = -1,
}

impl Polarity {
    /// `+1` or `-1`.
    pub fn as_i8(self) -> i8 {
        self as i8
    }

    /// Parses `+1`/`-1`; anything else is rejected.
    pub fn from_i8(v: i8) -> Option<Polarity> {
        match v {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }
}

/// One asynchronous camera event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u64,
    /// Pixel column.
    pub x: u16,
    /// Pixel row.
    pub y: u16,
    /// Sign of the change.
    pub polarity: Polarity,
}

impl Event {
    /// Builds an event.
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Event { t, x, y, polarity }
    }
}

/// Ternary image-like feature: every pixel is -1, 0 or +1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventFrame {
    width: usize,
    height: usize,
    values: Vec<i8>,
}

impl EventFrame {
    /// All-zero frame.
    pub fn zeros(width: usize, height: usize) -> Self {
        EventFrame {
            width,
            height,
            values: vec![0; width * height],
        }
    }

    /// Wraps row-major values, rejecting anything outside {-1, 0, 1}.
    pub fn from_values(width: usize, height: usize, values: Vec<i8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(-1..=1).contains(v)) {
            return Err(Error::invalid(format!("value {} at index {i} is not ternary", values[i])));
        }
        Ok(EventFrame { width, height, values })
    }

    /// Width in pixels.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Height in pixels.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major pixel values.
    pub fn values(&self) -> &[i8] {
        &self.values
    }

    /// Value at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> i8 {
        self.values[y * self.width + x]
    }

    /// Writes a polarity at column `x`, row `y`.
    pub fn set(&mut self, x: usize, y: usize, p: Polarity) {
        self.values[y * self.width + x] = p.as_i8();
    }

    /// Number of nonzero pixels.
    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    /// Pixelwise negation.
    pub fn negated(&self) -> EventFrame {
        EventFrame {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

/// Threshold and noise settings of the emulated sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmulatorConfig {
    /// Contrast threshold `C` in log-intensity units.
    pub threshold: f32,
    /// Per-pixel, per-frame probability of an impulse-noise event.
    pub noise_prob: f64,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        EmulatorConfig {
            threshold: 0.2,
            noise_prob: 0.001,
        }
    }
}

impl EmulatorConfig {
    /// Checks `C > 0` and `noise_prob ∈ [0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::invalid("threshold must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return Err(Error::invalid("noise probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Frame-difference event emulation: `+1` where `L_curr - L_prev >= C`,
/// `-1` where it is `<= -C`, `0` elsewhere.
pub fn emulate_frame(prev: &IntensityFrame, curr: &IntensityFrame, threshold: f32) -> Result<EventFrame> {
    if prev.width != curr.width || prev.height != curr.height || prev.values.len() != curr.values.len() {
        return Err(Error::invalid(format!(
            "frame size mismatch: {}x{} vs {}x{}",
            prev.width, prev.height, curr.width, curr.height
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::invalid("threshold must be positive"));
    }
    let values = prev
        .values
        .iter()
        .zip(&curr.values)
        .map(|(&p, &c)| {
            let diff = c - p;
            if diff >= threshold {
                1
            } else if diff <= -threshold {
                -1
            } else {
                0
            }
        })
        .collect();
    Ok(EventFrame {
        width: curr.width,
        height: curr.height,
        values,
    })
}

/// Converts the events with `t_start <= t < t_end` into a frame. Events are
/// applied in ascending timestamp order (stable, so equal timestamps keep
/// their input order) and a later event overwrites an earlier one at the
/// same pixel.
pub fn accumulate_events(
    stream: &[Event],
    t_start: u64,
    t_end: u64,
    width: usize,
    height: usize,
) -> Result<EventFrame> {
    if t_start >= t_end {
        return Err(Error::invalid(format!("empty window [{t_start}, {t_end})")));
    }
    if let Some((i, e)) = stream
        .iter()
        .enumerate()
        .find(|(_, e)| e.x as usize >= width || e.y as usize >= height)
    {
        return Err(Error::invalid(format!(
            "event {i} at ({}, {}) outside {width}x{height}",
            e.x, e.y
        )));
    }
    let sorted = stream.windows(2).all(|w| w[0].t <= w[1].t);
    let events: Cow<'_, [Event]> = if sorted {
        Cow::Borrowed(stream)
    } else {
        let mut v = stream.to_vec();
        v.sort_by_key(|e| e.t);
        Cow::Owned(v)
    };
    let mut frame = EventFrame::zeros(width, height);
    for e in events.iter().filter(|e| (t_start..t_end).contains(&e.t)) {
        frame.set(e.x as usize, e.y as usize, e.polarity);
    }
    Ok(frame)
}

/// Overwrites each pixel, independently with probability `noise_prob`, by a
/// fair-coin polarity.
pub fn inject_impulse_noise<R: Rng + ?Sized>(frame: &mut EventFrame, noise_prob: f64, rng: &mut R) {
    if noise_prob <= 0.0 {
        return;
    }
    for v in frame.values.iter_mut() {
        if rng.gen_bool(noise_prob.min(1.0)) {
            *v = if rng.gen::<bool>() { 1 } else { -1 };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(w: usize, h: usize, values: Vec<f32>) -> IntensityFrame {
        IntensityFrame {
            width: w,
            height: h,
            values,
        }
    }

    #[test]
    fn equal_frames_yield_no_events() {
        let a = frame(3, 2, vec![-0.1, -0.5, -2.0, 0.0, -1.0, -0.3]);
        assert_eq!(emulate_frame(&a, &a, 0.2).unwrap(), EventFrame::zeros(3, 2));
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        // 0.25 is exact in binary, so the difference equals C exactly.
        let prev = frame(2, 1, vec![-1.0, -1.0]);
        let curr = frame(2, 1, vec![-0.75, -1.25]);
        let out = emulate_frame(&prev, &curr, 0.25).unwrap();
        assert_eq!(out.values(), &[1, -1]);
    }

    #[test]
    fn mismatched_frames_rejected() {
        let a = frame(2, 1, vec![0.0, 0.0]);
        let b = frame(1, 2, vec![0.0, 0.0]);
        assert!(matches!(emulate_frame(&a, &b, 0.2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn empty_stream_accumulates_to_zero() {
        assert_eq!(accumulate_events(&[], 0, 100, 4, 3).unwrap(), EventFrame::zeros(4, 3));
    }

    #[test]
    fn last_event_wins() {
        let events = [Event::new(10, 1, 1, Polarity::On), Event::new(20, 1, 1, Polarity::Off)];
        assert_eq!(accumulate_events(&events, 0, 100, 4, 3).unwrap().get(1, 1), -1);
        // input order does not matter, timestamps do
        let reversed = [events[1], events[0]];
        assert_eq!(accumulate_events(&reversed, 0, 100, 4, 3).unwrap().get(1, 1), -1);
    }

    #[test]
    fn window_is_half_open() {
        let events = [Event::new(100, 0, 0, Polarity::On), Event::new(0, 1, 0, Polarity::Off)];
        let f = accumulate_events(&events, 0, 100, 2, 1).unwrap();
        assert_eq!(f.values(), &[0, -1]);
    }

    #[test]
    fn accumulate_rejects_bad_input() {
        let events = [Event::new(5, 4, 0, Polarity::On)];
        assert!(accumulate_events(&events, 0, 10, 4, 3).is_err());
        assert!(accumulate_events(&[], 10, 10, 4, 3).is_err());
    }

    #[test]
    fn noise_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = EventFrame::zeros(20, 10);
        inject_impulse_noise(&mut f, 0.0, &mut rng);
        assert_eq!(f.count_nonzero(), 0);
        inject_impulse_noise(&mut f, 1.0, &mut rng);
        assert_eq!(f.count_nonzero(), 200);
        let ons = f.values().iter().filter(|&&v| v == 1).count();
        assert!(ons > 60 && ons < 140);
    }

    #[test]
    fn noise_is_seeded() {
        let mut a = EventFrame::zeros(50, 50);
        let mut b = EventFrame::zeros(50, 50);
        inject_impulse_noise(&mut a, 0.05, &mut ChaCha8Rng::seed_from_u64(9));
        inject_impulse_noise(&mut b, 0.05, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(EmulatorConfig::default().validate().is_ok());
        assert!(EmulatorConfig { threshold: 0.0, noise_prob: 0.0 }.validate().is_err());
        assert!(EmulatorConfig { threshold: 0.2, noise_prob: 1.5 }.validate().is_err());
    }

    fn pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f32..0.0, n),
                prop::collection::vec(-3.0f32..0.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn emulation_is_antisymmetric((a, b) in pair(), c in 0.01f32..1.0) {
            let n = a.len();
            let fa = frame(n, 1, a);
            let fb = frame(n, 1, b);
            let ab = emulate_frame(&fa, &fb, c).unwrap();
            let ba = emulate_frame(&fb, &fa, c).unwrap();
            prop_assert_eq!(ab, ba.negated());
        }

        #[test]
        fn raising_threshold_never_adds_events((a, b) in pair(), c in 0.01f32..1.0, extra in 0.0f32..1.0) {
            let n = a.len();
            let (fa, fb) = (frame(n, 1, a), frame(n, 1, b));
            let low = emulate_frame(&fa, &fb, c).unwrap();
            let high = emulate_frame(&fa, &fb, c + extra).unwrap();
            for (l, h) in low.values().iter().zip(high.values()) {
                prop_assert!(*l != 0 || *h == 0);
                prop_assert!((-1..=1).contains(h));
            }
        }
    }
}
