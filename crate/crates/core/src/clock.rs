//! Time-step alignment between the discrete and continuous models.
//!
//! The discrete model advances in frames of `dt_disc`; each frame n owes a
//! variable number d_n of continuous steps so that after N frames exactly
//! floor(N*dt_disc/dt_cont) continuous steps have run. The residual gap
//! between frame end and the last continuous step is bridged by linear
//! extrapolation at transformation time and is always in [0, dt_cont).
//!
//! All bookkeeping runs on integer microseconds; wall-clock seconds are
//! derived, never accumulated, so long runs cannot drift.

use crate::{Error, Result};

pub const MICROS_PER_SEC: f64 = 1e6;

/// Parse a duration in seconds into whole microseconds. Durations that are
/// not whole microseconds are rejected (time resolution floor).
pub fn seconds_to_micros(name: &str, seconds: f64) -> Result<u64> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::validation(
            "dt > 0",
            format!("{name} = {seconds}"),
        ));
    }
    let us = seconds * MICROS_PER_SEC;
    let rounded = us.round();
    if (us - rounded).abs() > 1e-3 {
        return Err(Error::validation(
            "dt values must be whole microseconds",
            format!("{name} = {seconds} s"),
        ));
    }
    Ok(rounded as u64)
}

pub fn micros_to_seconds(us: u64) -> f64 {
    us as f64 / MICROS_PER_SEC
}

/// d_n: number of continuous steps owed in discrete frame n (1-based).
pub fn steps_in_frame(n: u64, dt_disc_us: u64, dt_cont_us: u64) -> u64 {
    let total_n = cont_steps_through(n, dt_disc_us, dt_cont_us);
    let total_prev = cont_steps_through(n - 1, dt_disc_us, dt_cont_us);
    total_n - total_prev
}

/// floor(n * dt_disc / dt_cont), exact in integer arithmetic.
pub fn cont_steps_through(n: u64, dt_disc_us: u64, dt_cont_us: u64) -> u64 {
    ((n as u128 * dt_disc_us as u128) / dt_cont_us as u128) as u64
}

/// Residual extrapolation gap at the end of frame n, in microseconds.
/// Satisfies 0 <= gap < dt_cont.
pub fn residual_gap_us(n: u64, dt_disc_us: u64, dt_cont_us: u64) -> u64 {
    let t = n as u128 * dt_disc_us as u128;
    let k = t / dt_cont_us as u128;
    (t - k * dt_cont_us as u128) as u64
}

/// One scheduled frame: the discrete step, its continuous steps, and the
/// transformation instant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    /// 1-based discrete step index.
    pub n: u64,
    /// Continuous steps owed in this frame.
    pub d_n: u64,
    /// Index (1-based over the whole run) of the first continuous step of
    /// this frame; steps are `first_cont_step..first_cont_step + d_n`.
    pub first_cont_step: u64,
    /// End-of-frame time in microseconds: n * dt_disc.
    pub t_end_us: u64,
    /// Extrapolation gap at the transformation instant, microseconds.
    pub gap_us: u64,
}

impl Frame {
    pub fn t_end_s(&self) -> f64 {
        micros_to_seconds(self.t_end_us)
    }

    pub fn gap_s(&self) -> f64 {
        micros_to_seconds(self.gap_us)
    }
}

/// Events of one frame in mandated order: the discrete step first (virtual
/// pedestrians are planted before it), then the continuous steps, then the
/// transformation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FrameEvent {
    /// Discrete step ending at the given time.
    DiscreteStep { t_us: u64 },
    /// l-th continuous step of the frame (1-based), ending at the given time.
    ContinuousStep { l: u64, t_us: u64 },
    /// Transformation instant with its extrapolation gap.
    TransformNow { gap_us: u64 },
}

impl Frame {
    pub fn events(&self, dt_cont_us: u64) -> Vec<FrameEvent> {
        let mut ev = Vec::with_capacity(self.d_n as usize + 2);
        ev.push(FrameEvent::DiscreteStep { t_us: self.t_end_us });
        for l in 1..=self.d_n {
            let step_index = self.first_cont_step + l - 1;
            ev.push(FrameEvent::ContinuousStep {
                l,
                t_us: step_index * dt_cont_us,
            });
        }
        ev.push(FrameEvent::TransformNow { gap_us: self.gap_us });
        ev
    }
}

/// Frame scheduler. `advance` hands out frames 1, 2, 3, ...
#[derive(Clone, Debug)]
pub struct AlignedSchedule {
    dt_disc_us: u64,
    dt_cont_us: u64,
    n: u64,
}

impl AlignedSchedule {
    pub fn new(dt_disc_s: f64, dt_cont_s: f64) -> Result<Self> {
        let dt_disc_us = seconds_to_micros("dt_disc", dt_disc_s)?;
        let dt_cont_us = seconds_to_micros("dt_cont", dt_cont_s)?;
        if dt_cont_us > dt_disc_us {
            return Err(Error::validation(
                "dt_cont <= dt_disc",
                format!("dt_cont = {dt_cont_s} s, dt_disc = {dt_disc_s} s"),
            ));
        }
        Ok(AlignedSchedule {
            dt_disc_us,
            dt_cont_us,
            n: 0,
        })
    }

    pub fn dt_disc_us(&self) -> u64 {
        self.dt_disc_us
    }

    pub fn dt_cont_us(&self) -> u64 {
        self.dt_cont_us
    }

    pub fn dt_disc_s(&self) -> f64 {
        micros_to_seconds(self.dt_disc_us)
    }

    pub fn dt_cont_s(&self) -> f64 {
        micros_to_seconds(self.dt_cont_us)
    }

    /// Frames completed so far.
    pub fn frames_done(&self) -> u64 {
        self.n
    }

    pub fn advance(&mut self) -> Frame {
        self.n += 1;
        let n = self.n;
        let first = cont_steps_through(n - 1, self.dt_disc_us, self.dt_cont_us) + 1;
        Frame {
            n,
            d_n: steps_in_frame(n, self.dt_disc_us, self.dt_cont_us),
            first_cont_step: first,
            t_end_us: n * self.dt_disc_us,
            gap_us: residual_gap_us(n, self.dt_disc_us, self.dt_cont_us),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn integral_ratio_gives_constant_steps() {
        // dt_disc = 1.00 s, dt_cont = 0.05 s: twenty steps per frame, no gap
        let (disc, cont) = (1_000_000, 50_000);
        for n in 1..200 {
            assert_eq!(steps_in_frame(n, disc, cont), 20);
            assert_eq!(residual_gap_us(n, disc, cont), 0);
        }
    }

    #[test]
    fn non_integral_ratio_varies() {
        // dt_disc = 0.36 s, dt_cont = 0.05 s -> d_1..d_5 = 7,7,7,7,8
        let (disc, cont) = (360_000, 50_000);
        let d: Vec<u64> = (1..=5).map(|n| steps_in_frame(n, disc, cont)).collect();
        assert_eq!(d, vec![7, 7, 7, 7, 8]);
        // gaps: n=1 -> 0.01 s, n=5 -> 0
        assert_eq!(residual_gap_us(1, disc, cont), 10_000);
        assert_eq!(residual_gap_us(5, disc, cont), 0);
    }

    #[test]
    fn equal_steps_degenerate() {
        let (disc, cont) = (400_000, 400_000);
        for n in 1..50 {
            assert_eq!(steps_in_frame(n, disc, cont), 1);
            assert_eq!(residual_gap_us(n, disc, cont), 0);
        }
    }

    #[test]
    fn frame_events_in_order() {
        let mut sched = AlignedSchedule::new(0.36, 0.05).unwrap();
        for _ in 0..4 {
            sched.advance();
        }
        let frame = sched.advance();
        assert_eq!(frame.n, 5);
        assert_eq!(frame.d_n, 8);
        assert_eq!(frame.gap_us, 0);
        let ev = frame.events(50_000);
        assert_eq!(ev.len(), 10);
        assert!(matches!(ev[0], FrameEvent::DiscreteStep { t_us: 1_800_000 }));
        assert!(matches!(ev[9], FrameEvent::TransformNow { gap_us: 0 }));
        // continuous step times are exact multiples of dt_cont
        if let FrameEvent::ContinuousStep { l: 8, t_us } = ev[8] {
            assert_eq!(t_us, 36 * 50_000);
        } else {
            panic!("unexpected event order");
        }
    }

    #[test]
    fn rejects_bad_durations() {
        assert!(AlignedSchedule::new(0.05, 0.4).is_err());
        assert!(seconds_to_micros("dt", 1.23e-7).is_err());
        assert!(seconds_to_micros("dt", 0.4).is_ok());
    }

    #[test]
    fn paper_worked_example_sequence() {
        // one discrete second, 0.05 s continuous steps: [Disc, 20 x Cont, Transform(0)]
        let mut sched = AlignedSchedule::new(1.0, 0.05).unwrap();
        let frame = sched.advance();
        let ev = frame.events(sched.dt_cont_us());
        assert_eq!(ev.len(), 22);
        assert_eq!(
            ev.iter()
                .filter(|e| matches!(e, FrameEvent::ContinuousStep { .. }))
                .count(),
            20
        );
    }

    proptest! {
        /// Step conservation: sum of d_n over N frames equals
        /// floor(N*dt_disc/dt_cont) exactly, and every gap is in [0, dt_cont).
        #[test]
        fn step_conservation(
            disc_us in 10_000u64..2_000_000,
            cont_us in 10_000u64..2_000_000,
            frames in 1u64..1000,
        ) {
            prop_assume!(cont_us <= disc_us);
            let mut total = 0u64;
            for n in 1..=frames {
                total += steps_in_frame(n, disc_us, cont_us);
                let gap = residual_gap_us(n, disc_us, cont_us);
                prop_assert!(gap < cont_us);
            }
            prop_assert_eq!(total, cont_steps_through(frames, disc_us, cont_us));
        }
    }
}
