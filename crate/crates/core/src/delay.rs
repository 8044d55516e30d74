//! Operator input latency: a time-stamped FIFO with zero-order hold output.

use std::collections::VecDeque;

use crate::error::DelayError;
use crate::geometry::Twist2D;

/// Slack for comparing tick times built from repeated float arithmetic.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayedCommand {
    pub stamp: f64,
    /// Time at which the command becomes visible downstream.
    pub due: f64,
    pub cmd: Twist2D,
}

#[derive(Debug, Clone, Default)]
pub struct DelayBuffer {
    entries: VecDeque<DelayedCommand>,
    delay: f64,
    last_pushed: Option<f64>,
    last_delivered: Option<Twist2D>,
}

impl DelayBuffer {
    pub fn new(delay: f64) -> Result<Self, DelayError> {
        let mut buf = Self::default();
        buf.set_delay(delay)?;
        Ok(buf)
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &DelayedCommand> {
        self.entries.iter()
    }

    pub fn last_delivered(&self) -> Option<Twist2D> {
        self.last_delivered
    }

    /// Changes the delay for commands pushed from now on; queued commands keep
    /// the maturity time they were pushed with.
    pub fn set_delay(&mut self, delay: f64) -> Result<(), DelayError> {
        if !(delay >= 0.0 && delay.is_finite()) {
            return Err(DelayError::InvalidDelay(delay));
        }
        self.delay = delay;
        Ok(())
    }

    /// Queues `cmd` stamped `now`. A second push with the same stamp replaces
    /// the queued command for that instant.
    pub fn push_command(&mut self, cmd: Twist2D, now: f64) -> Result<(), DelayError> {
        if !now.is_finite() {
            return Err(DelayError::NonFiniteStamp(now));
        }
        if let Some(last) = self.last_pushed {
            if now < last {
                return Err(DelayError::NonMonotonicStamp { stamp: now, last });
            }
            if now == last {
                if let Some(back) = self.entries.back_mut() {
                    if back.stamp == now {
                        back.cmd = cmd;
                        return Ok(());
                    }
                }
            }
        }
        self.entries.push_back(DelayedCommand {
            stamp: now,
            due: now + self.delay,
            cmd,
        });
        self.last_pushed = Some(now);
        Ok(())
    }

    /// Releases every matured command in order and returns the newest one,
    /// holding it until something newer matures. Zero before anything has matured.
    pub fn sample_delayed(&mut self, now: f64) -> Twist2D {
        while let Some(front) = self.entries.front() {
            if front.due <= now + TIME_EPS {
                self.last_delivered = Some(front.cmd);
                self.entries.pop_front();
            } else {
                break;
            }
        }
        self.last_delivered.unwrap_or(Twist2D::ZERO)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: Twist2D = Twist2D {
        vx: 1.0,
        vy: 0.0,
        omega: 0.0,
    };
    const B: Twist2D = Twist2D {
        vx: 0.5,
        vy: 0.0,
        omega: 0.3,
    };

    #[test]
    fn pushes_in_order() {
        let mut buf = DelayBuffer::new(0.5).unwrap();
        buf.push_command(A, 0.0).unwrap();
        buf.push_command(B, 0.02).unwrap();
        let stamps: Vec<f64> = buf.entries().map(|e| e.stamp).collect();
        assert_eq!(stamps, vec![0.0, 0.02]);
    }

    #[test]
    fn rejects_backwards_stamp() {
        let mut buf = DelayBuffer::new(0.5).unwrap();
        buf.push_command(A, 0.02).unwrap();
        assert_eq!(
            buf.push_command(B, 0.01),
            Err(DelayError::NonMonotonicStamp {
                stamp: 0.01,
                last: 0.02
            })
        );
    }

    #[test]
    fn thousand_pushes() {
        let mut buf = DelayBuffer::new(100.0).unwrap();
        for k in 0..1000 {
            buf.push_command(A, k as f64 * 0.02).unwrap();
        }
        assert_eq!(buf.len(), 1000);
        for (k, e) in buf.entries().enumerate() {
            assert_eq!(e.stamp, k as f64 * 0.02);
        }
    }

    #[test]
    fn maturity() {
        let mut buf = DelayBuffer::new(0.5).unwrap();
        buf.push_command(A, 0.0).unwrap();
        assert_eq!(buf.sample_delayed(0.4), Twist2D::ZERO);
        assert_eq!(buf.sample_delayed(0.5), A);

        let mut buf = DelayBuffer::new(0.5).unwrap();
        buf.push_command(A, 0.0).unwrap();
        buf.push_command(B, 0.1).unwrap();
        assert_eq!(buf.sample_delayed(0.55), A);
        assert_eq!(buf.sample_delayed(0.6), B);
        // zero-order hold
        assert_eq!(buf.sample_delayed(5.0), B);
    }

    #[test]
    fn zero_delay_is_pass_through() {
        let mut buf = DelayBuffer::new(0.0).unwrap();
        buf.push_command(B, 1.0).unwrap();
        assert_eq!(buf.sample_delayed(1.0), B);
    }

    #[test]
    fn delay_change_keeps_in_flight_maturity() {
        let mut buf = DelayBuffer::new(0.5).unwrap();
        buf.push_command(A, 0.0).unwrap();
        buf.set_delay(1.0).unwrap();
        buf.push_command(B, 0.1).unwrap();
        assert_eq!(buf.sample_delayed(0.5), A);
        assert_eq!(buf.sample_delayed(1.09), A);
        assert_eq!(buf.sample_delayed(1.1), B);
        assert_eq!(buf.set_delay(-0.1), Err(DelayError::InvalidDelay(-0.1)));
    }

    #[test]
    fn two_second_delay_first_output_at_tick_100() {
        let mut buf = DelayBuffer::new(2.0).unwrap();
        let mut first = None;
        for k in 0..200 {
            let t = k as f64 * 0.02;
            buf.push_command(A, t).unwrap();
            if first.is_none() && !buf.sample_delayed(t).is_zero() {
                first = Some(k);
            }
        }
        assert_eq!(first, Some(100));
    }

    #[test]
    fn same_stamp_replaces() {
        let mut buf = DelayBuffer::new(0.0).unwrap();
        buf.push_command(A, 0.0).unwrap();
        buf.push_command(B, 0.0).unwrap();
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.sample_delayed(0.0), B);
    }

    #[test]
    fn steady_rate_length_bound() {
        let delay = 1.0;
        let mut buf = DelayBuffer::new(delay).unwrap();
        let bound = (delay / 0.02_f64).ceil() as usize + 1;
        for k in 0..500 {
            let t = k as f64 * 0.02;
            buf.push_command(A, t).unwrap();
            buf.sample_delayed(t);
            assert!(buf.len() <= bound);
        }
    }
}
