//! Time signals feeding boundary inputs and history maps.

use std::sync::Arc;

/// Multi-channel real signal of time.
///
/// `value` returns `None` outside the interval where the signal is defined.
/// `left_value` is the left limit, which differs from `value` only at jumps.
pub trait Signal: Send + Sync {
    fn channels(&self) -> usize;
    fn value(&self, channel: usize, t: f64) -> Option<f64>;
    fn left_value(&self, channel: usize, t: f64) -> Option<f64> {
        self.value(channel, t)
    }
}

/// Uniformly sampled signal on `[t0, t0 + (len - 1) dt]`, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    t0: f64,
    dt: f64,
    channels: Vec<Vec<f64>>,
}

impl SampledSignal {
    /// # Panics
    /// If `dt <= 0` or channels have different or fewer than two samples.
    pub fn new(t0: f64, dt: f64, channels: Vec<Vec<f64>>) -> Self {
        assert!(dt > 0.0, "sample step must be positive");
        let len = channels.first().map_or(0, Vec::len);
        assert!(len >= 2, "need at least two samples");
        assert!(channels.iter().all(|c| c.len() == len), "ragged channels");
        Self { t0, dt, channels }
    }

    pub fn from_fn(t0: f64, dt: f64, len: usize, nch: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let channels = (0..nch)
            .map(|c| (0..len).map(|i| f(c, t0 + i as f64 * dt)).collect())
            .collect();
        Self::new(t0, dt, channels)
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + (self.channels[0].len() - 1) as f64 * self.dt
    }

    pub fn samples(&self, channel: usize) -> &[f64] {
        &self.channels[channel]
    }
}

impl Signal for SampledSignal {
    fn channels(&self) -> usize {
        self.channels.len()
    }

    fn value(&self, channel: usize, t: f64) -> Option<f64> {
        let data = &self.channels[channel];
        let s = (t - self.t0) / self.dt;
        let last = (data.len() - 1) as f64;
        let slack = 1e-9;
        if s < -slack || s > last + slack {
            return None;
        }
        let s = s.clamp(0.0, last);
        let i = (s.floor() as usize).min(data.len() - 2);
        let frac = s - i as f64;
        Some(data[i] * (1.0 - frac) + data[i + 1] * frac)
    }
}

/// `t -> exp(rate t) * amplitudes`, defined for all `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpSignal {
    pub rate: f64,
    pub amplitudes: Vec<f64>,
}

impl Signal for ExpSignal {
    fn channels(&self) -> usize {
        self.amplitudes.len()
    }

    fn value(&self, channel: usize, t: f64) -> Option<f64> {
        Some(self.amplitudes[channel] * (self.rate * t).exp())
    }
}

/// Signal given by a closure, defined on `[start, end]`.
#[derive(Clone)]
pub struct FnSignal {
    channels: usize,
    start: f64,
    end: f64,
    f: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>,
}

impl FnSignal {
    pub fn new(channels: usize, start: f64, end: f64, f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            channels,
            start,
            end,
            f: Arc::new(f),
        }
    }
}

impl std::fmt::Debug for FnSignal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnSignal")
            .field("channels", &self.channels)
            .field("start", &self.start)
            .field("end", &self.end)
            .finish_non_exhaustive()
    }
}

impl Signal for FnSignal {
    fn channels(&self) -> usize {
        self.channels
    }

    fn value(&self, channel: usize, t: f64) -> Option<f64> {
        (t >= self.start - 1e-12 && t <= self.end + 1e-12).then(|| (self.f)(channel, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_interpolation_and_range() {
        let s = SampledSignal::new(0.0, 0.5, vec![vec![0.0, 1.0, 3.0]]);
        assert_eq!(s.value(0, 0.25), Some(0.5));
        assert_eq!(s.value(0, 1.0), Some(3.0));
        assert_eq!(s.value(0, 0.75), Some(2.0));
        assert_eq!(s.value(0, 1.5), None);
        assert_eq!(s.value(0, -0.1), None);
        assert_eq!(s.t_end(), 1.0);
    }

    #[test]
    fn fn_signal_domain() {
        let s = FnSignal::new(2, 0.0, 1.0, |c, t| c as f64 + t);
        assert_eq!(s.value(1, 0.5), Some(1.5));
        assert_eq!(s.value(0, 2.0), None);
    }
}
