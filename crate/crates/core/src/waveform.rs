//! Piecewise-constant optical power waveforms.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub duration: f64,
    pub power: f64,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Optical power incident on the detector. Time not covered by a segment is dark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalWaveform {
    segments: Vec<Segment>,
    total_duration: f64,
}

impl OpticalWaveform {
    pub fn new(segments: Vec<Segment>, total_duration: f64) -> Result<Self> {
        if !(total_duration.is_finite() && total_duration > 0.0) {
            return Err(ModelError::InvalidInput(format!(
                "waveform duration must be positive, got {total_duration}"
            )));
        }
        let mut previous_end = 0.0;
        for (i, s) in segments.iter().enumerate() {
            if !(s.power.is_finite() && s.power >= 0.0) {
                return Err(ModelError::InvalidInput(format!("segment {i}: power {} W", s.power)));
            }
            if !(s.duration.is_finite() && s.duration > 0.0 && s.start.is_finite()) {
                return Err(ModelError::InvalidInput(format!("segment {i}: bad timing")));
            }
            let slack = 1e-12 * total_duration;
            if s.start < previous_end - slack || s.end() > total_duration + slack {
                return Err(ModelError::InvalidInput(format!(
                    "segment {i} overlaps its neighbour or leaves [0, {total_duration}]"
                )));
            }
            previous_end = s.end();
        }
        Ok(OpticalWaveform { segments, total_duration })
    }

    pub fn constant(power: f64, total_duration: f64) -> Result<Self> {
        Self::new(vec![Segment { start: 0.0, duration: total_duration, power }], total_duration)
    }

    pub fn dark(total_duration: f64) -> Result<Self> {
        Self::new(Vec::new(), total_duration)
    }

    /// Sums possibly overlapping layers into non-overlapping segments. Layers are
    /// clipped to `[0, total_duration]`.
    pub fn from_layers(layers: &[Segment], total_duration: f64) -> Result<Self> {
        let mut edges: Vec<(f64, f64)> = Vec::with_capacity(layers.len() * 2);
        for layer in layers {
            let a = layer.start.max(0.0);
            let b = layer.end().min(total_duration);
            if b > a && layer.power != 0.0 {
                edges.push((a, layer.power));
                edges.push((b, -layer.power));
            }
        }
        edges.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut segments: Vec<Segment> = Vec::new();
        let mut level = 0.0;
        let mut i = 0;
        while i < edges.len() {
            let t = edges[i].0;
            while i < edges.len() && edges[i].0 == t {
                level += edges[i].1;
                i += 1;
            }
            // Cancelling layers can leave rounding residue.
            if level.abs() < 1e-30 {
                level = 0.0;
            }
            if let Some(&(next, _)) = edges.get(i) {
                if level > 0.0 && next > t {
                    match segments.last_mut() {
                        Some(last) if last.end() == t && last.power == level => {
                            last.duration = next - last.start;
                        }
                        _ => segments.push(Segment { start: t, duration: next - t, power: level }),
                    }
                }
            }
        }
        Self::new(segments, total_duration)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    fn index_at(&self, t: f64) -> usize {
        self.segments.partition_point(|s| s.end() <= t)
    }

    pub fn power_at(&self, t: f64) -> f64 {
        match self.segments.get(self.index_at(t)) {
            Some(s) if s.start <= t => s.power,
            _ => 0.0,
        }
    }

    /// Optical energy delivered in `[a, b)` (J).
    pub fn energy(&self, a: f64, b: f64) -> f64 {
        let mut energy = 0.0;
        let mut cursor = self.index_at(a);
        self.for_each_piece(a, b, &mut cursor, |s, e, p| energy += p * (e - s));
        energy
    }

    pub fn mean_power(&self, a: f64, b: f64) -> f64 {
        if b > a {
            self.energy(a, b) / (b - a)
        } else {
            self.power_at(a)
        }
    }

    pub fn peak_power(&self, a: f64, b: f64) -> f64 {
        let mut peak: f64 = 0.0;
        let mut cursor = self.index_at(a);
        self.for_each_piece(a, b, &mut cursor, |_, _, p| peak = peak.max(p));
        peak
    }

    pub fn total_energy(&self) -> f64 {
        self.segments.iter().map(|s| s.power * s.duration).sum()
    }

    pub fn average_power(&self) -> f64 {
        self.total_energy() / self.total_duration
    }

    /// Visits the constant-power pieces covering `[a, b)`, dark gaps included.
    /// `cursor` is a segment index hint that only moves forward, so sequential
    /// scans over a long waveform stay linear.
    pub fn for_each_piece(
        &self,
        a: f64,
        b: f64,
        cursor: &mut usize,
        mut f: impl FnMut(f64, f64, f64),
    ) {
        while *cursor < self.segments.len() && self.segments[*cursor].end() <= a {
            *cursor += 1;
        }
        let mut t = a;
        let mut i = *cursor;
        while t < b {
            match self.segments.get(i) {
                Some(s) if s.start < b => {
                    if s.start > t {
                        f(t, s.start, 0.0);
                        t = s.start;
                    }
                    let end = s.end().min(b);
                    if end > t {
                        f(t, end, s.power);
                        t = end;
                    }
                    if s.end() <= b {
                        i += 1;
                    } else {
                        break;
                    }
                }
                _ => {
                    f(t, b, 0.0);
                    t = b;
                }
            }
        }
    }
}
