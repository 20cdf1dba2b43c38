//! Time-average occupation measures: 1D histograms, delay-coordinate phase
//! portraits, and window-to-window stability diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::solver::Trajectory;

/// Sampling window `t_k = start + k·stride`, `k = 0..=M`, `M = ⌊length/stride⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureWindow {
    pub start: f64,
    pub length: f64,
    /// Sampling interval; `None` uses every recorded sample.
    #[serde(default)]
    pub stride: Option<f64>,
}

impl MeasureWindow {
    pub fn new(start: f64, length: f64) -> Self {
        MeasureWindow {
            start,
            length,
            stride: None,
        }
    }

    pub fn between(start: f64, end: f64) -> Self {
        Self::new(start, end - start)
    }

    pub fn with_stride(mut self, stride: f64) -> Self {
        self.stride = Some(stride);
        self
    }

    pub fn end(&self) -> f64 {
        self.start + self.length
    }

    /// `k` equal, touching windows covering `[start, end]`.
    pub fn split(start: f64, end: f64, k: usize) -> Vec<MeasureWindow> {
        let len = (end - start) / k as f64;
        (0..k)
            .map(|i| MeasureWindow::new(start + i as f64 * len, len))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.start >= 0.0 && self.start.is_finite()) {
            return Err(invalid(format!("window start must be >= 0, got {}", self.start)));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(invalid("empty measure window"));
        }
        if let Some(s) = self.stride {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("window stride must be positive"));
            }
        }
        Ok(())
    }

    /// Recorded-sample indices `(first, step, count)` for a trajectory.
    pub fn indices(&self, tr: &Trajectory) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let grid = |t: f64, what: &str| -> Result<usize> {
            let k = (t / tr.dt_out).round();
            if (k * tr.dt_out - t).abs() > 1e-6 * tr.dt_out {
                return Err(invalid(format!(
                    "window {what} {t} is not on the recorded grid (spacing {})",
                    tr.dt_out
                )));
            }
            Ok(k as usize)
        };
        let first = grid(self.start, "start")?;
        let step = match self.stride {
            None => 1,
            Some(s) => grid(s, "stride")?.max(1),
        };
        let span = ((self.length / tr.dt_out) * (1.0 + 1e-12)).floor() as usize;
        let count = span / step + 1;
        let last = first + (count - 1) * step;
        if last >= tr.len() {
            return Err(invalid(format!(
                "window [{}, {}] exceeds the trajectory horizon {}",
                self.start,
                self.end(),
                tr.t_last()
            )));
        }
        Ok((first, step, count))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("bin count must be >= 1"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("invalid histogram range [{lo}, {hi}]")));
        }
        Ok(Axis { lo, hi, bins })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = self.width();
        (0..=self.bins)
            .map(|i| if i == self.bins { self.hi } else { self.lo + i as f64 * w })
            .collect()
    }

    /// Bin `[lo + i·w, lo + (i+1)·w)`; `hi` belongs to the last bin.
    pub fn locate(&self, v: f64) -> Bin {
        if v < self.lo {
            Bin::Below
        } else if v > self.hi || v.is_nan() {
            Bin::Above
        } else if v == self.hi {
            Bin::In(self.bins - 1)
        } else {
            let i = ((v - self.lo) / (self.hi - self.lo) * self.bins as f64).floor() as usize;
            Bin::In(i.min(self.bins - 1))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bin {
    Below,
    In(usize),
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram1D {
    pub axis: Axis,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
    pub n_samples: u64,
}

impl Histogram1D {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        let axis = Axis::new(lo, hi, bins)?;
        Ok(Histogram1D {
            axis,
            counts: vec![0; bins],
            below: 0,
            above: 0,
            n_samples: 0,
        })
    }

    pub fn edges(&self) -> Vec<f64> {
        self.axis.edges()
    }

    pub fn add(&mut self, v: f64) {
        match self.axis.locate(v) {
            Bin::Below => self.below += 1,
            Bin::Above => self.above += 1,
            Bin::In(i) => self.counts[i] += 1,
        }
        self.n_samples += 1;
    }

    pub fn add_trajectory(&mut self, tr: &Trajectory, window: &MeasureWindow) -> Result<()> {
        let (first, step, count) = window.indices(tr)?;
        for k in 0..count {
            self.add(tr.values[first + k * step]);
        }
        Ok(())
    }

    /// Adds the counts of a histogram with identical binning.
    pub fn merge(&mut self, other: &Histogram1D) -> Result<()> {
        if self.axis != other.axis {
            return Err(invalid("cannot merge histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.below += other.below;
        self.above += other.above;
        self.n_samples += other.n_samples;
        Ok(())
    }

    pub fn mass(&self) -> Vec<f64> {
        let n = self.n_samples.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn out_of_range(&self) -> f64 {
        if self.n_samples == 0 {
            0.0
        } else {
            (self.below + self.above) as f64 / self.n_samples as f64
        }
    }

    pub fn mean(&self) -> f64 {
        let w = self.axis.width();
        let in_range: u64 = self.counts.iter().sum();
        if in_range == 0 {
            return f64::NAN;
        }
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * (self.axis.lo + (i as f64 + 0.5) * w))
            .sum::<f64>()
            / in_range as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "bin_lo,bin_hi,mass")?;
        let edges = self.edges();
        for (i, m) in self.mass().iter().enumerate() {
            writeln!(out, "{},{},{}", edges[i], edges[i + 1], m)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub x_axis: Axis,
    pub y_axis: Axis,
    /// Row-major: `counts[ix * y_bins + iy]`.
    pub counts: Vec<u64>,
    /// Pairs whose `x` is out of range, keyed by the `y` bin.
    pub x_outside_by_y: Vec<u64>,
    pub y_below: u64,
    pub y_above: u64,
    pub n_samples: u64,
}

impl Histogram2D {
    pub fn new(x_axis: Axis, y_axis: Axis) -> Self {
        Histogram2D {
            x_axis,
            y_axis,
            counts: vec![0; x_axis.bins * y_axis.bins],
            x_outside_by_y: vec![0; y_axis.bins],
            y_below: 0,
            y_above: 0,
            n_samples: 0,
        }
    }

    pub fn add(&mut self, x: f64, y: f64) {
        self.n_samples += 1;
        let iy = match self.y_axis.locate(y) {
            Bin::Below => {
                self.y_below += 1;
                return;
            }
            Bin::Above => {
                self.y_above += 1;
                return;
            }
            Bin::In(i) => i,
        };
        match self.x_axis.locate(x) {
            Bin::In(ix) => self.counts[ix * self.y_axis.bins + iy] += 1,
            _ => self.x_outside_by_y[iy] += 1,
        }
    }

    pub fn merge(&mut self, other: &Histogram2D) -> Result<()> {
        if self.x_axis != other.x_axis || self.y_axis != other.y_axis {
            return Err(invalid("cannot merge histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.x_outside_by_y.iter_mut().zip(&other.x_outside_by_y) {
            *a += b;
        }
        self.y_below += other.y_below;
        self.y_above += other.y_above;
        self.n_samples += other.n_samples;
        Ok(())
    }

    pub fn mass(&self, ix: usize, iy: usize) -> f64 {
        self.counts[ix * self.y_axis.bins + iy] as f64 / self.n_samples.max(1) as f64
    }

    pub fn out_of_range(&self) -> f64 {
        let inside: u64 = self.counts.iter().sum();
        (self.n_samples - inside) as f64 / self.n_samples.max(1) as f64
    }

    /// Distribution of the second coordinate.
    pub fn marginal_second(&self) -> Histogram1D {
        let counts = (0..self.y_axis.bins)
            .map(|iy| {
                (0..self.x_axis.bins)
                    .map(|ix| self.counts[ix * self.y_axis.bins + iy])
                    .sum::<u64>()
                    + self.x_outside_by_y[iy]
            })
            .collect();
        Histogram1D {
            axis: self.y_axis,
            counts,
            below: self.y_below,
            above: self.y_above,
            n_samples: self.n_samples,
        }
    }

    /// Long format `x_lo,x_hi,y_lo,y_hi,mass`.
    pub fn write_csv<W: Write>(&self, mut out: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "x_lo,x_hi,y_lo,y_hi,mass")?;
        let (xe, ye) = (self.x_axis.edges(), self.y_axis.edges());
        for ix in 0..self.x_axis.bins {
            for iy in 0..self.y_axis.bins {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    xe[ix],
                    xe[ix + 1],
                    ye[iy],
                    ye[iy + 1],
                    self.mass(ix, iy)
                )?;
            }
        }
        Ok(())
    }

    /// Dense matrix, one row per `x` bin.
    pub fn write_matrix<W: Write>(&self, mut out: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(out, "# {c}")?;
        }
        for ix in 0..self.x_axis.bins {
            let row: Vec<String> = (0..self.y_axis.bins)
                .map(|iy| self.mass(ix, iy).to_string())
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Occupation measure of an ensemble over a window (values as recorded).
pub fn occupation_histogram(
    trajectories: &[Trajectory],
    window: &MeasureWindow,
    bins: usize,
    range: (f64, f64),
) -> Result<Histogram1D> {
    if trajectories.is_empty() {
        return Err(invalid("no trajectories"));
    }
    let mut h = Histogram1D::new(range.0, range.1, bins)?;
    for tr in trajectories {
        h.add_trajectory(tr, window)?;
    }
    Ok(h)
}

/// Pairs `(x(t - τ), x(t))` of one trajectory over the window.
pub fn add_phase_pairs(h: &mut Histogram2D, tr: &Trajectory, window: &MeasureWindow) -> Result<()> {
    let d = tr
        .delay_samples
        .ok_or_else(|| invalid("record stride must divide the delay for phase portraits"))?;
    let (first, step, count) = window.indices(tr)?;
    if first < d {
        return Err(invalid("phase-portrait window must start at or after t = τ"));
    }
    for k in 0..count {
        let i = first + k * step;
        h.add(tr.values[i - d], tr.values[i]);
    }
    Ok(())
}

pub fn phase_portrait(
    trajectories: &[Trajectory],
    window: &MeasureWindow,
    bins: (usize, usize),
    x_range: (f64, f64),
    y_range: (f64, f64),
) -> Result<Histogram2D> {
    if trajectories.is_empty() {
        return Err(invalid("no trajectories"));
    }
    let mut h = Histogram2D::new(
        Axis::new(x_range.0, x_range.1, bins.0)?,
        Axis::new(y_range.0, y_range.1, bins.1)?,
    );
    for tr in trajectories {
        add_phase_pairs(&mut h, tr, window)?;
    }
    Ok(h)
}

/// L1 distance between bin masses (out-of-range mass included as one extra cell).
pub fn measure_distance(h1: &Histogram1D, h2: &Histogram1D) -> Result<f64> {
    if h1.axis != h2.axis {
        return Err(invalid("histograms have different binning"));
    }
    let (m1, m2) = (h1.mass(), h2.mass());
    let inside: f64 = m1.iter().zip(&m2).map(|(a, b)| (a - b).abs()).sum();
    let n1 = h1.n_samples.max(1) as f64;
    let n2 = h2.n_samples.max(1) as f64;
    let below = (h1.below as f64 / n1 - h2.below as f64 / n2).abs();
    let above = (h1.above as f64 / n1 - h2.above as f64 / n2).abs();
    Ok(inside + below + above)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub windows: Vec<MeasureWindow>,
    /// `(i, j, L1)` for every pair `i < j`.
    pub distances: Vec<(usize, usize, f64)>,
    pub max_distance: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn stationarity_report(
    trajectories: &[Trajectory],
    windows: &[MeasureWindow],
    bins: usize,
    range: (f64, f64),
    threshold: f64,
) -> Result<StationarityReport> {
    if windows.len() < 2 {
        return Err(invalid("stationarity report needs at least two windows"));
    }
    let mut sorted: Vec<&MeasureWindow> = windows.iter().collect();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    for w in sorted.windows(2) {
        if w[1].start < w[0].end() - 1e-9 * w[0].end().abs().max(1.0) {
            return Err(invalid("stationarity windows overlap"));
        }
    }
    let hists = windows
        .iter()
        .map(|w| occupation_histogram(trajectories, w, bins, range))
        .collect::<Result<Vec<_>>>()?;
    let mut distances = Vec::new();
    for i in 0..hists.len() {
        for j in i + 1..hists.len() {
            distances.push((i, j, measure_distance(&hists[i], &hists[j])?));
        }
    }
    let max_distance = distances.iter().map(|d| d.2).fold(0.0, f64::max);
    Ok(StationarityReport {
        windows: windows.to_vec(),
        distances,
        max_distance,
        threshold,
        pass: max_distance < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{Diagnostics, Space};

    fn constant(v: f64, n: usize) -> Trajectory {
        from_values(vec![v; n], 0.5)
    }

    fn from_values(values: Vec<f64>, dt_out: f64) -> Trajectory {
        Trajectory {
            dt_out,
            dt: dt_out,
            space: Space::Original,
            values,
            forcing: None,
            jump_log: Vec::new(),
            seed: 0,
            stream: 0,
            diagnostics: Diagnostics {
                blow_down: None,
                max_value: 0.0,
                min_value: 0.0,
            },
            delay_samples: Some(2),
        }
    }

    #[test]
    fn point_mass() {
        let h = occupation_histogram(&[constant(1.0, 41)], &MeasureWindow::new(2.0, 10.0), 10, (0.0, 2.0)).unwrap();
        let m = h.mass();
        assert_eq!(m[5], 1.0);
        assert_eq!(m.iter().sum::<f64>(), 1.0);
        assert_eq!(h.n_samples, 21);
    }

    #[test]
    fn two_point_masses_split_evenly() {
        let trs = [constant(0.25, 10), constant(0.75, 10)];
        let h = occupation_histogram(&trs, &MeasureWindow::new(0.0, 4.0), 2, (0.0, 1.0)).unwrap();
        assert_eq!(h.mass(), vec![0.5, 0.5]);
    }

    #[test]
    fn hand_counted_masses() {
        // Samples 0,1,2,3,4,0,1 at spacing 1; bins of width 1 on [0, 4].
        let tr = from_values(vec![0.0, 1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 9.0], 1.0);
        let h = occupation_histogram(&[tr], &MeasureWindow::new(0.0, 6.0), 4, (0.0, 4.0)).unwrap();
        assert_eq!(h.n_samples, 7);
        assert_eq!(h.counts, vec![2, 2, 1, 2]);
        assert_eq!(h.mass()[0], 2.0 / 7.0);
        assert_eq!(h.out_of_range(), 0.0);
    }

    #[test]
    fn stride_and_out_of_range() {
        let tr = from_values((0..20).map(|i| i as f64).collect(), 1.0);
        let w = MeasureWindow::new(2.0, 10.0).with_stride(2.0);
        let h = occupation_histogram(&[tr], &w, 5, (0.0, 10.0)).unwrap();
        // Samples 2,4,...,12: 12 falls above the range.
        assert_eq!(h.n_samples, 6);
        assert_eq!(h.above, 1);
        let total: f64 = h.mass().iter().sum::<f64>() + h.out_of_range();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_errors() {
        let tr = constant(1.0, 10);
        assert!(occupation_histogram(&[tr.clone()], &MeasureWindow::new(0.0, 0.0), 4, (0.0, 2.0)).is_err());
        assert!(occupation_histogram(&[tr.clone()], &MeasureWindow::new(0.0, 10.0), 4, (0.0, 2.0)).is_err());
        assert!(occupation_histogram(&[tr.clone()], &MeasureWindow::new(0.3, 1.0), 4, (0.0, 2.0)).is_err());
        assert!(occupation_histogram(&[tr], &MeasureWindow::new(0.0, 1.0), 0, (0.0, 2.0)).is_err());
    }

    #[test]
    fn phase_portrait_point_mass_and_marginal() {
        let h = phase_portrait(&[constant(1.0, 30)], &MeasureWindow::new(1.0, 10.0), (4, 4), (0.0, 2.0), (0.0, 2.0))
            .unwrap();
        assert_eq!(h.mass(2, 2), 1.0);

        let values: Vec<f64> = (0..200).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
        let tr = from_values(values, 0.5);
        let w = MeasureWindow::new(5.0, 80.0);
        let pp = phase_portrait(&[tr.clone()], &w, (7, 9), (0.5, 1.5), (0.2, 1.8)).unwrap();
        let direct = occupation_histogram(&[tr.clone()], &w, 9, (0.2, 1.8)).unwrap();
        assert_eq!(pp.marginal_second(), direct);
        assert!(phase_portrait(&[tr], &MeasureWindow::new(0.5, 5.0), (2, 2), (0.0, 2.0), (0.0, 2.0)).is_err());
    }

    #[test]
    fn distances() {
        let a = occupation_histogram(&[constant(0.25, 5)], &MeasureWindow::new(0.0, 1.0), 2, (0.0, 1.0)).unwrap();
        let b = occupation_histogram(&[constant(0.75, 5)], &MeasureWindow::new(0.0, 1.0), 2, (0.0, 1.0)).unwrap();
        assert_eq!(measure_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(measure_distance(&a, &b).unwrap(), 2.0);
        let c = Histogram1D::new(0.0, 1.0, 3).unwrap();
        assert!(measure_distance(&a, &c).is_err());
    }

    #[test]
    fn merge_is_order_independent() {
        let trs: Vec<Trajectory> = (0..4)
            .map(|s| from_values((0..50).map(|i| ((i * (s + 3)) % 7) as f64).collect(), 1.0))
            .collect();
        let w = MeasureWindow::new(3.0, 40.0);
        let partial: Vec<Histogram1D> = trs
            .iter()
            .map(|t| occupation_histogram(std::slice::from_ref(t), &w, 5, (0.0, 5.0)).unwrap())
            .collect();
        let mut fwd = partial[0].clone();
        for p in &partial[1..] {
            fwd.merge(p).unwrap();
        }
        let mut rev = partial[3].clone();
        for p in partial[..3].iter().rev() {
            rev.merge(p).unwrap();
        }
        assert_eq!(fwd, rev);
        assert_eq!(fwd, occupation_histogram(&trs, &w, 5, (0.0, 5.0)).unwrap());
    }

    #[test]
    fn stationarity_of_constant_and_overlap_error() {
        let tr = constant(1.0, 101);
        let windows = MeasureWindow::split(0.0, 50.0, 4);
        let rep = stationarity_report(&[tr.clone()], &windows, 10, (0.0, 2.0), 0.05).unwrap();
        assert_eq!(rep.distances.len(), 6);
        assert_eq!(rep.max_distance, 0.0);
        assert!(rep.pass);
        let overlapping = [MeasureWindow::new(0.0, 10.0), MeasureWindow::new(5.0, 10.0)];
        assert!(stationarity_report(&[tr.clone()], &overlapping, 10, (0.0, 2.0), 0.05).is_err());
        assert!(stationarity_report(&[tr], &windows[..1], 10, (0.0, 2.0), 0.05).is_err());
    }

    #[test]
    fn csv_exports() {
        let h = occupation_histogram(&[constant(0.25, 5)], &MeasureWindow::new(0.0, 1.0), 2, (0.0, 1.0)).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf, Some("config_hash=x")).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "# config_hash=x\nbin_lo,bin_hi,mass\n0,0.5,1\n0.5,1,0\n");

        let pp = phase_portrait(&[constant(1.0, 30)], &MeasureWindow::new(1.0, 2.0), (2, 2), (0.0, 2.0), (0.0, 2.0))
            .unwrap();
        let mut buf = Vec::new();
        pp.write_matrix(&mut buf, None).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0,0\n0,1\n");
        let mut buf = Vec::new();
        pp.write_csv(&mut buf, None).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
