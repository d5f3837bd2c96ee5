//! Trajectories: reference generation, CSV ingestion, interpolation and normalization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CoupledOscillatorField, VectorField, WhiteDwarfField};
use crate::rk::{step, Method};

/// Sampled solution: strictly increasing times and one finite row per time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Data(format!(
                "trajectory needs matching, non-empty times and values ({} vs {})",
                times.len(),
                values.len()
            )));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!(
                "times must be strictly increasing (t[{i}] = {}, t[{}] = {})",
                times[i],
                i + 1,
                times[i + 1]
            )));
        }
        let d = values[0].len();
        if d == 0 || values.iter().any(|row| row.len() != d) {
            return Err(Error::Data("every row needs the same, non-zero number of channels".into()));
        }
        if times.iter().chain(values.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Data("trajectory contains non-finite values".into()));
        }
        Ok(Trajectory { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Writes `t,y0,...,y{d-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim()).map(|i| format!("y{i}")));
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            let mut rec = vec![format!("{t:e}")];
            rec.extend(row.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a CSV with a header row, a time column and at least one value column.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let columns = rdr.headers()?.len();
        if columns < 2 {
            return Err(Error::Data(format!("need a time column and at least one value column, got {columns}")));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line() as usize);
            let mut parsed = Vec::with_capacity(columns);
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    column: j + 1,
                    message: format!("'{cell}' is not a number"),
                })?;
                parsed.push(v);
            }
            times.push(parsed[0]);
            values.push(parsed.split_off(1));
        }
        Self::new(times, values)
    }

    /// Linear interpolation at `t` inside the sampled range.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        let (first, last) = (self.times[0], *self.times.last().unwrap());
        if !(t >= first && t <= last) {
            return Err(Error::Data(format!("query time {t} outside [{first}, {last}]")));
        }
        let i = self.times.partition_point(|&s| s <= t);
        if i == self.times.len() {
            return Ok(self.values[i - 1].clone());
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        Ok(self.values[i - 1]
            .iter()
            .zip(&self.values[i])
            .map(|(a, b)| a + w * (b - a))
            .collect())
    }

    /// Resamples onto `n_points ≥ 2` uniform times over `[t_start, t_end]`.
    pub fn resample(&self, t_start: f64, t_end: f64, n_points: usize) -> Result<Self> {
        let times = uniform_grid(t_start, t_end, n_points)?;
        let values = times.iter().map(|&t| self.interpolate(t)).collect::<Result<Vec<_>>>()?;
        Self::new(times, values)
    }
}

pub fn uniform_grid(t_start: f64, t_end: f64, n_points: usize) -> Result<Vec<f64>> {
    if n_points < 2 || !(t_end > t_start) {
        return Err(Error::Config(format!(
            "uniform grid needs n_points ≥ 2 and t_end > t_start (got {n_points} on [{t_start}, {t_end}])"
        )));
    }
    let span = t_end - t_start;
    let last = (n_points - 1) as f64;
    Ok((0..n_points).map(|i| t_start + span * (i as f64 / last)).collect())
}

/// Per-channel mean and variance used to normalize a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    /// Floored at [`VARIANCE_FLOOR`].
    pub variance: Vec<f64>,
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

impl Normalization {
    pub fn fit(traj: &Trajectory) -> Self {
        let m = traj.len() as f64;
        let d = traj.dim();
        let mut mean = vec![0.0; d];
        for row in traj.values() {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v / m;
            }
        }
        let mut variance = vec![0.0; d];
        for row in traj.values() {
            for ((a, v), mu) in variance.iter_mut().zip(row).zip(&mean) {
                *a += (v - mu).powi(2) / m;
            }
        }
        variance.iter_mut().for_each(|v| *v = v.max(VARIANCE_FLOOR));
        Normalization { mean, variance }
    }

    fn map(&self, traj: &Trajectory, f: impl Fn(f64, f64, f64) -> f64) -> Result<Trajectory> {
        let values = traj
            .values()
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.variance)
                    .map(|((v, mu), var)| f(*v, *mu, var.sqrt()))
                    .collect()
            })
            .collect();
        Trajectory::new(traj.times().to_vec(), values)
    }

    pub fn apply(&self, traj: &Trajectory) -> Result<Trajectory> {
        self.map(traj, |v, mu, sd| (v - mu) / sd)
    }

    pub fn invert(&self, traj: &Trajectory) -> Result<Trajectory> {
        self.map(traj, |v, mu, sd| v * sd + mu)
    }
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub trajectory: Trajectory,
    pub normalization: Option<Normalization>,
}

/// Reads a CSV series, resamples it linearly onto `n_points` uniform times
/// over `t_range` (the full recorded span when `None`), and optionally
/// normalizes each channel to zero mean and unit variance.
pub fn ingest_csv(path: &Path, t_range: Option<(f64, f64)>, n_points: usize, normalize: bool) -> Result<Ingested> {
    let raw = Trajectory::read_csv(path)?;
    let (a, b) = t_range.unwrap_or((raw.times()[0], *raw.times().last().unwrap()));
    let resampled = raw.resample(a, b, n_points)?;
    if normalize {
        let norm = Normalization::fit(&resampled);
        Ok(Ingested {
            trajectory: norm.apply(&resampled)?,
            normalization: Some(norm),
        })
    } else {
        Ok(Ingested {
            trajectory: resampled,
            normalization: None,
        })
    }
}

/// Samples the solution of `field` from `y0` at `times` with RK4 substeps of
/// size at most `h_max`.
pub fn sample_reference(field: &dyn VectorField, y0: &[f64], times: &[f64], h_max: f64) -> Result<Trajectory> {
    let tab = Method::Rk4.tableau();
    let mut y = y0.to_vec();
    let mut values = vec![y.clone()];
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let substeps = (span / h_max).ceil().max(1.0) as usize;
        let h = span / substeps as f64;
        for k in 0..substeps {
            let t = w[0] + k as f64 * h;
            let out = step(field, &tab, t, &y, h)?;
            y.iter_mut().zip(&out.increment).for_each(|(a, b)| *a += b);
        }
        values.push(y.clone());
    }
    Trajectory::new(times.to_vec(), values)
}

pub const REFERENCE_H_MAX: f64 = 1e-4;

/// White dwarf profile from `φ(0) = 1, φ′(0) = 0` on `n_points` uniform radii in `[0, r_end]`.
pub fn generate_white_dwarf(c: f64, r_end: f64, n_points: usize) -> Result<Trajectory> {
    generate_white_dwarf_with(c, r_end, n_points, REFERENCE_H_MAX)
}

pub fn generate_white_dwarf_with(c: f64, r_end: f64, n_points: usize, h_max: f64) -> Result<Trajectory> {
    let field = WhiteDwarfField::new(c)?;
    sample_reference(&field, &[1.0, 0.0], &uniform_grid(0.0, r_end, n_points)?, h_max)
}

/// Synthetic stand-in series from two coupled damped springs (not measured data).
pub fn generate_coupled_oscillator(t_end: f64, n_points: usize) -> Result<Trajectory> {
    let field = CoupledOscillatorField::default();
    sample_reference(&field, &[1.0, 0.0, 0.0, 0.5], &uniform_grid(0.0, t_end, n_points)?, REFERENCE_H_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn two_row_midpoint_is_the_mean() {
        let csv = "t,a,b\n0,1,10\n2,3,-10\n";
        let traj = Trajectory::from_reader(csv.as_bytes()).unwrap();
        assert_eq!(traj.interpolate(1.0).unwrap(), vec![2.0, 0.0]);
        assert_eq!(traj.interpolate(2.0).unwrap(), vec![3.0, -10.0]);
        assert!(traj.interpolate(2.5).is_err());
    }

    #[test]
    fn unsorted_or_duplicate_times_are_data_errors() {
        for csv in ["t,a\n0,1\n0,2\n", "t,a\n1,1\n0,2\n"] {
            assert!(matches!(Trajectory::from_reader(csv.as_bytes()), Err(Error::Data(_))));
        }
    }

    #[test]
    fn bad_cell_reports_row_and_column() {
        let csv = "t,a,b\n0,1,2\n1,x,3\n";
        match Trajectory::from_reader(csv.as_bytes()) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let traj = Trajectory::new(vec![0.0, 1.0, 2.0], vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]]).unwrap();
        let norm = Normalization::fit(&traj);
        assert_eq!(norm.variance[0], VARIANCE_FLOOR);
        let n = norm.apply(&traj).unwrap();
        assert!(n.values().iter().all(|row| row[0] == 0.0));
        let back = norm.invert(&n).unwrap();
        for (a, b) in back.values().iter().flatten().zip(traj.values().iter().flatten()) {
            approx::assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn ingest_resamples_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "time,x,y").unwrap();
        for i in 0..20 {
            let t = i as f64 * 0.37;
            writeln!(f, "{t},{},{}", t.sin(), 3.0 + 0.5 * t).unwrap();
        }
        drop(f);
        let ing = ingest_csv(&path, None, 50, true).unwrap();
        assert_eq!(ing.trajectory.len(), 50);
        let norm = ing.normalization.unwrap();
        let raw = Trajectory::read_csv(&path).unwrap().resample(0.0, 19.0 * 0.37, 50).unwrap();
        let back = norm.invert(&ing.trajectory).unwrap();
        for (a, b) in back.values().iter().flatten().zip(raw.values().iter().flatten()) {
            approx::assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        let out = dir.path().join("out.csv");
        raw.write_csv(&out).unwrap();
        assert_eq!(Trajectory::read_csv(&out).unwrap(), raw);
    }

    #[test]
    fn white_dwarf_reference_properties() {
        let traj = generate_white_dwarf(0.001, 5.0, 101).unwrap();
        assert_eq!(traj.values()[0], vec![1.0, 0.0]);
        assert!(traj.values().windows(2).all(|w| w[1][0] <= w[0][0]));
        let fine = generate_white_dwarf_with(0.001, 5.0, 101, REFERENCE_H_MAX / 2.0).unwrap();
        for (a, b) in traj.values().iter().flatten().zip(fine.values().iter().flatten()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn white_dwarf_origin_matches_a_tight_solve_started_off_the_singularity() {
        // series start at r = 1e-6 avoids the regularized origin entirely
        let c = 0.001;
        let phi2 = -(1.0f64 - c).powf(1.5) / 3.0;
        let r0 = 1e-6;
        let field = WhiteDwarfField::new(c).unwrap();
        let y0 = [1.0 + 0.5 * phi2 * r0 * r0, phi2 * r0];
        let off = sample_reference(&field, &y0, &[r0, 1.0], 1e-5).unwrap();
        let on = generate_white_dwarf_with(c, 1.0, 2, 1e-5).unwrap();
        for (a, b) in off.values()[1].iter().zip(&on.values()[1]) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}
