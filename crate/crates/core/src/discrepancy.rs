//! Memorization discrepancy, threshold schedules, and the interval analyses.
//!
//! The discrepancy of a sample is `D(f(x; historical), f(x; current))`. For
//! KL the historical model's output is the first argument.

use std::io::Write;

use crate::checkpoints::{CheckpointStore, Selector};
use crate::error::{Error, Result};
use crate::exec::{collect_ordered, Exec};
use crate::numcore::{cross_entropy_loss, forward_probs, Batch, Matrix, Measure, ParamState};
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct MdReport {
    pub per_sample: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub measure: Measure,
    pub interval_k: Option<usize>,
    pub current_step: Option<u64>,
    pub aux_step: Option<u64>,
}

impl MdReport {
    fn from_values(per_sample: Vec<f64>, measure: Measure) -> Self {
        Self {
            mean: stats::mean(&per_sample),
            std: stats::std_dev(&per_sample),
            per_sample,
            measure,
            interval_k: None,
            current_step: None,
            aux_step: None,
        }
    }
}

/// Per-sample discrepancy between `historical` and `current` outputs.
pub fn memorization_discrepancy(
    current: &ParamState,
    historical: &ParamState,
    features: &Matrix,
    measure: Measure,
) -> Result<MdReport> {
    if current.shape() != historical.shape() {
        return Err(Error::InvalidArgument(
            "current and historical parameters have different shapes".into(),
        ));
    }
    let p_now = forward_probs(current, features)?;
    let p_old = forward_probs(historical, features)?;
    let per_sample = p_old
        .iter_rows()
        .zip(p_now.iter_rows())
        .map(|(old, now)| measure.eval(old, now))
        .collect();
    Ok(MdReport::from_values(per_sample, measure))
}

/// Batch-indexed threshold `P = mu + tau * m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSchedule {
    pub mu: f64,
    pub tau: f64,
}

impl ThresholdSchedule {
    pub fn new(mu: f64, tau: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) || !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "threshold schedule needs mu > 0 and tau >= 0 (got mu={mu}, tau={tau})"
            )));
        }
        Ok(Self { mu, tau })
    }

    pub fn threshold_at(&self, m: u64) -> f64 {
        self.mu + self.tau * m as f64
    }
}

pub fn threshold_at(schedule: &ThresholdSchedule, m: u64) -> f64 {
    schedule.threshold_at(m)
}

/// Fits `mean = a + b m` over clean batches; `mu = a + margin * residual_std`,
/// `tau = max(b, 0)`.
pub fn estimate_schedule(series: &[(i64, f64)], margin: f64) -> Result<ThresholdSchedule> {
    if series.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "schedule estimation needs >= 3 points, got {}",
            series.len()
        )));
    }
    let xs: Vec<f64> = series.iter().map(|&(m, _)| m as f64).collect();
    let ys: Vec<f64> = series.iter().map(|&(_, v)| v).collect();
    let fit = stats::line_fit(&xs, &ys)?;
    let mu = (fit.intercept + margin * fit.residual_std).max(f64::MIN_POSITIVE);
    ThresholdSchedule::new(mu, fit.slope.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl From<&MdReport> for Summary {
    fn from(r: &MdReport) -> Self {
        Self {
            mean: r.mean,
            std: r.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub clean: Summary,
    pub poison: Summary,
    pub ood: Option<Summary>,
}

fn sweep_rows(
    store: &CheckpointStore,
    batches: &[&Matrix],
    k_list: &[usize],
    measure: Measure,
    exec: Exec,
) -> Result<Vec<Vec<Summary>>> {
    let current = store.fetch_params(Selector::BackK(0))?;
    // resolve every k up front so lookup failures surface before any work
    let historical: Vec<ParamState> = k_list
        .iter()
        .map(|&k| store.fetch_params(Selector::BackK(k)))
        .collect::<Result<_>>()?;
    let rows = exec.map_slice(&historical, |old| {
        batches
            .iter()
            .map(|f| memorization_discrepancy(&current, old, f, measure).map(|r| Summary::from(&r)))
            .collect::<Result<Vec<_>>>()
    });
    collect_ordered(rows)
}

/// Mean discrepancy of a clean and a poisoned batch against each back-`k`
/// checkpoint.
pub fn interval_sweep(
    store: &CheckpointStore,
    clean: &Batch,
    poison: &Batch,
    k_list: &[usize],
    measure: Measure,
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    let rows = sweep_rows(store, &[&clean.features, &poison.features], k_list, measure, exec)?;
    Ok(k_list
        .iter()
        .zip(rows)
        .map(|(&k, r)| SweepRow {
            k,
            clean: r[0],
            poison: r[1],
            ood: None,
        })
        .collect())
}

/// [`interval_sweep`] plus an out-of-distribution column.
pub fn ood_compare(
    store: &CheckpointStore,
    clean: &Batch,
    poison: &Batch,
    ood: &Batch,
    k_list: &[usize],
    measure: Measure,
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    let rows = sweep_rows(
        store,
        &[&clean.features, &poison.features, &ood.features],
        k_list,
        measure,
        exec,
    )?;
    Ok(k_list
        .iter()
        .zip(rows)
        .map(|(&k, r)| SweepRow {
            k,
            clean: r[0],
            poison: r[1],
            ood: Some(r[2]),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationRow {
    pub k: usize,
    /// Poison minus clean discrepancy across the two model stages.
    pub md_gap: f64,
    /// `L(S; historical) - L(S; current)` on the clean set.
    pub loss_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    /// `None` when either series is constant over the window.
    pub pearson: Option<f64>,
}

/// Correlates the discrepancy gap between poisoned and clean samples with the
/// clean-loss gap across backtracking intervals.
///
/// `poison_of` crafts the poisoned version of `clean` against the given
/// model, so the poisoned inputs at each stage are generated on that stage.
pub fn correlation_check<G>(
    store: &CheckpointStore,
    clean: &Batch,
    poison_of: G,
    k_window: &[usize],
    measure: Measure,
    exec: Exec,
) -> Result<CorrelationReport>
where
    G: Fn(&ParamState) -> Result<Batch> + Sync + Send,
{
    if k_window.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "correlation window needs >= 3 intervals, got {}",
            k_window.len()
        )));
    }
    let current = store.fetch_params(Selector::BackK(0))?;
    let historical: Vec<ParamState> = k_window
        .iter()
        .map(|&k| store.fetch_params(Selector::BackK(k)))
        .collect::<Result<_>>()?;
    let poison_now = poison_of(&current)?;
    let loss_now = cross_entropy_loss(&current, clean)?;
    let p_now_poison = forward_probs(&current, &poison_now.features)?;
    let rows = exec.map_range(k_window.len(), |i| -> Result<CorrelationRow> {
        let old = &historical[i];
        let poison_old = poison_of(old)?;
        let p_old_poison = forward_probs(old, &poison_old.features)?;
        // Current model first on both sides, unlike the MD itself.
        let poison_md: Vec<f64> = p_now_poison
            .iter_rows()
            .zip(p_old_poison.iter_rows())
            .map(|(now, then)| measure.eval(now, then))
            .collect();
        let clean_md = memorization_discrepancy(old, &current, &clean.features, measure)?;
        Ok(CorrelationRow {
            k: k_window[i],
            md_gap: stats::mean(&poison_md) - clean_md.mean,
            loss_gap: cross_entropy_loss(old, clean)? - loss_now,
        })
    });
    let rows = collect_ordered(rows)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.md_gap).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.loss_gap).collect();
    Ok(CorrelationReport {
        pearson: stats::pearson(&xs, &ys),
        rows,
    })
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const SWEEP_HEADER: &str = "k,mean_clean,std_clean,mean_poison,std_poison";
pub const SWEEP_HEADER_OOD: &str = "k,mean_clean,std_clean,mean_poison,std_poison,mean_ood,std_ood";

/// Writes sweep rows; the OOD columns appear when every row carries them.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    let with_ood = !rows.is_empty() && rows.iter().all(|r| r.ood.is_some());
    writeln!(w, "{}", if with_ood { SWEEP_HEADER_OOD } else { SWEEP_HEADER })?;
    for r in rows {
        write!(
            w,
            "{},{},{},{},{}",
            r.k,
            fmt_f64(r.clean.mean),
            fmt_f64(r.clean.std),
            fmt_f64(r.poison.mean),
            fmt_f64(r.poison.std)
        )?;
        if with_ood {
            let o = r.ood.unwrap();
            write!(w, ",{},{}", fmt_f64(o.mean), fmt_f64(o.std))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub const CORRELATION_HEADER: &str = "window,k,md_gap,loss_gap";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::ModelShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_arithmetic() {
        let s = ThresholdSchedule::new(0.5, 0.02).unwrap();
        assert_eq!(s.threshold_at(3), 0.56);
        let s = ThresholdSchedule::new(1.7, 0.1).unwrap();
        assert_eq!(s.threshold_at(10), 2.7);
        let s = ThresholdSchedule::new(0.3, 0.0).unwrap();
        assert!((0..50).all(|m| s.threshold_at(m) == 0.3));
        assert!(ThresholdSchedule::new(0.0, 0.1).is_err());
        assert!(ThresholdSchedule::new(0.1, -0.1).is_err());
    }

    #[test]
    fn estimate_exact_and_constant() {
        let lin: Vec<(i64, f64)> = (0..12).map(|m| (m, 0.1 + 0.02 * m as f64)).collect();
        let s = estimate_schedule(&lin, 0.0).unwrap();
        assert!((s.mu - 0.1).abs() < 1e-9 && (s.tau - 0.02).abs() < 1e-9);
        let flat: Vec<(i64, f64)> = (0..5).map(|m| (m, 0.7)).collect();
        let s = estimate_schedule(&flat, 2.0).unwrap();
        assert!((s.mu - 0.7).abs() < 1e-12 && s.tau == 0.0);
        assert!(estimate_schedule(&[(1, 0.1), (1, 0.2), (1, 0.3)], 0.0).is_err());
        assert!(estimate_schedule(&[(1, 0.1), (2, 0.2)], 0.0).is_err());
    }

    #[test]
    fn identical_models_have_zero_discrepancy() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let p = ParamState::init(ModelShape::mlp(&[3, 4, 3]).unwrap(), &mut r);
        let f = Matrix::new(6, 3, (0..18).map(|_| r.random()).collect()).unwrap();
        for m in [Measure::Kl, Measure::Js] {
            let rep = memorization_discrepancy(&p, &p, &f, m).unwrap();
            assert!(rep.per_sample.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn csv_header_with_and_without_ood() {
        let s = Summary { mean: 0.5, std: 0.25 };
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[SweepRow { k: 1, clean: s, poison: s, ood: None }]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_HEADER);
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "1,5.0000000000000000e-1,2.5000000000000000e-1,5.0000000000000000e-1,2.5000000000000000e-1"
        );
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[SweepRow { k: 1, clean: s, poison: s, ood: Some(s) }]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(SWEEP_HEADER_OOD));
    }
}
