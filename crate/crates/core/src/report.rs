//! Evaluation reporting: per-grasp prediction rows, across-seed
//! aggregates, rolling-window error profiles, per-category breakdowns
//! and a log-log scatter rendering.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Material, Shape};
use crate::metrics::{self, MetricSummary};
use crate::physics::{normalize_young, ModulusBounds, GELSIGHT_MODULUS_PA};
use crate::seed;
use crate::train::SeedOutcome;
use crate::{CoreError, Result};

/// One test grasp; field order fixes the `predictions.csv` columns.
/// `se` is the squared error on the normalized modulus scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub grasp_id: String,
    pub truth_pa: f64,
    pub pred_pa: f64,
    pub material: Material,
    pub shape: Shape,
    pub se: f64,
}

impl PredictionRow {
    /// Squared error over the standard nine-decade normalization.
    pub fn squared_error(pred_pa: f64, truth_pa: f64, bounds: &ModulusBounds) -> Result<f64> {
        let p = normalize_young(pred_pa, bounds)?;
        let t = normalize_young(truth_pa, bounds)?;
        Ok((p - t) * (p - t))
    }
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|_| CoreError::MissingFile(path.display().to_string()))?;
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<PredictionRow>().enumerate() {
        rows.push(record.map_err(|e| CoreError::MalformedRow {
            row: i + 2,
            reason: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Across-seed metric aggregate plus each seed's own numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    pub accuracy: f64,
    pub n_mse: f64,
    pub r_squared: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// A seed whose training or evaluation failed; the rest of the report
/// still stands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<SeedEval>,
    pub failures: Vec<SeedFailure>,
    pub accuracy: MetricSummary,
    pub n_mse: MetricSummary,
    pub r_squared: MetricSummary,
}

pub fn eval_report(outcomes: &[SeedOutcome], failures: &[SeedFailure]) -> EvalReport {
    let seeds: Vec<SeedEval> = outcomes
        .iter()
        .map(|o| SeedEval {
            seed: o.seed,
            accuracy: o.eval.accuracy,
            n_mse: o.eval.n_mse,
            r_squared: o.eval.r_squared,
            best_epoch: o.outcome.best_epoch,
            epochs_run: o.outcome.epochs_run,
        })
        .collect();
    let col = |f: fn(&SeedEval) -> f64| -> Vec<f64> { seeds.iter().map(f).collect() };
    EvalReport {
        accuracy: metrics::summarize(&col(|s| s.accuracy)),
        n_mse: metrics::summarize(&col(|s| s.n_mse)),
        r_squared: metrics::summarize(&col(|s| s.r_squared)),
        seeds,
        failures: failures.to_vec(),
    }
}

/// The seed with the lowest test error; ties break toward the lower
/// seed so the choice is reproducible.
pub fn best_seed(outcomes: &[SeedOutcome]) -> Option<&SeedOutcome> {
    outcomes.iter().min_by(|a, b| {
        a.eval
            .n_mse
            .total_cmp(&b.eval.n_mse)
            .then(a.seed.cmp(&b.seed))
    })
}

pub const WINDOW_COUNT: usize = 7;
pub const WINDOW_SPAN_DECADES: f64 = 3.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowStat {
    pub index: usize,
    pub log10_lo: f64,
    pub log10_hi: f64,
    /// Grasps whose truth falls in the window.
    pub total: usize,
    /// After undersampling to the smallest nonempty window.
    pub used: usize,
    /// Error normalized to this window's own three-decade span; absent
    /// for empty windows.
    pub n_mse: Option<f64>,
}

/// Error profile over seven overlapping three-decade windows. Every
/// window is undersampled to the same count so the numbers compare, and
/// each is normalized to its own span.
pub fn rolling_windows(rows: &[PredictionRow], sample_seed: u64) -> Result<Vec<WindowStat>> {
    if rows.is_empty() {
        return Err(CoreError::LengthMismatch("no prediction rows".into()));
    }
    let members: Vec<Vec<usize>> = (0..WINDOW_COUNT)
        .map(|k| {
            let lo = 10f64.powf(3.0 + k as f64);
            let hi = 10f64.powf(3.0 + k as f64 + WINDOW_SPAN_DECADES);
            rows.iter()
                .enumerate()
                .filter(|(_, r)| r.truth_pa >= lo && r.truth_pa < hi)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let floor = members
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| m.len())
        .min()
        .unwrap_or(0);
    let mut stats = Vec::with_capacity(WINDOW_COUNT);
    for (k, mut idx) in members.into_iter().enumerate() {
        let lo = 3.0 + k as f64;
        let hi = lo + WINDOW_SPAN_DECADES;
        let total = idx.len();
        let (used, n_mse) = if idx.is_empty() {
            (0, None)
        } else {
            let mut rng = seed::stream(sample_seed, &["window", &k.to_string()]);
            idx.shuffle(&mut rng);
            idx.truncate(floor);
            let bounds = ModulusBounds {
                log10_min: lo,
                log10_max: hi,
            };
            let mut preds = Vec::with_capacity(idx.len());
            let mut truths = Vec::with_capacity(idx.len());
            for &i in &idx {
                preds.push(normalize_young(rows[i].pred_pa, &bounds)?);
                truths.push(normalize_young(rows[i].truth_pa, &bounds)?);
            }
            (idx.len(), Some(metrics::n_mse(&preds, &truths)?))
        };
        stats.push(WindowStat {
            index: k,
            log10_lo: lo,
            log10_hi: hi,
            total,
            used,
            n_mse,
        });
    }
    Ok(stats)
}

pub fn write_windows(path: &Path, stats: &[WindowStat]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["index", "log10_lo", "log10_hi", "total", "used", "n_mse"])?;
    for s in stats {
        writer.write_record([
            s.index.to_string(),
            format!("{}", s.log10_lo),
            format!("{}", s.log10_hi),
            s.total.to_string(),
            s.used.to_string(),
            s.n_mse.map(|v| format!("{v}")).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakdownBy {
    Material,
    Shape,
    Window,
}

impl BreakdownBy {
    pub fn as_str(self) -> &'static str {
        match self {
            BreakdownBy::Material => "material",
            BreakdownBy::Shape => "shape",
            BreakdownBy::Window => "window",
        }
    }
}

impl FromStr for BreakdownBy {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "material" => Ok(BreakdownBy::Material),
            "shape" => Ok(BreakdownBy::Shape),
            "window" => Ok(BreakdownBy::Window),
            other => Err(CoreError::UnknownKey(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupStat {
    pub key: String,
    pub count: usize,
    pub accuracy: f64,
    pub n_mse: f64,
    /// Absent when the group's truths are constant.
    pub r_squared: Option<f64>,
}

/// Per-category metrics on the standard nine-decade normalization.
pub fn breakdown(rows: &[PredictionRow], by: BreakdownBy) -> Result<Vec<GroupStat>> {
    if rows.is_empty() {
        return Err(CoreError::LengthMismatch("no prediction rows".into()));
    }
    if by == BreakdownBy::Window {
        return Err(CoreError::Config(
            "window breakdown is the rolling-window report".into(),
        ));
    }
    let mut groups: BTreeMap<String, Vec<&PredictionRow>> = BTreeMap::new();
    for row in rows {
        let key = match by {
            BreakdownBy::Material => row.material.as_str(),
            BreakdownBy::Shape => row.shape.as_str(),
            BreakdownBy::Window => unreachable!(),
        };
        groups.entry(key.to_string()).or_default().push(row);
    }
    let bounds = ModulusBounds::default();
    let mut stats = Vec::with_capacity(groups.len());
    for (key, members) in groups {
        let preds_pa: Vec<f64> = members.iter().map(|r| r.pred_pa).collect();
        let truths_pa: Vec<f64> = members.iter().map(|r| r.truth_pa).collect();
        let mut preds = Vec::with_capacity(members.len());
        let mut truths = Vec::with_capacity(members.len());
        for r in &members {
            preds.push(normalize_young(r.pred_pa, &bounds)?);
            truths.push(normalize_young(r.truth_pa, &bounds)?);
        }
        let r_squared = match metrics::r_squared(&preds, &truths) {
            Ok(v) => Some(v),
            Err(CoreError::ConstantTruths) => None,
            Err(e) => return Err(e),
        };
        stats.push(GroupStat {
            key,
            count: members.len(),
            accuracy: metrics::log10_accuracy(&preds_pa, &truths_pa)?,
            n_mse: metrics::n_mse(&preds, &truths)?,
            r_squared,
        });
    }
    Ok(stats)
}

/// One grasp in the scatter table behind the per-group report.
/// `inside_band` means the squared error is at or below the band value
/// (ties count as inside); `sensor_modulus_pa` is a constant column so
/// downstream plots can draw the pad-stiffness rule without a join.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub truth_pa: f64,
    pub pred_pa: f64,
    pub group: String,
    pub se: f64,
    pub inside_band: bool,
    pub sensor_modulus_pa: f64,
}

pub fn mean_se(rows: &[PredictionRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.se).sum::<f64>() / rows.len() as f64
}

pub fn scatter_table(
    rows: &[PredictionRow],
    by: BreakdownBy,
    band_se: f64,
) -> Result<Vec<ScatterRow>> {
    if by == BreakdownBy::Window {
        return Err(CoreError::Config(
            "window breakdown is the rolling-window report".into(),
        ));
    }
    Ok(rows
        .iter()
        .map(|r| ScatterRow {
            truth_pa: r.truth_pa,
            pred_pa: r.pred_pa,
            group: match by {
                BreakdownBy::Material => r.material.as_str().to_string(),
                BreakdownBy::Shape => r.shape.as_str().to_string(),
                BreakdownBy::Window => unreachable!(),
            },
            se: r.se,
            inside_band: r.se <= band_se,
            sensor_modulus_pa: GELSIGHT_MODULUS_PA,
        })
        .collect())
}

pub fn write_scatter_table(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_breakdown(path: &Path, stats: &[GroupStat]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["key", "count", "accuracy", "n_mse", "r_squared"])?;
    for s in stats {
        writer.write_record([
            s.key.clone(),
            s.count.to_string(),
            format!("{}", s.accuracy),
            format!("{}", s.n_mse),
            s.r_squared.map(|v| format!("{v}")).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Log-log truth/prediction scatter. The shaded band around the
/// diagonal covers squared errors up to `band_n_mse` (the usual choice
/// is the run's own mean, so points inside are at-or-below-average);
/// the vertical rule marks the sensor pad modulus.
pub fn scatter_svg(rows: &[PredictionRow], band_n_mse: f64) -> String {
    const SIZE: f64 = 640.0;
    const MARGIN: f64 = 60.0;
    let plot = SIZE - 2.0 * MARGIN;
    let bounds = ModulusBounds::default();
    let span = bounds.log10_max - bounds.log10_min;
    let x_of = |pa: f64| {
        MARGIN + (pa.log10().clamp(bounds.log10_min, bounds.log10_max) - bounds.log10_min) / span * plot
    };
    let y_of = |pa: f64| {
        SIZE - MARGIN
            - (pa.log10().clamp(bounds.log10_min, bounds.log10_max) - bounds.log10_min) / span * plot
    };
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>\n"
    ));
    // band first so everything else draws over it
    let half_band = band_n_mse.max(0.0).sqrt() * plot; // normalized units -> px
    let (x0, y0) = (MARGIN, SIZE - MARGIN);
    let (x1, y1) = (SIZE - MARGIN, MARGIN);
    svg.push_str(&format!(
        "<polygon points=\"{x0},{} {x1},{} {x1},{} {x0},{}\" fill=\"#dce9f7\"/>\n",
        y0 - half_band,
        y1 - half_band,
        y1 + half_band,
        y0 + half_band
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"#666\" stroke-dasharray=\"6,4\"/>\n"
    ));
    let sensor_x = x_of(GELSIGHT_MODULUS_PA);
    svg.push_str(&format!(
        "<line x1=\"{sensor_x}\" y1=\"{MARGIN}\" x2=\"{sensor_x}\" y2=\"{}\" stroke=\"#b04a4a\" stroke-dasharray=\"2,3\"/>\n",
        SIZE - MARGIN
    ));
    for k in (bounds.log10_min as i64)..=(bounds.log10_max as i64) {
        let x = x_of(10f64.powi(k as i32));
        let y = y_of(10f64.powi(k as i32));
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#333\"/>\n",
            SIZE - MARGIN,
            SIZE - MARGIN + 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">1e{k}</text>\n",
            SIZE - MARGIN + 20.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{MARGIN}\" y2=\"{y}\" stroke=\"#333\"/>\n",
            MARGIN - 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">1e{k}</text>\n",
            MARGIN - 10.0,
            y + 4.0
        ));
    }
    let bounds_norm = ModulusBounds::default();
    for row in rows {
        let (px, py) = (x_of(row.truth_pa), y_of(row.pred_pa));
        let inside = match (
            normalize_young(row.pred_pa, &bounds_norm),
            normalize_young(row.truth_pa, &bounds_norm),
        ) {
            (Ok(p), Ok(t)) => (p - t) * (p - t) <= band_n_mse,
            _ => false,
        };
        let fill = if inside { "#2b6cb0" } else { "#c53030" };
        svg.push_str(&format!(
            "<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"{fill}\" fill-opacity=\"0.7\"/>\n"
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{plot}\" height=\"{plot}\" fill=\"none\" stroke=\"#000\"/>\n"
    ));
    svg.push_str("</svg>\n");
    svg
}

pub fn write_scatter(path: &Path, rows: &[PredictionRow], band_n_mse: f64) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(scatter_svg(rows, band_n_mse).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, truth: f64, pred: f64) -> PredictionRow {
        let se = PredictionRow::squared_error(pred, truth, &ModulusBounds::default()).unwrap();
        PredictionRow {
            grasp_id: id.to_string(),
            truth_pa: truth,
            pred_pa: pred,
            material: Material::Rubber,
            shape: Shape::Sphere,
            se,
        }
    }

    #[test]
    fn windows_cover_expected_decades() {
        let rows = vec![row("a", 1.0e4, 1.0e4), row("b", 1.0e10, 1.0e10)];
        let stats = rolling_windows(&rows, 1).unwrap();
        assert_eq!(stats.len(), WINDOW_COUNT);
        assert_eq!(stats[0].log10_lo, 3.0);
        assert_eq!(stats[0].log10_hi, 6.0);
        assert_eq!(stats[6].log10_lo, 9.0);
        assert_eq!(stats[6].log10_hi, 12.0);
        // 1e4 belongs to windows 0 and 1 only
        assert_eq!(stats[0].total, 1);
        assert_eq!(stats[1].total, 1);
        assert_eq!(stats[2].total, 0);
        assert!(stats[2].n_mse.is_none());
        assert_eq!(stats[6].total, 1);
    }

    #[test]
    fn windows_undersample_to_smallest() {
        let mut rows = Vec::new();
        for i in 0..8 {
            rows.push(row(&format!("soft{i}"), 2.0e4, 2.0e4));
        }
        rows.push(row("stiff", 2.0e10, 2.0e10));
        let stats = rolling_windows(&rows, 3).unwrap();
        for s in &stats {
            if s.total > 0 {
                assert_eq!(s.used, 1, "window {}", s.index);
            }
        }
    }

    #[test]
    fn window_normalization_is_per_window() {
        // a one-decade miss inside window 0: normalized diff 1/3
        let rows = vec![row("a", 1.0e4, 1.0e5)];
        let stats = rolling_windows(&rows, 1).unwrap();
        let got = stats[0].n_mse.unwrap();
        let expect = (1.0f64 / 3.0) * (1.0 / 3.0);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn breakdown_groups_and_flags_constant_truths() {
        let mut rows = vec![row("a", 1.0e5, 2.0e5), row("b", 1.0e5, 0.5e5)];
        rows[1].material = Material::Foam;
        let mut wood = row("c", 1.0e7, 1.0e7);
        wood.material = Material::Plastic;
        let mut wood2 = row("d", 1.0e8, 1.0e8);
        wood2.material = Material::Plastic;
        rows.push(wood);
        rows.push(wood2);
        let stats = breakdown(&rows, BreakdownBy::Material).unwrap();
        let keys: Vec<&str> = stats.iter().map(|s| s.key.as_str()).collect();
        assert_eq!(keys, ["foam", "plastic", "rubber"]);
        let plastic = &stats[1];
        assert_eq!(plastic.count, 2);
        assert_eq!(plastic.r_squared, Some(1.0));
        let rubber = &stats[2];
        assert!(rubber.r_squared.is_none());
        assert_eq!(rubber.accuracy, 1.0);
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.csv");
        let rows = vec![row("a", 1.5e5, 2.5e5), row("b", 3.0e8, 2.9e8)];
        write_predictions(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("grasp_id,truth_pa,pred_pa,material,shape,se\n"));
        let back = read_predictions(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn scatter_table_band_boundary_is_inside() {
        let rows = vec![row("a", 1.0e5, 1.0e6), row("b", 1.0e5, 1.0e5)];
        // band exactly at the first row's se: the tie counts as inside
        let table = scatter_table(&rows, BreakdownBy::Material, rows[0].se).unwrap();
        assert!(table[0].inside_band);
        assert!(table[1].inside_band);
        let tighter = scatter_table(&rows, BreakdownBy::Material, rows[0].se * 0.5).unwrap();
        assert!(!tighter[0].inside_band);
        assert!(tighter[1].inside_band);
        assert_eq!(table[0].group, "rubber");
        assert_eq!(table[0].sensor_modulus_pa, GELSIGHT_MODULUS_PA);
    }

    #[test]
    fn single_group_breakdown_matches_overall() {
        let rows = vec![row("a", 1.0e5, 2.0e5), row("b", 1.0e7, 0.5e7)];
        let stats = breakdown(&rows, BreakdownBy::Material).unwrap();
        assert_eq!(stats.len(), 1);
        let bounds = ModulusBounds::default();
        let preds: Vec<f64> = rows
            .iter()
            .map(|r| normalize_young(r.pred_pa, &bounds).unwrap())
            .collect();
        let truths: Vec<f64> = rows
            .iter()
            .map(|r| normalize_young(r.truth_pa, &bounds).unwrap())
            .collect();
        assert_eq!(stats[0].n_mse, metrics::n_mse(&preds, &truths).unwrap());
        assert_eq!(
            stats[0].accuracy,
            metrics::log10_accuracy(
                &rows.iter().map(|r| r.pred_pa).collect::<Vec<_>>(),
                &rows.iter().map(|r| r.truth_pa).collect::<Vec<_>>()
            )
            .unwrap()
        );
    }

    #[test]
    fn scatter_contains_points_and_rules() {
        let rows = vec![row("a", 1.0e5, 1.1e5), row("b", 1.0e9, 1.0e6)];
        let svg = scatter_svg(&rows, 0.01);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
        // the close point sits inside the band, the far one outside
        assert_eq!(svg.matches("#2b6cb0").count(), 1);
        assert_eq!(svg.matches("#c53030").count(), 1);
    }
}
