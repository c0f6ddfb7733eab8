use serde::Serialize;

use super::{track_sequence, ModelTracker};
use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::network::TrackerModel;

/// Distribution of channel weights at one (stream, level).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightRow {
    pub stream: String,
    /// 1-based feature level.
    pub level: usize,
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightReport {
    pub sequence: String,
    pub rows: Vec<WeightRow>,
}

impl WeightReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stream,level,count,mean,q1,median,q3\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.stream, r.level, r.count, r.mean, r.q1, r.median, r.q3
            ));
        }
        out
    }
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Track `seq` at `r = 0` and summarize every recorded channel weight per
/// stream and level.
pub fn weight_report(model: &TrackerModel, seq: &SequenceRecord) -> Result<WeightReport> {
    if !model.variant().uses_attention() {
        return Err(Error::Config(format!("variant {} has no channel attention", model.variant())));
    }
    let run = track_sequence(&ModelTracker::new(model), seq, 0.0)?;
    let streams = model.variant().streams();
    let names: &[&str] = if streams == 2 { &["previous", "current"] } else { &["current"] };
    let levels = model.variant().levels();
    let mut rows = Vec::with_capacity(streams * levels.len());
    for (s, name) in names.iter().enumerate() {
        for (i, &level) in levels.iter().enumerate() {
            let mut values: Vec<f64> = run
                .attention
                .iter()
                .flat_map(|a| a.per_stream[s][i].iter().copied())
                .collect();
            if values.is_empty() {
                return Err(Error::Consistency("tracking recorded no channel weights".into()));
            }
            values.sort_by(f64::total_cmp);
            rows.push(WeightRow {
                stream: name.to_string(),
                level: level + 1,
                count: values.len(),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                q1: quantile(&values, 0.25),
                median: quantile(&values, 0.5),
                q3: quantile(&values, 0.75),
            });
        }
    }
    Ok(WeightReport {
        sequence: seq.id.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sequence, SynthConfig};
    use crate::network::{FenConfig, HeadConfig, Variant};

    fn seq() -> SequenceRecord {
        let cfg = SynthConfig {
            mean_length: 3.0,
            length_jitter: 0.0,
            ..SynthConfig::default()
        };
        generate_sequence(&cfg, 0).unwrap().record
    }

    #[test]
    fn zero_init_report_is_exactly_one() {
        let s = seq();
        for (variant, streams) in [(Variant::Aftn, 2), (Variant::AftnC, 1)] {
            let m = TrackerModel::new(variant, FenConfig::default(), HeadConfig::default(), 3).unwrap();
            let r = weight_report(&m, &s).unwrap();
            assert_eq!(r.rows.len(), 5 * streams);
            for row in &r.rows {
                assert_eq!((row.mean, row.q1, row.q3), (1.0, 1.0, 1.0));
            }
            assert_eq!(r.to_csv().lines().count(), 1 + 5 * streams);
        }
        let m = TrackerModel::new(Variant::AftnNoAtt, FenConfig::default(), HeadConfig::default(), 3).unwrap();
        assert!(weight_report(&m, &s).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!((quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)), (2.0, 3.0, 4.0));
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }
}
