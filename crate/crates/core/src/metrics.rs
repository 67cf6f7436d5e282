//! Component-wise exact-match accuracy.
//!
//! A prediction is scored against its gold DVQ on three components (chart type,
//! the ordered x/y pair, and the data transformation) and as a whole. Each
//! accuracy is a plain ratio over the corpus size; unparsable predictions stay
//! in the denominator and score as misses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dvq::{self, DvqError, Style};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gold DVQ for {id:?} does not parse: {source}")]
    GoldUnparsable {
        id: String,
        #[source]
        source: DvqError,
    },
    #[error("cannot evaluate an empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub id: String,
    pub vis_match: bool,
    pub axis_match: bool,
    pub data_match: bool,
    pub overall_match: bool,
    pub pred_parse_ok: bool,
    pub gold_parse_ok: bool,
}

pub fn match_pair(id: &str, pred: &str, gold: &str) -> Result<MatchRecord, MetricsError> {
    let gold_q = dvq::parse_dvq(gold).map_err(|source| MetricsError::GoldUnparsable {
        id: id.to_string(),
        source,
    })?;
    let pred_q = match dvq::parse_dvq(pred) {
        Ok(q) => q,
        Err(err) => {
            tracing::debug!(id, %err, "prediction does not parse");
            return Ok(MatchRecord {
                id: id.to_string(),
                vis_match: false,
                axis_match: false,
                data_match: false,
                overall_match: false,
                pred_parse_ok: false,
                gold_parse_ok: true,
            });
        }
    };

    let p = dvq::decompose_with(&pred_q, Style::Comparison);
    let g = dvq::decompose_with(&gold_q, Style::Comparison);
    Ok(MatchRecord {
        id: id.to_string(),
        vis_match: p.vis == g.vis,
        axis_match: p.axes == g.axes,
        data_match: p.data == g.data,
        overall_match: p.reassemble() == g.reassemble(),
        pred_parse_ok: true,
        gold_parse_ok: true,
    })
}

/// Corpus-level counts and the four accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub n_c: usize,
    pub n_vis: usize,
    pub n_axis: usize,
    pub n_data: usize,
    pub acc: f64,
    pub vis_acc: f64,
    pub axis_acc: f64,
    pub data_acc: f64,
}

impl EvalSummary {
    pub fn from_records(records: &[MatchRecord]) -> Result<Self, MetricsError> {
        if records.is_empty() {
            return Err(MetricsError::EmptyCorpus);
        }
        let count = |f: fn(&MatchRecord) -> bool| records.iter().filter(|r| f(r)).count();
        let n = records.len();
        let n_c = count(|r| r.overall_match);
        let n_vis = count(|r| r.vis_match);
        let n_axis = count(|r| r.axis_match);
        let n_data = count(|r| r.data_match);
        let ratio = |k: usize| k as f64 / n as f64;
        Ok(Self {
            n,
            n_c,
            n_vis,
            n_axis,
            n_data,
            acc: ratio(n_c),
            vis_acc: ratio(n_vis),
            axis_acc: ratio(n_axis),
            data_acc: ratio(n_data),
        })
    }

    /// Fixed-width table in the column order Vis, Data, Axis, Overall.
    pub fn table(&self) -> String {
        format!(
            "{:>10} {:>10} {:>10} {:>10}\n{:>9.2}% {:>9.2}% {:>9.2}% {:>9.2}%\n",
            "Vis Acc.",
            "Data Acc.",
            "Axis Acc.",
            "Acc.",
            self.vis_acc * 100.0,
            self.data_acc * 100.0,
            self.axis_acc * 100.0,
            self.acc * 100.0,
        )
    }
}

/// Scores `(prediction, gold)` pairs. Pair ids are their positions in the list.
pub fn evaluate_corpus<P, G>(pairs: &[(P, G)]) -> Result<EvalSummary, MetricsError>
where
    P: AsRef<str>,
    G: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let records = pairs
        .iter()
        .enumerate()
        .map(|(i, (p, g))| match_pair(&i.to_string(), p.as_ref(), g.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    EvalSummary::from_records(&records)
}
