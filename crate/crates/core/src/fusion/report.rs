use std::fmt::Write as _;

use super::config::Method;
use super::decode::UttResult;
use crate::data::LabelId;
use crate::error::{Error, Result};

/// One n-best line.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestRecord {
    pub utt: String,
    pub rank: usize,
    pub score: f64,
    pub aed: f64,
    pub lm: f64,
    pub ilm: f64,
    pub labels: Vec<LabelId>,
}

/// Tab-separated `key=value` lines, one per hypothesis, ranks from 1.
/// Scores are printed in shortest round-trip form.
pub fn format_nbest(results: &[UttResult]) -> String {
    let mut out = String::new();
    for r in results {
        for (i, h) in r.nbest.iter().enumerate() {
            let labels: Vec<String> = h.labels.iter().map(|l| l.to_string()).collect();
            writeln!(
                out,
                "utt={}\trank={}\tscore={:?}\taed={:?}\tlm={:?}\tilm={:?}\tlabels={}",
                r.id,
                i + 1,
                h.score,
                h.aed,
                h.lm,
                h.ilm,
                labels.join(" ")
            )
            .expect("writing to a String");
        }
    }
    out
}

pub fn parse_nbest(text: &str) -> Result<Vec<NBestRecord>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches('\n');
        let bad = |what: &str| Error::format(offset, format!("n-best line: {what}"));
        let fields: Vec<(&str, &str)> = body
            .split('\t')
            .map(|f| f.split_once('=').ok_or_else(|| bad("field without '='")))
            .collect::<Result<_>>()?;
        let keys: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
        if keys != ["utt", "rank", "score", "aed", "lm", "ilm", "labels"] {
            return Err(bad("unexpected fields"));
        }
        let num = |i: usize| fields[i].1.parse::<f64>().map_err(|_| bad("bad number"));
        out.push(NBestRecord {
            utt: fields[0].1.to_string(),
            rank: fields[1].1.parse().map_err(|_| bad("bad rank"))?,
            score: num(2)?,
            aed: num(3)?,
            lm: num(4)?,
            ilm: num(5)?,
            labels: fields[6]
                .1
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| bad("bad label")))
                .collect::<Result<_>>()?,
        });
        offset += line.len();
    }
    Ok(out)
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub lambda1: f64,
    pub lambda2: f64,
    pub dev_wer: f64,
    pub test_wer: f64,
    pub ilm_ppl: Option<f64>,
}

/// Plain-text table: method, scales, WERs in percent, ILM perplexity.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut out = format!(
        "{:<10} {:>5} {:>5} {:>8} {:>8} {:>8}\n",
        "method", "l1", "l2", "dev WER", "test WER", "ILM PPL"
    );
    for r in rows {
        let ppl = r.ilm_ppl.map_or_else(|| "-".to_string(), |p| format!("{p:.2}"));
        writeln!(
            out,
            "{:<10} {:>5.2} {:>5.2} {:>8.2} {:>8.2} {:>8}",
            r.method.display(),
            r.lambda1,
            r.lambda2,
            100.0 * r.dev_wer,
            100.0 * r.test_wer,
            ppl
        )
        .expect("writing to a String");
    }
    out
}

/// Machine-readable form of the same table, one `key=value` record per line.
pub fn format_table_kv(rows: &[ReportRow]) -> String {
    rows.iter()
        .map(|r| {
            let ppl = r.ilm_ppl.map_or_else(|| "none".to_string(), |p| format!("{p:?}"));
            format!(
                "method={}\tlambda1={:?}\tlambda2={:?}\tdev_wer={:?}\ttest_wer={:?}\tilm_ppl={}\n",
                r.method.name(),
                r.lambda1,
                r.lambda2,
                r.dev_wer,
                r.test_wer,
                ppl
            )
        })
        .collect()
}
