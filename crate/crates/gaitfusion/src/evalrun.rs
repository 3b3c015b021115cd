//! Gallery/probe retrieval evaluation: embedding extraction over whole
//! sequences, per-condition rank-1/rank-5/mAP/mINP reports, and the
//! embedding dump format.

use std::fmt::Write as _;
use std::path::Path;

use gaitfusion_core::metrics;
use gaitfusion_core::model::Model;
use gaitfusion_core::nn::Ctx;
use gaitfusion_core::scalar::Scalar;
use gaitfusion_core::tape::Tape;
use gaitfusion_core::tensor::Tensor;

use crate::checkpoint::{self, Record};
use crate::config::Protocol;
use crate::data::{assemble_batch, Dataset, SampledSequence};
use crate::error::{Error, Result};
use crate::trainer::modalities_for;

pub const REPORT_HEADER: &str = "condition,rank1,rank5,map,minp,skipped";

/// One embedded sequence.
#[derive(Clone, Debug)]
pub struct EmbeddingRow {
    pub label: usize,
    pub identity: String,
    pub sequence: String,
    pub condition: String,
    /// Part embeddings, flattened [P,D] in f64.
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub parts: usize,
    pub dim: usize,
    pub rows: Vec<EmbeddingRow>,
}

/// Embeds every sequence of the dataset (all frames, eval mode); one row
/// per sequence, deterministic.
pub fn extract_embeddings<T: Scalar>(model: &Model<T>, dataset: &Dataset) -> Result<EmbeddingTable> {
    let modalities = modalities_for(model.config.variant);
    let (p, d) = (model.config.parts, model.config.embed_dim);
    let mut rows = Vec::with_capacity(dataset.sequences.len());
    for (i, seq) in dataset.sequences.iter().enumerate() {
        let sample = SampledSequence {
            seq_index: i,
            frame_indices: (0..seq.frame_count()).collect(),
        };
        let (input, _) = assemble_batch::<T>(dataset, &[sample], &modalities, None)?;
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &model.bank, false);
        let (emb, _) = model.forward(&ctx, &input)?;
        let value = emb.value();
        rows.push(EmbeddingRow {
            label: seq.label,
            identity: seq.identity.clone(),
            sequence: seq.sequence.clone(),
            condition: seq.condition.clone(),
            embedding: value.data().iter().map(|v| v.as_f64()).collect(),
        });
    }
    Ok(EmbeddingTable { parts: p, dim: d, rows })
}

impl EmbeddingTable {
    fn subset(&self, conditions: &[String]) -> Vec<&EmbeddingRow> {
        self.rows
            .iter()
            .filter(|r| conditions.iter().any(|c| *c == r.condition))
            .collect()
    }

    /// Writes the table in the checkpoint record format, one record per
    /// sequence named `<identity>/<sequence>`.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let records: Vec<Record> = self
            .rows
            .iter()
            .map(|r| Record {
                name: format!("{}/{}", r.identity, r.sequence),
                shape: vec![self.parts, self.dim],
                data: r.embedding.clone(),
                dtype: 1,
            })
            .collect();
        checkpoint::write_file(path, &records)
    }
}

/// Metrics of one probe/gallery pairing.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionMetrics {
    pub condition: String,
    pub rank1: f64,
    pub rank5: f64,
    pub map: f64,
    pub minp: f64,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    /// One entry per probe condition, in protocol order, then an
    /// `overall` entry over all probe conditions combined.
    pub per_condition: Vec<ConditionMetrics>,
}

fn stack(rows: &[&EmbeddingRow], p: usize, d: usize) -> Result<Tensor<f64>> {
    let mut data = Vec::with_capacity(rows.len() * p * d);
    for r in rows {
        data.extend_from_slice(&r.embedding);
    }
    Tensor::from_vec(&[rows.len(), p, d], data).map_err(Error::from)
}

fn eval_pair(
    probes: &[&EmbeddingRow],
    gallery: &[&EmbeddingRow],
    condition: &str,
    p: usize,
    d: usize,
) -> Result<ConditionMetrics> {
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::Runtime(format!(
            "empty probe or gallery set for condition `{condition}`"
        )));
    }
    let dists = metrics::distance_matrix(&stack(probes, p, d)?, &stack(gallery, p, d)?)?;
    let probe_labels: Vec<usize> = probes.iter().map(|r| r.label).collect();
    let gallery_labels: Vec<usize> = gallery.iter().map(|r| r.label).collect();
    // Same-sequence exclusion: a probe never matches against the exact
    // sequence it came from.
    let mut exclusion = vec![false; probes.len() * gallery.len()];
    for (i, pr) in probes.iter().enumerate() {
        for (j, ga) in gallery.iter().enumerate() {
            if pr.identity == ga.identity && pr.sequence == ga.sequence {
                exclusion[i * gallery.len() + j] = true;
            }
        }
    }
    let (rank1, sk1) = metrics::rank_k(&dists, &probe_labels, &gallery_labels, 1, Some(&exclusion))?;
    let (rank5, _) = metrics::rank_k(&dists, &probe_labels, &gallery_labels, 5, Some(&exclusion))?;
    let (map, _) = metrics::mean_ap(&dists, &probe_labels, &gallery_labels, Some(&exclusion))?;
    let (minp, _) = metrics::m_inp(&dists, &probe_labels, &gallery_labels, Some(&exclusion))?;
    Ok(ConditionMetrics {
        condition: condition.to_string(),
        rank1,
        rank5,
        map,
        minp,
        skipped: sk1,
    })
}

/// Evaluates the protocol: per probe condition against the gallery
/// conditions, plus an overall row; ordering is stable.
pub fn evaluate(protocol: &Protocol, table: &EmbeddingTable) -> Result<EvalReport> {
    let gallery = table.subset(&protocol.gallery);
    let (p, d) = (table.parts, table.dim);
    let mut per_condition = Vec::new();
    for cond in &protocol.probe {
        let probes = table.subset(std::slice::from_ref(cond));
        per_condition.push(eval_pair(&probes, &gallery, cond, p, d)?);
    }
    let all_probes = table.subset(&protocol.probe);
    per_condition.push(eval_pair(&all_probes, &gallery, "overall", p, d)?);
    Ok(EvalReport { per_condition })
}

impl EvalReport {
    pub fn overall(&self) -> &ConditionMetrics {
        self.per_condition.last().expect("report has an overall row")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for m in &self.per_condition {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                m.condition, m.rank1, m.rank5, m.map, m.minp, m.skipped
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "condition", "R-1", "R-5", "mAP", "mINP", "skipped"
        );
        for m in &self.per_condition {
            let _ = writeln!(
                s,
                "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8}",
                m.condition, m.rank1, m.rank5, m.map, m.minp, m.skipped
            );
        }
        s
    }
}
