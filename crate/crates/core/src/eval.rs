//! Cross-modal retrieval: rank a database by cosine similarity to each query
//! and report the fraction of queries whose true item lands in the top `k`.
//!
//! Ties break by ascending database index, so a rank is
//! `#{j : s_j > s_gt} + #{j < gt : s_j = s_gt}`.

use serde::{Deserialize, Serialize};

use crate::data::{CaptionType, Dataset, Modality};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::{HeadKind, ProjectionHead, TrimodalAligner};

/// Query side of a retrieval task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Query {
    Captions(CaptionType),
    Audio,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalTask {
    pub retrieve: Modality,
    pub based_on: Query,
}

impl RetrievalTask {
    /// The seven rows of the retrieval table, in table order.
    pub const TABLE: [RetrievalTask; 7] = [
        RetrievalTask::new(Modality::Visual, Query::Captions(CaptionType::Visual)),
        RetrievalTask::new(Modality::Visual, Query::Captions(CaptionType::Audio)),
        RetrievalTask::new(Modality::Visual, Query::Captions(CaptionType::AudioVisual)),
        RetrievalTask::new(Modality::Audio, Query::Captions(CaptionType::Audio)),
        RetrievalTask::new(Modality::Audio, Query::Captions(CaptionType::Visual)),
        RetrievalTask::new(Modality::Audio, Query::Captions(CaptionType::AudioVisual)),
        RetrievalTask::new(Modality::Visual, Query::Audio),
    ];

    pub const fn new(retrieve: Modality, based_on: Query) -> Self {
        Self { retrieve, based_on }
    }

    pub fn retrieve_label(&self) -> &'static str {
        match self.retrieve {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }

    pub fn based_on_label(&self) -> &'static str {
        match self.based_on {
            Query::Captions(CaptionType::Audio) => "audio captions",
            Query::Captions(CaptionType::Visual) => "visual captions",
            Query::Captions(CaptionType::AudioVisual) => "audio-visual captions",
            Query::Audio => "audio",
        }
    }
}

/// Database indices sorted by descending similarity, ties by ascending index.
pub fn rank_database(query: &[f64], database: &Matrix) -> Result<Vec<usize>> {
    if database.rows() == 0 {
        return Err(Error::EmptyInput("empty database"));
    }
    if query.len() != database.cols() {
        return Err(Error::Shape {
            op: "rank_database",
            left: (1, query.len()),
            right: database.shape(),
        });
    }
    let scores: Vec<f64> = (0..database.rows()).map(|j| dot(query, database.row(j))).collect();
    let mut order: Vec<usize> = (0..database.rows()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order)
}

/// Zero-based rank of `gt` among `scores` under the tie rule.
fn rank_of(scores: &[f64], gt: usize) -> usize {
    let s_gt = scores[gt];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > s_gt || (s == s_gt && j < gt))
        .count()
}

/// Recall@k of row-wise `queries` against `database`, where query `i`
/// matches database item `ground_truth[i]`.
pub fn recall_at_k(queries: &Matrix, database: &Matrix, ground_truth: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if queries.rows() == 0 {
        return Err(Error::EmptyInput("no queries"));
    }
    if database.rows() == 0 {
        return Err(Error::EmptyInput("empty database"));
    }
    if ground_truth.len() != queries.rows() {
        return Err(Error::Shape {
            op: "recall_at_k",
            left: queries.shape(),
            right: (ground_truth.len(), 1),
        });
    }
    if queries.cols() != database.cols() {
        return Err(Error::Shape {
            op: "recall_at_k",
            left: queries.shape(),
            right: database.shape(),
        });
    }
    if let Some(&index) = ground_truth.iter().find(|&&g| g >= database.rows()) {
        return Err(Error::Mapping {
            index,
            len: database.rows(),
        });
    }
    // same accumulation order as `dot`, so scores match `rank_database`
    let scores = queries.matmul_nt(database)?;
    let hits = ground_truth
        .iter()
        .enumerate()
        .filter(|&(i, &gt)| rank_of(scores.row(i), gt) < k)
        .count();
    Ok(hits as f64 / queries.rows() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub k: usize,
    /// Use every caption as a query; otherwise only the first caption of
    /// each type per clip.
    pub all_captions: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 10,
            all_captions: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub retrieve: String,
    pub based_on: String,
    /// `None` when the dataset lacks the query caption type.
    pub recall: Option<f64>,
    pub queries: usize,
    pub database: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub model: String,
    pub k: usize,
    pub dataset: String,
    pub rows: Vec<TaskResult>,
}

/// Marker printed for tasks that could not run.
pub const SKIPPED: &str = "n/a";

fn fmt_recall(r: Option<f64>) -> String {
    r.map(|v| format!("{v:.4}")).unwrap_or_else(|| SKIPPED.to_string())
}

impl RetrievalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn recall(&self, task: usize) -> Option<f64> {
        self.rows.get(task).and_then(|r| r.recall)
    }

    pub fn to_table(&self) -> String {
        let header = ["retrieve", "based on", &format!("R@{}", self.k)];
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.retrieve.clone(), r.based_on.clone(), fmt_recall(r.recall)])
            .collect();
        render_table(&header.map(String::from), &rows)
    }
}

fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

const EMBED_CHUNK: usize = 64;

/// Unit embeddings of many inputs, one row each.
fn embed_all(head: &ProjectionHead, inputs: &[&Matrix]) -> Result<Matrix> {
    let mut out = Matrix::zeros(inputs.len(), head.out_dim());
    for (c, chunk) in inputs.chunks(EMBED_CHUNK).enumerate() {
        let e = head.embed_batch(chunk)?;
        for i in 0..chunk.len() {
            out.row_mut(c * EMBED_CHUNK + i).copy_from_slice(e.unit.row(i));
        }
    }
    Ok(out)
}

fn check_dims(aligner: &TrimodalAligner, dataset: &Dataset) -> Result<()> {
    let d = dataset.dims();
    for (kind, want) in [
        (HeadKind::Visual, d.visual_dim),
        (HeadKind::Audio, d.audio_dim),
        (HeadKind::Text, d.text_dim),
    ] {
        let head = aligner.head(kind);
        if head.in_dim() != want {
            return Err(Error::Shape {
                op: "evaluate",
                left: head.weight.shape(),
                right: (want, head.out_dim()),
            });
        }
    }
    Ok(())
}

/// Runs the seven table tasks on `dataset`.
pub fn run_task_suite(
    aligner: &TrimodalAligner,
    dataset: &Dataset,
    options: EvalOptions,
    model: &str,
) -> Result<RetrievalReport> {
    if options.k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset has no clips"));
    }
    check_dims(aligner, dataset)?;
    let clips = dataset.clips();
    let audio_in: Vec<&Matrix> = clips.iter().map(|c| &c.audio).collect();
    let visual_in: Vec<&Matrix> = clips.iter().map(|c| &c.visual).collect();
    let audio = embed_all(&aligner.audio, &audio_in)?;
    let visual = embed_all(&aligner.visual, &visual_in)?;

    let mut rows = Vec::new();
    for task in RetrievalTask::TABLE {
        let database = match task.retrieve {
            Modality::Audio => &audio,
            Modality::Visual => &visual,
        };
        let (recall, queries) = match task.based_on {
            Query::Audio => {
                let gt: Vec<usize> = (0..clips.len()).collect();
                (Some(recall_at_k(&audio, database, &gt, options.k)?), clips.len())
            }
            Query::Captions(t) => {
                let mut inputs = Vec::new();
                let mut gt = Vec::new();
                for (i, clip) in clips.iter().enumerate() {
                    let take = if options.all_captions { usize::MAX } else { 1 };
                    for cap in clip.captions_of(t).take(take) {
                        inputs.push(Matrix::row_vector(&cap.text_embedding)?);
                        gt.push(i);
                    }
                }
                if inputs.is_empty() {
                    (None, 0)
                } else {
                    let refs: Vec<&Matrix> = inputs.iter().collect();
                    let text = embed_all(&aligner.text, &refs)?;
                    (Some(recall_at_k(&text, database, &gt, options.k)?), gt.len())
                }
            }
        };
        rows.push(TaskResult {
            retrieve: task.retrieve_label().to_string(),
            based_on: task.based_on_label().to_string(),
            recall,
            queries,
            database: database.rows(),
        });
    }
    Ok(RetrievalReport {
        model: model.to_string(),
        k: options.k,
        dataset: dataset.fingerprint(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub retrieve: String,
    pub based_on: String,
    pub recalls: Vec<Option<f64>>,
}

/// Several reports side by side: one row per task, one column per model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub k: usize,
    pub models: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut header = vec!["retrieve".to_string(), "based on".to_string()];
        header.extend(self.models.iter().cloned());
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.retrieve.clone(), r.based_on.clone()];
                cells.extend(r.recalls.iter().map(|v| fmt_recall(*v)));
                cells
            })
            .collect();
        format!("R@{}\n{}", self.k, render_table(&header, &rows))
    }
}

/// Merges reports that share `k`, dataset and task list.
pub fn compare(reports: &[RetrievalReport]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or(Error::EmptyInput("nothing to compare"))?;
    for r in reports {
        if r.k != first.k || r.dataset != first.dataset || r.rows.len() != first.rows.len() {
            return Err(Error::InvalidParameter(format!(
                "report {:?} (k={}, dataset {}) does not match {:?} (k={}, dataset {})",
                r.model, r.k, r.dataset, first.model, first.k, first.dataset
            )));
        }
    }
    let rows = first
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| ComparisonRow {
            retrieve: row.retrieve.clone(),
            based_on: row.based_on.clone(),
            recalls: reports.iter().map(|r| r.rows[i].recall).collect(),
        })
        .collect();
    Ok(Comparison {
        k: first.k,
        models: reports.iter().map(|r| r.model.clone()).collect(),
        rows,
    })
}
