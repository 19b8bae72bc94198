//! Offline half of a submission: everything that can be checked before
//! anything is stored. Shared by the HTTP service and the `mgc validate`
//! preflight.

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::builder::{plot_specs, PlotError, PlotSpec};
use crate::mpfile::{parse, ParseError};
use crate::pipeline::{
    clean_draft, content_hash, enforce_size, split, Cid, Contribution, ContributionDraft,
    PipelineError, SizeCheck, Visibility,
};
use crate::refs::{extract_references, RefError};

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDraft {
    pub draft: ContributionDraft,
    pub plots: Vec<PlotSpec>,
    pub size: SizeCheck,
}

impl PreparedDraft {
    pub fn warning(&self) -> Option<String> {
        match self.size {
            SizeCheck::Warning { bytes } => Some(format!(
                "'{}' is {bytes} bytes; contributions are meant to stay below {} bytes",
                self.draft.title,
                crate::pipeline::SIZE_WARN_BYTES
            )),
            SizeCheck::Ok { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubmissionError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{source} (section at line {line})")]
    Plot {
        line: usize,
        #[source]
        source: PlotError,
    },
    #[error("{source} (section at line {line})")]
    Reference {
        line: usize,
        #[source]
        source: RefError,
    },
}

impl SubmissionError {
    pub fn code(&self) -> &'static str {
        match self {
            SubmissionError::Parse(e) => e.code(),
            SubmissionError::Pipeline(e) => e.code(),
            SubmissionError::Plot { source, .. } => source.code(),
            SubmissionError::Reference { source, .. } => source.code(),
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            SubmissionError::Parse(e) => Some(e.line()),
            SubmissionError::Pipeline(e) => e.line(),
            SubmissionError::Plot { line, .. } | SubmissionError::Reference { line, .. } => {
                Some(*line)
            }
        }
    }

    pub fn is_oversize(&self) -> bool {
        matches!(
            self,
            SubmissionError::Pipeline(PipelineError::OversizeContribution { .. })
        )
    }
}

/// Parses, splits, cleans and checks a whole MPFile. Any failure rejects
/// the file as a whole.
pub fn prepare(text: &str, project: &str) -> Result<Vec<PreparedDraft>, SubmissionError> {
    let doc = parse(text)?;
    let drafts = split(&doc, project)?;
    let mut prepared = Vec::with_capacity(drafts.len());
    for mut draft in drafts {
        clean_draft(&mut draft)?;
        let plots = plot_specs(&draft.tree, &draft.tables).map_err(|source| {
            SubmissionError::Plot {
                line: draft.line,
                source,
            }
        })?;
        extract_references(&draft.tree).map_err(|source| SubmissionError::Reference {
            line: draft.line,
            source,
        })?;
        let size = enforce_size(&draft)?;
        prepared.push(PreparedDraft { draft, plots, size });
    }
    Ok(prepared)
}

/// Turns a prepared draft into a storable contribution. On update the
/// creation time, visibility and plot customizations of `existing` carry
/// over.
pub fn materialize(
    prepared: &PreparedDraft,
    cid: Cid,
    existing: Option<&Contribution>,
    now: DateTime<Utc>,
) -> Contribution {
    let draft = &prepared.draft;
    let mut plots = prepared.plots.clone();
    if let Some(old) = existing {
        for spec in &mut plots {
            if let Some(prev) = old.plots.iter().find(|p| p.plot_id == spec.plot_id) {
                spec.customized = prev.customized;
                spec.custom_layout = prev.custom_layout.clone();
            }
        }
    }
    Contribution {
        cid,
        project: draft.project.clone(),
        title: draft.title.clone(),
        material: draft.material.clone(),
        content_hash: content_hash(&draft.tree, &draft.tables),
        tree: draft.tree.clone(),
        tables: draft.tables.clone(),
        plots,
        visibility: existing.map_or(Visibility::Private, |c| c.visibility),
        created_at: existing.map_or(now, |c| c.created_at),
        updated_at: now,
    }
}
