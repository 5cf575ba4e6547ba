use std::fmt;
use std::process::ExitCode;

use triage_core::analysis::AnalysisError;
use triage_core::pipeline::PipelineError;
use triage_core::scorers::ScorerError;

/// Command failure, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2.
    Config(anyhow::Error),
    /// Exit 3.
    Data(anyhow::Error),
    /// Exit 4.
    Oracle(anyhow::Error),
    /// Exit 1.
    Other(anyhow::Error),
}

impl Failure {
    pub fn config(msg: impl fmt::Display) -> Self {
        Failure::Config(anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Failure::Data(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Oracle(_) => 4,
        })
    }

    fn inner(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Data(e) | Failure::Oracle(e) | Failure::Other(e) => e,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config error",
            Failure::Data(_) => "data error",
            Failure::Oracle(_) => "oracle failure",
            Failure::Other(_) => "error",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:#}", self.kind(), self.inner())
    }
}

pub fn scorer_failure(e: ScorerError) -> Failure {
    match e {
        ScorerError::MissingFixture { .. } | ScorerError::MissingGold { .. } | ScorerError::MalformedResponse(_) => {
            Failure::Data(e.into())
        }
        ScorerError::InvalidSpec(_) | ScorerError::UnsupportedMode(_) => Failure::Config(e.into()),
        ScorerError::ScorerUnavailable(_) => Failure::Other(e.into()),
    }
}

pub fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Oracle { .. } => Failure::Oracle(e.into()),
        PipelineError::Scorer { source, video_id, myth } => {
            let inner = scorer_failure(source);
            let ctx = format!("scoring {video_id}/{myth}");
            match inner {
                Failure::Config(e) => Failure::Config(e.context(ctx)),
                Failure::Data(e) => Failure::Data(e.context(ctx)),
                Failure::Oracle(e) => Failure::Oracle(e.context(ctx)),
                Failure::Other(e) => Failure::Other(e.context(ctx)),
            }
        }
        PipelineError::MissingPolicy(_) | PipelineError::Deferral(_) | PipelineError::EmptyResult => {
            Failure::Data(e.into())
        }
        _ => Failure::Other(e.into()),
    }
}

pub fn analysis_failure(e: AnalysisError) -> Failure {
    match e {
        AnalysisError::Judge { .. } => Failure::Oracle(e.into()),
        _ => Failure::Data(e.into()),
    }
}
