use thiserror::Error;

/// Any error the library can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] crate::numeric::NumericError),
    #[error(transparent)]
    Xform(#[from] crate::xform::XformError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Gdit(#[from] crate::gdit::GditError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Sample(#[from] crate::sample::SampleError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}
