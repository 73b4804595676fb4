use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pipe sizing infeasible for segment `{segment}`: gradient {gradient_pa_per_m:.1} Pa/m exceeds {limit_pa_per_m:.1} Pa/m with largest catalogue diameter")]
    Sizing {
        segment: String,
        gradient_pa_per_m: f64,
        limit_pa_per_m: f64,
    },

    #[error("hydraulic solver did not converge after {iterations} iterations (worst residual {residual_kg_s:.3e} kg/s)")]
    Hydraulics {
        iterations: usize,
        residual_kg_s: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infiltration linearization: non-positive radicand {0:.3e}")]
    InfiltrationDomain(f64),

    #[error("profile ingestion failed ({path}, row {row}): {message}")]
    Ingestion {
        path: String,
        row: usize,
        message: String,
    },

    #[error("model fitting failed: {0}")]
    Fit(String),

    #[error("dispatch plan: {0}")]
    Plan(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("simulation aborted at t = {t_s:.0} s in `{module}`: {source}")]
    Aborted {
        t_s: f64,
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
