//! Hierarchical measurement-error models a–d.
//!
//! The latent true level of each record is integrated out (closed form when
//! both layers are normal or normal mixtures, adaptive Gauss–Hermite
//! otherwise), leaving a posterior over a handful of top-level parameters per
//! stratum. That posterior is explored with adaptive random-walk Metropolis.
//!
//! Retesting depends only on the observed first measurement, so the selection
//! mechanism is ignorable: the likelihood of a record is the joint density of
//! whatever was measured, with no truncation term.

mod diagnostics;
mod marginal;
mod mcmc;
mod model;
mod optimize;
mod posterior;
mod scale_mixture;
mod summary;

pub use diagnostics::{effective_sample_size, split_rhat};
pub use marginal::{record_marginal_loglik, Marginalizer, PreparedModel, QuadratureMode};
pub(crate) use marginal::log_likelihood_given_truth;
pub use mcmc::{adaptive_metropolis, fit_default, fit_mcmc, ChainDraws, McmcConfig, PosteriorDraws, RwmChain, StratumLayout, RHAT_THRESHOLD};
pub use model::{ModelId, ModelSpec, ParamKind, Prior, PriorFamily, PriorSpec, StratumModel};
pub use optimize::{cholesky, fd_hessian, nelder_mead, spd_inverse, Minimum};
pub use posterior::{total_log_posterior, StratumData, StratumPosterior};
pub use summary::{measurement_variance_share, posterior_summary, ParamSummary, PosteriorSummary, StratumShare};
