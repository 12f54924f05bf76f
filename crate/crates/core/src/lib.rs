//! Variational single-qubit classifiers built from QAUM circuits, trained with
//! COBYLA and combined into bagging and boosting ensembles.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod qaum;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
