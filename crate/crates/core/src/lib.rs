pub mod augment;
pub mod classifier;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod pairing;
pub mod store;
pub mod taxonomy;
pub mod vectorspace;

pub use error::{Error, Result};
pub mod learner;
pub mod synthharness;
