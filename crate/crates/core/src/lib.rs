pub mod bench;
pub mod cancelable;
pub mod ckks_lite;
pub mod container;
pub mod embed_io;
pub mod error;
pub mod pq_index;
pub mod sec_eval;
pub mod secure_rank;

pub use error::{Error, Result};
