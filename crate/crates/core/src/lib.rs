pub mod certify;
pub mod error;
pub mod lmi;
pub mod lti;
pub mod matops;
pub mod pipeline;
pub mod scenario;
pub mod synthesis;
pub mod uncertainty;

pub use error::{Error, Result};
