pub mod advisor;
pub mod domain;
pub mod engine;
pub mod kernel;
pub mod routing;
pub mod script;
pub mod session;
pub mod stats;
pub mod topology;
pub mod traffic;

pub mod prelude {
    pub use crate::advisor::*;
    pub use crate::domain::*;
    pub use crate::engine::*;
    pub use crate::kernel::*;
    pub use crate::routing::*;
    pub use crate::script::*;
    pub use crate::session::*;
    pub use crate::stats::*;
    pub use crate::topology::*;
    pub use crate::traffic::*;
}
