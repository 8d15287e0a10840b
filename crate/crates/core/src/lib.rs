pub mod error;
pub mod field;
pub mod noise;
pub mod scenario;
pub mod state;
pub mod timeline;
pub mod mollifier;
pub mod itowentzell;
pub mod feps;
pub mod stats;
pub mod experiments;
