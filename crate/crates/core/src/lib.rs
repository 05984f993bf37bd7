pub mod ndgrad;
pub mod curiosity;
pub mod harness;
pub mod models;
pub mod oracle;
pub mod rl;
pub mod worlds;
