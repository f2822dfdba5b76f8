pub mod data;
pub mod generate;
pub mod report;
pub mod train;
