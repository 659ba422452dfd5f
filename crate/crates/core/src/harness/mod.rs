pub mod config;
pub mod evaluate;
pub mod experiments;
pub mod kfold;
pub mod manifest;
pub mod report;
